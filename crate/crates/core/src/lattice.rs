//! Uniform lattices on the real line.
//!
//! Cell `k` of a lattice covers the right-closed interval
//! `(origin + k*span, origin + (k+1)*span]`. When a cell is used as an atom
//! (convolution, sampling, lattice-valued families) the atom sits at the
//! cell's right edge, so that a point mass at `x` lives in the cell `(x - span, x]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance (in units of span) for boundary alignment.
pub const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    origin: f64,
    span: f64,
    len: usize,
}

impl Lattice {
    pub fn new(origin: f64, span: f64, len: usize) -> Result<Self> {
        if !(span.is_finite() && span > 0.0) {
            return Err(Error::InvalidArgument(format!("lattice span must be positive, got {span}")));
        }
        if len == 0 {
            return Err(Error::InvalidArgument("lattice length must be at least 1".into()));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidArgument(format!("lattice origin must be finite, got {origin}")));
        }
        Ok(Self { origin, span, len })
    }

    /// Signed-length constructor used by config parsing and the CLI.
    pub fn from_signed(origin: f64, span: f64, len: i64) -> Result<Self> {
        if len < 1 {
            return Err(Error::InvalidArgument(format!("lattice length must be at least 1, got {len}")));
        }
        Self::new(origin, span, len as usize)
    }

    /// Lattice whose cells carry the atoms `e_lo*span ..= e_hi*span`.
    pub fn from_atoms(span: f64, e_lo: i64, e_hi: i64) -> Result<Self> {
        if e_hi < e_lo {
            return Err(Error::InvalidArgument(format!("empty atom range {e_lo}..={e_hi}")));
        }
        Self::new((e_lo - 1) as f64 * span, span, (e_hi - e_lo + 1) as usize)
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Boundary `k`, i.e. the left edge of cell `k`. Computed directly, never accumulated.
    pub fn edge(&self, k: i64) -> f64 {
        self.origin + k as f64 * self.span
    }

    /// Right end of the last cell.
    pub fn end(&self) -> f64 {
        self.edge(self.len as i64)
    }

    /// Right edge of cell `k` (its atom position).
    pub fn atom(&self, k: usize) -> f64 {
        self.edge(k as i64 + 1)
    }

    /// Index `k` with `edge(k) == x`, or a misaligned-window error.
    pub fn boundary_index(&self, x: f64) -> Result<i64> {
        let t = (x - self.origin) / self.span;
        let k = t.round();
        if !x.is_finite() || (t - k).abs() > ALIGN_TOL * t.abs().max(1.0) {
            return Err(Error::MisalignedWindow { x, origin: self.origin, span: self.span });
        }
        Ok(k as i64)
    }

    pub fn is_aligned(&self, x: f64) -> bool {
        self.boundary_index(x).is_ok()
    }

    /// Index of the cell containing `x` (right-closed). May lie outside `0..len`.
    /// Points within alignment tolerance of a boundary are snapped onto it.
    pub fn cell_of(&self, x: f64) -> i64 {
        let t = (x - self.origin) / self.span;
        let r = t.round();
        if (t - r).abs() <= ALIGN_TOL * t.abs().max(1.0) {
            r as i64 - 1
        } else {
            t.ceil() as i64 - 1
        }
    }

    /// Spans equal and origins an integer number of spans apart.
    pub fn is_compatible(&self, other: &Lattice) -> bool {
        self.offset_of(other).is_ok()
    }

    /// Number of cells by which `other` starts after `self`.
    pub fn offset_of(&self, other: &Lattice) -> Result<i64> {
        if (self.span - other.span).abs() > 1e-12 * self.span.max(other.span) {
            return Err(Error::LatticeMismatch(format!(
                "spans differ: {} vs {}",
                self.span, other.span
            )));
        }
        let t = (other.origin - self.origin) / self.span;
        let k = t.round();
        if (t - k).abs() > ALIGN_TOL * t.abs().max(1.0) {
            return Err(Error::LatticeMismatch(format!(
                "origins {} and {} are not a whole number of spans apart",
                self.origin, other.origin
            )));
        }
        Ok(k as i64)
    }

    /// True when 0 is a cell boundary, so that every atom is an integer multiple of span.
    pub fn is_zero_aligned(&self) -> bool {
        self.is_aligned(0.0)
    }

    /// Integer atom coordinate of cell 0: the atom of cell `k` is `(first_atom() + k) * span`.
    /// Only meaningful for zero-aligned lattices.
    pub fn first_atom(&self) -> i64 {
        (self.origin / self.span).round() as i64 + 1
    }

    /// Smallest compatible lattice covering both.
    pub fn hull(&self, other: &Lattice) -> Result<Lattice> {
        let off = self.offset_of(other)?;
        let lo = off.min(0);
        let hi = (off + other.len as i64).max(self.len as i64);
        Lattice::new(self.edge(lo), self.span, (hi - lo) as usize)
    }

    /// Sub-range of compatible cells `[k_lo, k_hi)` relative to this lattice.
    pub fn slice(&self, k_lo: i64, k_hi: i64) -> Result<Lattice> {
        if k_hi <= k_lo {
            return Err(Error::InvalidArgument(format!("empty cell range {k_lo}..{k_hi}")));
        }
        Lattice::new(self.edge(k_lo), self.span, (k_hi - k_lo) as usize)
    }
}

/// The window `(0, c]`; `F(x + Δ)` is the mass of `(x, x + c]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaWindow {
    c: f64,
}

impl DeltaWindow {
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!("window width must be positive, got {c}")));
        }
        Ok(Self { c })
    }

    pub fn width(&self) -> f64 {
        self.c
    }
}
