//! Reference distributions with closed-form tails, tabulated exactly on a
//! lattice, and their known tail classifications.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::GridDistribution;
use crate::lattice::Lattice;

/// Largest total excess [`FamilySpec::instantiate`] accepts.
pub const MAX_EXCESS: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// `P(X > x) = (x_m/x)^α` for `x >= x_m`.
    Pareto { alpha: f64, x_m: f64 },
    /// `ln X ~ N(m, s²)`.
    Lognormal { m: f64, s: f64 },
    /// `P(X > x) = exp(-(x/scale)^shape)`, `shape < 1`.
    Weibull { shape: f64, scale: f64 },
    Exponential { rate: f64 },
    /// `p_pos` times `pos`, plus `1 - p_pos` times the law of `-Y` for `Y ~ neg`.
    TwoSided { pos: Box<Family>, neg: Box<Family>, p_pos: f64 },
    /// `P(X = k) ∝ k^{-s}` on `k = 1, 2, ...`.
    LatticeZeta { s: f64 },
    Point { loc: f64 },
}

/// A family together with the lattice it is tabulated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub family: Family,
    pub grid: GridSpec,
}

/// Serialized lattice: cells `(origin + k·span, origin + (k+1)·span]`, `k < len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin: f64,
    pub span: f64,
    pub len: i64,
}

impl GridSpec {
    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::from_signed(self.origin, self.span, self.len)
    }
}

impl From<Lattice> for GridSpec {
    fn from(l: Lattice) -> Self {
        Self { origin: l.origin(), span: l.span(), len: l.len() as i64 }
    }
}

/// Ground-truth tail classes of a family, for scoring diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassLabels {
    pub long_tailed: bool,
    pub s_delta: bool,
    pub s_loc: bool,
    /// `F(x + Δ)` asymptotic to a non-increasing function.
    pub ani: bool,
    /// `F(x + Δ)` almost decreasing.
    pub ald: bool,
    pub source: &'static str,
}

impl Family {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            Self::Pareto { alpha, x_m } => {
                if !(*alpha > 0.0 && alpha.is_finite() && *x_m > 0.0 && x_m.is_finite()) {
                    return bad(format!("pareto needs alpha > 0 and x_m > 0, got {alpha}, {x_m}"));
                }
            }
            Self::Lognormal { m, s } => {
                if !(m.is_finite() && *s > 0.0 && s.is_finite()) {
                    return bad(format!("lognormal needs finite m and s > 0, got {m}, {s}"));
                }
            }
            Self::Weibull { shape, scale } => {
                if !(*shape > 0.0 && *shape < 1.0 && *scale > 0.0 && scale.is_finite()) {
                    return bad(format!("weibull needs shape in (0, 1) and scale > 0, got {shape}, {scale}"));
                }
            }
            Self::Exponential { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return bad(format!("exponential needs rate > 0, got {rate}"));
                }
            }
            Self::TwoSided { pos, neg, p_pos } => {
                if !(*p_pos > 0.0 && *p_pos < 1.0) {
                    return bad(format!("two_sided needs p_pos in (0, 1), got {p_pos}"));
                }
                for part in [pos, neg] {
                    if matches!(**part, Self::TwoSided { .. }) {
                        return bad("two_sided parts cannot themselves be two_sided".into());
                    }
                    part.validate()?;
                }
            }
            Self::LatticeZeta { s } => {
                if !(*s > 1.0 && s.is_finite()) {
                    return bad(format!("lattice_zeta needs s > 1, got {s}"));
                }
            }
            Self::Point { loc } => {
                if !loc.is_finite() {
                    return bad(format!("point location must be finite, got {loc}"));
                }
            }
        }
        Ok(())
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::TwoSided { pos, neg, p_pos } => p_pos * pos.cdf(x) + (1.0 - p_pos) * neg.survival_incl(-x),
            _ => 1.0 - self.survival(x),
        }
    }

    /// `P(X > x)`.
    pub fn survival(&self, x: f64) -> f64 {
        match *self {
            Self::Pareto { alpha, x_m } => {
                if x <= x_m {
                    1.0
                } else {
                    (x_m / x).powf(alpha)
                }
            }
            Self::Lognormal { m, s } => {
                if x <= 0.0 {
                    1.0
                } else {
                    0.5 * erfc((x.ln() - m) / (s * std::f64::consts::SQRT_2))
                }
            }
            Self::Weibull { shape, scale } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-(x / scale).powf(shape)).exp()
                }
            }
            Self::Exponential { rate } => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-rate * x).exp()
                }
            }
            Self::TwoSided { ref pos, ref neg, p_pos } => {
                p_pos * pos.survival(x) + (1.0 - p_pos) * (1.0 - neg.survival_incl(-x))
            }
            Self::LatticeZeta { s } => {
                let k = x.floor();
                if k < 1.0 {
                    1.0
                } else {
                    zeta_tail(k as u64 + 1, s) / zeta(s)
                }
            }
            Self::Point { loc } => {
                if x < loc {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `P(X >= x)`.
    fn survival_incl(&self, x: f64) -> f64 {
        match *self {
            Self::LatticeZeta { .. } => self.survival(x.ceil() - 1.0),
            Self::Point { loc } => {
                if loc >= x {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self.survival(x),
        }
    }

    /// `P(x < X <= x + c)` from the closed form.
    pub fn interval_prob(&self, x: f64, c: f64) -> f64 {
        self.prob_between(x, x + c)
    }

    /// `P(lo < X <= hi)` from the closed form.
    pub fn prob_between(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            Self::TwoSided { ref pos, ref neg, p_pos } => {
                // -Y in (lo, hi]  <=>  Y in [-hi, -lo)
                let (a, b) = (neg.survival_incl(-hi), neg.survival_incl(-lo));
                let reflected = if a < 0.5 { a - b } else { (1.0 - b) - (1.0 - a) };
                p_pos * pos.prob_between(lo, hi) + (1.0 - p_pos) * reflected
            }
            Self::LatticeZeta { s } => {
                let (k_lo, k_hi) = ((lo.floor() + 1.0).max(1.0), hi.floor());
                if k_hi < k_lo {
                    0.0
                } else if k_hi - k_lo < 1000.0 {
                    let mut acc = 0.0;
                    let mut k = k_hi;
                    while k >= k_lo {
                        acc += k.powf(-s);
                        k -= 1.0;
                    }
                    acc / zeta(s)
                } else {
                    cell_mass(self, lo, hi)
                }
            }
            _ => cell_mass(self, lo, hi),
        }
    }

    pub fn expected_class(&self) -> Result<ClassLabels> {
        const HEAVY: &str = "regularly varying or subexponential density tail; standard heavy-tail theory";
        let all = |source| ClassLabels { long_tailed: true, s_delta: true, s_loc: true, ani: true, ald: true, source };
        match *self {
            Self::Pareto { .. } | Self::Lognormal { .. } => Ok(all(HEAVY)),
            Self::Weibull { shape, .. } if shape < 1.0 => Ok(all(HEAVY)),
            Self::Weibull { .. } => Err(Error::Unlabeled("weibull with shape >= 1".into())),
            Self::Exponential { .. } => Ok(ClassLabels {
                long_tailed: false,
                s_delta: false,
                s_loc: false,
                ani: true,
                ald: true,
                source: "interval ratio F(x+y+Δ)/F(x+Δ) = e^{-rate·y}; F(x+Δ) is decreasing",
            }),
            Self::LatticeZeta { .. } => Ok(ClassLabels {
                long_tailed: true,
                s_delta: true,
                s_loc: false,
                ani: true,
                ald: true,
                source: "regularly varying pmf on the integers; windows narrower than 1 see empty intervals",
            }),
            Self::Point { .. } => Ok(ClassLabels {
                long_tailed: false,
                s_delta: false,
                s_loc: false,
                ani: false,
                ald: true,
                source: "bounded support: F(x+Δ) vanishes beyond the atom",
            }),
            Self::TwoSided { ref pos, .. } => {
                let mut l = pos.expected_class()?;
                l.source = "classes of the positive part; the reflected part only affects the left tail";
                Ok(l)
            }
        }
    }
}

/// `P(lo < X <= hi)` for a one-sided family, from whichever tail keeps the
/// difference well conditioned.
fn cell_mass(f: &Family, lo: f64, hi: f64) -> f64 {
    let sl = f.survival(lo);
    let sh = f.survival(hi);
    if sl < 0.5 {
        sl - sh
    } else {
        f.cdf(hi) - f.cdf(lo)
    }
}

impl FamilySpec {
    pub fn new(family: Family, grid: Lattice) -> Result<Self> {
        family.validate()?;
        Ok(Self { family, grid: grid.into() })
    }

    /// Exact cell masses from the closed-form distribution function, with the
    /// mass beyond either end booked as excess.
    pub fn instantiate(&self) -> Result<GridDistribution> {
        self.family.validate()?;
        let lat = self.grid.lattice()?;
        if matches!(self.family, Family::LatticeZeta { .. }) || contains_zeta(&self.family) {
            let per_unit = 1.0 / lat.span();
            if !lat.is_zero_aligned() || (per_unit - per_unit.round()).abs() > 1e-9 {
                return Err(Error::LatticeMismatch("lattice_zeta needs every integer to be a cell atom".into()));
            }
        }
        let f = &self.family;
        let n = lat.len() as i64;
        let mass: Vec<f64> = (0..n).map(|k| f.prob_between(lat.edge(k), lat.edge(k + 1)).max(0.0)).collect();
        let left = f.cdf(lat.origin()).max(0.0);
        let right = f.survival(lat.end()).max(0.0);
        if left + right > MAX_EXCESS {
            return Err(Error::GridOverflow(format!(
                "{:.3e} of the mass lies outside the lattice (limit {MAX_EXCESS})",
                left + right
            )));
        }
        GridDistribution::new(lat, mass, left, right)
    }

    pub fn expected_class(&self) -> Result<ClassLabels> {
        self.family.expected_class()
    }
}

fn contains_zeta(f: &Family) -> bool {
    match f {
        Family::LatticeZeta { .. } => true,
        Family::TwoSided { pos, neg, .. } => contains_zeta(pos) || contains_zeta(neg),
        _ => false,
    }
}

/// `Σ_{k>=n} k^{-s}`: direct summation up to 64 terms past `n`, then the
/// Euler-Maclaurin remainder.
pub fn zeta_tail(n: u64, s: f64) -> f64 {
    let n = n.max(1);
    let m = n.max(64);
    let mut direct = 0.0;
    for k in (n..m).rev() {
        direct += (k as f64).powf(-s);
    }
    let x = m as f64;
    let em = x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s) + s * x.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * x.powf(-s - 3.0) / 720.0
        + s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * x.powf(-s - 5.0) / 30_240.0;
    direct + em
}

/// Riemann zeta for real `s > 1`.
pub fn zeta(s: f64) -> f64 {
    zeta_tail(1, s)
}
