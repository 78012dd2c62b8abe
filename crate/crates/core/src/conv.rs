//! Convolution of lattice distributions.
//!
//! Cell masses act as atoms at the cells' right edges, so the convolution of
//! lattices with origins `o_f`, `o_g` has origin `o_f + o_g + span` and
//! `len_f + len_g - 1` cells. That keeps `δ_0 = (-span, 0]` an exact identity.

use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::grid::GridDistribution;
use crate::lattice::Lattice;

/// Below this length the quadratic kernel is used by [`convolve`].
pub const DIRECT_THRESHOLD: usize = 64;

/// Linear convolution of two real sequences by zero-padded real FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let kernel = FftKernel::new(b, a.len());
    kernel.apply(a)
}

/// Linear convolution by the O(n·m) definition.
pub fn direct_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// A fixed kernel with its spectrum cached, for repeated convolution against
/// inputs of bounded length (series builders reuse one jump law many times).
pub struct FftKernel {
    kernel_len: usize,
    fft_len: usize,
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl FftKernel {
    pub fn new(kernel: &[f64], max_input_len: usize) -> Self {
        let fft_len = (kernel.len() + max_input_len.max(1) - 1).next_power_of_two().max(2);
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let mut buf = vec![0.0; fft_len];
        buf[..kernel.len()].copy_from_slice(kernel);
        let mut spectrum = forward.make_output_vec();
        forward.process(&mut buf, &mut spectrum).expect("fft length matches plan");
        Self { kernel_len: kernel.len(), fft_len, spectrum, forward, inverse }
    }

    pub fn max_input_len(&self) -> usize {
        self.fft_len + 1 - self.kernel_len
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        assert!(input.len() <= self.max_input_len(), "input longer than kernel plan allows");
        let out_len = input.len() + self.kernel_len - 1;
        let mut buf = vec![0.0; self.fft_len];
        buf[..input.len()].copy_from_slice(input);
        let mut spec = self.forward.make_output_vec();
        self.forward.process(&mut buf, &mut spec).expect("fft length matches plan");
        for (s, k) in spec.iter_mut().zip(&self.spectrum) {
            *s *= k;
        }
        // The real-input inverse expects purely real DC/Nyquist bins.
        spec[0].im = 0.0;
        if let Some(last) = spec.last_mut() {
            last.im = 0.0;
        }
        let mut out = vec![0.0; self.fft_len];
        self.inverse.process(&mut spec, &mut out).expect("fft length matches plan");
        let scale = 1.0 / self.fft_len as f64;
        out.truncate(out_len);
        for v in out.iter_mut() {
            *v *= scale;
            // Inputs are nonnegative, so negatives are transform noise.
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        out
    }
}

/// Lattice of `F * G` for compatible lattices.
pub fn product_lattice(f: &Lattice, g: &Lattice) -> Result<Lattice> {
    f.offset_of(g)?;
    Lattice::new(f.origin() + g.origin() + f.span(), f.span(), f.len() + g.len() - 1)
}

/// Excess bookkeeping for `F * G` given on-grid sums and excesses.
/// Returns `(left, right, ambiguous)`.
pub(crate) fn combine_excess(
    sf: f64,
    lf: f64,
    rf: f64,
    sg: f64,
    lg: f64,
    rg: f64,
) -> (f64, f64, f64) {
    let cross = lf * rg + rf * lg;
    let left = lf * (lg + sg) + sf * lg + 0.5 * cross;
    let right = rf * (rg + sg) + sf * rg + 0.5 * cross;
    (left, right, cross)
}

pub(crate) fn assemble_product(f: &GridDistribution, g: &GridDistribution, mass: Vec<f64>) -> Result<GridDistribution> {
    let lattice = product_lattice(f.lattice(), g.lattice())?;
    let (l, r, cross) = combine_excess(
        f.grid_mass(),
        f.left_excess(),
        f.right_excess(),
        g.grid_mass(),
        g.left_excess(),
        g.right_excess(),
    );
    let amb = f.ambiguous_mass() + g.ambiguous_mass() + cross;
    GridDistribution::assemble(lattice, mass, l, r, amb)
}

fn check_compatible(f: &GridDistribution, g: &GridDistribution) -> Result<()> {
    f.lattice().offset_of(g.lattice()).map(|_| ()).map_err(|e| match e {
        Error::LatticeMismatch(m) => Error::LatticeMismatch(m),
        other => other,
    })
}

/// `F * G`, by FFT unless one operand is shorter than [`DIRECT_THRESHOLD`].
pub fn convolve(f: &GridDistribution, g: &GridDistribution) -> Result<GridDistribution> {
    if f.lattice().len().min(g.lattice().len()) < DIRECT_THRESHOLD {
        convolve_direct(f, g)
    } else {
        convolve_fft(f, g)
    }
}

/// `F * G` by zero-padded real FFT, regardless of size.
pub fn convolve_fft(f: &GridDistribution, g: &GridDistribution) -> Result<GridDistribution> {
    check_compatible(f, g)?;
    assemble_product(f, g, fft_convolve(f.mass(), g.mass()))
}

/// `F * G` by the quadratic definition.
pub fn convolve_direct(f: &GridDistribution, g: &GridDistribution) -> Result<GridDistribution> {
    check_compatible(f, g)?;
    assemble_product(f, g, direct_convolve(f.mass(), g.mass()))
}

/// `F^{*n}` by square-and-multiply; `n = 0` gives `δ_0`.
pub fn n_fold(f: &GridDistribution, n: i64) -> Result<GridDistribution> {
    if n < 0 {
        return Err(Error::InvalidArgument(format!("convolution power must be nonnegative, got {n}")));
    }
    if n == 0 {
        return GridDistribution::delta_zero(f.lattice().span());
    }
    let mut n = n as u64;
    let mut base = f.clone();
    let mut acc: Option<GridDistribution> = None;
    loop {
        if n & 1 == 1 {
            acc = Some(match acc {
                None => base.clone(),
                Some(a) => convolve(&a, &base)?,
            });
        }
        n >>= 1;
        if n == 0 {
            break;
        }
        base = convolve(&base, &base)?;
    }
    Ok(acc.expect("n >= 1"))
}

/// Powers `F^{*1}, ..., F^{*n_max}`, each re-tabulated on `window` (mass
/// outside goes to the excesses). Only safe for windows that already contain
/// every point from which mass could re-enter, e.g. positive-half laws.
pub fn running_powers(f: &GridDistribution, n_max: usize, window: &Lattice) -> Result<Vec<GridDistribution>> {
    let mut out = Vec::with_capacity(n_max);
    if n_max == 0 {
        return Ok(out);
    }
    let kernel = FftKernel::new(f.mass(), window.len());
    let mut cur = f.restrict_to(window)?;
    out.push(cur.clone());
    for _ in 1..n_max {
        let mass = kernel.apply(cur.mass());
        let next = assemble_product(&cur, f, mass)?;
        cur = next.restrict_to(window)?;
        out.push(cur.clone());
    }
    Ok(out)
}
