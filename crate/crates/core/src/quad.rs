//! Adaptive Gauss-Kronrod (7/15) quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 20_000;

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidDensity(format!("integrand value {v} at x = {x}")))
        }
    };
    let fc = eval(c)?;
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = eval(c - dx)? + eval(c + dx)?;
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Ok((kronrod * h, ((kronrod - gauss) * h).abs()))
}

/// `∫_a^b f` to absolute accuracy `tol` (or relative accuracy near machine
/// precision for large integrals).
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("integration bounds must be finite, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, tol).map(|v| -v);
    }
    let (v, e) = gk15(f, a, b)?;
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a, b, value: v, error: e });
    let (mut total, mut err) = (v, e);
    while err > tol.max(4.0 * f64::EPSILON * total.abs()) {
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::InvalidDensity(format!(
                "quadrature on [{a}, {b}] did not reach {tol:e} (error estimate {err:e})"
            )));
        }
        let p = heap.pop().expect("heap is nonempty");
        let m = 0.5 * (p.a + p.b);
        if !(m > p.a && m < p.b) {
            // Interval can no longer be split in floating point.
            heap.push(p);
            break;
        }
        let (v1, e1) = gk15(f, p.a, m)?;
        let (v2, e2) = gk15(f, m, p.b)?;
        total += v1 + v2 - p.value;
        err += e1 + e2 - p.error;
        heap.push(Piece { a: p.a, b: m, value: v1, error: e1 });
        heap.push(Piece { a: m, b: p.b, value: v2, error: e2 });
    }
    // Re-sum to shed accumulated update rounding.
    Ok(heap.iter().map(|p| p.value).sum())
}

/// `∫_a^∞ f` through the substitution `x = a + t/(1-t)`.
pub fn integrate_to_inf(f: &dyn Fn(f64) -> f64, a: f64, tol: f64) -> Result<f64> {
    let g = |t: f64| {
        let s = 1.0 - t;
        let x = a + t / s;
        let v = f(x);
        if v == 0.0 {
            0.0
        } else {
            v / (s * s)
        }
    };
    integrate(&g, 0.0, 1.0, tol)
}

/// `∫_{-∞}^b f`.
pub fn integrate_from_neg_inf(f: &dyn Fn(f64) -> f64, b: f64, tol: f64) -> Result<f64> {
    integrate_to_inf(&|x| f(-x), -b, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_trig() {
        let v = integrate(&|x| x * x, 0.0, 3.0, 1e-12).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
        let s = integrate(&f64::sin, 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert_eq!(integrate(&|x| x, 1.0, 1.0, 1e-9).unwrap(), 0.0);
        assert!((integrate(&|x| x, 1.0, 0.0, 1e-12).unwrap() + 0.5).abs() < 1e-14);
    }

    #[test]
    fn endpoint_singularity() {
        // ∫_0^1 x^{-1/2} = 2
        let v = integrate(&|x: f64| x.powf(-0.5), 0.0, 1.0, 1e-10).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn infinite_ranges() {
        let v = integrate_to_inf(&|x: f64| x.powi(-2), 1.0, 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-11);
        let e = integrate_to_inf(&|x: f64| (-x).exp(), 0.0, 1e-12).unwrap();
        assert!((e - 1.0).abs() < 1e-11);
        let n = integrate_from_neg_inf(&|x: f64| x.exp(), 0.0, 1e-12).unwrap();
        assert!((n - 1.0).abs() < 1e-11);
    }

    #[test]
    fn non_finite_integrand_is_an_error() {
        assert!(matches!(integrate(&|_| f64::NAN, 0.0, 1.0, 1e-9), Err(Error::InvalidDensity(_))));
    }
}
