//! Lévy triplets and infinitely divisible laws on a lattice.
//!
//! The characteristic exponent is
//! `i a z - b2 z²/2 + ∫ (e^{izy} - 1 - izy 1{|y| <= 1}) ν(dy)`.
//! Jumps with `|y| <= ε` are replaced by a Gaussian of matching variance;
//! the rest form a compound Poisson factor.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::compound::compound_poisson_on;
use crate::conv::convolve;
use crate::error::{Error, Result};
use crate::grid::{cell_integral, GridDistribution, GridMeasure};
use crate::lattice::Lattice;
use crate::quad::{integrate, integrate_from_neg_inf, integrate_to_inf};

/// A Lévy density on the real line (zero at 0).
pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const QUAD_TOL: f64 = 1e-12;

/// Parametric densities on `(0, ∞)`, used for either side of a Lévy measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DensityFamily {
    /// `c x^{-p}` on `(lower, ∞)`.
    Power { c: f64, p: f64, #[serde(default)] lower: f64 },
    /// `c_below x^{-p_below}` on `(0, split]`, `c_above x^{-p_above}` above.
    PiecewisePower { split: f64, c_below: f64, p_below: f64, c_above: f64, p_above: f64 },
    /// `c e^{-rate x}` on `(lower, ∞)`.
    Exponential { c: f64, rate: f64, #[serde(default)] lower: f64 },
    /// `c e^{-rate x} / x` on `(lower, ∞)`.
    ExpOverX { c: f64, rate: f64, lower: f64 },
}

impl DensityFamily {
    pub fn eval(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return 0.0;
        }
        match *self {
            Self::Power { c, p, lower } => {
                if x > lower {
                    c * x.powf(-p)
                } else {
                    0.0
                }
            }
            Self::PiecewisePower { split, c_below, p_below, c_above, p_above } => {
                if x <= split {
                    c_below * x.powf(-p_below)
                } else {
                    c_above * x.powf(-p_above)
                }
            }
            Self::Exponential { c, rate, lower } => {
                if x > lower {
                    c * (-rate * x).exp()
                } else {
                    0.0
                }
            }
            Self::ExpOverX { c, rate, lower } => {
                if x > lower {
                    c * (-rate * x).exp() / x
                } else {
                    0.0
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Power { c, p, lower } => c >= 0.0 && p.is_finite() && lower >= 0.0,
            Self::PiecewisePower { split, c_below, p_below, c_above, p_above } => {
                split > 0.0 && c_below >= 0.0 && c_above >= 0.0 && p_below.is_finite() && p_above.is_finite()
            }
            Self::Exponential { c, rate, lower } => c >= 0.0 && rate > 0.0 && lower >= 0.0,
            Self::ExpOverX { c, rate, lower } => c >= 0.0 && rate >= 0.0 && lower > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDensity(format!("invalid parameters in {self:?}")))
        }
    }
}

/// `ν(dx) = positive(x) dx` on `(0, ∞)` and `negative(-x) dx` on `(-∞, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyDensity {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<DensityFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative: Option<DensityFamily>,
}

impl LevyDensity {
    pub fn eval(&self, x: f64) -> f64 {
        if x > 0.0 {
            self.positive.as_ref().map_or(0.0, |f| f.eval(x))
        } else if x < 0.0 {
            self.negative.as_ref().map_or(0.0, |f| f.eval(-x))
        } else {
            0.0
        }
    }
}

/// Representation of the Lévy measure of a triplet.
#[derive(Clone)]
pub enum JumpMeasure {
    Zero,
    Grid(GridMeasure),
    Density(LevyDensity),
    Function(DensityFn),
}

impl std::fmt::Debug for JumpMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Grid(m) => write!(f, "Grid({:?}, total {})", m.lattice(), m.total_with_excess()),
            Self::Density(d) => write!(f, "Density({d:?})"),
            Self::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl JumpMeasure {
    fn density(&self) -> Option<DensityFn> {
        match self {
            Self::Density(d) => {
                let d = d.clone();
                Some(Arc::new(move |x| d.eval(x)))
            }
            Self::Function(f) => Some(f.clone()),
            _ => None,
        }
    }
}

/// `(a, b², ν)` together with the small-jump cutoff `ε` (chosen from the
/// output lattice when absent).
#[derive(Debug, Clone)]
pub struct LevyTriplet {
    pub a: f64,
    pub b2: f64,
    pub jumps: JumpMeasure,
    pub cutoff: Option<f64>,
}

impl LevyTriplet {
    /// Validates `b2 >= 0`, `ε > 0`, `ν({0}) = 0` and `∫ (1 ∧ y²) ν(dy) < ∞`.
    pub fn new(a: f64, b2: f64, jumps: JumpMeasure, cutoff: Option<f64>) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::InvalidArgument(format!("drift must be finite, got {a}")));
        }
        if !(b2.is_finite() && b2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("Gaussian variance must be nonnegative, got {b2}")));
        }
        if let Some(e) = cutoff {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidArgument(format!("small-jump cutoff must be positive, got {e}")));
            }
        }
        match &jumps {
            JumpMeasure::Zero => {}
            JumpMeasure::Grid(m) => {
                if !m.lattice().is_zero_aligned() {
                    return Err(Error::LatticeMismatch("Lévy measure lattice must have 0 as a cell boundary".into()));
                }
                let k0 = m.lattice().cell_of(0.0);
                if k0 >= 0 && (k0 as usize) < m.mass().len() && m.mass()[k0 as usize] > 0.0 {
                    return Err(Error::InvalidArgument("Lévy measure puts mass on the cell carrying 0".into()));
                }
            }
            JumpMeasure::Density(d) => {
                for f in [&d.positive, &d.negative].into_iter().flatten() {
                    f.validate()?;
                }
            }
            JumpMeasure::Function(_) => {}
        }
        if let Some(f) = jumps.density() {
            levy_integral(&*f).map_err(|e| {
                Error::InvalidDensity(format!("∫(1 ∧ y²) ν(dy) could not be evaluated as finite: {e}"))
            })?;
        }
        Ok(Self { a, b2, jumps, cutoff })
    }

    pub fn gaussian(a: f64, b2: f64) -> Result<Self> {
        Self::new(a, b2, JumpMeasure::Zero, None)
    }
}

/// `∫ (1 ∧ y²) f(y) dy`.
fn levy_integral(f: &dyn Fn(f64) -> f64) -> Result<f64> {
    let near = integrate(&|y| y * y * f(y), -1.0, 0.0, QUAD_TOL)? + integrate(&|y| y * y * f(y), 0.0, 1.0, QUAD_TOL)?;
    let far = integrate_to_inf(f, 1.0, QUAD_TOL)? + integrate_from_neg_inf(f, -1.0, QUAD_TOL)?;
    let v = near + far;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidDensity("integral is not finite".into()))
    }
}

/// Default small-jump cutoff for a lattice: the smallest whole number of
/// cells reaching 0.05 (20 cells or more once `span <= 0.0025`).
pub fn default_cutoff(span: f64) -> f64 {
    let cells = ((0.05 / span) - 1e-9).ceil().max(1.0);
    cells * span
}

/// Regions `y <= -minus` and `y >= plus` kept when gridding a density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoffs {
    pub minus: f64,
    pub plus: f64,
}

impl Cutoffs {
    pub fn symmetric(c: f64) -> Self {
        Self { minus: c, plus: c }
    }
}

/// Grids `f` on `lattice`, keeping only cells inside `y <= -cut.minus` or
/// `y >= cut.plus`. Mass beyond the lattice ends is integrated to infinity
/// and stored as excess.
pub fn measure_from_density(f: &dyn Fn(f64) -> f64, lattice: &Lattice, cut: Cutoffs) -> Result<GridMeasure> {
    if !(cut.minus >= 0.0 && cut.plus >= 0.0) {
        return Err(Error::InvalidArgument("cutoffs must be nonnegative".into()));
    }
    if !lattice.is_zero_aligned() {
        return Err(Error::LatticeMismatch("Lévy measure lattice must have 0 as a cell boundary".into()));
    }
    lattice.boundary_index(cut.plus)?;
    lattice.boundary_index(-cut.minus)?;
    let tol = 1e-9 * lattice.span();
    let mut mass = vec![0.0; lattice.len()];
    for (k, m) in mass.iter_mut().enumerate() {
        let lo = lattice.edge(k as i64);
        let hi = lattice.edge(k as i64 + 1);
        if lo >= cut.plus - tol || hi <= -cut.minus + tol {
            *m = cell_integral(f, lo, hi)?;
        }
    }
    let right = integrate_to_inf(f, lattice.end().max(cut.plus), QUAD_TOL)?;
    let left = integrate_from_neg_inf(f, lattice.origin().min(-cut.minus), QUAD_TOL)?;
    GridMeasure::new(*lattice, mass, left, right)
}

/// Gridded Lévy measure from a density non-increasing on `(0, ∞)` and
/// non-decreasing on `(-∞, 0)`. Monotonicity is checked at every cell's
/// midpoint and outer edge; on success the measure carries the monotone
/// certificate.
pub fn s_sd_levy_measure(
    g_plus: &dyn Fn(f64) -> f64,
    g_minus: Option<&dyn Fn(f64) -> f64>,
    lattice: &Lattice,
    cut: Cutoffs,
) -> Result<GridMeasure> {
    let tol = 1e-9 * lattice.span();
    let n = lattice.len() as i64;
    let slack = |v: f64| v.abs() * 1e-12 + 1e-300;

    let mut prev: Option<(f64, f64)> = None;
    for k in 0..n {
        let (lo, hi) = (lattice.edge(k), lattice.edge(k + 1));
        if lo < cut.plus - tol || lo < 0.0 {
            continue;
        }
        for x in [0.5 * (lo + hi), hi] {
            let v = g_plus(x);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidDensity(format!("density value {v} at x = {x}")));
            }
            if let Some((px, pv)) = prev {
                if v > pv + slack(pv) {
                    return Err(Error::NotSSelfDecomposable(format!(
                        "density increases from {pv:e} at {px} to {v:e} at {x}"
                    )));
                }
            }
            prev = Some((x, v));
        }
    }
    if let Some(gm) = g_minus {
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..n {
            let (lo, hi) = (lattice.edge(k), lattice.edge(k + 1));
            if hi > -cut.minus + tol || hi > 0.0 {
                continue;
            }
            for x in [lo, 0.5 * (lo + hi)] {
                let v = gm(x);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidDensity(format!("density value {v} at x = {x}")));
                }
                if let Some((px, pv)) = prev {
                    if v + slack(v) < pv {
                        return Err(Error::NotSSelfDecomposable(format!(
                            "density decreases from {pv:e} at {px} to {v:e} at {x}"
                        )));
                    }
                }
                prev = Some((x, v));
            }
        }
    }
    let f = |x: f64| {
        if x > 0.0 {
            g_plus(x)
        } else if x < 0.0 {
            g_minus.map_or(0.0, |g| g(x))
        } else {
            0.0
        }
    };
    Ok(measure_from_density(&f, lattice, cut)?.with_certificate(true))
}

/// `ν₍₁₎`: the Lévy measure above 1, normalized.
pub fn normalized_tail_measure(nu: &GridMeasure) -> Result<GridDistribution> {
    nu.normalized_above(1.0)
}

/// Compound Poisson law with Lévy measure `ν` restricted to `(c1, ∞)`.
pub fn truncated_cp(nu: &GridMeasure, c1: f64, tol: f64) -> Result<GridDistribution> {
    if !(c1 > 1.0) {
        return Err(Error::InvalidArgument(format!("truncation point must exceed 1, got {c1}")));
    }
    let lambda = nu.mass_above(c1)?;
    let g = nu.normalized_above(c1)?;
    crate::compound::compound_poisson(lambda, &g, tol)
}

/// Pieces of an infinitely divisible law built on a lattice.
#[derive(Debug, Clone)]
pub struct IdDecomposition {
    pub cutoff: f64,
    /// Variance contributed by jumps with `|y| <= ε`.
    pub small_jump_variance: f64,
    /// Mean of the Gaussian factor after compensation adjustments.
    pub adjusted_drift: f64,
    /// Jumps with `|y| > ε` on the output lattice.
    pub large_jumps: GridMeasure,
    pub gaussian: GridDistribution,
    /// Compound Poisson factor, absent when there are no large jumps.
    pub compound: Option<GridDistribution>,
    pub dist: GridDistribution,
}

/// The infinitely divisible law of `t` on `grid`: a gridded Gaussian
/// (drift, `b2` and small jumps) convolved with the compound Poisson law of
/// the large jumps, computed on `grid`.
pub fn id_distribution(t: &LevyTriplet, grid: &Lattice, tol: f64) -> Result<GridDistribution> {
    Ok(id_decomposition(t, grid, tol)?.dist)
}

pub fn id_decomposition(t: &LevyTriplet, grid: &Lattice, tol: f64) -> Result<IdDecomposition> {
    if !grid.is_zero_aligned() {
        return Err(Error::LatticeMismatch("output lattice must have 0 as a cell boundary".into()));
    }
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1e-3], got {tol}")));
    }
    let h = grid.span();
    let eps = t.cutoff.unwrap_or_else(|| default_cutoff(h));
    let eps_cells = grid.boundary_index(eps)? - grid.boundary_index(0.0)?;
    if eps_cells < 1 {
        return Err(Error::InvalidArgument(format!("cutoff {eps} is below one cell of width {h}")));
    }

    let (sigma2, comp, large) = match &t.jumps {
        JumpMeasure::Zero => (0.0, 0.0, GridMeasure::zero(*grid)),
        JumpMeasure::Grid(m) => split_grid_measure(m, grid, eps)?,
        JumpMeasure::Density(_) | JumpMeasure::Function(_) => {
            let f = t.jumps.density().expect("density-backed measure");
            split_density(&*f, grid, eps)?
        }
    };
    let drift = t.a + comp;
    let var = t.b2 + sigma2;
    let gaussian = gridded_gaussian(drift, var, grid, tol)?;

    let lambda = large.total_with_excess();
    let (compound, dist) = if lambda > 0.0 {
        let s = 1.0 / lambda;
        let jump = GridDistribution::new(
            *large.lattice(),
            large.mass().iter().map(|m| m * s).collect(),
            large.left_excess() * s,
            large.right_excess() * s,
        )?;
        let cp = compound_poisson_on(lambda, &jump, tol, grid)?;
        let dist = convolve(&gaussian, &cp)?.restrict_to(grid)?;
        (Some(cp), dist)
    } else {
        (None, gaussian.restrict_to(grid)?)
    };
    Ok(IdDecomposition {
        cutoff: eps,
        small_jump_variance: sigma2,
        adjusted_drift: drift,
        large_jumps: large,
        gaussian,
        compound,
        dist,
    })
}

/// Returns `(σ_ε², drift correction, large-jump measure on grid)`.
fn split_grid_measure(m: &GridMeasure, grid: &Lattice, eps: f64) -> Result<(f64, f64, GridMeasure)> {
    let off = grid.offset_of(m.lattice())?;
    let tol = 1e-9 * grid.span();
    let (mut sigma2, mut comp) = (0.0, 0.0);
    let mut mass = vec![0.0; grid.len()];
    let (mut left, mut right) = (m.left_excess(), m.right_excess());
    for (k, &v) in m.mass().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let y = m.lattice().atom(k);
        if y.abs() <= eps + tol {
            sigma2 += y * y * v;
            if y.abs() > 1.0 + tol {
                comp += y * v;
            }
            continue;
        }
        if y.abs() <= 1.0 + tol {
            comp -= y * v;
        }
        let j = k as i64 + off;
        if j < 0 {
            left += v;
        } else if j >= grid.len() as i64 {
            right += v;
        } else {
            mass[j as usize] += v;
        }
    }
    Ok((sigma2, comp, GridMeasure::new(*grid, mass, left, right)?))
}

fn split_density(f: &dyn Fn(f64) -> f64, grid: &Lattice, eps: f64) -> Result<(f64, f64, GridMeasure)> {
    let y2 = |y: f64| y * y * f(y);
    let sigma2 = integrate(&y2, -eps, 0.0, QUAD_TOL)? + integrate(&y2, 0.0, eps, QUAD_TOL)?;
    let y1 = |y: f64| y * f(y);
    let large = measure_from_density(f, grid, Cutoffs::symmetric(eps))?;
    // Compensate the gridded jumps at their atoms so cell placement adds no drift.
    let comp = if eps < 1.0 {
        let lat = large.lattice();
        -large
            .mass()
            .iter()
            .enumerate()
            .map(|(k, &m)| (lat.atom(k), m))
            .filter(|&(y, _)| y.abs() <= 1.0 + 1e-9 * lat.span())
            .map(|(y, m)| y * m)
            .sum::<f64>()
    } else if eps > 1.0 {
        integrate(&y1, 1.0, eps, QUAD_TOL)? + integrate(&y1, -eps, -1.0, QUAD_TOL)?
    } else {
        0.0
    };
    Ok((sigma2, comp, large))
}

fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `P(lo < X <= hi)` for `X ~ N(0,1)`, using the tail on the side of `lo`
/// that keeps the difference well conditioned.
fn normal_cell(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        std_normal_sf(lo) - std_normal_sf(hi)
    } else {
        std_normal_sf(-hi) - std_normal_sf(-lo)
    }
}

/// `N(mean, var)` with exact cell masses on a compact lattice compatible with
/// `grid`. A zero variance gives a point mass at `mean`, split linearly
/// between the two nearest atoms.
pub fn gridded_gaussian(mean: f64, var: f64, grid: &Lattice, tol: f64) -> Result<GridDistribution> {
    let h = grid.span();
    let g_lo = grid.first_atom();
    let g_hi = g_lo + grid.len() as i64 - 1;
    if var == 0.0 {
        let t = mean / h;
        let e = t.floor();
        let frac = t - e;
        let e = e as i64;
        let (lat, mass) = if frac < 1e-12 || 1.0 - frac < 1e-12 {
            let e = t.round() as i64;
            (Lattice::from_atoms(h, e, e)?, vec![1.0])
        } else {
            (Lattice::from_atoms(h, e, e + 1)?, vec![1.0 - frac, frac])
        };
        let d = GridDistribution::new(lat, mass, 0.0, 0.0)?;
        let inside = d.restrict_to(grid)?;
        if inside.excess() > tol {
            return Err(Error::GridOverflow(format!("drift {mean} lies outside the output lattice")));
        }
        return Ok(d);
    }
    if !(var.is_finite() && var > 0.0) {
        return Err(Error::InvalidArgument(format!("variance must be nonnegative, got {var}")));
    }
    let s = var.sqrt();
    const Z: f64 = 15.0;
    let e_lo = (((mean - Z * s) / h).floor() as i64).max(g_lo);
    let e_hi = (((mean + Z * s) / h).ceil() as i64).min(g_hi);
    if e_hi < e_lo {
        return Err(Error::GridOverflow(format!("N({mean}, {var}) lies outside the output lattice")));
    }
    let lat = Lattice::from_atoms(h, e_lo, e_hi)?;
    let zs = |x: f64| (x - mean) / s;
    let mass: Vec<f64> = (0..lat.len() as i64).map(|k| normal_cell(zs(lat.edge(k)), zs(lat.edge(k + 1)))).collect();
    let left = 1.0 - std_normal_sf(zs(lat.origin()));
    let right = std_normal_sf(zs(lat.end()));
    let outside_grid = (if e_lo == g_lo { left } else { 0.0 }) + (if e_hi == g_hi { right } else { 0.0 });
    if outside_grid > tol {
        return Err(Error::GridOverflow(format!(
            "Gaussian mass {outside_grid:e} falls outside the output lattice (tolerance {tol:e})"
        )));
    }
    let total = mass.iter().sum::<f64>() + left + right;
    // Cell masses are differences of one tail function, so they already sum
    // to within rounding of 1; fold the rounding into the largest cell.
    let mut mass = mass;
    if let Some(imax) = (0..mass.len()).max_by(|&i, &j| mass[i].total_cmp(&mass[j])) {
        mass[imax] += 1.0 - total;
    }
    GridDistribution::new(lat, mass, left, right)
}

/// On-disk form of a triplet (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletDoc {
    pub a: f64,
    #[serde(default)]
    pub b2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    #[serde(default)]
    pub jumps: JumpsDoc,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpsDoc {
    #[default]
    None,
    Density {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        positive: Option<DensityFamily>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        negative: Option<DensityFamily>,
    },
    /// A measure stored in the grid CSV format, relative to the document.
    Grid { csv: PathBuf },
}

impl TripletDoc {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Builds the triplet, reading grid CSVs relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<LevyTriplet> {
        let jumps = match &self.jumps {
            JumpsDoc::None => JumpMeasure::Zero,
            JumpsDoc::Density { positive, negative } => {
                JumpMeasure::Density(LevyDensity { positive: positive.clone(), negative: negative.clone() })
            }
            JumpsDoc::Grid { csv } => {
                let file = std::fs::File::open(base_dir.join(csv))?;
                JumpMeasure::Grid(GridMeasure::read_csv(std::io::BufReader::new(file))?)
            }
        };
        LevyTriplet::new(self.a, self.b2, jumps, self.cutoff)
    }
}

impl LevyTriplet {
    /// Reads a TOML triplet file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        TripletDoc::from_toml_str(&text)?.resolve(base)
    }

    /// Writes a TOML triplet file; a gridded measure goes to a CSV file
    /// beside it named `<stem>_jumps.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let jumps = match &self.jumps {
            JumpMeasure::Zero => JumpsDoc::None,
            JumpMeasure::Density(d) => JumpsDoc::Density { positive: d.positive.clone(), negative: d.negative.clone() },
            JumpMeasure::Grid(m) => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("triplet");
                let name = PathBuf::from(format!("{stem}_jumps.csv"));
                let dir = path.parent().unwrap_or_else(|| Path::new("."));
                m.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join(&name))?))?;
                JumpsDoc::Grid { csv: name }
            }
            JumpMeasure::Function(_) => {
                return Err(Error::InvalidArgument("a closure-backed Lévy density cannot be serialized".into()))
            }
        };
        let doc = TripletDoc { a: self.a, b2: self.b2, cutoff: self.cutoff, jumps };
        std::fs::write(path, doc.to_toml_string()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TailHint;
    use crate::lattice::DeltaWindow;

    fn w(c: f64) -> DeltaWindow {
        DeltaWindow::new(c).unwrap()
    }

    fn phi(x: f64) -> f64 {
        0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
    }

    #[test]
    fn pure_gaussian_intervals() {
        let grid = Lattice::new(-10.0, 0.01, 2000).unwrap();
        let t = LevyTriplet::gaussian(0.0, 1.0).unwrap();
        let mu = id_distribution(&t, &grid, 1e-12).unwrap();
        for x in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            let expect = phi(x + 1.0) - phi(x);
            assert!((mu.interval_prob(x, w(1.0)).unwrap() - expect).abs() < 1e-9, "x={x}");
        }
        assert!(mu.excess() < 1e-20);
    }

    #[test]
    fn narrow_grid_overflows() {
        let grid = Lattice::new(-1.0, 0.01, 200).unwrap();
        let t = LevyTriplet::gaussian(0.0, 1.0).unwrap();
        assert!(matches!(id_distribution(&t, &grid, 1e-9), Err(Error::GridOverflow(_))));
    }

    #[test]
    fn degenerate_gaussian_splits_between_atoms() {
        let grid = Lattice::new(-5.0, 0.5, 20).unwrap();
        let g = gridded_gaussian(0.6, 0.0, &grid, 1e-9).unwrap();
        assert!((g.mass_at(0.5) - 0.8).abs() < 1e-12);
        assert!((g.mass_at(1.0) - 0.2).abs() < 1e-12);
        let g = gridded_gaussian(1.0, 0.0, &grid, 1e-9).unwrap();
        assert_eq!(g.mass_at(1.0), 1.0);
    }

    #[test]
    fn single_atom_levy_measure() {
        // ν = 0.5 δ_1 with drift 0.5 cancelling the compensation.
        let lat = Lattice::from_atoms(0.1, -5, 20).unwrap();
        let mut mass = vec![0.0; lat.len()];
        mass[lat.cell_of(1.0) as usize] = 0.5;
        let nu = GridMeasure::new(lat, mass, 0.0, 0.0).unwrap();
        let t = LevyTriplet::new(0.5, 0.0, JumpMeasure::Grid(nu), None).unwrap();
        let grid = Lattice::from_atoms(0.1, -10, 300).unwrap();
        let mu = id_distribution(&t, &grid, 1e-12).unwrap();
        let e = (-0.5f64).exp();
        assert!((mu.mass_at(0.0) - e).abs() < 1e-12);
        assert!((mu.mass_at(1.0) - 0.5 * e).abs() < 1e-12);
        assert!((mu.mass_at(2.0) - 0.125 * e).abs() < 1e-12);
    }

    #[test]
    fn finite_measure_matches_compound_poisson() {
        let span = 0.1;
        let lat = Lattice::from_atoms(span, 10, 300).unwrap();
        let f = |x: f64| if x > 1.0 { 2.0 * x.powi(-3) } else { 0.0 };
        let g = GridDistribution::from_density(&f, lat, TailHint::right(30f64.powi(-2))).unwrap();
        let nu = GridMeasure::from_distribution(&g, 1.5).unwrap();
        let t = LevyTriplet::new(0.0, 0.0, JumpMeasure::Grid(nu), None).unwrap();
        let grid = Lattice::from_atoms(span, 0, 3000).unwrap();
        let mu = id_distribution(&t, &grid, 1e-13).unwrap();
        let cp = compound_poisson_on(1.5, &g, 1e-13, &grid).unwrap();
        for (a, b) in mu.mass().iter().zip(cp.mass()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_measure_is_exactly_gaussian() {
        let grid = Lattice::new(-20.0, 0.05, 800).unwrap();
        let t = LevyTriplet::gaussian(1.3, 2.0).unwrap();
        let mu = id_distribution(&t, &grid, 1e-12).unwrap();
        let g = gridded_gaussian(1.3, 2.0, &grid, 1e-12).unwrap().restrict_to(&grid).unwrap();
        assert_eq!(mu, g);
    }

    #[test]
    fn normalized_tail_of_inverse_square() {
        let lat = Lattice::new(0.0, 0.01, 100_000).unwrap();
        let f = |x: f64| if x > 0.0 { x.powi(-2) } else { 0.0 };
        let nu = measure_from_density(&f, &lat, Cutoffs { minus: 0.0, plus: 0.01 }).unwrap();
        let n1 = normalized_tail_measure(&nu).unwrap();
        for x in [1.0, 2.0, 10.0, 100.0] {
            let expect = 1.0 / x - 1.0 / (x + 1.0);
            assert!((n1.interval_prob(x, w(1.0)).unwrap() - expect).abs() < 1e-8, "x={x}");
        }
        let below = GridMeasure::new(Lattice::from_atoms(0.5, 1, 2).unwrap(), vec![1.0, 0.0], 0.0, 0.0).unwrap();
        assert!(matches!(normalized_tail_measure(&below), Err(Error::DegenerateMeasure(_))));
        let two = GridMeasure::new(Lattice::from_atoms(0.5, 1, 4).unwrap(), vec![0.0, 0.0, 0.0, 3.0], 0.0, 0.0).unwrap();
        assert_eq!(normalized_tail_measure(&two).unwrap().mass_at(2.0), 1.0);
    }

    #[test]
    fn truncated_cp_cases() {
        let lat = Lattice::from_atoms(0.5, 1, 4).unwrap();
        let nu = GridMeasure::new(lat, vec![0.0, 0.0, 0.0, 0.7], 0.0, 0.0).unwrap();
        let mu = truncated_cp(&nu, 1.5, 1e-12).unwrap();
        assert!((mu.mass_at(0.0) - (-0.7f64).exp()).abs() < 1e-14);
        assert!((mu.mass_at(2.0) - 0.7 * (-0.7f64).exp()).abs() < 1e-14);
        assert!(matches!(truncated_cp(&nu, 3.0, 1e-12), Err(Error::DegenerateMeasure(_))));

        let lat = Lattice::new(0.0, 0.01, 100_000).unwrap();
        let f = |x: f64| if x > 0.0 { x.powi(-2) } else { 0.0 };
        let nu = measure_from_density(&f, &lat, Cutoffs { minus: 0.0, plus: 0.01 }).unwrap();
        assert!((nu.mass_above(2.0).unwrap() - 0.5).abs() < 1e-9);
        let jump = nu.normalized_above(2.0).unwrap();
        assert!((jump.tail_prob(4.0).unwrap() - 0.5).abs() < 1e-8);
    }

    #[test]
    fn s_sd_certificate_and_violations() {
        let lat = Lattice::new(-50.0, 0.01, 10_000).unwrap();
        let g = |x: f64| if x > 0.1 { x.powi(-2) } else { 0.0 };
        let nu = s_sd_levy_measure(&g, None, &lat, Cutoffs::symmetric(0.1)).unwrap();
        assert!(nu.monotone_certified());
        let bump = |x: f64| if x > 3.0 { 2.0 * x.powi(-2) } else if x > 0.1 { x.powi(-2) } else { 0.0 };
        assert!(matches!(
            s_sd_levy_measure(&bump, None, &lat, Cutoffs::symmetric(0.1)),
            Err(Error::NotSSelfDecomposable(_))
        ));
        let wrong_left = |x: f64| (-x).exp();
        assert!(matches!(
            s_sd_levy_measure(&g, Some(&wrong_left), &lat, Cutoffs::symmetric(0.1)),
            Err(Error::NotSSelfDecomposable(_))
        ));
    }

    /// `E1(x) = -γ - ln x + Σ_{k>=1} (-1)^{k+1} x^k / (k k!)`.
    fn exp_integral_e1(x: f64) -> f64 {
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..60 {
            term *= x / k as f64;
            let s = if k % 2 == 1 { 1.0 } else { -1.0 };
            sum += s * term / k as f64;
        }
        -EULER_GAMMA - x.ln() + sum
    }

    #[test]
    fn symmetric_exp_over_x_total_mass() {
        let lat = Lattice::new(-40.0, 0.01, 8000).unwrap();
        let gp = |x: f64| if x > 0.1 { (-x).exp() / x } else { 0.0 };
        let gm = |x: f64| if x < -0.1 { x.exp() / -x } else { 0.0 };
        let nu = s_sd_levy_measure(&gp, Some(&gm), &lat, Cutoffs::symmetric(0.1)).unwrap();
        assert!(nu.monotone_certified());
        let expect = 2.0 * exp_integral_e1(0.1);
        assert!((nu.total_with_excess() - expect).abs() < 1e-6);
    }

    #[test]
    fn default_cutoff_is_aligned() {
        assert!((default_cutoff(0.01) - 0.05).abs() < 1e-12);
        assert!((default_cutoff(0.001) - 0.05).abs() < 1e-12);
        assert!((default_cutoff(0.0025) / 0.0025 - 20.0).abs() < 1e-9);
        assert!((default_cutoff(0.1) - 0.1).abs() < 1e-12);
        assert!((default_cutoff(0.03) - 0.06).abs() < 1e-12);
    }

    #[test]
    fn invalid_triplets() {
        assert!(LevyTriplet::new(0.0, -1.0, JumpMeasure::Zero, None).is_err());
        assert!(LevyTriplet::new(0.0, 0.0, JumpMeasure::Zero, Some(0.0)).is_err());
        // x^{-1} tail is not integrable at infinity.
        let bad = LevyDensity { positive: Some(DensityFamily::Power { c: 1.0, p: 1.0, lower: 1.0 }), negative: None };
        assert!(matches!(
            LevyTriplet::new(0.0, 0.0, JumpMeasure::Density(bad), None),
            Err(Error::InvalidDensity(_))
        ));
        let lat = Lattice::from_atoms(1.0, -1, 1).unwrap();
        let at_zero = GridMeasure::new(lat, vec![0.0, 1.0, 0.0], 0.0, 0.0).unwrap();
        assert!(LevyTriplet::new(0.0, 0.0, JumpMeasure::Grid(at_zero), None).is_err());
    }

    #[test]
    fn density_triplet_splits_small_and_large_jumps() {
        let d = LevyDensity {
            positive: Some(DensityFamily::PiecewisePower { split: 1.0, c_below: 1.0, p_below: 1.5, c_above: 1.0, p_above: 3.0 }),
            negative: None,
        };
        let t = LevyTriplet::new(0.0, 0.5, JumpMeasure::Density(d), Some(0.1)).unwrap();
        let grid = Lattice::from_atoms(0.01, -1000, 10_000).unwrap();
        let dec = id_decomposition(&t, &grid, 1e-10).unwrap();
        // ∫_0^ε y^{1/2} dy = (2/3) ε^{3/2}
        assert!((dec.small_jump_variance - 2.0 / 3.0 * 0.1f64.powf(1.5)).abs() < 1e-10);
        // Compensation at the gridded atoms in (ε, 1].
        let lj = &dec.large_jumps;
        let gridded: f64 = (0..lj.lattice().len())
            .map(|k| (lj.lattice().atom(k), lj.mass()[k]))
            .filter(|&(y, _)| y <= 1.0 + 1e-12)
            .map(|(y, m)| y * m)
            .sum();
        assert!((dec.adjusted_drift + gridded).abs() < 1e-12);
        // Within one cell of -∫_ε^1 y^{-1/2} dy = -2(1 - √ε) per unit of ν(ε, 1].
        let exact = -2.0 * (1.0 - 0.1f64.sqrt());
        assert!((dec.adjusted_drift - exact).abs() <= 0.01 * 2.0 * (0.1f64.powf(-0.5) - 1.0));
        // ν(ε, ∞) = 2(ε^{-1/2} - 1) + 1/2
        let lam = 2.0 * (0.1f64.powf(-0.5) - 1.0) + 0.5;
        assert!((dec.large_jumps.total_with_excess() - lam).abs() < 1e-8);
        assert!((dec.dist.grid_mass() + dec.dist.excess() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = LevyDensity {
            positive: Some(DensityFamily::Power { c: 1.0, p: 3.0, lower: 0.1 }),
            negative: Some(DensityFamily::Exponential { c: 1.0, rate: 2.0, lower: 0.1 }),
        };
        let t = LevyTriplet::new(0.25, 0.5, JumpMeasure::Density(d.clone()), Some(0.2)).unwrap();
        let p = dir.path().join("t.toml");
        t.save(&p).unwrap();
        let back = LevyTriplet::load(&p).unwrap();
        assert_eq!(back.a, 0.25);
        assert_eq!(back.cutoff, Some(0.2));
        assert!(matches!(back.jumps, JumpMeasure::Density(ref e) if *e == d));

        let lat = Lattice::from_atoms(0.5, 1, 4).unwrap();
        let nu = GridMeasure::new(lat, vec![0.1, 0.0, 0.2, 0.7], 0.0, 0.01).unwrap();
        let t = LevyTriplet::new(0.0, 0.0, JumpMeasure::Grid(nu.clone()), None).unwrap();
        let p = dir.path().join("g.toml");
        t.save(&p).unwrap();
        assert!(dir.path().join("g_jumps.csv").exists());
        match LevyTriplet::load(&p).unwrap().jumps {
            JumpMeasure::Grid(m) => assert_eq!(m, nu),
            other => panic!("unexpected {other:?}"),
        }
        let text = "a = 1.0\nb2 = 0.0\n[jumps]\nkind = \"density\"\npositive = { family = \"exp_over_x\", c = 1.0, rate = 1.0, lower = 0.1 }\n";
        let doc = TripletDoc::from_toml_str(text).unwrap();
        assert!(doc.resolve(dir.path()).is_ok());
        assert!(TripletDoc::from_toml_str("a = 1.0\nbogus = 2\n").is_err());
    }
}
