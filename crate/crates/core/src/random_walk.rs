//! Supremum of a random walk with negative drift: ladder-height series,
//! the compound geometric law of the supremum, and a Monte Carlo oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::compound::{atom_range, compound_geometric, randomly_stopped_sum, PowerChain};
use crate::diagnostics::{check_asymptotic_ratio, DiagnosticReport, ProbeSchedule, RatioMode};
use crate::error::{Error, Result};
use crate::grid::{GridDistribution, GridMeasure};
use crate::lattice::Lattice;

/// Hard cap on the length of a single Monte Carlo path.
pub const MC_STEP_CAP: u64 = 1_000_000;
/// Largest tolerated fraction of paths that hit [`MC_STEP_CAP`].
pub const MC_CAP_FRACTION: f64 = 0.01;
/// Largest window the ladder series will convolve on, in cells.
const MAX_LADDER_CELLS: i64 = 1 << 21;

/// Ladder-height decomposition of a step law `G`.
#[derive(Debug, Clone)]
pub struct LadderDecomposition {
    /// `ν = Σ n^{-1} G^{*n}` restricted to `(0, ∞)`.
    pub nu: GridMeasure,
    /// Total mass of `ν`.
    pub b: f64,
    /// `1 - e^{-B}`, the probability that the walk ever rises above 0.
    pub lambda: f64,
    /// Law of the first ascending ladder height.
    pub g0: GridDistribution,
    /// Number of terms of the `ν` series.
    pub series_n: usize,
    /// Estimated mass of the omitted `ν` terms.
    pub truncation_residual: f64,
    /// True when the residual rests on an estimated rather than a proven decay rate.
    pub heuristic_residual: bool,
    /// Chernoff rate `inf_θ E e^{θX}` of the gridded step law.
    pub chernoff_rate: f64,
    /// Factor applied to `G₀` after clamping.
    pub renorm_factor: f64,
}

/// `ln E e^{θX}` of the gridded law, excess masses placed at the grid edges.
fn log_mgf(g: &GridDistribution, theta: f64) -> f64 {
    let lat = g.lattice();
    let terms = g
        .mass()
        .iter()
        .enumerate()
        .filter(|(_, m)| **m > 0.0)
        .map(|(k, m)| m.ln() + theta * lat.atom(k))
        .chain((g.left_excess() > 0.0).then(|| g.left_excess().ln() + theta * lat.origin()))
        .chain((g.right_excess() > 0.0).then(|| g.right_excess().ln() + theta * lat.end()));
    let v: Vec<f64> = terms.collect();
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + v.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

/// `(ρ, γ)`: the minimum of the mgf and the positive root of `E e^{γX} = 1`.
fn chernoff(g: &GridDistribution) -> (f64, f64) {
    let mut hi = 0.01;
    while log_mgf(g, hi) <= 0.0 && hi < 1e6 {
        hi *= 2.0;
    }
    // Golden-section search for the minimum of the convex log-mgf.
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, hi);
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if log_mgf(g, c) < log_mgf(g, d) {
            b = d;
        } else {
            a = c;
        }
    }
    let t_min = 0.5 * (a + b);
    let rho = log_mgf(g, t_min).exp().min(1.0);
    let (mut lo, mut up) = (t_min, hi);
    for _ in 0..200 {
        let m = 0.5 * (lo + up);
        if log_mgf(g, m) < 0.0 {
            lo = m;
        } else {
            up = m;
        }
    }
    (rho, 0.5 * (lo + up))
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1e-3], got {tol}")));
    }
    Ok(())
}

/// Ladder decomposition of a step law with negative mean.
///
/// `ν` is summed for `n = 1, 2, ...` until the estimated remainder
/// `P(S_n > 0)/(n+1) · ρ/(1-ρ)` drops below `tol`, or `n_max` terms have
/// been used. `G₀` follows from the alternating exponential series of `ν`.
pub fn ladder_decompose(g: &GridDistribution, n_max: usize, tol: f64) -> Result<LadderDecomposition> {
    check_tol(tol)?;
    if n_max < 10 {
        return Err(Error::InvalidArgument(format!("n_max must be at least 10, got {n_max}")));
    }
    let lat = g.lattice();
    if !lat.is_zero_aligned() {
        return Err(Error::LatticeMismatch("ladder series need a lattice with 0 as a cell boundary".into()));
    }
    let mean = g.mean_with_edges();
    if !(mean < 0.0) {
        return Err(Error::NoNegativeDrift { mean });
    }
    let span = lat.span();
    let (e_lo, e_hi) = atom_range(g);
    if e_hi <= 0 && g.right_excess() == 0.0 {
        let nu_lat = Lattice::from_atoms(span, 1, 1)?;
        return Ok(LadderDecomposition {
            nu: GridMeasure::zero(nu_lat),
            b: 0.0,
            lambda: 0.0,
            g0: GridDistribution::new(nu_lat, vec![1.0], 0.0, 0.0)?,
            series_n: 0,
            truncation_residual: 0.0,
            heuristic_residual: false,
            chernoff_rate: log_mgf(g, 0.0).exp().min(1.0),
            renorm_factor: 1.0,
        });
    }

    let (mut rho, gamma) = chernoff(g);
    let mut heuristic = g.right_excess() > 0.0;
    // Lundberg: the walk climbs `w` above any level with probability at most e^{-γw}.
    let reach = ((100.0 / tol).ln() / gamma / span).ceil() as i64;
    let n = n_max as i64;
    let mut w_hi = reach.min(n.saturating_mul(e_hi.max(1))).max(e_hi.max(1));
    let mut w_lo = (-reach).max(n.saturating_mul(e_lo.min(0))).min(e_lo.min(0));
    if w_hi - w_lo + 1 > MAX_LADDER_CELLS {
        let s = MAX_LADDER_CELLS as f64 / (w_hi - w_lo + 1) as f64;
        w_hi = ((w_hi as f64 * s).floor() as i64).max(e_hi.max(1));
        w_lo = ((w_lo as f64 * s).ceil() as i64).min(e_lo.min(0));
    }
    let window = Lattice::from_atoms(span, w_lo, w_hi)?;
    let first_pos = (1 - w_lo) as usize;
    let nu_lat = Lattice::from_atoms(span, 1, w_hi)?;

    let chain = PowerChain::new(g, &window)?;
    let mut nu = vec![0.0; nu_lat.len()];
    let mut nu_right = 0.0;
    let mut cur = chain.first()?;
    let mut residual = f64::INFINITY;
    let mut used = 0;
    let mut prev_p = f64::NAN;
    for k in 1..=n_max {
        if k > 1 {
            cur = chain.step(&cur)?;
        }
        let inv = 1.0 / k as f64;
        for (a, m) in nu.iter_mut().zip(&cur.mass()[first_pos..]) {
            *a += inv * m;
        }
        nu_right += inv * cur.right_excess();
        let p = cur.mass()[first_pos..].iter().sum::<f64>() + cur.right_excess();
        used = k;
        if rho >= 1.0 - 1e-12 && prev_p > 0.0 {
            rho = (p / prev_p).min(1.0 - 1e-12);
            heuristic = true;
        }
        prev_p = p;
        residual = p / (k as f64 + 1.0) * rho / (1.0 - rho);
        if k >= 10 && residual < tol {
            break;
        }
    }
    if residual > 100.0 * tol {
        return Err(Error::LadderNotConverged { residual, limit: 100.0 * tol });
    }
    let nu = GridMeasure::new(nu_lat, nu, 0.0, nu_right)?;
    let b = nu.total_with_excess();
    let lambda = -(-b).exp_m1();
    let (g0, renorm_factor) = ladder_height_law(&nu, b, lambda, tol)?;
    Ok(LadderDecomposition {
        nu,
        b,
        lambda,
        g0,
        series_n: used,
        truncation_residual: residual,
        heuristic_residual: heuristic,
        chernoff_rate: rho,
        renorm_factor,
    })
}

/// `G₀ = λ^{-1} Σ_{n>=1} (-1)^{n+1} ν^{*n}/n!`, truncated once `B^n/n! < tol·λ`.
fn ladder_height_law(nu: &GridMeasure, b: f64, lambda: f64, tol: f64) -> Result<(GridDistribution, f64)> {
    let lat = *nu.lattice();
    let unit = GridDistribution::new(
        lat,
        nu.mass().iter().map(|m| m / b).collect(),
        0.0,
        nu.right_excess() / b,
    )?;
    let chain = PowerChain::new(&unit, &lat)?;
    let mut acc = vec![0.0; lat.len()];
    let mut right = 0.0;
    let mut cur = chain.first()?;
    let mut coef = 1.0;
    let mut n = 1usize;
    loop {
        coef *= b / n as f64;
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        let w = sign * coef / lambda;
        for (a, m) in acc.iter_mut().zip(cur.mass()) {
            *a += w * m;
        }
        right += w * cur.right_excess();
        if coef * b / (n as f64 + 1.0) < tol * lambda {
            break;
        }
        n += 1;
        cur = chain.step(&cur)?;
    }
    let worst = acc.iter().copied().chain([right]).fold(0.0, f64::min);
    if worst < -100.0 * tol {
        return Err(Error::InversionFailed(format!("ladder height series produced mass {worst:e}")));
    }
    acc.iter_mut().for_each(|m| *m = m.max(0.0));
    let right = right.max(0.0);
    let total = acc.iter().sum::<f64>() + right;
    let s = 1.0 / total;
    acc.iter_mut().for_each(|m| *m *= s);
    Ok((GridDistribution::new(lat, acc, 0.0, right * s)?, s))
}

/// `ν = Σ_{n>=1} λ^n/n G₀^{*n}` on the lattice of `G₀`, the inverse of the
/// ladder-height series. Terms stop once the analytic remainder
/// `λ^{n+1}/((n+1)(1-λ))` is below `tol`.
pub fn ladder_measure_from_height(g0: &GridDistribution, lambda: f64, tol: f64) -> Result<GridMeasure> {
    check_tol(tol)?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!("λ must lie in (0, 1), got {lambda}")));
    }
    let lat = *g0.lattice();
    let chain = PowerChain::new(g0, &lat)?;
    let mut acc = vec![0.0; lat.len()];
    let (mut left, mut right) = (0.0, 0.0);
    let mut cur = chain.first()?;
    let mut ln = 1.0;
    let mut n = 1usize;
    loop {
        ln *= lambda;
        let w = ln / n as f64;
        for (a, m) in acc.iter_mut().zip(cur.mass()) {
            *a += w * m;
        }
        left += w * cur.left_excess();
        right += w * cur.right_excess();
        if ln * lambda / ((n as f64 + 1.0) * (1.0 - lambda)) < tol {
            break;
        }
        n += 1;
        cur = chain.step(&cur)?;
    }
    GridMeasure::new(lat, acc, left, right)
}

/// Law of `M = sup_n S_n`: `Σ (1-λ) λ^n G₀^{*n}`, or `δ_0` when `λ = 0`.
pub fn supremum_distribution(ld: &LadderDecomposition, tol: f64) -> Result<GridDistribution> {
    if ld.lambda == 0.0 {
        return GridDistribution::delta_zero(ld.g0.lattice().span());
    }
    compound_geometric(ld.lambda, &ld.g0, tol)
}

/// A source of i.i.d. steps.
pub trait JumpSampler: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64;

    /// Exact mean when known; used to reject walks without negative drift.
    fn mean(&self) -> Option<f64> {
        None
    }
}

/// Draws the atoms of a gridded law; excess mass is drawn at the grid edges.
#[derive(Debug, Clone)]
pub struct GridSampler {
    values: Vec<f64>,
    cdf: Vec<f64>,
    mean: f64,
}

impl GridSampler {
    pub fn new(g: &GridDistribution) -> Self {
        let lat = g.lattice();
        let mut values = vec![lat.origin()];
        let mut probs = vec![g.left_excess()];
        for (k, &m) in g.mass().iter().enumerate() {
            values.push(lat.atom(k));
            probs.push(m);
        }
        values.push(lat.end());
        probs.push(g.right_excess());
        let total: f64 = probs.iter().sum();
        let mut run = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                run += p / total;
                run
            })
            .collect();
        Self { values, cdf, mean: g.mean_with_edges() }
    }
}

impl JumpSampler for GridSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c <= u).min(self.values.len() - 1);
        self.values[i]
    }

    fn mean(&self) -> Option<f64> {
        Some(self.mean)
    }
}

/// Wraps a closure as a sampler.
pub struct FnSampler<F> {
    f: F,
    mean: Option<f64>,
}

impl<F: Fn(&mut ChaCha8Rng) -> f64 + Sync> FnSampler<F> {
    pub fn new(f: F, mean: Option<f64>) -> Self {
        Self { f, mean }
    }
}

impl<F: Fn(&mut ChaCha8Rng) -> f64 + Sync> JumpSampler for FnSampler<F> {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        (self.f)(rng)
    }

    fn mean(&self) -> Option<f64> {
        self.mean
    }
}

/// Empirical law of the supremum over simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct McSupremum {
    pub dist: GridDistribution,
    pub paths: usize,
    pub cap_hits: usize,
    /// Drawdown below the running maximum that ends a path.
    pub drawdown: f64,
}

impl McSupremum {
    /// `(P̂(M > x), standard error)`.
    pub fn tail_with_se(&self, x: f64) -> Result<(f64, f64)> {
        let p = self.dist.tail_prob(x)?;
        Ok((p, (p * (1.0 - p) / self.paths as f64).sqrt()))
    }
}

/// Simulates `n_paths` walks and tabulates their maxima on `lattice`. Path
/// `i` draws from `ChaCha8Rng` seeded with `seed ^ i`, so the result does not
/// depend on thread scheduling. A path ends once it falls
/// `50·span·⌈1/drift_margin⌉` below its running maximum, or after
/// [`MC_STEP_CAP`] steps.
pub fn mc_supremum(
    sampler: &dyn JumpSampler,
    n_paths: usize,
    drift_margin: f64,
    seed: u64,
    lattice: &Lattice,
) -> Result<McSupremum> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    if !(drift_margin > 0.0 && drift_margin.is_finite()) {
        return Err(Error::InvalidArgument(format!("drift margin must be positive, got {drift_margin}")));
    }
    if let Some(mean) = sampler.mean() {
        if !(mean < 0.0) {
            return Err(Error::NoNegativeDrift { mean });
        }
    }
    let drawdown = 50.0 * lattice.span() * (1.0 / drift_margin).ceil();
    let runs: Vec<(f64, bool)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i);
            let (mut s, mut max) = (0.0f64, 0.0f64);
            for _ in 0..MC_STEP_CAP {
                s += sampler.sample(&mut rng);
                if s > max {
                    max = s;
                } else if s < max - drawdown {
                    return (max, false);
                }
            }
            (max, true)
        })
        .collect();
    let cap_hits = runs.iter().filter(|r| r.1).count();
    if cap_hits as f64 > MC_CAP_FRACTION * n_paths as f64 {
        return Err(Error::UnreliableOracle { cap_hits: cap_hits as u64, paths: n_paths as u64 });
    }
    let mut counts = vec![0u64; lattice.len()];
    let (mut left, mut right) = (0u64, 0u64);
    for (m, _) in &runs {
        let k = lattice.cell_of(*m);
        if k < 0 {
            left += 1;
        } else if k >= lattice.len() as i64 {
            right += 1;
        } else {
            counts[k as usize] += 1;
        }
    }
    let n = n_paths as f64;
    let dist = GridDistribution::new(
        *lattice,
        counts.iter().map(|&c| c as f64 / n).collect(),
        left as f64 / n,
        right as f64 / n,
    )?;
    Ok(McSupremum { dist, paths: n_paths, cap_hits, drawdown })
}

/// `F^{*τ}(x+Δ)/F(x+Δ)` judged against `E[τ]`.
pub fn stopped_sum_ratio_check(
    f: &GridDistribution,
    tau_pmf: &[f64],
    sched: &ProbeSchedule,
    rel_tol: f64,
) -> Result<DiagnosticReport> {
    let stopped = randomly_stopped_sum(tau_pmf, f, 1e-12)?;
    let total: f64 = tau_pmf.iter().sum();
    let mean_tau = tau_pmf.iter().enumerate().map(|(n, p)| n as f64 * p).sum::<f64>() / total;
    if !(mean_tau > 0.0) {
        return Err(Error::InvalidArgument("τ must put mass on positive values".into()));
    }
    let mut report = check_asymptotic_ratio(&stopped, f, RatioMode::Target(mean_tau), sched, rel_tol)?;
    report.check = "stopped_sum_ratio".into();
    Ok(report)
}
