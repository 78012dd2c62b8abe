//! Compound distributions `Σ w_n G^{*n}` and the inverse series that
//! recovers a jump law from a compound Poisson law.
//!
//! Every builder truncates its weight sequence where an analytic bound on the
//! remaining weight drops below `tol`. The truncated weight is not
//! renormalized away: it is booked as excess mass. Convolution powers are
//! carried on a fixed window, with mass leaving the window moved to the
//! excess on its side.

use statrs::function::gamma::ln_gamma;

use crate::conv::{assemble_product, direct_convolve, FftKernel, DIRECT_THRESHOLD};
use crate::error::{Error, Result};
use crate::grid::GridDistribution;
use crate::lattice::Lattice;

/// Largest number of series terms any builder will evaluate.
pub const MAX_TERMS: usize = 1_000_000;

/// Minimum number of cells in a default series window.
pub const MIN_WINDOW_CELLS: usize = 65_536;

/// Truncated weight sequence: `weights[n]` for `n = 0..=N`, plus the weight
/// `tail` of all omitted terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesWeights {
    pub weights: Vec<f64>,
    pub tail: f64,
}

impl SeriesWeights {
    /// Poisson(λ) weights `e^{-λ} λ^n / n!`.
    pub fn poisson(lambda: f64, tol: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("Poisson rate must be positive, got {lambda}")));
        }
        check_tol(tol)?;
        let ln_l = lambda.ln();
        Self::from_log_weights(
            |n| -lambda + n as f64 * ln_l - ln_gamma(n as f64 + 1.0),
            |m| lambda / (m as f64 + 1.0),
            tol,
        )
    }

    /// Negative binomial weights `C(a+n-1, n) (1-λ)^a λ^n`.
    pub fn negative_binomial(a: f64, lambda: f64, tol: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidArgument(format!("negative binomial shape must be positive, got {a}")));
        }
        check_unit(lambda)?;
        check_tol(tol)?;
        let (ln_l, ln_q, lg_a) = (lambda.ln(), (-lambda).ln_1p(), ln_gamma(a));
        Self::from_log_weights(
            |n| {
                let n = n as f64;
                ln_gamma(a + n) - lg_a - ln_gamma(n + 1.0) + a * ln_q + n * ln_l
            },
            // w_{m+1}/w_m = λ(a+m)/(m+1) is monotone with limit λ.
            |m| (lambda * (a + m as f64) / (m as f64 + 1.0)).max(lambda),
            tol,
        )
    }

    /// Geometric weights `(1-λ) λ^n`, identical to the negative binomial with `a = 1`.
    pub fn geometric(lambda: f64, tol: f64) -> Result<Self> {
        Self::negative_binomial(1.0, lambda, tol)
    }

    /// Weights of a counting variable given by its pmf on `0, 1, 2, ...`.
    pub fn from_pmf(pmf: &[f64]) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidWeights("empty pmf".into()));
        }
        if let Some(p) = pmf.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidWeights(format!("pmf entry {p} is not a probability")));
        }
        let total: f64 = pmf.iter().sum();
        if !((total - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidWeights(format!("pmf sums to {total}")));
        }
        let last = pmf.iter().rposition(|&p| p > 0.0).expect("pmf has positive total");
        let weights = pmf[..=last].iter().map(|p| p / total).collect();
        Ok(Self { weights, tail: 0.0 })
    }

    /// Largest retained index `N`.
    pub fn n_max(&self) -> usize {
        self.weights.len() - 1
    }

    /// `log_w(n)` gives the log weight; `sup_ratio(m)` bounds `w_{j+1}/w_j` for all `j >= m`.
    fn from_log_weights(log_w: impl Fn(usize) -> f64, sup_ratio: impl Fn(usize) -> f64, tol: f64) -> Result<Self> {
        let mut weights = Vec::new();
        for n in 0..MAX_TERMS {
            weights.push(log_w(n).exp());
            let r = sup_ratio(n + 1);
            if r < 1.0 {
                let bound = log_w(n + 1).exp() / (1.0 - r);
                if bound < tol {
                    let kept: f64 = weights.iter().sum();
                    return Ok(Self { weights, tail: (1.0 - kept).max(0.0) });
                }
            }
        }
        Err(Error::SeriesDivergent(format!("weight tail still above {tol} after {MAX_TERMS} terms")))
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol.is_finite() && tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument(format!("series tolerance must lie in (0, 1), got {tol}")));
    }
    Ok(())
}

fn check_unit(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!("parameter must lie in (0, 1), got {lambda}")));
    }
    Ok(())
}

/// Counting law of a compound construction.
#[derive(Debug, Clone, PartialEq)]
pub enum CompoundKind {
    Poisson { lambda: f64 },
    Geometric { lambda: f64 },
    NegativeBinomial { a: f64, lambda: f64 },
    Stopped { tau_pmf: Vec<f64> },
}

/// A validated compound construction: counting law, jump law and series tolerance.
#[derive(Debug, Clone)]
pub struct CompoundSpec {
    kind: CompoundKind,
    jump: GridDistribution,
    series_tol: f64,
}

impl CompoundSpec {
    pub fn new(kind: CompoundKind, jump: GridDistribution, series_tol: f64) -> Result<Self> {
        if !(series_tol > 0.0 && series_tol <= 1e-3) {
            return Err(Error::InvalidArgument(format!("series_tol must lie in (0, 1e-3], got {series_tol}")));
        }
        match &kind {
            CompoundKind::Poisson { lambda } if !(lambda.is_finite() && *lambda > 0.0) => {
                return Err(Error::InvalidArgument(format!("Poisson rate must be positive, got {lambda}")))
            }
            CompoundKind::Geometric { lambda } => check_unit(*lambda)?,
            CompoundKind::NegativeBinomial { a, lambda } => {
                if !(a.is_finite() && *a > 0.0) {
                    return Err(Error::InvalidArgument(format!("negative binomial shape must be positive, got {a}")));
                }
                check_unit(*lambda)?;
            }
            CompoundKind::Stopped { tau_pmf } => {
                SeriesWeights::from_pmf(tau_pmf)?;
            }
            _ => {}
        }
        Ok(Self { kind, jump, series_tol })
    }

    pub fn kind(&self) -> &CompoundKind {
        &self.kind
    }

    pub fn jump(&self) -> &GridDistribution {
        &self.jump
    }

    pub fn series_tol(&self) -> f64 {
        self.series_tol
    }

    pub fn weights(&self) -> Result<SeriesWeights> {
        let tol = self.series_tol;
        match &self.kind {
            CompoundKind::Poisson { lambda } => SeriesWeights::poisson(*lambda, tol),
            CompoundKind::Geometric { lambda } => SeriesWeights::geometric(*lambda, tol),
            CompoundKind::NegativeBinomial { a, lambda } => SeriesWeights::negative_binomial(*a, *lambda, tol),
            CompoundKind::Stopped { tau_pmf } => SeriesWeights::from_pmf(tau_pmf),
        }
    }

    pub fn build(&self) -> Result<GridDistribution> {
        weighted_series(&self.weights()?, &self.jump, None)
    }

    pub fn build_on(&self, window: &Lattice) -> Result<GridDistribution> {
        weighted_series(&self.weights()?, &self.jump, Some(window))
    }
}

/// `e^{-λ} Σ λ^n/n! G^{*n}` on the default window.
pub fn compound_poisson(lambda: f64, g: &GridDistribution, tol: f64) -> Result<GridDistribution> {
    weighted_series(&SeriesWeights::poisson(lambda, tol)?, g, None)
}

pub fn compound_poisson_on(lambda: f64, g: &GridDistribution, tol: f64, window: &Lattice) -> Result<GridDistribution> {
    weighted_series(&SeriesWeights::poisson(lambda, tol)?, g, Some(window))
}

/// `Σ (1-λ) λ^n G^{*n}`.
pub fn compound_geometric(lambda: f64, g: &GridDistribution, tol: f64) -> Result<GridDistribution> {
    compound_negative_binomial(1.0, lambda, g, tol)
}

pub fn compound_geometric_on(lambda: f64, g: &GridDistribution, tol: f64, window: &Lattice) -> Result<GridDistribution> {
    compound_negative_binomial_on(1.0, lambda, g, tol, window)
}

/// `Σ C(a+n-1, n) (1-λ)^a λ^n G^{*n}`.
pub fn compound_negative_binomial(a: f64, lambda: f64, g: &GridDistribution, tol: f64) -> Result<GridDistribution> {
    weighted_series(&SeriesWeights::negative_binomial(a, lambda, tol)?, g, None)
}

pub fn compound_negative_binomial_on(
    a: f64,
    lambda: f64,
    g: &GridDistribution,
    tol: f64,
    window: &Lattice,
) -> Result<GridDistribution> {
    weighted_series(&SeriesWeights::negative_binomial(a, lambda, tol)?, g, Some(window))
}

/// `F^{*τ} = Σ P(τ = n) F^{*n}`. `tol` is accepted for interface symmetry;
/// the pmf is finite, so the series is summed in full.
pub fn randomly_stopped_sum(tau_pmf: &[f64], f: &GridDistribution, tol: f64) -> Result<GridDistribution> {
    check_tol(tol)?;
    weighted_series(&SeriesWeights::from_pmf(tau_pmf)?, f, None)
}

/// Integer atom range `[lo, hi]` of the nonzero cells of a zero-aligned law.
pub(crate) fn atom_range(g: &GridDistribution) -> (i64, i64) {
    let t = g.trimmed();
    let e0 = t.lattice().first_atom();
    (e0, e0 + t.lattice().len() as i64 - 1)
}

/// Default window for `Σ_{n<=N} w_n G^{*n}`: the atoms `[min(0, N·lo), max(0, N·hi)]`,
/// shrunk towards the hull of `G` and 0 when longer than
/// `max(4·len(G), MIN_WINDOW_CELLS)` cells.
pub fn default_window(g: &GridDistribution, n_max: usize) -> Result<Lattice> {
    if !g.lattice().is_zero_aligned() {
        return Err(Error::LatticeMismatch("series builders need a lattice with 0 as a cell boundary".into()));
    }
    let span = g.lattice().span();
    let (lo, hi) = atom_range(g);
    let base_lo = lo.min(0);
    let base_hi = hi.max(0);
    let n = n_max.max(1) as i64;
    let (mut w_lo, mut w_hi) = (base_lo.min(n.saturating_mul(lo)), base_hi.max(n.saturating_mul(hi)));
    let cap = (4 * g.lattice().len()).max(MIN_WINDOW_CELLS).max((base_hi - base_lo + 1) as usize) as i64;
    let len = w_hi - w_lo + 1;
    if len > cap {
        // Keep the proportions of the left and right reach.
        let extra = (cap - (base_hi - base_lo + 1)) as f64;
        let left = (base_lo - w_lo) as f64;
        let right = (w_hi - base_hi) as f64;
        let take_left = (extra * left / (left + right)).floor() as i64;
        w_lo = base_lo - take_left;
        w_hi = w_lo + cap - 1;
    }
    Lattice::from_atoms(span, w_lo, w_hi)
}

fn is_positive_half(g: &GridDistribution) -> bool {
    g.left_excess() == 0.0 && atom_range(g).0 >= 0
}

/// Repeated convolution against a fixed jump law on a fixed window.
pub(crate) struct PowerChain {
    jump: GridDistribution,
    window: Lattice,
    kernel: Option<FftKernel>,
}

impl PowerChain {
    pub(crate) fn new(jump: &GridDistribution, window: &Lattice) -> Result<Self> {
        window.offset_of(jump.lattice())?;
        let jump = jump.trimmed();
        let kernel = if jump.lattice().len().min(window.len()) < DIRECT_THRESHOLD {
            None
        } else {
            Some(FftKernel::new(jump.mass(), window.len()))
        };
        Ok(Self { jump, window: *window, kernel })
    }

    /// `jump` re-tabulated on the window.
    pub(crate) fn first(&self) -> Result<GridDistribution> {
        self.jump.restrict_to(&self.window)
    }

    /// `restrict(cur * jump)` for `cur` on the window.
    pub(crate) fn step(&self, cur: &GridDistribution) -> Result<GridDistribution> {
        let mass = match &self.kernel {
            Some(k) => k.apply(cur.mass()),
            None => direct_convolve(cur.mass(), self.jump.mass()),
        };
        assemble_product(cur, &self.jump, mass)?.restrict_to(&self.window)
    }
}

/// Accumulates `Σ w_n G^{*n}` on a window, with excess bookkeeping.
#[derive(Debug, Clone)]
struct Accumulator {
    mass: Vec<f64>,
    left: f64,
    right: f64,
    ambiguous: f64,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self { mass: vec![0.0; len], left: 0.0, right: 0.0, ambiguous: 0.0 }
    }

    fn add(&mut self, w: f64, d: &GridDistribution) {
        for (a, m) in self.mass.iter_mut().zip(d.mass()) {
            *a += w * m;
        }
        self.left += w * d.left_excess();
        self.right += w * d.right_excess();
        self.ambiguous += w * d.ambiguous_mass();
    }
}

/// `Σ_n w_n G^{*n}` with the running convolution `G^{*(n+1)} = G^{*n} * G`.
/// The omitted weight goes to the right excess when `G` lives on `[0, ∞)`,
/// otherwise half to each side (and is counted as ambiguous).
pub fn weighted_series(weights: &SeriesWeights, g: &GridDistribution, window: Option<&Lattice>) -> Result<GridDistribution> {
    if !g.lattice().is_zero_aligned() {
        return Err(Error::LatticeMismatch("series builders need a lattice with 0 as a cell boundary".into()));
    }
    let window = match window {
        Some(w) => {
            if !w.is_zero_aligned() {
                return Err(Error::LatticeMismatch("series window must have 0 as a cell boundary".into()));
            }
            *w
        }
        None => default_window(g, weights.n_max())?,
    };
    let mut acc = Accumulator::new(window.len());
    let delta = GridDistribution::delta_zero(window.span())?.restrict_to(&window)?;
    acc.add(weights.weights[0], &delta);
    if weights.n_max() >= 1 {
        let chain = PowerChain::new(g, &window)?;
        let mut cur = chain.first()?;
        for (n, &w) in weights.weights.iter().enumerate().skip(1) {
            if n > 1 {
                cur = chain.step(&cur)?;
            }
            acc.add(w, &cur);
        }
    }
    if is_positive_half(g) {
        acc.right += weights.tail;
    } else {
        acc.left += 0.5 * weights.tail;
        acc.right += 0.5 * weights.tail;
        acc.ambiguous += weights.tail;
    }
    GridDistribution::assemble(window, acc.mass, acc.left, acc.right, acc.ambiguous)
}

/// `μ10 = (μ - p0 δ_0)/(1 - p0)` where `p0` is the mass of the atom at 0.
/// Returns `(μ10, p0)`.
pub fn remove_zero_atom(mu: &GridDistribution) -> Result<(GridDistribution, f64)> {
    let k0 = mu.lattice().cell_of(0.0);
    if !mu.lattice().is_zero_aligned() || k0 < 0 || k0 >= mu.lattice().len() as i64 {
        return Err(Error::LatticeMismatch("lattice has no cell carrying the atom 0".into()));
    }
    let p0 = mu.mass()[k0 as usize];
    if !(p0 < 1.0) {
        return Err(Error::DegenerateSupport("all mass sits at 0".into()));
    }
    let s = 1.0 / (1.0 - p0);
    let mut mass: Vec<f64> = mu.mass().iter().map(|m| m * s).collect();
    mass[k0 as usize] = 0.0;
    let d = GridDistribution::assemble(*mu.lattice(), mass, mu.left_excess() * s, mu.right_excess() * s, mu.ambiguous_mass() * s)?;
    Ok((d, p0))
}

/// Safety factor on `ln 2` when choosing the inversion split point.
pub const INVERSION_MARGIN: f64 = 0.9;

/// Smallest cell boundary `c1` with `λ Ḡ(c1) <= INVERSION_MARGIN · ln 2`, so the
/// compound Poisson part built from jumps above `c1` can be inverted.
pub fn inversion_split_point(g: &GridDistribution, lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be positive, got {lambda}")));
    }
    let bound = INVERSION_MARGIN * std::f64::consts::LN_2 / lambda;
    let lat = g.lattice();
    let mut tail = g.right_excess();
    if tail > bound {
        return Err(Error::SeriesDivergent(format!("excess {tail:.3e} above the lattice already exceeds {bound:.3e}")));
    }
    for k in (0..lat.len()).rev() {
        if tail + g.mass()[k] > bound {
            return Ok(lat.edge(k as i64 + 1));
        }
        tail += g.mass()[k];
    }
    Ok(lat.origin())
}

/// Result of [`levy_inversion`].
#[derive(Debug, Clone)]
pub struct Inversion {
    pub dist: GridDistribution,
    /// Factor applied after clamping to restore total mass 1.
    pub renorm_factor: f64,
    /// Number of series terms used.
    pub terms: usize,
}

/// Recovers the jump law `G1` of `μ = e^{-θ} Σ θ^n/n! G1^{*n}` from the
/// zero-free part `μ10`, through
/// `θ G1 = Σ_{n>=1} (-1)^{n+1} r^n/n μ10^{*n}` with `r = e^θ - 1`.
/// The series converges for `θ < ln 2`.
pub fn levy_inversion(mu10: &GridDistribution, theta: f64, tol: f64) -> Result<Inversion> {
    levy_inversion_on(mu10, theta, tol, mu10.lattice())
}

pub fn levy_inversion_on(mu10: &GridDistribution, theta: f64, tol: f64, window: &Lattice) -> Result<Inversion> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be positive, got {theta}")));
    }
    check_tol(tol)?;
    if theta >= std::f64::consts::LN_2 {
        return Err(Error::SeriesDivergent(format!("rate {theta} is not below ln 2")));
    }
    if !mu10.lattice().is_zero_aligned() || !window.is_zero_aligned() {
        return Err(Error::LatticeMismatch("inversion needs lattices with 0 as a cell boundary".into()));
    }
    let r = theta.exp_m1();
    let mut n_terms = 1usize;
    while r.powi(n_terms as i32 + 1) / ((n_terms as f64 + 1.0) * (1.0 - r)) >= tol {
        n_terms += 1;
    }

    let chain = PowerChain::new(mu10, window)?;
    let mut acc = Accumulator::new(window.len());
    let mut cur = chain.first()?;
    let mut rn = 1.0;
    for n in 1..=n_terms {
        if n > 1 {
            cur = chain.step(&cur)?;
        }
        rn *= r;
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        acc.add(sign * rn / n as f64 / theta, &cur);
    }

    let mut worst = 0.0f64;
    for m in acc.mass.iter_mut() {
        worst = worst.min(*m);
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    for e in [&mut acc.left, &mut acc.right] {
        worst = worst.min(*e);
        *e = e.max(0.0);
    }
    if worst < -tol {
        return Err(Error::InversionFailed(format!(
            "series produced mass {worst:e} below the clamping floor -{tol:e}"
        )));
    }
    let total = acc.mass.iter().sum::<f64>() + acc.left + acc.right;
    if !(total > 0.0) {
        return Err(Error::InversionFailed("series produced no mass".into()));
    }
    let s = 1.0 / total;
    acc.mass.iter_mut().for_each(|m| *m *= s);
    let dist = GridDistribution::assemble(*window, acc.mass, acc.left * s, acc.right * s, acc.ambiguous.abs() * s)?;
    Ok(Inversion { dist, renorm_factor: s, terms: n_terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::convolve;
    use crate::lattice::DeltaWindow;
    use crate::grid::TailHint;

    fn unit_atom() -> GridDistribution {
        GridDistribution::point_mass(1.0, 1.0).unwrap()
    }

    fn pareto_grid(span: f64, upper: f64) -> GridDistribution {
        let n = (upper / span).round() as usize;
        let lat = Lattice::new(0.0, span, n).unwrap();
        let f = |x: f64| if x > 1.0 { 2.0 * x.powi(-3) } else { 0.0 };
        GridDistribution::from_density(&f, lat, crate::grid::TailHint::right(upper.powi(-2))).unwrap()
    }

    #[test]
    fn split_point_keeps_the_tail_below_the_margin() {
        let lat = Lattice::new(0.0, 0.05, 4000).unwrap();
        let g = GridDistribution::from_density(&|x: f64| if x > 1.0 { 2.0 * x.powi(-3) } else { 0.0 }, lat, TailHint::right(1.0 / 200.0f64.powi(2)))
            .unwrap();
        let lambda = 4.0;
        let c1 = inversion_split_point(&g, lambda).unwrap();
        let bound = INVERSION_MARGIN * std::f64::consts::LN_2 / lambda;
        assert!(lambda * g.tail_prob(c1).unwrap() <= INVERSION_MARGIN * std::f64::consts::LN_2);
        assert!(g.tail_prob(c1 - 0.05).unwrap() > bound);
        // Pareto(2,1): Ḡ(c) = c^{-2}, so c1 is the first boundary above (λ/(0.9 ln 2))^{1/2}.
        let exact = (1.0 / bound).sqrt();
        assert!(c1 >= exact - 1e-9 && c1 < exact + 0.05 + 1e-9);
        assert!(inversion_split_point(&g, 0.1).unwrap() == 0.0);
    }

    #[test]
    fn poisson_of_unit_atom_is_poisson_pmf() {
        let mu = compound_poisson(1.0, &unit_atom(), 1e-12).unwrap();
        let e = (-1.0f64).exp();
        assert!((mu.mass_at(0.0) - e).abs() < 1e-15);
        assert!((mu.mass_at(2.0) - e / 2.0).abs() < 1e-15);
        assert!((mu.mass_at(5.0) - e / 120.0).abs() < 1e-15);
        assert!(mu.right_excess() < 1e-12);
    }

    #[test]
    fn tiny_rate_is_nearly_delta_zero() {
        let g = pareto_grid(0.1, 50.0);
        let mu = compound_poisson(1e-8, &g, 1e-12).unwrap();
        let tv = (1.0 - mu.mass_at(0.0)).abs() + mu.mass().iter().sum::<f64>() - mu.mass_at(0.0) + mu.excess();
        assert!(tv < 2e-8);
    }

    #[test]
    fn poisson_rejects_bad_rate() {
        let g = unit_atom();
        assert!(matches!(compound_poisson(0.0, &g, 1e-9), Err(Error::InvalidArgument(_))));
        assert!(matches!(compound_poisson(-1.0, &g, 1e-9), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn geometric_of_unit_atom() {
        let mu = compound_geometric(0.5, &unit_atom(), 1e-12).unwrap();
        for k in 0..20 {
            assert!((mu.mass_at(k as f64) - 0.5f64.powi(k + 1)).abs() < 1e-15);
        }
        assert!(matches!(compound_geometric(1.0, &unit_atom(), 1e-9), Err(Error::InvalidArgument(_))));
        assert!(matches!(compound_geometric(0.0, &unit_atom(), 1e-9), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn geometric_is_negative_binomial_with_unit_shape() {
        let g = pareto_grid(0.1, 30.0);
        let a = compound_geometric(0.4, &g, 1e-10).unwrap();
        let b = compound_negative_binomial(1.0, 0.4, &g, 1e-10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_binomial_of_unit_atom() {
        let mu = compound_negative_binomial(2.0, 0.5, &unit_atom(), 1e-12).unwrap();
        for k in 0..30 {
            let expect = (k as f64 + 1.0) * 0.25 * 0.5f64.powi(k);
            assert!((mu.mass_at(k as f64) - expect).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn negative_binomial_weights_normalize() {
        let tol = 1e-10;
        let w = SeriesWeights::negative_binomial(2.5, 0.7, tol).unwrap();
        assert!(w.tail < tol);
        assert!((w.weights.iter().sum::<f64>() + w.tail - 1.0).abs() < tol);
        // Large shape stays finite through log-gamma.
        let big = SeriesWeights::negative_binomial(5000.0, 0.5, 1e-9).unwrap();
        assert!((big.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stopped_sum_trivial_cases() {
        let g = pareto_grid(0.1, 20.0);
        let one = randomly_stopped_sum(&[0.0, 1.0], &g, 1e-9).unwrap();
        let same = g.restrict_to(one.lattice()).unwrap();
        for (a, b) in one.mass().iter().zip(same.mass()) {
            assert!((a - b).abs() < 1e-15);
        }
        let zero = randomly_stopped_sum(&[1.0], &g, 1e-9).unwrap();
        assert_eq!(zero.mass_at(0.0), 1.0);
        assert!(matches!(randomly_stopped_sum(&[0.5, 0.6], &g, 1e-9), Err(Error::InvalidWeights(_))));
        assert!(matches!(randomly_stopped_sum(&[-0.1, 1.1], &g, 1e-9), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn stopped_geometric_matches_compound_geometric() {
        let g = pareto_grid(0.1, 20.0);
        let n = 60;
        let pmf: Vec<f64> = (0..n).map(|k| 0.5f64.powi(k + 1)).collect();
        let rest = 1.0 - pmf.iter().sum::<f64>();
        let mut pmf = pmf;
        pmf[n as usize - 1] += rest;
        let geo = compound_geometric(0.5, &g, 1e-15).unwrap();
        let stopped = randomly_stopped_sum(&pmf, &g, 1e-9).unwrap();
        let stopped = stopped.restrict_to(geo.lattice()).unwrap();
        for (a, b) in geo.mass().iter().zip(stopped.mass()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn semigroup_on_a_common_window() {
        let g = pareto_grid(0.1, 20.0);
        let window = Lattice::from_atoms(0.1, 0, 4000).unwrap();
        let a = compound_poisson_on(0.7, &g, 1e-13, &window).unwrap();
        let b = compound_poisson_on(1.3, &g, 1e-13, &window).unwrap();
        let ab = convolve(&a, &b).unwrap().restrict_to(&window).unwrap();
        let c = compound_poisson_on(2.0, &g, 1e-13, &window).unwrap();
        for (x, y) in ab.mass().iter().zip(c.mass()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn two_sided_tail_is_split() {
        let lat = Lattice::from_atoms(1.0, -1, 1).unwrap();
        let g = GridDistribution::new(lat, vec![0.5, 0.0, 0.5], 0.0, 0.0).unwrap();
        let mu = compound_poisson(1.0, &g, 1e-3).unwrap();
        assert!((mu.left_excess() - mu.right_excess()).abs() < 1e-15);
        assert!(mu.ambiguous_mass() > 0.0);
    }

    #[test]
    fn misaligned_jump_rejected() {
        let lat = Lattice::new(0.05, 0.1, 5).unwrap();
        let g = GridDistribution::new(lat, vec![0.2; 5], 0.0, 0.0).unwrap();
        assert!(matches!(compound_poisson(1.0, &g, 1e-9), Err(Error::LatticeMismatch(_))));
    }

    #[test]
    fn default_window_is_capped() {
        let g = pareto_grid(0.05, 100.0);
        let w = default_window(&g, 1000).unwrap();
        assert_eq!(w.len(), MIN_WINDOW_CELLS);
        assert!(w.is_zero_aligned());
        assert_eq!(w.first_atom(), 0);
    }

    #[test]
    fn spec_validation() {
        let g = unit_atom();
        assert!(CompoundSpec::new(CompoundKind::Poisson { lambda: 1.0 }, g.clone(), 1e-2).is_err());
        assert!(CompoundSpec::new(CompoundKind::Geometric { lambda: 1.5 }, g.clone(), 1e-9).is_err());
        let s = CompoundSpec::new(CompoundKind::NegativeBinomial { a: 2.0, lambda: 0.5 }, g.clone(), 1e-12).unwrap();
        let direct = compound_negative_binomial(2.0, 0.5, &g, 1e-12).unwrap();
        assert_eq!(s.build().unwrap(), direct);
    }

    #[test]
    fn inversion_of_poisson_unit_atom() {
        let mu = compound_poisson(0.3, &unit_atom(), 1e-14).unwrap();
        let (mu10, p0) = remove_zero_atom(&mu).unwrap();
        assert!((p0 - (-0.3f64).exp()).abs() < 1e-15);
        let inv = levy_inversion(&mu10, 0.3, 1e-13).unwrap();
        assert!((inv.dist.mass_at(1.0) - 1.0).abs() < 1e-9);
        assert!((inv.renorm_factor - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inversion_round_trip_pareto() {
        let g = pareto_grid(0.1, 50.0);
        let window = Lattice::from_atoms(0.1, 0, 8000).unwrap();
        let mu = compound_poisson_on(0.5, &g, 1e-14, &window).unwrap();
        let (mu10, _) = remove_zero_atom(&mu).unwrap();
        let inv = levy_inversion(&mu10, 0.5, 1e-12).unwrap();
        let g_on = g.restrict_to(inv.dist.lattice()).unwrap();
        let worst = inv.dist.mass().iter().zip(g_on.mass()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "worst cell error {worst}");
        let w = DeltaWindow::new(1.0).unwrap();
        let a = inv.dist.interval_prob(10.0, w).unwrap();
        assert!((a - g.interval_prob(10.0, w).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn inversion_rejects_large_rate() {
        let mu = compound_poisson(0.8, &unit_atom(), 1e-12).unwrap();
        let (mu10, _) = remove_zero_atom(&mu).unwrap();
        assert!(matches!(levy_inversion(&mu10, 0.8, 1e-9), Err(Error::SeriesDivergent(_))));
        assert!(matches!(levy_inversion(&mu10, std::f64::consts::LN_2, 1e-9), Err(Error::SeriesDivergent(_))));
    }

    #[test]
    fn inversion_of_a_non_compound_law_fails() {
        // The second series term puts clearly negative mass on the atom 3.
        let lat = Lattice::from_atoms(1.0, 1, 2).unwrap();
        let mu10 = GridDistribution::new(lat, vec![0.05, 0.95], 0.0, 0.0).unwrap();
        let r = levy_inversion_on(&mu10, 0.6, 1e-9, &Lattice::from_atoms(1.0, 0, 200).unwrap());
        assert!(matches!(r, Err(Error::InversionFailed(_))), "{r:?}");
    }
}
