//! Finite-x testers for local tail classes and ratio limits.
//!
//! Every check returns a [`DiagnosticReport`] holding the full ratio trace,
//! the trend read off it and a three-valued verdict. A flat trace that sits
//! within `rel_tol` of the target passes; one further than `3·rel_tol` away
//! fails; anything in between stays inconclusive.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::conv::{convolve, running_powers};
use crate::error::{Error, Result};
use crate::grid::{GridDistribution, LocalMass};
use crate::lattice::{DeltaWindow, Lattice};

/// Default relative tolerance of ratio checks.
pub const DEFAULT_REL_TOL: f64 = 0.05;
/// Probed mass drawn from excess buckets above this fraction blocks a pass.
pub const CONTAMINATION_LIMIT: f64 = 0.1;
/// Default bound `B` of bounded-ratio mode.
pub const DEFAULT_BOUND: f64 = 100.0;
/// Minimum number of probe points in a schedule.
pub const MIN_PROBES: usize = 8;
/// Minimum number of samples at or above `x0` for the monotonicity scans.
pub const MIN_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Converging,
    Diverging,
    Oscillating,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// At least one probe had a zero denominator and was dropped.
    ProbeDegenerate,
    /// Excess mass makes up a large share of some probed window.
    ExcessContaminated,
    /// The hypothesis of the check did not pass its own diagnostic.
    HypothesisUnverified,
    /// Series residual is an estimate rather than a bound.
    HeuristicResidual,
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Converging => "converging",
            Self::Diverging => "diverging",
            Self::Oscillating => "oscillating",
            Self::Inconclusive => "inconclusive",
        })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pass => "pass",
            Self::Inconclusive => "inconclusive",
            Self::Fail => "fail",
        })
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ProbeDegenerate => "probe_degenerate",
            Self::ExcessContaminated => "excess_contaminated",
            Self::HypothesisUnverified => "hypothesis_unverified",
            Self::HeuristicResidual => "heuristic_residual",
        })
    }
}

/// Probe points `x`, shifts `y`, the window `Δ = (0, c]` and the scan threshold `x0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSchedule {
    x_points: Vec<f64>,
    shifts: Vec<f64>,
    window: DeltaWindow,
    x0: f64,
}

impl ProbeSchedule {
    pub fn new(x_points: Vec<f64>, shifts: Vec<f64>, window: DeltaWindow, x0: f64) -> Result<Self> {
        if x_points.len() < MIN_PROBES {
            return Err(Error::InvalidArgument(format!(
                "a schedule needs at least {MIN_PROBES} probes, got {}",
                x_points.len()
            )));
        }
        if x_points.iter().any(|x| !x.is_finite()) || x_points.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::InvalidArgument("probe points must be finite and strictly increasing".into()));
        }
        if shifts.is_empty() || shifts.iter().any(|y| !(y.is_finite() && *y > 0.0)) {
            return Err(Error::InvalidArgument("shifts must be a nonempty list of positive reals".into()));
        }
        if !x0.is_finite() {
            return Err(Error::InvalidArgument(format!("x0 must be finite, got {x0}")));
        }
        Ok(Self { x_points, shifts, window, x0 })
    }

    /// Probes `x_first, 2·x_first, 4·x_first, ...` up to `x_last`.
    pub fn doubling(x_first: f64, x_last: f64, shifts: Vec<f64>, window: DeltaWindow) -> Result<Self> {
        if !(x_first > 0.0) {
            return Err(Error::InvalidArgument(format!("doubling schedule needs x_first > 0, got {x_first}")));
        }
        let mut xs = Vec::new();
        let mut x = x_first;
        while x <= x_last * (1.0 + 1e-12) {
            xs.push(x);
            x *= 2.0;
        }
        Self::new(xs, shifts, window, x_first)
    }

    /// `n` probes spaced geometrically from `x_first` to `x_last`, each
    /// snapped to the nearest boundary of `lattice`.
    pub fn geometric(
        x_first: f64,
        x_last: f64,
        n: usize,
        lattice: &Lattice,
        shifts: Vec<f64>,
        window: DeltaWindow,
    ) -> Result<Self> {
        if !(x_first > 0.0 && x_last > x_first) || n < 2 {
            return Err(Error::InvalidArgument("geometric schedule needs 0 < x_first < x_last and n >= 2".into()));
        }
        let r = (x_last / x_first).ln() / (n - 1) as f64;
        let mut xs: Vec<f64> = Vec::with_capacity(n);
        for i in 0..n {
            let x = x_first * (r * i as f64).exp();
            let k = ((x - lattice.origin()) / lattice.span()).round() as i64;
            let snapped = lattice.edge(k);
            if xs.last().is_some_and(|&p| snapped <= p) {
                return Err(Error::InvalidArgument(format!(
                    "{n} geometric probes between {x_first} and {x_last} collide on a lattice of span {}",
                    lattice.span()
                )));
            }
            xs.push(snapped);
        }
        Self::new(xs, shifts, window, x_first)
    }

    /// `x_first, x_first + step, ...`, `n` points.
    pub fn linear(x_first: f64, step: f64, n: usize, shifts: Vec<f64>, window: DeltaWindow) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
        }
        let xs = (0..n).map(|i| x_first + step * i as f64).collect();
        Self::new(xs, shifts, window, x_first)
    }

    pub fn x_points(&self) -> &[f64] {
        &self.x_points
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    pub fn window(&self) -> DeltaWindow {
        self.window
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn with_window(&self, window: DeltaWindow) -> Self {
        Self { window, ..self.clone() }
    }

    /// Every window edge the checks will touch lies on a boundary of `lattice`.
    pub fn validate_for(&self, lattice: &Lattice) -> Result<()> {
        let c = self.window.width();
        for &x in &self.x_points {
            lattice.boundary_index(x)?;
            lattice.boundary_index(x + c)?;
            for &y in &self.shifts {
                lattice.boundary_index(x + y)?;
                lattice.boundary_index(x + y + c)?;
            }
        }
        Ok(())
    }
}

/// Outcome of one check: the ratio trace and its reading.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub check: String,
    pub probes: Vec<f64>,
    /// Column parameter: the shift `y`, the power `n`, or 0 for single-column checks.
    pub columns: Vec<f64>,
    /// `ratios[i][j]` for probe `i` and column `j`; NaN marks a dropped probe.
    pub ratios: Vec<Vec<f64>>,
    pub target: Option<f64>,
    pub limit_estimate: f64,
    pub trend: Trend,
    pub verdict: Verdict,
    pub certificate: Option<f64>,
    pub excess_contamination: f64,
    pub dropped_probes: usize,
    pub flags: Vec<Flag>,
    pub companions: Vec<DiagnosticReport>,
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

impl DiagnosticReport {
    /// `probe,shift,ratio` rows, then the summary header and one summary row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "probe,shift,ratio")?;
        for (x, row) in self.probes.iter().zip(&self.ratios) {
            for (y, r) in self.columns.iter().zip(row) {
                writeln!(w, "{},{},{}", fmt_f(*x), fmt_f(*y), fmt_f(*r))?;
            }
        }
        writeln!(w, "check,target,limit_estimate,trend,verdict,certificate,excess_contamination")?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            self.check,
            self.target.map(fmt_f).unwrap_or_default(),
            fmt_f(self.limit_estimate),
            self.trend,
            self.verdict,
            self.certificate.map(fmt_f).unwrap_or_default(),
            fmt_f(self.excess_contamination)
        )?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn has_flag(&self, f: Flag) -> bool {
        self.flags.contains(&f)
    }

    fn flag(&mut self, f: Flag) {
        if !self.flags.contains(&f) {
            self.flags.push(f);
        }
    }
}

/// How a ratio trace is judged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioMode {
    /// The ratio should converge to this value.
    Target(f64),
    /// The ratio should stay within `[1/B, B]` (the `≍` relation).
    Bounded(f64),
}

/// Log-distance of `v` from `target`, saturated for zero or infinite ratios.
fn log_dev(v: f64, target: f64) -> f64 {
    let l = (v / target).ln();
    if l.is_nan() {
        f64::INFINITY
    } else {
        l.abs().min(700.0)
    }
}

fn rel_dev(v: f64, target: f64) -> f64 {
    ((v - target) / target).abs()
}

/// Reads the trend of a per-probe summary sequence.
pub fn classify_trend(values: &[f64], rel_tol: f64) -> Trend {
    let n = values.len();
    if n < 3 {
        return Trend::Inconclusive;
    }
    let last3 = &values[n - 3..];
    let (lo, hi) = last3.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo > 0.0 && hi.is_finite() && hi / lo - 1.0 <= rel_tol {
        return Trend::Converging;
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln().clamp(-700.0, 700.0)).collect();
    let d: Vec<f64> = logs.windows(2).map(|p| p[1] - p[0]).collect();
    let m = d.len();
    let tail = &d[m.saturating_sub(3)..];
    let same_sign = tail.iter().all(|&x| x > 0.0) || tail.iter().all(|&x| x < 0.0);
    if same_sign && tail.len() >= 2 && tail[tail.len() - 1].abs() >= 0.75 * tail[tail.len() - 2].abs() {
        return Trend::Diverging;
    }
    let big: Vec<f64> = d.iter().copied().filter(|x| x.abs() > rel_tol.ln_1p()).collect();
    let sign_changes = big.windows(2).filter(|p| p[0].signum() != p[1].signum()).count();
    if sign_changes >= 2 {
        return Trend::Oscillating;
    }
    Trend::Inconclusive
}

/// Builds a report from a ratio matrix and per-probe contamination.
fn judge(
    check: &str,
    probes: Vec<f64>,
    columns: Vec<f64>,
    ratios: Vec<Vec<f64>>,
    contamination: Vec<f64>,
    mode: RatioMode,
    rel_tol: f64,
) -> DiagnosticReport {
    let reference = match mode {
        RatioMode::Target(t) => t,
        RatioMode::Bounded(_) => 1.0,
    };
    let mut summary = Vec::new();
    let mut dropped = 0;
    let mut worst_contamination: f64 = 0.0;
    for (row, &cont) in ratios.iter().zip(&contamination) {
        if row.iter().any(|r| r.is_nan()) {
            dropped += 1;
            continue;
        }
        worst_contamination = worst_contamination.max(cont);
        let worst = row.iter().copied().fold(reference, |acc, r| {
            if log_dev(r, reference) > log_dev(acc, reference) {
                r
            } else {
                acc
            }
        });
        summary.push(worst);
    }
    let trend = classify_trend(&summary, rel_tol);
    let limit_estimate = summary.last().copied().unwrap_or(f64::NAN);
    let too_few = summary.len() < 3 || 2 * dropped > ratios.len();
    let verdict = if too_few {
        Verdict::Inconclusive
    } else {
        match mode {
            RatioMode::Target(t) => {
                let dev = rel_dev(limit_estimate, t);
                match trend {
                    Trend::Converging if dev <= rel_tol => {
                        if worst_contamination >= CONTAMINATION_LIMIT {
                            Verdict::Inconclusive
                        } else {
                            Verdict::Pass
                        }
                    }
                    Trend::Converging if dev > 3.0 * rel_tol => Verdict::Fail,
                    Trend::Converging => Verdict::Inconclusive,
                    Trend::Diverging | Trend::Oscillating => Verdict::Fail,
                    Trend::Inconclusive => Verdict::Inconclusive,
                }
            }
            RatioMode::Bounded(b) => {
                let third = &summary[summary.len() - summary.len().div_ceil(3)..];
                let inside = third.iter().all(|&v| v >= 1.0 / b && v <= b);
                if !inside {
                    Verdict::Fail
                } else if trend == Trend::Diverging {
                    Verdict::Inconclusive
                } else if worst_contamination >= CONTAMINATION_LIMIT {
                    Verdict::Inconclusive
                } else {
                    Verdict::Pass
                }
            }
        }
    };
    let mut report = DiagnosticReport {
        check: check.to_string(),
        probes,
        columns,
        ratios,
        target: match mode {
            RatioMode::Target(t) => Some(t),
            RatioMode::Bounded(_) => None,
        },
        limit_estimate,
        trend,
        verdict,
        certificate: match mode {
            RatioMode::Bounded(b) => Some(b),
            RatioMode::Target(_) => None,
        },
        excess_contamination: worst_contamination,
        dropped_probes: dropped,
        flags: Vec::new(),
        companions: Vec::new(),
    };
    if dropped > 0 {
        report.flag(Flag::ProbeDegenerate);
    }
    if worst_contamination >= CONTAMINATION_LIMIT {
        report.flag(Flag::ExcessContaminated);
    }
    report
}

fn check_rel_tol(rel_tol: f64) -> Result<()> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidArgument(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    Ok(())
}

/// `(ratio, contamination)` of two window masses; NaN ratio for a zero denominator.
fn window_ratio(num: (f64, f64), den: (f64, f64)) -> (f64, f64) {
    let (n, d) = (num.0 + num.1, den.0 + den.1);
    let total = n + d;
    let cont = if total > 0.0 { (num.1 + den.1) / total } else { 0.0 };
    if !(d > 0.0) {
        (f64::NAN, cont)
    } else {
        (n / d, cont)
    }
}

/// `L_Δ`: ratios `F(x+y+Δ)/F(x+Δ)` for every probe and shift, target 1.
pub fn check_long_tailed_delta(f: &dyn LocalMass, sched: &ProbeSchedule, rel_tol: f64) -> Result<DiagnosticReport> {
    check_rel_tol(rel_tol)?;
    sched.validate_for(f.lattice())?;
    let w = sched.window;
    let mut ratios = Vec::new();
    let mut cont = Vec::new();
    for &x in &sched.x_points {
        let den = f.window_parts(x, w)?;
        let mut row = Vec::new();
        let mut worst: f64 = 0.0;
        for &y in &sched.shifts {
            let (r, c) = window_ratio(f.window_parts(x + y, w)?, den);
            row.push(r);
            worst = worst.max(c);
        }
        ratios.push(row);
        cont.push(worst);
    }
    Ok(judge(
        "long_tailed_delta",
        sched.x_points.clone(),
        sched.shifts.clone(),
        ratios,
        cont,
        RatioMode::Target(1.0),
        rel_tol,
    ))
}

fn subexp_with_square(
    f: &GridDistribution,
    f2: &GridDistribution,
    sched: &ProbeSchedule,
    rel_tol: f64,
) -> Result<DiagnosticReport> {
    sched.validate_for(f.lattice())?;
    sched.validate_for(f2.lattice())?;
    let w = sched.window;
    let mut ratios = Vec::new();
    let mut cont = Vec::new();
    for &x in &sched.x_points {
        let (r, c) = window_ratio(f2.interval_parts(x, w)?, f.interval_parts(x, w)?);
        ratios.push(vec![r]);
        cont.push(c);
    }
    let mut report = judge("subexp_delta", sched.x_points.clone(), vec![0.0], ratios, cont, RatioMode::Target(2.0), rel_tol);
    let lt = check_long_tailed_delta(f, sched, rel_tol)?;
    report.verdict = combine(report.verdict, lt.verdict);
    report.companions.push(lt);
    Ok(report)
}

/// Both must pass for a pass; any fail is a fail.
fn combine(a: Verdict, b: Verdict) -> Verdict {
    a.max(b)
}

/// `S_Δ`: ratios `F^{*2}(x+Δ)/F(x+Δ)`, target 2, with the `L_Δ` report as
/// companion. The verdict passes only when both parts pass.
pub fn check_subexp_delta(f: &GridDistribution, sched: &ProbeSchedule, rel_tol: f64) -> Result<DiagnosticReport> {
    check_rel_tol(rel_tol)?;
    let f2 = convolve(f, f)?;
    subexp_with_square(f, &f2, sched, rel_tol)
}

/// `S_Δ` for each window width in `c_list`.
pub fn check_locally_subexp(
    f: &GridDistribution,
    c_list: &[f64],
    sched_template: &ProbeSchedule,
    rel_tol: f64,
) -> Result<Vec<DiagnosticReport>> {
    check_rel_tol(rel_tol)?;
    if c_list.is_empty() {
        return Err(Error::InvalidArgument("window list is empty".into()));
    }
    let f2 = convolve(f, f)?;
    c_list
        .iter()
        .map(|&c| {
            let sched = sched_template.with_window(DeltaWindow::new(c)?);
            let mut r = subexp_with_square(f, &f2, &sched, rel_tol)?;
            r.check = format!("subexp_delta_c{c}");
            Ok(r)
        })
        .collect()
}

/// Pass iff all pass; fail if any fails.
pub fn aggregate_verdicts(reports: &[DiagnosticReport]) -> Verdict {
    reports.iter().map(|r| r.verdict).max().unwrap_or(Verdict::Inconclusive)
}

fn scan_samples(samples: &[(f64, f64)], x0: f64) -> Result<Vec<(f64, f64)>> {
    if samples.windows(2).any(|p| !(p[1].0 > p[0].0)) {
        return Err(Error::InvalidArgument("sample abscissae must be strictly increasing".into()));
    }
    let above: Vec<(f64, f64)> = samples.iter().copied().filter(|(x, _)| *x >= x0).collect();
    if above.len() < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples at or above x0 = {x0}, got {}",
            above.len()
        )));
    }
    if let Some((x, a)) = above.iter().find(|(_, a)| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidFunction(format!("sample value {a} at x = {x} is not positive")));
    }
    Ok(above)
}

const ANI_BLOCKS: usize = 8;

/// Asymptotically non-increasing: both `sup_{t>=x} α(t)/α(x)` and
/// `α(x)/inf_{x0<=t<=x} α(t)` tend to 1. The suffix supremum is only read
/// over the first two thirds of the samples, where it still sees a long
/// stretch of future values; the trace is summarized by block maxima.
pub fn check_ani(samples: &[(f64, f64)], x0: f64, rel_tol: f64) -> Result<DiagnosticReport> {
    check_rel_tol(rel_tol)?;
    let s = scan_samples(samples, x0)?;
    let n = s.len();
    let mut suffix = vec![0.0; n];
    let mut run = f64::NEG_INFINITY;
    for i in (0..n).rev() {
        run = run.max(s[i].1);
        suffix[i] = run;
    }
    let mut prefix = vec![0.0; n];
    let mut run = f64::INFINITY;
    for i in 0..n {
        run = run.min(s[i].1);
        prefix[i] = run;
    }
    let used = (2 * n).div_ceil(3);
    let block = used.div_ceil(ANI_BLOCKS);
    let mut probes = Vec::new();
    let mut ratios = Vec::new();
    for start in (0..used).step_by(block) {
        let end = (start + block).min(used);
        let (mut up, mut down): (f64, f64) = (1.0, 1.0);
        for i in start..end {
            up = up.max(suffix[i] / s[i].1);
            down = down.max(s[i].1 / prefix[i]);
        }
        probes.push(s[end - 1].0);
        ratios.push(vec![up, down]);
    }
    let cont = vec![0.0; probes.len()];
    // Column 1: suffix-sup ratio; column 2: prefix-inf ratio.
    Ok(judge("ani", probes, vec![1.0, 2.0], ratios, cont, RatioMode::Target(1.0), rel_tol))
}

/// `K̂` over samples `[..m]`: the largest `α(x')/α(x)` with `x <= x'`.
fn ald_constant(s: &[(f64, f64)], m: usize) -> f64 {
    let mut k: f64 = 1.0;
    let mut run = f64::NEG_INFINITY;
    for i in (0..m).rev() {
        run = run.max(s[i].1);
        k = k.max(run / s[i].1);
    }
    k
}

/// Almost decreasing: the certificate `K̂ = max_{x<=x'} α(x')/α(x)` must
/// stabilize. Passes when `K̂` over the first half already reaches 90% of
/// `K̂` over all samples; fails when `K̂` keeps growing across thirds.
pub fn check_ald(samples: &[(f64, f64)], x0: f64) -> Result<DiagnosticReport> {
    let s = scan_samples(samples, x0)?;
    let n = s.len();
    let k_half = ald_constant(&s, n / 2);
    let thirds = [n / 3, (2 * n) / 3, n];
    let k_thirds: Vec<f64> = thirds.iter().map(|&m| ald_constant(&s, m)).collect();
    let k_all = k_thirds[2];
    let growing = k_thirds[1] > 1.1 * k_thirds[0] && k_all > 1.1 * k_thirds[1];
    let (trend, verdict) = if k_half >= 0.9 * k_all {
        (Trend::Converging, Verdict::Pass)
    } else if growing {
        (Trend::Diverging, Verdict::Fail)
    } else {
        (Trend::Inconclusive, Verdict::Inconclusive)
    };
    Ok(DiagnosticReport {
        check: "ald".into(),
        probes: thirds.iter().map(|&m| s[m - 1].0).collect(),
        columns: vec![0.0],
        ratios: k_thirds.iter().map(|&k| vec![k]).collect(),
        target: None,
        limit_estimate: k_all,
        trend,
        verdict,
        certificate: Some(k_all),
        excess_contamination: 0.0,
        dropped_probes: 0,
        flags: Vec::new(),
        companions: Vec::new(),
    })
}

/// Samples `α(x) = F(x+Δ)` at `x0, x0 + step, ...` up to `x_last`.
pub fn sample_window_function(
    f: &dyn LocalMass,
    x0: f64,
    x_last: f64,
    step: f64,
    w: DeltaWindow,
) -> Result<Vec<(f64, f64)>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let n = ((x_last - x0) / step + 1e-9).floor() as usize + 1;
    (0..n)
        .map(|i| {
            let x = x0 + step * i as f64;
            let (g, e) = f.window_parts(x, w)?;
            Ok((x, g + e))
        })
        .collect()
}

/// `num(x+Δ)/den(x+Δ)` judged against a target or for boundedness.
pub fn check_asymptotic_ratio(
    num: &dyn LocalMass,
    den: &dyn LocalMass,
    mode: RatioMode,
    sched: &ProbeSchedule,
    rel_tol: f64,
) -> Result<DiagnosticReport> {
    check_rel_tol(rel_tol)?;
    match mode {
        RatioMode::Target(t) if !(t > 0.0 && t.is_finite()) => {
            return Err(Error::InvalidArgument(format!("target must be positive and finite, got {t}")))
        }
        RatioMode::Bounded(b) if !(b > 1.0) => {
            return Err(Error::InvalidArgument(format!("bound must exceed 1, got {b}")))
        }
        _ => {}
    }
    let w = sched.window;
    for &x in &sched.x_points {
        for lat in [num.lattice(), den.lattice()] {
            lat.boundary_index(x)?;
            lat.boundary_index(x + w.width())?;
        }
    }
    let mut ratios = Vec::new();
    let mut cont = Vec::new();
    for &x in &sched.x_points {
        let (r, c) = window_ratio(num.window_parts(x, w)?, den.window_parts(x, w)?);
        ratios.push(vec![r]);
        cont.push(c);
    }
    let check = match mode {
        RatioMode::Target(_) => "asymptotic_ratio",
        RatioMode::Bounded(_) => "bounded_ratio",
    };
    Ok(judge(check, sched.x_points.clone(), vec![0.0], ratios, cont, mode, rel_tol))
}

/// Kesten constant `ĉ(ε) = max_{x, n<=n_max} F^{*n}(x+Δ)/((1+ε)^n F(x+Δ))`.
/// Passes when the maximizing `n` is at most `n_max/2`; fails when it sits
/// at `n_max` after growing over the last three powers. The `S_Δ` report of
/// `F` is attached, and a non-passing one raises `HypothesisUnverified`.
pub fn kesten_certificate(
    f: &GridDistribution,
    sched: &ProbeSchedule,
    eps: f64,
    n_max: usize,
    rel_tol: f64,
) -> Result<DiagnosticReport> {
    check_rel_tol(rel_tol)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("ε must be positive, got {eps}")));
    }
    if n_max < 2 {
        return Err(Error::InvalidArgument(format!("n_max must be at least 2, got {n_max}")));
    }
    if !f.lattice().is_zero_aligned() {
        return Err(Error::LatticeMismatch("Kesten scan needs a lattice with 0 as a cell boundary".into()));
    }
    sched.validate_for(f.lattice())?;
    let span = f.lattice().span();
    let c = sched.window.width();
    let x_hi = sched.x_points.last().copied().expect("schedule is nonempty") + c;
    let e_first = f.trimmed().lattice().first_atom();
    let e_lo = (n_max as i64 * e_first).min(0);
    let e_hi = (x_hi / span).round() as i64 + 1;
    let window = Lattice::from_atoms(span, e_lo, e_hi.max(e_lo))?;
    let powers = running_powers(f, n_max, &window)?;

    let w = sched.window;
    let mut ratios = Vec::new();
    let mut cont = Vec::new();
    for &x in &sched.x_points {
        let den = f.interval_parts(x, w)?;
        let mut row = Vec::with_capacity(n_max);
        let mut worst: f64 = 0.0;
        for (i, p) in powers.iter().enumerate() {
            let (r, cc) = window_ratio(p.interval_parts(x, w)?, den);
            row.push(r / (1.0 + eps).powi(i as i32 + 1));
            worst = worst.max(cc);
        }
        ratios.push(row);
        cont.push(worst);
    }

    let valid: Vec<&Vec<f64>> = ratios.iter().filter(|r| !r.iter().any(|v| v.is_nan())).collect();
    let dropped = ratios.len() - valid.len();
    // Column maxima over probes, per power n.
    let col_max: Vec<f64> = (0..n_max).map(|j| valid.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let (arg, c_hat) = col_max
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let n_star = arg + 1;
    let grew = n_max >= 3 && col_max[n_max - 1] > col_max[n_max - 2] && col_max[n_max - 2] > col_max[n_max - 3];
    let (trend, verdict) = if valid.len() < 3 || 2 * dropped > ratios.len() {
        (Trend::Inconclusive, Verdict::Inconclusive)
    } else if n_star <= n_max / 2 {
        (Trend::Converging, Verdict::Pass)
    } else if n_star == n_max && grew {
        (Trend::Diverging, Verdict::Fail)
    } else {
        (Trend::Inconclusive, Verdict::Inconclusive)
    };
    let worst_cont = cont.iter().copied().fold(0.0, f64::max);
    let mut report = DiagnosticReport {
        check: "kesten".into(),
        probes: sched.x_points.clone(),
        columns: (1..=n_max).map(|n| n as f64).collect(),
        ratios,
        target: None,
        limit_estimate: n_star as f64,
        trend,
        verdict,
        certificate: if c_hat.is_finite() { Some(c_hat) } else { None },
        excess_contamination: worst_cont,
        dropped_probes: dropped,
        flags: Vec::new(),
        companions: Vec::new(),
    };
    if dropped > 0 {
        report.flag(Flag::ProbeDegenerate);
    }
    let hyp = check_subexp_delta(f, sched, rel_tol)?;
    if hyp.verdict != Verdict::Pass {
        report.flag(Flag::HypothesisUnverified);
    }
    report.companions.push(hyp);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compound::compound_poisson;
    use crate::families::{Family, FamilySpec};
    use crate::grid::GridMeasure;

    fn w(c: f64) -> DeltaWindow {
        DeltaWindow::new(c).unwrap()
    }

    fn pareto() -> GridDistribution {
        FamilySpec::new(Family::Pareto { alpha: 2.0, x_m: 1.0 }, Lattice::new(0.0, 0.05, 42_000).unwrap())
            .unwrap()
            .instantiate()
            .unwrap()
    }

    fn exponential() -> GridDistribution {
        FamilySpec::new(Family::Exponential { rate: 1.0 }, Lattice::new(0.0, 0.05, 2_000).unwrap())
            .unwrap()
            .instantiate()
            .unwrap()
    }

    fn doubling() -> ProbeSchedule {
        ProbeSchedule::doubling(8.0, 1024.0, vec![1.0, 2.0], w(1.0)).unwrap()
    }

    fn linear() -> ProbeSchedule {
        ProbeSchedule::linear(2.0, 2.0, 12, vec![1.0], w(1.0)).unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert!(ProbeSchedule::new(vec![1.0, 2.0], vec![1.0], w(1.0), 0.0).is_err());
        assert!(ProbeSchedule::new((0..8).map(|i| 8.0 - i as f64).collect(), vec![1.0], w(1.0), 0.0).is_err());
        assert!(ProbeSchedule::new((0..8).map(|i| i as f64).collect(), vec![-1.0], w(1.0), 0.0).is_err());
        let s = doubling();
        assert_eq!(s.x_points().len(), 8);
        let lat = Lattice::new(0.0, 0.3, 100).unwrap();
        assert!(matches!(s.validate_for(&lat), Err(Error::MisalignedWindow { .. })));
        let g = ProbeSchedule::geometric(8.0, 1024.0, 16, &Lattice::new(0.0, 0.05, 10).unwrap(), vec![1.0], w(1.0)).unwrap();
        assert_eq!(g.x_points().len(), 16);
        assert!(g.validate_for(&Lattice::new(0.0, 0.05, 10).unwrap()).is_ok());
    }

    #[test]
    fn pareto_is_long_tailed() {
        let r = check_long_tailed_delta(&pareto(), &doubling(), DEFAULT_REL_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        assert!((r.limit_estimate - 1.0).abs() < 0.02);
        assert_eq!(r.trend, Trend::Converging);
    }

    #[test]
    fn exponential_is_not_long_tailed() {
        let r = check_long_tailed_delta(&exponential(), &linear(), DEFAULT_REL_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!((r.limit_estimate - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn point_mass_is_degenerate() {
        let d = GridDistribution::point_on(Lattice::new(0.0, 1.0, 2000).unwrap(), 5.0).unwrap();
        let r = check_long_tailed_delta(&d, &doubling(), DEFAULT_REL_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(r.has_flag(Flag::ProbeDegenerate));
        assert_eq!(r.dropped_probes, 8);
    }

    #[test]
    fn pareto_is_subexponential() {
        let r = check_subexp_delta(&pareto(), &doubling(), DEFAULT_REL_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.ratios);
        assert!((r.limit_estimate - 2.0).abs() < 0.1);
        assert_eq!(r.companions.len(), 1);
    }

    #[test]
    fn exponential_and_poisson_are_not_subexponential() {
        let r = check_subexp_delta(&exponential(), &linear(), DEFAULT_REL_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.trend, Trend::Diverging);
        let poisson = compound_poisson(1.0, &GridDistribution::point_mass(1.0, 1.0).unwrap(), 1e-12).unwrap();
        let sched = ProbeSchedule::linear(1.0, 1.0, 10, vec![1.0], w(1.0)).unwrap();
        let r = check_subexp_delta(&poisson, &sched, DEFAULT_REL_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        // Poisson(2)/Poisson(1) pmf ratio at k is 2^k e^{-1}.
        let expect = 2f64.powi(11) * (-1.0f64).exp();
        assert!((r.limit_estimate / expect - 1.0).abs() < 1e-9);
    }

    #[test]
    fn locally_subexponential_windows() {
        let p = pareto();
        let reps = check_locally_subexp(&p, &[0.5, 1.0, 2.0], &doubling(), DEFAULT_REL_TOL).unwrap();
        assert_eq!(reps.len(), 3);
        assert_eq!(aggregate_verdicts(&reps), Verdict::Pass);
        assert!(matches!(check_locally_subexp(&p, &[], &doubling(), 0.05), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn aggregation_rule() {
        let mut a = check_long_tailed_delta(&pareto(), &doubling(), 0.05).unwrap();
        let mut b = a.clone();
        a.verdict = Verdict::Fail;
        b.verdict = Verdict::Pass;
        assert_eq!(aggregate_verdicts(&[a.clone(), b.clone()]), Verdict::Fail);
        a.verdict = Verdict::Inconclusive;
        assert_eq!(aggregate_verdicts(&[a, b]), Verdict::Inconclusive);
    }

    fn samples(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        (0..600).map(|i| 10.0 + 0.5 * i as f64).map(|x| (x, f(x))).collect()
    }

    #[test]
    fn ani_cases() {
        let r = check_ani(&samples(|x| x.powi(-2)), 10.0, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.limit_estimate, 1.0);
        let r = check_ani(&samples(|x| x.powi(-2) * (2.0 + x.sin())), 10.0, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        let r = check_ani(&samples(|x| x.powi(-2) * (1.0 + 1.0 / x)), 10.0, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(matches!(check_ani(&samples(|_| 0.0), 10.0, 0.05), Err(Error::InvalidFunction(_))));
        assert!(matches!(check_ani(&samples(|x| 1.0 / x)[..20], 10.0, 0.05), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn ald_cases() {
        let r = check_ald(&samples(|x| x.powi(-2)), 10.0).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.certificate, Some(1.0));
        let r = check_ald(&samples(|x| x.powi(-2) * (2.0 + x.sin())), 10.0).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        let k = r.certificate.unwrap();
        assert!(k > 2.5 && k <= 3.0, "K = {k}");
        let spiky: Vec<(f64, f64)> = (2..400)
            .map(|i| {
                let k = (i / 2) as f64;
                let v = if i % 2 == 0 { 0.5f64.powf(k) } else { k * 0.5f64.powf(k) };
                (i as f64, v)
            })
            .collect();
        let r = check_ald(&spiky, 2.0).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn ratio_modes() {
        let p = pareto();
        let mu = compound_poisson(2.0, &p, 1e-12).unwrap();
        let far = ProbeSchedule::doubling(16.0, 2048.0, vec![1.0], w(1.0)).unwrap();
        let r = check_asymptotic_ratio(&mu, &p, RatioMode::Target(2.0), &far, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.ratios);
        let same = check_asymptotic_ratio(&p, &p, RatioMode::Target(1.0), &doubling(), 0.05).unwrap();
        assert_eq!(same.limit_estimate, 1.0);
        assert_eq!(same.verdict, Verdict::Pass);
        let e = FamilySpec::new(Family::Exponential { rate: 1.0 }, *p.lattice()).unwrap().instantiate().unwrap();
        let sched = ProbeSchedule::linear(2.0, 2.0, 12, vec![1.0], w(1.0)).unwrap();
        let r = check_asymptotic_ratio(&e, &p, RatioMode::Target(1.0), &sched, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        let b = check_asymptotic_ratio(&mu, &p, RatioMode::Bounded(DEFAULT_BOUND), &doubling(), 0.05).unwrap();
        assert_eq!(b.verdict, Verdict::Pass);
        let r = check_asymptotic_ratio(&e, &p, RatioMode::Bounded(DEFAULT_BOUND), &sched, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn measures_and_distributions_mix() {
        let p = pareto();
        let nu = GridMeasure::from_distribution(&p, 3.0).unwrap();
        let r = check_asymptotic_ratio(&nu, &p, RatioMode::Target(3.0), &doubling(), 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!((r.limit_estimate - 3.0).abs() < 1e-12);
    }

    #[test]
    fn kesten_cases() {
        let p = pareto();
        let r = kesten_certificate(&p, &doubling(), 0.5, 20, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "n* = {}", r.limit_estimate);
        assert!(r.certificate.unwrap().is_finite());
        assert!(r.limit_estimate <= 10.0);
        assert!(!r.has_flag(Flag::HypothesisUnverified));
        let e = exponential();
        let r = kesten_certificate(&e, &linear(), 0.5, 20, 0.05).unwrap();
        assert!(r.has_flag(Flag::HypothesisUnverified));
        assert!(matches!(kesten_certificate(&p, &doubling(), 0.5, 1, 0.05), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn report_csv_layout() {
        let r = check_long_tailed_delta(&pareto(), &doubling(), 0.05).unwrap();
        let text = r.to_csv_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "probe,shift,ratio");
        assert_eq!(lines.len(), 1 + 16 + 2);
        assert_eq!(lines[17], "check,target,limit_estimate,trend,verdict,certificate,excess_contamination");
        assert!(lines[18].starts_with("long_tailed_delta,1.0000000000000000e0,"));
        assert!(lines[18].contains(",converging,pass,,"));
    }

    #[test]
    fn trend_classes() {
        assert_eq!(classify_trend(&[1.0, 1.5, 1.01, 1.0, 1.0], 0.05), Trend::Converging);
        assert_eq!(classify_trend(&[1.0, 2.0, 4.0, 8.0, 16.0], 0.05), Trend::Diverging);
        assert_eq!(classify_trend(&[1.0, 2.0, 1.0, 2.0, 1.0], 0.05), Trend::Oscillating);
        assert_eq!(classify_trend(&[1.0, 2.0], 0.05), Trend::Inconclusive);
    }
}
