//! Batch experiment runner behind the `tailgrid` binary.
//!
//! A run reads one config (JSON, or TOML for files ending in `.toml`),
//! validates it completely before any numerical work, runs the requested
//! checks and writes CSV files into the output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error as ThisError;

use crate::compound::{
    compound_negative_binomial, compound_poisson, CompoundKind, CompoundSpec, SeriesWeights,
};
use crate::diagnostics::{
    aggregate_verdicts, check_ald, check_ani, check_asymptotic_ratio, check_locally_subexp,
    check_long_tailed_delta, check_subexp_delta, kesten_certificate, sample_window_function, DiagnosticReport,
    ProbeSchedule, RatioMode, Trend, Verdict, DEFAULT_REL_TOL,
};
use crate::error::Error;
use crate::families::{FamilySpec, GridSpec};
use crate::grid::GridDistribution;
use crate::lattice::{DeltaWindow, Lattice};
use crate::levy::{id_decomposition, normalized_tail_measure, LevyTriplet, TripletDoc};
use crate::random_walk::{
    ladder_decompose, mc_supremum, stopped_sum_ratio_check, supremum_distribution, GridSampler,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_RUNTIME: i32 = 70;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("check `{check}` failed: {source}")]
    Runtime { check: String, source: Error },
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_USAGE,
            Self::Runtime { .. } | Self::Output(_) => EXIT_RUNTIME,
        }
    }
}

fn field(name: &str) -> impl FnOnce(Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{name}: {e}"))
}

fn runtime(check: &str) -> impl FnOnce(Error) -> CliError + '_ {
    move |e| CliError::Runtime { check: check.to_string(), source: e }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Doubling,
    Geometric,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_x_first")]
    pub x_first: f64,
    #[serde(default = "default_x_last")]
    pub x_last: f64,
    #[serde(default)]
    pub spacing: Spacing,
    /// Probe count for geometric and linear spacing.
    #[serde(default)]
    pub probes: Option<usize>,
    #[serde(default = "default_shifts")]
    pub shifts: Vec<f64>,
    /// Width `c` of the window `Δ = (0, c]`.
    #[serde(default = "default_window")]
    pub window: f64,
    /// Start of the monotonicity scans; defaults to `x_first`.
    #[serde(default)]
    pub x0: Option<f64>,
}

fn default_x_first() -> f64 {
    8.0
}
fn default_x_last() -> f64 {
    1024.0
}
fn default_shifts() -> Vec<f64> {
    vec![1.0]
}
fn default_window() -> f64 {
    1.0
}
fn default_rel_tol() -> f64 {
    DEFAULT_REL_TOL
}
fn default_series_tol() -> f64 {
    1e-10
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_checks() -> Vec<CheckKind> {
    vec![CheckKind::LongTailed, CheckKind::Subexp]
}
fn default_ladder_terms() -> usize {
    5000
}
fn default_drift_margin() -> f64 {
    0.01
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            x_first: default_x_first(),
            x_last: default_x_last(),
            spacing: Spacing::Doubling,
            probes: None,
            shifts: default_shifts(),
            window: default_window(),
            x0: None,
        }
    }
}

impl ScheduleConfig {
    fn build(&self, lattice: &Lattice, probes: Option<usize>) -> crate::error::Result<ProbeSchedule> {
        let w = DeltaWindow::new(self.window)?;
        let n = probes.or(self.probes);
        let mut sched = match (self.spacing, n) {
            (Spacing::Doubling, None) => ProbeSchedule::doubling(self.x_first, self.x_last, self.shifts.clone(), w)?,
            (Spacing::Doubling | Spacing::Geometric, Some(n)) => {
                ProbeSchedule::geometric(self.x_first, self.x_last, n, lattice, self.shifts.clone(), w)?
            }
            (Spacing::Linear, Some(n)) if n >= 2 => {
                let step = (self.x_last - self.x_first) / (n - 1) as f64;
                ProbeSchedule::linear(self.x_first, step, n, self.shifts.clone(), w)?
            }
            (_, _) => return Err(Error::InvalidArgument("geometric and linear spacing need `probes` >= 2".into())),
        };
        if let Some(x0) = self.x0 {
            sched = ProbeSchedule::new(sched.x_points().to_vec(), sched.shifts().to_vec(), w, x0)?;
        }
        sched.validate_for(lattice)?;
        Ok(sched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    LongTailed,
    Subexp,
    Ani,
    Ald,
    Local,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Diagnose {
        distribution: FamilySpec,
        #[serde(default = "default_checks")]
        checks: Vec<CheckKind>,
        #[serde(default)]
        c_list: Vec<f64>,
    },
    CpTheorem {
        jump: FamilySpec,
        lambda: f64,
    },
    IdTheorem {
        triplet: TripletDoc,
        grid: GridSpec,
    },
    LocalTheorem {
        distribution: FamilySpec,
        c_list: Vec<f64>,
    },
    NbTheorem {
        jump: FamilySpec,
        a: f64,
        lambda: f64,
    },
    Ruin {
        step: FamilySpec,
        #[serde(default = "default_ladder_terms")]
        n_max: usize,
        #[serde(default)]
        mc_paths: usize,
        #[serde(default = "default_drift_margin")]
        drift_margin: f64,
    },
    StoppedSum {
        distribution: FamilySpec,
        tau_pmf: Vec<f64>,
    },
    Kesten {
        distribution: FamilySpec,
        eps: f64,
        n_max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_series_tol")]
    pub series_tol: f64,
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self, CliError> {
        serde_json::from_str(s).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_json_str(&text),
        };
        parsed.map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Command-line overrides of config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub probes: Option<usize>,
}

/// Validated experiment with every input law already tabulated.
enum Plan {
    Diagnose { f: GridDistribution, checks: Vec<CheckKind>, c_list: Vec<f64> },
    Cp { g: GridDistribution, lambda: f64 },
    Id { triplet: LevyTriplet, grid: Lattice },
    Local { f: GridDistribution, c_list: Vec<f64> },
    Nb { g: GridDistribution, a: f64, lambda: f64 },
    Ruin { g: GridDistribution, n_max: usize, mc_paths: usize, drift_margin: f64 },
    Stopped { f: GridDistribution, tau_pmf: Vec<f64> },
    Kesten { f: GridDistribution, eps: f64, n_max: usize },
}

struct Prepared {
    plan: Plan,
    sched: ProbeSchedule,
    rel_tol: f64,
    series_tol: f64,
    seed: u64,
    output_dir: PathBuf,
}

fn instantiate(spec: &FamilySpec, name: &str) -> Result<GridDistribution, CliError> {
    let lat = spec.grid.lattice().map_err(field(name))?;
    FamilySpec::new(spec.family.clone(), lat).and_then(|s| s.instantiate()).map_err(field(name))
}

fn check_c_list(c_list: &[f64], name: &str) -> Result<(), CliError> {
    if c_list.is_empty() {
        return Err(CliError::Config(format!("{name}: window list is empty")));
    }
    for &c in c_list {
        DeltaWindow::new(c).map_err(field(name))?;
    }
    Ok(())
}

fn prepare(cfg: &ExperimentConfig, base_dir: &Path, ov: &Overrides) -> Result<Prepared, CliError> {
    if !(cfg.rel_tol > 0.0 && cfg.rel_tol < 1.0) {
        return Err(CliError::Config(format!("rel_tol: must lie in (0, 1), got {}", cfg.rel_tol)));
    }
    if !(cfg.series_tol > 0.0 && cfg.series_tol <= 1e-3) {
        return Err(CliError::Config(format!("series_tol: must lie in (0, 1e-3], got {}", cfg.series_tol)));
    }
    let plan = match &cfg.experiment {
        Experiment::Diagnose { distribution, checks, c_list } => {
            if checks.contains(&CheckKind::Local) {
                check_c_list(c_list, "experiment.c_list")?;
            }
            Plan::Diagnose {
                f: instantiate(distribution, "experiment.distribution")?,
                checks: checks.clone(),
                c_list: c_list.clone(),
            }
        }
        Experiment::CpTheorem { jump, lambda } => {
            let g = instantiate(jump, "experiment.jump")?;
            CompoundSpec::new(CompoundKind::Poisson { lambda: *lambda }, g.clone(), cfg.series_tol)
                .map_err(field("experiment.lambda"))?;
            Plan::Cp { g, lambda: *lambda }
        }
        Experiment::IdTheorem { triplet, grid } => Plan::Id {
            triplet: triplet.resolve(base_dir).map_err(field("experiment.triplet"))?,
            grid: grid.lattice().map_err(field("experiment.grid"))?,
        },
        Experiment::LocalTheorem { distribution, c_list } => {
            check_c_list(c_list, "experiment.c_list")?;
            Plan::Local { f: instantiate(distribution, "experiment.distribution")?, c_list: c_list.clone() }
        }
        Experiment::NbTheorem { jump, a, lambda } => {
            let g = instantiate(jump, "experiment.jump")?;
            CompoundSpec::new(CompoundKind::NegativeBinomial { a: *a, lambda: *lambda }, g.clone(), cfg.series_tol)
                .map_err(field("experiment"))?;
            Plan::Nb { g, a: *a, lambda: *lambda }
        }
        Experiment::Ruin { step, n_max, mc_paths, drift_margin } => {
            let g = instantiate(step, "experiment.step")?;
            if *n_max < 10 {
                return Err(CliError::Config(format!("experiment.n_max: must be at least 10, got {n_max}")));
            }
            if !(*drift_margin > 0.0 && drift_margin.is_finite()) {
                return Err(CliError::Config(format!("experiment.drift_margin: must be positive, got {drift_margin}")));
            }
            let mean = g.mean_with_edges();
            if !(mean < 0.0) {
                return Err(CliError::Config(format!("experiment.step: {}", Error::NoNegativeDrift { mean })));
            }
            Plan::Ruin { g, n_max: *n_max, mc_paths: *mc_paths, drift_margin: *drift_margin }
        }
        Experiment::StoppedSum { distribution, tau_pmf } => {
            SeriesWeights::from_pmf(tau_pmf).map_err(field("experiment.tau_pmf"))?;
            if tau_pmf.iter().skip(1).all(|&p| p == 0.0) {
                return Err(CliError::Config("experiment.tau_pmf: τ must put mass on positive values".into()));
            }
            Plan::Stopped { f: instantiate(distribution, "experiment.distribution")?, tau_pmf: tau_pmf.clone() }
        }
        Experiment::Kesten { distribution, eps, n_max } => {
            if !(*eps > 0.0 && eps.is_finite()) {
                return Err(CliError::Config(format!("experiment.eps: must be positive, got {eps}")));
            }
            if *n_max < 2 {
                return Err(CliError::Config(format!("experiment.n_max: must be at least 2, got {n_max}")));
            }
            Plan::Kesten { f: instantiate(distribution, "experiment.distribution")?, eps: *eps, n_max: *n_max }
        }
    };
    let lattice = match &plan {
        Plan::Diagnose { f, .. }
        | Plan::Local { f, .. }
        | Plan::Stopped { f, .. }
        | Plan::Kesten { f, .. } => *f.lattice(),
        Plan::Cp { g, .. } | Plan::Nb { g, .. } | Plan::Ruin { g, .. } => *g.lattice(),
        Plan::Id { grid, .. } => *grid,
    };
    let sched = cfg.schedule.build(&lattice, ov.probes).map_err(field("schedule"))?;
    Ok(Prepared {
        plan,
        sched,
        rel_tol: cfg.rel_tol,
        series_tol: cfg.series_tol,
        seed: ov.seed.unwrap_or(cfg.seed),
        output_dir: ov.output_dir.clone().unwrap_or_else(|| base_dir.join(&cfg.output_dir)),
    })
}

/// Reports and tabulated laws produced by one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<DiagnosticReport>,
    pub dists: Vec<(String, GridDistribution)>,
    pub output_dir: PathBuf,
}

impl RunOutput {
    pub fn verdict(&self) -> Verdict {
        aggregate_verdicts(&self.reports)
    }

    pub fn exit_code(&self) -> i32 {
        match self.verdict() {
            Verdict::Pass => EXIT_PASS,
            Verdict::Inconclusive => EXIT_INCONCLUSIVE,
            Verdict::Fail => EXIT_FAIL,
        }
    }
}

fn named(mut r: DiagnosticReport, name: &str) -> DiagnosticReport {
    r.check = name.to_string();
    r
}

/// Compares grid supremum tails with Monte Carlo tails at every probe. The
/// ratio column holds `P̂(M > x)/P(M > x)`; the certificate is the largest
/// standardized deviation. Passes when no probe is 4 standard errors off
/// and at most one is beyond 3.
fn mc_agreement(
    pi: &GridDistribution,
    mc: &crate::random_walk::McSupremum,
    sched: &ProbeSchedule,
) -> crate::error::Result<DiagnosticReport> {
    let mut ratios = Vec::new();
    let mut worst: f64 = 0.0;
    let mut beyond3 = 0;
    for &x in sched.x_points() {
        let p = pi.tail_prob(x)?;
        let (q, se) = mc.tail_with_se(x)?;
        let se = se.max((p * (1.0 - p) / mc.paths as f64).sqrt());
        let z = if se > 0.0 { (q - p).abs() / se } else if q == p { 0.0 } else { f64::INFINITY };
        worst = worst.max(z);
        if z > 3.0 {
            beyond3 += 1;
        }
        ratios.push(vec![if p > 0.0 { q / p } else { f64::NAN }]);
    }
    let verdict = if worst <= 4.0 && beyond3 <= 1 { Verdict::Pass } else { Verdict::Fail };
    Ok(DiagnosticReport {
        check: "mc_agreement".into(),
        probes: sched.x_points().to_vec(),
        columns: vec![0.0],
        ratios,
        target: Some(1.0),
        limit_estimate: worst,
        trend: Trend::Inconclusive,
        verdict,
        certificate: Some(worst),
        excess_contamination: mc.dist.excess(),
        dropped_probes: 0,
        flags: Vec::new(),
        companions: Vec::new(),
    })
}

fn x_last(sched: &ProbeSchedule) -> f64 {
    *sched.x_points().last().expect("schedules are never empty")
}

/// Window width, refined in whole cells until the scan has at least 64 samples.
fn sample_step(sched: &ProbeSchedule, lat: &Lattice) -> f64 {
    let range = x_last(sched) - sched.x0();
    let cells = ((range / 64.0) / lat.span()).floor().max(1.0);
    sched.window().width().min(cells * lat.span())
}

fn execute(p: &Prepared) -> Result<RunOutput, CliError> {
    let (sched, tol, st) = (&p.sched, p.rel_tol, p.series_tol);
    let mut reports = Vec::new();
    let mut dists = Vec::new();
    match &p.plan {
        Plan::Diagnose { f, checks, c_list } => {
            dists.push(("F".to_string(), f.clone()));
            let samples = || {
                sample_window_function(f, sched.x0(), x_last(sched), sample_step(sched, f.lattice()), sched.window())
            };
            for check in checks {
                match check {
                    CheckKind::LongTailed => reports.push(named(
                        check_long_tailed_delta(f, sched, tol).map_err(runtime("long_tailed"))?,
                        "long_tailed",
                    )),
                    CheckKind::Subexp => {
                        reports.push(named(check_subexp_delta(f, sched, tol).map_err(runtime("subexp"))?, "subexp"))
                    }
                    CheckKind::Ani => {
                        let s = samples().map_err(runtime("ani"))?;
                        reports.push(check_ani(&s, sched.x0(), tol).map_err(runtime("ani"))?);
                    }
                    CheckKind::Ald => {
                        let s = samples().map_err(runtime("ald"))?;
                        reports.push(check_ald(&s, sched.x0()).map_err(runtime("ald"))?);
                    }
                    CheckKind::Local => {
                        let rs = check_locally_subexp(f, c_list, sched, tol).map_err(runtime("local"))?;
                        reports.extend(rs.into_iter().map(|r| {
                            let name = r.check.replace("subexp_delta", "local");
                            named(r, &name)
                        }));
                    }
                }
            }
        }
        Plan::Cp { g, lambda } => {
            let mu = compound_poisson(*lambda, g, st).map_err(runtime("build_mu"))?;
            reports.push(named(check_subexp_delta(g, sched, tol).map_err(runtime("subexp_G"))?, "subexp_G"));
            reports.push(named(check_subexp_delta(&mu, sched, tol).map_err(runtime("subexp_mu"))?, "subexp_mu"));
            reports.push(named(
                check_asymptotic_ratio(&mu, g, RatioMode::Target(*lambda), sched, tol).map_err(runtime("ratio_mu_G"))?,
                "ratio_mu_G",
            ));
            dists.push(("G".into(), g.clone()));
            dists.push(("mu".into(), mu));
        }
        Plan::Id { triplet, grid } => {
            let d = id_decomposition(triplet, grid, st).map_err(runtime("build_mu"))?;
            reports.push(named(
                check_asymptotic_ratio(&d.dist, &d.large_jumps, RatioMode::Target(1.0), sched, tol)
                    .map_err(runtime("ratio_mu_nu"))?,
                "ratio_mu_nu",
            ));
            let nu1 = normalized_tail_measure(&d.large_jumps).map_err(runtime("subexp_nu1"))?;
            reports.push(named(check_subexp_delta(&nu1, sched, tol).map_err(runtime("subexp_nu1"))?, "subexp_nu1"));
            dists.push(("mu".into(), d.dist.clone()));
            dists.push(("nu1".into(), nu1));
        }
        Plan::Local { f, c_list } => {
            let rs = check_locally_subexp(f, c_list, sched, tol).map_err(runtime("local"))?;
            reports.extend(rs.into_iter().map(|r| {
                let name = r.check.replace("subexp_delta", "local");
                named(r, &name)
            }));
            let s = sample_window_function(f, sched.x0(), x_last(sched), sample_step(sched, f.lattice()), sched.window())
                .map_err(runtime("ald"))?;
            reports.push(check_ald(&s, sched.x0()).map_err(runtime("ald"))?);
            dists.push(("F".into(), f.clone()));
        }
        Plan::Nb { g, a, lambda } => {
            let fa = compound_negative_binomial(*a, *lambda, g, st).map_err(runtime("build_Fa"))?;
            let mean_n = a * lambda / (1.0 - lambda);
            reports.push(named(check_subexp_delta(g, sched, tol).map_err(runtime("subexp_G"))?, "subexp_G"));
            reports.push(named(check_subexp_delta(&fa, sched, tol).map_err(runtime("subexp_Fa"))?, "subexp_Fa"));
            reports.push(named(
                check_asymptotic_ratio(&fa, g, RatioMode::Target(mean_n), sched, tol).map_err(runtime("ratio_Fa_G"))?,
                "ratio_Fa_G",
            ));
            dists.push(("G".into(), g.clone()));
            dists.push(("Fa".into(), fa));
        }
        Plan::Ruin { g, n_max, mc_paths, drift_margin } => {
            let ld = ladder_decompose(g, *n_max, st).map_err(runtime("ladder"))?;
            let pi = supremum_distribution(&ld, st).map_err(runtime("supremum"))?;
            if ld.lambda > 0.0 {
                reports.push(named(check_subexp_delta(&pi, sched, tol).map_err(runtime("subexp_pi"))?, "subexp_pi"));
                reports.push(named(check_subexp_delta(&ld.g0, sched, tol).map_err(runtime("subexp_G0"))?, "subexp_G0"));
            }
            if *mc_paths > 0 {
                let mc = mc_supremum(&GridSampler::new(g), *mc_paths, *drift_margin, p.seed, pi.lattice())
                    .map_err(runtime("mc_agreement"))?;
                reports.push(mc_agreement(&pi, &mc, sched).map_err(runtime("mc_agreement"))?);
                dists.push(("mc".into(), mc.dist));
            }
            dists.push(("G".into(), g.clone()));
            dists.push(("G0".into(), ld.g0));
            dists.push(("pi".into(), pi));
        }
        Plan::Stopped { f, tau_pmf } => {
            reports.push(named(check_subexp_delta(f, sched, tol).map_err(runtime("subexp_F"))?, "subexp_F"));
            reports.push(named(
                stopped_sum_ratio_check(f, tau_pmf, sched, tol).map_err(runtime("stopped_sum_ratio"))?,
                "stopped_sum_ratio",
            ));
            dists.push(("F".into(), f.clone()));
        }
        Plan::Kesten { f, eps, n_max } => {
            reports.push(kesten_certificate(f, sched, *eps, *n_max, tol).map_err(runtime("kesten"))?);
            dists.push(("F".into(), f.clone()));
        }
    }
    Ok(RunOutput { reports, dists, output_dir: p.output_dir.clone() })
}

fn write_report(dir: &Path, name: &str, r: &DiagnosticReport) -> std::io::Result<()> {
    fs::write(dir.join(format!("report_{name}.csv")), r.to_csv_string())?;
    for c in &r.companions {
        write_report(dir, &format!("{name}_{}", c.check), c)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// Writes `summary.csv`, one `report_<check>.csv` per report (companions
/// included) and one `dist_<name>.csv` per tabulated law.
pub fn write_outputs(out: &RunOutput) -> Result<(), CliError> {
    let dir = &out.output_dir;
    fs::create_dir_all(dir)?;
    let mut summary = BufWriter::new(fs::File::create(dir.join("summary.csv"))?);
    writeln!(summary, "check,verdict,limit_estimate,target,certificate")?;
    for r in &out.reports {
        writeln!(
            summary,
            "{},{},{:.16e},{},{}",
            r.check,
            r.verdict,
            r.limit_estimate,
            fmt_opt(r.target),
            fmt_opt(r.certificate)
        )?;
        write_report(dir, &r.check, r)?;
    }
    summary.flush()?;
    for (name, d) in &out.dists {
        let file = BufWriter::new(fs::File::create(dir.join(format!("dist_{name}.csv")))?);
        d.write_csv(file).map_err(|e| CliError::Runtime { check: format!("dist_{name}"), source: e })?;
    }
    Ok(())
}

/// Loads, validates, runs and writes one experiment.
pub fn run(config_path: &Path, ov: &Overrides) -> Result<RunOutput, CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    run_config(&cfg, base, ov)
}

/// Runs an already parsed config; relative paths resolve against `base_dir`.
pub fn run_config(cfg: &ExperimentConfig, base_dir: &Path, ov: &Overrides) -> Result<RunOutput, CliError> {
    let prepared = prepare(cfg, base_dir, ov)?;
    let out = execute(&prepared)?;
    write_outputs(&out)?;
    Ok(out)
}

type SelfCheck = (&'static str, fn() -> crate::error::Result<bool>);

fn selfchecks() -> Vec<SelfCheck> {
    use crate::compound::{compound_geometric, randomly_stopped_sum};
    use crate::conv::convolve;
    use crate::families::Family;
    vec![
        ("delta_zero_is_identity", || {
            let f = GridDistribution::new(Lattice::new(-1.0, 0.5, 4)?, vec![0.1, 0.2, 0.3, 0.4], 0.0, 0.0)?;
            let g = convolve(&f, &GridDistribution::delta_zero(0.5)?)?;
            Ok(g.mass() == f.mass() && g.lattice() == f.lattice())
        }),
        ("point_family_is_a_point_mass", || {
            let d = FamilySpec::new(Family::Point { loc: 3.0 }, Lattice::new(0.0, 1.0, 10)?)?.instantiate()?;
            Ok(d.mass_at(3.0) == 1.0)
        }),
        ("stopped_at_one_is_the_jump_law", || {
            let f = GridDistribution::new(Lattice::new(0.0, 1.0, 3)?, vec![0.5, 0.25, 0.25], 0.0, 0.0)?;
            let s = randomly_stopped_sum(&[0.0, 1.0], &f, 1e-12)?;
            Ok([1.0, 2.0, 3.0].iter().all(|&x| s.mass_at(x) == f.mass_at(x)))
        }),
        ("geometric_equals_negative_binomial_one", || {
            let g = GridDistribution::point_mass(1.0, 1.0)?;
            Ok(compound_geometric(0.4, &g, 1e-10)? == compound_negative_binomial(1.0, 0.4, &g, 1e-10)?)
        }),
        ("walk_that_never_rises_has_zero_supremum", || {
            let ld = ladder_decompose(&GridDistribution::point_mass(-1.0, 1.0)?, 10, 1e-10)?;
            Ok(ld.lambda == 0.0 && supremum_distribution(&ld, 1e-10)?.mass_at(0.0) == 1.0)
        }),
        ("point_mass_windows_are_degenerate", || {
            let d = GridDistribution::point_on(Lattice::new(0.0, 1.0, 2000)?, 5.0)?;
            let s = ProbeSchedule::doubling(8.0, 1024.0, vec![1.0], DeltaWindow::new(1.0)?)?;
            Ok(check_long_tailed_delta(&d, &s, DEFAULT_REL_TOL)?.verdict == Verdict::Inconclusive)
        }),
        ("empty_window_list_is_rejected", || {
            let d = GridDistribution::point_mass(1.0, 1.0)?;
            let s = ProbeSchedule::doubling(8.0, 1024.0, vec![1.0], DeltaWindow::new(1.0)?)?;
            Ok(matches!(check_locally_subexp(&d, &[], &s, 0.05), Err(Error::InvalidArgument(_))))
        }),
        ("gaussian_triplet_has_unit_mass", || {
            let t = LevyTriplet::gaussian(0.0, 1.0)?;
            let d = crate::levy::id_distribution(&t, &Lattice::new(-20.0, 0.05, 800)?, 1e-10)?;
            Ok((d.mass().iter().sum::<f64>() - 1.0).abs() < 1e-9)
        }),
    ]
}

/// Runs the built-in smoke checks; returns `(name, passed)` pairs.
pub fn selftest() -> Vec<(&'static str, bool)> {
    selfchecks().into_iter().map(|(name, f)| (name, matches!(f(), Ok(true)))).collect()
}
