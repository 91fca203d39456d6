//! Seeded Monte Carlo runs, parameter sweeps and result emission.
//!
//! Trial `i` of a run with master seed `s` draws everything from
//! `derive_seed(s, i)`, so a run is reproducible regardless of how rayon
//! schedules the trials. By default the pilot codebook is drawn once from
//! the master seed and shared by every trial.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::estimators::{run_coordinate_descent, CoordinateOrder, EstimatorKind, SolverOptions};
use crate::io::{encode_matrix, write_text};
use crate::metrics::{log_grid, roc_sweep, RocCurve};
use crate::model::{generate_pilots, ActivityPattern, PilotMatrix, Scenario, ScenarioConfig, SampleCovariance};
use crate::rng::{derive_seed, SeedStreams, Stream};
use crate::{Error, Result};

/// Solver settings shared by every estimator of a run. The coordinate
/// order seed is not configurable; it is derived per trial and solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_sweeps: usize,
    pub tol: Option<f64>,
    pub order: CoordinateOrder,
    pub rho: Option<f64>,
    pub reinversion_period: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let o = SolverOptions::new(EstimatorKind::Ml);
        SolverSettings {
            max_sweeps: o.max_sweeps,
            tol: o.tol,
            order: o.order,
            rho: o.rho,
            reinversion_period: o.reinversion_period,
        }
    }
}

impl SolverSettings {
    pub fn options(&self, kind: EstimatorKind) -> SolverOptions {
        SolverOptions {
            kind,
            max_sweeps: self.max_sweeps,
            tol: self.tol,
            order: self.order,
            rho: self.rho,
            reinversion_period: self.reinversion_period,
            order_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub trials: usize,
    pub seed: u64,
    pub solvers: Vec<EstimatorKind>,
    /// Share one pilot codebook across trials.
    pub fixed_pilots: bool,
    pub nu_min: f64,
    pub nu_max: f64,
    pub nu_points: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            trials: 50,
            seed: 0,
            solvers: EstimatorKind::ALL.to_vec(),
            fixed_pilots: true,
            nu_min: 1e-4,
            nu_max: 1e2,
            nu_points: 100,
        }
    }
}

/// On-disk run configuration (TOML with `[scenario]`, `[solver]` and
/// `[run]` tables; the latter two are optional).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        for opts in self.solver_options() {
            opts.validate()?;
        }
        if self.run.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.run.solvers.is_empty() {
            return Err(Error::InvalidConfig("at least one solver is required".into()));
        }
        if !(self.run.nu_min > 0.0 && self.run.nu_min < self.run.nu_max) || self.run.nu_points < 2 {
            return Err(Error::InvalidConfig(
                "nu grid needs 0 < nu_min < nu_max and nu_points >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn solver_options(&self) -> Vec<SolverOptions> {
        self.run.solvers.iter().map(|k| self.solver.options(*k)).collect()
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            fixed_pilots: self.run.fixed_pilots,
            nu_grid: log_grid(self.run.nu_min, self.run.nu_max, self.run.nu_points),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub fixed_pilots: bool,
    pub nu_grid: Vec<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            fixed_pilots: true,
            nu_grid: crate::metrics::default_nu_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrial {
    pub kind: EstimatorKind,
    pub gamma_hat: Vec<f64>,
    pub final_cost: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub wall_ms: f64,
    /// sha256 of the sample covariance handed to this solver.
    pub consumed_digest: String,
    pub fault: Option<String>,
    pub l2_error: f64,
    pub linf_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub truth: ActivityPattern,
    pub sigma_hat_digest: String,
    pub solvers: Vec<SolverTrial>,
}

impl TrialRecord {
    pub fn flagged(&self) -> bool {
        self.solvers.iter().any(|s| s.fault.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl ErrorStats {
    fn from_values(mut v: Vec<f64>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(ErrorStats {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorAggregate {
    pub kind: EstimatorKind,
    /// `None` when every trial was flagged.
    pub roc: Option<RocCurve>,
    pub l2_error: Option<ErrorStats>,
    pub linf_error: Option<ErrorStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub valid_trials: usize,
    pub flagged_trials: usize,
    pub estimators: Vec<EstimatorAggregate>,
}

impl Aggregates {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorAggregate> {
        self.estimators.iter().find(|e| e.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: ScenarioConfig,
    pub solvers: Vec<SolverOptions>,
    pub trials: usize,
    pub master_seed: u64,
    pub options: RunOptions,
    pub per_trial: Vec<TrialRecord>,
    pub aggregates: Aggregates,
}

impl RunRecord {
    /// Copy with wall-clock times zeroed, for content comparisons.
    pub fn without_timings(&self) -> RunRecord {
        let mut r = self.clone();
        for t in &mut r.per_trial {
            for s in &mut t.solvers {
                s.wall_ms = 0.0;
            }
        }
        r
    }
}

pub fn covariance_digest(sigma_hat: &SampleCovariance) -> String {
    hex::encode(Sha256::digest(encode_matrix(sigma_hat.matrix())))
}

fn errors(gamma_hat: &[f64], truth: &[f64]) -> (f64, f64) {
    let mut l2 = 0.0;
    let mut linf: f64 = 0.0;
    for (a, b) in gamma_hat.iter().zip(truth) {
        let e = (a - b).abs();
        l2 += e * e;
        linf = linf.max(e);
    }
    (l2.sqrt(), linf)
}

fn solve_one(sigma_hat: &SampleCovariance, pilots: &PilotMatrix, noise_var: f64, opts: &SolverOptions, truth: &[f64]) -> SolverTrial {
    let start = Instant::now();
    let outcome = run_coordinate_descent(sigma_hat, pilots, noise_var, opts);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let consumed_digest = covariance_digest(sigma_hat);
    match outcome {
        Ok(out) if out.gamma.iter().all(|g| g.is_finite()) => {
            let (l2_error, linf_error) = errors(&out.gamma, truth);
            SolverTrial {
                kind: opts.kind,
                gamma_hat: out.gamma,
                final_cost: out.diagnostics.final_cost,
                sweeps: out.diagnostics.sweeps,
                converged: out.diagnostics.converged,
                wall_ms,
                consumed_digest,
                fault: None,
                l2_error,
                linf_error,
            }
        }
        Ok(_) => failed(opts.kind, wall_ms, consumed_digest, "non-finite estimate".into()),
        Err(e) => failed(opts.kind, wall_ms, consumed_digest, e.to_string()),
    }
}

fn failed(kind: EstimatorKind, wall_ms: f64, consumed_digest: String, fault: String) -> SolverTrial {
    SolverTrial {
        kind,
        gamma_hat: Vec::new(),
        final_cost: f64::NAN,
        sweeps: 0,
        converged: false,
        wall_ms,
        consumed_digest,
        fault: Some(fault),
        l2_error: f64::NAN,
        linf_error: f64::NAN,
    }
}

fn run_trial(
    cfg: &ScenarioConfig,
    solvers: &[SolverOptions],
    shared_pilots: Option<&PilotMatrix>,
    master_seed: u64,
    index: usize,
) -> Result<TrialRecord> {
    let seed = derive_seed(master_seed, index as u64);
    let streams = SeedStreams::new(seed);
    let pilots = match shared_pilots {
        Some(p) => p.clone(),
        None => generate_pilots(cfg, &mut streams.rng(Stream::Pilots))?,
    };
    let scenario = Scenario::generate_with_pilots(cfg, pilots, &streams)?;
    let sigma_hat = scenario.sample_covariance()?;
    let truth = scenario.activity.gamma();
    let results = solvers
        .iter()
        .enumerate()
        .map(|(j, base)| {
            let mut opts = base.clone();
            opts.order_seed = derive_seed(seed, j as u64 + 1);
            solve_one(&sigma_hat, &scenario.pilots, cfg.noise_var, &opts, truth)
        })
        .collect();
    Ok(TrialRecord {
        index,
        seed,
        sigma_hat_digest: covariance_digest(&sigma_hat),
        truth: scenario.activity,
        solvers: results,
    })
}

/// Aggregates unflagged trials per estimator. Flagged trials (any solver
/// fault) are excluded from every estimator and counted.
pub fn aggregate(per_trial: &[TrialRecord], kinds: &[EstimatorKind], sigma2: f64, nu_grid: &[f64]) -> Result<Aggregates> {
    let valid: Vec<&TrialRecord> = per_trial.iter().filter(|t| !t.flagged()).collect();
    let mut estimators = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let entries: Vec<(&[f64], &ActivityPattern, f64, f64)> = valid
            .iter()
            .filter_map(|t| {
                t.solvers
                    .iter()
                    .find(|s| s.kind == *kind)
                    .map(|s| (s.gamma_hat.as_slice(), &t.truth, s.l2_error, s.linf_error))
            })
            .collect();
        let roc = if entries.is_empty() {
            None
        } else {
            Some(roc_sweep(entries.iter().map(|e| (e.0, e.1)), sigma2, nu_grid)?)
        };
        estimators.push(EstimatorAggregate {
            kind: *kind,
            roc,
            l2_error: ErrorStats::from_values(entries.iter().map(|e| e.2).collect()),
            linf_error: ErrorStats::from_values(entries.iter().map(|e| e.3).collect()),
        });
    }
    Ok(Aggregates {
        valid_trials: valid.len(),
        flagged_trials: per_trial.len() - valid.len(),
        estimators,
    })
}

pub fn run_scenario(
    cfg: &ScenarioConfig,
    solvers: &[SolverOptions],
    trials: usize,
    master_seed: u64,
    opts: &RunOptions,
) -> Result<RunRecord> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    if solvers.is_empty() {
        return Err(Error::InvalidConfig("at least one solver is required".into()));
    }
    for s in solvers {
        s.validate()?;
    }
    let shared = if opts.fixed_pilots {
        Some(generate_pilots(cfg, &mut SeedStreams::new(master_seed).rng(Stream::Pilots))?)
    } else {
        None
    };
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, solvers, shared.as_ref(), master_seed, i))
        .collect::<Result<Vec<_>>>()?;
    let kinds: Vec<EstimatorKind> = solvers.iter().map(|s| s.kind).collect();
    let aggregates = aggregate(&per_trial, &kinds, cfg.noise_var, &opts.nu_grid)?;
    Ok(RunRecord {
        scenario: cfg.clone(),
        solvers: solvers.to_vec(),
        trials,
        master_seed,
        options: opts.clone(),
        per_trial,
        aggregates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Antennas,
    Users,
    ActiveUsers,
    SnrDb,
    PilotLen,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Antennas => "m",
            SweepParam::Users => "k_c",
            SweepParam::ActiveUsers => "a_c",
            SweepParam::SnrDb => "snr_db",
            SweepParam::PilotLen => "d_c",
        }
    }

    /// `base` with this parameter set to `value`, validated.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        if self == SweepParam::SnrDb {
            cfg.snr_db_active = value;
        } else {
            if !(value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                return Err(Error::InvalidConfig(format!(
                    "{} must be a nonnegative integer, got {value}",
                    self.name()
                )));
            }
            let n = value as usize;
            match self {
                SweepParam::Antennas => cfg.antennas = n,
                SweepParam::Users => cfg.users = n,
                SweepParam::ActiveUsers => cfg.active_users = n,
                SweepParam::PilotLen => cfg.pilot_len = n,
                SweepParam::SnrDb => unreachable!(),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "antennas" => Ok(SweepParam::Antennas),
            "k_c" | "kc" | "users" => Ok(SweepParam::Users),
            "a_c" | "ac" | "active_users" => Ok(SweepParam::ActiveUsers),
            "snr_db" | "snr" => Ok(SweepParam::SnrDb),
            "d_c" | "dc" | "pilot_len" => Ok(SweepParam::PilotLen),
            other => Err(Error::Parse(format!(
                "unknown sweep parameter '{other}' (expected m, k_c, a_c, snr_db or d_c)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedValue {
    pub value: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub param: SweepParam,
    pub runs: Vec<(f64, RunRecord)>,
    pub skipped: Vec<SkippedValue>,
}

/// One run per value, all with the same master seed. Values whose derived
/// config is invalid are skipped and reported.
pub fn sweep_parameter(
    base: &ScenarioConfig,
    param: SweepParam,
    values: &[f64],
    solvers: &[SolverOptions],
    trials: usize,
    master_seed: u64,
    opts: &RunOptions,
) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(Error::EmptyInput("sweep needs at least one value"));
    }
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for &value in values {
        match param.apply(base, value) {
            Ok(cfg) => runs.push((value, run_scenario(&cfg, solvers, trials, master_seed, opts)?)),
            Err(e) => skipped.push(SkippedValue {
                value,
                reason: e.to_string(),
            }),
        }
    }
    Ok(SweepOutcome { param, runs, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    JsonSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn contains(&self, file: &str) -> bool {
        self.entries.iter().any(|e| e.file == file)
    }
}

#[derive(Serialize)]
struct SolverTrialSummary<'a> {
    kind: EstimatorKind,
    final_cost: f64,
    sweeps: usize,
    converged: bool,
    wall_ms: f64,
    l2_error: f64,
    linf_error: f64,
    fault: &'a Option<String>,
}

#[derive(Serialize)]
struct TrialSummary<'a> {
    index: usize,
    seed: u64,
    support: &'a [usize],
    flagged: bool,
    solvers: Vec<SolverTrialSummary<'a>>,
}

#[derive(Serialize)]
struct EstimatorSummary {
    kind: EstimatorKind,
    pd_at_pfa_1e_3: Option<f64>,
    pd_at_pfa_1e_2: Option<f64>,
    pd_at_pfa_1e_1: Option<f64>,
    l2_error: Option<ErrorStats>,
    linf_error: Option<ErrorStats>,
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a ScenarioConfig,
    solvers: &'a [SolverOptions],
    trials: usize,
    master_seed: u64,
    fixed_pilots: bool,
    nu_grid: &'a [f64],
    valid_trials: usize,
    flagged_trials: usize,
    estimators: Vec<EstimatorSummary>,
    per_trial: Vec<TrialSummary<'a>>,
}

fn summary(record: &RunRecord) -> Summary<'_> {
    let estimators = record
        .aggregates
        .estimators
        .iter()
        .map(|e| {
            let at = |p: f64| e.roc.as_ref().map(|r| r.pd_at_pfa(p));
            EstimatorSummary {
                kind: e.kind,
                pd_at_pfa_1e_3: at(1e-3),
                pd_at_pfa_1e_2: at(1e-2),
                pd_at_pfa_1e_1: at(1e-1),
                l2_error: e.l2_error,
                linf_error: e.linf_error,
            }
        })
        .collect();
    let per_trial = record
        .per_trial
        .iter()
        .map(|t| TrialSummary {
            index: t.index,
            seed: t.seed,
            support: t.truth.support(),
            flagged: t.flagged(),
            solvers: t
                .solvers
                .iter()
                .map(|s| SolverTrialSummary {
                    kind: s.kind,
                    final_cost: s.final_cost,
                    sweeps: s.sweeps,
                    converged: s.converged,
                    wall_ms: s.wall_ms,
                    l2_error: s.l2_error,
                    linf_error: s.linf_error,
                    fault: &s.fault,
                })
                .collect(),
        })
        .collect();
    Summary {
        scenario: &record.scenario,
        solvers: &record.solvers,
        trials: record.trials,
        master_seed: record.master_seed,
        fixed_pilots: record.options.fixed_pilots,
        nu_grid: &record.options.nu_grid,
        valid_trials: record.aggregates.valid_trials,
        flagged_trials: record.aggregates.flagged_trials,
        estimators,
        per_trial,
    }
}

/// Writes `roc_<kind>.csv` per estimator with at least one valid trial,
/// `summary.json`, and `manifest.txt` (`<sha256>  <file>` per line).
pub fn emit_results(record: &RunRecord, out_dir: &Path, formats: &[OutputFormat]) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files: Vec<(String, String)> = Vec::new();
    if formats.contains(&OutputFormat::Csv) {
        for e in &record.aggregates.estimators {
            if let Some(roc) = &e.roc {
                files.push((format!("roc_{}.csv", e.kind), roc.to_csv()));
            }
        }
    }
    if formats.contains(&OutputFormat::JsonSummary) {
        let mut json = serde_json::to_string_pretty(&summary(record))
            .map_err(|e| Error::NumericalFault(format!("summary serialization: {e}")))?;
        json.push('\n');
        files.push(("summary.json".into(), json));
    }
    let mut entries = Vec::with_capacity(files.len());
    let mut manifest = String::new();
    for (name, body) in &files {
        write_text(&out_dir.join(name), body)?;
        let sha256 = hex::encode(Sha256::digest(body.as_bytes()));
        manifest.push_str(&format!("{sha256}  {name}\n"));
        entries.push(ManifestEntry {
            file: name.clone(),
            sha256,
        });
    }
    write_text(&out_dir.join("manifest.txt"), &manifest)?;
    Ok(Manifest {
        dir: out_dir.to_path_buf(),
        entries,
    })
}
