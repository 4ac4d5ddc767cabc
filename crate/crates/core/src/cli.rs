//! Command-line front end: batch runner, parameter sweeps, and built-in
//! self-checks.
//!
//! `run` executes the configured grid of (scenario, method) cells with
//! paired seeds, writes a deterministic `summary.json` plus per-scenario
//! CSV tables, and optionally per-run trajectories. `sweep` repeats a
//! reduced batch across a list of values for one attack or scenario
//! parameter. `verify` exercises a fixed set of self-checks — closed-form
//! fixtures, determinism, and a corruption canary — and exits non-zero if
//! any fail.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::controller::{run_trajectory, ControllerError, Method, RunResult, RunSpec};
use crate::market::ShockKind;
use crate::metrics::{mean_recovery, security_summary, MetricsError, Recovery, SecuritySummary};
use crate::trust::DetectionRates;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("run failed: {0}")]
    Controller(#[from] ControllerError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("unknown {what} '{value}'")]
    UnknownName { what: &'static str, value: String },
    #[error("{failed} of {total} self-checks failed")]
    Verification { failed: usize, total: usize },
    #[error("invalid sweep value {value} for {param}: {message}")]
    SweepValue {
        param: String,
        value: f64,
        message: String,
    },
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "mvfc",
    version,
    about = "Adversarial stress harness and trust-weighted stablecoin reserve controller"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute the configured batch of paired runs and write summaries.
    Run(RunArgs),
    /// Re-run a reduced batch across a list of values for one parameter.
    Sweep(SweepArgs),
    /// Execute the built-in self-checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 100 paired runs per cell.
    Quick,
    /// 300 paired runs per cell.
    Full,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment configuration file (TOML); missing fields use defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset used when no configuration file is given.
    #[arg(long, value_enum, default_value_t = Preset::Quick)]
    pub preset: Preset,
    /// Output directory override.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base seed override; run i uses seed base+i across all methods.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Runs per (scenario, method) cell override.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Worker threads (0 = machine parallelism) override.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Comma-separated method subset (e.g. composer,no_trust).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Vec<Method>,
    /// Comma-separated scenario subset (e.g. normal,black_thursday).
    #[arg(long, value_delimiter = ',', value_parser = parse_shock)]
    pub shocks: Vec<ShockKind>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also write per-run trajectory, trust, and epoch files.
    #[arg(long)]
    pub write_runs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    /// Fraction of the population converted to adversaries.
    AdversarialFraction,
    /// Probability adversaries copy the coalition template each step.
    Coordination,
    /// Dishonesty of adversarial self-reports.
    InjectionStrength,
    /// Magnitude multiplier on the live scenario.
    ShockMagnitude,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::AdversarialFraction => "adversarial_fraction",
            SweepParam::Coordination => "coordination",
            SweepParam::InjectionStrength => "injection_strength",
            SweepParam::ShockMagnitude => "shock_magnitude",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Parameter to sweep.
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values to sweep over.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Only run checks whose name contains this substring.
    #[arg(long)]
    pub filter: Option<String>,
}

pub fn parse_method(s: &str) -> Result<Method, String> {
    Method::ALL
        .iter()
        .find(|m| m.as_str() == s.trim())
        .copied()
        .ok_or_else(|| {
            format!(
                "unknown method '{s}' (expected one of: {})",
                Method::ALL.map(|m| m.as_str()).join(", ")
            )
        })
}

pub fn parse_shock(s: &str) -> Result<ShockKind, String> {
    ShockKind::ALL
        .iter()
        .find(|k| k.as_str() == s.trim())
        .copied()
        .ok_or_else(|| {
            format!(
                "unknown scenario '{s}' (expected one of: {})",
                ShockKind::ALL.map(|k| k.as_str()).join(", ")
            )
        })
}

/// Builds the effective configuration from file/preset, environment
/// overrides, then command-line overrides, in that precedence order.
pub fn resolve_config(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => match common.preset {
            Preset::Quick => ExperimentConfig::quick(),
            Preset::Full => ExperimentConfig::full(),
        },
    };
    cfg.apply_env_overrides()?;
    if let Some(out) = &common.out {
        cfg.run.out_dir = out.to_string_lossy().into_owned();
    }
    if let Some(seed) = common.seed {
        cfg.run.base_seed = seed;
    }
    if let Some(runs) = common.runs {
        cfg.run.runs = runs;
    }
    if let Some(jobs) = common.jobs {
        cfg.run.jobs = jobs;
    }
    if !common.methods.is_empty() {
        cfg.run.methods = common.methods.clone();
    }
    if !common.shocks.is_empty() {
        cfg.run.shocks = common.shocks.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Batch execution and summaries
// ---------------------------------------------------------------------------

/// Aggregate statistics for one (scenario, method) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub runs: usize,
    pub mean_peak_deviation: f64,
    pub median_peak_deviation: f64,
    /// Mean recovery steps, censored at the post-shock horizon.
    pub mean_recovery_steps: f64,
    /// Fraction of runs whose peg re-entered the band before the horizon.
    pub recovered_fraction: f64,
    pub mean_bad_debt_steps: f64,
    pub mean_liquidity_retention: f64,
    /// Mean adversary-detection rates, for methods that score trust.
    pub detection: Option<DetectionRates>,
    /// Detection plus influence-containment summary, for methods that
    /// score trust in a population that contains adversaries.
    pub security: Option<SecuritySummary>,
}

/// Paired comparison of the full pipeline against one baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedComparison {
    /// Fraction of seed-paired runs where the full pipeline's peak
    /// deviation was strictly smaller than the baseline's.
    pub peak_win_rate: f64,
    /// Mean (pipeline - baseline) peak deviation.
    pub mean_peak_difference: f64,
    /// Fraction of pairs with strictly faster (censored) recovery.
    pub recovery_win_rate: f64,
    /// Mean (pipeline - baseline) censored recovery steps.
    pub mean_recovery_difference: f64,
}

/// Deterministic batch digest written to `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSummary {
    pub base_seed: u64,
    pub runs_per_cell: usize,
    pub adversarial_fraction: f64,
    pub cells: BTreeMap<ShockKind, BTreeMap<Method, CellSummary>>,
    /// Per scenario: baseline method -> paired comparison against the full
    /// pipeline. Present only when the batch includes the full pipeline.
    pub comparisons: BTreeMap<ShockKind, BTreeMap<Method, PairedComparison>>,
}

/// All results of one batch, grouped and ordered.
pub struct BatchOutput {
    pub results: BTreeMap<ShockKind, BTreeMap<Method, Vec<RunResult>>>,
    pub summary: BatchSummary,
}

/// Executes the full grid of runs described by the configuration. Seeds
/// are paired: run `i` of every (scenario, method) cell uses
/// `base_seed + i`, so cross-method differences are attributable to the
/// method.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<BatchOutput, CliError> {
    cfg.validate()?;
    let mut tasks: Vec<(ShockKind, Method, usize)> = Vec::new();
    for &shock in &cfg.run.shocks {
        for &method in &cfg.run.methods {
            for i in 0..cfg.run.runs {
                tasks.push((shock, method, i));
            }
        }
    }
    let execute = || -> Vec<Result<RunResult, ControllerError>> {
        tasks
            .par_iter()
            .map(|&(shock, method, i)| {
                let spec = RunSpec {
                    run_id: i as u64,
                    seed: cfg.run.base_seed.wrapping_add(i as u64),
                    method,
                    shock,
                    forced_overrides: None,
                    market: &cfg.market,
                    behavior: &cfg.behavior,
                    attack: &cfg.attack,
                    counts: &cfg.counts,
                    trust: &cfg.trust,
                    risk: &cfg.risk,
                    controller: &cfg.controller,
                };
                run_trajectory(&spec)
            })
            .collect()
    };
    let raw = if cfg.run.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.jobs)
            .build()
            .map_err(|e| CliError::Pool(e.to_string()))?
            .install(execute)
    } else {
        execute()
    };

    let mut results: BTreeMap<ShockKind, BTreeMap<Method, Vec<RunResult>>> = BTreeMap::new();
    for (&(shock, method, _), res) in tasks.iter().zip(raw) {
        results
            .entry(shock)
            .or_default()
            .entry(method)
            .or_default()
            .push(res?);
    }
    for by_method in results.values_mut() {
        for runs in by_method.values_mut() {
            runs.sort_by_key(|r| r.run_id);
        }
    }
    let summary = summarize(cfg, &results)?;
    Ok(BatchOutput { results, summary })
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

fn summarize_cell(cfg: &ExperimentConfig, runs: &[RunResult]) -> Result<CellSummary, CliError> {
    let peaks: Vec<f64> = runs.iter().map(|r| r.peak_deviation).collect();
    let recoveries: Vec<Recovery> = runs.iter().map(|r| r.recovery).collect();
    let shock_step = cfg.controller.shock_injection_step as usize;
    let horizon = cfg.controller.horizon as usize;
    let recovered = runs
        .iter()
        .filter(|r| matches!(r.recovery, Recovery::Steps(_)))
        .count() as f64
        / runs.len() as f64;
    let detections: Vec<DetectionRates> = runs.iter().filter_map(|r| r.detection).collect();
    let influences: Vec<f64> = runs.iter().filter_map(|r| r.mean_influence).collect();
    let detection = if detections.is_empty() {
        None
    } else {
        let m = detections.len() as f64;
        Some(DetectionRates {
            tpr: detections.iter().map(|d| d.tpr).sum::<f64>() / m,
            fpr: detections.iter().map(|d| d.fpr).sum::<f64>() / m,
        })
    };
    let rho = cfg.counts.adversarial_fraction();
    let security = if detections.is_empty() || influences.is_empty() || rho <= 0.0 {
        None
    } else {
        Some(security_summary(&detections, &influences, rho)?)
    };
    Ok(CellSummary {
        runs: runs.len(),
        mean_peak_deviation: mean(&peaks),
        median_peak_deviation: median(&peaks),
        mean_recovery_steps: mean_recovery(&recoveries, shock_step, horizon)?,
        recovered_fraction: recovered,
        mean_bad_debt_steps: mean(
            &runs
                .iter()
                .map(|r| r.bad_debt_steps as f64)
                .collect::<Vec<_>>(),
        ),
        mean_liquidity_retention: mean(
            &runs
                .iter()
                .map(|r| r.liquidity_retention)
                .collect::<Vec<_>>(),
        ),
        detection,
        security,
    })
}

fn paired_comparison(pipeline: &[RunResult], baseline: &[RunResult]) -> PairedComparison {
    let n = pipeline.len().min(baseline.len()) as f64;
    let mut peak_wins = 0usize;
    let mut recovery_wins = 0usize;
    let mut peak_diff = 0.0;
    let mut recovery_diff = 0.0;
    for (a, b) in pipeline.iter().zip(baseline.iter()) {
        debug_assert_eq!(a.seed, b.seed);
        if a.peak_deviation < b.peak_deviation {
            peak_wins += 1;
        }
        peak_diff += a.peak_deviation - b.peak_deviation;
        if a.recovery_censored < b.recovery_censored {
            recovery_wins += 1;
        }
        recovery_diff += a.recovery_censored as f64 - b.recovery_censored as f64;
    }
    PairedComparison {
        peak_win_rate: peak_wins as f64 / n,
        mean_peak_difference: peak_diff / n,
        recovery_win_rate: recovery_wins as f64 / n,
        mean_recovery_difference: recovery_diff / n,
    }
}

fn summarize(
    cfg: &ExperimentConfig,
    results: &BTreeMap<ShockKind, BTreeMap<Method, Vec<RunResult>>>,
) -> Result<BatchSummary, CliError> {
    let mut cells = BTreeMap::new();
    let mut comparisons = BTreeMap::new();
    for (&shock, by_method) in results {
        let mut cell_row = BTreeMap::new();
        for (&method, runs) in by_method {
            cell_row.insert(method, summarize_cell(cfg, runs)?);
        }
        cells.insert(shock, cell_row);
        if let Some(pipeline) = by_method.get(&Method::Composer) {
            let mut cmp_row = BTreeMap::new();
            for (&method, runs) in by_method {
                if method != Method::Composer {
                    cmp_row.insert(method, paired_comparison(pipeline, runs));
                }
            }
            if !cmp_row.is_empty() {
                comparisons.insert(shock, cmp_row);
            }
        }
    }
    Ok(BatchSummary {
        base_seed: cfg.run.base_seed,
        runs_per_cell: cfg.run.runs,
        adversarial_fraction: cfg.counts.adversarial_fraction(),
        cells,
        comparisons,
    })
}

// ---------------------------------------------------------------------------
// Output writing
// ---------------------------------------------------------------------------

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the resolved configuration, the deterministic JSON summary, one
/// CSV table per scenario, and (optionally) per-run artifacts.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    output: &BatchOutput,
    out_dir: &Path,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;

    let summary_path = out_dir.join("summary.json");
    let mut body = serde_json::to_vec_pretty(&output.summary)?;
    body.push(b'\n');
    fs::write(&summary_path, body)?;

    for (shock, by_method) in &output.summary.cells {
        let path = out_dir.join(format!("summary_{}.csv", shock.as_str()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "method",
            "runs",
            "mean_peak_deviation",
            "median_peak_deviation",
            "mean_recovery_steps",
            "recovered_fraction",
            "mean_bad_debt_steps",
            "mean_liquidity_retention",
            "tpr",
            "fpr",
            "mean_influence",
            "influence_reduction",
        ])?;
        for (method, cell) in by_method {
            w.write_record([
                method.as_str().to_string(),
                cell.runs.to_string(),
                cell.mean_peak_deviation.to_string(),
                cell.median_peak_deviation.to_string(),
                cell.mean_recovery_steps.to_string(),
                cell.recovered_fraction.to_string(),
                cell.mean_bad_debt_steps.to_string(),
                cell.mean_liquidity_retention.to_string(),
                fmt_opt(cell.detection.map(|d| d.tpr)),
                fmt_opt(cell.detection.map(|d| d.fpr)),
                fmt_opt(cell.security.as_ref().map(|s| s.mean_influence)),
                fmt_opt(cell.security.as_ref().map(|s| s.influence_reduction)),
            ])?;
        }
        w.flush()?;
    }

    if cfg.run.write_runs {
        for (shock, by_method) in &output.results {
            for (method, runs) in by_method {
                let dir = out_dir.join(method.as_str()).join(shock.as_str());
                fs::create_dir_all(&dir)?;
                for run in runs {
                    let steps = fs::File::create(dir.join(format!("run_{:04}.csv", run.run_id)))?;
                    crate::metrics::write_steps_csv(steps, &run.steps)?;
                    if !run.trust_reports.is_empty() {
                        let trust =
                            fs::File::create(dir.join(format!("trust_{:04}.csv", run.run_id)))?;
                        crate::trust::write_reports_csv(trust, &run.trust_reports)?;
                    }
                    let mut epochs = serde_json::to_vec_pretty(&run.epochs)?;
                    epochs.push(b'\n');
                    fs::write(dir.join(format!("epochs_{:04}.json", run.run_id)), epochs)?;
                }
            }
        }
    }
    Ok(summary_path)
}

/// `run` entry point; returns the path of the JSON summary.
pub fn cmd_run(args: &RunArgs) -> Result<PathBuf, CliError> {
    let mut cfg = resolve_config(&args.common)?;
    cfg.run.write_runs |= args.write_runs;
    let output = run_batch(&cfg)?;
    let out_dir = PathBuf::from(&cfg.run.out_dir);
    let summary_path = write_outputs(&cfg, &output, &out_dir)?;
    for (shock, by_method) in &output.summary.cells {
        for (method, cell) in by_method {
            println!(
                "{}/{}: peak {:.4} ({:.4} median), recovery {:.1} steps, recovered {:.0}%, liquidity {:.3}{}",
                shock.as_str(),
                method.as_str(),
                cell.mean_peak_deviation,
                cell.median_peak_deviation,
                cell.mean_recovery_steps,
                100.0 * cell.recovered_fraction,
                cell.mean_liquidity_retention,
                cell.detection
                    .map(|d| format!(", tpr {:.2} fpr {:.2}", d.tpr, d.fpr))
                    .unwrap_or_default()
            );
        }
    }
    println!("summary written to {}", summary_path.display());
    Ok(summary_path)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Applies one sweep value to a configuration.
pub fn apply_sweep_value(
    cfg: &mut ExperimentConfig,
    param: SweepParam,
    value: f64,
) -> Result<(), CliError> {
    let reject = |message: &str| CliError::SweepValue {
        param: param.as_str().to_string(),
        value,
        message: message.to_string(),
    };
    match param {
        SweepParam::AdversarialFraction => {
            if !(0.0..=0.9).contains(&value) {
                return Err(reject("must lie in [0, 0.9]"));
            }
            cfg.counts = cfg.counts.with_adversarial_fraction(value);
        }
        SweepParam::Coordination => {
            if !(0.0..=1.0).contains(&value) {
                return Err(reject("must lie in [0, 1]"));
            }
            cfg.attack.coordination = value;
        }
        SweepParam::InjectionStrength => {
            if !(0.0..=1.0).contains(&value) {
                return Err(reject("must lie in [0, 1]"));
            }
            cfg.attack.injection_strength = value;
        }
        SweepParam::ShockMagnitude => {
            if !(value.is_finite() && value > 0.0) {
                return Err(reject("must be finite and positive"));
            }
            cfg.controller.shock_magnitude = value;
        }
    }
    Ok(())
}

/// One row of a sweep result table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub shock: ShockKind,
    pub method: Method,
    pub mean_peak_deviation: f64,
    pub mean_recovery_steps: f64,
    pub recovered_fraction: f64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub influence_reduction: Option<f64>,
}

/// `sweep` entry point; returns the path of the sweep CSV.
pub fn cmd_sweep(args: &SweepArgs) -> Result<PathBuf, CliError> {
    let base = resolve_config(&args.common)?;
    let out_dir = PathBuf::from(&base.run.out_dir);
    fs::create_dir_all(&out_dir)?;
    let mut rows: Vec<SweepRow> = Vec::new();
    for &value in &args.values {
        let mut cfg = base.clone();
        cfg.run.write_runs = false;
        apply_sweep_value(&mut cfg, args.param, value)?;
        cfg.validate()?;
        let output = run_batch(&cfg)?;
        for (&shock, by_method) in &output.summary.cells {
            for (&method, cell) in by_method {
                rows.push(SweepRow {
                    value,
                    shock,
                    method,
                    mean_peak_deviation: cell.mean_peak_deviation,
                    mean_recovery_steps: cell.mean_recovery_steps,
                    recovered_fraction: cell.recovered_fraction,
                    tpr: cell.detection.map(|d| d.tpr),
                    fpr: cell.detection.map(|d| d.fpr),
                    influence_reduction: cell.security.as_ref().map(|s| s.influence_reduction),
                });
            }
        }
    }
    let path = out_dir.join(format!("sweep_{}.csv", args.param.as_str()));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "value",
        "shock",
        "method",
        "mean_peak_deviation",
        "mean_recovery_steps",
        "recovered_fraction",
        "tpr",
        "fpr",
        "influence_reduction",
    ])?;
    for row in &rows {
        w.write_record([
            row.value.to_string(),
            row.shock.as_str().to_string(),
            row.method.as_str().to_string(),
            row.mean_peak_deviation.to_string(),
            row.mean_recovery_steps.to_string(),
            row.recovered_fraction.to_string(),
            fmt_opt(row.tpr),
            fmt_opt(row.fpr),
            fmt_opt(row.influence_reduction),
        ])?;
        println!(
            "{}={} {}/{}: peak {:.4}, recovery {:.1}",
            args.param.as_str(),
            row.value,
            row.shock.as_str(),
            row.method.as_str(),
            row.mean_peak_deviation,
            row.mean_recovery_steps
        );
    }
    w.flush()?;
    println!("sweep written to {}", path.display());
    Ok(path)
}

// ---------------------------------------------------------------------------
// Self-checks
// ---------------------------------------------------------------------------

type Check = (&'static str, fn() -> Result<(), String>);

fn check_trust_score_fixture() -> Result<(), String> {
    use crate::trust::{trust_score, TrustFeatures, TrustParams};
    let features = TrustFeatures {
        consistency: 0.5,
        profitability: 0.5,
        similarity: 1.0,
        destabilization: 0.3,
    };
    let score = trust_score(&features, &TrustParams::default());
    let expected = 0.310_025_518_872_387_55;
    if (score - expected).abs() > 1e-9 {
        return Err(format!("score {score} != {expected}"));
    }
    Ok(())
}

fn check_influence_bound_fixture() -> Result<(), String> {
    let bound = crate::risk::influence_bound(0.2, 0.35, 0.75);
    let expected = 0.07 / 0.67;
    if (bound - expected).abs() > 1e-12 {
        return Err(format!("bound {bound} != {expected}"));
    }
    Ok(())
}

fn check_markowitz_interior() -> Result<(), String> {
    use crate::optimizer::{markowitz_closed_form, PortfolioProblem};
    use nalgebra::DMatrix;
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let mu = vec![0.1, 0.0];
    let closed = markowitz_closed_form(&cov, &mu, 2.5).map_err(|e| e.to_string())?;
    let problem = PortfolioProblem {
        covariance: cov,
        expected_returns: mu,
        return_weight: 2.5,
        lower: vec![0.0; 2],
        upper: vec![1.0; 2],
        previous_weights: vec![0.5; 2],
        turnover_limit: None,
    };
    let sol = problem.solve().map_err(|e| e.to_string())?;
    for (a, b) in sol.weights.iter().zip(closed.iter()) {
        if (a - b).abs() > 1e-8 {
            return Err(format!("solver {a} vs closed form {b}"));
        }
    }
    if sol.kkt_residual > 1e-8 {
        return Err(format!("KKT residual {}", sol.kkt_residual));
    }
    Ok(())
}

fn check_covariance_blend_fixture() -> Result<(), String> {
    use nalgebra::DMatrix;
    let h = DMatrix::<f64>::identity(3, 3);
    let s = DMatrix::<f64>::identity(3, 3) * 7.17;
    let blended = crate::risk::blend_covariance(&h, &s, 0.5).map_err(|e| e.to_string())?;
    for i in 0..3 {
        if (blended[(i, i)] - 4.085).abs() > 1e-12 {
            return Err(format!("diagonal {} != 4.085", blended[(i, i)]));
        }
    }
    Ok(())
}

fn check_stress_covariance_oracle() -> Result<(), String> {
    use nalgebra::DMatrix;
    let run = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, -1.0, 1.0, 1.0, -1.0]);
    let cov = crate::risk::estimate_stress_covariance(&[run]).map_err(|e| e.to_string())?;
    let expected = [[4.0 / 3.0, -4.0 / 3.0], [-4.0 / 3.0, 4.0 / 3.0]];
    for i in 0..2 {
        for j in 0..2 {
            if (cov[(i, j)] - expected[i][j]).abs() > 1e-12 {
                return Err(format!(
                    "cov[{i},{j}] = {} != {}",
                    cov[(i, j)],
                    expected[i][j]
                ));
            }
        }
    }
    Ok(())
}

fn check_recovery_closed_form() -> Result<(), String> {
    use crate::metrics::{closed_form_recovery, recovery_time, Recovery};
    let gamma: f64 = 0.23;
    let delta0 = 0.1;
    let epsilon = 0.008;
    let series: Vec<f64> = (0..60)
        .map(|t| {
            if t < 5 {
                0.0
            } else {
                delta0 * (-gamma * (t - 5) as f64).exp()
            }
        })
        .collect();
    let iterated = match recovery_time(&series, 5, epsilon).map_err(|e| e.to_string())? {
        Recovery::Steps(k) => k,
        Recovery::NotRecovered => return Err("series never recovered".into()),
    };
    let formula = closed_form_recovery(delta0, epsilon, gamma).map_err(|e| e.to_string())?;
    if iterated.abs_diff(formula) > 1 {
        return Err(format!("iterated {iterated} vs formula {formula}"));
    }
    Ok(())
}

fn check_run_determinism() -> Result<(), String> {
    use crate::agents::{AttackConfig, BehaviorParams, PopulationCounts};
    use crate::controller::ControllerParams;
    use crate::market::MarketParams;
    use crate::risk::RiskParams;
    use crate::trust::TrustParams;
    let market = MarketParams::default();
    let behavior = BehaviorParams::default();
    let attack = AttackConfig::default();
    let counts = PopulationCounts::default();
    let trust = TrustParams::default();
    let risk = RiskParams::default();
    let controller = ControllerParams {
        horizon: 20,
        epoch_length: 10,
        shock_injection_step: 8,
        n_stress_sims: 2,
        stress_horizon: 12,
        stress_injection_step: 3,
        ..ControllerParams::default()
    };
    let run = || -> Result<String, String> {
        let spec = RunSpec {
            run_id: 0,
            seed: 1234,
            method: Method::Composer,
            shock: ShockKind::BlackThursday,
            forced_overrides: None,
            market: &market,
            behavior: &behavior,
            attack: &attack,
            counts: &counts,
            trust: &trust,
            risk: &risk,
            controller: &controller,
        };
        let result = run_trajectory(&spec).map_err(|e| e.to_string())?;
        serde_json::to_string(&result).map_err(|e| e.to_string())
    };
    if run()? != run()? {
        return Err("identical seeds produced different results".into());
    }
    Ok(())
}

/// Canary: corrupting the scoring weights must visibly break detection.
/// Guards against a detector that reports success regardless of input.
fn check_corrupted_weights_break_detection() -> Result<(), String> {
    use crate::trust::{detection_metrics, trust_score, TrustFeatures, TrustParams};
    let benign = TrustFeatures {
        consistency: 0.7,
        profitability: 0.8,
        similarity: 0.2,
        destabilization: 0.0,
    };
    let adversarial = TrustFeatures {
        consistency: -0.1,
        profitability: 0.3,
        similarity: 0.8,
        destabilization: 0.6,
    };
    let healthy = TrustParams::default();
    let mut corrupted = TrustParams::default();
    for w in corrupted.weights.iter_mut() {
        *w = -*w;
    }
    let labels = [false, true];
    let healthy_scores = [
        trust_score(&benign, &healthy),
        trust_score(&adversarial, &healthy),
    ];
    let corrupted_scores = [
        trust_score(&benign, &corrupted),
        trust_score(&adversarial, &corrupted),
    ];
    let healthy_rates = detection_metrics(&healthy_scores, &labels, healthy.threshold)
        .map_err(|e| e.to_string())?;
    let corrupted_rates = detection_metrics(&corrupted_scores, &labels, corrupted.threshold)
        .map_err(|e| e.to_string())?;
    if healthy_rates.tpr < 1.0 || healthy_rates.fpr > 0.0 {
        return Err(format!(
            "healthy weights failed the fixture: tpr {} fpr {}",
            healthy_rates.tpr, healthy_rates.fpr
        ));
    }
    if corrupted_rates.tpr > 0.0 {
        return Err(format!(
            "corrupted weights still detect (tpr {}): the metric is not sensitive to scoring",
            corrupted_rates.tpr
        ));
    }
    Ok(())
}

fn check_grid_agreement() -> Result<(), String> {
    use crate::optimizer::{grid_search_reference, PortfolioProblem};
    use nalgebra::DMatrix;
    let problem = PortfolioProblem {
        covariance: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.8]),
        expected_returns: vec![0.05, 0.01],
        return_weight: 2.5,
        lower: vec![0.05; 2],
        upper: vec![0.95; 2],
        previous_weights: vec![0.5; 2],
        turnover_limit: None,
    };
    let sol = problem.solve().map_err(|e| e.to_string())?;
    let (_, grid_obj) = grid_search_reference(&problem, 1e-3).map_err(|e| e.to_string())?;
    if (sol.objective - grid_obj).abs() > 1e-5 {
        return Err(format!(
            "solver objective {} vs grid {}",
            sol.objective, grid_obj
        ));
    }
    Ok(())
}

pub fn all_checks() -> Vec<Check> {
    vec![
        ("trust-score-fixture", check_trust_score_fixture),
        ("influence-bound-fixture", check_influence_bound_fixture),
        ("markowitz-interior", check_markowitz_interior),
        ("covariance-blend-fixture", check_covariance_blend_fixture),
        ("stress-covariance-oracle", check_stress_covariance_oracle),
        ("recovery-closed-form", check_recovery_closed_form),
        ("run-determinism", check_run_determinism),
        (
            "corrupted-trust-weights-break-detection",
            check_corrupted_weights_break_detection,
        ),
        ("grid-agreement", check_grid_agreement),
    ]
}

/// `verify` entry point.
pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let mut failed = 0usize;
    let mut total = 0usize;
    for (name, check) in all_checks() {
        if let Some(filter) = &args.filter {
            if !name.contains(filter.as_str()) {
                continue;
            }
        }
        total += 1;
        match check() {
            Ok(()) => println!("ok   {name}"),
            Err(message) => {
                failed += 1;
                println!("FAIL {name}: {message}");
            }
        }
    }
    if total == 0 {
        return Err(CliError::UnknownName {
            what: "check filter",
            value: args.filter.clone().unwrap_or_default(),
        });
    }
    if failed > 0 {
        return Err(CliError::Verification { failed, total });
    }
    println!("{total} checks passed");
    Ok(())
}

/// Routes a parsed command line to its implementation.
pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(args) => cmd_run(args).map(|_| ()),
        Command::Sweep(args) => cmd_sweep(args).map(|_| ()),
        Command::Verify(args) => cmd_verify(args),
    }
}
