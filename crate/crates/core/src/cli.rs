//! Command-line front end: `replay`, `sweep`, `synth` and `report`.
//!
//! Every flag except `--config` may also appear in the flat config file under
//! the same name; flags given on the command line win. Exit status is 0 on
//! success, 2 for usage or configuration errors, 3 for data and i/o errors
//! and 4 when training diverges.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::config::{ConfigError, FlatConfig};
use crate::dataset::{filter_cycles, generate_synthetic, load_dataset, DatasetError, ScenarioSpec};
use crate::harness::{budget_sweep, run_replay_from, Checkpoint, HarnessError, ReplayConfig, ReplayReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "rtopt", version, about = "Replay CI logs with learned test prioritization and selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay one dataset with one policy and budget.
    Replay(ReplayArgs),
    /// Replay one dataset at several budgets.
    Sweep(SweepArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Flatten report JSON into CSV plot data.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat key=value file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV (`cycle_id,target,status,duration_ms`).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// pre or post.
    #[arg(long)]
    pipeline: Option<String>,
    /// dqn, random or rocket.
    #[arg(long)]
    policy: Option<String>,
    /// costrank, rnfail, costchangerank or rnchange (default follows the pipeline).
    #[arg(long)]
    reward: Option<String>,
    /// Cost weight of costrank.
    #[arg(long)]
    alpha: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Leading cycles used to fill the replay buffer, or `auto`.
    #[arg(long)]
    warm_start: Option<String>,
    /// Executions that must keep a new verdict for a change to be relevant.
    #[arg(long)]
    flaky_window: Option<usize>,
    /// Repetitions averaged for the random policy.
    #[arg(long)]
    random_repetitions: Option<usize>,
    /// Also report metrics of the complete ranking.
    #[arg(long)]
    also_full_rank: bool,
    /// Accept a reward meant for the other pipeline.
    #[arg(long)]
    force: bool,
    /// Evaluate without training or exploration.
    #[arg(long)]
    frozen: bool,
    /// Record a digest of the policy-visible history per cycle.
    #[arg(long)]
    trace_histories: bool,
    /// Result-history length in the features.
    #[arg(long)]
    history_len: Option<usize>,
    /// Name-embedding dimension.
    #[arg(long)]
    pca_dim: Option<usize>,
    /// Cycles over which the recency features saturate.
    #[arg(long)]
    horizon: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    /// L2 coefficient on weights.
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    /// Initial exploration noise.
    #[arg(long)]
    sigma: Option<f64>,
    /// Per-cycle multiplicative noise decay.
    #[arg(long)]
    sigma_decay: Option<f64>,
    #[arg(long)]
    sigma_min: Option<f64>,
    /// Drop cycles with fewer executed targets.
    #[arg(long)]
    min_targets: Option<usize>,
    /// Drop cycles without a failure (true or false).
    #[arg(long)]
    require_failure: Option<bool>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Budget as a fraction of the estimated full-suite cost.
    #[arg(long)]
    budget: Option<f64>,
    /// Agent checkpoint; loaded if present, written after the run.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated budget fractions.
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<f64>>,
    /// Concurrent runs (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Flat key=value file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// deterministic_failures, random_noise, flaky_mix or transition_churn.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pipeline: Option<String>,
    #[arg(long)]
    failure_probability: Option<f64>,
    #[arg(long)]
    always_fail: Option<usize>,
    #[arg(long)]
    warmup_cycles: Option<usize>,
    #[arg(long)]
    flaky_fraction: Option<f64>,
    #[arg(long)]
    churn_fraction: Option<f64>,
    #[arg(long)]
    transition_rate: Option<f64>,
    /// Cycles a churn target holds its verdict after a flip.
    #[arg(long)]
    churn_dwell: Option<usize>,
    #[arg(long)]
    ignored_probability: Option<f64>,
    #[arg(long)]
    duration_log_mean: Option<f64>,
    #[arg(long)]
    duration_log_std: Option<f64>,
    #[arg(long)]
    duration_jitter: Option<f64>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report JSON from `replay` or `sweep`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Io(_)) => EXIT_DATA,
            CliError::Config(_) | CliError::Usage(_) => EXIT_USAGE,
            CliError::Harness(HarnessError::Config(_)) => EXIT_USAGE,
            CliError::Harness(e) if e.is_training_failure() => EXIT_TRAINING,
            CliError::Harness(_) | CliError::Dataset(_) | CliError::Io { .. } | CliError::Parse { .. } => {
                EXIT_DATA
            }
        }
    }
}

/// Parses `args` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let flags = command_line_flags(sub);
    let result = match name {
        "replay" => replay(name, &flags),
        "sweep" => sweep(name, &flags),
        "synth" => synth(name, &flags),
        "report" => report(&flags),
        other => unreachable!("unhandled subcommand {other}"),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Values the user typed, keyed by flag name, as raw strings.
fn command_line_flags(matches: &clap::ArgMatches) -> FlatConfig {
    let mut flags = FlatConfig::default();
    for id in matches.ids() {
        let id = id.as_str();
        if matches.value_source(id) != Some(ValueSource::CommandLine) {
            continue;
        }
        if let Ok(Some(raw)) = matches.try_get_raw(id) {
            let joined: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            flags.set(id, joined.join(","));
        }
    }
    flags
}

/// Flag names of a subcommand that may appear in its config file.
fn file_keys(subcommand: &str) -> Vec<String> {
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(subcommand).expect("known subcommand");
    sub.get_arguments()
        .map(|a| a.get_id().as_str().to_string())
        .filter(|id| id != "config" && id != "help")
        .collect()
}

fn merged(subcommand: &str, flags: &FlatConfig) -> Result<FlatConfig, CliError> {
    let file = match flags.raw("config") {
        Some(path) => {
            let file = FlatConfig::load(Path::new(path))?;
            let keys = file_keys(subcommand);
            file.check_keys(&keys.iter().map(String::as_str).collect::<Vec<_>>())?;
            file
        }
        None => FlatConfig::default(),
    };
    Ok(file.overlay(flags))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|v| {
            v.trim().parse().map_err(|e: std::num::ParseIntError| ConfigError::Value {
                key: key.into(),
                value: value.into(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Builds a replay configuration from merged flags and file entries.
pub fn replay_config(cfg: &FlatConfig) -> Result<ReplayConfig, ConfigError> {
    let mut rc = match cfg.get("pipeline")? {
        Some(p) => ReplayConfig::for_pipeline(p),
        None => ReplayConfig::default(),
    };
    macro_rules! read {
        ($($key:literal => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = cfg.get($key)? { rc.$($field).+ = v; })*
        };
    }
    read!(
        "policy" => policy,
        "reward" => reward,
        "alpha" => alpha,
        "budget" => budget,
        "seed" => seed,
        "flaky_window" => flaky_window,
        "random_repetitions" => random_repetitions,
        "also_full_rank" => also_full_rank,
        "force" => force,
        "frozen" => frozen,
        "trace_histories" => trace_histories,
        "history_len" => features.history_len,
        "pca_dim" => features.pca_dim,
        "horizon" => features.horizon,
        "dropout" => agent.dropout,
        "l2" => agent.l2,
        "learning_rate" => agent.learning_rate,
        "batch_size" => agent.batch_size,
        "buffer_capacity" => agent.buffer_capacity,
        "sigma" => agent.exploration.sigma,
        "sigma_decay" => agent.exploration.decay,
        "sigma_min" => agent.exploration.sigma_min,
    );
    if let Some(w) = cfg.raw("warm_start") {
        rc.warm_start_cycles = if w == "auto" { None } else { cfg.get("warm_start")? };
    }
    if let Some(h) = cfg.raw("hidden") {
        rc.agent.hidden = parse_list("hidden", h)?;
    }
    Ok(rc)
}

fn write_output(path: Option<&str>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, contents).map_err(|source| CliError::Io {
            path: p.to_string(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())
                .and_then(|()| out.flush())
                .map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

fn load_series(cfg: &FlatConfig, rc: &ReplayConfig) -> Result<crate::dataset::CycleSeries, CliError> {
    let path = cfg
        .raw("dataset")
        .ok_or_else(|| CliError::Usage("--dataset is required".into()))?;
    let series = load_dataset(Path::new(path), rc.pipeline)?;
    let min_targets = cfg.get("min_targets")?.unwrap_or(6);
    let require_failure = cfg.get("require_failure")?.unwrap_or(true);
    Ok(filter_cycles(&series, min_targets, require_failure))
}

fn summary_line(r: &ReplayReport) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    format!(
        "budget {} policy {}: napfd {} nfr {} nttf {} recall% {} over {} cycles",
        r.config.budget,
        r.config.policy,
        fmt(r.mean("napfd")),
        fmt(r.mean("nfr")),
        fmt(r.mean("nttf")),
        fmt(r.transitions.recall_pct),
        r.dataset.evaluated_cycles,
    )
}

fn replay(name: &str, flags: &FlatConfig) -> Result<(), CliError> {
    let cfg = merged(name, flags)?;
    let rc = replay_config(&cfg)?;
    rc.validate()?;
    let series = load_series(&cfg, &rc)?;
    let checkpoint_path = cfg.raw("checkpoint").map(PathBuf::from);
    let checkpoint = match &checkpoint_path {
        Some(p) if p.exists() => Some(Checkpoint::load(p)?),
        _ => None,
    };
    let outcome = run_replay_from(&rc, &series, checkpoint)?;
    if let (Some(path), Some(ckpt)) = (&checkpoint_path, &outcome.checkpoint) {
        ckpt.save(path)?;
    }
    eprintln!("{}", summary_line(&outcome.report));
    write_output(cfg.raw("out"), &(outcome.report.to_json() + "\n"))
}

fn sweep(name: &str, flags: &FlatConfig) -> Result<(), CliError> {
    let cfg = merged(name, flags)?;
    let rc = replay_config(&cfg)?;
    let budgets: Vec<f64> = match cfg.raw("budgets") {
        Some(list) => list
            .split(',')
            .map(|b| {
                b.trim().parse::<f64>().map_err(|e| ConfigError::Value {
                    key: "budgets".into(),
                    value: list.into(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?,
        None => vec![0.1, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0],
    };
    if budgets.is_empty() {
        return Err(CliError::Usage("--budgets is empty".into()));
    }
    let workers = match cfg.get::<usize>("workers")? {
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, usize::from),
    };
    for &budget in &budgets {
        ReplayConfig { budget, ..rc.clone() }.validate()?;
    }
    let series = load_series(&cfg, &rc)?;
    let reports = budget_sweep(&rc, &series, &budgets, workers)?;
    for r in &reports {
        eprintln!("{}", summary_line(r));
    }
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    write_output(cfg.raw("out"), &(json + "\n"))
}

fn synth(name: &str, flags: &FlatConfig) -> Result<(), CliError> {
    let cfg = merged(name, flags)?;
    let spec = ScenarioSpec::from_config(&cfg, None)?;
    let cycles = cfg.get("cycles")?.unwrap_or(100);
    let targets = cfg.get("targets")?.unwrap_or(10);
    let seed = cfg.get("seed")?.unwrap_or(0);
    let series = generate_synthetic(&spec, cycles, targets, seed)?;
    let mut buf = Vec::new();
    series.write_csv(&mut buf)?;
    write_output(cfg.raw("out"), &String::from_utf8(buf).expect("csv is utf-8"))
}

const REPORT_METRICS: [&str; 5] = ["napfd", "nfr", "nttf", "selected_count", "budget_ms"];

/// CSV rows `budget,cycle_id,metric,value`, one per cycle and metric; a
/// missing value (NAPFD of a fault-free cycle) is left empty.
pub fn flatten_reports(reports: &[ReplayReport]) -> String {
    let mut out = String::from("budget,cycle_id,metric,value\n");
    for r in reports {
        for c in &r.per_cycle {
            let values = [c.napfd, Some(c.nfr), Some(c.nttf), Some(c.selected_count), Some(c.budget_ms)];
            for (metric, value) in REPORT_METRICS.iter().zip(values) {
                let value = value.map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!("{},{},{metric},{value}\n", r.config.budget, c.cycle_id));
            }
        }
    }
    out
}

fn report(flags: &FlatConfig) -> Result<(), CliError> {
    let input = flags.raw("input").expect("--in is required by the parser");
    let text = std::fs::read_to_string(input).map_err(|source| CliError::Io {
        path: input.to_string(),
        source,
    })?;
    let parse_err = |e: serde_json::Error| CliError::Parse {
        path: input.to_string(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    let reports: Vec<ReplayReport> = if value.is_array() {
        serde_json::from_value(value).map_err(parse_err)?
    } else {
        vec![serde_json::from_value(value).map_err(parse_err)?]
    };
    write_output(flags.raw("csv"), &flatten_reports(&reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_flag_is_a_file_key() {
        let replay = file_keys("replay");
        for key in ["dataset", "budget", "checkpoint", "sigma_decay", "also_full_rank", "out"] {
            assert!(replay.iter().any(|k| k == key), "{key}");
        }
        assert!(!replay.iter().any(|k| k == "config"));
        assert!(file_keys("sweep").iter().any(|k| k == "budgets"));
        assert!(file_keys("synth").iter().any(|k| k == "transition_rate"));
    }

    #[test]
    fn flags_and_file_build_the_same_config() {
        let args = [
            "rtopt", "replay", "--pipeline", "post", "--policy", "random", "--budget", "0.4", "--seed", "9",
            "--hidden", "8,4", "--warm-start", "12", "--also-full-rank", "--sigma-decay", "0.99",
        ];
        let matches = Cli::command().try_get_matches_from(args).unwrap();
        let flags = command_line_flags(matches.subcommand().unwrap().1);
        let from_flags = replay_config(&flags).unwrap();

        let file = FlatConfig::parse(
            "pipeline=post\npolicy=random\nbudget=0.4\nseed=9\nhidden=8,4\nwarm-start=12\nalso_full_rank=true\nsigma_decay=0.99\n",
        )
        .unwrap();
        assert_eq!(replay_config(&file).unwrap(), from_flags);
        assert_eq!(from_flags.agent.hidden, vec![8, 4]);
        assert_eq!(from_flags.warm_start_cycles, Some(12));
        assert_eq!(from_flags.reward, crate::rewards::RewardKind::CostChangeRank);
        assert!(from_flags.also_full_rank);
    }

    #[test]
    fn unset_flags_are_not_recorded() {
        let matches = Cli::command()
            .try_get_matches_from(["rtopt", "replay", "--budget", "0.5"])
            .unwrap();
        let flags = command_line_flags(matches.subcommand().unwrap().1);
        assert_eq!(flags.keys().collect::<Vec<_>>(), vec!["budget"]);
    }
}
