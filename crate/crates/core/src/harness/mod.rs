//! CI replay: cycles are processed in order, the policy only ever sees what
//! it chose to execute, and the evaluator scores each selection against the
//! full suite's recorded verdicts.

mod engine;
mod select;

pub use select::{rank_by_scores, select_under_budget, Selection};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, AgentError, AgentSnapshot};
use crate::dataset::{CycleSeries, Pipeline};
use crate::features::{FeatureConfig, FeatureError, NameEncoder};
use crate::metrics::{MetricError, Summary};
use crate::rewards::{RewardError, RewardKind, DEFAULT_ALPHA};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("checkpoint i/o: {0}")]
    Checkpoint(String),
}

impl HarnessError {
    /// Training failures abort a run with their own exit status.
    pub fn is_training_failure(&self) -> bool {
        matches!(self, HarnessError::Agent(AgentError::NonFiniteLoss(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Dqn,
    Random,
    Rocket,
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dqn" => Ok(PolicyKind::Dqn),
            "random" => Ok(PolicyKind::Random),
            "rocket" => Ok(PolicyKind::Rocket),
            other => Err(format!("unknown policy `{other}` (expected dqn, random or rocket)")),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Dqn => "dqn",
            PolicyKind::Random => "random",
            PolicyKind::Rocket => "rocket",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub pipeline: Pipeline,
    pub policy: PolicyKind,
    pub reward: RewardKind,
    /// Cost weight of CostRank.
    pub alpha: f64,
    pub budget: f64,
    pub seed: u64,
    /// Stream index mixed into every sub-seed; sweeps use the budget index.
    pub run_index: u64,
    /// `None` picks enough cycles to fill the replay buffer (at least 10,
    /// at most half the series).
    pub warm_start_cycles: Option<usize>,
    pub features: FeatureConfig,
    pub agent: AgentConfig,
    pub flaky_window: usize,
    pub random_repetitions: usize,
    pub also_full_rank: bool,
    /// Accept a reward that does not match the pipeline.
    pub force: bool,
    /// Evaluate a fixed policy: no training, no exploration, and histories
    /// fed from every recorded execution so the ranking does not depend on
    /// the budget.
    pub frozen: bool,
    /// Record a digest of the agent-visible history state per cycle.
    pub trace_histories: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            pipeline: Pipeline::PreSubmit,
            policy: PolicyKind::Dqn,
            reward: RewardKind::CostRank,
            alpha: DEFAULT_ALPHA,
            budget: 1.0,
            seed: 0,
            run_index: 0,
            warm_start_cycles: None,
            features: FeatureConfig::default(),
            agent: AgentConfig::default(),
            flaky_window: 3,
            random_repetitions: 10_000,
            also_full_rank: false,
            force: false,
            frozen: false,
            trace_histories: false,
        }
    }
}

impl ReplayConfig {
    pub fn for_pipeline(pipeline: Pipeline) -> Self {
        ReplayConfig {
            pipeline,
            reward: RewardKind::default_for(pipeline),
            ..ReplayConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return err(format!("budget must lie in (0, 1], got {}", self.budget));
        }
        if self.reward.pipeline() != self.pipeline && !self.force {
            return err(format!(
                "reward `{}` is meant for the {} pipeline, not {} (use --force to override)",
                self.reward,
                self.reward.pipeline(),
                self.pipeline
            ));
        }
        if self.flaky_window == 0 {
            return err("flaky window must be at least 1".into());
        }
        if self.random_repetitions == 0 {
            return err("random repetitions must be at least 1".into());
        }
        if self.features.history_len == 0 || self.features.horizon.is_nan() || self.features.horizon <= 0.0 {
            return err("history length and horizon must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        self.agent.exploration.validate()?;
        Ok(())
    }

    fn repetitions(&self) -> usize {
        match self.policy {
            PolicyKind::Random => self.random_repetitions,
            PolicyKind::Dqn | PolicyKind::Rocket => 1,
        }
    }
}

/// Warm-start length when not configured: enough cycles to fill the buffer,
/// at least 10, never more than half the series.
pub fn default_warm_start(series: &CycleSeries, buffer_capacity: usize) -> usize {
    if series.is_empty() {
        return 0;
    }
    let executed: usize = series.cycles.iter().map(|c| c.executed().count()).sum();
    let per_cycle = (executed as f64 / series.len() as f64).max(1.0);
    let fill = (buffer_capacity as f64 / per_cycle).ceil() as usize;
    fill.max(10).min(series.len() / 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle_id: u64,
    pub napfd: Option<f64>,
    pub nfr: f64,
    pub nttf: f64,
    /// Averaged over repetitions for RANDOM, hence fractional there.
    pub selected_count: f64,
    pub budget_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_rank: Option<FullRankReport>,
}

/// Prioritization quality of the complete ranking (100% budget).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullRankReport {
    pub napfd: Option<f64>,
    pub nfr: f64,
    pub nttf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub recall_pct: Option<f64>,
    /// Delay in cycles → detected relevant transitions (mean per repetition).
    pub delay_histogram: BTreeMap<usize, f64>,
    pub undetected_count: f64,
    pub relevant_count: usize,
    pub flaky_count: usize,
    pub tail_labeled_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissReport {
    /// Evaluated cycles with faults in the suite but none selected.
    pub no_fail_selected_cycles: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub train_steps: u64,
    pub experiences: u64,
    pub final_sigma: f64,
    /// Mean loss over the training steps of the last evaluated cycle that
    /// trained.
    pub last_mean_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub cycles: usize,
    pub records: usize,
    pub warm_start_cycles: usize,
    pub evaluated_cycles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub config: ReplayConfig,
    pub dataset: DatasetSummary,
    pub repetitions: usize,
    pub per_cycle: Vec<CycleReport>,
    pub aggregates: BTreeMap<String, Summary>,
    pub transitions: TransitionReport,
    pub misses: MissReport,
    pub training: Option<TrainingReport>,
    /// SHA-256 over every ranking and score the policy produced.
    pub trace_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_digests: Option<Vec<String>>,
}

impl ReplayReport {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregates.get(metric).map(|s| s.mean)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Mean of a per-cycle metric over the last `n` evaluated cycles.
    pub fn tail_mean(&self, n: usize, metric: impl Fn(&CycleReport) -> Option<f64>) -> Option<f64> {
        let start = self.per_cycle.len().saturating_sub(n);
        let values: Vec<f64> = self.per_cycle[start..].iter().filter_map(metric).collect();
        crate::metrics::summarize(&values).map(|s| s.mean)
    }
}

/// Agent and name preprocessing, enough to resume ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub agent: AgentSnapshot,
    pub names: NameEncoder,
    pub features: FeatureConfig,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
        if ckpt.version != Self::VERSION {
            return Err(HarnessError::Agent(AgentError::CheckpointVersion(ckpt.version)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|e| HarnessError::Checkpoint(e.to_string()))
    }
}

pub struct ReplayOutcome {
    pub report: ReplayReport,
    /// Final agent state (DQN only).
    pub checkpoint: Option<Checkpoint>,
}

pub fn run_replay(config: &ReplayConfig, series: &CycleSeries) -> Result<ReplayReport, HarnessError> {
    engine::run(config, series, None).map(|o| o.report)
}

/// Like [`run_replay`], optionally starting from a saved agent.
pub fn run_replay_from(
    config: &ReplayConfig,
    series: &CycleSeries,
    checkpoint: Option<Checkpoint>,
) -> Result<ReplayOutcome, HarnessError> {
    engine::run(config, series, checkpoint)
}

/// Independent replays per budget. Each run gets `run_index` = its position
/// in `budgets`, so its random streams differ from its siblings' but a
/// single-budget sweep equals a plain replay.
pub fn budget_sweep(
    config: &ReplayConfig,
    series: &CycleSeries,
    budgets: &[f64],
    workers: usize,
) -> Result<Vec<ReplayReport>, HarnessError> {
    let configs: Vec<ReplayConfig> = budgets
        .iter()
        .enumerate()
        .map(|(i, &budget)| ReplayConfig {
            budget,
            run_index: i as u64,
            ..config.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ReplayReport, HarnessError>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    let workers = workers.clamp(1, configs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = configs.get(i) else { break };
                let result = run_replay(cfg, series);
                results.lock().expect("sweep results lock")[i] = Some(result);
            });
        }
    });
    results
        .into_inner()
        .expect("sweep results lock")
        .into_iter()
        .map(|r| r.expect("every budget ran"))
        .collect()
}
