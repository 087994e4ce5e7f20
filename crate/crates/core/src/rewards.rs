//! Per-test feedback once a cycle's executions have resolved.
//!
//! Pre-submit rewards (`costrank`, `rnfail`) look at failures and their
//! position in the executed order. Post-submit rewards (`costchangerank`,
//! `rnchange`) look at verdict transitions, whose labels need lookahead and
//! therefore may still be unresolved when the cycle ends.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Pipeline, TransitionKind, Verdict};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("reward needs a PASS or FAIL verdict, got {0:?}")]
    IgnoredVerdict(Verdict),
    #[error("transition label of `{0}` is not resolved yet")]
    UnresolvedLabel(String),
}

/// One executed test as seen after the cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledOutcome {
    pub target: String,
    /// 1-based position in the executed order.
    pub rank: usize,
    pub verdict: Verdict,
    pub duration_ms: u64,
    /// Total duration of the tests executed before this one.
    pub prefix_cost_ms: u64,
    pub suite_cost_ms: u64,
    /// `None` while the transition label is pending.
    pub transition: Option<TransitionKind>,
    /// Duration over the longest duration in the executed suite.
    pub normalized_duration: f64,
}

impl ScheduledOutcome {
    fn prefix_ratio(&self) -> f64 {
        if self.suite_cost_ms == 0 {
            0.0
        } else {
            self.prefix_cost_ms as f64 / self.suite_cost_ms as f64
        }
    }

    fn resolved(&self) -> Result<TransitionKind, RewardError> {
        self.transition
            .ok_or_else(|| RewardError::UnresolvedLabel(self.target.clone()))
    }

    fn failed(&self) -> Result<bool, RewardError> {
        match self.verdict {
            Verdict::Fail => Ok(true),
            Verdict::Pass => Ok(false),
            Verdict::Ignored => Err(RewardError::IgnoredVerdict(self.verdict)),
        }
    }
}

pub const DEFAULT_ALPHA: f64 = 0.9;

/// `1 − α·prefix/suite` for a failure, `−1 + α·prefix/suite` for a pass.
pub fn cost_rank(o: &ScheduledOutcome, alpha: f64) -> Result<f64, RewardError> {
    let penalty = alpha * o.prefix_ratio();
    Ok(if o.failed()? {
        1.0 - penalty
    } else {
        -1.0 + penalty
    })
}

pub fn rn_fail(o: &ScheduledOutcome) -> Result<f64, RewardError> {
    Ok(if o.failed()? { 1.0 } else { 0.0 })
}

pub fn cost_change_rank(o: &ScheduledOutcome) -> Result<f64, RewardError> {
    Ok(match o.resolved()? {
        TransitionKind::Flaky => -1.0,
        TransitionKind::Relevant => 1.0,
        TransitionKind::None => -o.normalized_duration,
    })
}

pub fn rn_change(o: &ScheduledOutcome) -> Result<f64, RewardError> {
    Ok(match o.resolved()? {
        TransitionKind::Flaky => -1.0,
        TransitionKind::Relevant => 1.0,
        TransitionKind::None => 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    CostRank,
    RnFail,
    CostChangeRank,
    RnChange,
}

impl RewardKind {
    pub fn pipeline(self) -> Pipeline {
        match self {
            RewardKind::CostRank | RewardKind::RnFail => Pipeline::PreSubmit,
            RewardKind::CostChangeRank | RewardKind::RnChange => Pipeline::PostSubmit,
        }
    }

    pub fn needs_transition(self) -> bool {
        self.pipeline() == Pipeline::PostSubmit
    }

    pub fn default_for(pipeline: Pipeline) -> Self {
        match pipeline {
            Pipeline::PreSubmit => RewardKind::CostRank,
            Pipeline::PostSubmit => RewardKind::CostChangeRank,
        }
    }

    pub fn reward(self, o: &ScheduledOutcome, alpha: f64) -> Result<f64, RewardError> {
        match self {
            RewardKind::CostRank => cost_rank(o, alpha),
            RewardKind::RnFail => rn_fail(o),
            RewardKind::CostChangeRank => cost_change_rank(o),
            RewardKind::RnChange => rn_change(o),
        }
    }
}

impl FromStr for RewardKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "costrank" => Ok(RewardKind::CostRank),
            "rnfail" => Ok(RewardKind::RnFail),
            "costchangerank" => Ok(RewardKind::CostChangeRank),
            "rnchange" => Ok(RewardKind::RnChange),
            other => Err(format!(
                "unknown reward `{other}` (expected costrank, rnfail, costchangerank or rnchange)"
            )),
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardKind::CostRank => "costrank",
            RewardKind::RnFail => "rnfail",
            RewardKind::CostChangeRank => "costchangerank",
            RewardKind::RnChange => "rnchange",
        })
    }
}

/// Outcomes for tests executed in the given order. Prefix costs exclude the
/// test's own duration; the suite cost is the total executed duration.
pub fn outcomes_in_order<'a, I>(executed: I) -> Vec<ScheduledOutcome>
where
    I: IntoIterator<Item = (&'a str, Verdict, u64)>,
{
    let runs: Vec<(&str, Verdict, u64)> = executed.into_iter().collect();
    let suite_cost_ms: u64 = runs.iter().map(|r| r.2).sum();
    let max_duration = runs.iter().map(|r| r.2).max().unwrap_or(0);
    let mut prefix = 0;
    runs.into_iter()
        .enumerate()
        .map(|(i, (target, verdict, duration_ms))| {
            let outcome = ScheduledOutcome {
                target: target.to_string(),
                rank: i + 1,
                verdict,
                duration_ms,
                prefix_cost_ms: prefix,
                suite_cost_ms,
                transition: None,
                normalized_duration: if max_duration == 0 {
                    0.0
                } else {
                    duration_ms as f64 / max_duration as f64
                },
            };
            prefix += duration_ms;
            outcome
        })
        .collect()
}
