//! Per-target agent inputs.
//!
//! A feature vector concatenates, in this order:
//!
//! | slice             | length | content                                         |
//! |-------------------|--------|-------------------------------------------------|
//! | `result_history`  | `k`    | last `k` executed verdicts, newest first (FAIL=1) |
//! | `name_embedding`  | `d`    | PCA projection of the target name's word counts |
//! | `last_failure`    | 1      | cycles since last failure / horizon, capped at 1 |
//! | `last_execution`  | 1      | cycles since last execution / horizon, capped at 1 |
//! | `avg_duration`    | 1      | mean executed duration / suite p95, in `[0, 2]`  |
//!
//! Histories only ever contain runs the policy actually selected.

mod bow;
mod pca;

pub use bow::{bow_vector, tokenize_name, Vocabulary, TOKEN_RULE};
pub use pca::{fit_pca, project_pca, PcaModel};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::Verdict;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Replay cycle index (position in the series, not the raw cycle id).
    pub cycle: u64,
    pub failed: bool,
    pub duration_ms: u64,
}

/// Executed runs of one target in chronological order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestHistory {
    pub target: String,
    entries: Vec<HistoryEntry>,
    last_failure: Option<u64>,
    duration_sum_ms: u64,
}

impl TestHistory {
    pub fn new(target: impl Into<String>) -> Self {
        TestHistory {
            target: target.into(),
            entries: Vec::new(),
            last_failure: None,
            duration_sum_ms: 0,
        }
    }

    /// Appends an executed run. Ignored verdicts are dropped.
    pub fn record(&mut self, cycle: u64, verdict: Verdict, duration_ms: u64) {
        let failed = match verdict {
            Verdict::Ignored => return,
            Verdict::Fail => true,
            Verdict::Pass => false,
        };
        debug_assert!(self.entries.last().is_none_or(|e| e.cycle <= cycle));
        if failed {
            self.last_failure = Some(cycle);
        }
        self.duration_sum_ms += duration_ms;
        self.entries.push(HistoryEntry {
            cycle,
            failed,
            duration_ms,
        });
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_failure(&self) -> Option<u64> {
        self.last_failure
    }

    pub fn last_execution(&self) -> Option<u64> {
        self.entries.last().map(|e| e.cycle)
    }

    pub fn last_verdict(&self) -> Option<Verdict> {
        self.entries
            .last()
            .map(|e| if e.failed { Verdict::Fail } else { Verdict::Pass })
    }

    /// Most recent first.
    pub fn recent_failures(&self, n: usize) -> impl Iterator<Item = bool> + '_ {
        self.entries.iter().rev().take(n).map(|e| e.failed)
    }

    pub fn mean_duration_ms(&self) -> Option<f64> {
        if self.entries.is_empty() {
            None
        } else {
            Some(self.duration_sum_ms as f64 / self.entries.len() as f64)
        }
    }
}

/// Last `k` verdicts, newest first, FAIL=1 and PASS=0, zero-padded.
pub fn encode_history(history: &TestHistory, k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = history
        .recent_failures(k)
        .map(|f| if f { 1.0 } else { 0.0 })
        .collect();
    out.resize(k, 0.0);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub history_len: usize,
    pub pca_dim: usize,
    /// Cycles at which the recency features saturate at 1.
    pub horizon: f64,
    /// `avg_duration` for targets without any executed run.
    pub default_avg_duration: f64,
    pub max_avg_duration: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            history_len: 25,
            pca_dim: 16,
            horizon: 100.0,
            default_avg_duration: 1.0,
            max_avg_duration: 2.0,
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        self.history_len + self.pca_dim + 3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    history_len: usize,
    pca_dim: usize,
}

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn result_history(&self) -> &[f64] {
        &self.values[..self.history_len]
    }

    pub fn name_embedding(&self) -> &[f64] {
        &self.values[self.history_len..self.history_len + self.pca_dim]
    }

    pub fn last_failure(&self) -> f64 {
        self.values[self.history_len + self.pca_dim]
    }

    pub fn last_execution(&self) -> f64 {
        self.values[self.history_len + self.pca_dim + 1]
    }

    pub fn avg_duration(&self) -> f64 {
        self.values[self.history_len + self.pca_dim + 2]
    }
}

fn recency(now: u64, last: Option<u64>, horizon: f64) -> f64 {
    match last {
        None => 1.0,
        Some(last) => (now.saturating_sub(last) as f64 / horizon).min(1.0),
    }
}

/// Builds one target's feature vector at replay cycle `now`.
///
/// `duration_scale` is the suite's 95th-percentile average duration in ms
/// (see [`suite_duration_scale`]); `None` or a non-positive value makes
/// `avg_duration` fall back to the configured default.
pub fn assemble_features(
    history: &TestHistory,
    name_embedding: &[f64],
    now: u64,
    cfg: &FeatureConfig,
    duration_scale: Option<f64>,
) -> Result<FeatureVector, FeatureError> {
    if name_embedding.len() != cfg.pca_dim {
        return Err(FeatureError::DimensionMismatch {
            expected: cfg.pca_dim,
            found: name_embedding.len(),
        });
    }
    let mut values = encode_history(history, cfg.history_len);
    values.extend_from_slice(name_embedding);
    values.push(recency(now, history.last_failure(), cfg.horizon));
    values.push(recency(now, history.last_execution(), cfg.horizon));
    let avg = match (history.mean_duration_ms(), duration_scale) {
        (Some(mean), Some(scale)) if scale > 0.0 => (mean / scale).clamp(0.0, cfg.max_avg_duration),
        _ => cfg.default_avg_duration,
    };
    values.push(avg);
    debug_assert!(values.iter().all(|v| v.is_finite()));
    Ok(FeatureVector {
        values,
        history_len: cfg.history_len,
        pca_dim: cfg.pca_dim,
    })
}

/// Nearest-rank percentile, `q` in `(0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// 95th percentile of the mean durations of those targets that have run.
pub fn suite_duration_scale<'a, I>(histories: I) -> Option<f64>
where
    I: IntoIterator<Item = &'a TestHistory>,
{
    let means: Vec<f64> = histories
        .into_iter()
        .filter_map(TestHistory::mean_duration_ms)
        .collect();
    percentile(&means, 0.95)
}

/// Name preprocessing fitted once and then frozen: vocabulary plus PCA.
///
/// Embeddings are always `pca_dim` long. When the fitting corpus supports
/// fewer components (few distinct names or tokens) the tail is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameEncoder {
    pub vocabulary: Vocabulary,
    pub pca: Option<PcaModel>,
    pub pca_dim: usize,
}

impl NameEncoder {
    pub fn fit<'a, I>(names: I, pca_dim: usize) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let names: BTreeSet<&str> = names.into_iter().collect();
        let vocabulary = Vocabulary::fit(names.iter().copied());
        let rows: Vec<Vec<f64>> = names.iter().map(|n| bow_vector(n, &vocabulary)).collect();
        let fit_dim = pca_dim.min(rows.len().saturating_sub(1)).min(vocabulary.len());
        let pca = if fit_dim == 0 {
            None
        } else {
            Some(fit_pca(&rows, fit_dim)?)
        };
        Ok(NameEncoder {
            vocabulary,
            pca,
            pca_dim,
        })
    }

    pub fn embed(&self, name: &str) -> Vec<f64> {
        let mut out = match &self.pca {
            Some(pca) => pca
                .project(&bow_vector(name, &self.vocabulary))
                .expect("bag-of-words length equals vocabulary size"),
            None => Vec::new(),
        };
        out.resize(self.pca_dim, 0.0);
        out
    }
}
