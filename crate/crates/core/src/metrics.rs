//! Evaluation metrics.
//!
//! Per-cycle fault detection (NAPFD, NFR, NTTF) is computed against the full
//! suite's ground truth, which only the evaluator sees. Transition metrics
//! (recall and detection delay) are computed over the whole replay.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::{CycleSeries, TransitionKind, TransitionLabels, Verdict};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("NAPFD is undefined for an empty selection")]
    EmptySelection,
    #[error("NAPFD needs at least one fault in the full suite")]
    NoFaults,
    #[error("selection detects {detected} faults but the suite only has {total}")]
    TooManyFaults { detected: usize, total: usize },
    #[error("time budget must be positive, got {0}")]
    Budget(f64),
}

/// `p − Σ rank(fail) / (|fails|·|T′|) + p / (2·|T′|)` with `p` the detected
/// share of the full suite's faults; 0 when nothing is detected.
pub fn napfd(selected_failed: &[bool], total_faults: usize) -> Result<f64, MetricError> {
    let n = selected_failed.len();
    if n == 0 {
        return Err(MetricError::EmptySelection);
    }
    if total_faults == 0 {
        return Err(MetricError::NoFaults);
    }
    let (detected, rank_sum) = selected_failed
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .fold((0usize, 0usize), |(c, s), (i, _)| (c + 1, s + i + 1));
    if detected > total_faults {
        return Err(MetricError::TooManyFaults {
            detected,
            total: total_faults,
        });
    }
    if detected == 0 {
        return Ok(0.0);
    }
    let p = detected as f64 / total_faults as f64;
    let n = n as f64;
    Ok(p - rank_sum as f64 / (detected as f64 * n) + p / (2.0 * n))
}

/// Rank-based metric with an explicit flag for selections without failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstFailure {
    pub value: f64,
    pub missed: bool,
}

impl FirstFailure {
    const MISS: FirstFailure = FirstFailure {
        value: 1.0,
        missed: true,
    };
}

/// Share of the selection executed before the first failure.
pub fn nfr(selected_failed: &[bool]) -> FirstFailure {
    match selected_failed.iter().position(|&f| f) {
        Some(before) => FirstFailure {
            value: before as f64 / selected_failed.len() as f64,
            missed: false,
        },
        None => FirstFailure::MISS,
    }
}

/// Time spent before the first failure over the time budget, in `[0, 1]`.
/// The failing test's own duration is not included.
pub fn nttf(selected: &[(bool, u64)], time_budget_ms: f64) -> Result<FirstFailure, MetricError> {
    if time_budget_ms.is_nan() || time_budget_ms <= 0.0 {
        return Err(MetricError::Budget(time_budget_ms));
    }
    Ok(match selected.iter().position(|&(f, _)| f) {
        Some(first) => {
            let before: u64 = selected[..first].iter().map(|&(_, d)| d).sum();
            FirstFailure {
                value: (before as f64 / time_budget_ms).clamp(0.0, 1.0),
                missed: false,
            }
        }
        None => FirstFailure::MISS,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleEvaluation {
    pub total_faults: usize,
    pub detected_faults: usize,
    /// `None` when the full suite has no fault.
    pub napfd: Option<f64>,
    pub nfr: FirstFailure,
    pub nttf: FirstFailure,
}

/// Metrics of one selection, given in executed order as `(failed, duration)`.
pub fn evaluate_cycle(
    selected: &[(bool, u64)],
    total_faults: usize,
    time_budget_ms: f64,
) -> Result<CycleEvaluation, MetricError> {
    let failed: Vec<bool> = selected.iter().map(|&(f, _)| f).collect();
    let napfd = if total_faults == 0 {
        None
    } else {
        Some(napfd(&failed, total_faults)?)
    };
    Ok(CycleEvaluation {
        total_faults,
        detected_faults: failed.iter().filter(|&&f| f).count(),
        napfd,
        nfr: nfr(&failed),
        nttf: nttf(selected, time_budget_ms)?,
    })
}

/// What the policy executed in one cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleDecision {
    pub cycle_id: u64,
    pub selected: BTreeSet<String>,
    /// Whether the cycle counts towards transition metrics (warm-start cycles
    /// do not).
    pub evaluated: bool,
}

/// Percentage of relevant transitions in evaluated cycles whose target was
/// selected in that cycle; `None` without relevant transitions.
pub fn transition_recall(decisions: &[CycleDecision], labels: &TransitionLabels) -> Option<f64> {
    let by_cycle: HashMap<u64, &CycleDecision> = decisions
        .iter()
        .filter(|d| d.evaluated)
        .map(|d| (d.cycle_id, d))
        .collect();
    let (hit, total) = labels
        .iter()
        .filter(|(_, label)| label.kind == TransitionKind::Relevant)
        .filter_map(|((cycle_id, target), _)| by_cycle.get(cycle_id).map(|d| d.selected.contains(target)))
        .fold((0usize, 0usize), |(h, t), sel| (h + usize::from(sel), t + 1));
    (total > 0).then(|| 100.0 * hit as f64 / total as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayHistogram {
    /// Delay in cycles → number of relevant transitions detected with it.
    pub counts: BTreeMap<usize, u64>,
    pub undetected: u64,
}

impl DelayHistogram {
    pub fn detected(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Cycles until each relevant transition is observed by the policy.
///
/// `decisions` must be aligned with `series.cycles`. For a relevant
/// transition of target `g` at cycle `t`, the delay is the smallest `d ≥ 0`
/// such that `g` is selected at `t + d` and its verdict there differs from
/// the last verdict the policy observed for `g`. Observation stops at `g`'s
/// next labeled transition or the end of the replay; such transitions are
/// counted as undetected.
pub fn detection_delays(
    decisions: &[CycleDecision],
    labels: &TransitionLabels,
    series: &CycleSeries,
) -> DelayHistogram {
    assert_eq!(
        decisions.len(),
        series.cycles.len(),
        "decisions must cover every cycle of the series"
    );
    // Per target: (cycle position, verdict, selected) for non-ignored records.
    let mut runs: HashMap<&str, Vec<(usize, Verdict, bool)>> = HashMap::new();
    for (pos, (cycle, decision)) in series.cycles.iter().zip(decisions).enumerate() {
        for record in cycle.executed() {
            runs.entry(record.target.as_str()).or_default().push((
                pos,
                record.verdict(),
                decision.selected.contains(&record.target),
            ));
        }
    }

    let mut hist = DelayHistogram::default();
    for (target, runs) in &runs {
        for (i, &(pos, _, _)) in runs.iter().enumerate() {
            let cycle_id = series.cycles[pos].cycle_id;
            if !decisions[pos].evaluated
                || labels.kind(cycle_id, target) != TransitionKind::Relevant
            {
                continue;
            }
            let mut observed = runs[..i]
                .iter()
                .rev()
                .find(|r| r.2)
                .map(|r| r.1);
            let mut delay = None;
            for (j, &(later_pos, verdict, selected)) in runs.iter().enumerate().skip(i) {
                if j > i && labels.kind(series.cycles[later_pos].cycle_id, target) != TransitionKind::None {
                    break;
                }
                if !selected {
                    continue;
                }
                if observed.is_some_and(|seen| seen != verdict) {
                    delay = Some(later_pos - pos);
                    break;
                }
                observed = Some(verdict);
            }
            match delay {
                Some(d) => *hist.counts.entry(d).or_default() += 1,
                None => hist.undetected += 1,
            }
        }
    }
    hist
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(Summary {
        mean,
        std,
        count: values.len(),
    })
}
