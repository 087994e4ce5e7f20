//! Ground-truth transition labels.
//!
//! A transition is an execution whose verdict differs from the same target's
//! previous non-ignored verdict. It is flaky when one of the target's next
//! `flaky_window` executions switches back, and relevant otherwise. The window
//! counts executions of the target, not cycles.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{CycleSeries, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    None,
    Relevant,
    Flaky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionLabel {
    pub kind: TransitionKind,
    /// Fewer than `flaky_window` later executions existed, so the label was
    /// closed optimistically as relevant.
    pub tail_labeled: bool,
}

impl TransitionLabel {
    pub const NONE: TransitionLabel = TransitionLabel {
        kind: TransitionKind::None,
        tail_labeled: false,
    };
}

/// Labels keyed by `(cycle_id, target)` for every non-ignored record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionLabels {
    labels: BTreeMap<(u64, String), TransitionLabel>,
}

impl TransitionLabels {
    pub fn get(&self, cycle_id: u64, target: &str) -> Option<TransitionLabel> {
        // BTreeMap<(u64, String)> cannot be queried by (u64, &str) directly.
        self.labels.get(&(cycle_id, target.to_string())).copied()
    }

    pub fn kind(&self, cycle_id: u64, target: &str) -> TransitionKind {
        self.get(cycle_id, target)
            .map_or(TransitionKind::None, |label| label.kind)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u64, String), &TransitionLabel)> {
        self.labels.iter()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, kind: TransitionKind) -> usize {
        self.labels.values().filter(|l| l.kind == kind).count()
    }

    pub fn tail_labeled_count(&self) -> usize {
        self.labels.values().filter(|l| l.tail_labeled).count()
    }
}

/// Classifies one target's chronological verdict sequence (PASS/FAIL only).
pub fn classify_sequence(verdicts: &[Verdict], flaky_window: usize) -> Vec<TransitionLabel> {
    let mut labels = Vec::with_capacity(verdicts.len());
    for (i, &verdict) in verdicts.iter().enumerate() {
        if i == 0 || verdicts[i - 1] == verdict {
            labels.push(TransitionLabel::NONE);
            continue;
        }
        let lookahead = &verdicts[i + 1..verdicts.len().min(i + 1 + flaky_window)];
        let label = if lookahead.iter().any(|&later| later != verdict) {
            TransitionLabel {
                kind: TransitionKind::Flaky,
                tail_labeled: false,
            }
        } else {
            TransitionLabel {
                kind: TransitionKind::Relevant,
                tail_labeled: lookahead.len() < flaky_window,
            }
        };
        labels.push(label);
    }
    labels
}

pub fn label_transitions(series: &CycleSeries, flaky_window: usize) -> TransitionLabels {
    let mut per_target: HashMap<&str, Vec<(u64, Verdict)>> = HashMap::new();
    for cycle in &series.cycles {
        for record in cycle.executed() {
            per_target
                .entry(record.target.as_str())
                .or_default()
                .push((cycle.cycle_id, record.verdict()));
        }
    }

    let mut labels = BTreeMap::new();
    for (target, runs) in per_target {
        let verdicts: Vec<Verdict> = runs.iter().map(|&(_, v)| v).collect();
        for ((cycle_id, _), label) in runs.iter().zip(classify_sequence(&verdicts, flaky_window)) {
            labels.insert((*cycle_id, target.to_string()), label);
        }
    }
    TransitionLabels { labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CycleSeries, ExecutionRecord, Pipeline, RawStatus};
    use proptest::prelude::*;

    use TransitionKind::{Flaky, None as No, Relevant};

    fn parse(seq: &str) -> Vec<Verdict> {
        seq.split(',')
            .map(|c| match c {
                "P" => Verdict::Pass,
                "F" => Verdict::Fail,
                other => panic!("bad symbol {other}"),
            })
            .collect()
    }

    fn kinds(seq: &str) -> Vec<TransitionKind> {
        classify_sequence(&parse(seq), 3)
            .into_iter()
            .map(|l| l.kind)
            .collect()
    }

    #[test]
    fn persistent_failure_is_relevant() {
        assert_eq!(kinds("P,P,F,F,F,F"), vec![No, No, Relevant, No, No, No]);
    }

    #[test]
    fn one_cycle_blip_is_flaky() {
        let labels = classify_sequence(&parse("P,F,P"), 3);
        assert_eq!(labels[1].kind, Flaky);
        // The switch back has nothing after it: optimistic tail closure.
        assert_eq!(labels[2].kind, Relevant);
        assert!(labels[2].tail_labeled);
    }

    #[test]
    fn revert_after_window_is_relevant() {
        let labels = classify_sequence(&parse("P,F,F,F,F,P"), 3);
        let got: Vec<_> = labels.iter().map(|l| l.kind).collect();
        assert_eq!(got, vec![No, Relevant, No, No, No, Relevant]);
        assert!(!labels[1].tail_labeled);
        assert!(labels[5].tail_labeled);
    }

    #[test]
    fn revert_on_third_execution_is_flaky() {
        assert_eq!(kinds("P,F,F,F,P")[1], Flaky);
    }

    #[test]
    fn window_counts_executions_not_cycles() {
        let records = vec![
            rec(1, "//t:a", RawStatus::Passed),
            rec(2, "//t:a", RawStatus::Failed),
            rec(3, "//t:a", RawStatus::Timeout),
            rec(4, "//t:a", RawStatus::NoStatus),
            rec(5, "//t:a", RawStatus::Failed),
            rec(6, "//t:a", RawStatus::Flaky),
        ];
        let series = CycleSeries::from_records(Pipeline::PostSubmit, records);
        let labels = label_transitions(&series, 3);
        // cycle 6 is the second execution after the transition in cycle 2.
        assert_eq!(labels.kind(2, "//t:a"), Flaky);
        assert_eq!(labels.get(3, "//t:a"), None);
        assert_eq!(labels.kind(1, "//t:a"), No);
        assert_eq!(labels.len(), 4);
    }

    fn rec(cycle_id: u64, target: &str, status: RawStatus) -> ExecutionRecord {
        ExecutionRecord {
            cycle_id,
            target: target.into(),
            status,
            duration_ms: 1,
        }
    }

    proptest! {
        #[test]
        fn labels_match_verdict_changes(bits in proptest::collection::vec(any::<bool>(), 0..40),
                                        window in 1usize..6) {
            let verdicts: Vec<Verdict> = bits
                .iter()
                .map(|&f| if f { Verdict::Fail } else { Verdict::Pass })
                .collect();
            let labels = classify_sequence(&verdicts, window);
            let changes = verdicts.windows(2).filter(|w| w[0] != w[1]).count();
            let labeled = labels.iter().filter(|l| l.kind != No).count();
            prop_assert_eq!(changes, labeled);
            for (i, label) in labels.iter().enumerate() {
                if label.kind != No {
                    prop_assert!(i > 0 && verdicts[i] != verdicts[i - 1]);
                }
            }
        }
    }
}
