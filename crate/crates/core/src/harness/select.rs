use serde::{Deserialize, Serialize};

/// Ranked targets cut to fit the budget. `order` indexes into the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub order: Vec<usize>,
    pub estimated_cost_ms: f64,
    pub cap_ms: f64,
}

/// Relative slack when comparing summed estimates against the cap, so a
/// budget of 1.0 never drops a target to rounding.
const CAP_SLACK: f64 = 1e-9;

/// Indices sorted by descending score, ties broken by name ascending.
pub fn rank_by_scores(scores: &[f64], names: &[&str]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| names[a].cmp(names[b]))
    });
    order
}

/// Walks the ranking and keeps every target whose estimate still fits under
/// `budget_fraction × full_suite_est_ms`; targets that would overflow are
/// skipped and the scan continues. The top-ranked target is always taken.
pub fn select_under_budget(
    ranked: &[usize],
    est_durations_ms: &[f64],
    budget_fraction: f64,
    full_suite_est_ms: f64,
) -> Selection {
    let cap_ms = budget_fraction * full_suite_est_ms;
    let limit = cap_ms * (1.0 + CAP_SLACK);
    let mut order = Vec::with_capacity(ranked.len());
    let mut used = 0.0;
    for (pos, &idx) in ranked.iter().enumerate() {
        let est = est_durations_ms[idx];
        if pos == 0 || used + est <= limit {
            order.push(idx);
            used += est;
        }
    }
    Selection {
        order,
        estimated_cost_ms: used,
        cap_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_budget_takes_everything() {
        let est = [0.1, 0.2, 0.3, 1e9, 7.0];
        let ranked = [4, 2, 0, 3, 1];
        let sel = select_under_budget(&ranked, &est, 1.0, est.iter().sum());
        assert_eq!(sel.order, ranked.to_vec());
    }

    #[test]
    fn half_budget_equal_durations() {
        let est = [10.0; 4];
        let sel = select_under_budget(&[3, 1, 0, 2], &est, 0.5, 40.0);
        assert_eq!(sel.order, vec![3, 1]);
        assert_eq!(sel.cap_ms, 20.0);
    }

    #[test]
    fn skips_overflowing_and_continues() {
        let est = [30.0, 30.0, 10.0];
        let sel = select_under_budget(&[0, 1, 2], &est, 40.0 / 70.0, 70.0);
        assert_eq!(sel.order, vec![0, 2]);
        assert_eq!(sel.estimated_cost_ms, 40.0);
    }

    #[test]
    fn first_target_is_mandatory() {
        let est = [100.0, 1.0, 1.0];
        let sel = select_under_budget(&[0, 1, 2], &est, 0.01, 102.0);
        assert_eq!(sel.order, vec![0]);
    }

    #[test]
    fn ties_broken_by_name() {
        let order = rank_by_scores(&[0.5, 0.9, 0.5, 0.1], &["//b", "//z", "//a", "//c"]);
        assert_eq!(order, vec![1, 2, 0, 3]);
    }

    proptest! {
        #[test]
        fn never_exceeds_cap_except_first(est in proptest::collection::vec(0.0f64..100.0, 1..20),
                                           budget in 0.01f64..=1.0) {
            let full: f64 = est.iter().sum();
            let ranked: Vec<usize> = (0..est.len()).rev().collect();
            let sel = select_under_budget(&ranked, &est, budget, full);
            prop_assert!(!sel.order.is_empty());
            prop_assert_eq!(sel.order[0], ranked[0]);
            if sel.order.len() > 1 {
                prop_assert!(sel.estimated_cost_ms <= sel.cap_ms * (1.0 + 1e-9));
            }
            // Selection preserves rank order.
            let positions: Vec<usize> = sel
                .order
                .iter()
                .map(|i| ranked.iter().position(|r| r == i).unwrap())
                .collect();
            prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
