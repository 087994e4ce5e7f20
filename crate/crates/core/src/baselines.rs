//! Non-learning comparison policies.
//!
//! RANDOM shuffles the suite. ROCKET ranks by recency-weighted failures over
//! the last three executions and ignores execution time.

use rand::seq::SliceRandom;

use crate::features::TestHistory;
use crate::seed::Rng;

/// Uniform random permutation of `0..n` (Fisher–Yates).
pub fn random_prioritize(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Weights of the newest, second newest and third newest verdict.
pub const ROCKET_WEIGHTS: [f64; 3] = [0.7, 0.2, 0.1];

/// `Σ w_j · fail_j` over the most recent verdicts, newest first. Missing
/// entries count as passes.
pub fn rocket_priority<I: IntoIterator<Item = bool>>(recent_newest_first: I) -> f64 {
    recent_newest_first
        .into_iter()
        .zip(ROCKET_WEIGHTS)
        .fold(0.0, |acc, (failed, w)| if failed { acc + w } else { acc })
}

/// Indices of `suite` ordered by descending ROCKET priority, ties by name.
pub fn rocket_prioritize(suite: &[&TestHistory]) -> Vec<usize> {
    let priorities: Vec<f64> = suite
        .iter()
        .map(|h| rocket_priority(h.recent_failures(ROCKET_WEIGHTS.len())))
        .collect();
    let mut order: Vec<usize> = (0..suite.len()).collect();
    order.sort_by(|&a, &b| {
        priorities[b]
            .total_cmp(&priorities[a])
            .then_with(|| suite[a].target.cmp(&suite[b].target))
    });
    order
}
