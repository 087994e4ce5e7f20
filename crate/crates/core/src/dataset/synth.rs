//! Synthetic CI logs with known structure, used to verify the learning
//! pipeline end to end.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{CycleSeries, DatasetError, ExecutionRecord, Pipeline, RawStatus};
use crate::config::{ConfigError, FlatConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// A fixed subset of targets fails in every cycle after the warm-up prefix.
    DeterministicFailures,
    /// Independent failures with `failure_probability`.
    RandomNoise,
    /// Persistent failures plus a flaky subset failing at random.
    FlakyMix,
    /// Persistent verdict flips on a churn subset plus one-cycle blips on a
    /// flaky subset.
    TransitionChurn,
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic_failures" => Ok(Scenario::DeterministicFailures),
            "random_noise" => Ok(Scenario::RandomNoise),
            "flaky_mix" => Ok(Scenario::FlakyMix),
            "transition_churn" => Ok(Scenario::TransitionChurn),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::DeterministicFailures => "deterministic_failures",
            Scenario::RandomNoise => "random_noise",
            Scenario::FlakyMix => "flaky_mix",
            Scenario::TransitionChurn => "transition_churn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub pipeline: Pipeline,
    pub failure_probability: f64,
    /// Number of persistently failing targets (deterministic_failures, flaky_mix).
    pub always_fail: usize,
    /// Leading cycles without injected persistent failures.
    pub warmup_cycles: usize,
    pub flaky_fraction: f64,
    pub churn_fraction: f64,
    /// Per-cycle probability of a persistent flip (churn subset) and of a
    /// one-cycle blip (flaky subset).
    pub transition_rate: f64,
    /// Cycles a churn target keeps its verdict after flipping before it may
    /// flip again.
    pub churn_dwell: usize,
    pub ignored_probability: f64,
    /// Log-normal parameters of the per-target base duration in ms.
    pub duration_log_mean: f64,
    pub duration_log_std: f64,
    /// Log-normal sigma of per-execution jitter around the base duration.
    pub duration_jitter: f64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario) -> Self {
        ScenarioSpec {
            scenario,
            pipeline: match scenario {
                Scenario::TransitionChurn => Pipeline::PostSubmit,
                _ => Pipeline::PreSubmit,
            },
            failure_probability: 0.1,
            always_fail: 2,
            warmup_cycles: 0,
            flaky_fraction: 0.2,
            churn_fraction: 0.25,
            transition_rate: 0.1,
            churn_dwell: 4,
            ignored_probability: 0.01,
            duration_log_mean: 8.5,
            duration_log_std: 0.8,
            duration_jitter: 0.1,
        }
    }

    pub const KEYS: [&'static str; 13] = [
        "scenario",
        "pipeline",
        "failure_probability",
        "always_fail",
        "warmup_cycles",
        "flaky_fraction",
        "churn_fraction",
        "transition_rate",
        "churn_dwell",
        "ignored_probability",
        "duration_log_mean",
        "duration_log_std",
        "duration_jitter",
    ];

    /// Reads scenario parameters from a flat config; missing keys keep their
    /// defaults. `scenario` is required unless `fallback` is given.
    pub fn from_config(cfg: &FlatConfig, fallback: Option<Scenario>) -> Result<Self, ConfigError> {
        let scenario = match (cfg.get::<Scenario>("scenario")?, fallback) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => {
                return Err(ConfigError::Value {
                    key: "scenario".into(),
                    value: String::new(),
                    reason: "missing".into(),
                })
            }
        };
        let mut spec = ScenarioSpec::new(scenario);
        macro_rules! read {
            ($($field:ident),*) => {
                $(if let Some(v) = cfg.get(stringify!($field))? { spec.$field = v; })*
            };
        }
        read!(
            pipeline,
            failure_probability,
            always_fail,
            warmup_cycles,
            flaky_fraction,
            churn_fraction,
            transition_rate,
            churn_dwell,
            ignored_probability,
            duration_log_mean,
            duration_log_std,
            duration_jitter
        );
        Ok(spec)
    }

    fn validate(&self, cycles: usize, targets: usize) -> Result<(), DatasetError> {
        let param = |msg: String| Err(DatasetError::Parameter(msg));
        if cycles == 0 {
            return param("cycles must be positive".into());
        }
        if targets == 0 {
            return param("targets must be positive".into());
        }
        for (name, p) in [
            ("failure_probability", self.failure_probability),
            ("flaky_fraction", self.flaky_fraction),
            ("churn_fraction", self.churn_fraction),
            ("transition_rate", self.transition_rate),
            ("ignored_probability", self.ignored_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return param(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.always_fail > targets {
            return param(format!(
                "always_fail ({}) exceeds target count ({targets})",
                self.always_fail
            ));
        }
        if !self.duration_log_std.is_finite()
            || self.duration_log_std < 0.0
            || !self.duration_jitter.is_finite()
            || self.duration_jitter < 0.0
            || !self.duration_log_mean.is_finite()
        {
            return param("duration parameters must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Indices of persistently failing targets: evenly spaced, independent of the
/// seed.
pub fn always_fail_indices(targets: usize, count: usize) -> Vec<usize> {
    (0..count).map(|i| i * targets / count.max(1)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Stable,
    AlwaysFail,
    Churn,
    Flaky,
}

fn target_name(index: usize, role: Role) -> String {
    const COMPONENTS: [&str; 4] = ["componentA", "componentB", "componentC", "componentD"];
    let (area, kind) = match role {
        Role::Churn => ("platform", "integration"),
        Role::Flaky => ("tools", "system"),
        Role::Stable | Role::AlwaysFail => ("app", "unit"),
    };
    format!(
        "//{area}/{}/feature{index}:{kind}_tests",
        COMPONENTS[index % COMPONENTS.len()]
    )
}

fn roles(spec: &ScenarioSpec, targets: usize) -> Vec<Role> {
    let mut roles = vec![Role::Stable; targets];
    match spec.scenario {
        Scenario::DeterministicFailures | Scenario::FlakyMix => {
            for i in always_fail_indices(targets, spec.always_fail) {
                roles[i] = Role::AlwaysFail;
            }
            if spec.scenario == Scenario::FlakyMix {
                let flaky = (spec.flaky_fraction * targets as f64).round() as usize;
                roles
                    .iter_mut()
                    .rev()
                    .filter(|r| **r == Role::Stable)
                    .take(flaky)
                    .for_each(|r| *r = Role::Flaky);
            }
        }
        Scenario::TransitionChurn => {
            let churn = (spec.churn_fraction * targets as f64).round() as usize;
            let flaky = (spec.flaky_fraction * targets as f64).round() as usize;
            // Spread roles over the recorded order with a fixed hash ordering.
            let mut idx: Vec<usize> = (0..targets).collect();
            idx.sort_by_key(|&i| (i as u64).wrapping_mul(0x9e37_79b9) % (1 << 32));
            for &i in idx.iter().take(churn) {
                roles[i] = Role::Churn;
            }
            for &i in idx.iter().skip(churn).take(flaky) {
                roles[i] = Role::Flaky;
            }
        }
        Scenario::RandomNoise => {}
    }
    roles
}

pub fn generate_synthetic(
    spec: &ScenarioSpec,
    cycles: usize,
    targets: usize,
    seed: u64,
) -> Result<CycleSeries, DatasetError> {
    spec.validate(cycles, targets)?;
    let mut rng = seed::rng_for(seed, "synth", 0);
    let roles = roles(spec, targets);
    let names: Vec<String> = roles
        .iter()
        .enumerate()
        .map(|(i, &role)| target_name(i, role))
        .collect();

    let base = LogNormal::new(spec.duration_log_mean, spec.duration_log_std)
        .map_err(|e| DatasetError::Parameter(e.to_string()))?;
    let jitter = Normal::new(0.0, spec.duration_jitter)
        .map_err(|e| DatasetError::Parameter(e.to_string()))?;
    let base_ms: Vec<f64> = (0..targets).map(|_| base.sample(&mut rng)).collect();

    // Persistent state for churn targets (true = failing). Stable targets in
    // the churn scenario may start broken; the last stable one always is, so
    // every cycle carries at least one failure.
    let mut failing: Vec<bool> = roles
        .iter()
        .map(|&role| match (spec.scenario, role) {
            (Scenario::TransitionChurn, Role::Churn | Role::Stable) => {
                rng.random_bool(spec.failure_probability)
            }
            _ => false,
        })
        .collect();
    if spec.scenario == Scenario::TransitionChurn {
        if let Some(last) = roles.iter().rposition(|&r| r == Role::Stable) {
            failing[last] = true;
        }
    }

    let mut since_flip = vec![spec.churn_dwell; targets];
    let mut records = Vec::with_capacity(cycles * targets);
    for cycle in 0..cycles {
        let cycle_id = cycle as u64 + 1;
        for (i, name) in names.iter().enumerate() {
            let status = match spec.scenario {
                Scenario::DeterministicFailures => {
                    if roles[i] == Role::AlwaysFail && cycle >= spec.warmup_cycles {
                        RawStatus::Failed
                    } else {
                        RawStatus::Passed
                    }
                }
                Scenario::RandomNoise => {
                    if rng.random_bool(spec.ignored_probability) {
                        ignored_status(&mut rng)
                    } else if rng.random_bool(spec.failure_probability) {
                        RawStatus::Failed
                    } else {
                        RawStatus::Passed
                    }
                }
                Scenario::FlakyMix => match roles[i] {
                    Role::AlwaysFail if cycle >= spec.warmup_cycles => RawStatus::Failed,
                    Role::Flaky => {
                        if rng.random_bool(spec.failure_probability) {
                            RawStatus::Failed
                        } else if rng.random_bool(spec.failure_probability) {
                            RawStatus::Flaky
                        } else {
                            RawStatus::Passed
                        }
                    }
                    _ if rng.random_bool(spec.ignored_probability) => ignored_status(&mut rng),
                    _ => RawStatus::Passed,
                },
                Scenario::TransitionChurn => match roles[i] {
                    Role::Churn => {
                        if cycle > 0 && since_flip[i] >= spec.churn_dwell && rng.random_bool(spec.transition_rate) {
                            failing[i] = !failing[i];
                            since_flip[i] = 0;
                        }
                        since_flip[i] += 1;
                        status_of(failing[i])
                    }
                    Role::Flaky => status_of(cycle > 0 && rng.random_bool(spec.transition_rate)),
                    _ => status_of(failing[i]),
                },
            };
            let duration_ms = match status {
                RawStatus::NoStatus | RawStatus::FailedToBuild => 0,
                _ => (base_ms[i] * jitter.sample(&mut rng).exp()).round().max(1.0) as u64,
            };
            records.push(ExecutionRecord {
                cycle_id,
                target: name.clone(),
                status,
                duration_ms,
            });
        }
    }
    Ok(CycleSeries::from_records(spec.pipeline, records))
}

fn status_of(failing: bool) -> RawStatus {
    if failing {
        RawStatus::Failed
    } else {
        RawStatus::Passed
    }
}

fn ignored_status(rng: &mut seed::Rng) -> RawStatus {
    match rng.random_range(0..3) {
        0 => RawStatus::Timeout,
        1 => RawStatus::NoStatus,
        _ => RawStatus::FailedToBuild,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{filter_cycles, TransitionKind, Verdict};
    use std::collections::{BTreeSet, HashMap};

    #[test]
    fn deterministic_failures_fail_the_same_two() {
        let spec = ScenarioSpec::new(Scenario::DeterministicFailures);
        let series = generate_synthetic(&spec, 50, 10, 1).unwrap();
        assert_eq!(series.len(), 50);
        let mut failing = BTreeSet::new();
        for cycle in &series.cycles {
            assert_eq!(cycle.records.len(), 10);
            assert_eq!(cycle.fail_count(), 2);
            failing.extend(
                cycle
                    .records
                    .iter()
                    .filter(|r| r.status == RawStatus::Failed)
                    .map(|r| r.target.clone()),
            );
        }
        assert_eq!(failing.len(), 2);

        let other = generate_synthetic(&spec, 50, 10, 999).unwrap();
        let other_failing: BTreeSet<_> = other.cycles[0]
            .records
            .iter()
            .filter(|r| r.status == RawStatus::Failed)
            .map(|r| r.target.clone())
            .collect();
        assert_eq!(failing, other_failing);
    }

    #[test]
    fn warmup_prefix_has_no_failures() {
        let mut spec = ScenarioSpec::new(Scenario::DeterministicFailures);
        spec.warmup_cycles = 5;
        let series = generate_synthetic(&spec, 20, 8, 3).unwrap();
        assert!(series.cycles[..5].iter().all(|c| c.fail_count() == 0));
        assert!(series.cycles[5..].iter().all(|c| c.fail_count() == 2));
        assert_eq!(filter_cycles(&series, 6, true).len(), 15);
    }

    #[test]
    fn same_seed_same_bytes() {
        for scenario in [
            Scenario::DeterministicFailures,
            Scenario::RandomNoise,
            Scenario::FlakyMix,
            Scenario::TransitionChurn,
        ] {
            let spec = ScenarioSpec::new(scenario);
            let mut a = Vec::new();
            let mut b = Vec::new();
            generate_synthetic(&spec, 30, 12, 7).unwrap().write_csv(&mut a).unwrap();
            generate_synthetic(&spec, 30, 12, 7).unwrap().write_csv(&mut b).unwrap();
            assert_eq!(a, b, "{scenario}");
        }
        let spec = ScenarioSpec::new(Scenario::RandomNoise);
        assert_ne!(
            generate_synthetic(&spec, 30, 12, 7).unwrap(),
            generate_synthetic(&spec, 30, 12, 8).unwrap()
        );
    }

    #[test]
    fn zero_rate_churn_never_changes() {
        let mut spec = ScenarioSpec::new(Scenario::TransitionChurn);
        spec.transition_rate = 0.0;
        let series = generate_synthetic(&spec, 60, 20, 11).unwrap();
        let mut first: HashMap<&str, Verdict> = HashMap::new();
        for record in series.cycles.iter().flat_map(|c| &c.records) {
            let v = *first.entry(&record.target).or_insert(record.verdict());
            assert_eq!(v, record.verdict(), "{}", record.target);
        }
        assert!(series.cycles.iter().all(|c| c.fail_count() > 0));
    }

    #[test]
    fn churn_flips_outlast_the_window() {
        let mut spec = ScenarioSpec::new(Scenario::TransitionChurn);
        spec.transition_rate = 0.5;
        let series = generate_synthetic(&spec, 200, 20, 8).unwrap();
        let labels = crate::dataset::label_transitions(&series, 3);
        let churn: Vec<_> = labels
            .iter()
            .filter(|((_, target), l)| target.ends_with(":integration_tests") && l.kind != TransitionKind::None)
            .collect();
        assert!(churn.len() > 20);
        assert!(churn.iter().all(|(_, l)| l.kind == TransitionKind::Relevant));
    }

    #[test]
    fn churn_produces_transitions() {
        let spec = ScenarioSpec::new(Scenario::TransitionChurn);
        let series = generate_synthetic(&spec, 100, 20, 5).unwrap();
        let labels = crate::dataset::label_transitions(&series, 3);
        assert!(labels.count(crate::dataset::TransitionKind::Relevant) > 5);
        assert!(labels.count(crate::dataset::TransitionKind::Flaky) > 5);
    }

    #[test]
    fn parameter_errors() {
        let spec = ScenarioSpec::new(Scenario::RandomNoise);
        assert!(generate_synthetic(&spec, 0, 5, 1).is_err());
        assert!(generate_synthetic(&spec, 5, 0, 1).is_err());
        let mut bad = spec.clone();
        bad.failure_probability = 1.5;
        assert!(generate_synthetic(&bad, 5, 5, 1).is_err());
    }

    #[test]
    fn spec_from_config() {
        let cfg = FlatConfig::parse(
            "scenario=transition_churn\ntransition_rate=0.05\nchurn_fraction=0.5\n",
        )
        .unwrap();
        let spec = ScenarioSpec::from_config(&cfg, None).unwrap();
        assert_eq!(spec.scenario, Scenario::TransitionChurn);
        assert_eq!(spec.transition_rate, 0.05);
        assert_eq!(spec.churn_fraction, 0.5);
        assert_eq!(spec.pipeline, Pipeline::PostSubmit);
        assert!(ScenarioSpec::from_config(&FlatConfig::default(), None).is_err());
    }
}
