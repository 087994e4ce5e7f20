use std::collections::{BTreeMap, BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use super::{
    default_warm_start, rank_by_scores, select_under_budget, Checkpoint, CycleReport, DatasetSummary,
    FullRankReport, HarnessError, MissReport, PolicyKind, ReplayConfig, ReplayOutcome, ReplayReport,
    Selection, TrainingReport, TransitionReport,
};
use crate::agent::{Agent, Experience};
use crate::baselines::{random_prioritize, rocket_prioritize};
use crate::dataset::{label_transitions, CycleSeries, ExecutionRecord, TransitionKind, TransitionLabels, Verdict};
use crate::features::{assemble_features, percentile, suite_duration_scale, NameEncoder, TestHistory};
use crate::metrics::{
    detection_delays, evaluate_cycle, summarize, transition_recall, CycleDecision, CycleEvaluation,
};
use crate::rewards::{outcomes_in_order, ScheduledOutcome};
use crate::seed::{derive_seed, rng_for, Rng};

/// A transition reward waiting for the rest of its window.
struct PendingReward {
    state: Vec<f64>,
    action_score: f64,
    outcome: ScheduledOutcome,
    /// Last cycle position inside the window.
    due_pos: usize,
}

struct EvaluatedCycle {
    cycle_id: u64,
    eval: CycleEvaluation,
    selected: usize,
    cap_ms: f64,
    full_rank: Option<CycleEvaluation>,
}

struct SingleRun {
    cycles: Vec<EvaluatedCycle>,
    decisions: Vec<CycleDecision>,
    trace: [u8; 32],
    history_digests: Option<Vec<String>>,
    agent: Option<Agent>,
    train_steps: u64,
    experiences: u64,
    last_mean_loss: Option<f64>,
}

struct Replayer<'a> {
    config: &'a ReplayConfig,
    series: &'a CycleSeries,
    names: &'a NameEncoder,
    embeddings: HashMap<String, Vec<f64>>,
    histories: BTreeMap<String, TestHistory>,
    agent: Option<Agent>,
    pending: Vec<PendingReward>,
    policy_rng: Rng,
    train_rng: Rng,
    trace: Sha256,
    history_digests: Option<Vec<String>>,
    train_steps: u64,
    experiences: u64,
    last_mean_loss: Option<f64>,
}

impl<'a> Replayer<'a> {
    fn embedding(&mut self, name: &str) -> Vec<f64> {
        if let Some(e) = self.embeddings.get(name) {
            return e.clone();
        }
        let e = self.names.embed(name);
        self.embeddings.insert(name.to_string(), e.clone());
        e
    }

    fn states(&mut self, suite: &[&ExecutionRecord], now: u64) -> Result<Vec<Vec<f64>>, HarnessError> {
        let scale = suite_duration_scale(suite.iter().filter_map(|r| self.histories.get(&r.target)));
        let empty = TestHistory::new("");
        suite
            .iter()
            .map(|r| {
                let embedding = self.embedding(&r.target);
                let history = self.histories.get(&r.target).unwrap_or(&empty);
                Ok(assemble_features(history, &embedding, now, &self.config.features, scale)?.into_vec())
            })
            .collect()
    }

    /// Historical mean durations; unseen targets get the median of the known
    /// ones, or 1 ms when nothing is known.
    fn estimates(&self, suite: &[&ExecutionRecord]) -> Vec<f64> {
        let known: Vec<Option<f64>> = suite
            .iter()
            .map(|r| self.histories.get(&r.target).and_then(TestHistory::mean_duration_ms))
            .collect();
        let means: Vec<f64> = known.iter().flatten().copied().collect();
        let fallback = percentile(&means, 0.5).unwrap_or(1.0);
        known.into_iter().map(|k| k.unwrap_or(fallback)).collect()
    }

    fn history_digest(&self) -> String {
        let mut h = Sha256::new();
        for (target, history) in &self.histories {
            h.update(target.as_bytes());
            h.update([0]);
            for e in history.entries() {
                h.update(e.cycle.to_le_bytes());
                h.update([u8::from(e.failed)]);
                h.update(e.duration_ms.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn rank(
        &mut self,
        suite: &[&ExecutionRecord],
        states: &[Vec<f64>],
        warm: bool,
    ) -> Result<(Vec<usize>, Vec<f64>), HarnessError> {
        let n = suite.len();
        if warm {
            let scores = match &self.agent {
                Some(agent) => states.iter().map(|s| agent.forward(s)).collect::<Result<_, _>>()?,
                None => vec![0.0; n],
            };
            return Ok(((0..n).collect(), scores));
        }
        Ok(match self.config.policy {
            PolicyKind::Dqn => {
                let agent = self.agent.as_ref().expect("dqn policy has an agent");
                let scores = agent.score_suite(
                    states.iter().map(Vec::as_slice),
                    !self.config.frozen,
                    &mut self.policy_rng,
                )?;
                let names: Vec<&str> = suite.iter().map(|r| r.target.as_str()).collect();
                (rank_by_scores(&scores, &names), scores)
            }
            PolicyKind::Random => (random_prioritize(n, &mut self.policy_rng), vec![0.0; n]),
            PolicyKind::Rocket => {
                let unseen: Vec<TestHistory> = suite.iter().map(|r| TestHistory::new(r.target.clone())).collect();
                let refs: Vec<&TestHistory> = suite
                    .iter()
                    .zip(&unseen)
                    .map(|(r, u)| self.histories.get(&r.target).unwrap_or(u))
                    .collect();
                (rocket_prioritize(&refs), vec![0.0; n])
            }
        })
    }

    fn push(&mut self, state: Vec<f64>, action_score: f64, outcome: &ScheduledOutcome) -> Result<(), HarnessError> {
        let reward = self.config.reward.reward(outcome, self.config.alpha)?;
        let agent = self.agent.as_mut().expect("rewards are only routed to an agent");
        agent.push_experience(Experience {
            state,
            action_score,
            reward,
            next_state: None,
        })?;
        self.experiences += 1;
        Ok(())
    }

    /// Turns this cycle's executions into experiences. Transition rewards are
    /// judged only from verdicts the policy itself observed: a change from the
    /// last executed verdict is flaky if an execution within the next
    /// `flaky_window` cycles shows a different verdict, relevant otherwise.
    fn route_rewards(
        &mut self,
        pos: usize,
        outcomes: &[ScheduledOutcome],
        states: &[Vec<f64>],
        scores: &[f64],
        order: &[usize],
    ) -> Result<(), HarnessError> {
        if !self.config.reward.needs_transition() {
            for (outcome, &i) in outcomes.iter().zip(order) {
                self.push(states[i].clone(), scores[i], outcome)?;
            }
            return Ok(());
        }

        let verdicts: HashMap<&str, Verdict> = outcomes.iter().map(|o| (o.target.as_str(), o.verdict)).collect();
        let mut resolved = Vec::new();
        let mut waiting = Vec::new();
        for mut p in std::mem::take(&mut self.pending) {
            let kind = match verdicts.get(p.outcome.target.as_str()) {
                Some(&v) if v != p.outcome.verdict => Some(TransitionKind::Flaky),
                _ if pos >= p.due_pos => Some(TransitionKind::Relevant),
                _ => None,
            };
            match kind {
                Some(k) => {
                    p.outcome.transition = Some(k);
                    resolved.push(p);
                }
                None => waiting.push(p),
            }
        }
        self.pending = waiting;
        for p in resolved {
            self.push(p.state, p.action_score, &p.outcome)?;
        }

        for (outcome, &i) in outcomes.iter().zip(order) {
            let previous = self.histories.get(&outcome.target).and_then(TestHistory::last_verdict);
            match previous {
                Some(prev) if prev != outcome.verdict => self.pending.push(PendingReward {
                    state: states[i].clone(),
                    action_score: scores[i],
                    outcome: outcome.clone(),
                    due_pos: pos + self.config.flaky_window,
                }),
                _ => {
                    let mut o = outcome.clone();
                    o.transition = Some(TransitionKind::None);
                    self.push(states[i].clone(), scores[i], &o)?;
                }
            }
        }
        Ok(())
    }

    fn step(&mut self, pos: usize, warm: bool) -> Result<(CycleDecision, Option<EvaluatedCycle>), HarnessError> {
        let cycle = &self.series.cycles[pos];
        let suite: Vec<&ExecutionRecord> = cycle.executed().collect();
        let now = pos as u64;
        if !warm && self.history_digests.is_some() {
            let digest = self.history_digest();
            if let Some(digests) = &mut self.history_digests {
                digests.push(digest);
            }
        }
        let states = if self.agent.is_some() {
            self.states(&suite, now)?
        } else {
            Vec::new()
        };

        let (ranking, scores) = self.rank(&suite, &states, warm)?;
        let estimates = self.estimates(&suite);
        let full_est: f64 = estimates.iter().sum();
        let selection = if warm {
            Selection {
                order: ranking.clone(),
                estimated_cost_ms: full_est,
                cap_ms: full_est,
            }
        } else if suite.is_empty() {
            Selection {
                order: Vec::new(),
                estimated_cost_ms: 0.0,
                cap_ms: 0.0,
            }
        } else {
            select_under_budget(&ranking, &estimates, self.config.budget, full_est)
        };

        if !warm {
            self.trace.update(cycle.cycle_id.to_le_bytes());
            for &i in &ranking {
                self.trace.update((i as u64).to_le_bytes());
            }
            for s in &scores {
                self.trace.update(s.to_bits().to_le_bytes());
            }
            self.trace.update((selection.order.len() as u64).to_le_bytes());
        }

        let outcomes = outcomes_in_order(
            selection
                .order
                .iter()
                .map(|&i| (suite[i].target.as_str(), suite[i].verdict(), suite[i].duration_ms)),
        );
        if self.agent.is_some() && !self.config.frozen {
            self.route_rewards(pos, &outcomes, &states, &scores, &selection.order)?;
        }

        let revealed: Vec<&ExecutionRecord> = if self.config.frozen {
            suite.clone()
        } else {
            selection.order.iter().map(|&i| suite[i]).collect()
        };
        for r in revealed {
            self.histories
                .entry(r.target.clone())
                .or_insert_with(|| TestHistory::new(r.target.clone()))
                .record(now, r.verdict(), r.duration_ms);
        }

        let decision = CycleDecision {
            cycle_id: cycle.cycle_id,
            selected: selection.order.iter().map(|&i| suite[i].target.clone()).collect::<BTreeSet<_>>(),
            evaluated: !warm,
        };
        if warm {
            return Ok((decision, None));
        }

        if let Some(agent) = self.agent.as_mut().filter(|_| !self.config.frozen) {
            let mut losses = Vec::new();
            for _ in 0..selection.order.len() {
                if let Some(loss) = agent.train_from_buffer(&mut self.train_rng)? {
                    losses.push(loss);
                }
            }
            if !losses.is_empty() {
                self.train_steps += losses.len() as u64;
                self.last_mean_loss = Some(losses.iter().sum::<f64>() / losses.len() as f64);
            }
            agent.end_cycle();
        }

        let total_faults = suite.iter().filter(|r| r.verdict().is_fail()).count();
        let full_duration = (suite.iter().map(|r| r.duration_ms).sum::<u64>() as f64).max(1.0);
        let pairs = |order: &[usize]| -> Vec<(bool, u64)> {
            order
                .iter()
                .map(|&i| (suite[i].verdict().is_fail(), suite[i].duration_ms))
                .collect()
        };
        let eval = evaluate_cycle(&pairs(&selection.order), total_faults, self.config.budget * full_duration)?;
        let full_rank = if self.config.also_full_rank {
            Some(evaluate_cycle(&pairs(&ranking), total_faults, full_duration)?)
        } else {
            None
        };
        Ok((
            decision,
            Some(EvaluatedCycle {
                cycle_id: cycle.cycle_id,
                eval,
                selected: selection.order.len(),
                cap_ms: selection.cap_ms,
                full_rank,
            }),
        ))
    }
}

fn run_single(
    config: &ReplayConfig,
    series: &CycleSeries,
    names: &NameEncoder,
    agent: Option<Agent>,
    warm: usize,
    stream: u64,
    repetition: u64,
) -> Result<SingleRun, HarnessError> {
    let mut r = Replayer {
        config,
        series,
        names,
        embeddings: HashMap::new(),
        histories: BTreeMap::new(),
        agent,
        pending: Vec::new(),
        policy_rng: rng_for(stream, "policy", repetition),
        train_rng: rng_for(stream, "training", repetition),
        trace: Sha256::new(),
        history_digests: config.trace_histories.then(Vec::new),
        train_steps: 0,
        experiences: 0,
        last_mean_loss: None,
    };
    let mut cycles = Vec::new();
    let mut decisions = Vec::with_capacity(series.len());
    for pos in 0..series.len() {
        if pos == warm {
            if let Some(agent) = r.agent.as_mut() {
                agent.end_warm_start();
            }
        }
        let (decision, evaluated) = r.step(pos, pos < warm)?;
        decisions.push(decision);
        cycles.extend(evaluated);
    }
    Ok(SingleRun {
        cycles,
        decisions,
        trace: r.trace.finalize().into(),
        history_digests: r.history_digests,
        agent: r.agent,
        train_steps: r.train_steps,
        experiences: r.experiences,
        last_mean_loss: r.last_mean_loss,
    })
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn mean_opt(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| mean(v))
}

pub(super) fn run(
    config: &ReplayConfig,
    series: &CycleSeries,
    checkpoint: Option<Checkpoint>,
) -> Result<ReplayOutcome, HarnessError> {
    config.validate()?;
    if series.is_empty() {
        return Err(HarnessError::Config("the dataset has no cycles".into()));
    }
    let warm = config
        .warm_start_cycles
        .unwrap_or_else(|| default_warm_start(series, config.agent.buffer_capacity));
    if warm >= series.len() {
        return Err(HarnessError::Config(format!(
            "warm start of {warm} cycles leaves none of the {} cycles to evaluate",
            series.len()
        )));
    }
    let stream = derive_seed(config.seed, "run", config.run_index);

    let (names, agent) = match (config.policy, checkpoint) {
        (PolicyKind::Dqn, Some(ckpt)) => {
            if ckpt.features != config.features {
                return Err(HarnessError::Config(
                    "checkpoint was trained with different feature settings".into(),
                ));
            }
            (ckpt.names, Some(Agent::from_snapshot(ckpt.agent)?))
        }
        (policy, _) => {
            let fit_cycles = &series.cycles[..warm.max(1)];
            let names = NameEncoder::fit(
                fit_cycles.iter().flat_map(|c| c.records.iter().map(|r| r.target.as_str())),
                config.features.pca_dim,
            )?;
            let agent = if policy == PolicyKind::Dqn {
                let mut rng = rng_for(config.seed, "init", 0);
                Some(Agent::new(config.features.dim(), config.agent.clone(), &mut rng)?)
            } else {
                None
            };
            (names, agent)
        }
    };

    let labels: TransitionLabels = label_transitions(series, config.flaky_window);
    let reps = config.repetitions();
    let mut runs = Vec::with_capacity(reps);
    for rep in 0..reps {
        let agent = if rep == 0 { agent.clone() } else { None };
        runs.push(run_single(config, series, &names, agent, warm, stream, rep as u64)?);
    }

    let report = combine(config, series, warm, &labels, &runs);
    let checkpoint = runs[0].agent.as_ref().map(|agent| Checkpoint {
        version: Checkpoint::VERSION,
        agent: agent.snapshot(),
        names: names.clone(),
        features: config.features.clone(),
    });
    Ok(ReplayOutcome { report, checkpoint })
}

fn full_rank_report(e: &CycleEvaluation) -> FullRankReport {
    FullRankReport {
        napfd: e.napfd,
        nfr: e.nfr.value,
        nttf: e.nttf.value,
    }
}

fn combine(
    config: &ReplayConfig,
    series: &CycleSeries,
    warm: usize,
    labels: &TransitionLabels,
    runs: &[SingleRun],
) -> ReplayReport {
    let reps = runs.len() as f64;
    let evaluated = runs[0].cycles.len();
    let per_cycle: Vec<CycleReport> = (0..evaluated)
        .map(|c| {
            let at = |f: &dyn Fn(&EvaluatedCycle) -> f64| mean(runs.iter().map(|r| f(&r.cycles[c])));
            let full_rank = runs[0].cycles[c].full_rank.as_ref().map(|_| FullRankReport {
                napfd: mean_opt(runs.iter().map(|r| r.cycles[c].full_rank.as_ref().and_then(|f| f.napfd))),
                nfr: at(&|e| e.full_rank.as_ref().map_or(0.0, |f| f.nfr.value)),
                nttf: at(&|e| e.full_rank.as_ref().map_or(0.0, |f| f.nttf.value)),
            });
            CycleReport {
                cycle_id: runs[0].cycles[c].cycle_id,
                napfd: mean_opt(runs.iter().map(|r| r.cycles[c].eval.napfd)),
                nfr: at(&|e| e.eval.nfr.value),
                nttf: at(&|e| e.eval.nttf.value),
                selected_count: at(&|e| e.selected as f64),
                budget_ms: at(&|e| e.cap_ms),
                full_rank,
            }
        })
        .collect();
    // A single run keeps its exact full-rank values.
    let per_cycle = if runs.len() == 1 {
        per_cycle
            .into_iter()
            .zip(&runs[0].cycles)
            .map(|(mut c, e)| {
                c.full_rank = e.full_rank.as_ref().map(full_rank_report);
                c
            })
            .collect()
    } else {
        per_cycle
    };

    let mut aggregates = BTreeMap::new();
    let mut add = |name: &str, values: Vec<f64>| {
        if let Some(s) = summarize(&values) {
            aggregates.insert(name.to_string(), s);
        }
    };
    add("napfd", per_cycle.iter().filter_map(|c| c.napfd).collect());
    add("nfr", per_cycle.iter().map(|c| c.nfr).collect());
    add("nttf", per_cycle.iter().map(|c| c.nttf).collect());
    add("selected_count", per_cycle.iter().map(|c| c.selected_count).collect());
    add("budget_ms", per_cycle.iter().map(|c| c.budget_ms).collect());
    if config.also_full_rank {
        let fr: Vec<&FullRankReport> = per_cycle.iter().filter_map(|c| c.full_rank.as_ref()).collect();
        add("full_rank_napfd", fr.iter().filter_map(|f| f.napfd).collect());
        add("full_rank_nfr", fr.iter().map(|f| f.nfr).collect());
        add("full_rank_nttf", fr.iter().map(|f| f.nttf).collect());
    }

    let mut delay_histogram: BTreeMap<usize, f64> = BTreeMap::new();
    let mut undetected = 0.0;
    let mut recalls = Vec::new();
    let mut misses = 0.0;
    for run in runs {
        let hist = detection_delays(&run.decisions, labels, series);
        for (d, n) in hist.counts {
            *delay_histogram.entry(d).or_default() += n as f64 / reps;
        }
        undetected += hist.undetected as f64 / reps;
        recalls.push(transition_recall(&run.decisions, labels));
        misses += run
            .cycles
            .iter()
            .filter(|c| c.eval.total_faults > 0 && c.eval.detected_faults == 0)
            .count() as f64
            / reps;
    }
    let faulty_cycles = runs[0].cycles.iter().filter(|c| c.eval.total_faults > 0).count();

    let trace_digest = if runs.len() == 1 {
        hex::encode(runs[0].trace)
    } else {
        let mut h = Sha256::new();
        for r in runs {
            h.update(r.trace);
        }
        hex::encode(h.finalize())
    };

    let training = runs[0].agent.as_ref().map(|agent| TrainingReport {
        train_steps: runs[0].train_steps,
        experiences: runs[0].experiences,
        final_sigma: agent.exploration.sigma,
        last_mean_loss: runs[0].last_mean_loss,
    });

    ReplayReport {
        config: config.clone(),
        dataset: DatasetSummary {
            cycles: series.len(),
            records: series.record_count(),
            warm_start_cycles: warm,
            evaluated_cycles: evaluated,
        },
        repetitions: runs.len(),
        per_cycle,
        aggregates,
        transitions: TransitionReport {
            recall_pct: mean_opt(recalls),
            delay_histogram,
            undetected_count: undetected,
            relevant_count: labels.count(TransitionKind::Relevant),
            flaky_count: labels.count(TransitionKind::Flaky),
            tail_labeled_count: labels.tail_labeled_count(),
        },
        misses: MissReport {
            no_fail_selected_cycles: misses,
            miss_rate: if faulty_cycles == 0 {
                0.0
            } else {
                misses / faulty_cycles as f64
            },
        },
        training,
        trace_digest,
        history_digests: runs[0].history_digests.clone(),
    }
}
