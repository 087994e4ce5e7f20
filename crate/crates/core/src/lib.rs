//! Pipeline-aware regression test prioritization and selection for CI.
//!
//! The crate replays recorded CI execution logs cycle by cycle. A policy
//! (a deep Q-learning agent, RANDOM, or ROCKET) ranks the scheduled test
//! targets, a budget cuts the ranking into a selection, and the replay
//! reveals the recorded verdicts of the selected targets only. Rewards are
//! pipeline specific: pre-submit runs reward early, cheap failure detection;
//! post-submit runs reward selecting targets whose verdict transitions.

pub mod agent;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod features;
pub mod harness;
pub mod metrics;
pub mod rewards;
pub mod seed;
