//! Deep Q-learning agent that scores test targets pointwise.
//!
//! The Q-network maps one feature vector to one score. Targets are ranked by
//! score, with Gaussian noise added while exploring. Training regresses the
//! score on the immediate reward of stored experiences, sampled uniformly from
//! a fixed-size replay buffer once it has filled or a warm start has ended.

mod adam;
mod network;
mod replay;

pub use adam::AdamState;
pub use network::{Gradients, Layer, Network};
pub use replay::{BufferSummary, Experience, ReplayBuffer};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("input dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("cannot train on an empty batch")]
    EmptyBatch,
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("training produced a non-finite loss ({0})")]
    NonFiniteLoss(f64),
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub exploration: ExplorationPolicy,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![64, 32, 16],
            dropout: 0.1,
            l2: 1e-4,
            learning_rate: 1e-3,
            batch_size: 64,
            buffer_capacity: 4096,
            exploration: ExplorationPolicy::default(),
        }
    }
}

/// Gaussian noise on scores with multiplicative per-cycle decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationPolicy {
    pub sigma: f64,
    pub decay: f64,
    pub sigma_min: f64,
}

impl Default for ExplorationPolicy {
    fn default() -> Self {
        ExplorationPolicy {
            sigma: 0.15,
            decay: 0.999,
            sigma_min: 0.01,
        }
    }
}

impl ExplorationPolicy {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.sigma_min >= 0.0 && self.sigma >= self.sigma_min && self.decay > 0.0 && self.decay <= 1.0) {
            return Err(AgentError::Config(format!(
                "exploration needs sigma >= sigma_min >= 0 and decay in (0, 1], got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn decay_step(&mut self) {
        self.sigma = (self.sigma * self.decay).max(self.sigma_min);
    }
}

/// Network plus optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub network: Network,
    pub optimizer: AdamState,
    pub l2: f64,
}

impl QNetwork {
    /// One Adam step on `mean((Q(s) − r)²) + l2·Σ‖W‖²`; returns the loss
    /// before the update.
    pub fn train_step(&mut self, batch: &[&Experience], rng: &mut Rng) -> Result<f64, AgentError> {
        let pairs: Vec<(&[f64], f64)> = batch
            .iter()
            .map(|e| (e.state.as_slice(), e.reward))
            .collect();
        let (loss, grads) = self.network.loss_and_gradients(&pairs, self.l2, rng)?;
        if !loss.is_finite() {
            return Err(AgentError::NonFiniteLoss(loss));
        }
        self.optimizer.apply(&mut self.network, &grads);
        if !self.network.all_finite() {
            return Err(AgentError::NonFiniteLoss(f64::NAN));
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub config: AgentConfig,
    pub q: QNetwork,
    pub buffer: ReplayBuffer,
    pub exploration: ExplorationPolicy,
    /// Set once the buffer has reached capacity or a warm start has ended.
    filled: bool,
}

impl Agent {
    pub fn new(input_dim: usize, config: AgentConfig, rng: &mut Rng) -> Result<Self, AgentError> {
        config.exploration.validate()?;
        if config.batch_size == 0 || config.buffer_capacity == 0 {
            return Err(AgentError::Config(
                "batch size and buffer capacity must be positive".into(),
            ));
        }
        let mut sizes = vec![input_dim];
        sizes.extend(&config.hidden);
        sizes.push(1);
        let network = Network::new(&sizes, config.dropout, rng)?;
        let optimizer = AdamState::new(&network, config.learning_rate);
        Ok(Agent {
            q: QNetwork {
                network,
                optimizer,
                l2: config.l2,
            },
            buffer: ReplayBuffer::new(config.buffer_capacity),
            exploration: config.exploration.clone(),
            config,
            filled: false,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.q.network.input_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, AgentError> {
        self.q.network.predict(x)
    }

    /// Noiseless score plus, when exploring, one independent `N(0, σ²)` draw
    /// per target.
    pub fn score_suite<'a, I>(&self, features: I, explore: bool, rng: &mut Rng) -> Result<Vec<f64>, AgentError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let noise = if explore && self.exploration.sigma > 0.0 {
            Some(Normal::new(0.0, self.exploration.sigma).map_err(|e| AgentError::Config(e.to_string()))?)
        } else {
            None
        };
        features
            .into_iter()
            .map(|x| {
                let score = self.forward(x)?;
                Ok(match &noise {
                    Some(n) => score + n.sample(rng),
                    None => score,
                })
            })
            .collect()
    }

    pub fn push_experience(&mut self, experience: Experience) -> Result<(), AgentError> {
        if experience.state.len() != self.input_dim() {
            return Err(AgentError::Dimension {
                expected: self.input_dim(),
                found: experience.state.len(),
            });
        }
        debug_assert!(experience.reward.is_finite());
        self.buffer.push(experience);
        self.filled |= self.buffer.is_full();
        Ok(())
    }

    /// Allows training before the buffer is full, once it holds anything.
    pub fn end_warm_start(&mut self) {
        self.filled |= !self.buffer.is_empty();
    }

    pub fn ready_to_train(&self) -> bool {
        self.filled
    }

    /// Samples a batch and trains on it; `None` until training is enabled.
    pub fn train_from_buffer(&mut self, rng: &mut Rng) -> Result<Option<f64>, AgentError> {
        if !self.filled {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.config.batch_size, rng)?;
        self.q.train_step(&batch, rng).map(Some)
    }

    pub fn end_cycle(&mut self) {
        self.exploration.decay_step();
    }

    pub fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            version: AgentSnapshot::VERSION,
            config: self.config.clone(),
            q: self.q.clone(),
            exploration: self.exploration.clone(),
            buffer: self.buffer.summary(),
        }
    }

    /// Restores network, optimizer and exploration state. The replay buffer
    /// is not stored and starts empty.
    pub fn from_snapshot(snapshot: AgentSnapshot) -> Result<Self, AgentError> {
        if snapshot.version != AgentSnapshot::VERSION {
            return Err(AgentError::CheckpointVersion(snapshot.version));
        }
        Ok(Agent {
            buffer: ReplayBuffer::new(snapshot.config.buffer_capacity),
            config: snapshot.config,
            q: snapshot.q,
            exploration: snapshot.exploration,
            filled: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub version: u32,
    pub config: AgentConfig,
    pub q: QNetwork,
    pub exploration: ExplorationPolicy,
    pub buffer: BufferSummary,
}

impl AgentSnapshot {
    pub const VERSION: u32 = 1;
}
