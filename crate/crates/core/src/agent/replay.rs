use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    /// Score the policy emitted for this target, exploration noise included.
    pub action_score: f64,
    pub reward: f64,
    /// Kept for completeness; training bootstraps on the immediate reward only.
    pub next_state: Option<Vec<f64>>,
}

/// Fixed-capacity FIFO of experiences.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    items: VecDeque<Experience>,
    capacity: usize,
    inserted: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSummary {
    pub len: usize,
    pub capacity: usize,
    pub inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
            inserted: 0,
        }
    }

    pub fn push(&mut self, experience: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(experience);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    pub fn summary(&self) -> BufferSummary {
        BufferSummary {
            len: self.len(),
            capacity: self.capacity,
            inserted: self.inserted,
        }
    }

    /// Uniform draws with replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Result<Vec<&Experience>, AgentError> {
        if self.items.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}
