use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const DEFAULT_REPLAY_CAPACITY: usize = 10_000;

/// Network input for one state: the per-episode observation encoding plus
/// the agent position scaled to `[0, 1]^2`.
///
/// The observation part never changes during an episode, so it is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub observation: Arc<[f64]>,
    pub position: [f64; 2],
}

impl EncodedState {
    pub fn new(observation: Arc<[f64]>, position: [f64; 2]) -> Self {
        Self { observation, position }
    }

    pub fn dim(&self) -> usize {
        self.observation.len() + 2
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.observation);
        v.extend_from_slice(&self.position);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EncodedState,
    pub action: usize,
    pub reward: f64,
    pub next_state: EncodedState,
    pub terminal: bool,
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            storage: VecDeque::with_capacity(capacity.min(4096)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !(t.reward.is_finite()) {
            return Err(Error::invalid("transition reward must be finite"));
        }
        if t.action >= crate::environment::ACTION_COUNT {
            return Err(Error::invalid(format!("action {} out of range", t.action)));
        }
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// Indices drawn uniformly with replacement, oldest entry at index 0.
    pub fn sample_indices(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::state("cannot sample from an empty replay buffer"));
        }
        Ok((0..n).map(|_| rng.below(self.storage.len())).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<Transition>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.storage[i].clone())
            .collect())
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.storage.get(index)
    }
}
