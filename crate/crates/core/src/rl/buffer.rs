//! Trajectory storage: the replay store for off-policy learning and the
//! per-iteration rollout store for on-policy learning.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// One `(s, a, r, s', done)` tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: u8,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Bounded FIFO replay store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    transitions: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            transitions: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.transitions.len() == self.capacity {
            self.transitions.pop_front();
        }
        self.transitions.push_back(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.transitions[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter()
    }

    /// Uniform random batch of indices.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..batch).map(|_| rng.random_range(0..self.transitions.len())).collect()
    }
}

/// On-policy rollout of one control stream (one intersection in one episode),
/// with the extras PPO needs.
#[derive(Debug, Clone, Default)]
pub struct RolloutStream {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
}

impl RolloutStream {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn push(&mut self, obs: Vec<f64>, action: u8, log_prob: f64, value: f64) {
        self.obs.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
    }

    /// Reward and done arrive one half-step later than the action.
    pub fn push_outcome(&mut self, reward: f64, done: bool) {
        self.rewards.push(reward);
        self.dones.push(done);
    }
}
