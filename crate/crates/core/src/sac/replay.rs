use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// A sampled minibatch; one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 where the episode terminated (not truncated).
    pub dones: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<f64>,
    len: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            states: vec![0.0; capacity * state_dim],
            actions: vec![0.0; capacity * action_dim],
            rewards: vec![0.0; capacity],
            next_states: vec![0.0; capacity * state_dim],
            dones: vec![0.0; capacity],
            len: 0,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, state: &[f64], action: &[f64], reward: f64, next_state: &[f64], done: bool) -> Result<()> {
        for (got, want) in [
            (state.len(), self.state_dim),
            (action.len(), self.action_dim),
            (next_state.len(), self.state_dim),
        ] {
            if got != want {
                return Err(Error::Shape {
                    expected: want,
                    actual: got,
                });
            }
        }
        let i = self.head;
        let (s, a) = (self.state_dim, self.action_dim);
        self.states[i * s..(i + 1) * s].copy_from_slice(state);
        self.actions[i * a..(i + 1) * a].copy_from_slice(action);
        self.next_states[i * s..(i + 1) * s].copy_from_slice(next_state);
        self.rewards[i] = reward;
        self.dones[i] = if done { 1.0 } else { 0.0 };
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Distinct indices, uniformly chosen.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch_size == 0 || batch_size > self.len {
            return Err(Error::Contract(format!(
                "cannot sample {batch_size} transitions from a buffer holding {}",
                self.len
            )));
        }
        Ok(rand::seq::index::sample(rng, self.len, batch_size).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        Ok(self.gather(&idx))
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (s, a) = (self.state_dim, self.action_dim);
        let rows = |src: &[f64], w: usize| Array2::from_shape_fn((idx.len(), w), |(r, c)| src[idx[r] * w + c]);
        Batch {
            states: rows(&self.states, s),
            actions: rows(&self.actions, a),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: rows(&self.next_states, s),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }
}
