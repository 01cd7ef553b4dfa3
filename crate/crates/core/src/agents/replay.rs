//! Experience storage: transitions, a FIFO replay buffer, a proportional
//! prioritized buffer backed by a sum tree, and n-step folding.

use std::collections::VecDeque;

use rand::Rng;

use crate::assembly::{TaskId, TaskSet};
use crate::env::EnvState;
use crate::error::AgentError;

/// `(s, a, r, s', terminal)` plus the legal actions at `s'`.
///
/// `steps` is the number of environment steps folded into `reward`; the
/// bootstrap term is discounted by `γ^steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub action: TaskId,
    pub reward: f64,
    pub next_state: EnvState,
    pub terminal: bool,
    pub next_mask: TaskSet,
    pub steps: u32,
}

/// Folds up to `n` consecutive transitions starting at the front of `queue`
/// into one, stopping early at a terminal.
pub fn nstep_fold(queue: &[Transition], n: usize, gamma: f64) -> Transition {
    assert!(!queue.is_empty() && n >= 1, "nothing to fold");
    let mut reward = 0.0;
    let mut discount = 1.0;
    let mut folded = 0;
    let mut last = &queue[0];
    for tr in queue.iter().take(n) {
        reward += discount * tr.reward;
        discount *= gamma;
        folded += 1;
        last = tr;
        if tr.terminal {
            break;
        }
    }
    Transition {
        state: queue[0].state,
        action: queue[0].action,
        reward,
        next_state: last.next_state,
        terminal: last.terminal,
        next_mask: last.next_mask,
        steps: folded,
    }
}

/// Fixed-capacity FIFO buffer with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, tr: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(tr);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<Transition>, AgentError> {
        if self.items.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

/// Binary sum tree over a power-of-two number of leaves.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two();
        SumTree {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut node = self.leaves + i;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass` (`0 <= mass < total`).
    pub fn find(&self, mut mass: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if mass < self.nodes[left] || self.nodes[left + 1] <= 0.0 {
                node = left;
            } else {
                mass -= self.nodes[left];
                node = left + 1;
            }
        }
        node - self.leaves
    }
}

/// A minibatch drawn from a [`PrioritizedBuffer`].
#[derive(Clone, Debug)]
pub struct PrioritizedBatch {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub transitions: Vec<Transition>,
}

/// Proportional prioritized replay: item `i` is drawn with probability
/// `p_i^α / Σ p^α`. New items enter at the largest priority seen so far.
#[derive(Clone, Debug)]
pub struct PrioritizedBuffer {
    capacity: usize,
    alpha: f64,
    items: Vec<Transition>,
    priorities: Vec<f64>,
    next: usize,
    max_priority: f64,
    tree: SumTree,
}

impl PrioritizedBuffer {
    pub const PRIORITY_FLOOR: f64 = 1e-3;

    pub fn new(capacity: usize, alpha: f64) -> Self {
        assert!(capacity > 0);
        PrioritizedBuffer {
            capacity,
            alpha,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            priorities: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            max_priority: 1.0,
            tree: SumTree::new(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn priority(&self, i: usize) -> f64 {
        self.priorities[i]
    }

    /// Sampling probability of item `i`.
    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    pub fn push(&mut self, tr: Transition) {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(tr);
            self.priorities.push(self.max_priority);
        } else {
            self.items[slot] = tr;
            self.priorities[slot] = self.max_priority;
        }
        self.tree.set(slot, self.max_priority.powf(self.alpha));
        self.next = (slot + 1) % self.capacity;
    }

    /// Draws `batch_size` indices independently; importance weights
    /// `(N·P(i))^(−β)` are divided by the batch maximum.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<PrioritizedBatch, AgentError> {
        if self.items.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        let total = self.tree.total();
        let n = self.items.len() as f64;
        let mut indices = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let i = self.tree.find(rng.random::<f64>() * total).min(self.items.len() - 1);
            indices.push(i);
            weights.push((n * self.tree.get(i) / total).powf(-beta));
        }
        let max_w = weights.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
        weights.iter_mut().for_each(|w| *w /= max_w);
        let transitions = indices.iter().map(|&i| self.items[i]).collect();
        Ok(PrioritizedBatch {
            indices,
            weights,
            transitions,
        })
    }

    /// Sets `p_i = |δ_i| + 1e-3`.
    pub fn update(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<(), AgentError> {
        for (&i, &delta) in indices.iter().zip(td_errors) {
            if i >= self.items.len() {
                return Err(AgentError::IndexOutOfRange {
                    index: i,
                    len: self.items.len(),
                });
            }
            let p = delta.abs() + Self::PRIORITY_FLOOR;
            self.priorities[i] = p;
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p.powf(self.alpha));
        }
        Ok(())
    }
}
