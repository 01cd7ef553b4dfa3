//! Tabular Q-Learning.

use std::collections::HashMap;

use crate::agents::policy::masked_max;
use crate::agents::replay::Transition;
use crate::env::EnvState;

/// Action values per visited state; unseen states read as all zeros.
#[derive(Clone, Debug, Default)]
pub struct QTable {
    num_actions: usize,
    values: HashMap<EnvState, Vec<f64>>,
}

impl QTable {
    pub fn new(num_actions: usize) -> Self {
        QTable {
            num_actions,
            values: HashMap::new(),
        }
    }

    pub fn values(&self, state: &EnvState) -> Vec<f64> {
        self.values
            .get(state)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.num_actions])
    }

    pub fn get(&self, state: &EnvState, action: usize) -> f64 {
        self.values.get(state).map_or(0.0, |row| row[action])
    }

    pub fn set(&mut self, state: EnvState, action: usize, value: f64) {
        let n = self.num_actions;
        self.values.entry(state).or_insert_with(|| vec![0.0; n])[action] = value;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One-step update toward `r + γ·max_legal Q(s', ·)`, bootstrap 0 at a
    /// terminal. Returns the new value.
    pub fn update(&mut self, transition: &Transition, alpha: f64, gamma: f64) -> f64 {
        let bootstrap = if transition.terminal || transition.next_mask.is_empty() {
            0.0
        } else {
            let next = self.values(&transition.next_state);
            masked_max(&next, transition.next_mask).expect("non-empty mask")
        };
        let target = transition.reward + gamma.powi(transition.steps as i32) * bootstrap;
        let a = transition.action.index();
        let old = self.get(&transition.state, a);
        let new = (1.0 - alpha) * old + alpha * target;
        self.set(transition.state, a, new);
        new
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{TaskId, TaskSet};

    fn transition(reward: f64, terminal: bool) -> Transition {
        let s = EnvState::initial();
        let mut s2 = s;
        s2.done.insert(TaskId::from_index(0));
        Transition {
            state: s,
            action: TaskId::from_index(0),
            reward,
            next_state: s2,
            terminal,
            next_mask: TaskSet::full(3).difference(s2.done),
            steps: 1,
        }
    }

    #[test]
    fn update_arithmetic() {
        let mut q = QTable::new(3);
        let tr = transition(1.0, false);
        assert!((q.update(&tr, 0.1, 0.9) - 0.1).abs() <= 1e-12);

        let mut q = QTable::new(3);
        q.set(tr.next_state, 1, 0.4);
        assert_eq!(q.update(&tr, 1.0, 0.9), 1.0 + 0.9 * 0.4);

        let mut q = QTable::new(3);
        let tr = transition(0.0, false);
        q.set(tr.state, 0, 2.0);
        q.set(tr.next_state, 2, 2.0);
        assert!((q.update(&tr, 0.5, 0.9) - 1.9).abs() <= 1e-12);
    }

    #[test]
    fn terminal_has_no_bootstrap() {
        let mut q = QTable::new(3);
        let tr = transition(0.7, true);
        q.set(tr.next_state, 1, 100.0);
        assert_eq!(q.update(&tr, 1.0, 0.9), 0.7);
    }
}
