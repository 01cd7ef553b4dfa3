//! Action selection restricted to legal actions.

use rand::Rng;

use crate::assembly::{TaskId, TaskSet};
use crate::error::AgentError;

/// Highest value among legal actions; ties go to the lowest index.
pub fn masked_argmax(values: &[f64], mask: TaskSet) -> Result<TaskId, AgentError> {
    let mut best: Option<(usize, f64)> = None;
    for t in mask.iter() {
        let v = values[t.index()];
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((t.index(), v));
        }
    }
    best.map(|(i, _)| TaskId::from_index(i))
        .ok_or(AgentError::EmptyMask)
}

/// Maximum of `values` over the legal actions.
pub fn masked_max(values: &[f64], mask: TaskSet) -> Result<f64, AgentError> {
    masked_argmax(values, mask).map(|t| values[t.index()])
}

/// With probability `epsilon` a uniformly random legal action, otherwise the
/// greedy legal action.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    q_values: &[f64],
    mask: TaskSet,
    epsilon: f64,
    rng: &mut R,
) -> Result<TaskId, AgentError> {
    if mask.is_empty() {
        return Err(AgentError::EmptyMask);
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let pick = rng.random_range(0..mask.len());
        return Ok(mask.iter().nth(pick).expect("pick < len"));
    }
    masked_argmax(q_values, mask)
}

/// Log-softmax over the legal logits. Illegal entries are `-inf`, so their
/// probability is exactly zero.
pub fn masked_log_softmax(logits: &[f64], mask: TaskSet) -> Result<Vec<f64>, AgentError> {
    let max = masked_max(logits, mask)?;
    let log_sum = mask
        .iter()
        .map(|t| (logits[t.index()] - max).exp())
        .sum::<f64>()
        .ln();
    Ok(logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if mask.contains(TaskId::from_index(i)) {
                z - max - log_sum
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect())
}

/// Samples an action index from log-probabilities (`-inf` entries never drawn).
pub fn sample_log_probs<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> TaskId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, lp) in log_probs.iter().enumerate() {
        if *lp == f64::NEG_INFINITY {
            continue;
        }
        acc += lp.exp();
        last = i;
        if u < acc {
            return TaskId::from_index(i);
        }
    }
    TaskId::from_index(last)
}

/// Linear decay from `start` to `end` over the first `decay_episodes`
/// episodes, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * frac
    }
}
