//! The assembly MDP: done-set plus held-tool state, masked step dynamics,
//! deterministic or noisy task durations, and a terminal-only reward built
//! from normalized episode time and a user-preference penalty.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assembly::{AssemblySpec, TaskId, TaskSet, ToolId};
use crate::error::{EnvError, SpecError};

/// Done tasks plus the tool currently held (`None` before the first task).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct EnvState {
    pub done: TaskSet,
    pub tool: Option<ToolId>,
}

impl EnvState {
    pub fn initial() -> Self {
        EnvState::default()
    }

    /// Tool digit: 0 for no tool, else the tool number.
    pub fn tool_digit(&self) -> usize {
        self.tool.map_or(0, ToolId::number)
    }
}

/// Legal actions at `state`: tasks whose predecessors are all done.
pub fn action_mask(state: &EnvState, spec: &AssemblySpec) -> TaskSet {
    spec.legal_tasks(state.done)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationMode {
    #[default]
    Deterministic,
    Stochastic,
}

/// User preferences: completed sequences matching any rule earn the −1 reward.
/// Task numbers are one-based.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnwantedSpec {
    /// `[a, b]`: task `a` must not be executed before task `b`.
    pub forbidden_orderings: Vec<[usize; 2]>,
    /// Exact complete sequences to avoid.
    pub forbidden_sequences: Vec<Vec<usize>>,
}

impl UnwantedSpec {
    pub fn is_empty(&self) -> bool {
        self.forbidden_orderings.is_empty() && self.forbidden_sequences.is_empty()
    }

    /// Every rule must reference real tasks, and a forbidden ordering must
    /// not be forced by precedence.
    pub fn validate(&self, spec: &AssemblySpec) -> Result<(), SpecError> {
        let n = spec.num_tasks();
        let in_range = |location: String, v: usize| {
            if (1..=n).contains(&v) {
                Ok(())
            } else {
                Err(SpecError::IndexOutOfRange {
                    location,
                    value: v as i64,
                    max: n,
                })
            }
        };
        let ancestors = ancestor_sets(spec);
        for (i, &[a, b]) in self.forbidden_orderings.iter().enumerate() {
            in_range(format!("unwanted.forbidden_orderings[{i}][0]"), a)?;
            in_range(format!("unwanted.forbidden_orderings[{i}][1]"), b)?;
            let location = format!("unwanted.forbidden_orderings[{i}]");
            if a == b {
                return Err(SpecError::invalid(location, "ordering pair repeats a task"));
            }
            if ancestors[b - 1].contains(TaskId::from_index(a - 1)) {
                return Err(SpecError::invalid(
                    location,
                    format!("precedence forces task {a} before task {b}; ordering is unavoidable"),
                ));
            }
        }
        for (i, seq) in self.forbidden_sequences.iter().enumerate() {
            for (j, &v) in seq.iter().enumerate() {
                in_range(format!("unwanted.forbidden_sequences[{i}][{j}]"), v)?;
            }
        }
        Ok(())
    }

    /// True iff a forbidden ordering holds in `sequence` or it equals a
    /// forbidden full sequence.
    pub fn is_unwanted(&self, sequence: &[TaskId]) -> bool {
        let position = |number: usize| sequence.iter().position(|t| t.number() == number);
        let ordering_hit = self.forbidden_orderings.iter().any(|&[a, b]| {
            matches!((position(a), position(b)), (Some(pa), Some(pb)) if pa < pb)
        });
        ordering_hit
            || self.forbidden_sequences.iter().any(|seq| {
                seq.len() == sequence.len()
                    && seq.iter().zip(sequence).all(|(&n, t)| n == t.number())
            })
    }
}

/// Transitive predecessor sets.
fn ancestor_sets(spec: &AssemblySpec) -> Vec<TaskSet> {
    let n = spec.num_tasks();
    let mut anc: Vec<TaskSet> = spec.tasks().map(|t| spec.predecessors(t)).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            let mut grown = anc[i];
            for p in anc[i].iter() {
                grown = TaskSet::from_bits(grown.bits() | anc[p.index()].bits());
            }
            if grown != anc[i] {
                anc[i] = grown;
                changed = true;
            }
        }
        if !changed {
            return anc;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub mode: DurationMode,
    /// Standard deviation of a stochastic task duration, as a fraction of
    /// its deterministic duration.
    pub noise_fraction: f64,
    pub masking: bool,
    /// Step cap when masking is off; `None` means 8 steps per task.
    pub max_steps: Option<usize>,
    pub pickup_costs_change: bool,
    pub unwanted: UnwantedSpec,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            mode: DurationMode::Deterministic,
            noise_fraction: 0.1,
            masking: true,
            max_steps: None,
            pickup_costs_change: true,
            unwanted: UnwantedSpec::default(),
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn effective_max_steps(&self, num_tasks: usize) -> usize {
        self.max_steps.unwrap_or(8 * num_tasks)
    }

    pub fn validate(&self, spec: &AssemblySpec) -> Result<(), EnvError> {
        if !(self.noise_fraction.is_finite() && self.noise_fraction >= 0.0) {
            return Err(EnvError::Config(format!(
                "noise_fraction must be >= 0, got {}",
                self.noise_fraction
            )));
        }
        let max_steps = self.effective_max_steps(spec.num_tasks());
        if max_steps < spec.num_tasks() {
            return Err(EnvError::Config(format!(
                "max_steps {max_steps} is below the task count {}",
                spec.num_tasks()
            )));
        }
        self.unwanted
            .validate(spec)
            .map_err(|e| EnvError::Config(e.to_string()))
    }
}

/// Running episode-time bounds used to normalize the terminal reward.
///
/// The minimum tracks every finished episode. The maximum only accepts a
/// duration within two standard deviations of the last 100 durations, once at
/// least 10 are on record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RewardNormalizer {
    min: Option<f64>,
    max: Option<f64>,
    history: VecDeque<f64>,
}

impl RewardNormalizer {
    pub const HISTORY: usize = 100;
    pub const WARMUP: usize = 10;
    pub const OUTLIER_STDS: f64 = 2.0;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn min(&self) -> Option<f64> {
        self.min
    }

    pub fn max(&self) -> Option<f64> {
        self.max
    }

    pub fn history(&self) -> &VecDeque<f64> {
        &self.history
    }

    pub fn is_initialized(&self) -> bool {
        self.min.is_some() && self.max.is_some()
    }

    pub fn update(&mut self, duration: f64) {
        self.min = Some(self.min.map_or(duration, |m| m.min(duration)));
        if self.accepts_for_max(duration) {
            self.max = Some(self.max.map_or(duration, |m| m.max(duration)));
        }
        if self.history.len() == Self::HISTORY {
            self.history.pop_front();
        }
        self.history.push_back(duration);
    }

    fn accepts_for_max(&self, duration: f64) -> bool {
        let n = self.history.len();
        if n < Self::WARMUP {
            return true;
        }
        let mean = self.history.iter().sum::<f64>() / n as f64;
        let var = self.history.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        (duration - mean).abs() <= Self::OUTLIER_STDS * var.sqrt()
    }

    /// `(max − T) / (max − min)` clamped to `[0, 1]`; 0.5 when the range is
    /// degenerate; `None` before the first finished episode.
    pub fn reward(&self, duration: f64) -> Option<f64> {
        let (min, max) = (self.min?, self.max?);
        Some(normalized_reward(min, max, duration))
    }
}

pub fn normalized_reward(min: f64, max: f64, duration: f64) -> f64 {
    let range = max - min;
    if range < 1e-9 {
        0.5
    } else {
        ((max - duration) / range).clamp(0.0, 1.0)
    }
}

/// Record of one finished or truncated episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub sequence: Vec<TaskId>,
    /// Experienced per-task durations.
    pub durations: Vec<f64>,
    /// Noise-free durations of the same tasks in the same order.
    pub deterministic_durations: Vec<f64>,
    pub complete: bool,
    pub unwanted: bool,
    pub steps: usize,
}

impl EpisodeTrace {
    /// `T_a`: sum of experienced durations.
    pub fn total_time(&self) -> f64 {
        episode_total_time(&self.durations)
    }

    pub fn deterministic_equivalent(&self) -> f64 {
        episode_total_time(&self.deterministic_durations)
    }
}

pub fn episode_total_time(durations: &[f64]) -> f64 {
    durations.iter().sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
    /// `None` for a no-op (illegal action with masking off).
    pub task_duration: Option<f64>,
    /// Present once the episode ends, by completion or truncation.
    pub episode: Option<EpisodeTrace>,
}

/// One environment instance. Owns its RNG and reward normalizer, which
/// persists across episodes.
#[derive(Clone, Debug)]
pub struct AssemblyEnv {
    spec: Arc<AssemblySpec>,
    config: EnvConfig,
    max_steps: usize,
    noise: bool,
    rng: ChaCha8Rng,
    normalizer: RewardNormalizer,
    state: EnvState,
    trace: EpisodeTrace,
    over: bool,
}

impl AssemblyEnv {
    pub fn new(spec: Arc<AssemblySpec>, config: EnvConfig) -> Result<Self, EnvError> {
        config.validate(&spec)?;
        let max_steps = config.effective_max_steps(spec.num_tasks());
        Ok(AssemblyEnv {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            noise: config.mode == DurationMode::Stochastic && config.noise_fraction > 0.0,
            max_steps,
            spec,
            config,
            normalizer: RewardNormalizer::new(),
            state: EnvState::initial(),
            trace: empty_trace(),
            over: false,
        })
    }

    pub fn spec(&self) -> &AssemblySpec {
        &self.spec
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    pub fn normalizer(&self) -> &RewardNormalizer {
        &self.normalizer
    }

    pub fn reset(&mut self) -> EnvState {
        self.state = EnvState::initial();
        self.trace = empty_trace();
        self.over = false;
        self.state
    }

    pub fn action_mask(&self) -> TaskSet {
        action_mask(&self.state, &self.spec)
    }

    pub fn step(&mut self, action: TaskId) -> Result<StepOutcome, EnvError> {
        if self.over {
            return Err(EnvError::EpisodeOver);
        }
        let spec = Arc::clone(&self.spec);
        let pickup = self.config.pickup_costs_change;
        self.trace.steps += 1;

        let legal = spec.check_legal(action, self.state.done);
        let task_duration = match legal {
            Ok(()) => {
                let mean = spec.task_duration(action, self.state.done, self.state.tool, pickup)?;
                let experienced = if self.noise {
                    self.sample_duration(mean)
                } else {
                    mean
                };
                self.trace.sequence.push(action);
                self.trace.durations.push(experienced);
                self.trace.deterministic_durations.push(mean);
                self.state.done.insert(action);
                self.state.tool = Some(spec.tool(action));
                Some(experienced)
            }
            Err(e) if self.config.masking || !spec.contains(action) => {
                return Err(EnvError::IllegalAction(e));
            }
            Err(_) => None,
        };

        let terminal = self.state.done == spec.all_tasks();
        let truncated = !terminal && self.trace.steps >= self.max_steps;
        let mut reward = 0.0;
        let mut episode = None;
        if terminal {
            self.trace.complete = true;
            self.trace.unwanted = self.config.unwanted.is_unwanted(&self.trace.sequence);
            let total = self.trace.total_time();
            reward = if self.trace.unwanted {
                -1.0
            } else {
                self.normalizer.reward(total).unwrap_or(0.0)
            };
            self.normalizer.update(total);
        }
        if terminal || truncated {
            self.over = true;
            episode = Some(self.trace.clone());
        }
        Ok(StepOutcome {
            next_state: self.state,
            reward,
            terminal,
            truncated,
            task_duration,
            episode,
        })
    }

    fn sample_duration(&mut self, mean: f64) -> f64 {
        let sd = self.config.noise_fraction * mean.abs();
        let normal = Normal::new(mean, sd).expect("finite non-negative std");
        normal.sample(&mut self.rng).max(0.0)
    }
}

fn empty_trace() -> EpisodeTrace {
    EpisodeTrace {
        sequence: Vec::new(),
        durations: Vec::new(),
        deterministic_durations: Vec::new(),
        complete: false,
        unwanted: false,
        steps: 0,
    }
}
