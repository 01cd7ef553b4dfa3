//! Learning agents and the shared episode loop.

pub mod a2c;
pub mod dqn;
pub mod observation;
pub mod policy;
pub mod replay;
pub mod tabular;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::assembly::{AssemblySpec, TaskSet};
use crate::env::{AssemblyEnv, EnvConfig, EnvState};
use crate::error::AgentError;
use crate::nn::{Activation, OptimizerKind};

use self::a2c::{A2cLearner, A2cSettings, RolloutStep};
use self::dqn::{DqnLearner, DqnSettings};
use self::observation::ObservationEncoder;
use self::policy::{epsilon_greedy, EpsilonSchedule};
use self::replay::Transition;
use self::tabular::QTable;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Qlearning,
    Dqn,
    A2c,
    Rainbow,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Qlearning,
        Algorithm::Dqn,
        Algorithm::A2c,
        Algorithm::Rainbow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Qlearning => "qlearning",
            Algorithm::Dqn => "dqn",
            Algorithm::A2c => "a2c",
            Algorithm::Rainbow => "rainbow",
        }
    }

    pub fn uses_epsilon(self) -> bool {
        self != Algorithm::A2c
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown algorithm '{s}' (expected qlearning, dqn, a2c or rainbow)"))
    }
}

/// Hyperparameters for every algorithm. Fields an algorithm does not use are
/// ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    /// Tabular learning rate.
    pub alpha: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Stored transitions required before the first gradient step.
    pub learning_starts: usize,
    /// Environment steps between gradient steps.
    pub train_every: usize,
    /// Environment steps between target-network syncs.
    pub target_sync: usize,
    /// Defaults: DQN 1, Rainbow 3, A2C the whole episode.
    pub n_step: Option<usize>,
    pub entropy_coef: f64,
    pub lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    /// Overrides the environment's masking flag. Rainbow defaults to off.
    pub masking: Option<bool>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            algorithm: Algorithm::Qlearning,
            gamma: 0.99,
            alpha: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_fraction: 0.1,
            batch_size: 32,
            buffer_capacity: 50_000,
            learning_starts: 1000,
            train_every: 4,
            target_sync: 500,
            n_step: None,
            entropy_coef: 0.01,
            lr: 5e-4,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            masking: None,
        }
    }
}

impl AgentConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        AgentConfig {
            algorithm,
            ..AgentConfig::default()
        }
    }

    pub fn effective_masking(&self, env: &EnvConfig) -> bool {
        match (self.masking, self.algorithm) {
            (Some(m), _) => m,
            (None, Algorithm::Rainbow) => false,
            (None, _) => env.masking,
        }
    }

    pub fn effective_n_step(&self) -> usize {
        match (self.n_step, self.algorithm) {
            (Some(n), _) => n,
            (None, Algorithm::Rainbow) => 3,
            (None, Algorithm::A2c) => usize::MAX,
            (None, _) => 1,
        }
    }

    pub fn epsilon_schedule(&self, episodes: usize) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            decay_episodes: (self.epsilon_decay_fraction * episodes as f64).round() as usize,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |m: String| Err(AgentError::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("epsilon_decay_fraction", self.epsilon_decay_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.n_step == Some(0) {
            return fail("n_step must be at least 1".into());
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("train_every", self.train_every),
            ("target_sync", self.target_sync),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.buffer_capacity < self.batch_size {
            return fail("buffer_capacity must be at least batch_size".into());
        }
        for (name, v) in [
            ("lr", self.lr),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.entropy_coef < 0.0 || self.per_alpha < 0.0 || self.per_beta_start < 0.0 {
            return fail("entropy_coef, per_alpha and per_beta_start must be non-negative".into());
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer sizes must be positive".into());
        }
        Ok(())
    }

    fn dqn_settings(&self, rainbow: bool) -> DqnSettings {
        DqnSettings {
            gamma: self.gamma,
            batch_size: self.batch_size,
            buffer_capacity: self.buffer_capacity,
            learning_starts: self.learning_starts,
            train_every: self.train_every,
            target_sync: self.target_sync,
            lr: self.lr,
            optimizer: self.optimizer,
            hidden: self.hidden.clone(),
            activation: self.activation,
            double: rainbow,
            dueling: rainbow,
            prioritized: rainbow,
            n_step: self.effective_n_step(),
            per_alpha: self.per_alpha,
        }
    }

    fn a2c_settings(&self) -> A2cSettings {
        A2cSettings {
            gamma: self.gamma,
            n_step: self.effective_n_step(),
            entropy_coef: self.entropy_coef,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            optimizer: self.optimizer,
            hidden: self.hidden.clone(),
            activation: self.activation,
        }
    }
}

/// Per-episode training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    /// Experienced `T_a`; `None` for a truncated episode.
    pub duration: Option<f64>,
    pub deterministic_equivalent: Option<f64>,
    /// Terminal (or truncation) reward.
    pub reward: f64,
    /// `Σ_t γ^t r_t` over the episode.
    pub discounted_return: f64,
    pub unwanted: bool,
    pub cumulative_unwanted: u64,
    pub truncated: bool,
    pub steps: usize,
    /// ε in effect; 0 for A2C.
    pub epsilon: f64,
    /// Mean training loss over the episode (actor loss for A2C).
    pub loss: Option<f64>,
    /// One-based task numbers in execution order. Stored inline for up to
    /// 16 tasks: a heap allocation per episode fragments the allocator badly
    /// when interleaved with network temporaries.
    pub sequence: SmallVec<[u8; 16]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainMetrics {
    pub algorithm: Algorithm,
    pub masking: bool,
    pub seed: u64,
    pub episodes: Vec<EpisodeMetrics>,
}

impl TrainMetrics {
    pub fn total_unwanted(&self) -> u64 {
        self.episodes.last().map_or(0, |e| e.cumulative_unwanted)
    }
}

enum Learner {
    Tabular { table: QTable },
    Dqn(Box<DqnLearner>),
    A2c(Box<A2cLearner>),
}

/// Runs `episodes` training episodes of one algorithm on a fresh environment.
/// Everything random derives from `seed`.
pub fn train(
    spec: Arc<AssemblySpec>,
    env_config: &EnvConfig,
    config: &AgentConfig,
    episodes: usize,
    seed: u64,
) -> Result<TrainMetrics, AgentError> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let env_seed = master.next_u64();
    let net_seed = master.next_u64();
    let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());

    let masking = config.effective_masking(env_config);
    let env_config = EnvConfig {
        masking,
        seed: env_seed,
        ..env_config.clone()
    };
    let mut env = AssemblyEnv::new(Arc::clone(&spec), env_config)?;
    let encoder = ObservationEncoder::new(spec.num_tasks(), spec.num_tools());
    let all_actions = spec.all_tasks();
    let algorithm = config.algorithm;
    let mut learner = match algorithm {
        Algorithm::Qlearning => Learner::Tabular {
            table: QTable::new(spec.num_tasks()),
        },
        Algorithm::Dqn | Algorithm::Rainbow => Learner::Dqn(Box::new(DqnLearner::new(
            config.dqn_settings(algorithm == Algorithm::Rainbow),
            encoder,
            net_seed,
        )?)),
        Algorithm::A2c => Learner::A2c(Box::new(A2cLearner::new(
            config.a2c_settings(),
            encoder,
            net_seed,
        )?)),
    };
    let schedule = config.epsilon_schedule(episodes);
    let mask_for = |state: &EnvState, env: &AssemblyEnv| -> TaskSet {
        if masking {
            crate::env::action_mask(state, env.spec())
        } else {
            all_actions
        }
    };

    let mut records = Vec::with_capacity(episodes);
    let mut cumulative_unwanted = 0u64;
    for episode in 0..episodes {
        let epsilon = if algorithm.uses_epsilon() {
            schedule.value(episode)
        } else {
            0.0
        };
        if let Learner::Dqn(d) = &mut learner {
            let frac = episode as f64 / episodes.max(1) as f64;
            d.beta = config.per_beta_start + (config.per_beta_end - config.per_beta_start) * frac;
        }
        let mut state = env.reset();
        let mut losses = Vec::new();
        let mut discounted_return = 0.0;
        let mut discount = 1.0;
        let final_reward;
        let trace = loop {
            let mask = mask_for(&state, &env);
            let action = match &learner {
                Learner::Tabular { table } => {
                    epsilon_greedy(&table.values(&state), mask, epsilon, &mut rng)?
                }
                Learner::Dqn(d) => d.act(&state, mask, epsilon, &mut rng)?,
                Learner::A2c(a) => a.act(&state, mask, &mut rng)?,
            };
            let out = env.step(action)?;
            let over = out.terminal || out.truncated;
            discounted_return += discount * out.reward;
            discount *= config.gamma;
            let next_mask = if out.terminal {
                TaskSet::EMPTY
            } else {
                mask_for(&out.next_state, &env)
            };
            let transition = Transition {
                state,
                action,
                reward: out.reward,
                next_state: out.next_state,
                terminal: out.terminal,
                next_mask,
                steps: 1,
            };
            match &mut learner {
                Learner::Tabular { table } => {
                    table.update(&transition, config.alpha, config.gamma);
                }
                Learner::Dqn(d) => {
                    if let Some(l) = d.observe(transition, over, &mut rng)? {
                        losses.push(l);
                    }
                }
                Learner::A2c(a) => {
                    let step = RolloutStep {
                        state,
                        mask,
                        action,
                        reward: out.reward,
                        next_state: out.next_state,
                        terminal: out.terminal,
                    };
                    if let Some((actor_loss, _)) = a.observe(step, over)? {
                        losses.push(actor_loss);
                    }
                }
            }
            state = out.next_state;
            if over {
                final_reward = out.reward;
                break out.episode.expect("episode trace at episode end");
            }
        };
        if trace.unwanted {
            cumulative_unwanted += 1;
        }
        records.push(EpisodeMetrics {
            duration: trace.complete.then(|| trace.total_time()),
            deterministic_equivalent: trace.complete.then(|| trace.deterministic_equivalent()),
            reward: final_reward,
            discounted_return,
            unwanted: trace.unwanted,
            cumulative_unwanted,
            truncated: !trace.complete,
            steps: trace.steps,
            epsilon,
            loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            sequence: trace.sequence.iter().map(|t| t.number() as u8).collect(),
        });
    }
    Ok(TrainMetrics {
        algorithm,
        masking,
        seed,
        episodes: records,
    })
}
