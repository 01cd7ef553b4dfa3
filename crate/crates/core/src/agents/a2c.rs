//! Advantage actor-critic with n-step advantages, an entropy bonus and
//! masked softmax policies.

use ndarray::Array2;
use rand::Rng;

use crate::agents::observation::ObservationEncoder;
use crate::agents::policy::{masked_log_softmax, sample_log_probs};
use crate::assembly::{TaskId, TaskSet};
use crate::env::EnvState;
use crate::error::AgentError;
use crate::nn::{Activation, Gradients, Mlp, Optimizer, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutStep {
    pub state: EnvState,
    /// Legal actions at `state`.
    pub mask: TaskSet,
    pub action: TaskId,
    pub reward: f64,
    pub next_state: EnvState,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Advantages {
    pub advantages: Vec<f64>,
    /// n-step targets `R_t = A_t + V(s_t)`.
    pub returns: Vec<f64>,
    pub values: Vec<f64>,
}

fn critic_values(critic: &Mlp, obs: &Array2<f64>) -> Result<Vec<f64>, AgentError> {
    Ok(critic.predict(obs.view())?.column(0).to_vec())
}

/// `A_t = Σ_{k<m} γ^k r_{t+k} + γ^m V(s_{t+m}) − V(s_t)` with
/// `m = min(n, steps left)`; the bootstrap is dropped past a terminal.
pub fn a2c_advantages(
    rollout: &[RolloutStep],
    critic: &Mlp,
    encoder: &ObservationEncoder,
    gamma: f64,
    n: usize,
) -> Result<Advantages, AgentError> {
    if rollout.is_empty() {
        return Err(AgentError::EmptyRollout);
    }
    if n == 0 {
        return Err(AgentError::Config("n_step must be at least 1".into()));
    }
    let obs = encoder.encode_batch(rollout.iter().map(|s| &s.state));
    let next_obs = encoder.encode_batch(rollout.iter().map(|s| &s.next_state));
    let values = critic_values(critic, &obs)?;
    let next_values = critic_values(critic, &next_obs)?;
    let len = rollout.len();
    let mut advantages = Vec::with_capacity(len);
    let mut returns = Vec::with_capacity(len);
    for t in 0..len {
        let mut g = 0.0;
        let mut discount = 1.0;
        let mut end = t;
        for (k, step) in rollout[t..].iter().take(n).enumerate() {
            g += discount * step.reward;
            discount *= gamma;
            end = t + k;
            if step.terminal {
                break;
            }
        }
        if !rollout[end].terminal {
            g += discount * next_values[end];
        }
        returns.push(g);
        advantages.push(g - values[t]);
    }
    Ok(Advantages {
        advantages,
        returns,
        values,
    })
}

/// Surrogate `−Σ_t [A_t · log π(a_t|s_t) + c · H(π(·|s_t))]` and its
/// gradient; advantages are constants.
pub fn actor_loss_and_grad(
    actor: &Mlp,
    rollout: &[RolloutStep],
    advantages: &[f64],
    entropy_coef: f64,
    encoder: &ObservationEncoder,
) -> Result<(f64, Gradients), AgentError> {
    let obs = encoder.encode_batch(rollout.iter().map(|s| &s.state));
    let (logits, cache) = actor.forward(obs.view())?;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (t, step) in rollout.iter().enumerate() {
        let row = logits.row(t);
        let log_p = masked_log_softmax(row.as_slice().expect("contiguous"), step.mask)?;
        let entropy: f64 = step
            .mask
            .iter()
            .map(|a| -log_p[a.index()].exp() * log_p[a.index()])
            .sum();
        loss -= advantages[t] * log_p[step.action.index()] + entropy_coef * entropy;
        for a in step.mask.iter() {
            let j = a.index();
            let p = log_p[j].exp();
            let indicator = if a == step.action { 1.0 } else { 0.0 };
            grad[[t, j]] =
                advantages[t] * (p - indicator) + entropy_coef * p * (log_p[j] + entropy);
        }
    }
    Ok((loss, actor.backward(&cache, grad.view())?))
}

pub fn actor_loss(
    actor: &Mlp,
    rollout: &[RolloutStep],
    advantages: &[f64],
    entropy_coef: f64,
    encoder: &ObservationEncoder,
) -> Result<f64, AgentError> {
    let obs = encoder.encode_batch(rollout.iter().map(|s| &s.state));
    let logits = actor.predict(obs.view())?;
    let mut loss = 0.0;
    for (t, step) in rollout.iter().enumerate() {
        let row = logits.row(t);
        let log_p = masked_log_softmax(row.as_slice().expect("contiguous"), step.mask)?;
        let entropy: f64 = step
            .mask
            .iter()
            .map(|a| -log_p[a.index()].exp() * log_p[a.index()])
            .sum();
        loss -= advantages[t] * log_p[step.action.index()] + entropy_coef * entropy;
    }
    Ok(loss)
}

/// `Σ_t (R_t − V(s_t))²` and its gradient.
pub fn critic_loss_and_grad(
    critic: &Mlp,
    rollout: &[RolloutStep],
    returns: &[f64],
    encoder: &ObservationEncoder,
) -> Result<(f64, Gradients), AgentError> {
    let obs = encoder.encode_batch(rollout.iter().map(|s| &s.state));
    let (v, cache) = critic.forward(obs.view())?;
    let mut grad = Array2::zeros(v.raw_dim());
    let mut loss = 0.0;
    for (t, &r) in returns.iter().enumerate() {
        let d = r - v[[t, 0]];
        loss += d * d;
        grad[[t, 0]] = -2.0 * d;
    }
    Ok((loss, critic.backward(&cache, grad.view())?))
}

pub fn critic_loss(
    critic: &Mlp,
    rollout: &[RolloutStep],
    returns: &[f64],
    encoder: &ObservationEncoder,
) -> Result<f64, AgentError> {
    let obs = encoder.encode_batch(rollout.iter().map(|s| &s.state));
    let v = critic_values(critic, &obs)?;
    Ok(returns.iter().zip(&v).map(|(r, v)| (r - v).powi(2)).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct A2cSettings {
    pub gamma: f64,
    pub n_step: usize,
    pub entropy_coef: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

pub struct A2cLearner {
    settings: A2cSettings,
    encoder: ObservationEncoder,
    actor: Mlp,
    critic: Mlp,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    rollout: Vec<RolloutStep>,
}

impl A2cLearner {
    pub fn new(
        settings: A2cSettings,
        encoder: ObservationEncoder,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let sizes = |out: usize| {
            let mut s = vec![encoder.width()];
            s.extend_from_slice(&settings.hidden);
            s.push(out);
            s
        };
        let actor = Mlp::init(&sizes(encoder.num_tasks), settings.activation, seed)?;
        let critic = Mlp::init(&sizes(1), settings.activation, seed.wrapping_add(1))?;
        Ok(A2cLearner {
            actor_opt: Optimizer::new(settings.optimizer, settings.actor_lr),
            critic_opt: Optimizer::new(settings.optimizer, settings.critic_lr),
            actor,
            critic,
            rollout: Vec::new(),
            encoder,
            settings,
        })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn policy(&self, state: &EnvState, mask: TaskSet) -> Result<Vec<f64>, AgentError> {
        let obs = self.encoder.encode_batch(std::iter::once(state));
        let logits = self.actor.predict(obs.view())?;
        masked_log_softmax(logits.row(0).as_slice().expect("contiguous"), mask)
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        mask: TaskSet,
        rng: &mut R,
    ) -> Result<TaskId, AgentError> {
        Ok(sample_log_probs(&self.policy(state, mask)?, rng))
    }

    /// Buffers the step; at the end of the episode runs one actor and one
    /// critic update and returns `(actor loss, critic loss)`.
    pub fn observe(
        &mut self,
        step: RolloutStep,
        episode_over: bool,
    ) -> Result<Option<(f64, f64)>, AgentError> {
        self.rollout.push(step);
        if !episode_over {
            return Ok(None);
        }
        let rollout = std::mem::take(&mut self.rollout);
        self.update(&rollout).map(Some)
    }

    pub fn update(&mut self, rollout: &[RolloutStep]) -> Result<(f64, f64), AgentError> {
        a2c_update(
            rollout,
            &mut self.actor,
            &mut self.critic,
            &mut self.actor_opt,
            &mut self.critic_opt,
            &self.settings,
            &self.encoder,
        )
    }
}

/// Computes advantages with the current critic, then updates both networks.
pub fn a2c_update(
    rollout: &[RolloutStep],
    actor: &mut Mlp,
    critic: &mut Mlp,
    actor_opt: &mut Optimizer,
    critic_opt: &mut Optimizer,
    settings: &A2cSettings,
    encoder: &ObservationEncoder,
) -> Result<(f64, f64), AgentError> {
    let adv = a2c_advantages(rollout, critic, encoder, settings.gamma, settings.n_step)?;
    let (actor_loss, actor_grads) =
        actor_loss_and_grad(actor, rollout, &adv.advantages, settings.entropy_coef, encoder)?;
    let (critic_loss, critic_grads) = critic_loss_and_grad(critic, rollout, &adv.returns, encoder)?;
    actor_opt.apply(actor, &actor_grads);
    critic_opt.apply(critic, &critic_grads);
    Ok((actor_loss, critic_loss))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::assembly::ToolId;
    use crate::nn::gradient_check;

    fn enc() -> ObservationEncoder {
        ObservationEncoder::new(8, 2)
    }

    /// Critic whose output is a fixed function of the first done bit:
    /// `V = c0 + c1 * bit0`.
    fn affine_critic(c0: f64, c1: f64) -> Mlp {
        let mut w = Array2::zeros((11, 1));
        w[[0, 0]] = c1;
        Mlp::from_parts(vec![w], vec![ndarray::arr1(&[c0])], Activation::Relu).unwrap()
    }

    fn step(reward: f64, terminal: bool, from_bit: bool) -> RolloutStep {
        let mut s = EnvState::initial();
        if from_bit {
            s.done.insert(TaskId::from_index(0));
        }
        let mut next = s;
        next.done.insert(TaskId::from_index(if from_bit { 1 } else { 0 }));
        next.tool = ToolId::new(1);
        RolloutStep {
            state: s,
            mask: TaskSet::full(8).difference(s.done),
            action: TaskId::from_index(if from_bit { 1 } else { 0 }),
            reward,
            next_state: next,
            terminal,
        }
    }

    #[test]
    fn one_step_advantage() {
        // V(s) = 1 (bit0 clear), V(s') = 2 (bit0 set)
        let critic = affine_critic(1.0, 1.0);
        let adv = a2c_advantages(&[step(1.0, false, false)], &critic, &enc(), 0.5, 1).unwrap();
        assert_eq!(adv.advantages, vec![1.0]);
        assert_eq!(adv.returns, vec![2.0]);

        let adv = a2c_advantages(&[step(1.0, true, false)], &critic, &enc(), 0.5, 1).unwrap();
        assert_eq!(adv.advantages, vec![0.0]);
        assert!(a2c_advantages(&[], &critic, &enc(), 0.5, 1).is_err());
    }

    #[test]
    fn zero_critic_gives_discounted_sums() {
        let critic = affine_critic(0.0, 0.0);
        let rollout = [step(0.0, false, false), step(0.5, true, true)];
        let adv = a2c_advantages(&rollout, &critic, &enc(), 0.9, 8).unwrap();
        assert_eq!(adv.advantages, vec![0.9 * 0.5, 0.5]);
    }

    #[test]
    fn zero_advantage_leaves_entropy_gradient() {
        let e = enc();
        let actor = Mlp::init(&[11, 16, 8], Activation::Tanh, 3).unwrap();
        let rollout = [step(0.0, false, false), step(1.0, true, true)];
        let (_, with_zero_adv) = actor_loss_and_grad(&actor, &rollout, &[0.0, 0.0], 0.01, &e).unwrap();
        let (_, no_entropy) = actor_loss_and_grad(&actor, &rollout, &[0.0, 0.0], 0.0, &e).unwrap();
        assert_eq!(no_entropy.max_abs(), 0.0);
        assert!(with_zero_adv.max_abs() > 0.0);
    }

    #[test]
    fn critic_at_targets_has_zero_loss() {
        let e = enc();
        let critic = affine_critic(0.3, 0.4);
        let rollout = [step(0.0, false, false), step(1.0, true, true)];
        let (loss, grads) = critic_loss_and_grad(&critic, &rollout, &[0.3, 0.7], &e).unwrap();
        assert!(loss.abs() < 1e-30);
        assert!(grads.max_abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let e = enc();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = Mlp::init(&[11, 16, 8], Activation::Relu, 1).unwrap();
        let critic = Mlp::init(&[11, 16, 1], Activation::Relu, 2).unwrap();
        let mut rollout = Vec::new();
        let mut state = EnvState::initial();
        for t in 0..8 {
            let mask = TaskSet::full(8).difference(state.done);
            let action = mask.iter().nth(rng.random_range(0..mask.len())).unwrap();
            let mut next = state;
            next.done.insert(action);
            next.tool = ToolId::new(1 + (t % 2));
            rollout.push(RolloutStep {
                state,
                mask,
                action,
                reward: if t == 7 { 0.6 } else { 0.0 },
                next_state: next,
                terminal: t == 7,
            });
            state = next;
        }
        let adv = a2c_advantages(&rollout, &critic, &e, 0.99, 8).unwrap();
        let (_, ag) = actor_loss_and_grad(&actor, &rollout, &adv.advantages, 0.01, &e).unwrap();
        let report = gradient_check(
            &actor,
            |m| actor_loss(m, &rollout, &adv.advantages, 0.01, &e).unwrap(),
            &ag,
            1e-5,
            1e-6,
        );
        assert!(report.passed, "actor {report:?}");
        let (_, cg) = critic_loss_and_grad(&critic, &rollout, &adv.returns, &e).unwrap();
        let report = gradient_check(
            &critic,
            |m| critic_loss(m, &rollout, &adv.returns, &e).unwrap(),
            &cg,
            1e-5,
            1e-6,
        );
        assert!(report.passed, "critic {report:?}");
    }
}
