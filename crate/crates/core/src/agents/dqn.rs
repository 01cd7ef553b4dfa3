//! Deep Q-Learning with a periodically synced target network, and the
//! Rainbow variant (double targets, dueling head, prioritized replay,
//! multi-step returns).

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::agents::observation::ObservationEncoder;
use crate::agents::policy::{epsilon_greedy, masked_argmax, masked_max};
use crate::agents::replay::{nstep_fold, PrioritizedBuffer, ReplayBuffer, Transition};
use crate::assembly::{TaskId, TaskSet};
use crate::env::EnvState;
use crate::error::{AgentError, NnError};
use crate::nn::{Activation, ForwardCache, Gradients, Mlp, Optimizer, OptimizerKind};

/// `Q(s,a) = V(s) + A(s,a) − mean_a A(s,a)`, row-wise.
pub fn dueling_combine(value: &Array1<f64>, advantages: &Array2<f64>) -> Array2<f64> {
    let mean = advantages.mean_axis(Axis(1)).expect("at least one action");
    let mut q = advantages.clone();
    for ((mut row, v), m) in q.rows_mut().into_iter().zip(value).zip(&mean) {
        row.mapv_inplace(|a| a + v - m);
    }
    q
}

/// Action-value network, optionally with a dueling head. A dueling network's
/// raw output has `1 + num_actions` columns: the state value, then the
/// advantages.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    mlp: Mlp,
    dueling: bool,
}

impl QNetwork {
    pub fn new(
        input: usize,
        hidden: &[usize],
        num_actions: usize,
        dueling: bool,
        activation: Activation,
        seed: u64,
    ) -> Result<Self, NnError> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(num_actions + dueling as usize);
        Ok(QNetwork {
            mlp: Mlp::init(&sizes, activation, seed)?,
            dueling,
        })
    }

    pub fn from_mlp(mlp: Mlp, dueling: bool) -> Self {
        QNetwork { mlp, dueling }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn is_dueling(&self) -> bool {
        self.dueling
    }

    pub fn num_actions(&self) -> usize {
        self.mlp.output_width() - self.dueling as usize
    }

    fn head(&self, raw: Array2<f64>) -> Array2<f64> {
        if !self.dueling {
            return raw;
        }
        let value = raw.column(0).to_owned();
        let adv = raw.slice(ndarray::s![.., 1..]).to_owned();
        dueling_combine(&value, &adv)
    }

    pub fn q_values(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.head(self.mlp.predict(obs)?))
    }

    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        let (raw, cache) = self.mlp.forward(obs)?;
        Ok((self.head(raw), cache))
    }

    /// Backpropagates dLoss/dQ through the head and the network.
    pub fn backward(&self, cache: &ForwardCache, grad_q: ArrayView2<f64>) -> Result<Gradients, NnError> {
        if !self.dueling {
            return self.mlp.backward(cache, grad_q);
        }
        let (batch, actions) = grad_q.dim();
        let mut grad_raw = Array2::zeros((batch, actions + 1));
        for (r, g) in grad_q.rows().into_iter().enumerate() {
            let total: f64 = g.sum();
            grad_raw[[r, 0]] = total;
            for (a, &ga) in g.iter().enumerate() {
                grad_raw[[r, a + 1]] = ga - total / actions as f64;
            }
        }
        self.mlp.backward(cache, grad_raw.view())
    }
}

/// Regression targets for a batch. Terminal: `r`. Otherwise
/// `r + γ^k · Q_target(s', a*)` where `a*` is the legal argmax of the target
/// net (vanilla) or of the online net (double).
pub fn dqn_targets(
    batch: &[Transition],
    online: &QNetwork,
    target: &QNetwork,
    encoder: &ObservationEncoder,
    gamma: f64,
    double: bool,
) -> Result<Vec<f64>, AgentError> {
    let next_obs = encoder.encode_batch(batch.iter().map(|t| &t.next_state));
    let target_q = target.q_values(next_obs.view())?;
    let online_q = if double {
        Some(online.q_values(next_obs.view())?)
    } else {
        None
    };
    batch
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            if tr.terminal || tr.next_mask.is_empty() {
                return Ok(tr.reward);
            }
            let tq = target_q.row(i);
            let tq = tq.as_slice().expect("contiguous");
            let bootstrap = match &online_q {
                Some(oq) => {
                    let row = oq.row(i);
                    let best = masked_argmax(row.as_slice().expect("contiguous"), tr.next_mask)?;
                    tq[best.index()]
                }
                None => masked_max(tq, tr.next_mask)?,
            };
            Ok(tr.reward + gamma.powi(tr.steps as i32) * bootstrap)
        })
        .collect()
}

/// Weighted squared TD loss `(1/B) Σ w_i (y_i − Q(s_i, a_i))²`, its gradient,
/// and the TD errors `y − Q`.
pub fn dqn_loss_and_grad(
    online: &QNetwork,
    batch: &[Transition],
    targets: &[f64],
    weights: Option<&[f64]>,
    encoder: &ObservationEncoder,
) -> Result<(f64, Gradients, Vec<f64>), AgentError> {
    let obs = encoder.encode_batch(batch.iter().map(|t| &t.state));
    let (q, cache) = online.forward(obs.view())?;
    let b = batch.len() as f64;
    let mut grad_q = Array2::zeros(q.raw_dim());
    let mut loss = 0.0;
    let mut td = Vec::with_capacity(batch.len());
    for (i, tr) in batch.iter().enumerate() {
        let a = tr.action.index();
        let w = weights.map_or(1.0, |w| w[i]);
        let delta = targets[i] - q[[i, a]];
        loss += w * delta * delta / b;
        grad_q[[i, a]] = -2.0 * w * delta / b;
        td.push(delta);
    }
    let grads = online.backward(&cache, grad_q.view())?;
    Ok((loss, grads, td))
}

/// Loss only, for finite-difference checks.
pub fn dqn_loss(
    online: &QNetwork,
    batch: &[Transition],
    targets: &[f64],
    weights: Option<&[f64]>,
    encoder: &ObservationEncoder,
) -> Result<f64, AgentError> {
    let obs = encoder.encode_batch(batch.iter().map(|t| &t.state));
    let q = online.q_values(obs.view())?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            let d = targets[i] - q[[i, tr.action.index()]];
            weights.map_or(1.0, |w| w[i]) * d * d
        })
        .sum::<f64>()
        / batch.len() as f64)
}

enum Memory {
    Uniform(ReplayBuffer),
    Prioritized(PrioritizedBuffer),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DqnSettings {
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_starts: usize,
    pub train_every: usize,
    pub target_sync: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub double: bool,
    pub dueling: bool,
    pub prioritized: bool,
    pub n_step: usize,
    pub per_alpha: f64,
}

/// DQN learner; the Rainbow variant is the same learner with `double`,
/// `dueling`, `prioritized` and `n_step > 1` switched on.
pub struct DqnLearner {
    settings: DqnSettings,
    encoder: ObservationEncoder,
    online: QNetwork,
    target: QNetwork,
    optimizer: Optimizer,
    memory: Memory,
    pending: VecDeque<Transition>,
    env_steps: usize,
    pub beta: f64,
}

impl DqnLearner {
    pub fn new(
        settings: DqnSettings,
        encoder: ObservationEncoder,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let online = QNetwork::new(
            encoder.width(),
            &settings.hidden,
            encoder.num_tasks,
            settings.dueling,
            settings.activation,
            seed,
        )?;
        let memory = if settings.prioritized {
            Memory::Prioritized(PrioritizedBuffer::new(
                settings.buffer_capacity,
                settings.per_alpha,
            ))
        } else {
            Memory::Uniform(ReplayBuffer::new(settings.buffer_capacity))
        };
        Ok(DqnLearner {
            target: online.clone(),
            online,
            optimizer: Optimizer::new(settings.optimizer, settings.lr),
            memory,
            pending: VecDeque::new(),
            env_steps: 0,
            beta: 1.0,
            encoder,
            settings,
        })
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn memory_len(&self) -> usize {
        match &self.memory {
            Memory::Uniform(b) => b.len(),
            Memory::Prioritized(b) => b.len(),
        }
    }

    pub fn q_values(&self, state: &EnvState) -> Result<Vec<f64>, AgentError> {
        let obs = self.encoder.encode_batch(std::iter::once(state));
        Ok(self.online.q_values(obs.view())?.row(0).to_vec())
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        mask: TaskSet,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<TaskId, AgentError> {
        if epsilon >= 1.0 {
            return epsilon_greedy(&[], mask, 1.0, rng);
        }
        let q = self.q_values(state)?;
        epsilon_greedy(&q, mask, epsilon, rng)
    }

    /// Stores the transition (folded over `n_step` steps), then trains and
    /// syncs the target on schedule. Returns the loss when a train step ran.
    pub fn observe<R: Rng + ?Sized>(
        &mut self,
        tr: Transition,
        episode_over: bool,
        rng: &mut R,
    ) -> Result<Option<f64>, AgentError> {
        self.pending.push_back(tr);
        let n = self.settings.n_step;
        if self.pending.len() >= n {
            let folded = nstep_fold(self.pending.make_contiguous(), n, self.settings.gamma);
            self.store(folded);
            self.pending.pop_front();
        }
        if episode_over {
            while !self.pending.is_empty() {
                let folded = nstep_fold(self.pending.make_contiguous(), n, self.settings.gamma);
                self.store(folded);
                self.pending.pop_front();
            }
        }

        self.env_steps += 1;
        let mut loss = None;
        if self.env_steps.is_multiple_of(self.settings.train_every) {
            loss = self.train_step(rng)?;
        }
        if self.env_steps.is_multiple_of(self.settings.target_sync) {
            self.target = self.online.clone();
        }
        Ok(loss)
    }

    fn store(&mut self, tr: Transition) {
        match &mut self.memory {
            Memory::Uniform(b) => b.push(tr),
            Memory::Prioritized(b) => b.push(tr),
        }
    }

    /// One minibatch gradient step; `None` until enough samples are stored.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>, AgentError> {
        let len = self.memory_len();
        if len < self.settings.batch_size || len < self.settings.learning_starts {
            return Ok(None);
        }
        let (batch, per) = match &self.memory {
            Memory::Uniform(b) => (b.sample(self.settings.batch_size, rng)?, None),
            Memory::Prioritized(b) => {
                let s = b.sample(self.settings.batch_size, self.beta, rng)?;
                (s.transitions, Some((s.indices, s.weights)))
            }
        };
        let targets = dqn_targets(
            &batch,
            &self.online,
            &self.target,
            &self.encoder,
            self.settings.gamma,
            self.settings.double,
        )?;
        let weights = per.as_ref().map(|(_, w)| w.as_slice());
        let (loss, grads, td) =
            dqn_loss_and_grad(&self.online, &batch, &targets, weights, &self.encoder)?;
        self.optimizer.apply(self.online.mlp_mut(), &grads);
        if let (Memory::Prioritized(b), Some((indices, _))) = (&mut self.memory, &per) {
            b.update(indices, &td)?;
        }
        Ok(Some(loss))
    }
}
