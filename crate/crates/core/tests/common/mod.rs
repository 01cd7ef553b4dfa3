//! Checks shared by the property tests and the acceptance runner.
#![allow(dead_code)]

use std::sync::Arc;

use asp_rl::agents::a2c::{actor_loss, actor_loss_and_grad, critic_loss, critic_loss_and_grad, RolloutStep};
use asp_rl::agents::dqn::{dqn_loss, dqn_loss_and_grad, QNetwork};
use asp_rl::agents::observation::ObservationEncoder;
use asp_rl::agents::policy::{epsilon_greedy, masked_log_softmax, sample_log_probs};
use asp_rl::agents::replay::{PrioritizedBuffer, ReplayBuffer, Transition};
use asp_rl::agents::{AgentConfig, Algorithm};
use asp_rl::assembly::{AssemblySpec, TaskId, TaskSet, ToolId};
use asp_rl::env::{AssemblyEnv, EnvConfig, EnvState, RewardNormalizer, UnwantedSpec};
use asp_rl::harness::{run_experiment, trial_file_name, ExperimentConfig};
use asp_rl::nn::{gradient_check, Activation, Mlp};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_H: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-6;
const TASKS: usize = 8;
const TOOLS: usize = 2;

pub fn default_unwanted() -> UnwantedSpec {
    UnwantedSpec {
        forbidden_orderings: vec![[8, 1], [7, 1]],
        forbidden_sequences: vec![],
    }
}

pub fn airplane() -> Arc<AssemblySpec> {
    Arc::new(AssemblySpec::builtin_airplane())
}

/// Airplane precedence written out by hand, independent of the spec tables.
pub fn airplane_legal(done: u64) -> u64 {
    let has = |n: usize| done & (1 << (n - 1)) != 0;
    let mut legal = 0;
    for n in 1..=8 {
        let ready = match n {
            1 | 7 | 8 => true,
            2 | 3 | 4 | 6 => has(1),
            5 => has(1) && has(4),
            _ => unreachable!(),
        };
        if ready && !has(n) {
            legal |= 1 << (n - 1);
        }
    }
    legal
}

fn random_state(rng: &mut ChaCha8Rng) -> EnvState {
    EnvState {
        done: TaskSet::from_bits(rng.random_range(0..1u64 << TASKS)),
        tool: ToolId::new(rng.random_range(0..=TOOLS)),
    }
}

fn random_mask(rng: &mut ChaCha8Rng) -> TaskSet {
    TaskSet::from_bits(rng.random_range(1..1u64 << TASKS))
}

fn random_member(mask: TaskSet, rng: &mut ChaCha8Rng) -> TaskId {
    let items: Vec<TaskId> = mask.iter().collect();
    items[rng.random_range(0..items.len())]
}

fn hidden(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let depth = rng.random_range(1..=2);
    (0..depth).map(|_| rng.random_range(4..=16)).collect()
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

fn activation(trial: u64) -> Activation {
    if trial.is_multiple_of(2) {
        Activation::Relu
    } else {
        Activation::Tanh
    }
}

/// Smallest |pre-activation| over the hidden layers for the given inputs.
fn kink_margin(mlp: &Mlp, obs: &Array2<f64>) -> f64 {
    let mut x = obs.clone();
    let mut margin = f64::INFINITY;
    let layers = mlp.weights().len();
    for (w, b) in mlp.weights().iter().zip(mlp.biases()).take(layers - 1) {
        let z = x.dot(w) + b;
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        x = z.mapv(|v| v.max(0.0));
    }
    margin
}

/// Central differences are meaningless within `h` of a ReLU kink, and the
/// zero-initialised biases put units exactly on it. Biases are redrawn until
/// every hidden pre-activation is at least 1e-3 away from zero.
fn move_off_kinks(mlp: &mut Mlp, obs: &Array2<f64>, rng: &mut ChaCha8Rng) {
    if mlp.activation() != Activation::Relu {
        return;
    }
    let shapes: Vec<(usize, usize)> = mlp.weights().iter().map(|w| (w.len(), w.ncols())).collect();
    loop {
        let mut offset = 0;
        for &(weights, bias) in &shapes {
            offset += weights;
            for j in 0..bias {
                *mlp.param_mut(offset + j) = rng.random_range(-0.2..0.2);
            }
            offset += bias;
        }
        if kink_margin(mlp, obs) > 1e-3 {
            return;
        }
    }
}

/// Worst relative error over `trials` random DQN batches (plain and dueling,
/// with and without importance weights).
pub fn dqn_gradient_suite(trials: u64) -> Result<f64, String> {
    let enc = ObservationEncoder::new(TASKS, TOOLS);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let dueling = trial % 4 >= 2;
        let h = hidden(&mut rng);
        let mut net = QNetwork::new(enc.width(), &h, TASKS, dueling, activation(trial), trial)
            .map_err(|e| e.to_string())?;
        let batch_size = rng.random_range(1..=8);
        let batch: Vec<Transition> = (0..batch_size)
            .map(|_| {
                let mask = random_mask(&mut rng);
                Transition {
                    state: random_state(&mut rng),
                    action: random_member(mask, &mut rng),
                    reward: rng.random_range(-1.0..1.0),
                    next_state: random_state(&mut rng),
                    terminal: rng.random_bool(0.3),
                    next_mask: random_mask(&mut rng),
                    steps: 1,
                }
            })
            .collect();
        let obs = enc.encode_batch(batch.iter().map(|t| &t.state));
        move_off_kinks(net.mlp_mut(), &obs, &mut rng);
        let targets: Vec<f64> = (0..batch_size).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Option<Vec<f64>> = (trial % 3 == 0)
            .then(|| (0..batch_size).map(|_| rng.random_range(0.1..=1.0)).collect());
        let w = weights.as_deref();
        let (_, grads, _) =
            dqn_loss_and_grad(&net, &batch, &targets, w, &enc).map_err(|e| e.to_string())?;
        let report = gradient_check(
            net.mlp(),
            |m: &Mlp| {
                let q = QNetwork::from_mlp(m.clone(), dueling);
                dqn_loss(&q, &batch, &targets, w, &enc).unwrap()
            },
            &grads,
            GRAD_H,
            GRAD_TOL,
        );
        if !report.passed {
            return Err(format!("trial {trial}: {report:?}"));
        }
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

fn random_rollout(rng: &mut ChaCha8Rng) -> Vec<RolloutStep> {
    let len = rng.random_range(1..=8);
    (0..len)
        .map(|i| {
            let mask = random_mask(rng);
            RolloutStep {
                state: random_state(rng),
                mask,
                action: random_member(mask, rng),
                reward: rng.random_range(-1.0..1.0),
                next_state: random_state(rng),
                terminal: i + 1 == len,
            }
        })
        .collect()
}

pub fn actor_gradient_suite(trials: u64) -> Result<f64, String> {
    let enc = ObservationEncoder::new(TASKS, TOOLS);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let h = hidden(&mut rng);
        let mut actor = Mlp::init(&sizes(enc.width(), &h, TASKS), activation(trial), trial)
            .map_err(|e| e.to_string())?;
        let rollout = random_rollout(&mut rng);
        let obs = enc.encode_batch(rollout.iter().map(|s| &s.state));
        move_off_kinks(&mut actor, &obs, &mut rng);
        let adv: Vec<f64> = rollout.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = if trial % 5 == 0 { 0.0 } else { rng.random_range(0.0..0.1) };
        let (_, grads) =
            actor_loss_and_grad(&actor, &rollout, &adv, c, &enc).map_err(|e| e.to_string())?;
        let report = gradient_check(
            &actor,
            |m: &Mlp| actor_loss(m, &rollout, &adv, c, &enc).unwrap(),
            &grads,
            GRAD_H,
            GRAD_TOL,
        );
        if !report.passed {
            return Err(format!("trial {trial}: {report:?}"));
        }
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

pub fn critic_gradient_suite(trials: u64) -> Result<f64, String> {
    let enc = ObservationEncoder::new(TASKS, TOOLS);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
        let h = hidden(&mut rng);
        let mut critic = Mlp::init(&sizes(enc.width(), &h, 1), activation(trial), trial)
            .map_err(|e| e.to_string())?;
        let rollout = random_rollout(&mut rng);
        let obs = enc.encode_batch(rollout.iter().map(|s| &s.state));
        move_off_kinks(&mut critic, &obs, &mut rng);
        let returns: Vec<f64> = rollout.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, grads) =
            critic_loss_and_grad(&critic, &rollout, &returns, &enc).map_err(|e| e.to_string())?;
        let report = gradient_check(
            &critic,
            |m: &Mlp| critic_loss(m, &rollout, &returns, &enc).unwrap(),
            &grads,
            GRAD_H,
            GRAD_TOL,
        );
        if !report.passed {
            return Err(format!("trial {trial}: {report:?}"));
        }
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

/// Random masked interaction with the airplane env. Actions come from
/// ε-greedy over random Q-values or from a masked softmax over random logits;
/// every choice is checked against the hand-written precedence table.
pub fn masked_random_walk(steps: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = EnvConfig {
        unwanted: default_unwanted(),
        seed,
        ..EnvConfig::default()
    };
    let mut env = AssemblyEnv::new(airplane(), config).map_err(|e| e.to_string())?;
    let mut state = env.reset();
    let mut episodes = 0;
    for step in 0..steps {
        let mask = env.action_mask();
        let expected = airplane_legal(state.done.bits());
        if mask.bits() != expected {
            return Err(format!(
                "step {step}: mask {:#b} but precedence gives {expected:#b}",
                mask.bits()
            ));
        }
        let scores: Vec<f64> = (0..TASKS).map(|_| rng.random_range(-5.0..5.0)).collect();
        let action = if rng.random_bool(0.5) {
            epsilon_greedy(&scores, mask, rng.random(), &mut rng).map_err(|e| e.to_string())?
        } else {
            let lp = masked_log_softmax(&scores, mask).map_err(|e| e.to_string())?;
            sample_log_probs(&lp, &mut rng)
        };
        if expected & (1 << action.index()) == 0 {
            return Err(format!("step {step}: illegal action {action} selected"));
        }
        let out = env.step(action).map_err(|e| e.to_string())?;
        state = if out.terminal {
            episodes += 1;
            env.reset()
        } else {
            out.next_state
        };
    }
    Ok(episodes)
}

/// Pearson χ² statistic of PER draws against `p_i^α / Σ p^α`, with the
/// 0.1% critical value for the degrees of freedom used.
pub fn per_chi_square(draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let mut buffer = PrioritizedBuffer::new(n, 0.6);
    let tr = Transition {
        state: EnvState::initial(),
        action: TaskId::from_index(0),
        reward: 0.0,
        next_state: EnvState::initial(),
        terminal: true,
        next_mask: TaskSet::EMPTY,
        steps: 1,
    };
    for _ in 0..n {
        buffer.push(tr);
    }
    let indices: Vec<usize> = (0..n).collect();
    let td: Vec<f64> = (0..n).map(|i| 0.1 * (i * i) as f64).collect();
    buffer.update(&indices, &td).unwrap();
    let mut counts = vec![0usize; n];
    let mut remaining = draws;
    while remaining > 0 {
        let batch = remaining.min(1000);
        for i in buffer.sample(batch, 0.4, &mut rng).unwrap().indices {
            counts[i] += 1;
        }
        remaining -= batch;
    }
    let pa: Vec<f64> = (0..n).map(|i| buffer.priority(i).powf(0.6)).collect();
    let total: f64 = pa.iter().sum();
    let chi2 = counts
        .iter()
        .zip(&pa)
        .map(|(&c, p)| {
            let e = draws as f64 * p / total;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // χ²(9) upper 0.1% point.
    (chi2, 27.877)
}

/// Largest |Σ exp(log p) − 1| over random logits and masks, and whether every
/// illegal entry is exactly −∞.
pub fn log_softmax_worst(cases: usize, seed: u64) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut zero_outside = true;
    for _ in 0..cases {
        let scale = [1.0, 10.0, 100.0, 700.0][rng.random_range(0..4)];
        let logits: Vec<f64> = (0..TASKS).map(|_| rng.random_range(-scale..scale)).collect();
        let mask = random_mask(&mut rng);
        let lp = masked_log_softmax(&logits, mask).unwrap();
        let sum: f64 = mask.iter().map(|a| lp[a.index()].exp()).sum();
        worst = worst.max((sum - 1.0).abs());
        for (j, &v) in lp.iter().enumerate() {
            if !mask.contains(TaskId::from_index(j)) && v != f64::NEG_INFINITY {
                zero_outside = false;
            }
        }
    }
    (worst, zero_outside)
}

/// Pushes `capacity + extra` numbered transitions and checks the buffer holds
/// exactly the newest `capacity`, oldest first.
pub fn fifo_holds(capacity: usize, extra: usize) -> bool {
    let mut buffer = ReplayBuffer::new(capacity);
    for k in 0..capacity + extra {
        buffer.push(Transition {
            state: EnvState::initial(),
            action: TaskId::from_index(0),
            reward: k as f64,
            next_state: EnvState::initial(),
            terminal: true,
            next_mask: TaskSet::EMPTY,
            steps: 1,
        });
        if buffer.len() > capacity {
            return false;
        }
    }
    buffer.len() == capacity
        && buffer
            .iter()
            .map(|t| t.reward as usize)
            .eq(extra..capacity + extra)
}

/// Normalizer min tracks the exact minimum; with a zero-spread history the
/// 2σ filter admits only values equal to the history mean.
pub fn normalizer_checks() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut n = RewardNormalizer::new();
    let mut true_min = f64::INFINITY;
    for _ in 0..1000 {
        let t = rng.random_range(60.0..90.0);
        n.update(t);
        true_min = true_min.min(t);
        if n.min() != Some(true_min) {
            return Err(format!("min {:?} != {true_min}", n.min()));
        }
    }
    let mut flat = RewardNormalizer::new();
    for _ in 0..RewardNormalizer::WARMUP {
        flat.update(70.0);
    }
    flat.update(75.0);
    if flat.max() != Some(70.0) {
        return Err(format!("zero-std history let an outlier into max: {:?}", flat.max()));
    }
    if flat.min() != Some(70.0) {
        return Err("min changed on a larger duration".into());
    }
    flat.update(65.0);
    if flat.min() != Some(65.0) || flat.max() != Some(70.0) {
        return Err(format!("after 65: min {:?} max {:?}", flat.min(), flat.max()));
    }
    Ok(())
}

/// Runs a small experiment twice into separate directories and compares the
/// per-trial CSV bytes.
pub fn trial_csv_is_reproducible(algorithm: Algorithm, episodes: usize) -> Result<(), String> {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let run = |dir: &std::path::Path| {
        let config = ExperimentConfig {
            env: EnvConfig {
                unwanted: default_unwanted(),
                ..EnvConfig::default()
            },
            agent: AgentConfig {
                learning_starts: 64,
                ..AgentConfig::for_algorithm(algorithm)
            },
            episodes,
            trials: 2,
            base_seed: 11,
            output_dir: Some(dir.to_path_buf()),
            ..ExperimentConfig::default()
        };
        run_experiment(&config).map_err(|e| e.to_string())
    };
    run(dirs[0].path())?;
    run(dirs[1].path())?;
    for index in 0..2 {
        let name = trial_file_name(index);
        let a = std::fs::read(dirs[0].path().join(&name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(&name)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{algorithm}: {name} differs between runs"));
        }
    }
    Ok(())
}

fn affine_critic(bias: f64, first_bit: f64) -> Mlp {
    let mut w = Array2::zeros((TASKS + TOOLS + 1, 1));
    w[[0, 0]] = first_bit;
    Mlp::from_parts(vec![w], vec![ndarray::arr1(&[bias])], Activation::Relu).unwrap()
}

fn constant_q(values: &[f64]) -> QNetwork {
    let w = Array2::zeros((TASKS + TOOLS + 1, values.len()));
    let mlp = Mlp::from_parts(vec![w], vec![ndarray::arr1(values)], Activation::Relu).unwrap();
    QNetwork::from_mlp(mlp, false)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

/// The arithmetic instantiations of the tabular update, the n-step
/// advantage and the DQN target, each with its verdict.
pub fn unit_vectors() -> Vec<(&'static str, bool)> {
    use asp_rl::agents::a2c::a2c_advantages;
    use asp_rl::agents::dqn::dqn_targets;
    use asp_rl::agents::replay::nstep_fold;
    use asp_rl::agents::tabular::QTable;

    let enc = ObservationEncoder::new(TASKS, TOOLS);
    let s = EnvState::initial();
    let s1 = EnvState {
        done: TaskSet::from_bits(1),
        tool: ToolId::new(1),
    };
    let tr = |reward: f64, terminal: bool| Transition {
        state: s,
        action: TaskId::from_index(0),
        reward,
        next_state: s1,
        terminal,
        next_mask: TaskSet::from_bits(0b1110),
        steps: 1,
    };
    let mut out = Vec::new();

    let mut q = QTable::new(TASKS);
    out.push(("q_update Q=0 a=0.1 r=1 g=0.9 next=0 -> 0.1", close(q.update(&tr(1.0, false), 0.1, 0.9), 0.1)));
    let mut q1 = QTable::new(TASKS);
    q1.set(s, 0, 0.3);
    q1.set(s1, 2, 0.8);
    out.push(("q_update a=1 -> r + g max", close(q1.update(&tr(0.5, false), 1.0, 0.9), 0.5 + 0.9 * 0.8)));
    let mut q2 = QTable::new(TASKS);
    q2.set(s, 0, 2.0);
    q2.set(s1, 1, 2.0);
    out.push(("q_update Q=2 a=0.5 r=0 g=0.9 next=2 -> 1.9", close(q2.update(&tr(0.0, false), 0.5, 0.9), 1.9)));
    let mut q3 = QTable::new(TASKS);
    q3.set(s1, 1, 5.0);
    out.push(("q_update terminal ignores bootstrap", close(q3.update(&tr(1.0, true), 0.1, 0.9), 0.1)));

    let step = |reward: f64, terminal: bool| RolloutStep {
        state: s,
        mask: TaskSet::from_bits(0b1),
        action: TaskId::from_index(0),
        reward,
        next_state: s1,
        terminal,
    };
    let critic = affine_critic(1.0, 1.0);
    let a = a2c_advantages(&[step(1.0, false)], &critic, &enc, 0.5, 1).unwrap();
    out.push(("advantage n=1 r=1 g=0.5 V'=2 V=1 -> 1", close(a.advantages[0], 1.0)));
    let a = a2c_advantages(&[step(0.7, true)], &critic, &enc, 0.5, 1).unwrap();
    out.push(("advantage terminal -> r - V", close(a.advantages[0], 0.7 - 1.0)));
    let zero = affine_critic(0.0, 0.0);
    let rollout = [step(0.0, false), step(0.0, false), step(1.0, true)];
    let a = a2c_advantages(&rollout, &zero, &enc, 0.9, 8).unwrap();
    out.push((
        "advantage zero critic -> discounted reward sums",
        close(a.advantages[0], 0.81) && close(a.advantages[1], 0.9) && close(a.advantages[2], 1.0),
    ));
    let td = a2c_advantages(&[step(0.25, false)], &affine_critic(0.4, 0.3), &enc, 0.9, 1).unwrap();
    out.push(("advantage n=1 equals TD residual", close(td.advantages[0], 0.25 + 0.9 * 0.7 - 0.4)));

    let net = constant_q(&[3.0, 1.0, 0.5, 0.2, 0.0, 0.0, 0.0, 0.0]);
    let y = dqn_targets(&[tr(0.7, true)], &net, &net, &enc, 0.9, false).unwrap();
    out.push(("dqn target terminal r=0.7 -> 0.7", close(y[0], 0.7)));
    let y = dqn_targets(&[tr(0.0, false)], &net, &net, &enc, 0.9, false).unwrap();
    out.push(("dqn target r=0 g=0.9 max legal 1 -> 0.9", close(y[0], 0.9)));
    let yd = dqn_targets(&[tr(0.0, false), tr(0.3, false)], &net, &net, &enc, 0.9, true).unwrap();
    let yv = dqn_targets(&[tr(0.0, false), tr(0.3, false)], &net, &net, &enc, 0.9, false).unwrap();
    out.push(("dqn double target with online = target equals vanilla", yd == yv));

    let queue = [tr(0.0, false), tr(0.0, false), tr(1.0, false)];
    let f = nstep_fold(&queue, 3, 0.9);
    out.push(("nstep n=3 rewards (0,0,1) -> 0.81", close(f.reward, 0.81) && f.steps == 3));
    out
}

/// Largest |env total time − oracle duration| over every feasible sequence.
pub fn env_oracle_worst(pickup_costs_change: bool) -> Result<f64, String> {
    use asp_rl::oracle::{enumerate_sequences, DEFAULT_CEILING};
    let spec = airplane();
    let records =
        enumerate_sequences(&spec, pickup_costs_change, DEFAULT_CEILING).map_err(|e| e.to_string())?;
    let config = EnvConfig {
        pickup_costs_change,
        ..EnvConfig::default()
    };
    let mut env = AssemblyEnv::new(spec, config).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for r in &records {
        env.reset();
        let mut trace = None;
        for &t in &r.sequence {
            trace = env.step(t).map_err(|e| e.to_string())?.episode;
        }
        let total = trace.ok_or("episode did not finish")?.total_time();
        worst = worst.max((total - r.duration).abs());
    }
    Ok(worst)
}

/// Orderings of tasks 1..=6 alone, counted from the hand-written table.
pub fn airplane_core_orderings() -> u64 {
    let core = 0b11_1111u64;
    let mut ways = vec![0u64; 64];
    ways[0] = 1;
    for done in 0..64u64 {
        let legal = airplane_legal(done) & core;
        for t in 0..6 {
            if legal & (1 << t) != 0 {
                ways[(done | 1 << t) as usize] += ways[done as usize];
            }
        }
    }
    ways[63]
}
