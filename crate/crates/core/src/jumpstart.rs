//! Downstream fine-tuning: score the pretrained heads on a sparse goal task,
//! keep the best one as a single-head actor and train it further with PPO.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::envs::{rollout, Controller, Dynamics, ParallelTrajectory, ReplicaSet, TerrainSpec, STATE_DIM};
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, Adam};
use crate::policy::{gaussian_log_density_on_tape, tanh_correction, Linear, PolicyShape, SingleHeadActor};
use crate::rng;
use crate::tensor::{Gradients, Tape, Tensor, TensorError, Var};

/// Reach `goal` (within `radius`) in `terrain`.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalTask {
    pub goal: [f64; 2],
    pub radius: f64,
    pub terrain: TerrainSpec,
    /// Goal sampling annulus around the spawn point.
    pub annulus: (f64, f64),
}

pub const DEFAULT_ANNULUS: (f64, f64) = (3.0, 4.5);

impl GoalTask {
    pub fn new(goal: [f64; 2], radius: f64, terrain: TerrainSpec) -> Result<Self> {
        let task = Self { goal, radius, terrain, annulus: DEFAULT_ANNULUS };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        self.terrain.validate()?;
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::Contract(format!("goal radius must be positive, got {}", self.radius)));
        }
        if !self.terrain.is_free(self.goal[0], self.goal[1]) {
            return Err(Error::Contract(format!("goal {:?} is outside the arena or inside a wall", self.goal)));
        }
        let (lo, hi) = self.annulus;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::Contract(format!("bad goal annulus ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Goal drawn uniformly (by area) from the annulus around the spawn point,
    /// redrawn until it lands in free space.
    pub fn sample(terrain: TerrainSpec, radius: f64, annulus: (f64, f64), seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, &[rng::GOAL]);
        let (lo, hi) = annulus;
        for _ in 0..1000 {
            let rho = (lo * lo + r.random::<f64>() * (hi * hi - lo * lo)).sqrt();
            let phi = r.random::<f64>() * std::f64::consts::TAU;
            let goal = [terrain.spawn[0] + rho * phi.cos(), terrain.spawn[1] + rho * phi.sin()];
            if terrain.is_free(goal[0], goal[1]) {
                let task = Self { goal, radius, terrain, annulus };
                task.validate()?;
                return Ok(task);
            }
        }
        Err(Error::Contract("no free goal position in the annulus".into()))
    }

    pub fn distance(&self, state: &[f64]) -> f64 {
        (state[0] - self.goal[0]).hypot(state[1] - self.goal[1])
    }
}

/// 1 strictly inside the goal radius, 0 otherwise.
pub fn sparse_reward(state: &[f64], task: &GoalTask) -> f64 {
    if task.distance(state) < task.radius {
        1.0
    } else {
        0.0
    }
}

/// Whether each replica entered the goal at any of `s_1 … s_T`.
pub fn episode_successes(trajectory: &ParallelTrajectory, task: &GoalTask) -> Vec<bool> {
    (0..trajectory.replicas()).map(|i| (1..=trajectory.horizon()).any(|t| sparse_reward(trajectory.state(i, t), task) == 1.0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadEvaluation {
    pub success_rates: Vec<f64>,
    pub selected: usize,
}

/// Argmax with ties going to the lowest index.
pub fn select_head(rates: &[f64]) -> usize {
    let mut best = 0;
    for (h, &r) in rates.iter().enumerate() {
        if r > rates[best] {
            best = h;
        }
    }
    best
}

/// Runs `rollouts` episodes per head and picks the head with the highest
/// fraction of episodes that reach the goal.
pub fn evaluate_heads(
    controller: &dyn Controller,
    task: &GoalTask,
    dynamics: &Dynamics,
    horizon: usize,
    rollouts: usize,
    seed: u64,
) -> Result<HeadEvaluation> {
    if rollouts == 0 {
        return Err(Error::Contract("need at least one rollout per head".into()));
    }
    let heads = controller.head_count();
    let assignment: Vec<usize> = (0..heads).flat_map(|h| std::iter::repeat_n(h, rollouts)).collect();
    let mut replicas = ReplicaSet::new(assignment.len(), task.terrain.clone(), *dynamics)?;
    let run_seed = rng::derive(seed, &[rng::EVAL]);
    replicas.reset_all(run_seed)?;
    let trajectory = rollout(&mut replicas, controller, &assignment, horizon, run_seed)?;
    let hits = episode_successes(&trajectory, task);
    let success_rates: Vec<f64> =
        (0..heads).map(|h| hits[h * rollouts..(h + 1) * rollouts].iter().filter(|&&x| x).count() as f64 / rollouts as f64).collect();
    Ok(HeadEvaluation { selected: select_head(&success_rates), success_rates })
}

/// Generalized advantage estimates by the reverse recursion
/// `Â_t = δ_t + γλ Â_{t+1}`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    let t = rewards.len();
    if values.len() != t + 1 {
        return Err(Error::Contract(format!("gae needs {} values, got {}", t + 1, values.len())));
    }
    let mut adv = vec![0.0; t];
    let mut next = 0.0;
    for s in (0..t).rev() {
        let delta = rewards[s] + gamma * values[s + 1] - values[s];
        next = delta + gamma * lambda * next;
        adv[s] = next;
    }
    Ok(adv)
}

/// State-value network, ReLU hidden layers and a linear scalar output.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    layers: Vec<Linear>,
}

impl Critic {
    pub fn new(hidden: &[usize], seed: u64) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(Error::Contract("critic layers must be non-empty".into()));
        }
        let mut r = rng::stream(seed, &[rng::INIT, 1 << 20]);
        let mut fan_in = STATE_DIM;
        let mut layers = Vec::new();
        for &w in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(Linear::init(fan_in, w, 1.0, 0.0, &mut r));
            fan_in = w;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// `[B, 1]` values; parameter leaves are returned when `trainable`.
    pub fn forward_on_tape(&self, tape: &mut Tape, states: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        let mut params = Vec::new();
        let mut x = states;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (tape.leaf(layer.weight.clone())?, tape.leaf(layer.bias.clone())?)
            } else {
                (tape.constant(layer.weight.clone())?, tape.constant(layer.bias.clone())?)
            };
            params.extend([w, b]);
            let y = tape.matmul(x, w)?;
            x = tape.add(y, b)?;
            if i + 1 < self.layers.len() {
                x = tape.relu(x)?;
            }
        }
        Ok((x, params))
    }

    pub fn values(&self, states: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone())?;
        let (v, _) = self.forward_on_tape(&mut tape, s, false)?;
        Ok(tape.value(v).data().to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    /// Leading rollouts that only train the critic.
    pub warmup: usize,
    /// Transitions per minibatch.
    pub minibatch: usize,
    pub horizon: usize,
    pub replicas: usize,
    /// Environment steps over all replicas; `total_steps / (replicas · horizon)` rollouts.
    pub total_steps: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub critic_hidden: Vec<usize>,
}

impl PpoConfig {
    /// Settings for a randomly initialized actor.
    pub fn no_pretrain() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.001,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            epochs: 10,
            warmup: 1,
            minibatch: 64 * 300,
            horizon: 600,
            replicas: 300,
            total_steps: 100 * 300 * 600,
            actor_lr: 1e-5,
            critic_lr: 3e-4,
            critic_hidden: vec![256, 256],
        }
    }

    /// Gentler settings for a pretrained actor (single- or multi-head source).
    pub fn pretrained() -> Self {
        Self { clip: 0.15, entropy_coef: 0.0, epochs: 3, warmup: 5, ..Self::no_pretrain() }
    }

    pub fn for_init(init: InitKind) -> Self {
        match init {
            InitKind::Random => Self::no_pretrain(),
            InitKind::SingleAgent | InitKind::Selected => Self::pretrained(),
        }
    }

    pub fn rollouts(&self) -> usize {
        self.total_steps / (self.replicas * self.horizon).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::Contract("gamma and lambda must lie in [0, 1]".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Contract("clip must be positive".into()));
        }
        if self.replicas == 0 || self.horizon == 0 || self.minibatch == 0 || self.epochs == 0 {
            return Err(Error::Contract("replicas, horizon, minibatch and epochs must be positive".into()));
        }
        if !(self.max_grad_norm > 0.0) || self.actor_lr < 0.0 || self.critic_lr < 0.0 {
            return Err(Error::Contract("bad optimizer settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Random,
    SingleAgent,
    Selected,
}

impl std::fmt::Display for InitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitKind::Random => "random",
            InitKind::SingleAgent => "single",
            InitKind::Selected => "selected",
        })
    }
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitKind::Random),
            "single" => Ok(InitKind::SingleAgent),
            "selected" => Ok(InitKind::Selected),
            _ => Err(Error::Contract(format!("unknown init kind `{s}`"))),
        }
    }
}

/// Flattened on-policy batch: `[N, 4]` states, `[N, d_a]` pre-squash actions.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub states: Tensor,
    pub pre_squash: Tensor,
    /// Behaviour log-density of the pre-squash Gaussian draw (no tanh or scale terms).
    pub old_log_gauss: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub success_rate: f64,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.old_log_gauss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_gauss.is_empty()
    }
}

/// Collects one rollout with `actor` and attaches GAE advantages and returns.
pub fn collect_batch(
    actor: &SingleHeadActor,
    critic: &Critic,
    task: &GoalTask,
    dynamics: &Dynamics,
    config: &PpoConfig,
    seed: u64,
) -> Result<RolloutBatch> {
    let (m, t) = (config.replicas, config.horizon);
    let mut replicas = ReplicaSet::new(m, task.terrain.clone(), *dynamics)?;
    replicas.reset_all(seed)?;
    let trajectory = rollout(&mut replicas, actor, &vec![0; m], t, seed)?;
    let all_states = Tensor::new(vec![m * (t + 1), STATE_DIM], trajectory.states_flat().to_vec())?;
    let values = critic.values(&all_states)?;
    let per_replica: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let r: Vec<f64> = (0..t).map(|s| sparse_reward(trajectory.state(i, s + 1), task)).collect();
            let v = &values[i * (t + 1)..(i + 1) * (t + 1)];
            let adv = gae(&r, v, config.gamma, config.lambda).expect("shapes match");
            let ret = adv.iter().zip(v).map(|(a, v)| a + v).collect();
            (adv, ret)
        })
        .collect();
    let mut states = Vec::with_capacity(m * t * STATE_DIM);
    for i in 0..m {
        for s in 0..t {
            states.extend_from_slice(trajectory.state(i, s));
        }
    }
    let pre = trajectory.pre_squash_flat().to_vec();
    let d_a = pre.len() / (m * t);
    let scale = actor.policy().scale_correction();
    let old_log_gauss = (0..m * t).map(|r| trajectory.log_densities()[r] + tanh_correction(&pre[r * d_a..(r + 1) * d_a]) + scale).collect();
    let hits = episode_successes(&trajectory, task);
    Ok(RolloutBatch {
        states: Tensor::new(vec![m * t, STATE_DIM], states)?,
        pre_squash: Tensor::new(vec![m * t, d_a], pre)?,
        old_log_gauss,
        advantages: per_replica.iter().flat_map(|(a, _)| a.iter().copied()).collect(),
        returns: per_replica.iter().flat_map(|(_, r)| r.iter().copied()).collect(),
        success_rate: hits.iter().filter(|&&h| h).count() as f64 / m as f64,
    })
}

/// Advantages shifted to zero mean and scaled to unit standard deviation.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    values.iter().map(|v| (v - mean) / (std + 1e-8)).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PpoDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Largest `|ρ − 1|` over the first minibatch of the first pass.
    pub first_ratio_deviation: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

pub struct MinibatchLoss {
    pub loss: Var,
    pub actor_params: Vec<Var>,
    pub critic_params: Vec<Var>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub ratios: Vec<f64>,
}

fn rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let c = t.cols();
    let data = idx.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
    Ok(Tensor::new(vec![idx.len(), c], data)?)
}

/// Records `−clip objective + c_v · value MSE − c_e · entropy` for the rows
/// `idx` of `batch` (advantages already normalized).
pub fn minibatch_loss(
    tape: &mut Tape,
    actor: &SingleHeadActor,
    critic: &Critic,
    batch: &RolloutBatch,
    advantages: &[f64],
    idx: &[usize],
    config: &PpoConfig,
    train_actor: bool,
) -> Result<MinibatchLoss> {
    let n = idx.len();
    let col = |v: Vec<f64>| Tensor::new(vec![n, 1], v);
    let states = tape.constant(rows(&batch.states, idx)?)?;
    let u = rows(&batch.pre_squash, idx)?;
    let graph = actor.policy().forward_on_tape(tape, states, &vec![0; n], train_actor)?;
    let log_gauss = gaussian_log_density_on_tape(tape, graph.mean, graph.log_std, &u)?;
    let old = tape.constant(col(idx.iter().map(|&i| batch.old_log_gauss[i]).collect())?)?;
    let log_ratio = tape.sub(log_gauss, old)?;
    let ratio = tape.exp(log_ratio)?;
    let adv = tape.constant(col(idx.iter().map(|&i| advantages[i]).collect())?)?;
    let unclipped = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip)?;
    let clipped = tape.mul(clipped, adv)?;
    let objective = tape.minimum(unclipped, clipped)?;
    let objective = tape.mean(objective)?;
    let policy_loss = tape.scale(objective, -1.0)?;

    let (values, critic_params) = critic.forward_on_tape(tape, states, true)?;
    let target = tape.constant(col(idx.iter().map(|&i| batch.returns[i]).collect())?)?;
    let err = tape.sub(values, target)?;
    let sq = tape.square(err)?;
    let value_loss = tape.mean(sq)?;

    // Entropy of the pre-squash Gaussian: Σ log σ + d/2 · ln(2πe).
    let d_a = u.cols() as f64;
    let ls = tape.sum_cols(graph.log_std)?;
    let ent = tape.mean(ls)?;
    let entropy = tape.value(ent).item() + 0.5 * d_a * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();

    let v_term = tape.scale(value_loss, config.value_coef)?;
    let mut loss = tape.add(policy_loss, v_term)?;
    if config.entropy_coef != 0.0 {
        let e_term = tape.scale(ent, -config.entropy_coef)?;
        loss = tape.add(loss, e_term)?;
    }
    Ok(MinibatchLoss {
        loss,
        actor_params: graph.params,
        policy_loss: tape.value(policy_loss).item(),
        value_loss: tape.value(value_loss).item(),
        entropy,
        ratios: tape.value(ratio).data().to_vec(),
        critic_params,
    })
}

/// Optimizer state of one PPO learner.
#[derive(Clone, Debug)]
pub struct PpoLearner {
    pub actor: SingleHeadActor,
    pub critic: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

impl PpoLearner {
    pub fn new(actor: SingleHeadActor, config: &PpoConfig, seed: u64) -> Result<Self> {
        Ok(Self { actor, critic: Critic::new(&config.critic_hidden, seed)?, actor_opt: Adam::default(), critic_opt: Adam::default() })
    }
}

fn collect_grads(grads: &Gradients, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| grads.wrt(v)).collect()
}

fn non_finite_abort(e: Error, epoch: usize) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite(what)) => Error::NumericAbort { what: format!("ppo {what}"), epoch },
        other => other,
    }
}

/// `epochs` passes of shuffled minibatches over `batch`. With `train_actor`
/// false only the critic moves. On a non-finite loss or gradient the learner
/// is left exactly as it was and the error is
/// [`Error::NumericAbort`].
pub fn ppo_update(
    learner: &mut PpoLearner,
    batch: &RolloutBatch,
    config: &PpoConfig,
    train_actor: bool,
    seed: u64,
) -> Result<PpoDiagnostics> {
    config.validate()?;
    if batch.is_empty() {
        return Ok(PpoDiagnostics::default());
    }
    let mut work = learner.clone();
    let advantages = normalize(&batch.advantages);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut shuffle = rng::stream(seed, &[rng::SHUFFLE]);
    let mut diag = PpoDiagnostics::default();
    let (mut clipped, mut seen) = (0usize, 0usize);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for (mb, idx) in order.chunks(config.minibatch).enumerate() {
            let mut tape = Tape::new();
            let l = minibatch_loss(&mut tape, &work.actor, &work.critic, batch, &advantages, idx, config, train_actor)
                .map_err(|e| non_finite_abort(e, epoch))?;
            let loss = tape.value(l.loss).item();
            if !loss.is_finite() {
                return Err(Error::NumericAbort { what: "ppo loss".into(), epoch });
            }
            if epoch == 0 && mb == 0 {
                diag.first_ratio_deviation = l.ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
            }
            clipped += l.ratios.iter().filter(|&&r| (r - 1.0).abs() > config.clip).count();
            seen += l.ratios.len();
            let grads = tape.backward(l.loss).map_err(|e| non_finite_abort(e.into(), epoch))?;
            let mut critic_grads = collect_grads(&grads, &l.critic_params);
            if train_actor {
                let mut all = collect_grads(&grads, &l.actor_params);
                let n_actor = all.len();
                all.append(&mut critic_grads);
                let norm = clip_global_norm(&mut all, config.max_grad_norm);
                if !norm.is_finite() {
                    return Err(Error::NumericAbort { what: "ppo gradient".into(), epoch });
                }
                let critic_part = all.split_off(n_actor);
                work.actor_opt.step(work.actor.policy_mut().parameters_mut(), &all, config.actor_lr);
                work.critic_opt.step(work.critic.parameters_mut(), &critic_part, config.critic_lr);
            } else {
                let norm = clip_global_norm(&mut critic_grads, config.max_grad_norm);
                if !norm.is_finite() {
                    return Err(Error::NumericAbort { what: "critic gradient".into(), epoch });
                }
                work.critic_opt.step(work.critic.parameters_mut(), &critic_grads, config.critic_lr);
            }
            diag.policy_loss = l.policy_loss;
            diag.value_loss = l.value_loss;
            diag.entropy = l.entropy;
            diag.minibatches += 1;
        }
    }
    diag.clip_fraction = clipped as f64 / seen.max(1) as f64;
    *learner = work;
    Ok(diag)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    /// Rollout index, warmup rollouts included.
    pub update: usize,
    pub success_rate: f64,
    pub warmup: bool,
    /// The update after this rollout hit a non-finite value and was dropped.
    pub aborted: bool,
}

#[derive(Debug)]
pub struct JumpstartOutcome {
    pub curve: Vec<CurvePoint>,
    pub learner: PpoLearner,
}

/// Fresh single-head actor for the `random` baseline.
pub fn random_actor(shape: PolicyShape, seed: u64) -> Result<SingleHeadActor> {
    SingleHeadActor::new(shape, rng::derive(seed, &[rng::INIT]))
}

/// Warmup rollouts (critic only) followed by PPO updates; logs the success
/// rate of every rollout. `stop` is checked after each point and ends the run early.
pub fn jumpstart_train(
    task: &GoalTask,
    actor: SingleHeadActor,
    config: &PpoConfig,
    dynamics: &Dynamics,
    seed: u64,
    mut stop: impl FnMut(&CurvePoint) -> bool,
) -> Result<JumpstartOutcome> {
    config.validate()?;
    task.validate()?;
    let mut learner = PpoLearner::new(actor, config, seed)?;
    let mut curve = Vec::new();
    for update in 0..config.rollouts() {
        let s = rng::derive(seed, &[rng::EPOCH, update as u64]);
        let batch = collect_batch(&learner.actor, &learner.critic, task, dynamics, config, s)?;
        let warmup = update < config.warmup;
        let aborted = match ppo_update(&mut learner, &batch, config, !warmup, s) {
            Ok(_) => false,
            Err(Error::NumericAbort { .. }) => true,
            Err(e) => return Err(e),
        };
        let point = CurvePoint { update, success_rate: batch.success_rate, warmup, aborted };
        let done = stop(&point);
        curve.push(point);
        if done {
            break;
        }
    }
    Ok(JumpstartOutcome { curve, learner })
}
