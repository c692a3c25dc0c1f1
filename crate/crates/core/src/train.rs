//! Reward-free pretraining of a multi-head policy for maximal pooled state entropy.
//!
//! Each epoch: snapshot the policy, roll every replica out under its assigned
//! head, score each visited state by its k-NN log-distance within the pool of
//! *all* replicas' states, and take one importance-weighted score-function
//! gradient step on the whole network.

use crate::envs::{rollout, Dynamics, ParallelTrajectory, Projection, ReplicaSet, TerrainSpec, STATE_DIM};
use crate::error::{Error, Result};
use crate::estimators::{self, pairwise_diversity, particle_loss, Diversity, ParticleCloud};
use crate::optim::{clip_global_norm, Adam};
use crate::policy::{gaussian_log_density_on_tape, MultiHeadPolicy, PolicyShape};
use crate::rng;
use crate::tensor::{Tape, Tensor};

/// Head of every replica: a contiguous, balanced block partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    heads: usize,
    head_of_replica: Vec<usize>,
}

impl Assignment {
    pub fn head_of_replica(&self) -> &[usize] {
        &self.head_of_replica
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn replicas_of(&self, head: usize) -> Vec<usize> {
        (0..self.head_of_replica.len()).filter(|&i| self.head_of_replica[i] == head).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.heads];
        for &h in &self.head_of_replica {
            sizes[h] += 1;
        }
        sizes
    }
}

/// The first `replicas % heads` heads get one extra replica.
pub fn assign(replicas: usize, heads: usize) -> Result<Assignment> {
    if heads == 0 || heads > replicas {
        return Err(Error::Contract(format!("need 1 <= heads <= replicas, got {heads} heads for {replicas} replicas")));
    }
    let (q, r) = (replicas / heads, replicas % heads);
    let head_of_replica = (0..heads).flat_map(|h| std::iter::repeat_n(h, q + usize::from(h < r))).collect();
    Ok(Assignment { heads, head_of_replica })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub k: usize,
    pub replicas: usize,
    pub heads: usize,
    pub horizon: usize,
    pub seed: u64,
    pub projection: Projection,
    pub max_grad_norm: f64,
    pub terrain: TerrainSpec,
    pub dynamics: Dynamics,
    pub policy: PolicyShape,
    /// Episodes per head for the closing diversity evaluation; 0 skips it.
    pub diversity_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 2e-4,
            milestones: vec![30, 80],
            lr_decay: 0.5,
            k: estimators::DEFAULT_K,
            replicas: 1000,
            heads: 10,
            horizon: 600,
            seed: 0,
            projection: Projection::Planar,
            max_grad_norm: 0.5,
            terrain: TerrainSpec::empty(5.0),
            dynamics: Dynamics::default(),
            policy: PolicyShape::default(),
            diversity_episodes: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.replicas > 0 && self.heads > 0 && self.horizon > 0 && self.k > 0;
        if !positive || !(self.learning_rate >= 0.0) || !(self.lr_decay > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::Contract("training parameters must be positive".into()));
        }
        if self.heads > self.replicas {
            return Err(Error::Contract(format!("{} heads exceed {} replicas", self.heads, self.replicas)));
        }
        if self.replicas * self.horizon < self.k + 1 {
            return Err(Error::Contract("pooled cloud smaller than k + 1".into()));
        }
        self.terrain.validate()
    }

    /// Step-decayed learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.lr_decay.powi(drops as i32)
    }
}

/// Frozen copy of the policy taken when an epoch's rollout starts.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorSnapshot(MultiHeadPolicy);

impl BehaviorSnapshot {
    pub fn take(policy: &MultiHeadPolicy) -> Self {
        Self(policy.clone())
    }

    pub fn policy(&self) -> &MultiHeadPolicy {
        &self.0
    }
}

/// `[m, T]` row-major per-step rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRewards {
    pub replicas: usize,
    pub horizon: usize,
    pub values: Vec<f64>,
}

impl StepRewards {
    pub fn get(&self, replica: usize, t: usize) -> f64 {
        self.values[replica * self.horizon + t]
    }
}

/// Pools `points` (`[m, T, d]`) into one cloud and returns each point's
/// `d · ln max(R_k, ε)` term; neighbours may come from any replica.
pub fn pooled_particle_rewards(points: &[f64], dim: usize, replicas: usize, horizon: usize, k: usize) -> Result<StepRewards> {
    if points.len() != replicas * horizon * dim {
        return Err(Error::Contract("point buffer does not match [m, T, d]".into()));
    }
    if replicas * horizon < k + 1 {
        return Err(Error::Contract(format!("pool of {} states is smaller than k + 1 = {}", replicas * horizon, k + 1)));
    }
    let cloud = ParticleCloud::new(points.to_vec(), dim)?;
    let loss = particle_loss(&cloud, k)?;
    Ok(StepRewards { replicas, horizon, values: loss.per_particle })
}

/// Reward for the action at step `t` of replica `i` is the particle term of the
/// state it leads to, `s_{t+1}^i`, within the pool of every replica's
/// `s_1 … s_T`.
pub fn intrinsic_rewards(trajectory: &ParallelTrajectory, k: usize, projection: Projection) -> Result<StepRewards> {
    let (m, t) = (trajectory.replicas(), trajectory.horizon());
    let points = trajectory.project(projection, 1..t + 1);
    pooled_particle_rewards(&points, projection.dim(), m, t, k)
}

/// Pooled cloud of `s_1 … s_T` of every replica, labelled by head.
pub fn pooled_cloud(trajectory: &ParallelTrajectory, projection: Projection) -> Result<ParticleCloud> {
    let t = trajectory.horizon();
    let labels = trajectory.heads().iter().flat_map(|&h| std::iter::repeat_n(h, t)).collect();
    Ok(ParticleCloud::new(trajectory.project(projection, 1..t + 1), projection.dim())?.with_labels(labels)?)
}

/// Splits a head-labelled cloud into one cloud per head after collapsing exact
/// duplicates across the whole pool (a shared state stays with its first
/// owner), so no within- or cross-cloud distance is zero.
pub fn split_by_head(pool: &ParticleCloud, heads: usize) -> Result<Vec<ParticleCloud>> {
    let pool = pool.distinct();
    let labels = pool.labels().ok_or_else(|| Error::Contract("cloud carries no head labels".into()))?;
    (0..heads)
        .map(|h| {
            let pts: Vec<f64> = (0..pool.len()).filter(|&i| labels[i] == h).flat_map(|i| pool.point(i).to_vec()).collect();
            Ok(ParticleCloud::new(pts, pool.dim())?)
        })
        .collect()
}

/// Per-head clouds of `s_1 … s_T`, deduplicated as in [`split_by_head`].
pub fn head_clouds(trajectory: &ParallelTrajectory, projection: Projection, heads: usize) -> Result<Vec<ParticleCloud>> {
    split_by_head(&pooled_cloud(trajectory, projection)?, heads)
}

/// Independent state samples per head: every head runs `episodes` fresh
/// episodes and each episode contributes one state at a uniformly drawn step
/// in `1..=T`. Consecutive states of one episode are nearly identical, which
/// would make the within-head neighbour distances of the KL estimator
/// artificially small.
pub fn sample_head_states(
    policy: &MultiHeadPolicy,
    terrain: &TerrainSpec,
    dynamics: &Dynamics,
    horizon: usize,
    episodes: usize,
    projection: Projection,
    seed: u64,
) -> Result<ParticleCloud> {
    use rand::Rng;
    let heads = policy.head_count();
    let assignment: Vec<usize> = (0..heads).flat_map(|h| std::iter::repeat_n(h, episodes)).collect();
    let mut replicas = ReplicaSet::new(assignment.len(), terrain.clone(), *dynamics)?;
    let run_seed = rng::derive(seed, &[rng::EVAL]);
    replicas.reset_all(run_seed)?;
    let trajectory = rollout(&mut replicas, policy, &assignment, horizon, run_seed)?;
    let mut pick = rng::stream(seed, &[rng::EVAL, rng::SHUFFLE]);
    let d = projection.dim();
    let mut pts = Vec::with_capacity(assignment.len() * d);
    for i in 0..assignment.len() {
        let t = pick.random_range(1..=horizon);
        pts.extend_from_slice(&trajectory.state(i, t)[..d]);
    }
    Ok(ParticleCloud::new(pts, d)?.with_labels(assignment)?)
}

/// Mean KL between each head's state distribution and that of all other heads.
pub fn evaluate_diversity(
    policy: &MultiHeadPolicy,
    terrain: &TerrainSpec,
    dynamics: &Dynamics,
    horizon: usize,
    episodes: usize,
    projection: Projection,
    k: usize,
    seed: u64,
) -> Result<Diversity> {
    let pool = sample_head_states(policy, terrain, dynamics, horizon, episodes, projection, seed)?;
    Ok(pairwise_diversity(&split_by_head(&pool, policy.head_count())?, k)?)
}

/// k-NN entropy of the pooled cloud with exact duplicate states collapsed.
pub fn pooled_entropy(trajectory: &ParallelTrajectory, projection: Projection, k: usize) -> Result<f64> {
    let cloud = pooled_cloud(trajectory, projection)?.distinct();
    Ok(estimators::entropy_knn(&cloud, k)?.value)
}

/// `w_t = exp(Σ_{u<=t} ln_ratio_u)` per replica over `[m, T]` log-ratios.
pub fn cumulative_weights(log_ratios: &[f64], replicas: usize, horizon: usize) -> Result<Vec<f64>> {
    if log_ratios.len() != replicas * horizon {
        return Err(Error::Contract("log-ratio buffer does not match [m, T]".into()));
    }
    let mut out = Vec::with_capacity(log_ratios.len());
    for i in 0..replicas {
        let mut acc = 0.0;
        for t in 0..horizon {
            acc += log_ratios[i * horizon + t];
            let w = acc.exp();
            if !w.is_finite() {
                return Err(Error::WeightOverflow { replica: i, step: t });
            }
            out.push(w);
        }
    }
    Ok(out)
}

fn states_and_heads(trajectory: &ParallelTrajectory) -> Result<(Tensor, Vec<usize>, Tensor)> {
    let (m, t) = (trajectory.replicas(), trajectory.horizon());
    let mut states = Vec::with_capacity(m * t * STATE_DIM);
    let mut heads = Vec::with_capacity(m * t);
    for i in 0..m {
        for s in 0..t {
            states.extend_from_slice(trajectory.state(i, s));
            heads.push(trajectory.heads()[i]);
        }
    }
    let d_a = trajectory.pre_squash_flat().len() / (m * t);
    Ok((Tensor::new(vec![m * t, STATE_DIM], states)?, heads, Tensor::new(vec![m * t, d_a], trajectory.pre_squash_flat().to_vec())?))
}

/// Log-densities `[m, T]` of the trajectory's actions under `policy`.
pub fn log_densities(policy: &MultiHeadPolicy, trajectory: &ParallelTrajectory) -> Result<Vec<f64>> {
    let (states, heads, u) = states_and_heads(trajectory)?;
    let (mean, log_std) = policy.forward(&states, &heads)?;
    Ok((0..u.rows()).map(|r| policy.squashed_log_density(mean.row(r), log_std.row(r), u.row(r))).collect())
}

/// Cumulative importance weights of `current` against the behaviour snapshot.
pub fn importance_weights(trajectory: &ParallelTrajectory, behavior: &BehaviorSnapshot, current: &MultiHeadPolicy) -> Result<Vec<f64>> {
    let now = log_densities(current, trajectory)?;
    let then = log_densities(behavior.policy(), trajectory)?;
    let ratios: Vec<f64> = now.iter().zip(&then).map(|(a, b)| a - b).collect();
    cumulative_weights(&ratios, trajectory.replicas(), trajectory.horizon())
}

/// Reward-to-go minus the per-step mean over replicas, scaled to unit standard
/// deviation. All zeros when the centred returns have no spread.
pub fn normalized_advantages(rewards: &StepRewards) -> Vec<f64> {
    let (m, t) = (rewards.replicas, rewards.horizon);
    let mut returns = vec![0.0; m * t];
    for i in 0..m {
        let mut acc = 0.0;
        for s in (0..t).rev() {
            acc += rewards.get(i, s);
            returns[i * t + s] = acc;
        }
    }
    for s in 0..t {
        let mean = (0..m).map(|i| returns[i * t + s]).sum::<f64>() / m as f64;
        (0..m).for_each(|i| returns[i * t + s] -= mean);
    }
    let var = returns.iter().map(|a| a * a).sum::<f64>() / returns.len() as f64;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; returns.len()];
    }
    returns.iter().map(|a| a / std).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateDiagnostics {
    /// Mean of `w · Â · ln π` over all samples.
    pub surrogate: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub max_weight_deviation: f64,
    pub stepped: bool,
}

/// Importance-weighted surrogate `mean(w · Â · ln π(a|s))` recorded on `tape`,
/// returned with the policy graph and the weights.
pub fn surrogate_on_tape(
    tape: &mut Tape,
    policy: &MultiHeadPolicy,
    trajectory: &ParallelTrajectory,
    advantages: &[f64],
) -> Result<(crate::tensor::Var, crate::policy::PolicyGraph, Vec<f64>)> {
    let (states, heads, u) = states_and_heads(trajectory)?;
    let n = states.rows();
    if advantages.len() != n {
        return Err(Error::Contract("advantages do not match [m, T]".into()));
    }
    let s = tape.constant(states)?;
    let graph = policy.forward_on_tape(tape, s, &heads, true)?;
    let gauss = gaussian_log_density_on_tape(tape, graph.mean, graph.log_std, &u)?;
    let (mean, log_std) = (tape.value(graph.mean), tape.value(graph.log_std));
    let log_ratios: Vec<f64> =
        (0..n).map(|r| policy.squashed_log_density(mean.row(r), log_std.row(r), u.row(r)) - trajectory.log_densities()[r]).collect();
    let weights = cumulative_weights(&log_ratios, trajectory.replicas(), trajectory.horizon())?;
    let coeff: Vec<f64> = weights.iter().zip(advantages).map(|(w, a)| w * a / n as f64).collect();
    let c = tape.constant(Tensor::new(vec![n, 1], coeff)?)?;
    let weighted = tape.mul(gauss, c)?;
    let surrogate = tape.sum(weighted)?;
    Ok((surrogate, graph, weights))
}

/// One gradient-ascent step on the surrogate for the whole network (trunk and
/// every head) with global-norm clipping.
pub fn update(
    policy: &mut MultiHeadPolicy,
    optimizer: &mut Adam,
    trajectory: &ParallelTrajectory,
    rewards: &StepRewards,
    lr: f64,
    max_grad_norm: f64,
) -> Result<UpdateDiagnostics> {
    let advantages = normalized_advantages(rewards);
    if advantages.iter().all(|&a| a == 0.0) || lr == 0.0 {
        return Ok(UpdateDiagnostics::default());
    }
    let mut tape = Tape::new();
    let (surrogate, graph, weights) = surrogate_on_tape(&mut tape, policy, trajectory, &advantages)?;
    let value = tape.value(surrogate).item();
    let grads = tape.backward(surrogate)?;
    let mut grads = graph.gradients(&grads);
    let grad_norm = clip_global_norm(&mut grads, max_grad_norm);
    if !grad_norm.is_finite() {
        return Err(Error::NumericAbort { what: "gradient".into(), epoch: 0 });
    }
    // Ascend: Adam descends, so feed the negated gradient.
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v = -*v);
    }
    optimizer.step(policy.parameters_mut(), &grads, lr);
    let max_weight_deviation = weights.iter().map(|w| (w - 1.0).abs()).fold(0.0, f64::max);
    Ok(UpdateDiagnostics { surrogate: value, grad_norm, max_weight_deviation, stepped: true })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Pooled k-NN entropy (nats) of the states collected this epoch.
    pub entropy: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub max_weight_deviation: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub policy: MultiHeadPolicy,
    pub curve: Vec<EpochRecord>,
    /// Per-head KL diversity of the final policy (needs >= 2 heads).
    pub diversity: Option<Diversity>,
    pub last_trajectory: Option<ParallelTrajectory>,
    /// Set when an epoch aborted; `curve` then holds the completed epochs.
    pub abort: Option<Error>,
}

/// Fresh episode for every replica under `policy`, seeded by `seed`.
pub fn collect(
    policy: &MultiHeadPolicy,
    assignment: &Assignment,
    terrain: &TerrainSpec,
    dynamics: &Dynamics,
    horizon: usize,
    seed: u64,
) -> Result<ParallelTrajectory> {
    let mut replicas = ReplicaSet::new(assignment.head_of_replica().len(), terrain.clone(), *dynamics)?;
    replicas.reset_all(seed)?;
    rollout(&mut replicas, policy, assignment.head_of_replica(), horizon, seed)
}

/// Runs the full pretraining loop from a freshly initialized policy.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let policy = MultiHeadPolicy::new(config.policy.clone(), config.heads, config.seed)?;
    train_from(config, policy, |_| {})
}

/// Runs the pretraining loop from `policy`, calling `on_epoch` after each epoch.
pub fn train_from(config: &TrainConfig, mut policy: MultiHeadPolicy, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    config.validate()?;
    if policy.head_count() != config.heads {
        return Err(Error::Contract(format!("policy has {} heads, config {}", policy.head_count(), config.heads)));
    }
    let assignment = assign(config.replicas, config.heads)?;
    let mut optimizer = Adam::default();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut last = None;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let step = || -> Result<(EpochRecord, ParallelTrajectory, MultiHeadPolicy, Adam)> {
            let behavior = BehaviorSnapshot::take(&policy);
            let seed = rng::derive(config.seed, &[rng::EPOCH, epoch as u64]);
            let trajectory = collect(behavior.policy(), &assignment, &config.terrain, &config.dynamics, config.horizon, seed)?;
            let entropy = pooled_entropy(&trajectory, config.projection, config.k)?;
            let rewards = intrinsic_rewards(&trajectory, config.k, config.projection)?;
            let mut next = policy.clone();
            let mut opt = optimizer.clone();
            let diag = update(&mut next, &mut opt, &trajectory, &rewards, lr, config.max_grad_norm).map_err(|e| match e {
                Error::NumericAbort { what, .. } => Error::NumericAbort { what, epoch },
                Error::Tensor(t) => Error::NumericAbort { what: t.to_string(), epoch },
                other => other,
            })?;
            let record = EpochRecord { epoch, entropy, lr, grad_norm: diag.grad_norm, max_weight_deviation: diag.max_weight_deviation };
            Ok((record, trajectory, next, opt))
        };
        match step() {
            Ok((record, trajectory, next, opt)) => {
                on_epoch(&record);
                curve.push(record);
                policy = next;
                optimizer = opt;
                last = Some(trajectory);
            }
            Err(e) => {
                return Ok(TrainOutcome { policy, curve, diversity: None, last_trajectory: last, abort: Some(e) });
            }
        }
    }
    let diversity = if config.heads >= 2 && config.diversity_episodes > 0 {
        let seed = rng::derive(config.seed, &[rng::EVAL]);
        Some(evaluate_diversity(
            &policy,
            &config.terrain,
            &config.dynamics,
            config.horizon,
            config.diversity_episodes,
            config.projection,
            config.k,
            seed,
        )?)
    } else {
        None
    };
    Ok(TrainOutcome { policy, curve, diversity, last_trajectory: last, abort: None })
}
