//! Shared-trunk, multi-head Gaussian policy with tanh squashing.
//!
//! `x = trunk(s)` is computed once per state; head `i` maps it through a ReLU
//! adapter `z = relu(A_i x + a_i)` to a mean `W_μ z + b_μ` and a log-std
//! `W_σ z + b_σ` (clamped to `[-5, 2]`). A pre-squash draw
//! `u ~ N(μ, σ²)` becomes the action `low + (high - low)(tanh u + 1)/2`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::envs::{Action, ActionSample, Controller, State, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{Gradients, Tape, Tensor, Var};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Initial log-std bias.
pub const LOG_STD_INIT: f64 = -0.5;
/// Weight scale of the mean and log-std output layers; fresh heads start out
/// nearly identical and centred.
pub const OUTPUT_GAIN: f64 = 0.01;
/// Pre-squash draws are clamped to `±PRE_SQUASH_LIMIT` so that every action
/// stays strictly inside its bounds in floating point.
pub const PRE_SQUASH_LIMIT: f64 = 15.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Fully connected layer `y = x W + b`, `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub(crate) fn init(fan_in: usize, fan_out: usize, gain: f64, bias: f64, rng: &mut Stream) -> Self {
        let limit = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect();
        Self { weight: Tensor::new(vec![fan_in, fan_out], w).expect("finite init"), bias: Tensor::full(&[fan_out], bias) }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Tensor::zeros(&[fan_in, fan_out]), bias: Tensor::zeros(&[fan_out]) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadBlock {
    pub adapter: Linear,
    pub mean: Linear,
    pub log_std: Linear,
}

/// Layer widths of a policy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyShape {
    pub state_dim: usize,
    pub action_dim: usize,
    pub trunk: Vec<usize>,
    pub adapter: usize,
}

impl Default for PolicyShape {
    fn default() -> Self {
        Self { state_dim: STATE_DIM, action_dim: ACTION_DIM, trunk: vec![512, 256], adapter: 256 }
    }
}

impl PolicyShape {
    pub fn new(trunk: Vec<usize>, adapter: usize) -> Self {
        Self { trunk, adapter, ..Self::default() }
    }

    fn trunk_out(&self) -> usize {
        *self.trunk.last().unwrap_or(&self.state_dim)
    }

    pub fn trunk_param_count(&self) -> usize {
        let mut fan_in = self.state_dim;
        let mut n = 0;
        for &w in &self.trunk {
            n += fan_in * w + w;
            fan_in = w;
        }
        n
    }

    pub fn head_param_count(&self) -> usize {
        let x = self.trunk_out();
        x * self.adapter + self.adapter + 2 * (self.adapter * self.action_dim + self.action_dim)
    }
}

/// Parameter handles registered on a tape by [`MultiHeadPolicy::forward_on_tape`].
#[derive(Debug)]
pub struct PolicyGraph {
    pub params: Vec<Var>,
    pub mean: Var,
    pub log_std: Var,
}

impl PolicyGraph {
    /// Gradients in [`MultiHeadPolicy::parameters`] order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.params.iter().map(|&v| grads.wrt(v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadPolicy {
    shape: PolicyShape,
    trunk: Vec<Linear>,
    heads: Vec<HeadBlock>,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl MultiHeadPolicy {
    /// Fan-based uniform weights, zero biases, log-std bias [`LOG_STD_INIT`];
    /// actions bounded to `[-1, 1]`.
    pub fn new(shape: PolicyShape, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Contract("a policy needs at least one head".into()));
        }
        if shape.state_dim == 0 || shape.action_dim == 0 || shape.adapter == 0 || shape.trunk.contains(&0) {
            return Err(Error::Contract(format!("invalid layer widths {shape:?}")));
        }
        let mut r = rng::stream(seed, &[rng::INIT]);
        let mut trunk = Vec::with_capacity(shape.trunk.len());
        let mut fan_in = shape.state_dim;
        for &w in &shape.trunk {
            trunk.push(Linear::init(fan_in, w, 1.0, 0.0, &mut r));
            fan_in = w;
        }
        let heads = (0..heads)
            .map(|_| HeadBlock {
                adapter: Linear::init(fan_in, shape.adapter, 1.0, 0.0, &mut r),
                mean: Linear::init(shape.adapter, shape.action_dim, OUTPUT_GAIN, 0.0, &mut r),
                log_std: Linear::init(shape.adapter, shape.action_dim, OUTPUT_GAIN, LOG_STD_INIT, &mut r),
            })
            .collect();
        let (low, high) = (vec![-1.0; shape.action_dim], vec![1.0; shape.action_dim]);
        Ok(Self { shape, trunk, heads, low, high })
    }

    /// Assembles a policy from explicit layers.
    pub fn from_parts(trunk: Vec<Linear>, heads: Vec<HeadBlock>, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        let first = heads.first().ok_or_else(|| Error::Contract("no heads".into()))?;
        let state_dim = trunk.first().map_or(first.adapter.fan_in(), Linear::fan_in);
        let shape = PolicyShape {
            state_dim,
            action_dim: first.mean.fan_out(),
            trunk: trunk.iter().map(Linear::fan_out).collect(),
            adapter: first.adapter.fan_out(),
        };
        let mut fan_in = state_dim;
        for l in &trunk {
            if l.fan_in() != fan_in || l.bias.len() != l.fan_out() {
                return Err(Error::Contract("trunk layer widths do not chain".into()));
            }
            fan_in = l.fan_out();
        }
        for h in &heads {
            let ok = h.adapter.fan_in() == fan_in
                && h.adapter.fan_out() == shape.adapter
                && h.adapter.bias.len() == shape.adapter
                && [&h.mean, &h.log_std]
                    .iter()
                    .all(|l| l.fan_in() == shape.adapter && l.fan_out() == shape.action_dim && l.bias.len() == shape.action_dim);
            if !ok {
                return Err(Error::Contract("head block widths are inconsistent".into()));
            }
        }
        if low.len() != shape.action_dim || high.len() != shape.action_dim || low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(Error::Contract("action bounds must satisfy low < high per dimension".into()));
        }
        Ok(Self { shape, trunk, heads, low, high })
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn trunk(&self) -> &[Linear] {
        &self.trunk
    }

    pub fn heads(&self) -> &[HeadBlock] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [HeadBlock] {
        &mut self.heads
    }

    pub fn trunk_mut(&mut self) -> &mut [Linear] {
        &mut self.trunk
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.low, &self.high)
    }

    pub fn set_bounds(&mut self, low: Vec<f64>, high: Vec<f64>) -> Result<()> {
        *self = Self::from_parts(self.trunk.clone(), self.heads.clone(), low, high)?;
        Ok(())
    }

    /// All parameters: trunk layers (weight, bias), then per head in index
    /// order the adapter, mean map and log-std map (weight, bias each).
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.trunk {
            out.extend([&l.weight, &l.bias]);
        }
        for h in &self.heads {
            for l in [&h.adapter, &h.mean, &h.log_std] {
                out.extend([&l.weight, &l.bias]);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.trunk {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        for h in &mut self.heads {
            for l in [&mut h.adapter, &mut h.mean, &mut h.log_std] {
                out.extend([&mut l.weight, &mut l.bias]);
            }
        }
        out
    }

    /// Index range of head `h`'s tensors within [`MultiHeadPolicy::parameters`].
    pub fn head_param_range(&self, h: usize) -> std::ops::Range<usize> {
        let start = 2 * self.trunk.len() + 6 * h;
        start..start + 6
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    fn check_heads(&self, heads: &[usize]) -> Result<()> {
        match heads.iter().find(|&&h| h >= self.heads.len()) {
            Some(h) => Err(Error::Contract(format!("head index {h} out of range ({} heads)", self.heads.len()))),
            None => Ok(()),
        }
    }

    /// Records the forward pass on `tape`. Parameters become leaves when
    /// `trainable`, constants otherwise. Returns `[B, d_a]` means and clamped log-stds.
    pub fn forward_on_tape(&self, tape: &mut Tape, states: Var, heads: &[usize], trainable: bool) -> Result<PolicyGraph> {
        self.check_heads(heads)?;
        let rows = tape.value(states).rows();
        if heads.len() != rows {
            return Err(Error::Contract(format!("{} head indices for {rows} states", heads.len())));
        }
        let mut params = Vec::new();
        let mut reg = |tape: &mut Tape, t: &Tensor| -> Result<Var> {
            let v = if trainable { tape.leaf(t.clone())? } else { tape.constant(t.clone())? };
            params.push(v);
            Ok(v)
        };
        let mut x = states;
        for layer in &self.trunk {
            let w = reg(tape, &layer.weight)?;
            let b = reg(tape, &layer.bias)?;
            let y = tape.matmul(x, w)?;
            let y = tape.add(y, b)?;
            x = tape.relu(y)?;
        }
        let mut mean_parts = Vec::new();
        let mut std_parts = Vec::new();
        for (h, block) in self.heads.iter().enumerate() {
            let vars: Vec<Var> = [&block.adapter, &block.mean, &block.log_std]
                .iter()
                .flat_map(|l| [&l.weight, &l.bias])
                .map(|t| reg(tape, t))
                .collect::<Result<_>>()?;
            let idx: Vec<usize> = (0..rows).filter(|&r| heads[r] == h).collect();
            if idx.is_empty() {
                continue;
            }
            let xh = if idx.len() == rows { x } else { tape.select_rows(x, &idx)? };
            let z = tape.matmul(xh, vars[0])?;
            let z = tape.add(z, vars[1])?;
            let z = tape.relu(z)?;
            let mu = tape.matmul(z, vars[2])?;
            let mu = tape.add(mu, vars[3])?;
            let ls = tape.matmul(z, vars[4])?;
            let ls = tape.add(ls, vars[5])?;
            let ls = tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX)?;
            mean_parts.push((mu, idx.clone()));
            std_parts.push((ls, idx));
        }
        let (mean, log_std) = if mean_parts.len() == 1 && mean_parts[0].1.len() == rows {
            (mean_parts[0].0, std_parts[0].0)
        } else {
            (tape.scatter_rows(&mean_parts, rows)?, tape.scatter_rows(&std_parts, rows)?)
        };
        Ok(PolicyGraph { params, mean, log_std })
    }

    /// Means and clamped log-stds for a batch of `[B, d_s]` states.
    pub fn forward(&self, states: &Tensor, heads: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone())?;
        let g = self.forward_on_tape(&mut tape, s, heads, false)?;
        Ok((tape.value(g.mean).clone(), tape.value(g.log_std).clone()))
    }

    fn squash(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.low.iter().zip(&self.high)).map(|(&u, (&lo, &hi))| lo + (hi - lo) * (u.tanh() + 1.0) / 2.0).collect()
    }

    /// Log-density of the squashed action given its pre-squash value `u`.
    pub fn squashed_log_density(&self, mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
        let gauss: f64 = gaussian_log_density(mean, log_std, u);
        gauss - tanh_correction(u) - self.scale_correction()
    }

    /// `Σ ln((high - low) / 2)`.
    pub fn scale_correction(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| ((h - l) / 2.0).ln()).sum()
    }

    /// Draws one action for `state` from head `head`.
    pub fn sample(&self, state: &[f64], head: usize, stream: &mut Stream) -> Result<ActionSample> {
        let states = Tensor::new(vec![1, state.len()], state.to_vec())?;
        let (mean, log_std) = self.forward(&states, &[head])?;
        Ok(self.sample_from(mean.row(0), log_std.row(0), stream))
    }

    fn sample_from(&self, mean: &[f64], log_std: &[f64], stream: &mut Stream) -> ActionSample {
        let u: Vec<f64> = mean
            .iter()
            .zip(log_std)
            .map(|(&m, &ls)| {
                let eps: f64 = stream.sample(StandardNormal);
                (m + ls.exp() * eps).clamp(-PRE_SQUASH_LIMIT, PRE_SQUASH_LIMIT)
            })
            .collect();
        let a = self.squash(&u);
        let log_density = self.squashed_log_density(mean, log_std, &u);
        let mut action = [0.0; ACTION_DIM];
        let mut pre_squash = [0.0; ACTION_DIM];
        action[..a.len().min(ACTION_DIM)].copy_from_slice(&a[..a.len().min(ACTION_DIM)]);
        pre_squash[..u.len().min(ACTION_DIM)].copy_from_slice(&u[..u.len().min(ACTION_DIM)]);
        ActionSample { action, pre_squash, log_density }
    }

    /// Inverts the squashing of `action` (strictly inside the bounds).
    pub fn unsquash(&self, action: &[f64]) -> Result<Vec<f64>> {
        action
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(&a, (&lo, &hi))| {
                let y = 2.0 * (a - lo) / (hi - lo) - 1.0;
                if !(y > -1.0 && y < 1.0) {
                    Err(Error::Boundary { value: a })
                } else {
                    Ok(y.atanh())
                }
            })
            .collect()
    }

    /// Log-density of `action` under head `head` at `state`.
    pub fn log_prob(&self, state: &[f64], action: &[f64], head: usize) -> Result<f64> {
        let u = self.unsquash(action)?;
        let states = Tensor::new(vec![1, state.len()], state.to_vec())?;
        let (mean, log_std) = self.forward(&states, &[head])?;
        Ok(self.squashed_log_density(mean.row(0), log_std.row(0), &u))
    }

    /// Standalone copy of the trunk and head `head`.
    pub fn to_single_head(&self, head: usize) -> Result<SingleHeadActor> {
        self.check_heads(&[head])?;
        let policy = Self::from_parts(self.trunk.clone(), vec![self.heads[head].clone()], self.low.clone(), self.high.clone())?;
        Ok(SingleHeadActor(policy))
    }
}

/// `Σ_j [-½((u_j - μ_j)/σ_j)² - ln σ_j - ½ ln 2π]`.
pub fn gaussian_log_density(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(u)
        .map(|((&m, &ls), &u)| {
            let z = (u - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// `Σ_j ln(1 - tanh²(u_j))`, evaluated as `2(ln 2 - u - softplus(-2u))`.
pub fn tanh_correction(u: &[f64]) -> f64 {
    u.iter()
        .map(|&u| {
            let x = -2.0 * u;
            let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
            2.0 * (std::f64::consts::LN_2 - u - softplus)
        })
        .sum()
}

/// Differentiable Gaussian part of the log-density, one row per sample: `[B, 1]`.
pub fn gaussian_log_density_on_tape(tape: &mut Tape, mean: Var, log_std: Var, u: &Tensor) -> Result<Var> {
    let u = tape.constant(u.clone())?;
    let diff = tape.sub(u, mean)?;
    let neg = tape.scale(log_std, -1.0)?;
    let inv_std = tape.exp(neg)?;
    let z = tape.mul(diff, inv_std)?;
    let z2 = tape.square(z)?;
    let half = tape.scale(z2, -0.5)?;
    let per_dim = tape.sub(half, log_std)?;
    let summed = tape.sum_cols(per_dim)?;
    let d = tape.value(mean).cols();
    let c = tape.constant(Tensor::scalar(-(d as f64) * HALF_LN_2PI))?;
    Ok(tape.add(summed, c)?)
}

impl Controller for MultiHeadPolicy {
    fn head_count(&self) -> usize {
        self.heads.len()
    }

    fn act(&self, states: &[State], heads: &[usize], streams: &mut [Stream]) -> Result<Vec<ActionSample>> {
        if states.len() != heads.len() || states.len() != streams.len() {
            return Err(Error::Contract("states, heads and streams must align".into()));
        }
        let flat: Vec<f64> = states.iter().flat_map(|s| s[..self.shape.state_dim].iter().copied()).collect();
        let batch = Tensor::new(vec![states.len(), self.shape.state_dim], flat)?;
        let (mean, log_std) = self.forward(&batch, heads)?;
        Ok(streams.iter_mut().enumerate().map(|(i, r)| self.sample_from(mean.row(i), log_std.row(i), r)).collect())
    }
}

/// A one-head policy: the trunk plus one copied head.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleHeadActor(MultiHeadPolicy);

impl SingleHeadActor {
    pub fn new(shape: PolicyShape, seed: u64) -> Result<Self> {
        Ok(Self(MultiHeadPolicy::new(shape, 1, seed)?))
    }

    pub fn from_policy(policy: MultiHeadPolicy) -> Result<Self> {
        if policy.head_count() != 1 {
            return Err(Error::Contract(format!("expected 1 head, found {}", policy.head_count())));
        }
        Ok(Self(policy))
    }

    pub fn policy(&self) -> &MultiHeadPolicy {
        &self.0
    }

    pub fn policy_mut(&mut self) -> &mut MultiHeadPolicy {
        &mut self.0
    }

    pub fn into_policy(self) -> MultiHeadPolicy {
        self.0
    }

    pub fn forward(&self, states: &Tensor) -> Result<(Tensor, Tensor)> {
        self.0.forward(states, &vec![0; states.rows()])
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        self.0.log_prob(state, action, 0)
    }
}

impl Controller for SingleHeadActor {
    fn head_count(&self) -> usize {
        1
    }

    fn act(&self, states: &[State], _heads: &[usize], streams: &mut [Stream]) -> Result<Vec<ActionSample>> {
        self.0.act(states, &vec![0; states.len()], streams)
    }
}

/// Convenience for tests and tools: the squashed action for a pre-squash value.
pub fn squash_action(policy: &MultiHeadPolicy, u: &[f64]) -> Action {
    let a = policy.squash(u);
    let mut out = [0.0; ACTION_DIM];
    out.copy_from_slice(&a[..ACTION_DIM]);
    out
}
