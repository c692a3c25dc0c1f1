//! Replicated 2D point-mass navigation.
//!
//! A [`ReplicaSet`] holds `m` identical, independent copies of one environment:
//! a double-integrator point mass in a square arena with optional axis-aligned
//! walls. Replicas never read each other's state, so they can be stepped in any
//! partition across workers with identical results.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// `(x, y, vx, vy)`.
pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

pub type State = [f64; STATE_DIM];
pub type Action = [f64; ACTION_DIM];

const SPAWN_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerrainVariant {
    Empty,
    Maze,
    Corridor,
}

impl std::str::FromStr for TerrainVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empty" => Ok(Self::Empty),
            "maze" => Ok(Self::Maze),
            "corridor" => Ok(Self::Corridor),
            other => Err(Error::Terrain(format!("unknown terrain variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for TerrainVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Empty => "empty",
            Self::Maze => "maze",
            Self::Corridor => "corridor",
        })
    }
}

/// Axis-aligned solid rectangle. Its boundary is free space; only the open
/// interior blocks motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wall {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Wall {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x > self.x_min && x < self.x_max && y > self.y_min && y < self.y_max
    }

    /// Whether the horizontal segment from `(x0, y)` to `(x1, y)` enters the interior.
    fn blocks_horizontal(&self, x0: f64, x1: f64, y: f64) -> bool {
        let (lo, hi) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
        y > self.y_min && y < self.y_max && hi > self.x_min && lo < self.x_max
    }

    fn blocks_vertical(&self, x: f64, y0: f64, y1: f64) -> bool {
        let (lo, hi) = if y0 <= y1 { (y0, y1) } else { (y1, y0) };
        x > self.x_min && x < self.x_max && hi > self.y_min && lo < self.y_max
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerrainSpec {
    pub variant: TerrainVariant,
    /// The arena is `[-half_width, half_width]²`.
    pub half_width: f64,
    pub walls: Vec<Wall>,
    pub spawn: [f64; 2],
}

impl TerrainSpec {
    pub fn empty(half_width: f64) -> Self {
        Self { variant: TerrainVariant::Empty, half_width, walls: Vec::new(), spawn: [0.0, 0.0] }
    }

    /// Two staggered horizontal walls forming an S-shaped passage.
    pub fn maze(half_width: f64) -> Self {
        let w = half_width;
        Self {
            variant: TerrainVariant::Maze,
            half_width,
            walls: vec![Wall::new(-w, 0.36 * w, 0.4 * w, 0.44 * w), Wall::new(-0.4 * w, -0.44 * w, w, -0.36 * w)],
            spawn: [0.0, 0.0],
        }
    }

    /// A horizontal corridor through the arena centre.
    pub fn corridor(half_width: f64) -> Self {
        let w = half_width;
        Self {
            variant: TerrainVariant::Corridor,
            half_width,
            walls: vec![Wall::new(-0.8 * w, 0.16 * w, 0.8 * w, 0.24 * w), Wall::new(-0.8 * w, -0.24 * w, 0.8 * w, -0.16 * w)],
            spawn: [0.0, 0.0],
        }
    }

    pub fn preset(variant: TerrainVariant, half_width: f64) -> Self {
        match variant {
            TerrainVariant::Empty => Self::empty(half_width),
            TerrainVariant::Maze => Self::maze(half_width),
            TerrainVariant::Corridor => Self::corridor(half_width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.half_width;
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::Terrain(format!("arena half-width must be positive, got {w}")));
        }
        for wall in &self.walls {
            let inside = [wall.x_min, wall.x_max, wall.y_min, wall.y_max].iter().all(|v| v.abs() <= w);
            if !inside || wall.x_min >= wall.x_max || wall.y_min >= wall.y_max {
                return Err(Error::Terrain(format!("wall {wall:?} is empty or leaves the arena")));
            }
        }
        if !self.is_free(self.spawn[0], self.spawn[1]) {
            return Err(Error::Terrain(format!("spawn {:?} is not free space", self.spawn)));
        }
        Ok(())
    }

    pub fn in_arena(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.half_width && y.abs() <= self.half_width
    }

    pub fn is_free(&self, x: f64, y: f64) -> bool {
        self.in_arena(x, y) && !self.walls.iter().any(|w| w.contains(x, y))
    }

    fn x_move_blocked(&self, x0: f64, x1: f64, y: f64) -> bool {
        !self.in_arena(x1, y) || self.walls.iter().any(|w| w.blocks_horizontal(x0, x1, y))
    }

    fn y_move_blocked(&self, x: f64, y0: f64, y1: f64) -> bool {
        !self.in_arena(x, y1) || self.walls.iter().any(|w| w.blocks_vertical(x, y0, y1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dynamics {
    /// Integration step (s).
    pub dt: f64,
    /// Acceleration for a unit action (m/s²).
    pub max_accel: f64,
    /// Speed cap (m/s).
    pub max_speed: f64,
    /// Standard deviation of the spawn jitter (m).
    pub spawn_jitter: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self { dt: 0.1, max_accel: 1.0, max_speed: 1.0, spawn_jitter: 0.05 }
    }
}

/// Advances one replica in place. Motion is resolved per axis: a move along an
/// axis that would leave the arena or cross a wall interior is cancelled and
/// that velocity component zeroed.
pub fn step_state(terrain: &TerrainSpec, dynamics: &Dynamics, s: &mut State, a: &Action) {
    let (mut vx, mut vy) = (s[2] + a[0] * dynamics.max_accel * dynamics.dt, s[3] + a[1] * dynamics.max_accel * dynamics.dt);
    let speed = vx.hypot(vy);
    if speed > dynamics.max_speed {
        let f = dynamics.max_speed / speed;
        vx *= f;
        vy *= f;
    }
    let (x, y) = (s[0], s[1]);
    let nx = x + vx * dynamics.dt;
    let x = if terrain.x_move_blocked(x, nx, y) {
        vx = 0.0;
        x
    } else {
        nx
    };
    let ny = y + vy * dynamics.dt;
    let y = if terrain.y_move_blocked(x, y, ny) {
        vy = 0.0;
        y
    } else {
        ny
    };
    *s = [x, y, vx, vy];
}

fn check_action(a: &Action) -> Result<()> {
    for &v in a {
        if !v.is_finite() {
            return Err(Error::Action(format!("non-finite action component {v}")));
        }
        if v.abs() > 1.0 {
            return Err(Error::Action(format!("action component {v} outside [-1, 1]")));
        }
    }
    Ok(())
}

/// `m` identical copies of one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaSet {
    terrain: TerrainSpec,
    dynamics: Dynamics,
    states: Vec<State>,
}

impl ReplicaSet {
    /// Replicas start at the exact spawn point until [`ReplicaSet::reset_all`].
    pub fn new(count: usize, terrain: TerrainSpec, dynamics: Dynamics) -> Result<Self> {
        if count == 0 {
            return Err(Error::Contract("replica count must be positive".into()));
        }
        terrain.validate()?;
        let s0 = [terrain.spawn[0], terrain.spawn[1], 0.0, 0.0];
        Ok(Self { terrain, dynamics, states: vec![s0; count] })
    }

    /// Builds a set from explicit states (e.g. a saved mid-episode snapshot).
    pub fn from_states(terrain: TerrainSpec, dynamics: Dynamics, states: Vec<State>) -> Result<Self> {
        terrain.validate()?;
        if states.is_empty() {
            return Err(Error::Contract("replica count must be positive".into()));
        }
        if let Some(s) = states.iter().find(|s| !terrain.is_free(s[0], s[1])) {
            return Err(Error::Terrain(format!("state {s:?} is not free space")));
        }
        Ok(Self { terrain, dynamics, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn terrain(&self) -> &TerrainSpec {
        &self.terrain
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// Spawn point plus independent Gaussian jitter per replica, zero velocity.
    /// Replica `i` draws from its own stream, so the result depends only on `seed`.
    pub fn reset_all(&mut self, seed: u64) -> Result<()> {
        let sigma = self.dynamics.spawn_jitter;
        let normal = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Contract(format!("spawn jitter: {e}")))?;
        let terrain = &self.terrain;
        self.states.par_iter_mut().enumerate().try_for_each(|(i, s)| {
            let mut r = rng::stream(seed, &[rng::RESET, i as u64]);
            for _ in 0..SPAWN_ATTEMPTS {
                let x = terrain.spawn[0] + normal.sample(&mut r);
                let y = terrain.spawn[1] + normal.sample(&mut r);
                if terrain.is_free(x, y) {
                    *s = [x, y, 0.0, 0.0];
                    return Ok(());
                }
            }
            Err(Error::SpawnBlocked { replica: i, attempts: SPAWN_ATTEMPTS })
        })
    }

    /// One synchronous transition of every replica; `actions[i]` drives replica `i`.
    pub fn step_all(&mut self, actions: &[Action]) -> Result<()> {
        if actions.len() != self.states.len() {
            return Err(Error::Contract(format!("{} actions for {} replicas", actions.len(), self.states.len())));
        }
        actions.iter().try_for_each(check_action)?;
        let (terrain, dynamics) = (&self.terrain, &self.dynamics);
        self.states.par_iter_mut().zip(actions.par_iter()).for_each(|(s, a)| step_state(terrain, dynamics, s, a));
        Ok(())
    }
}

/// One sampled action together with the pre-squash Gaussian draw and the
/// log-density of the action under the sampling policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    pub action: Action,
    pub pre_squash: Action,
    pub log_density: f64,
}

/// Anything that can pick actions for a batch of replicas.
pub trait Controller {
    fn head_count(&self) -> usize;

    /// One sample per row; row `i` uses head `heads[i]` and draws noise from `streams[i]`.
    fn act(&self, states: &[State], heads: &[usize], streams: &mut [Stream]) -> Result<Vec<ActionSample>>;
}

/// States, actions and behaviour log-densities of every replica over one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelTrajectory {
    replicas: usize,
    horizon: usize,
    /// `[m, T + 1, 4]`
    states: Vec<f64>,
    /// `[m, T, 2]`
    actions: Vec<f64>,
    /// `[m, T, 2]`
    pre_squash: Vec<f64>,
    /// `[m, T]`
    log_densities: Vec<f64>,
    /// `[m]`
    heads: Vec<usize>,
}

/// Which state coordinates enter entropy and KL particles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Projection {
    /// `(x, y)` only.
    #[default]
    Planar,
    /// `(x, y, vx, vy)`.
    Full,
}

impl Projection {
    pub fn dim(self) -> usize {
        match self {
            Self::Planar => 2,
            Self::Full => STATE_DIM,
        }
    }
}

impl ParallelTrajectory {
    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn state(&self, replica: usize, t: usize) -> &[f64] {
        let o = (replica * (self.horizon + 1) + t) * STATE_DIM;
        &self.states[o..o + STATE_DIM]
    }

    pub fn action(&self, replica: usize, t: usize) -> &[f64] {
        let o = (replica * self.horizon + t) * ACTION_DIM;
        &self.actions[o..o + ACTION_DIM]
    }

    pub fn pre_squash(&self, replica: usize, t: usize) -> &[f64] {
        let o = (replica * self.horizon + t) * ACTION_DIM;
        &self.pre_squash[o..o + ACTION_DIM]
    }

    pub fn log_density(&self, replica: usize, t: usize) -> f64 {
        self.log_densities[replica * self.horizon + t]
    }

    pub fn states_flat(&self) -> &[f64] {
        &self.states
    }

    pub fn actions_flat(&self) -> &[f64] {
        &self.actions
    }

    pub fn pre_squash_flat(&self) -> &[f64] {
        &self.pre_squash
    }

    pub fn log_densities(&self) -> &[f64] {
        &self.log_densities
    }

    pub fn state_shape(&self) -> [usize; 3] {
        [self.replicas, self.horizon + 1, STATE_DIM]
    }

    pub fn action_shape(&self) -> [usize; 3] {
        [self.replicas, self.horizon, ACTION_DIM]
    }

    /// Projected coordinates of steps `steps` of every replica, replica-major.
    pub fn project(&self, projection: Projection, steps: std::ops::Range<usize>) -> Vec<f64> {
        let d = projection.dim();
        let mut out = Vec::with_capacity(self.replicas * steps.len() * d);
        for i in 0..self.replicas {
            for t in steps.clone() {
                out.extend_from_slice(&self.state(i, t)[..d]);
            }
        }
        out
    }

    /// Assembles a trajectory from raw buffers, checking every shape.
    pub fn from_parts(
        horizon: usize,
        states: Vec<f64>,
        actions: Vec<f64>,
        pre_squash: Vec<f64>,
        log_densities: Vec<f64>,
        heads: Vec<usize>,
    ) -> Result<Self> {
        let m = heads.len();
        let ok = m > 0
            && states.len() == m * (horizon + 1) * STATE_DIM
            && actions.len() == m * horizon * ACTION_DIM
            && pre_squash.len() == actions.len()
            && log_densities.len() == m * horizon;
        if !ok {
            return Err(Error::Contract("inconsistent trajectory buffer sizes".into()));
        }
        Ok(Self { replicas: m, horizon, states, actions, pre_squash, log_densities, heads })
    }
}

/// Runs `horizon` steps from the current replica states. Replica `i` is driven by
/// head `assignment[i]` and samples actions from stream `(seed, ACTION, i)`.
pub fn rollout(
    replicas: &mut ReplicaSet,
    controller: &dyn Controller,
    assignment: &[usize],
    horizon: usize,
    seed: u64,
) -> Result<ParallelTrajectory> {
    let m = replicas.len();
    if assignment.len() != m {
        return Err(Error::Contract(format!("assignment covers {} of {m} replicas", assignment.len())));
    }
    if let Some(&h) = assignment.iter().find(|&&h| h >= controller.head_count()) {
        return Err(Error::Contract(format!("head {h} out of range")));
    }
    let mut streams: Vec<Stream> = (0..m).map(|i| rng::stream(seed, &[rng::ACTION, i as u64])).collect();
    let mut states = vec![0.0; m * (horizon + 1) * STATE_DIM];
    let mut actions = vec![0.0; m * horizon * ACTION_DIM];
    let mut pre_squash = vec![0.0; m * horizon * ACTION_DIM];
    let mut log_densities = vec![0.0; m * horizon];
    let record = |states: &mut [f64], set: &ReplicaSet, t: usize| {
        for (i, s) in set.states().iter().enumerate() {
            let o = (i * (horizon + 1) + t) * STATE_DIM;
            states[o..o + STATE_DIM].copy_from_slice(s);
        }
    };
    record(&mut states, replicas, 0);
    for t in 0..horizon {
        let samples = controller.act(replicas.states(), assignment, &mut streams)?;
        let acts: Vec<Action> = samples.iter().map(|s| s.action).collect();
        replicas.step_all(&acts)?;
        for (i, s) in samples.iter().enumerate() {
            let o = (i * horizon + t) * ACTION_DIM;
            actions[o..o + ACTION_DIM].copy_from_slice(&s.action);
            pre_squash[o..o + ACTION_DIM].copy_from_slice(&s.pre_squash);
            log_densities[i * horizon + t] = s.log_density;
        }
        record(&mut states, replicas, t + 1);
    }
    Ok(ParallelTrajectory { replicas: m, horizon, states, actions, pre_squash, log_densities, heads: assignment.to_vec() })
}

/// Visit counts on a `bins × bins` grid over the arena. Row 0 is the top
/// (largest `y`), column 0 the left edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccupancyGrid {
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl OccupancyGrid {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Contract("bins must be >= 1".into()));
        }
        Ok(Self { bins, counts: vec![0; bins * bins] })
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.bins + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add_point(&mut self, x: f64, y: f64, half_width: f64) {
        let cell = |v: f64| {
            let f = ((v + half_width) / (2.0 * half_width) * self.bins as f64).floor();
            (f.max(0.0) as usize).min(self.bins - 1)
        };
        let row = self.bins - 1 - cell(y);
        let col = cell(x);
        self.counts[row * self.bins + col] += 1;
    }
}

/// Counts every stored state `(x, y)` of the replicas whose head passes `head_filter`.
pub fn occupancy_grid(
    trajectory: &ParallelTrajectory,
    bins: usize,
    half_width: f64,
    head_filter: Option<&[usize]>,
) -> Result<OccupancyGrid> {
    let mut grid = OccupancyGrid::new(bins)?;
    for i in 0..trajectory.replicas {
        if head_filter.is_some_and(|f| !f.contains(&trajectory.heads[i])) {
            continue;
        }
        for t in 0..=trajectory.horizon {
            let s = trajectory.state(i, t);
            grid.add_point(s[0], s[1], half_width);
        }
    }
    Ok(grid)
}

/// A controller that ignores state: head `h` always outputs `actions[h]`.
/// Used for scripted baselines and tests.
#[derive(Clone, Debug)]
pub struct FixedActions {
    pub actions: Vec<Action>,
}

impl Controller for FixedActions {
    fn head_count(&self) -> usize {
        self.actions.len()
    }

    fn act(&self, states: &[State], heads: &[usize], _streams: &mut [Stream]) -> Result<Vec<ActionSample>> {
        Ok(states
            .iter()
            .zip(heads)
            .map(|(_, &h)| ActionSample { action: self.actions[h], pre_squash: self.actions[h], log_density: 0.0 })
            .collect())
    }
}

/// Uniform random actions in `[-1, 1]²`.
#[derive(Clone, Debug)]
pub struct UniformRandom {
    pub heads: usize,
}

impl Controller for UniformRandom {
    fn head_count(&self) -> usize {
        self.heads
    }

    fn act(&self, states: &[State], _heads: &[usize], streams: &mut [Stream]) -> Result<Vec<ActionSample>> {
        Ok(states
            .iter()
            .zip(streams.iter_mut())
            .map(|(_, r)| {
                let a = [r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0)];
                ActionSample { action: a, pre_squash: a, log_density: -(4f64.ln()) }
            })
            .collect())
    }
}
