//! The four subcommands. Each returns `Ok(())` or a [`CliError`] that maps to
//! a stable exit code.

use std::path::{Path, PathBuf};

use kmyriad::envs::{occupancy_grid, rollout, OccupancyGrid, ReplicaSet, ACTION_DIM, STATE_DIM};
use kmyriad::estimators::pairwise_diversity;
use kmyriad::jumpstart::{evaluate_heads, jumpstart_train, random_actor, GoalTask, InitKind};
use kmyriad::policy::{MultiHeadPolicy, SingleHeadActor};
use kmyriad::rng;
use kmyriad::train::{assign, sample_head_states, split_by_head, train_from};
use kmyriad::Error;

use crate::checkpoint;
use crate::config::{ConfigError, RunConfig};
use crate::io::{self, CurveWriter, DIVERSITY_HEADER, ENTROPY_HEADER, JUMPSTART_HEADER};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_CHECKSUM: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(e) => match e {
                Error::NumericAbort { .. } | Error::WeightOverflow { .. } => EXIT_NUMERIC,
                Error::Io(_) | Error::Checkpoint(_) => EXIT_IO,
                Error::ChecksumMismatch { .. } => EXIT_CHECKSUM,
                _ => EXIT_CONFIG,
            },
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    std::fs::create_dir_all(&cfg.out).map_err(Error::from)?;
    Ok(cfg.out.clone())
}

fn write_resolved(dir: &Path, text: &str) -> CliResult {
    std::fs::write(dir.join("config.resolved"), text).map_err(Error::from)?;
    Ok(())
}

/// One row per head plus a `mean` row, for `policy` under the run settings.
pub fn diversity_rows(policy: &MultiHeadPolicy, cfg: &RunConfig, seed: u64) -> CliResult<Vec<[String; 4]>> {
    let heads = policy.head_count();
    if heads < 2 {
        return Err(Error::Contract(format!("diversity needs at least two heads; the checkpoint has {heads}")).into());
    }
    let t = &cfg.train;
    let eval_seed = rng::derive(seed, &[rng::EVAL]);
    let pool = sample_head_states(policy, &t.terrain, &t.dynamics, t.horizon, cfg.diversity_rollouts, t.projection, eval_seed)?;
    let clouds = split_by_head(&pool, heads)?;
    let d = pairwise_diversity(&clouds, t.k).map_err(Error::from)?;
    let mut rows: Vec<[String; 4]> = d
        .per_head
        .iter()
        .zip(&clouds)
        .enumerate()
        .map(|(h, (kl, c))| [h.to_string(), kl.to_string(), t.k.to_string(), c.len().to_string()])
        .collect();
    rows.push(["mean".into(), d.mean.to_string(), t.k.to_string(), pool.len().to_string()]);
    Ok(rows)
}

fn write_diversity(path: &Path, rows: &[[String; 4]]) -> CliResult {
    let mut w = CurveWriter::create(path, &DIVERSITY_HEADER)?;
    for r in rows {
        w.row(r)?;
    }
    Ok(())
}

/// Trains one policy per seed. Writes `entropy.csv` for all seeds and, per
/// seed directory, the checkpoint, final-epoch trajectory, per-head heatmaps
/// and the diversity table.
pub fn pretrain(cfg: &RunConfig) -> CliResult {
    let out = prepare_out(cfg)?;
    let mut base = cfg.train.clone();
    base.diversity_episodes = 0;
    base.validate()?;
    write_resolved(&out, &cfg.render(None))?;
    let mut curve = CurveWriter::create(&out.join("entropy.csv"), &ENTROPY_HEADER)?;
    for &seed in &cfg.seeds {
        let tc = kmyriad::train::TrainConfig { seed, ..base.clone() };
        let dir = out.join(format!("seed-{seed}"));
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        let policy = MultiHeadPolicy::new(tc.policy.clone(), tc.heads, seed)?;
        let mut write_err = None;
        let outcome = train_from(&tc, policy, |r| {
            let row = [r.epoch.to_string(), r.entropy.to_string(), r.lr.to_string(), seed.to_string()];
            if let Err(e) = curve.row(&row) {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(e.into());
        }
        checkpoint::save(&dir.join("policy.kmyr"), &outcome.policy)?;
        if let Some(e) = outcome.abort {
            return Err(e.into());
        }
        if let Some(traj) = &outcome.last_trajectory {
            io::write_trajectory(&dir.join("trajectory.csv"), traj)?;
            for h in 0..tc.heads {
                let grid = occupancy_grid(traj, cfg.bins, tc.terrain.half_width, Some(&[h][..]))?;
                io::write_heatmap(&dir.join(format!("heatmap_head{h}.csv")), &grid, tc.terrain.half_width)?;
            }
        }
        if tc.heads >= 2 && cfg.diversity_rollouts > 0 && tc.epochs > 0 {
            write_diversity(&dir.join("diversity.csv"), &diversity_rows(&outcome.policy, cfg, seed)?)?;
        }
    }
    Ok(())
}

/// KL diversity table of a checkpoint, seeded by the first run seed.
pub fn diversity(cfg: &RunConfig, checkpoint_path: &Path) -> CliResult {
    let policy = checkpoint::load(checkpoint_path)?;
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let rows = diversity_rows(&policy, cfg, seed)?;
    let out = prepare_out(cfg)?;
    write_resolved(&out, &cfg.render(None))?;
    write_diversity(&out.join("diversity.csv"), &rows)
}

pub fn goal_task(cfg: &RunConfig, seed: u64) -> CliResult<GoalTask> {
    let terrain = cfg.train.terrain.clone();
    let mut task = match cfg.task.goal {
        Some(goal) => GoalTask::new(goal, cfg.task.radius, terrain)?,
        None => GoalTask::sample(terrain, cfg.task.radius, cfg.task.annulus, cfg.task.seed.unwrap_or(seed))?,
    };
    task.annulus = cfg.task.annulus;
    Ok(task)
}

/// PPO from a random actor (`checkpoint = None`) or from a checkpoint: a
/// single-head checkpoint is used as is, a multi-head one is scored on the
/// task and its best head kept.
pub fn jumpstart(cfg: &RunConfig, checkpoint_path: Option<&Path>) -> CliResult {
    let source = checkpoint_path.map(checkpoint::load).transpose()?;
    if let Some(p) = &source {
        let s = p.shape();
        if s.state_dim != STATE_DIM || s.action_dim != ACTION_DIM {
            return Err(Error::Contract(format!(
                "checkpoint maps {} state dims to {} action dims; the environment needs {STATE_DIM} -> {ACTION_DIM}",
                s.state_dim, s.action_dim
            ))
            .into());
        }
    }
    let init = match &source {
        None => InitKind::Random,
        Some(p) if p.head_count() == 1 => InitKind::SingleAgent,
        Some(_) => InitKind::Selected,
    };
    let ppo = cfg.ppo_for(init);
    ppo.validate()?;
    let out = prepare_out(cfg)?;
    write_resolved(&out, &cfg.render(Some(&ppo)))?;
    let mut curve = CurveWriter::create(&out.join("jumpstart.csv"), &JUMPSTART_HEADER)?;
    let mut report = String::new();
    for &seed in &cfg.seeds {
        let task = goal_task(cfg, seed)?;
        let actor = match &source {
            None => random_actor(cfg.train.policy.clone(), seed)?,
            Some(p) if p.head_count() == 1 => SingleHeadActor::from_policy(p.clone())?,
            Some(p) => {
                let horizon = cfg.task.eval_horizon.unwrap_or(ppo.horizon);
                let ev = evaluate_heads(p, &task, &cfg.train.dynamics, horizon, cfg.task.eval_rollouts, seed)?;
                let rates: Vec<String> = ev.success_rates.iter().map(f64::to_string).collect();
                report.push_str(&format!(
                    "seed {seed} goal {},{} rates {} selected {}\n",
                    task.goal[0],
                    task.goal[1],
                    rates.join(","),
                    ev.selected
                ));
                p.to_single_head(ev.selected)?
            }
        };
        let mut write_err = None;
        jumpstart_train(&task, actor, &ppo, &cfg.train.dynamics, seed, |pt| {
            let row = [pt.update.to_string(), pt.success_rate.to_string(), seed.to_string(), init.to_string()];
            if let Err(e) = curve.row(&row) {
                write_err.get_or_insert(e);
            }
            false
        })?;
        if let Some(e) = write_err {
            return Err(e.into());
        }
    }
    if init == InitKind::Selected {
        std::fs::write(out.join("selection.txt"), report).map_err(Error::from)?;
    }
    Ok(())
}

/// Per-head occupancy grids from a trajectory file or from a fresh rollout of
/// a checkpoint.
pub fn heatmap(cfg: &RunConfig, input: &Path) -> CliResult {
    let half_width = cfg.train.terrain.half_width;
    let grids: Vec<OccupancyGrid> = if checkpoint::is_checkpoint(input) {
        let policy = checkpoint::load(input)?;
        let t = &cfg.train;
        let assignment = assign(t.replicas, policy.head_count())?;
        let seed = rng::derive(cfg.seeds.first().copied().unwrap_or(0), &[rng::EVAL]);
        let mut replicas = ReplicaSet::new(t.replicas, t.terrain.clone(), t.dynamics)?;
        replicas.reset_all(seed)?;
        let traj = rollout(&mut replicas, &policy, assignment.head_of_replica(), t.horizon, seed)?;
        (0..policy.head_count()).map(|h| occupancy_grid(&traj, cfg.bins, half_width, Some(&[h][..]))).collect::<kmyriad::Result<_>>()?
    } else {
        let rows = io::read_trajectory(input)?;
        let heads = rows.iter().map(|r| r.head + 1).max().unwrap_or(0);
        let mut grids = (0..heads).map(|_| OccupancyGrid::new(cfg.bins)).collect::<kmyriad::Result<Vec<_>>>()?;
        for r in &rows {
            grids[r.head].add_point(r.state[0], r.state[1], half_width);
        }
        grids
    };
    let out = prepare_out(cfg)?;
    for (h, g) in grids.iter().enumerate() {
        io::write_heatmap(&out.join(format!("heatmap_head{h}.csv")), g, half_width)?;
    }
    Ok(())
}
