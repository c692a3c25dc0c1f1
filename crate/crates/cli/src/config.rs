//! Run configuration: flat `section.key = value` text plus flag overrides.
//!
//! Blank lines and `#` comments are ignored. Lists are comma-separated.
//! `ppo.*` keys override the preset picked for the actor's initialization.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kmyriad::envs::{Dynamics, Projection, TerrainSpec, TerrainVariant};
use kmyriad::jumpstart::{InitKind, PpoConfig, DEFAULT_ANNULUS};
use kmyriad::policy::PolicyShape;
use kmyriad::train::TrainConfig;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Invalid { origin: String, message: String },
}

fn invalid(origin: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { origin: origin.to_string(), message: message.into() }
}

const PPO_KEYS: &[&str] = &[
    "gamma",
    "lambda",
    "clip",
    "entropy_coef",
    "value_coef",
    "max_grad_norm",
    "epochs",
    "warmup",
    "minibatch",
    "horizon",
    "replicas",
    "total_steps",
    "actor_lr",
    "critic_lr",
    "critic_hidden",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSettings {
    /// Fixed goal; sampled from the annulus by seed when absent.
    pub goal: Option<[f64; 2]>,
    pub radius: f64,
    pub annulus: (f64, f64),
    /// Goal seed; the run seed when absent.
    pub seed: Option<u64>,
    /// Episodes per head when scoring heads.
    pub eval_rollouts: usize,
    pub eval_horizon: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub task: TaskSettings,
    /// Episodes per head for diversity estimates.
    pub diversity_rollouts: usize,
    pub bins: usize,
    ppo: Vec<(String, String)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            seeds: vec![0, 1, 56, 123],
            out: PathBuf::from("runs"),
            task: TaskSettings { goal: None, radius: 1.0, annulus: DEFAULT_ANNULUS, seed: None, eval_rollouts: 50, eval_horizon: None },
            diversity_rollouts: 1000,
            bins: 50,
            ppo: Vec::new(),
        }
    }
}

fn num<T: std::str::FromStr>(origin: &str, key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| invalid(origin, format!("`{key}` expects a number, got `{value}`")))
}

fn list<T: std::str::FromStr>(origin: &str, key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(origin, key, v)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(&path.display().to_string(), format!("cannot read config: {e}")))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, name: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = format!("{name}:{}", n + 1);
            let (key, value) =
                line.split_once('=').ok_or_else(|| invalid(&origin, format!("expected `section.key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim(), &origin)?;
        }
        Ok(cfg)
    }

    /// Sets one key; `origin` names the line or flag for error messages.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "terrain.variant" => {
                let v: TerrainVariant = value.parse().map_err(|_| invalid(origin, format!("unknown terrain `{value}`")))?;
                t.terrain = TerrainSpec::preset(v, t.terrain.half_width);
            }
            "terrain.half_width" => t.terrain = TerrainSpec::preset(t.terrain.variant, num(origin, key, value)?),
            "dynamics.dt" => t.dynamics.dt = num(origin, key, value)?,
            "dynamics.max_accel" => t.dynamics.max_accel = num(origin, key, value)?,
            "dynamics.max_speed" => t.dynamics.max_speed = num(origin, key, value)?,
            "dynamics.spawn_jitter" => t.dynamics.spawn_jitter = num(origin, key, value)?,
            "train.epochs" => t.epochs = num(origin, key, value)?,
            "train.lr" => t.learning_rate = num(origin, key, value)?,
            "train.milestones" => t.milestones = list(origin, key, value)?,
            "train.lr_decay" => t.lr_decay = num(origin, key, value)?,
            "train.k" => t.k = num(origin, key, value)?,
            "train.envs" => t.replicas = num(origin, key, value)?,
            "train.heads" => t.heads = num(origin, key, value)?,
            "train.horizon" => t.horizon = num(origin, key, value)?,
            "train.max_grad_norm" => t.max_grad_norm = num(origin, key, value)?,
            "train.projection" => {
                t.projection = match value {
                    "planar" => Projection::Planar,
                    "full" => Projection::Full,
                    _ => return Err(invalid(origin, format!("projection must be `planar` or `full`, got `{value}`"))),
                }
            }
            "train.trunk" => t.policy = PolicyShape::new(list(origin, key, value)?, t.policy.adapter),
            "train.adapter" => t.policy = PolicyShape::new(t.policy.trunk.clone(), num(origin, key, value)?),
            "run.seeds" => self.seeds = list(origin, key, value)?,
            "run.out" => self.out = PathBuf::from(value),
            "task.goal" => {
                let g: Vec<f64> = list(origin, key, value)?;
                if g.len() != 2 {
                    return Err(invalid(origin, "`task.goal` expects `x,y`"));
                }
                self.task.goal = Some([g[0], g[1]]);
            }
            "task.radius" => self.task.radius = num(origin, key, value)?,
            "task.annulus" => {
                let a: Vec<f64> = list(origin, key, value)?;
                if a.len() != 2 {
                    return Err(invalid(origin, "`task.annulus` expects `r_min,r_max`"));
                }
                self.task.annulus = (a[0], a[1]);
            }
            "task.seed" => self.task.seed = Some(num(origin, key, value)?),
            "task.eval_rollouts" => self.task.eval_rollouts = num(origin, key, value)?,
            "task.eval_horizon" => self.task.eval_horizon = Some(num(origin, key, value)?),
            "diversity.rollouts" => self.diversity_rollouts = num(origin, key, value)?,
            "heatmap.bins" => self.bins = num(origin, key, value)?,
            _ => match key.strip_prefix("ppo.") {
                Some(k) if PPO_KEYS.contains(&k) => {
                    // Checked now so a bad value fails at load time.
                    let mut probe = PpoConfig::no_pretrain();
                    apply_ppo(&mut probe, k, value, origin)?;
                    self.ppo.retain(|(old, _)| old != k);
                    self.ppo.push((k.to_string(), value.to_string()));
                }
                _ => return Err(invalid(origin, format!("unknown key `{key}`"))),
            },
        }
        self.train.diversity_episodes = self.diversity_rollouts;
        Ok(())
    }

    /// The PPO preset for `init` with any `ppo.*` overrides applied.
    pub fn ppo_for(&self, init: InitKind) -> PpoConfig {
        let mut p = PpoConfig::for_init(init);
        for (k, v) in &self.ppo {
            apply_ppo(&mut p, k, v, "").expect("validated when set");
        }
        p
    }

    /// Every key with its effective value, in the same text format.
    pub fn render(&self, ppo: Option<&PpoConfig>) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("terrain.variant", t.terrain.variant.to_string());
        kv("terrain.half_width", t.terrain.half_width.to_string());
        kv("dynamics.dt", t.dynamics.dt.to_string());
        kv("dynamics.max_accel", t.dynamics.max_accel.to_string());
        kv("dynamics.max_speed", t.dynamics.max_speed.to_string());
        kv("dynamics.spawn_jitter", t.dynamics.spawn_jitter.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.lr", t.learning_rate.to_string());
        kv("train.milestones", join(&t.milestones));
        kv("train.lr_decay", t.lr_decay.to_string());
        kv("train.k", t.k.to_string());
        kv("train.envs", t.replicas.to_string());
        kv("train.heads", t.heads.to_string());
        kv("train.horizon", t.horizon.to_string());
        kv("train.max_grad_norm", t.max_grad_norm.to_string());
        kv(
            "train.projection",
            match t.projection {
                Projection::Planar => "planar".into(),
                Projection::Full => "full".into(),
            },
        );
        kv("train.trunk", join(&t.policy.trunk));
        kv("train.adapter", t.policy.adapter.to_string());
        kv("run.seeds", join(&self.seeds));
        kv("run.out", self.out.display().to_string());
        if let Some(g) = self.task.goal {
            kv("task.goal", join(&g));
        }
        kv("task.radius", self.task.radius.to_string());
        kv("task.annulus", join(&[self.task.annulus.0, self.task.annulus.1]));
        if let Some(seed) = self.task.seed {
            kv("task.seed", seed.to_string());
        }
        kv("task.eval_rollouts", self.task.eval_rollouts.to_string());
        if let Some(h) = self.task.eval_horizon {
            kv("task.eval_horizon", h.to_string());
        }
        kv("diversity.rollouts", self.diversity_rollouts.to_string());
        kv("heatmap.bins", self.bins.to_string());
        if let Some(p) = ppo {
            kv("ppo.gamma", p.gamma.to_string());
            kv("ppo.lambda", p.lambda.to_string());
            kv("ppo.clip", p.clip.to_string());
            kv("ppo.entropy_coef", p.entropy_coef.to_string());
            kv("ppo.value_coef", p.value_coef.to_string());
            kv("ppo.max_grad_norm", p.max_grad_norm.to_string());
            kv("ppo.epochs", p.epochs.to_string());
            kv("ppo.warmup", p.warmup.to_string());
            kv("ppo.minibatch", p.minibatch.to_string());
            kv("ppo.horizon", p.horizon.to_string());
            kv("ppo.replicas", p.replicas.to_string());
            kv("ppo.total_steps", p.total_steps.to_string());
            kv("ppo.actor_lr", p.actor_lr.to_string());
            kv("ppo.critic_lr", p.critic_lr.to_string());
            kv("ppo.critic_hidden", join(&p.critic_hidden));
        }
        s
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.train.dynamics
    }
}

fn apply_ppo(p: &mut PpoConfig, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
    let k = format!("ppo.{key}");
    match key {
        "gamma" => p.gamma = num(origin, &k, value)?,
        "lambda" => p.lambda = num(origin, &k, value)?,
        "clip" => p.clip = num(origin, &k, value)?,
        "entropy_coef" => p.entropy_coef = num(origin, &k, value)?,
        "value_coef" => p.value_coef = num(origin, &k, value)?,
        "max_grad_norm" => p.max_grad_norm = num(origin, &k, value)?,
        "epochs" => p.epochs = num(origin, &k, value)?,
        "warmup" => p.warmup = num(origin, &k, value)?,
        "minibatch" => p.minibatch = num(origin, &k, value)?,
        "horizon" => p.horizon = num(origin, &k, value)?,
        "replicas" => p.replicas = num(origin, &k, value)?,
        "total_steps" => p.total_steps = num(origin, &k, value)?,
        "actor_lr" => p.actor_lr = num(origin, &k, value)?,
        "critic_lr" => p.critic_lr = num(origin, &k, value)?,
        "critic_hidden" => p.critic_hidden = list(origin, &k, value)?,
        _ => return Err(invalid(origin, format!("unknown key `{k}`"))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let cfg = RunConfig::parse(
            "# desk run\ntrain.envs = 64\ntrain.heads=4  # four heads\n\nrun.seeds = 0,1\nterrain.variant = maze\nppo.clip = 0.3\n",
            "a.cfg",
        )
        .unwrap();
        assert_eq!(cfg.train.replicas, 64);
        assert_eq!(cfg.train.heads, 4);
        assert_eq!(cfg.seeds, vec![0, 1]);
        assert_eq!(cfg.train.terrain.variant, TerrainVariant::Maze);
        assert_eq!(cfg.ppo_for(InitKind::Selected).clip, 0.3);
        assert_eq!(cfg.ppo_for(InitKind::Selected).epochs, 3);
    }

    #[test]
    fn errors_name_the_line() {
        let err = RunConfig::parse("train.envs = 4\ntrain.bogus = 1\n", "b.cfg").unwrap_err();
        assert_eq!(err.to_string(), "b.cfg:2: unknown key `train.bogus`");
        let err = RunConfig::parse("train.envs = four\n", "c.cfg").unwrap_err();
        assert!(err.to_string().starts_with("c.cfg:1:"));
        assert!(RunConfig::parse("no equals sign\n", "d.cfg").is_err());
        assert!(RunConfig::parse("ppo.clip = x\n", "e.cfg").is_err());
    }

    #[test]
    fn rendered_config_reparses() {
        let mut cfg = RunConfig::default();
        cfg.set("task.goal", "1.5,-2", "flag").unwrap();
        cfg.set("train.trunk", "64,32", "flag").unwrap();
        let ppo = cfg.ppo_for(InitKind::Random);
        let text = cfg.render(Some(&ppo));
        let back = RunConfig::parse(&text, "resolved").unwrap();
        assert_eq!(back.train, cfg.train);
        assert_eq!(back.task, cfg.task);
        assert_eq!(back.ppo_for(InitKind::Random), ppo);
    }
}
