use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kmyriad_cli::commands::{self, CliError, CliResult};
use kmyriad_cli::config::RunConfig;

/// Parallel maximum state entropy pretraining and jump-start fine-tuning.
#[derive(Parser)]
#[command(name = "kmyriad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a multi-head policy for every seed.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// KL diversity between the heads of a checkpoint.
    Diversity {
        checkpoint: PathBuf,
        /// Episodes per head.
        #[arg(long)]
        rollouts: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// PPO on a sparse goal task from a checkpoint or from scratch.
    Jumpstart {
        #[arg(required_unless_present = "random", conflicts_with = "random")]
        checkpoint: Option<PathBuf>,
        /// Start from a freshly initialized actor.
        #[arg(long)]
        random: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Per-head occupancy grids from a trajectory file or a checkpoint.
    Heatmap {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// `section.key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    /// Environment replicas (PPO replicas for `jumpstart`).
    #[arg(long)]
    envs: Option<String>,
    /// Episode length (PPO rollout length for `jumpstart`).
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// empty, maze or corridor.
    #[arg(long)]
    terrain: Option<String>,
    #[arg(long)]
    bins: Option<String>,
}

impl Common {
    fn resolve(&self, ppo_rollouts: bool) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let (envs_key, horizon_key) = if ppo_rollouts { ("ppo.replicas", "ppo.horizon") } else { ("train.envs", "train.horizon") };
        let flags = [
            ("--seeds", "run.seeds", &self.seeds),
            ("--epochs", "train.epochs", &self.epochs),
            ("--heads", "train.heads", &self.heads),
            ("--envs", envs_key, &self.envs),
            ("--horizon", horizon_key, &self.horizon),
            ("--k", "train.k", &self.k),
            ("--out", "run.out", &self.out),
            ("--terrain", "terrain.variant", &self.terrain),
            ("--bins", "heatmap.bins", &self.bins),
        ];
        for (flag, key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v, flag)?;
            }
        }
        Ok(cfg)
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("KMYRIAD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Pretrain { common } => commands::pretrain(&common.resolve(false)?),
        Command::Diversity { checkpoint, rollouts, common } => {
            let mut cfg = common.resolve(false)?;
            if let Some(r) = rollouts {
                cfg.set("diversity.rollouts", &r.to_string(), "--rollouts")?;
            }
            commands::diversity(&cfg, &checkpoint)
        }
        Command::Jumpstart { checkpoint, common, .. } => commands::jumpstart(&common.resolve(true)?, checkpoint.as_deref()),
        Command::Heatmap { input, common } => commands::heatmap(&common.resolve(false)?, &input),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kmyriad: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
