use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kmyriad::envs::occupancy_grid;
use kmyriad_cli::checkpoint;
use kmyriad_cli::io::{read_curve, read_heatmap, read_trajectory};

const SMALL: &str = "\
# desk-sized run
train.trunk = 16, 16
train.adapter = 8
train.envs = 8
train.heads = 2
train.horizon = 20
train.epochs = 3
run.seeds = 0, 1
diversity.rollouts = 30
heatmap.bins = 10
task.eval_rollouts = 5
ppo.replicas = 4
ppo.horizon = 20
ppo.minibatch = 40
ppo.epochs = 2
ppo.total_steps = 240
ppo.critic_hidden = 16
";

fn kmyriad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmyriad")).args(args).env("KMYRIAD_THREADS", "1").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.cfg"), config).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn arg(&self, rel: &str) -> String {
        self.path(rel).display().to_string()
    }

    fn run(&self, cmd: &str, extra: &[&str], out: &str) -> Output {
        let (cfg, out) = (self.arg("run.cfg"), self.arg(out));
        let mut args = vec![cmd, "--config", &cfg, "--out", &out];
        args.extend_from_slice(extra);
        kmyriad(&args)
    }
}

fn pretrained(ws: &Workspace) -> PathBuf {
    let o = ws.run("pretrain", &[], "pre");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    ws.path("pre")
}

#[test]
fn pretrain_writes_every_artifact() {
    let ws = Workspace::new(SMALL);
    let out = pretrained(&ws);
    let (header, rows) = read_curve(&out.join("entropy.csv")).unwrap();
    assert_eq!(header, ["epoch", "entropy_nats", "lr", "seed"]);
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().map(|r| r[3].as_str()).collect::<Vec<_>>(), ["0", "0", "0", "1", "1", "1"]);
    assert!(out.join("config.resolved").exists());
    for seed in ["seed-0", "seed-1"] {
        let dir = out.join(seed);
        let policy = checkpoint::load(&dir.join("policy.kmyr")).unwrap();
        assert_eq!(policy.head_count(), 2);
        for f in ["trajectory.csv", "heatmap_head0.csv", "heatmap_head1.csv", "diversity.csv"] {
            assert!(dir.join(f).exists(), "{seed}/{f}");
        }
        let (h, d) = read_curve(&dir.join("diversity.csv")).unwrap();
        assert_eq!(h, ["head", "kl_nats", "k", "n"]);
        assert_eq!(d.len(), 3);
        assert_eq!(d[2][0], "mean");
    }
}

#[test]
fn resolved_config_reproduces_the_run() {
    let ws = Workspace::new(SMALL);
    let out = pretrained(&ws);
    let resolved = out.join("config.resolved").display().to_string();
    let again = ws.arg("again");
    let o = kmyriad(&["pretrain", "--config", &resolved, "--out", &again]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["entropy.csv", "seed-0/policy.kmyr", "seed-1/trajectory.csv", "seed-1/diversity.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(ws.path("again").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_the_file() {
    let ws = Workspace::new(SMALL);
    let o = ws.run("pretrain", &["--seeds", "5", "--epochs", "2", "--heads", "3", "--envs", "9"], "flags");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = read_curve(&ws.path("flags/entropy.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[3] == "5"));
    assert_eq!(checkpoint::load(&ws.path("flags/seed-5/policy.kmyr")).unwrap().head_count(), 3);
}

#[test]
fn zero_epochs_saves_the_initial_policy() {
    let ws = Workspace::new(SMALL);
    let o = ws.run("pretrain", &["--epochs", "0", "--seeds", "4"], "zero");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = read_curve(&ws.path("zero/entropy.csv")).unwrap();
    assert!(rows.is_empty());
    let policy = checkpoint::load(&ws.path("zero/seed-4/policy.kmyr")).unwrap();
    let fresh = kmyriad::policy::MultiHeadPolicy::new(kmyriad::policy::PolicyShape::new(vec![16, 16], 8), 2, 4).unwrap();
    assert_eq!(policy.parameters(), fresh.parameters());
    assert!(!ws.path("zero/seed-4/trajectory.csv").exists());
}

#[test]
fn config_errors_name_the_line() {
    let ws = Workspace::new(&format!("{SMALL}train.k = five\n"));
    let o = ws.run("pretrain", &[], "bad");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("run.cfg:18"), "{}", stderr(&o));

    let ws = Workspace::new("train.epochs = 2\nnot a setting\n");
    let o = ws.run("pretrain", &[], "bad");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(":2"), "{}", stderr(&o));

    let ws = Workspace::new("train.colour = blue\n");
    assert_eq!(code(&ws.run("pretrain", &[], "bad")), 2);
}

#[test]
fn contract_violations_exit_with_two() {
    let ws = Workspace::new(SMALL);
    assert_eq!(code(&ws.run("pretrain", &["--heads", "9", "--envs", "4"], "x")), 2);
    assert_eq!(code(&ws.run("pretrain", &["--k", "0"], "x")), 2);
    assert_eq!(code(&ws.run("pretrain", &["--terrain", "swamp"], "x")), 2);
}

#[test]
fn missing_config_file_is_an_error() {
    let o = kmyriad(&["pretrain", "--config", "/nonexistent/run.cfg"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn diversity_command_matches_pretrain_output() {
    let ws = Workspace::new(SMALL);
    let out = pretrained(&ws);
    let ckpt = out.join("seed-0/policy.kmyr").display().to_string();
    let o = ws.run("diversity", &[&ckpt, "--seeds", "0"], "div");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(ws.path("div/diversity.csv")).unwrap(), std::fs::read(out.join("seed-0/diversity.csv")).unwrap());
}

#[test]
fn diversity_of_a_single_head_fails() {
    let ws = Workspace::new(SMALL);
    let o = ws.run("pretrain", &["--heads", "1", "--seeds", "0"], "one");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!ws.path("one/seed-0/diversity.csv").exists());
    let ckpt = ws.arg("one/seed-0/policy.kmyr");
    let o = ws.run("diversity", &[&ckpt], "div");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("two heads"), "{}", stderr(&o));
}

#[test]
fn jumpstart_from_random_init() {
    let ws = Workspace::new(SMALL);
    let o = ws.run("jumpstart", &["--random"], "js");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_curve(&ws.path("js/jumpstart.csv")).unwrap();
    assert_eq!(header, ["update", "success_rate", "seed", "init"]);
    // 240 steps over 4 replicas of 20 steps: 3 rollouts per seed.
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[3] == "random"));
    let resolved = std::fs::read_to_string(ws.path("js/config.resolved")).unwrap();
    assert!(resolved.contains("ppo.clip = 0.2"));
    assert!(!ws.path("js/selection.txt").exists());
}

#[test]
fn jumpstart_from_a_multi_head_checkpoint() {
    let ws = Workspace::new(SMALL);
    let out = pretrained(&ws);
    let ckpt = out.join("seed-1/policy.kmyr").display().to_string();
    let o = ws.run("jumpstart", &[&ckpt], "js");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = read_curve(&ws.path("js/jumpstart.csv")).unwrap();
    assert!(rows.iter().all(|r| r[3] == "selected"));
    let selection = std::fs::read_to_string(ws.path("js/selection.txt")).unwrap();
    assert_eq!(selection.lines().count(), 2);
    assert!(std::fs::read_to_string(ws.path("js/config.resolved")).unwrap().contains("ppo.clip = 0.15"));

    let one = ws.run("pretrain", &["--heads", "1", "--seeds", "0"], "one");
    assert_eq!(code(&one), 0);
    let single = ws.arg("one/seed-0/policy.kmyr");
    let o = ws.run("jumpstart", &[&single, "--seeds", "0"], "js1");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = read_curve(&ws.path("js1/jumpstart.csv")).unwrap();
    assert!(rows.iter().all(|r| r[3] == "single"));
}

#[test]
fn jumpstart_requires_a_source() {
    let o = kmyriad(&["jumpstart"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn heatmap_from_trajectory_conserves_visits() {
    let ws = Workspace::new(SMALL);
    let out = pretrained(&ws);
    let traj_path = out.join("seed-0/trajectory.csv");
    let o = ws.run("heatmap", &[&traj_path.display().to_string()], "hm");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_trajectory(&traj_path).unwrap();
    let mut total = 0;
    for h in 0..2 {
        let (grid, arena) = read_heatmap(&ws.path(&format!("hm/heatmap_head{h}.csv"))).unwrap();
        assert_eq!(arena, 5.0);
        assert_eq!(grid.bins, 10);
        assert_eq!(grid.total(), rows.iter().filter(|r| r.head == h).count() as u64);
        total += grid.total();
        // Same counts as the grids written during pretraining.
        assert_eq!(
            std::fs::read(ws.path(&format!("hm/heatmap_head{h}.csv"))).unwrap(),
            std::fs::read(out.join(format!("seed-0/heatmap_head{h}.csv"))).unwrap()
        );
    }
    assert_eq!(total, 8 * 21);
}

#[test]
fn heatmap_from_checkpoint_matches_a_library_rollout() {
    let ws = Workspace::new(SMALL);
    let out = pretrained(&ws);
    let ckpt = out.join("seed-0/policy.kmyr");
    let o = ws.run("heatmap", &[&ckpt.display().to_string(), "--seeds", "3"], "hm");
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let policy = checkpoint::load(&ckpt).unwrap();
    let a = kmyriad::train::assign(8, 2).unwrap();
    let seed = kmyriad::rng::derive(3, &[kmyriad::rng::EVAL]);
    let traj = kmyriad::train::collect(&policy, &a, &kmyriad::envs::TerrainSpec::empty(5.0), &Default::default(), 20, seed).unwrap();
    for h in 0..2 {
        let (grid, _) = read_heatmap(&ws.path(&format!("hm/heatmap_head{h}.csv"))).unwrap();
        assert_eq!(grid, occupancy_grid(&traj, 10, 5.0, Some(&[h][..])).unwrap());
    }
}

fn corrupt(src: &Path, dst: &Path, f: impl FnOnce(&mut Vec<u8>)) {
    let mut bytes = std::fs::read(src).unwrap();
    f(&mut bytes);
    std::fs::write(dst, bytes).unwrap();
}

#[test]
fn damaged_checkpoints_map_to_exit_codes() {
    let ws = Workspace::new(SMALL);
    let out = pretrained(&ws);
    let good = out.join("seed-0/policy.kmyr");
    let flipped = ws.path("flipped.kmyr");
    corrupt(&good, &flipped, |b| {
        let mid = b.len() / 2;
        b[mid] ^= 0x40;
    });
    let o = ws.run("diversity", &[&flipped.display().to_string()], "d");
    assert_eq!(code(&o), 5, "{}", stderr(&o));

    let truncated = ws.path("truncated.kmyr");
    corrupt(&good, &truncated, |b| b.truncate(b.len() - 100));
    assert_eq!(code(&ws.run("diversity", &[&truncated.display().to_string()], "d")), 4);
    assert_eq!(code(&ws.run("jumpstart", &[&ws.arg("missing.kmyr")], "d")), 4);
}
