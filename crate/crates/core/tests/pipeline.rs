mod common;

use std::path::Path;

use skild_core::harness::{layout, run_pipeline, ExperimentConfig, MetricsTable};
use skild_core::Error;

const CONFIG: &str = r#"
version = 1
master_seed = 7

[maze]
layout = "maze.txt"
max_episode_steps = 150

[datagen]
n_traj = 30
demos = 2
demo_jitter = 0.2

[skill_model]
horizon = 5
z_dim = 3
encoder_hidden = 16
decoder_hidden = [16, 16]
prior_hidden = [16, 16]
batch_size = 16
train_steps = 20
log_every = 0

[guidance]
posterior_steps = 20
posterior_batch = 16
disc_steps = 20
disc_batch = 32
disc_hidden = [8, 8]
log_every = 0

[rl]
total_env_steps = 300
warmup_env_steps = 100
batch_size = 16
critic_hidden = [16, 16]
flat_policy_hidden = [16, 16]
eval_every = 150
eval_episodes = 1
bc_steps = 10
log_every = 0

[[runs]]
modes = ["skild", "sac_flat"]
seeds = [0, 1]
"#;

fn setup(dir: &Path, text: &str) -> ExperimentConfig {
    std::fs::write(dir.join("maze.txt"), common::SMALL_MAZE).unwrap();
    ExperimentConfig::from_toml(text, dir).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn pipeline_is_resumable_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    let first = run_pipeline(&cfg, &out).unwrap();
    assert!(first.skipped.is_empty());
    assert_eq!(first.executed.len(), 3 + 4 + 1);
    for (m, s) in [("skild", 0), ("skild", 1), ("sac_flat", 0), ("sac_flat", 1)] {
        let t = MetricsTable::load(&out.join(layout::run_dir(m, s)).join("metrics.csv")).unwrap();
        assert_eq!(t.steps(), vec![0.0, 150.0, 300.0]);
    }
    for f in ["aggregate/skild.csv", "aggregate/sac_flat.csv", "aggregate/curves.svg", "aggregate/curves.csv", "manifest.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    // Unchanged config: every stage is reused.
    let second = run_pipeline(&cfg, &out).unwrap();
    assert!(second.executed.is_empty(), "{:?}", second.executed);

    // A fresh directory with the same master seed reproduces every metrics file.
    let out2 = tmp.path().join("out2");
    run_pipeline(&cfg, &out2).unwrap();
    for rel in [layout::DATA_METRICS, layout::SKILLS_METRICS, layout::GUIDANCE_METRICS, "rl/skild/seed1/metrics.csv", "rl/sac_flat/seed0/metrics.csv"] {
        assert_eq!(read(&out.join(rel)), read(&out2.join(rel)), "{rel}");
    }

    // Changing one RL setting reruns only the RL stages.
    let cfg3 = setup(tmp.path(), &CONFIG.replace("eval_episodes = 1", "eval_episodes = 2"));
    let third = run_pipeline(&cfg3, &out).unwrap();
    assert_eq!(&third.skipped[..3], &["datagen", "skills", "guidance"]);
    assert_eq!(third.executed.iter().filter(|s| s.starts_with("rl/")).count(), 4);
}

#[test]
fn corrupted_checkpoint_aborts_naming_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let no_runs = CONFIG.split("[[runs]]").next().unwrap().to_string();
    let cfg = setup(tmp.path(), &no_runs);
    let out = tmp.path().join("out");
    run_pipeline(&cfg, &out).unwrap();
    let ck = out.join(layout::SKILLS);
    let mut bytes = read(&ck);
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&ck, bytes).unwrap();
    let cfg2 = setup(tmp.path(), &no_runs.replace("disc_steps = 20", "disc_steps = 21"));
    match run_pipeline(&cfg2, &out) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "guidance"),
        other => panic!("expected a stage error, got {other:?}"),
    }
}

#[test]
fn config_validation_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("maze.txt"), common::SMALL_MAZE).unwrap();
    let bad = [
        CONFIG.replace("[rl]\n", "[rl]\nkappa = 1.5\n"),
        CONFIG.replace("[rl]\n", "[rl]\nlr = -0.1\n"),
        CONFIG.replace("\"sac_flat\"", "\"ppo\""),
        CONFIG.replace("[rl]\n", "[rl]\nfoo = 1\n"),
        CONFIG.replace("version = 1", "version = 2"),
        CONFIG.replace("maze.txt", "missing.txt"),
    ];
    for text in bad {
        assert!(ExperimentConfig::from_toml(&text, tmp.path()).is_err(), "{text}");
    }
    assert!(ExperimentConfig::from_toml(CONFIG, tmp.path()).is_ok());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(&root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        }
    }
}
