use std::path::Path;
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"{
  "env": { "name": "pendulum-swingup" },
  "total_env_steps": 600,
  "warmup_steps": 200,
  "batch_size": 32,
  "replay_capacity": 1000,
  "hidden_sizes": [16, 16],
  "eval_interval": 200,
  "eval_episodes": 1,
  "checkpoint_interval": 300
}"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxent-sac"))
        .args(args)
        .env("MAXENT_SAC_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn train_tiny(dir: &Path, name: &str) -> std::path::PathBuf {
    let config = dir.join("tiny.json");
    std::fs::write(&config, TINY_CONFIG).unwrap();
    let out = dir.join(name);
    let run = cli(&["train", "--config", path(&config), "--out", path(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    out
}

#[test]
fn train_writes_a_run_directory_with_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), "run");
    for file in ["config.json", "metrics.jsonl", "evals.jsonl", "curves.csv", "final.bin", "final.json"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    assert!(out.join("checkpoints/step_300/agent.bin").exists());
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    let lines: Vec<&str> = curves.lines().collect();
    assert_eq!(lines[0], "env_step,mean_return,min_return,max_return,alpha,entropy");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("600,"));
}

#[test]
fn curves_verb_reproduces_the_training_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), "run");
    let again = dir.path().join("again.csv");
    let run = cli(&["curves", "--run", path(&out), "--out", path(&again)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(std::fs::read(out.join("curves.csv")).unwrap(), std::fs::read(again).unwrap());
}

#[test]
fn identical_runs_give_identical_curves() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_tiny(dir.path(), "a");
    let b = train_tiny(dir.path(), "b");
    assert_eq!(std::fs::read(a.join("curves.csv")).unwrap(), std::fs::read(b.join("curves.csv")).unwrap());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = train_tiny(dir.path(), "full");
    let resumed = dir.path().join("resumed");
    let run = cli(&[
        "train",
        "--config",
        path(&dir.path().join("tiny.json")),
        "--resume",
        path(&full.join("checkpoints/step_300")),
        "--out",
        path(&resumed),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(
        std::fs::read(full.join("curves.csv")).unwrap(),
        std::fs::read(resumed.join("curves.csv")).unwrap()
    );
}

#[test]
fn eval_reports_a_summary_for_a_saved_agent() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), "run");
    let run = cli(&["eval", "--checkpoint", path(&out.join("final")), "--env", "pendulum-swingup", "--episodes", "2"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("\"mean_return\""), "{stdout}");
}

#[test]
fn eval_rejects_a_mismatched_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), "run");
    let run = cli(&["eval", "--checkpoint", path(&out.join("final")), "--env", "point-mass-2d"]);
    assert!(!run.status.success());
}

#[test]
fn verify_theory_suite_passes() {
    let run = cli(&["verify", "--suite", "theory"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.lines().count() >= 5);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}

#[test]
fn unknown_suite_and_bad_config_fail_cleanly() {
    let run = cli(&["verify", "--suite", "everything"]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("unknown suite"));

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"env": {"name": "pendulum-swingup"}, "learning_speed": 3}"#).unwrap();
    let run = cli(&["train", "--config", path(&config), "--out", path(&dir.path().join("out"))]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("learning_speed"));
}
