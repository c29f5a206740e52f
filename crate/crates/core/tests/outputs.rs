use std::fs;
use std::process::Command;

use frl_core::harness::{run_experiment, ExperimentConfig, MetricsRecord};

const TINY: &str = "n_agents = 6\nK = 3\nB = 2\nH = 60\ntrajectories_per_agent = 8\neval_interval = 4\neval_episodes = 2\n";

fn frl(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_frl")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "frl {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn run_writes_the_documented_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse_str(TINY).unwrap();
    let out = run_experiment(&cfg, Some(tmp.path())).unwrap();

    let csv = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("trajectories,reward,config_digest"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["0", "4", "8"]);
    assert!(rows.iter().all(|r| r[2] == cfg.digest() && r[2].len() == 16));

    let metrics: Vec<MetricsRecord> = fs::read_to_string(tmp.path().join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(metrics, out.records);
    assert!(metrics.iter().all(|m| m.group_rewards.len() == 3));

    // one per-group record per round: 4 rounds x 3 groups
    assert_eq!(fs::read_to_string(tmp.path().join("rounds.jsonl")).unwrap().lines().count(), 12);
    for k in 0..3 {
        for t in [0, 2, 4] {
            assert!(tmp.path().join(format!("checkpoints/group_{k}/round_{t}.params")).is_file());
        }
    }
    let saved = ExperimentConfig::load(&tmp.path().join("config.txt")).unwrap();
    assert_eq!(saved.digest(), cfg.digest());
}

#[test]
fn cli_run_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.txt");
    fs::write(&cfg, TINY).unwrap();
    let out = tmp.path().join("out");
    let line = frl(&["run", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap(), "--set", "K=2"]);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert!(v["final_reward"].as_f64().unwrap() > 0.0);
    let saved = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(saved.contains("K = 2") && saved.contains("seed = 3"), "{saved}");

    let line = frl(&["eval", "--checkpoint", out.join("checkpoints").to_str().unwrap(), "--episodes", "2"]);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["k"], 2);
    assert_eq!(v["group_rewards"].as_array().unwrap().len(), 2);
}

#[test]
fn cli_sweep_writes_one_directory_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.txt");
    fs::write(&cfg, TINY).unwrap();
    let out = tmp.path().join("sweep");
    let text = frl(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--axis", "K", "--values", "1,3", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(text.lines().count(), 2);
    let dirs = fs::read_dir(&out).unwrap().count();
    assert_eq!(dirs, 2);
}

#[test]
fn cli_certify() {
    let v: serde_json::Value = serde_json::from_str(frl(&["certify", "--votes", "4,1"]).trim()).unwrap();
    assert_eq!(v["kind"], "discrete_tolerance");
    assert_eq!(v["n_prime"], 1);
    // y (index 0) precedes x (index 1): K = 5, 0 vs 5 votes
    let v: serde_json::Value = serde_json::from_str(frl(&["certify", "--votes", "0,5"]).trim()).unwrap();
    assert_eq!(v["n_prime"], 2);
    let v: serde_json::Value =
        serde_json::from_str(frl(&["certify", "--continuous", "--k", "5", "--nprime", "2", "--w", "1"]).trim()).unwrap();
    assert_eq!(v["bound"], 6.0);
    let bad = Command::new(env!("CARGO_BIN_EXE_frl")).args(["certify", "--continuous", "--k", "4", "--nprime", "2", "--w", "1"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn cli_rejects_bad_config() {
    let bad = Command::new(env!("CARGO_BIN_EXE_frl")).args(["run", "--set", "K=0"]).output().unwrap();
    assert!(!bad.status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_frl")).args(["run", "--set", "no_such_key=1"]).output().unwrap();
    assert!(!bad.status.success());
}
