//! Acceptance criteria 1-9. Each test prints one `PASS`/`FAIL` line straight
//! to stderr (bypassing the test harness capture) before asserting.
//!
//! Criteria 1-3 train full-budget runs (66 of them, shared between criteria)
//! and take tens of minutes on one core; the rest take seconds.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use frl_core::harness::{run_experiment, ExperimentConfig};
use frl_core::par;

const SEEDS: [u64; 3] = [0, 1, 2];
const ROBUST_RULES: [&str; 3] = ["trimmed_mean", "median", "fedpg_br"];
const ATTACKS: [&str; 5] = ["random_action", "random_noise", "trim", "shejwalkar", "normalized"];

fn report(criterion: u32, pass: bool, detail: &str) {
    let line = format!("acceptance {criterion}: {} - {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

// ------------------------------------------------------------ training runs

type Cell = Arc<OnceLock<f64>>;

fn cells() -> &'static Mutex<HashMap<String, Cell>> {
    static CELLS: OnceLock<Mutex<HashMap<String, Cell>>> = OnceLock::new();
    CELLS.get_or_init(Default::default)
}

/// Final test reward of a default-config run with `overrides`, computed once
/// per process.
fn final_reward(overrides: &[(&str, &str)], seed: u64) -> f64 {
    let mut cfg = ExperimentConfig { seed, ..Default::default() };
    for (k, v) in overrides {
        cfg.set(k, v).unwrap();
    }
    let key = cfg.to_kv();
    let cell = cells().lock().unwrap().entry(key).or_default().clone();
    *cell.get_or_init(|| run_experiment(&cfg, None).unwrap().final_reward())
}

/// Mean final reward over the seeds, runs in parallel.
fn mean_reward(overrides: &[(&str, &str)]) -> f64 {
    let rewards = par::map_slice(&SEEDS, |&s| final_reward(overrides, s));
    rewards.iter().sum::<f64>() / rewards.len() as f64
}

fn clean_fedavg() -> f64 {
    mean_reward(&[("aggregator", "fedavg"), ("K", "1")])
}

#[test]
fn criterion_1_clean_learning() {
    let r = clean_fedavg();
    let pass = r >= 450.0;
    report(1, pass, &format!("FedAvg, no attack, final reward {r:.1} (3-seed mean) vs >= 450"));
    assert!(pass);
}

#[test]
fn criterion_2_normalized_attack_potency() {
    let mut parts = vec![];
    let mut pass = true;
    for rule in ROBUST_RULES {
        let clean = mean_reward(&[("aggregator", rule), ("K", "1")]);
        let attacked = mean_reward(&[("aggregator", rule), ("K", "1"), ("attack", "normalized")]);
        pass &= attacked <= 0.5 * clean;
        parts.push(format!("{rule} {attacked:.1}/{clean:.1}"));
    }
    report(2, pass, &format!("attacked/clean final reward (3-seed means), need <= 0.5: {}", parts.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_3_ensemble_resilience() {
    let bar = 0.9 * clean_fedavg();
    let cases: Vec<(&str, &str)> = ROBUST_RULES.iter().flat_map(|r| ATTACKS.iter().map(move |a| (*r, *a))).collect();
    let means = par::map_slice(&cases, |&(rule, attack)| mean_reward(&[("aggregator", rule), ("K", "5"), ("attack", attack)]));
    let failing: Vec<String> = cases
        .iter()
        .zip(&means)
        .filter(|(_, &m)| m < bar)
        .map(|((rule, attack), m)| format!("{rule}/{attack} {m:.1}"))
        .collect();
    let worst = means.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = if failing.is_empty() {
        format!("K=5, all 15 rule/attack pairs >= {bar:.1} (worst {worst:.1})")
    } else {
        format!("K=5, below {bar:.1}: {}", failing.join(", "))
    };
    report(3, failing.is_empty(), &detail);
    assert!(failing.is_empty(), "{detail}");
}

// ------------------------------------------------------------ oracles

#[test]
fn criterion_4_discrete_certificate_exact() {
    let (checked, failures) = common::theorem1_exhaustive();
    let pass = failures.is_empty();
    report(4, pass, &format!("{checked} vote profiles (K 1..7, 2..4 actions), {} mismatches", failures.len()));
    assert!(pass, "{failures:#?}");
}

#[test]
fn criterion_5_continuous_bound_sound() {
    let (worst, violations) = common::theorem2_trials(10_000, 5);
    let pass = violations == 0;
    report(5, pass, &format!("10^4 corruption trials, {violations} violations, max displacement/bound {worst:.3}"));
    assert!(pass);
}

#[test]
fn criterion_6_weiszfeld_matches_brute_force() {
    let worst = common::geomedian_ratio_worst(100, 6);
    let z = common::fermat_case();
    let fermat = (z[0] - 1.0).abs() < 1e-3 && (z[1] - 0.5774).abs() < 1e-3;
    let pass = worst <= 1.0 + 1e-6 && fermat;
    report(6, pass, &format!("100 sets, worst objective ratio {worst:.9}; Fermat case ({:.4}, {:.4})", z[0], z[1]));
    assert!(pass);
}

#[test]
fn criterion_7_gradients() {
    let d = common::gradient_check(&common::discrete_space(), 20, 7);
    let c = common::gradient_check(&common::continuous_space(), 20, 8);
    let pass = d <= 1e-4 && c <= 1e-4;
    report(7, pass, &format!("max relative error: categorical {d:.2e}, gaussian {c:.2e} (<= 1e-4)"));
    assert!(pass);
}

#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let base = "n_agents = 10\nK = 2\nB = 4\nH = 150\ntrajectories_per_agent = 40\neval_interval = 8\neval_episodes = 3\n\
                aggregator = fedpg_br\nattack = normalized\nseed = 8\n";
    let files = ["metrics.jsonl", "summary.csv", "rounds.jsonl"];
    let mut outputs = vec![];
    for (i, workers) in [1usize, 4, 1].into_iter().enumerate() {
        let mut cfg = ExperimentConfig::parse_str(base).unwrap();
        cfg.workers = workers;
        let dir = tmp.path().join(format!("w{i}"));
        run_experiment(&cfg, Some(&dir)).unwrap();
        let mut bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect();
        for k in 0..2 {
            bytes.push(std::fs::read(dir.join(format!("checkpoints/group_{k}/round_10.params"))).unwrap());
        }
        outputs.push(bytes);
    }
    let pass = outputs[0] == outputs[1] && outputs[0] == outputs[2];
    report(8, pass, "metrics, summary, round records and checkpoints byte-identical for workers 1, 4 and a repeat");
    assert!(pass);
}

#[test]
fn criterion_9_degenerate_attack_identities() {
    let id = common::attack_identities();
    let checks = [
        ("objective 0 when aggregates match", id.same_aggregate == 0.0 && id.no_malicious == 0.0),
        ("antipodal objective 2", (id.antipodal - 2.0).abs() < 1e-12),
        ("stage 1 >= lambda=0", id.stage1.0 >= id.stage1.1),
        ("stage 2 >= zeta=1 and = grid max", id.stage2.0 >= id.stage2.1 && (id.stage2.0 - id.stage2.2).abs() < 1e-9),
        ("shejwalkar >= gamma=0 and = grid max", id.shejwalkar.0 >= id.shejwalkar.1 && (id.shejwalkar.0 - id.shejwalkar.2).abs() <= 1e-3 * id.shejwalkar.2),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(9, failed.is_empty(), &format!("{} identities checked; failed: {failed:?}", checks.len()));
    assert!(failed.is_empty());
}
