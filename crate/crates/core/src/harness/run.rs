//! Training runs with periodic test-reward evaluation and file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{assign_groups, EnsemblePolicy, EnsembleTrainer};
use crate::envs::{Action, EnvConfig};
use crate::error::{FrlError, Result};
use crate::fedcore::{malicious_count, FedSetup, RoundRecord};
use crate::harness::config::ExperimentConfig;
use crate::par;
use crate::policy::{ArchSpec, Mlp};
use crate::rng::{stream, Tag};
use crate::vector::ParamVector;

/// Mean total reward over `episodes` episodes, actions chosen by `act`.
pub fn evaluate_with<R, F>(env: &EnvConfig, episodes: usize, rng: &mut R, mut act: F) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<Action>,
{
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        while !env.is_terminal(&s) {
            let a = act(&s.observation())?;
            let step = env.step(&s, &a, rng)?;
            total += step.reward;
            s = step.next;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Greedy single-policy test reward.
pub fn evaluate_policy<R: Rng + ?Sized>(
    mlp: &Mlp,
    theta: &ParamVector,
    env: &EnvConfig,
    episodes: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut ws = mlp.workspace();
    let space = mlp.arch().action_space();
    evaluate_with(env, episodes, rng, |s| {
        mlp.forward(theta, s, &mut ws)?;
        Ok(crate::policy::greedy_from(&mlp.distribution_from(theta, &ws), &space))
    })
}

/// Test reward of an ensemble, every action voted.
pub fn evaluate_test_reward<R: Rng + ?Sized>(
    ensemble: &EnsemblePolicy,
    env: &EnvConfig,
    episodes: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut ws = ensemble.mlp().workspace();
    evaluate_with(env, episodes, rng, |s| ensemble.predict_with(s, &mut ws))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Per-agent trajectories sampled so far.
    pub trajectories: usize,
    pub round: usize,
    pub test_reward: f64,
    pub group_rewards: Vec<f64>,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Timing {
    trajectories: usize,
    wall_clock_secs: f64,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub final_policy: EnsemblePolicy,
}

impl RunOutput {
    pub fn final_reward(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.test_reward)
    }
}

struct Sinks {
    dir: PathBuf,
    metrics: fs::File,
    rounds: fs::File,
    timings: fs::File,
    summary: fs::File,
}

impl Sinks {
    fn open(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), cfg.to_kv())?;
        let mut summary = fs::File::create(dir.join(SUMMARY_FILE))?;
        writeln!(summary, "trajectories,reward,config_digest")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: fs::File::create(dir.join(METRICS_FILE))?,
            rounds: fs::File::create(dir.join(ROUNDS_FILE))?,
            timings: fs::File::create(dir.join(TIMINGS_FILE))?,
            summary,
        })
    }
}

fn json_line<T: Serialize>(f: &mut fs::File, v: &T) -> Result<()> {
    let line = serde_json::to_string(v).map_err(|e| FrlError::Contract(e.to_string()))?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Trains for the per-agent budget, evaluating before training, whenever
/// the per-agent count crosses a multiple of `eval_interval`, and at the
/// end. With `out`, writes metrics, summary, per-round records, timings,
/// the canonical config and checkpoints at every evaluation.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    par::with_workers(cfg.workers, || run_inner(cfg, out))
}

fn run_inner(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutput> {
    let started = Instant::now();
    let train_env = cfg.train_env();
    let eval_env = cfg.eval_env();
    let mut arch = ArchSpec::for_action_space(train_env.obs_dim(), &train_env.action_space());
    arch.raw_logits = cfg.raw_logits;
    let mlp = Mlp::new(arch);
    let aggregator = cfg.aggregator_spec()?;
    let attack = cfg.attack_spec();
    let setup = FedSetup {
        mlp: &mlp,
        env: &train_env,
        rollout: cfg.rollout(),
        lr: cfg.lr,
        aggregator: &aggregator,
        attack: &attack,
        malicious_fraction: cfg.malicious_fraction,
        optimizer: cfg.server_optimizer,
    };
    let roster = cfg.roster();
    let ids: Vec<usize> = roster.agents.iter().map(|a| a.id).collect();
    let assignment = assign_groups(&ids, cfg.k)?;
    let mut trainer = EnsembleTrainer::new(setup, &roster, &assignment)?;
    let digest = cfg.digest();
    let mut sinks = out.map(|d| Sinks::open(d, cfg)).transpose()?;
    let trim = malicious_count(cfg.malicious_fraction, cfg.k).min(cfg.k.saturating_sub(1) / 2);

    let mut records = vec![];
    let mut evaluate = |trainer: &EnsembleTrainer<'_>, sinks: &mut Option<Sinks>| -> Result<EnsemblePolicy> {
        let mut policy = trainer.policy()?;
        policy.continuous_vote = cfg.continuous_vote;
        policy.trim = trim;
        let trajectories = trainer.rounds_done() * cfg.batch_size;
        let test_reward =
            evaluate_test_reward(&policy, &eval_env, cfg.eval_episodes, &mut stream(cfg.seed, Tag::Eval, 0, 0))?;
        let group_rewards = par::map_slice(&policy.thetas, |theta| {
            evaluate_policy(&mlp, theta, &eval_env, cfg.eval_episodes, &mut stream(cfg.seed, Tag::Eval, 0, 0))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let rec = MetricsRecord {
            trajectories,
            round: trainer.rounds_done(),
            test_reward,
            group_rewards,
            config_digest: digest.clone(),
        };
        log::info!("{digest} trajectories={trajectories} reward={test_reward:.1}");
        if let Some(s) = sinks.as_mut() {
            json_line(&mut s.metrics, &rec)?;
            writeln!(s.summary, "{},{},{}", rec.trajectories, rec.test_reward, rec.config_digest)?;
            json_line(&mut s.timings, &Timing { trajectories, wall_clock_secs: started.elapsed().as_secs_f64() })?;
            policy.write_checkpoints(&s.dir.join(CHECKPOINT_DIR), trainer.rounds_done())?;
        }
        records.push(rec);
        Ok(policy)
    };

    let mut policy = evaluate(&trainer, &mut sinks)?;
    let rounds = cfg.rounds();
    for t in 0..rounds {
        let before = t * cfg.batch_size / cfg.eval_interval;
        let recs: Vec<RoundRecord> = trainer.step()?;
        if let Some(s) = sinks.as_mut() {
            for (group, rec) in recs.iter().enumerate() {
                json_line(&mut s.rounds, &GroupRound { group, record: rec })?;
            }
        }
        let after = (t + 1) * cfg.batch_size / cfg.eval_interval;
        if after > before || t + 1 == rounds {
            policy = evaluate(&trainer, &mut sinks)?;
        }
    }
    Ok(RunOutput { records, final_policy: policy })
}

#[derive(Serialize)]
struct GroupRound<'a> {
    group: usize,
    #[serde(flatten)]
    record: &'a RoundRecord,
}
