use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use frl_core::certify::{bound_continuous, tolerance_discrete, CertifiedBound, VoteProfile};
use frl_core::ensemble::{ContinuousVote, EnsemblePolicy};
use frl_core::envs::{EnvConfig, EnvKind};
use frl_core::harness::{evaluate_policy, evaluate_test_reward, run_experiment, run_sweep, ExperimentConfig};
use frl_core::policy::Head;
use frl_core::rng::{stream, Tag};

#[derive(Parser)]
#[command(name = "frl", version, about = "Federated policy-gradient RL under poisoning attacks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configuration and write metrics and checkpoints.
    Run {
        /// `key = value` file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Extra `key=value` overrides applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run one experiment per value of an axis.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Test reward of the latest checkpoints in a directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "geomedian")]
        continuous_vote: String,
    },
    /// Certified tolerance of a vote, or displacement bound of a median.
    Certify {
        /// Vote counts, comma-separated.
        #[arg(long, required_unless_present = "continuous")]
        votes: Option<String>,
        /// Action index of each count in `--votes` (default 0, 1, ...).
        #[arg(long)]
        indices: Option<String>,
        #[arg(long, requires_all = ["k", "nprime", "w"])]
        continuous: bool,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        nprime: Option<usize>,
        #[arg(long)]
        w: Option<f64>,
    },
}

fn csv<T: std::str::FromStr>(s: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',').map(|v| v.trim().parse::<T>().with_context(|| format!("bad list entry '{v}'"))).collect()
}

fn load(path: Option<&std::path::Path>) -> anyhow::Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Run { config, seed, out, overrides } => {
            let mut cfg = load(config.as_deref())?;
            for o in &overrides {
                let (k, v) = o.split_once('=').with_context(|| format!("override '{o}' is not key=value"))?;
                cfg.set(k, v)?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let res = run_experiment(&cfg, Some(&out))?;
            println!("{}", json!({ "final_reward": res.final_reward(), "config_digest": cfg.digest(), "out": out }));
        }
        Cmd::Sweep { config, axis, values, out } => {
            let cfg = load(config.as_deref())?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            let points = run_sweep(&cfg, &axis, &values, Some(&out))?;
            for p in &points {
                let last = p.records.as_ref().and_then(|r| r.last()).map(|r| r.test_reward);
                println!("{}", json!({ "axis": p.axis, "value": p.value, "final_reward": last, "error": p.error }));
            }
        }
        Cmd::Eval { checkpoint, episodes, seed, continuous_vote } => {
            let mut ens = EnsemblePolicy::load_latest(&checkpoint)?;
            ens.continuous_vote = continuous_vote.parse::<ContinuousVote>()?;
            let env = match ens.arch().head {
                Head::Categorical { .. } => EnvConfig::from_kind(EnvKind::CartPole),
                Head::Gaussian { .. } => EnvConfig::from_kind(EnvKind::CartPoleContinuous),
            };
            let reward = evaluate_test_reward(&ens, &env, episodes, &mut stream(seed, Tag::Eval, 0, 0))?;
            let groups = ens
                .thetas
                .iter()
                .map(|t| evaluate_policy(ens.mlp(), t, &env, episodes, &mut stream(seed, Tag::Eval, 0, 0)))
                .collect::<Result<Vec<_>, _>>()?;
            println!("{}", json!({ "test_reward": reward, "group_rewards": groups, "k": ens.k(), "episodes": episodes }));
        }
        Cmd::Certify { votes, indices, continuous, k, nprime, w } => {
            let bound = if continuous {
                let (k, n, w) = (k.unwrap_or(0), nprime.unwrap_or(0), w.unwrap_or(0.0));
                CertifiedBound::ContinuousDisplacement { bound: bound_continuous(k, n, w)?, k, n_prime: n, w }
            } else {
                let counts: Vec<usize> = csv(votes.as_deref().unwrap_or_default())?;
                let order: Vec<usize> = match indices {
                    Some(s) => csv(&s)?,
                    None => (0..counts.len()).collect(),
                };
                if order.len() != counts.len() {
                    bail!("--indices has {} entries, --votes has {}", order.len(), counts.len());
                }
                let m = order.iter().max().map_or(0, |&x| x + 1).max(2);
                let mut by_index = vec![0usize; m];
                for (&i, &c) in order.iter().zip(&counts) {
                    by_index[i] += c;
                }
                tolerance_discrete(&VoteProfile::new(by_index)?)
            };
            println!("{}", serde_json::to_string(&bound)?);
        }
    }
    Ok(())
}
