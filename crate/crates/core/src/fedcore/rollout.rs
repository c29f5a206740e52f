//! Trajectory sampling and the REINFORCE local update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Action, ActionSpace, EnvConfig};
use crate::error::{FrlError, Result};
use crate::policy::{Mlp, Workspace};
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: [f64; 4],
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Hyperparameters shared by every agent's local update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutParams {
    pub batch_size: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub baseline: f64,
    /// Exponent of the discount on the first reward (1 = `gamma^h`, h from 1).
    pub discount_offset: i32,
}

impl Default for RolloutParams {
    fn default() -> Self {
        Self { batch_size: 16, horizon: 500, gamma: 0.999, baseline: 0.0, discount_offset: 1 }
    }
}

/// How actions are chosen while collecting experience.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Policy,
    /// Uniform over the action space regardless of state.
    UniformRandom,
}

fn uniform_action<R: Rng + ?Sized>(space: &ActionSpace, rng: &mut R) -> Action {
    match *space {
        ActionSpace::Discrete { m } => Action::Discrete(rng.random_range(0..m)),
        ActionSpace::Continuous { dim, lo, hi } => {
            Action::Continuous((0..dim).map(|_| rng.random_range(lo..=hi)).collect())
        }
    }
}

fn choose<R: Rng + ?Sized>(
    mlp: &Mlp,
    theta: &[f64],
    ws: &Workspace,
    behavior: Behavior,
    rng: &mut R,
) -> Action {
    match behavior {
        Behavior::Policy => mlp.sample_from(&mlp.distribution_from(theta, ws), rng),
        Behavior::UniformRandom => uniform_action(&mlp.arch().action_space(), rng),
    }
}

pub fn sample_trajectory<R: Rng + ?Sized>(
    mlp: &Mlp,
    theta: &[f64],
    env: &EnvConfig,
    horizon: usize,
    behavior: Behavior,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut ws = mlp.workspace();
    let mut s = env.reset(rng);
    let mut traj = Trajectory::default();
    while traj.len() < horizon {
        let obs = s.observation();
        mlp.forward(theta, &obs, &mut ws)?;
        let action = choose(mlp, theta, &ws, behavior, rng);
        let r = env.step(&s, &action, rng)?;
        traj.steps.push(Step { state: obs, action, reward: r.reward });
        s = r.next;
        if r.done {
            break;
        }
    }
    Ok(traj)
}

pub fn sample_batch<R: Rng + ?Sized>(
    mlp: &Mlp,
    theta: &[f64],
    env: &EnvConfig,
    batch: usize,
    horizon: usize,
    behavior: Behavior,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    if batch == 0 {
        return Err(FrlError::Contract("batch size must be at least 1".into()));
    }
    (0..batch)
        .map(|_| sample_trajectory(mlp, theta, env, horizon, behavior, rng))
        .collect()
}

fn first_discount(p: &RolloutParams) -> f64 {
    p.gamma.powi(p.discount_offset)
}

/// Batch-mean of `(sum_h grad log pi) * (sum_h gamma^h r_h - baseline)`.
/// Both sums run over the whole episode.
pub fn reinforce_update(
    mlp: &Mlp,
    trajectories: &[Trajectory],
    theta: &[f64],
    params: &RolloutParams,
) -> Result<ParamVector> {
    if trajectories.is_empty() {
        return Err(FrlError::Contract("REINFORCE needs at least one trajectory".into()));
    }
    let mut ws = mlp.workspace();
    let mut total = ParamVector::zeros(mlp.dim());
    let mut per_traj = ParamVector::zeros(mlp.dim());
    for traj in trajectories {
        per_traj.iter_mut().for_each(|x| *x = 0.0);
        let mut ret = 0.0;
        let mut disc = first_discount(params);
        for step in &traj.steps {
            mlp.forward(theta, &step.state, &mut ws)?;
            mlp.accumulate_logprob_grad(theta, &mut ws, &step.action, 1.0, &mut per_traj)?;
            ret += disc * step.reward;
            disc *= params.gamma;
        }
        total.axpy(ret - params.baseline, &per_traj);
    }
    finish(total, trajectories.len())
}

fn finish(mut total: ParamVector, batch: usize) -> Result<ParamVector> {
    let inv = 1.0 / batch as f64;
    total.iter_mut().for_each(|x| *x *= inv);
    if !total.is_finite() {
        return Err(FrlError::NumericFault("non-finite REINFORCE update".into()));
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub trajectories: usize,
    pub steps: usize,
    pub mean_return: f64,
}

/// Samples a batch and computes its REINFORCE update in a single pass,
/// reusing each step's forward activations for the gradient. Produces the
/// same bits as `reinforce_update(sample_batch(..))` with the same stream.
pub fn local_update<R: Rng + ?Sized>(
    mlp: &Mlp,
    theta: &[f64],
    env: &EnvConfig,
    params: &RolloutParams,
    behavior: Behavior,
    rng: &mut R,
) -> Result<(ParamVector, BatchStats)> {
    if params.batch_size == 0 {
        return Err(FrlError::Contract("batch size must be at least 1".into()));
    }
    let mut ws = mlp.workspace();
    let mut total = ParamVector::zeros(mlp.dim());
    let mut per_traj = ParamVector::zeros(mlp.dim());
    let mut stats = BatchStats::default();
    let mut reward_sum = 0.0;
    for _ in 0..params.batch_size {
        per_traj.iter_mut().for_each(|x| *x = 0.0);
        let mut s = env.reset(rng);
        let mut ret = 0.0;
        let mut disc = first_discount(params);
        let mut len = 0;
        while len < params.horizon {
            let obs = s.observation();
            mlp.forward(theta, &obs, &mut ws)?;
            let action = choose(mlp, theta, &ws, behavior, rng);
            let r = env.step(&s, &action, rng)?;
            mlp.accumulate_logprob_grad(theta, &mut ws, &action, 1.0, &mut per_traj)?;
            ret += disc * r.reward;
            disc *= params.gamma;
            reward_sum += r.reward;
            len += 1;
            s = r.next;
            if r.done {
                break;
            }
        }
        total.axpy(ret - params.baseline, &per_traj);
        stats.steps += len;
    }
    stats.trajectories = params.batch_size;
    stats.mean_return = reward_sum / params.batch_size as f64;
    Ok((finish(total, params.batch_size)?, stats))
}
