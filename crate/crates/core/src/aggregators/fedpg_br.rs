//! Median-anchored filtering followed by an SCSG correction computed from
//! server-side rollouts.

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::error::{FrlError, Result};
use crate::fedcore::rollout::{local_update, Behavior, RolloutParams};
use crate::rng::StreamRng;
use crate::vector::{mean, ParamVector};

use super::geomed::{geometric_median, DEFAULT_MAX_ITERS};
use super::ServerContext;
use rand::SeedableRng;

#[derive(Debug, Clone, PartialEq)]
pub struct FedPgBrOutcome {
    pub update: ParamVector,
    pub kept: Vec<usize>,
    pub inner_steps: usize,
    pub server_trajectories: usize,
}

/// Updates within `2 sigma` of the median that also point the same way.
pub fn filter_updates(updates: &[ParamVector], median: &ParamVector, sigma: f64) -> Vec<usize> {
    updates
        .iter()
        .enumerate()
        .filter(|(_, g)| g.distance(median) <= 2.0 * sigma && g.dot(median) >= 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Inner-loop length `N >= 1` with `P(N = k) = (1-p)^(k-1) p`, `p = B / (B + b)`.
pub fn draw_inner_steps<R: Rng + ?Sized>(big_b: usize, b: usize, rng: &mut R) -> Result<usize> {
    let p = big_b as f64 / (big_b + b) as f64;
    let geo = Geometric::new(p).map_err(|e| FrlError::InvalidConfig(e.to_string()))?;
    Ok(geo.sample(rng) as usize + 1)
}

pub fn fedpg_br(
    updates: &[ParamVector],
    ctx: &ServerContext<'_>,
    mini_batch: usize,
    sigma: f64,
    gm_eps: f64,
) -> Result<FedPgBrOutcome> {
    let g_med = geometric_median(updates, gm_eps, DEFAULT_MAX_ITERS)?;
    let kept = filter_updates(updates, &g_med, sigma);
    let mu = if kept.is_empty() {
        g_med
    } else {
        mean(&kept.iter().map(|&i| updates[i].clone()).collect::<Vec<_>>())?
    };

    let mut rng = StreamRng::from_seed(ctx.seed);
    let inner_steps = draw_inner_steps(ctx.rollout.batch_size, mini_batch, &mut rng)?;
    let server_params = RolloutParams { batch_size: mini_batch, ..ctx.rollout };

    let theta0 = ctx.theta;
    let mut theta = theta0.clone();
    let mut server_trajectories = 0;
    for j in 0..inner_steps {
        let sample_seed: u64 = rng.random();
        // At j = 0 both estimates use the same seed at the same point and
        // cancel exactly, leaving v = mu.
        let v = if j == 0 {
            mu.clone()
        } else {
            let (at_j, _) = local_update(
                ctx.mlp,
                &theta,
                ctx.env,
                &server_params,
                Behavior::Policy,
                &mut StreamRng::seed_from_u64(sample_seed),
            )?;
            let (at_0, _) = local_update(
                ctx.mlp,
                theta0,
                ctx.env,
                &server_params,
                Behavior::Policy,
                &mut StreamRng::seed_from_u64(sample_seed),
            )?;
            server_trajectories += 2 * mini_batch;
            let mut v = at_j.sub(&at_0);
            v.axpy(1.0, &mu);
            v
        };
        theta.axpy(ctx.lr, &v);
        if !theta.is_finite() {
            return Err(FrlError::NumericFault(format!("FedPG-BR inner iterate {j} is non-finite")));
        }
    }

    let update = if ctx.lr == 0.0 { mu } else { theta.sub(theta0).scaled(1.0 / ctx.lr) };
    Ok(FedPgBrOutcome { update, kept, inner_steps, server_trajectories })
}
