//! Aggregation rules mapping a set of local updates to one applied update.

pub mod coordinate;
pub mod fedpg_br;
pub mod flame;
pub mod geomed;

use std::fmt;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::error::{FrlError, Result};
use crate::fedcore::rollout::RolloutParams;
use crate::policy::Mlp;
use crate::rng::StreamRng;
use crate::vector::ParamVector;

pub use coordinate::{coord_median, fedavg, trimmed_mean};
pub use fedpg_br::fedpg_br;
pub use flame::flame;
pub use geomed::geometric_median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregatorSpec {
    Fedavg,
    /// `c = None` trims the configured malicious count.
    TrimmedMean { c: Option<usize> },
    CoordMedian,
    GeometricMedian { eps: f64, max_iters: usize },
    Flame { lambda: f64 },
    FedpgBr { b: usize, sigma: f64, delta: f64, gm_eps: f64 },
}

impl AggregatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorSpec::Fedavg => "fedavg",
            AggregatorSpec::TrimmedMean { .. } => "trimmed_mean",
            AggregatorSpec::CoordMedian => "median",
            AggregatorSpec::GeometricMedian { .. } => "geometric_median",
            AggregatorSpec::Flame { .. } => "flame",
            AggregatorSpec::FedpgBr { .. } => "fedpg_br",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FrlError::InvalidConfig(m));
        match *self {
            AggregatorSpec::GeometricMedian { eps, .. } if eps <= 0.0 => bad(format!("gm_eps must be > 0, got {eps}")),
            AggregatorSpec::Flame { lambda } if lambda < 0.0 => bad(format!("flame_lambda must be >= 0, got {lambda}")),
            AggregatorSpec::FedpgBr { b, sigma, delta, gm_eps } => {
                if b < 1 {
                    bad("fedpg_b must be >= 1".into())
                } else if !(delta > 0.0 && delta < 1.0) {
                    bad(format!("fedpg_delta must lie in (0, 1), got {delta}"))
                } else if sigma <= 0.0 {
                    bad(format!("fedpg_sigma must be > 0, got {sigma}"))
                } else if gm_eps <= 0.0 {
                    bad(format!("gm_eps must be > 0, got {gm_eps}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Effective trim count for `n` inputs.
    pub fn trim_count(&self, n: usize, default_trim: usize) -> Option<usize> {
        match *self {
            AggregatorSpec::TrimmedMean { c } => Some(c.unwrap_or(default_trim.min(n.saturating_sub(1) / 2))),
            _ => None,
        }
    }
}

impl fmt::Display for AggregatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything a stateful rule may need beyond the updates themselves.
/// `seed` fixes all server randomness for one call, so repeated calls with
/// the same context are deterministic.
#[derive(Debug, Clone)]
pub struct ServerContext<'a> {
    pub mlp: &'a Mlp,
    pub env: &'a EnvConfig,
    pub theta: &'a ParamVector,
    pub lr: f64,
    pub rollout: RolloutParams,
    pub seed: [u8; 32],
    pub default_trim: usize,
}

impl ServerContext<'_> {
    pub fn with_seed(&self, seed: [u8; 32]) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub update: ParamVector,
    pub server_trajectories: usize,
}

pub fn aggregate(spec: &AggregatorSpec, updates: &[ParamVector], ctx: &ServerContext<'_>) -> Result<Aggregated> {
    let plain = |update| Ok(Aggregated { update, server_trajectories: 0 });
    match *spec {
        AggregatorSpec::Fedavg => plain(fedavg(updates)?),
        AggregatorSpec::TrimmedMean { .. } => {
            let c = spec.trim_count(updates.len(), ctx.default_trim).unwrap_or(0);
            plain(trimmed_mean(updates, c)?)
        }
        AggregatorSpec::CoordMedian => plain(coord_median(updates)?),
        AggregatorSpec::GeometricMedian { eps, max_iters } => plain(geometric_median(updates, eps, max_iters)?),
        AggregatorSpec::Flame { lambda } => plain(flame(updates, lambda, &mut StreamRng::from_seed(ctx.seed))?),
        AggregatorSpec::FedpgBr { b, sigma, gm_eps, .. } => {
            let out = fedpg_br(updates, ctx, b, sigma, gm_eps)?;
            Ok(Aggregated { update: out.update, server_trajectories: out.server_trajectories })
        }
    }
}
