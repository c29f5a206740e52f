//! How the server turns an aggregated update into a parameter step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FrlError, Result};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerOptimizer {
    /// `θ += η·AR`.
    Sgd,
    /// Ascent along bias-corrected first/second moment estimates of `AR`.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl ServerOptimizer {
    pub const ADAM: ServerOptimizer = ServerOptimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 };

    /// Applies one step in place.
    pub fn apply(&self, theta: &mut ParamVector, update: &ParamVector, lr: f64, state: &mut OptimizerState) {
        match *self {
            ServerOptimizer::Sgd => theta.axpy(lr, update),
            ServerOptimizer::Adam { beta1, beta2, eps } => {
                if state.m.dim() != theta.dim() {
                    *state = OptimizerState::new(theta.dim());
                }
                state.t += 1;
                let c1 = 1.0 - beta1.powi(state.t as i32);
                let c2 = 1.0 - beta2.powi(state.t as i32);
                for i in 0..theta.dim() {
                    let g = update[i];
                    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                    theta[i] += lr * (state.m[i] / c1) / ((state.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

impl fmt::Display for ServerOptimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServerOptimizer::Sgd => "sgd",
            ServerOptimizer::Adam { .. } => "adam",
        })
    }
}

impl FromStr for ServerOptimizer {
    type Err = FrlError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(ServerOptimizer::Sgd),
            "adam" => Ok(ServerOptimizer::ADAM),
            _ => Err(FrlError::InvalidConfig(format!("unknown server_optimizer '{s}'"))),
        }
    }
}

/// Per-group optimizer moments; empty until the first Adam step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(d: usize) -> Self {
        Self { m: ParamVector::zeros(d), v: ParamVector::zeros(d), t: 0 }
    }
}
