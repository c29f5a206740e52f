//! One experiment per value of a config axis.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FrlError, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::run::{run_experiment, MetricsRecord};
use crate::par;

pub const SWEEP_AXES: &[&str] = &[
    "malicious_fraction",
    "n_agents",
    "K",
    "delta_kind",
    "variant",
    "knowledge",
    "attack_start",
    "continuous_vote",
    "heterogeneous",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: String,
    pub value: String,
    pub records: Option<Vec<MetricsRecord>>,
    pub error: Option<String>,
}

/// A value may set several keys at once, e.g. `n_agents:50+K:7` (used for
/// paired sweeps); a plain value sets `axis`.
fn apply(cfg: &mut ExperimentConfig, axis: &str, value: &str) -> Result<()> {
    if value.contains(':') {
        for part in value.split('+') {
            let (k, v) = part
                .split_once(':')
                .ok_or_else(|| FrlError::InvalidConfig(format!("bad sweep value '{value}'")))?;
            cfg.set(k, v)?;
        }
        Ok(())
    } else {
        cfg.set(axis, value)
    }
}

/// Runs every point with the base seed; points run concurrently on
/// `base.workers` threads, each point internally sequential in its own
/// thread. Failures are recorded per point.
pub fn run_sweep(base: &ExperimentConfig, axis: &str, values: &[String], out: Option<&Path>) -> Result<Vec<SweepPoint>> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(FrlError::InvalidConfig(format!("unknown sweep axis '{axis}'; expected one of {SWEEP_AXES:?}")));
    }
    let run_point = |value: &String| {
        let outcome = (|| {
            let mut cfg = base.clone();
            apply(&mut cfg, axis, value)?;
            cfg.workers = 1;
            let dir = out.map(|d| d.join(format!("{axis}={}", value.replace(['/', ':', '+'], "_"))));
            run_experiment(&cfg, dir.as_deref()).map(|r| r.records)
        })();
        match outcome {
            Ok(records) => SweepPoint { axis: axis.into(), value: value.clone(), records: Some(records), error: None },
            Err(e) => {
                log::warn!("sweep point {axis}={value} failed: {e}");
                SweepPoint { axis: axis.into(), value: value.clone(), records: None, error: Some(e.to_string()) }
            }
        }
    };
    Ok(par::with_workers(base.workers, || par::map_slice(values, run_point)))
}
