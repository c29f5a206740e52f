//! Experiment orchestration behind the `frl` binary.

pub mod config;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use run::{evaluate_policy, evaluate_test_reward, evaluate_with, run_experiment, MetricsRecord, RunOutput};
pub use sweep::{run_sweep, SweepPoint, SWEEP_AXES};
