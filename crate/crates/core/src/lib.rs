//! Federated policy-gradient RL under Byzantine attack: environments, MLP
//! policies, the federated protocol, robust aggregation rules, attacks, the
//! ensemble defense and its certified bounds, and an experiment harness.

pub mod aggregators;
pub mod attacks;
pub mod certify;
pub mod ensemble;
pub mod envs;
pub mod error;
pub mod fedcore;
pub mod harness;
pub mod par;
pub mod policy;
pub mod rng;
pub mod vector;

pub use error::{FrlError, Result};
pub use vector::ParamVector;
