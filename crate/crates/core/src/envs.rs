//! Cart-pole dynamics with a discrete push-left/push-right action set and a
//! continuous-force variant, plus optional Gaussian reward noise for the
//! heterogeneous setting.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FrlError, Result};

pub const THETA_LIMIT: f64 = 12.0 * PI / 180.0;
pub const X_LIMIT: f64 = 2.4;
pub const CONTINUOUS_ACTION_BOUND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    CartPole,
    CartPoleContinuous,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::CartPoleContinuous => "cartpole_continuous",
        })
    }
}

impl FromStr for EnvKind {
    type Err = FrlError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvKind::CartPole),
            "cartpole_continuous" => Ok(EnvKind::CartPoleContinuous),
            other => Err(FrlError::InvalidConfig(format!("unknown env `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete { m: usize },
    Continuous { dim: usize, lo: f64, hi: f64 },
}

impl ActionSpace {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }

    pub fn clamp(&self, a: &mut [f64]) {
        if let ActionSpace::Continuous { lo, hi, .. } = *self {
            a.iter_mut().for_each(|x| *x = x.clamp(lo, hi));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub steps_elapsed: usize,
}

impl EnvState {
    pub fn observation(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn out_of_bounds(&self) -> bool {
        self.theta.abs() > THETA_LIMIT || self.x.abs() > X_LIMIT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_mag: f64,
    pub dt: f64,
    pub episode_cap: usize,
    pub reward_noise_var: f64,
}

impl EnvConfig {
    pub fn cartpole() -> Self {
        Self {
            kind: EnvKind::CartPole,
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_mag: 10.0,
            dt: 0.02,
            episode_cap: 500,
            reward_noise_var: 0.0,
        }
    }

    pub fn cartpole_continuous() -> Self {
        Self {
            kind: EnvKind::CartPoleContinuous,
            episode_cap: 1000,
            ..Self::cartpole()
        }
    }

    pub fn from_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::CartPole => Self::cartpole(),
            EnvKind::CartPoleContinuous => Self::cartpole_continuous(),
        }
    }

    pub fn with_reward_noise(mut self, variance: f64) -> Self {
        self.reward_noise_var = variance;
        self
    }

    pub fn obs_dim(&self) -> usize {
        4
    }

    pub fn action_space(&self) -> ActionSpace {
        match self.kind {
            EnvKind::CartPole => ActionSpace::Discrete { m: 2 },
            EnvKind::CartPoleContinuous => ActionSpace::Continuous {
                dim: 1,
                lo: -CONTINUOUS_ACTION_BOUND,
                hi: CONTINUOUS_ACTION_BOUND,
            },
        }
    }

    pub fn is_terminal(&self, s: &EnvState) -> bool {
        s.out_of_bounds() || s.steps_elapsed >= self.episode_cap
    }

    /// Noise-free ceiling on one episode's return.
    pub fn max_episode_reward(&self) -> f64 {
        self.episode_cap as f64
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let mut draw = || rng.random_range(-0.05..=0.05);
        EnvState {
            x: draw(),
            x_dot: draw(),
            theta: draw(),
            theta_dot: draw(),
            steps_elapsed: 0,
        }
    }

    fn force(&self, a: &Action) -> Result<f64> {
        match (self.kind, a) {
            (EnvKind::CartPole, Action::Discrete(0)) => Ok(-self.force_mag),
            (EnvKind::CartPole, Action::Discrete(1)) => Ok(self.force_mag),
            (EnvKind::CartPoleContinuous, Action::Continuous(v)) if v.len() == 1 => {
                let a = v[0].clamp(-CONTINUOUS_ACTION_BOUND, CONTINUOUS_ACTION_BOUND);
                Ok(a * self.force_mag)
            }
            (_, a) => Err(FrlError::Contract(format!("action {a:?} invalid for {}", self.kind))),
        }
    }

    /// Advances one `dt` with semi-implicit Euler (velocities first).
    pub fn step<R: Rng + ?Sized>(&self, s: &EnvState, a: &Action, rng: &mut R) -> Result<StepResult> {
        if self.is_terminal(s) {
            return Err(FrlError::Contract("step on a terminal state".into()));
        }
        let force = self.force(a)?;
        let total_mass = self.cart_mass + self.pole_mass;
        let pm_len = self.pole_mass * self.pole_half_length;
        let (sin, cos) = s.theta.sin_cos();

        let temp = (force + pm_len * s.theta_dot * s.theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.pole_half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pm_len * theta_acc * cos / total_mass;

        let x_dot = s.x_dot + self.dt * x_acc;
        let theta_dot = s.theta_dot + self.dt * theta_acc;
        let next = EnvState {
            x: s.x + self.dt * x_dot,
            x_dot,
            theta: s.theta + self.dt * theta_dot,
            theta_dot,
            steps_elapsed: s.steps_elapsed + 1,
        };

        let noise = if self.reward_noise_var > 0.0 {
            Normal::new(0.0, self.reward_noise_var.sqrt())
                .map_err(|e| FrlError::InvalidConfig(e.to_string()))?
                .sample(rng)
        } else {
            0.0
        };

        Ok(StepResult {
            done: self.is_terminal(&next),
            next,
            reward: 1.0 + noise,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next: EnvState,
    pub reward: f64,
    pub done: bool,
}
