//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregators::geomed::DEFAULT_MAX_ITERS;
use crate::aggregators::AggregatorSpec;
use crate::attacks::{AttackKind, AttackSpec, DeltaKind, Knowledge, Variant};
use crate::ensemble::ContinuousVote;
use crate::envs::{EnvConfig, EnvKind};
use crate::error::{FrlError, Result};
use crate::fedcore::{AgentRoster, RolloutParams, ServerOptimizer};

/// Reward-noise variance used when `heterogeneous = true` and no explicit
/// `reward_noise_var` is given.
pub const HETEROGENEOUS_NOISE_VAR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub n_agents: usize,
    pub malicious_fraction: f64,
    /// Explicit malicious ids; overrides the lowest-ids default.
    pub malicious_ids: Option<Vec<usize>>,
    pub k: usize,

    pub aggregator: String,
    pub trim_c: Option<usize>,
    pub flame_lambda: f64,
    pub fedpg_b: usize,
    pub fedpg_sigma: f64,
    pub fedpg_delta: f64,
    pub gm_eps: f64,

    pub attack: AttackKind,
    pub knowledge: Knowledge,
    pub variant: Variant,
    pub delta: DeltaKind,
    pub lambda0: f64,
    pub zeta0: f64,
    pub gamma0: f64,
    /// `None` (`midway`) starts the attack halfway through the per-agent budget.
    pub attack_start_trajectories: Option<usize>,

    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub baseline: f64,
    pub discount_offset: i32,
    pub raw_logits: bool,
    pub server_optimizer: ServerOptimizer,

    pub trajectories_per_agent: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub continuous_vote: ContinuousVote,
    pub heterogeneous: bool,
    pub reward_noise_var: Option<f64>,
    /// Thread count; 0 = all cores. Never affects results.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::CartPole,
            n_agents: 30,
            malicious_fraction: 0.3,
            malicious_ids: None,
            k: 5,
            aggregator: "fedavg".into(),
            trim_c: None,
            flame_lambda: 0.001,
            fedpg_b: 4,
            fedpg_sigma: 0.06,
            fedpg_delta: 0.6,
            gm_eps: 1e-8,
            attack: AttackKind::None,
            knowledge: Knowledge::Full,
            variant: Variant::IV,
            delta: DeltaKind::Sgn,
            lambda0: 0.83,
            zeta0: 0.03,
            gamma0: 0.83,
            attack_start_trajectories: Some(0),
            batch_size: 16,
            lr: 1e-3,
            gamma: 0.999,
            horizon: 500,
            baseline: 0.0,
            discount_offset: 1,
            raw_logits: false,
            server_optimizer: ServerOptimizer::ADAM,
            trajectories_per_agent: 5000,
            eval_interval: 250,
            eval_episodes: 10,
            seed: 0,
            continuous_vote: ContinuousVote::Geomedian,
            heterogeneous: false,
            reward_noise_var: None,
            workers: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| FrlError::InvalidConfig(format!("bad value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(FrlError::InvalidConfig(format!("bad boolean '{value}' for '{key}'"))),
    }
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "none" || value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl ExperimentConfig {
    /// Sets one key. Sweep axis names are accepted as aliases.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "env" => self.env = v.parse()?,
            "n_agents" | "n" => self.n_agents = parse(key, v)?,
            "malicious_fraction" => self.malicious_fraction = parse(key, v)?,
            "malicious_ids" => {
                self.malicious_ids = match v {
                    "" | "none" => None,
                    list => Some(list.split(',').map(|x| parse(key, x.trim())).collect::<Result<_>>()?),
                }
            }
            "K" | "k" => self.k = parse(key, v)?,
            "aggregator" => self.aggregator = v.to_string(),
            "trim_c" => self.trim_c = parse_opt(key, v)?,
            "flame_lambda" => self.flame_lambda = parse(key, v)?,
            "fedpg_b" => self.fedpg_b = parse(key, v)?,
            "fedpg_sigma" => self.fedpg_sigma = parse(key, v)?,
            "fedpg_delta" => self.fedpg_delta = parse(key, v)?,
            "gm_eps" => self.gm_eps = parse(key, v)?,
            "attack" => self.attack = v.parse()?,
            "knowledge" => self.knowledge = v.parse()?,
            "variant" => self.variant = v.parse()?,
            "delta" | "delta_kind" => self.delta = v.parse()?,
            "lambda0" => self.lambda0 = parse(key, v)?,
            "zeta0" => self.zeta0 = parse(key, v)?,
            "gamma0" => self.gamma0 = parse(key, v)?,
            "attack_start_trajectories" | "attack_start" => {
                self.attack_start_trajectories = if v == "midway" { None } else { Some(parse(key, v)?) }
            }
            "B" | "batch_size" => self.batch_size = parse(key, v)?,
            "lr" | "eta" => self.lr = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "H" | "horizon" => self.horizon = parse(key, v)?,
            "baseline" => self.baseline = parse(key, v)?,
            "discount_offset" => self.discount_offset = parse(key, v)?,
            "raw_logits" => self.raw_logits = parse_bool(key, v)?,
            "server_optimizer" => self.server_optimizer = v.parse()?,
            "trajectories_per_agent" => self.trajectories_per_agent = parse(key, v)?,
            "eval_interval" => self.eval_interval = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "continuous_vote" => self.continuous_vote = v.parse()?,
            "heterogeneous" => self.heterogeneous = parse_bool(key, v)?,
            "reward_noise_var" => self.reward_noise_var = parse_opt(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            other => return Err(FrlError::InvalidConfig(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FrlError::InvalidConfig(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(k, v).map_err(|e| FrlError::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form: every key, fixed order. Round-trips through
    /// [`ExperimentConfig::parse_str`]. `workers` is left out since it never
    /// changes results.
    pub fn to_kv(&self) -> String {
        let opt = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        let fields: Vec<(&str, String)> = vec![
            ("env", self.env.to_string()),
            ("n_agents", self.n_agents.to_string()),
            ("malicious_fraction", self.malicious_fraction.to_string()),
            (
                "malicious_ids",
                opt(self.malicious_ids.as_ref().map(|ids| ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","))),
            ),
            ("K", self.k.to_string()),
            ("aggregator", self.aggregator.clone()),
            ("trim_c", opt(self.trim_c.map(|c| c.to_string()))),
            ("flame_lambda", self.flame_lambda.to_string()),
            ("fedpg_b", self.fedpg_b.to_string()),
            ("fedpg_sigma", self.fedpg_sigma.to_string()),
            ("fedpg_delta", self.fedpg_delta.to_string()),
            ("gm_eps", self.gm_eps.to_string()),
            ("attack", self.attack.to_string()),
            ("knowledge", self.knowledge.to_string()),
            ("variant", self.variant.to_string()),
            ("delta", self.delta.to_string()),
            ("lambda0", self.lambda0.to_string()),
            ("zeta0", self.zeta0.to_string()),
            ("gamma0", self.gamma0.to_string()),
            (
                "attack_start_trajectories",
                self.attack_start_trajectories.map_or_else(|| "midway".to_string(), |t| t.to_string()),
            ),
            ("B", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("gamma", self.gamma.to_string()),
            ("H", self.horizon.to_string()),
            ("baseline", self.baseline.to_string()),
            ("discount_offset", self.discount_offset.to_string()),
            ("raw_logits", self.raw_logits.to_string()),
            ("server_optimizer", self.server_optimizer.to_string()),
            ("trajectories_per_agent", self.trajectories_per_agent.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("seed", self.seed.to_string()),
            ("continuous_vote", self.continuous_vote.to_string()),
            ("heterogeneous", self.heterogeneous.to_string()),
            ("reward_noise_var", opt(self.reward_noise_var.map(|v| v.to_string()))),
        ];
        let mut out = String::new();
        for (k, v) in fields {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of SHA-256 over the canonical form.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_kv().as_bytes());
        hash.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn aggregator_spec(&self) -> Result<AggregatorSpec> {
        let spec = match self.aggregator.as_str() {
            "fedavg" => AggregatorSpec::Fedavg,
            "trimmed_mean" => AggregatorSpec::TrimmedMean { c: self.trim_c },
            "median" => AggregatorSpec::CoordMedian,
            "geometric_median" => AggregatorSpec::GeometricMedian { eps: self.gm_eps, max_iters: DEFAULT_MAX_ITERS },
            "flame" => AggregatorSpec::Flame { lambda: self.flame_lambda },
            "fedpg_br" => AggregatorSpec::FedpgBr {
                b: self.fedpg_b,
                sigma: self.fedpg_sigma,
                delta: self.fedpg_delta,
                gm_eps: self.gm_eps,
            },
            other => return Err(FrlError::InvalidConfig(format!("unknown aggregator '{other}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn attack_spec(&self) -> AttackSpec {
        AttackSpec {
            kind: self.attack,
            knowledge: self.knowledge,
            variant: self.variant,
            delta: self.delta,
            lambda0: self.lambda0,
            zeta0: self.zeta0,
            gamma0: self.gamma0,
            start_after: self.attack_start_trajectories.unwrap_or(self.trajectories_per_agent / 2),
            ..AttackSpec::default()
        }
    }

    pub fn rollout(&self) -> RolloutParams {
        RolloutParams {
            batch_size: self.batch_size,
            horizon: self.horizon,
            gamma: self.gamma,
            baseline: self.baseline,
            discount_offset: self.discount_offset,
        }
    }

    pub fn noise_var(&self) -> f64 {
        match (self.reward_noise_var, self.heterogeneous) {
            (Some(v), _) => v,
            (None, true) => HETEROGENEOUS_NOISE_VAR,
            (None, false) => 0.0,
        }
    }

    /// The environment agents train in (noisy rewards when heterogeneous).
    pub fn train_env(&self) -> EnvConfig {
        EnvConfig::from_kind(self.env).with_reward_noise(self.noise_var())
    }

    /// The environment test reward is measured in: always noise-free.
    pub fn eval_env(&self) -> EnvConfig {
        EnvConfig::from_kind(self.env)
    }

    pub fn roster(&self) -> AgentRoster {
        match &self.malicious_ids {
            Some(ids) => AgentRoster::with_malicious(self.n_agents, ids, self.seed),
            None => AgentRoster::new(self.n_agents, self.malicious_fraction, self.seed),
        }
    }

    /// Global rounds that fit in the per-agent budget.
    pub fn rounds(&self) -> usize {
        self.trajectories_per_agent / self.batch_size.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FrlError::InvalidConfig(m));
        if self.n_agents == 0 {
            return bad("n_agents must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.malicious_fraction) {
            return bad(format!("malicious_fraction must lie in [0, 1], got {}", self.malicious_fraction));
        }
        if let Some(bad_id) = self.malicious_ids.iter().flatten().find(|&&id| id >= self.n_agents) {
            return bad(format!("malicious id {bad_id} is not below n_agents = {}", self.n_agents));
        }
        if self.k == 0 || self.k > self.n_agents {
            return bad(format!("K = {} must lie in 1..={}", self.k, self.n_agents));
        }
        if self.batch_size == 0 {
            return bad("B must be >= 1".into());
        }
        if self.horizon == 0 {
            return bad("H must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be >= 1".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be >= 1".into());
        }
        if self.noise_var() < 0.0 {
            return bad("reward_noise_var must be >= 0".into());
        }
        if self.lambda0 <= 0.0 || self.zeta0 <= 0.0 || self.gamma0 <= 0.0 {
            return bad("lambda0, zeta0 and gamma0 must be > 0".into());
        }
        self.aggregator_spec()?;
        Ok(())
    }
}
