//! Poisoning attacks: random actions (data poisoning), random noise, Trim,
//! Shejwalkar and the two-stage Normalized attack (model poisoning).

pub mod normalized;
pub mod search;

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FrlError, Result};
use crate::vector::{common_dim, mean, ParamVector};

pub use normalized::{normalized_attack, normalized_stage1, normalized_stage2, Stage1};
pub use search::{coordinate_search, SearchParams, SearchResult};

pub const RANDOM_NOISE_VARIANCE: f64 = 1000.0;

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $key:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $key),+ })
            }
        }

        impl FromStr for $name {
            type Err = FrlError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($key => Ok($name::$variant),)+
                    other => Err(FrlError::InvalidConfig(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(AttackKind {
    None => "none",
    RandomAction => "random_action",
    RandomNoise => "random_noise",
    Trim => "trim",
    Shejwalkar => "shejwalkar",
    Normalized => "normalized",
});

keyword_enum!(Knowledge { Full => "full", Partial => "partial" });

keyword_enum!(Variant { I => "I", II => "II", III => "III", IV => "IV" });

keyword_enum!(DeltaKind { Uv => "uv", Std => "std", Sgn => "sgn" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub knowledge: Knowledge,
    pub variant: Variant,
    pub delta: DeltaKind,
    pub lambda0: f64,
    pub zeta0: f64,
    /// Initial step of the Shejwalkar search.
    pub gamma0: f64,
    pub decay: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Per-agent trajectories that must be sampled before the attack starts.
    pub start_after: usize,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            knowledge: Knowledge::Full,
            variant: Variant::IV,
            delta: DeltaKind::Sgn,
            lambda0: 0.83,
            zeta0: 0.03,
            gamma0: 0.83,
            decay: 1.0 / 3.0,
            tol: 1e-5,
            max_iters: 30,
            start_after: 0,
        }
    }
}

impl AttackSpec {
    pub fn is_active(&self, trajectories_so_far: usize) -> bool {
        self.kind != AttackKind::None && trajectories_so_far >= self.start_after
    }

    /// Model-poisoning attacks replace the submitted update.
    pub fn crafts_updates(&self) -> bool {
        matches!(
            self.kind,
            AttackKind::RandomNoise | AttackKind::Trim | AttackKind::Shejwalkar | AttackKind::Normalized
        )
    }

    fn search(&self, start: f64, step: f64, baseline: f64) -> SearchParams {
        SearchParams { start, step, baseline, decay: self.decay, tol: self.tol, max_iters: self.max_iters }
    }
}

/// The aggregation rule as the attacker can evaluate it.
pub type Oracle<'a> = dyn Fn(&[ParamVector]) -> Result<ParamVector> + Sync + 'a;

/// What the attacker sees in one round. Under partial knowledge `visible`
/// holds only the malicious agents' own honestly computed updates; benign
/// updates are never placed here.
pub struct AttackContext<'a> {
    pub visible: Vec<ParamVector>,
    pub n_total: usize,
    /// Positions of the malicious agents in the id-sorted update list.
    pub malicious_slots: Vec<usize>,
    pub knowledge: Knowledge,
    pub oracle: &'a Oracle<'a>,
}

impl AttackContext<'_> {
    pub fn dim(&self) -> Result<usize> {
        common_dim(&self.visible)
    }

    /// The attacker's view of the aggregate before any poisoning.
    pub fn pre_attack_aggregate(&self) -> Result<ParamVector> {
        match self.knowledge {
            Knowledge::Full => (self.oracle)(&self.visible),
            Knowledge::Partial => partial_estimate(&self.visible, self.oracle),
        }
    }

    /// Input set the server would see if every malicious agent sent `crafted`.
    /// Partial knowledge fills the benign slots with the malicious agents'
    /// own updates, in turn.
    pub fn poisoned_set(&self, crafted: &[ParamVector]) -> Vec<ParamVector> {
        let mut out = Vec::with_capacity(self.n_total);
        let mut benign_seen = 0;
        let mut crafted_seen = 0;
        for slot in 0..self.n_total {
            if self.malicious_slots.contains(&slot) {
                out.push(crafted[crafted_seen % crafted.len()].clone());
                crafted_seen += 1;
            } else {
                let v = match self.knowledge {
                    Knowledge::Full => &self.visible[slot],
                    Knowledge::Partial => &self.visible[benign_seen % self.visible.len()],
                };
                out.push(v.clone());
                benign_seen += 1;
            }
        }
        out
    }

    /// Aggregate after every malicious agent submits `crafted`.
    pub fn probe(&self, crafted: &ParamVector) -> Result<ParamVector> {
        if self.malicious_slots.is_empty() {
            return self.pre_attack_aggregate();
        }
        (self.oracle)(&self.poisoned_set(std::slice::from_ref(crafted)))
    }
}

/// `AR{g_j : j in B}` as a stand-in for the aggregate over all agents.
pub fn partial_estimate(own: &[ParamVector], oracle: &Oracle<'_>) -> Result<ParamVector> {
    match own {
        [] => Err(FrlError::EmptyUpdates),
        [single] => Ok(single.clone()),
        _ => oracle(own).or_else(|e| {
            warn!("aggregator rejected the partial-knowledge estimate ({e}); using the mean");
            mean(own)
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub value: f64,
    /// A zero vector made the normalized objective undefined.
    pub degenerate: bool,
}

/// Normalized: distance between the unit vectors. Otherwise plain distance.
pub fn deviation_objective(before: &ParamVector, after: &ParamVector, normalized: bool) -> Deviation {
    if !normalized {
        return Deviation { value: before.distance(after), degenerate: false };
    }
    match (before.unit(), after.unit()) {
        (Some(b), Some(a)) => Deviation { value: b.distance(&a), degenerate: false },
        _ => Deviation { value: 0.0, degenerate: true },
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn perturbation_vector(kind: DeltaKind, visible: &[ParamVector]) -> Result<ParamVector> {
    let avg = mean(visible)?;
    Ok(match kind {
        DeltaKind::Sgn => ParamVector(avg.iter().map(|&x| -sign(x)).collect()),
        DeltaKind::Uv => match avg.unit() {
            Some(u) => u.scaled(-1.0),
            None => ParamVector(avg.iter().map(|&x| -sign(x)).collect()),
        },
        DeltaKind::Std => {
            let n = visible.len() as f64;
            let mut var = ParamVector::zeros(avg.dim());
            for v in visible {
                for ((acc, x), m) in var.iter_mut().zip(v.iter()).zip(avg.iter()) {
                    *acc += (x - m) * (x - m);
                }
            }
            ParamVector(var.iter().map(|s| -(s / n).sqrt()).collect())
        }
    })
}

pub fn random_noise<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ParamVector {
    let normal = Normal::new(0.0, RANDOM_NOISE_VARIANCE.sqrt()).expect("positive std");
    ParamVector((0..d).map(|_| normal.sample(rng)).collect())
}

/// Per dimension, push every malicious value one benign spread beyond the
/// extreme opposite to the sign of the visible mean.
pub fn trim_attack<R: Rng + ?Sized>(ctx: &AttackContext<'_>, count: usize, rng: &mut R) -> Result<Vec<ParamVector>> {
    let d = ctx.dim()?;
    let avg = mean(&ctx.visible)?;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for v in &ctx.visible {
        for k in 0..d {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let mut out = vec![ParamVector::zeros(d); count];
    for k in 0..d {
        let spread = hi[k] - lo[k];
        let (a, b) = match sign(avg[k]) {
            s if s > 0.0 => (lo[k] - spread, lo[k]),
            s if s < 0.0 => (hi[k], hi[k] + spread),
            _ => (avg[k], avg[k]),
        };
        for u in out.iter_mut() {
            u[k] = if b > a { rng.random_range(a..=b) } else { a };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crafted {
    pub update: ParamVector,
    pub search: SearchResult,
}

/// `Avg + gamma * delta` with `gamma` maximizing the unnormalized deviation.
pub fn shejwalkar_attack(ctx: &AttackContext<'_>, spec: &AttackSpec, delta: &ParamVector) -> Result<Crafted> {
    let avg = mean(&ctx.visible)?;
    let before = ctx.pre_attack_aggregate()?;
    let craft = |gamma: f64| {
        let mut g = avg.clone();
        g.axpy(gamma, delta);
        g
    };
    let search = coordinate_search(spec.search(spec.gamma0, spec.gamma0, 0.0), |gamma| {
        Ok(deviation_objective(&before, &ctx.probe(&craft(gamma))?, false).value)
    })?;
    Ok(Crafted { update: craft(search.best), search })
}

/// One update per malicious slot, for the model-poisoning attacks.
pub fn craft_updates<R: Rng + ?Sized>(
    spec: &AttackSpec,
    ctx: &AttackContext<'_>,
    rng: &mut R,
) -> Result<Vec<ParamVector>> {
    let count = ctx.malicious_slots.len();
    if count == 0 {
        return Ok(vec![]);
    }
    let d = ctx.dim()?;
    match spec.kind {
        AttackKind::RandomNoise => Ok((0..count).map(|_| random_noise(d, rng)).collect()),
        AttackKind::Trim => trim_attack(ctx, count, rng),
        AttackKind::Shejwalkar => {
            let delta = perturbation_vector(spec.delta, &ctx.visible)?;
            Ok(vec![shejwalkar_attack(ctx, spec, &delta)?.update; count])
        }
        AttackKind::Normalized => {
            let delta = perturbation_vector(spec.delta, &ctx.visible)?;
            Ok(vec![normalized_attack(ctx, spec, &delta)?.update; count])
        }
        AttackKind::None | AttackKind::RandomAction => Err(FrlError::Contract(format!(
            "attack `{}` does not craft updates",
            spec.kind
        ))),
    }
}
