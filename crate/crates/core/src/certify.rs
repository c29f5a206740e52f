//! Certified robustness of the ensemble: how many corrupted groups a
//! discrete vote tolerates, and how far a corrupted geometric median of
//! continuous actions can move.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregators::geomed::geometric_median;
use crate::ensemble::vote_discrete;
use crate::error::{FrlError, Result};
use crate::vector::ParamVector;

/// Weiszfeld settings used when certifying; tighter than training.
pub const CERT_GM_EPS: f64 = 1e-10;
pub const CERT_GM_ITERS: usize = 10_000;

/// Vote counts per action, in action-index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteProfile {
    pub counts: Vec<usize>,
}

impl VoteProfile {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(FrlError::InvalidConfig("a vote profile needs at least 2 actions".into()));
        }
        Ok(Self { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Winner (most votes, ties to the smaller index).
    pub fn top(&self) -> usize {
        let mut best = 0;
        for (a, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = a;
            }
        }
        best
    }

    /// Runner-up among the remaining actions, ties to the smaller index.
    pub fn second(&self) -> usize {
        let x = self.top();
        let mut best: Option<usize> = None;
        for (a, &c) in self.counts.iter().enumerate() {
            if a != x && best.is_none_or(|b| c > self.counts[b]) {
                best = Some(a);
            }
        }
        best.expect("at least two actions")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertifiedBound {
    DiscreteTolerance {
        n_prime: usize,
        /// False when the expression is negative (reported as 0).
        certified: bool,
        k: usize,
        top: usize,
        runner_up: usize,
        counts: Vec<usize>,
    },
    ContinuousDisplacement { bound: f64, k: usize, n_prime: usize, w: f64 },
}

/// `floor((v(x) - v(y) - [y < x]) / 2)` for winner `x` and runner-up `y`.
pub fn tolerance_discrete(profile: &VoteProfile) -> CertifiedBound {
    let (x, y) = (profile.top(), profile.second());
    let raw = profile.counts[x] as i64 - profile.counts[y] as i64 - i64::from(y < x);
    CertifiedBound::DiscreteTolerance {
        n_prime: if raw < 0 { 0 } else { (raw / 2) as usize },
        certified: raw >= 0,
        k: profile.k(),
        top: x,
        runner_up: y,
        counts: profile.counts.clone(),
    }
}

/// The tolerance as a plain count.
pub fn tolerance(profile: &VoteProfile) -> usize {
    match tolerance_discrete(profile) {
        CertifiedBound::DiscreteTolerance { n_prime, .. } => n_prime,
        CertifiedBound::ContinuousDisplacement { .. } => unreachable!(),
    }
}

/// `2 w (K - n') / (K - 2 n')`.
pub fn bound_continuous(k: usize, n_prime: usize, w: f64) -> Result<f64> {
    if 2 * n_prime >= k {
        return Err(FrlError::InvalidConfig(format!("n' = {n_prime} must be below K/2 = {}", k as f64 / 2.0)));
    }
    if !(w >= 0.0 && w.is_finite()) {
        return Err(FrlError::InvalidConfig(format!("w must be finite and >= 0, got {w}")));
    }
    Ok(2.0 * w * (k - n_prime) as f64 / (k - 2 * n_prime) as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipOutcome {
    /// Winner under the worst corruption found (a flipped winner if any).
    pub worst_winner: usize,
    pub holds: bool,
}

/// Tries every way of re-casting up to `n_prime` of the K votes to any
/// action and reports whether the plain winner survives all of them.
pub fn flip_oracle_discrete(profile: &VoteProfile, n_prime: usize) -> Result<FlipOutcome> {
    let k = profile.k();
    if k > 9 {
        return Err(FrlError::InvalidConfig(format!("flip oracle is exhaustive; K = {k} > 9")));
    }
    let m = profile.counts.len();
    let votes: Vec<usize> = profile.counts.iter().enumerate().flat_map(|(a, &c)| std::iter::repeat_n(a, c)).collect();
    let x = vote_discrete(&votes);
    let mut outcome = FlipOutcome { worst_winner: x, holds: true };
    // every subset of voters to corrupt, then every reassignment of it
    for mask in 0u32..(1 << k) {
        let chosen: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        if chosen.len() > n_prime {
            continue;
        }
        let combos = m.pow(chosen.len() as u32);
        let mut v = votes.clone();
        for code in 0..combos {
            let mut c = code;
            for &i in &chosen {
                v[i] = c % m;
                c /= m;
            }
            let w = vote_winner(&v, m);
            if w != x {
                return Ok(FlipOutcome { worst_winner: w, holds: false });
            }
        }
        outcome.worst_winner = x;
    }
    Ok(outcome)
}

fn vote_winner(v: &[usize], m: usize) -> usize {
    let mut counts = vec![0usize; m];
    for &a in v {
        counts[a] += 1;
    }
    let mut best = 0;
    for a in 1..m {
        if counts[a] > counts[best] {
            best = a;
        }
    }
    best
}

/// Largest distance from a member action to the geometric median.
pub fn spread(points: &[ParamVector], center: &ParamVector) -> f64 {
    points.iter().map(|p| p.distance(center)).fold(0.0, f64::max)
}

/// Over `trials` random corruptions, replaces `n_prime` points (a random
/// choice of which) with points in random directions at distances up to
/// `1e3 * w` from the clean median, and returns the largest displacement of
/// the geometric median together with `w`.
pub fn displacement_oracle_continuous<R: Rng + ?Sized>(
    points: &[ParamVector],
    n_prime: usize,
    trials: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let k = points.len();
    if 2 * n_prime >= k {
        return Err(FrlError::InvalidConfig(format!("n' = {n_prime} must be below K/2")));
    }
    let clean = geometric_median(points, CERT_GM_EPS, CERT_GM_ITERS)?;
    let w = spread(points, &clean);
    let d = clean.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut corrupted = points.to_vec();
        let mut idx: Vec<usize> = (0..k).collect();
        for i in 0..n_prime {
            let j = rng.random_range(i..k);
            idx.swap(i, j);
        }
        for &i in &idx[..n_prime] {
            let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let dir = ParamVector(dir).unit().unwrap_or_else(|| ParamVector::filled(d, 0.0));
            let mag = rng.random_range(0.0..=1e3) * w;
            corrupted[i] = clean.add(&dir.scaled(mag));
        }
        let moved = geometric_median(&corrupted, CERT_GM_EPS, CERT_GM_ITERS)?.distance(&clean);
        worst = worst.max(moved);
    }
    Ok((worst, w))
}
