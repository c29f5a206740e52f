//! Cosine-distance majority clustering, median-norm clipping and Gaussian
//! noise.
//!
//! Clustering is a single-linkage simplification of HDBSCAN: the smallest
//! cosine-distance radius at which one connected component holds a strict
//! majority of the updates defines the kept set.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FrlError, Result};
use crate::vector::{common_dim, ParamVector};

pub fn cosine_distance(a: &ParamVector, b: &ParamVector) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - a.dot(b) / (na * nb)
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return self.size[ra];
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.size[ra]
    }
}

/// Indices (ascending) of the first single-linkage component to reach
/// `floor(n/2) + 1` members as the radius grows, or `None` when none does.
pub fn majority_cluster(updates: &[ParamVector]) -> Option<Vec<usize>> {
    let n = updates.len();
    let need = n / 2 + 1;
    if n == 0 {
        return None;
    }
    if need <= 1 {
        return Some(vec![0]);
    }
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push((cosine_distance(&updates[i], &updates[j]), i, j));
        }
    }
    // Sorting the edges and merging in order is equivalent to searching for
    // the smallest qualifying radius.
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut ds = DisjointSet::new(n);
    let mut radius = None;
    for (dist, i, j) in edges {
        // Once a majority forms, edges tied with that radius still merge.
        if radius.is_some_and(|r: f64| dist > r + 1e-12) {
            break;
        }
        if ds.union(i, j) >= need && radius.is_none() {
            radius = Some(dist);
        }
    }
    radius?;
    let mut best: Option<Vec<usize>> = None;
    for root in 0..n {
        let members: Vec<usize> = (0..n).filter(|&k| ds.find(k) == root).collect();
        if members.len() >= need && best.as_ref().is_none_or(|b| members.len() > b.len()) {
            best = Some(members);
        }
    }
    best
}

pub fn flame<R: Rng + ?Sized>(updates: &[ParamVector], noise_lambda: f64, rng: &mut R) -> Result<ParamVector> {
    let d = common_dim(updates)?;
    if updates.len() < 3 {
        return Err(FrlError::Contract(format!("FLAME needs at least 3 updates, got {}", updates.len())));
    }
    let kept = majority_cluster(updates).unwrap_or_else(|| {
        warn!("FLAME found no majority cluster; keeping all updates");
        (0..updates.len()).collect()
    });

    let mut norms: Vec<f64> = updates.iter().map(|u| u.norm()).collect();
    norms.sort_by(f64::total_cmp);
    let n = norms.len();
    let clip = if n % 2 == 1 { norms[n / 2] } else { 0.5 * (norms[n / 2 - 1] + norms[n / 2]) };

    let mut out = ParamVector::zeros(d);
    for &i in &kept {
        let u = &updates[i];
        let norm = u.norm();
        let factor = if norm > clip && norm > 0.0 { clip / norm } else { 1.0 };
        out.axpy(factor, u);
    }
    let inv = 1.0 / kept.len() as f64;
    out.iter_mut().for_each(|x| *x *= inv);

    let std = noise_lambda * clip;
    if std > 0.0 {
        let normal = Normal::new(0.0, std).map_err(|e| FrlError::NumericFault(e.to_string()))?;
        out.iter_mut().for_each(|x| *x += normal.sample(rng));
    }
    Ok(out)
}
