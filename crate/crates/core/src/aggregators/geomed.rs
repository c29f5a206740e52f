//! Geometric median by Weiszfeld iteration, with the Vardi-Zhang correction
//! when an iterate sits on a data point.

use crate::error::Result;
use crate::vector::{common_dim, mean, ParamVector};

pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 500;

/// Sum of Euclidean distances from `z` to every point.
pub fn objective(points: &[ParamVector], z: &[f64]) -> f64 {
    points
        .iter()
        .map(|p| p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .sum()
}

/// Weiszfeld iteration started from the coordinate-wise mean. Stops when an
/// iterate moves less than `eps` or after `max_iters` steps. An iterate
/// within `eps / 10` of a data point triggers the subgradient optimality
/// test for that point, as does the nearest point at termination.
pub fn geometric_median(points: &[ParamVector], eps: f64, max_iters: usize) -> Result<ParamVector> {
    let d = common_dim(points)?;
    if points.len() == 1 {
        return Ok(points[0].clone());
    }
    let mut y = mean(points)?;
    let mut dists = vec![0.0; points.len()];
    let mut next = ParamVector::zeros(d);
    let mut pull = ParamVector::zeros(d);

    for _ in 0..max_iters {
        for (di, p) in dists.iter_mut().zip(points) {
            *di = p.distance(&y);
        }
        let (nearest, near_dist) = dists
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &di)| if di < acc.1 { (i, di) } else { acc });
        if near_dist < eps / 10.0 {
            if is_optimal_point(points, nearest) {
                return Ok(points[nearest].clone());
            }
            // Not optimal: continue from the data point itself.
            y = points[nearest].clone();
            for (di, p) in dists.iter_mut().zip(points) {
                *di = p.distance(&y);
            }
        }

        // Vardi-Zhang step: points coinciding with y are left out of the
        // weights and blended back through `coincident / |R|`.
        next.iter_mut().for_each(|x| *x = 0.0);
        pull.iter_mut().for_each(|x| *x = 0.0);
        let mut weight = 0.0;
        let mut coincident = 0usize;
        for (p, &di) in points.iter().zip(&dists) {
            if di == 0.0 {
                coincident += 1;
                continue;
            }
            let w = 1.0 / di;
            weight += w;
            next.axpy(w, p);
            for ((r, pk), yk) in pull.iter_mut().zip(p.iter()).zip(y.iter()) {
                *r += (pk - yk) * w;
            }
        }
        if weight == 0.0 {
            return Ok(y);
        }
        next.iter_mut().for_each(|x| *x /= weight);
        if coincident > 0 {
            let r = pull.norm();
            let ratio = if r > 0.0 { coincident as f64 / r } else { 1.0 };
            let keep = ratio.min(1.0);
            let go = (1.0 - ratio).max(0.0);
            for (nk, yk) in next.iter_mut().zip(y.iter()) {
                *nk = go * *nk + keep * yk;
            }
        }
        let moved = next.distance(&y);
        std::mem::swap(&mut y, &mut next);
        if moved < eps {
            break;
        }
    }
    // Weiszfeld approaches an optimal data point only sublinearly; snap to
    // the nearest point when it passes the optimality test.
    let nearest = (0..points.len())
        .min_by(|&a, &b| points[a].distance(&y).total_cmp(&points[b].distance(&y)))
        .unwrap_or(0);
    if is_optimal_point(points, nearest) && objective(points, &points[nearest]) < objective(points, &y) {
        return Ok(points[nearest].clone());
    }
    Ok(y)
}

/// A data point `p_k` minimises the distance sum iff the unit pulls of the
/// other points sum to a vector no longer than the multiplicity of `p_k`.
pub fn is_optimal_point(points: &[ParamVector], k: usize) -> bool {
    let pk = &points[k];
    let mut pull = ParamVector::zeros(pk.dim());
    let mut multiplicity = 0usize;
    for p in points {
        let dist = p.distance(pk);
        if dist == 0.0 {
            multiplicity += 1;
        } else {
            pull.axpy(1.0 / dist, &p.sub(pk));
        }
    }
    pull.norm() <= multiplicity as f64
}
