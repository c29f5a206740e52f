//! One-dimensional hill climb with a shrinking step, shared by the
//! direction, magnitude and Shejwalkar searches.

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: f64,
    pub objective: f64,
    /// Every `(parameter, objective)` evaluated, in order, baseline first.
    pub probes: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub start: f64,
    pub step: f64,
    /// Reference point: the first "did it increase" comparison is made
    /// against it, and it is returned if nothing probed beats it.
    pub baseline: f64,
    pub decay: f64,
    pub tol: f64,
    pub max_iters: usize,
}

/// Starting from `start`, move by `+step` after an objective increase and
/// by `-step` otherwise, shrinking the step by `decay` each iteration until
/// it drops below `tol` or `max_iters` probes are spent. Returns the best
/// point seen (earliest on ties), not the last iterate.
pub fn coordinate_search<F>(p: SearchParams, mut objective: F) -> Result<SearchResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let base_obj = objective(p.baseline)?;
    let mut probes = vec![(p.baseline, base_obj)];
    let mut prev = base_obj;
    let mut x = p.start;
    let mut step = p.step;
    let mut best: Option<(f64, f64)> = None;

    for _ in 0..p.max_iters {
        let obj = objective(x)?;
        probes.push((x, obj));
        if best.is_none_or(|(_, b)| obj > b) {
            best = Some((x, obj));
        }
        x += if obj > prev { step } else { -step };
        prev = obj;
        step *= p.decay;
        if step < p.tol {
            break;
        }
    }

    let (mut bx, mut bo) = best.unwrap_or((p.baseline, base_obj));
    if base_obj > bo {
        (bx, bo) = (p.baseline, base_obj);
    }
    Ok(SearchResult { best: bx, objective: bo, probes })
}
