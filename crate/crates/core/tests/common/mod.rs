//! Independent oracles shared by the acceptance run and the focused tests.
#![allow(dead_code)]

use frl_core::aggregators::geomed::{self, geometric_median};
use frl_core::attacks::{
    deviation_objective, normalized_stage1, normalized_stage2, shejwalkar_attack, AttackContext, AttackSpec,
    Knowledge, Oracle, Variant,
};
use frl_core::certify::{displacement_oracle_continuous, flip_oracle_discrete, tolerance, VoteProfile};
use frl_core::envs::{Action, ActionSpace};
use frl_core::policy::{Activation, ArchSpec, Mlp};
use frl_core::rng::{stream, StreamRng, Tag};
use frl_core::ParamVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(id: u64) -> StreamRng {
    stream(0xACCE, Tag::Oracle, id, 0)
}

pub fn normal_vec(d: usize, scale: f64, r: &mut StreamRng) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let e: f64 = StandardNormal.sample(r);
            scale * e
        })
        .collect()
}

// ---------------------------------------------------------------- gradients

pub fn discrete_space() -> ActionSpace {
    ActionSpace::Discrete { m: 2 }
}

pub fn continuous_space() -> ActionSpace {
    ActionSpace::Continuous { dim: 1, lo: -3.0, hi: 3.0 }
}

/// Largest element-wise relative error between `logprob_grad` and central
/// differences over `cases` random `(theta, s, a)`.
pub fn gradient_check(space: &ActionSpace, cases: usize, seed: u64) -> f64 {
    let mlp = Mlp::new(ArchSpec::for_action_space(4, space));
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    while accepted < cases {
        let mut theta = mlp.init_params(&mut r);
        for x in theta.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut r);
            *x += 0.3 * e;
        }
        let s = normal_vec(4, 1.0, &mut r);
        let a = match *space {
            ActionSpace::Discrete { m } => Action::Discrete(r.random_range(0..m)),
            ActionSpace::Continuous { dim, lo, hi } => Action::Continuous((0..dim).map(|_| r.random_range(lo..hi)).collect()),
        };
        // a ReLU unit this close to its kink may switch inside the stencil,
        // where the derivative is discontinuous; redraw
        if mlp.arch().activation == Activation::Relu {
            let mut ws = mlp.workspace();
            mlp.forward(&theta, &s, &mut ws).unwrap();
            let hidden = &ws.pre_activations()[..mlp.arch().hidden.len()];
            if hidden.iter().flatten().any(|z| z.abs() < 1e-2) {
                continue;
            }
        }
        accepted += 1;
        let g = mlp.logprob_grad(&theta, &s, &a).unwrap();
        // five-point central stencil: O(h^4) truncation, so h can be large
        // enough to keep round-off down; ReLU kinks need the smaller step
        let h = match mlp.arch().activation {
            Activation::Relu => 1e-4,
            Activation::Tanh => 1e-3,
        };
        let f = |i: usize, step: f64| {
            let mut t = theta.clone();
            t[i] += step;
            mlp.logprob(&t, &s, &a).unwrap()
        };
        for i in 0..theta.dim() {
            let fd = (f(i, -2.0 * h) - 8.0 * f(i, -h) + 8.0 * f(i, h) - f(i, 2.0 * h)) / (12.0 * h);
            let denom = g[i].abs().max(fd.abs());
            // both sides below round-off: nothing to compare
            if denom < 1e-7 {
                assert!((g[i] - fd).abs() < 1e-8, "param {i}: {} vs {fd}", g[i]);
                continue;
            }
            worst = worst.max((g[i] - fd).abs() / denom);
        }
    }
    worst
}

// ------------------------------------------------------------ geometric median

/// Minimum of the distance sum by a coarse-to-fine grid: a dense grid over
/// the bounding box, then repeated zooms around the best cell.
pub fn brute_force_geomedian(points: &[ParamVector]) -> (Vec<f64>, f64) {
    let d = points[0].dim();
    let mut lo: Vec<f64> = (0..d).map(|k| points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min)).collect();
    let mut hi: Vec<f64> = (0..d).map(|k| points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let per_axis: usize = match d {
        1 => 2001,
        2 => 201,
        _ => 41,
    };
    let mut best = (points[0].0.clone(), f64::INFINITY);
    for _zoom in 0..12 {
        let total = per_axis.pow(d as u32);
        let mut z = vec![0.0; d];
        for code in 0..total {
            let mut c = code;
            for k in 0..d {
                let i = c % per_axis;
                c /= per_axis;
                z[k] = lo[k] + (hi[k] - lo[k]) * i as f64 / (per_axis - 1) as f64;
            }
            let obj = geomed::objective(points, &z);
            if obj < best.1 {
                best = (z.clone(), obj);
            }
        }
        for k in 0..d {
            let cell = (hi[k] - lo[k]) / (per_axis - 1) as f64;
            lo[k] = best.0[k] - 2.0 * cell;
            hi[k] = best.0[k] + 2.0 * cell;
        }
    }
    best
}

/// Random point sets (2..=7 points, 1..=3 dims); returns the worst ratio of
/// the Weiszfeld objective to the brute-force objective.
pub fn geomedian_ratio_worst(sets: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..sets {
        let n = r.random_range(2..=7);
        let d = r.random_range(1..=3);
        let mut pts: Vec<ParamVector> = (0..n).map(|_| ParamVector(normal_vec(d, 2.0, &mut r))).collect();
        // occasionally stack points so a data point is the optimum
        if n >= 4 && r.random_bool(0.3) {
            for i in 1..n / 2 + 1 {
                pts[i] = pts[0].clone();
            }
        }
        let z = geometric_median(&pts, geomed::DEFAULT_EPS, geomed::DEFAULT_MAX_ITERS).unwrap();
        let (_, brute) = brute_force_geomedian(&pts);
        let ours = geomed::objective(&pts, &z);
        let ratio = if brute == 0.0 { if ours == 0.0 { 1.0 } else { f64::INFINITY } } else { ours / brute };
        worst = worst.max(ratio);
    }
    worst
}

pub fn fermat_case() -> Vec<f64> {
    let pts = [ParamVector(vec![0.0, 0.0]), ParamVector(vec![2.0, 0.0]), ParamVector(vec![1.0, 1.0])];
    geometric_median(&pts, geomed::DEFAULT_EPS, geomed::DEFAULT_MAX_ITERS).unwrap().0
}

// ---------------------------------------------------------------- certificates

/// Every composition of `k` votes over `m` actions.
pub fn profiles(k: usize, m: usize) -> Vec<Vec<usize>> {
    if m == 1 {
        return vec![vec![k]];
    }
    (0..=k)
        .flat_map(|first| {
            profiles(k - first, m - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

/// Checks the discrete certificate against exhaustive reassignment for
/// K in 1..=7 and 2..=4 actions. Returns (profiles checked, failures).
pub fn theorem1_exhaustive() -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut failures = vec![];
    for k in 1..=7 {
        for m in 2..=4 {
            for counts in profiles(k, m) {
                let p = VoteProfile::new(counts.clone()).unwrap();
                let t = tolerance(&p);
                checked += 1;
                if !flip_oracle_discrete(&p, t).unwrap().holds {
                    failures.push(format!("{counts:?}: flipped within n' = {t}"));
                }
                // moving n'+1 votes from the winner to the runner-up always
                // breaks the margin the bound relies on
                if t < p.counts[p.top()] && flip_oracle_discrete(&p, t + 1).unwrap().holds {
                    failures.push(format!("{counts:?}: n' = {t} is not tight"));
                }
            }
        }
    }
    (checked, failures)
}

/// `trials` corruption trials spread over K in {3, 5, 7}, every n' < K/2 and
/// dims 1..=4. Returns (largest displacement / bound, violations).
pub fn theorem2_trials(trials: usize, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let mut cases = vec![];
    for k in [3usize, 5, 7] {
        for n_prime in 0..k.div_ceil(2) {
            for d in 1..=4 {
                cases.push((k, n_prime, d));
            }
        }
    }
    let sets_per_case = 4;
    let per_set = trials.div_ceil(cases.len() * sets_per_case);
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for &(k, n_prime, d) in &cases {
        for _ in 0..sets_per_case {
            let pts: Vec<ParamVector> = (0..k).map(|_| ParamVector(normal_vec(d, 1.0, &mut r))).collect();
            let (moved, w) = displacement_oracle_continuous(&pts, n_prime, per_set, &mut r).unwrap();
            let bound = frl_core::certify::bound_continuous(k, n_prime, w).unwrap();
            if moved > bound + 1e-6 {
                violations += 1;
            }
            if bound > 0.0 {
                worst = worst.max(moved / bound);
            }
        }
    }
    (worst, violations)
}

// ---------------------------------------------------------------- attacks

pub fn pv(v: &[f64]) -> ParamVector {
    ParamVector(v.to_vec())
}

pub fn fedavg_oracle() -> Box<Oracle<'static>> {
    Box::new(|u: &[ParamVector]| frl_core::aggregators::fedavg(u))
}

pub fn median_oracle() -> Box<Oracle<'static>> {
    Box::new(|u: &[ParamVector]| frl_core::aggregators::coord_median(u))
}

pub fn toy_context<'a>(visible: Vec<ParamVector>, malicious: Vec<usize>, oracle: &'a Oracle<'a>) -> AttackContext<'a> {
    AttackContext { n_total: visible.len(), visible, malicious_slots: malicious, knowledge: Knowledge::Full, oracle }
}

/// FedAvg, n = 4, one malicious agent, 2-D updates.
pub fn toy_updates() -> Vec<ParamVector> {
    vec![pv(&[1.0, 0.5]), pv(&[0.8, 0.9]), pv(&[1.2, 0.7]), pv(&[0.9, 0.6])]
}

fn grid(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / step).round() as i64;
    (0..=n).map(move |i| lo + i as f64 * step)
}

pub struct AttackIdentities {
    pub same_aggregate: f64,
    pub antipodal: f64,
    pub no_malicious: f64,
    /// (returned objective, objective at the baseline parameter, grid max)
    pub stage1: (f64, f64, f64),
    pub stage2: (f64, f64, f64),
    pub shejwalkar: (f64, f64, f64),
}

pub fn attack_identities() -> AttackIdentities {
    let u = pv(&[0.3, -1.1, 2.0]);
    let same_aggregate = deviation_objective(&u, &u, true).value.max(deviation_objective(&u, &u, false).value);
    let antipodal = deviation_objective(&u, &u.scaled(-1.0), true).value;

    let fed = fedavg_oracle();
    let spec = AttackSpec { variant: Variant::IV, ..AttackSpec::default() };
    let delta = pv(&[-1.0, -1.0]);

    let nobody = toy_context(toy_updates(), vec![], &*fed);
    let before = nobody.pre_attack_aggregate().unwrap();
    let no_malicious = deviation_objective(&before, &nobody.probe(&pv(&[9.0, -9.0])).unwrap(), true).value;

    // stage 1 against FedAvg; λ grid over [-10, 10]
    let ctx = toy_context(toy_updates(), vec![3], &*fed);
    let before = ctx.pre_attack_aggregate().unwrap();
    let base = before.unit().unwrap();
    let obj_lambda = |l: f64| {
        let mut g = base.clone();
        g.axpy(l, &delta);
        deviation_objective(&before, &ctx.probe(&g).unwrap(), true).value
    };
    let s1 = normalized_stage1(&ctx, &spec, &delta, true).unwrap();
    let stage1 = (s1.search.objective, obj_lambda(0.0), grid(-10.0, 10.0, 0.01).map(obj_lambda).fold(0.0, f64::max));

    // stage 2 against the coordinate median, 1-D: benign {1, 2, 3}, one
    // malicious slot, unnormalized objective; grid over the reachable ζ range
    let med = median_oracle();
    let ctx1 = toy_context(vec![pv(&[1.0]), pv(&[2.0]), pv(&[3.0]), pv(&[2.5])], vec![3], &*med);
    let before1 = ctx1.pre_attack_aggregate().unwrap();
    let obj_zeta = |z: f64| deviation_objective(&before1, &ctx1.probe(&pv(&[z])).unwrap(), false).value;
    let s3 = AttackSpec { variant: Variant::III, ..spec.clone() };
    let (start, step) = (1.0, s3.zeta0);
    let reach = step * 1.5;
    let s2 = normalized_stage2(&ctx1, &s3, &pv(&[1.0]), start, step, false).unwrap();
    let stage2 = (s2.search.objective, obj_zeta(1.0), grid(start - reach, start + reach, 1e-4).map(obj_zeta).fold(0.0, f64::max));

    // Shejwalkar against FedAvg: the deviation grows with |γ|, so the best
    // reachable γ is at the edge of the decaying-step range
    let obj_gamma = |g: f64| {
        let mut v = frl_core::vector::mean(&ctx.visible).unwrap();
        v.axpy(g, &delta);
        deviation_objective(&before, &ctx.probe(&v).unwrap(), false).value
    };
    let sh = shejwalkar_attack(&ctx, &spec, &delta).unwrap();
    let reach = spec.gamma0 * 1.5;
    let shejwalkar = (
        sh.search.objective,
        obj_gamma(0.0),
        grid(spec.gamma0 - reach, spec.gamma0 + reach, 1e-4).map(obj_gamma).fold(0.0, f64::max),
    );

    AttackIdentities { same_aggregate, antipodal, no_malicious, stage1, stage2, shejwalkar }
}
