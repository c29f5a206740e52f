//! MLP policies over flat parameter vectors with hand-derived gradients of
//! the action log-probability.
//!
//! Parameter layout, layer by layer: weights (row-major, `out x in`) then
//! biases; a Gaussian head appends one log-std entry per action dimension.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{Action, ActionSpace};
use crate::error::{FrlError, Result};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activated value `a` and input `z`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Categorical { m: usize },
    Gaussian { dim: usize, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    /// Skip the tanh on categorical logits.
    #[serde(default)]
    pub raw_logits: bool,
}

impl ArchSpec {
    /// 16-16 ReLU for discrete control, 64-64 tanh for continuous control.
    pub fn for_action_space(input_dim: usize, space: &ActionSpace) -> Self {
        match *space {
            ActionSpace::Discrete { m } => Self {
                input_dim,
                hidden: vec![16, 16],
                activation: Activation::Relu,
                head: Head::Categorical { m },
                raw_logits: false,
            },
            ActionSpace::Continuous { dim, lo, hi } => Self {
                input_dim,
                hidden: vec![64, 64],
                activation: Activation::Tanh,
                head: Head::Gaussian { dim, lo, hi },
                raw_logits: false,
            },
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Categorical { m } => m,
            Head::Gaussian { dim, .. } => dim,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden);
        w.push(self.output_dim());
        w
    }

    pub fn param_count(&self) -> usize {
        let layers: usize = self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        match self.head {
            Head::Categorical { .. } => layers,
            Head::Gaussian { dim, .. } => layers + dim,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self.head {
            Head::Categorical { m } => ActionSpace::Discrete { m },
            Head::Gaussian { dim, lo, hi } => ActionSpace::Continuous { dim, lo, hi },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionDistribution {
    Categorical(Vec<f64>),
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: usize,
}

/// Scratch space for one forward pass; reused across steps.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    /// Pre-activations per layer.
    z: Vec<Vec<f64>>,
    /// `a[0]` is the input; `a[l + 1]` the activated output of layer `l`.
    a: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    head_grad: Vec<f64>,
}

impl Workspace {
    /// Pre-activations of every layer from the last forward pass.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.z
    }
}

/// A compiled view of an [`ArchSpec`] with precomputed parameter offsets.
#[derive(Debug, Clone)]
pub struct Mlp {
    arch: ArchSpec,
    layers: Vec<Layer>,
    log_std_off: usize,
    d: usize,
}

impl Mlp {
    pub fn new(arch: ArchSpec) -> Self {
        let mut layers = vec![];
        let mut off = 0;
        for p in arch.widths().windows(2) {
            let (fan_in, fan_out) = (p[0], p[1]);
            layers.push(Layer { fan_in, fan_out, w_off: off, b_off: off + fan_in * fan_out });
            off += fan_in * fan_out + fan_out;
        }
        let d = arch.param_count();
        Self { arch, layers, log_std_off: off, d }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn workspace(&self) -> Workspace {
        let mut ws = Workspace::default();
        ws.a.push(vec![0.0; self.arch.input_dim]);
        for l in &self.layers {
            ws.z.push(vec![0.0; l.fan_out]);
            ws.a.push(vec![0.0; l.fan_out]);
        }
        ws.head_grad = vec![0.0; self.arch.output_dim()];
        ws
    }

    /// Glorot-uniform weights, zero biases, zero log-std.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut theta = ParamVector::zeros(self.d);
        for l in &self.layers {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for w in &mut theta[l.w_off..l.b_off] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        theta
    }

    fn check(&self, theta: &[f64], s: &[f64]) -> Result<()> {
        if theta.len() != self.d {
            return Err(FrlError::DimensionMismatch { expected: self.d, got: theta.len() });
        }
        if s.len() != self.arch.input_dim {
            return Err(FrlError::DimensionMismatch { expected: self.arch.input_dim, got: s.len() });
        }
        Ok(())
    }

    /// Runs the network; the head output (post output-activation) ends up in
    /// the last entry of `ws.a`.
    pub fn forward(&self, theta: &[f64], s: &[f64], ws: &mut Workspace) -> Result<()> {
        self.check(theta, s)?;
        if ws.a.len() != self.layers.len() + 1 {
            *ws = self.workspace();
        }
        ws.a[0].copy_from_slice(s);
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let (prev, rest) = ws.a.split_at_mut(li + 1);
            let input = &prev[li];
            let z = &mut ws.z[li];
            let out = &mut rest[0];
            let w = &theta[l.w_off..l.b_off];
            let b = &theta[l.b_off..l.b_off + l.fan_out];
            for j in 0..l.fan_out {
                let row = &w[j * l.fan_in..(j + 1) * l.fan_in];
                let mut acc = b[j];
                for (wi, xi) in row.iter().zip(input.iter()) {
                    acc += wi * xi;
                }
                z[j] = acc;
                out[j] = if li == last {
                    if self.output_is_raw() {
                        acc
                    } else {
                        acc.tanh()
                    }
                } else {
                    self.arch.activation.apply(acc)
                };
            }
        }
        let out = &ws.a[self.layers.len()];
        if out.iter().any(|v| !v.is_finite()) {
            return Err(FrlError::NumericFault("non-finite network output".into()));
        }
        Ok(())
    }

    fn output_is_raw(&self) -> bool {
        self.arch.raw_logits && matches!(self.arch.head, Head::Categorical { .. })
    }

    fn output<'w>(&self, ws: &'w Workspace) -> &'w [f64] {
        &ws.a[self.layers.len()]
    }

    /// Distribution implied by the last forward pass.
    pub fn distribution_from(&self, theta: &[f64], ws: &Workspace) -> ActionDistribution {
        let out = self.output(ws);
        match self.arch.head {
            Head::Categorical { .. } => ActionDistribution::Categorical(softmax(out)),
            Head::Gaussian { dim, lo, hi } => {
                let (mid, half) = ((hi + lo) / 2.0, (hi - lo) / 2.0);
                let mean = out.iter().map(|o| mid + half * o).collect();
                let std = theta[self.log_std_off..self.log_std_off + dim].iter().map(|l| l.exp()).collect();
                ActionDistribution::Gaussian { mean, std }
            }
        }
    }

    pub fn action_distribution(&self, theta: &[f64], s: &[f64]) -> Result<ActionDistribution> {
        let mut ws = self.workspace();
        self.forward(theta, s, &mut ws)?;
        Ok(self.distribution_from(theta, &ws))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, theta: &[f64], s: &[f64], rng: &mut R) -> Result<Action> {
        let mut ws = self.workspace();
        self.forward(theta, s, &mut ws)?;
        Ok(self.sample_from(&self.distribution_from(theta, &ws), rng))
    }

    pub fn sample_from<R: Rng + ?Sized>(&self, dist: &ActionDistribution, rng: &mut R) -> Action {
        match dist {
            ActionDistribution::Categorical(p) => Action::Discrete(sample_categorical(p, rng)),
            ActionDistribution::Gaussian { mean, std } => {
                let mut a: Vec<f64> = mean
                    .iter()
                    .zip(std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + s * z
                    })
                    .collect();
                self.arch.action_space().clamp(&mut a);
                Action::Continuous(a)
            }
        }
    }

    /// Deterministic test-time action: argmax (ties to the smaller index) or
    /// the clamped mean.
    pub fn greedy_action(&self, theta: &[f64], s: &[f64]) -> Result<Action> {
        Ok(greedy_from(&self.action_distribution(theta, s)?, &self.arch.action_space()))
    }

    pub fn logprob(&self, theta: &[f64], s: &[f64], a: &Action) -> Result<f64> {
        let dist = self.action_distribution(theta, s)?;
        match (dist, a) {
            (ActionDistribution::Categorical(p), Action::Discrete(i)) if *i < p.len() => Ok(p[*i].ln()),
            (ActionDistribution::Gaussian { mean, std }, Action::Continuous(v)) if v.len() == mean.len() => {
                Ok(mean
                    .iter()
                    .zip(&std)
                    .zip(v)
                    .map(|((m, s), x)| {
                        -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                    })
                    .sum())
            }
            _ => Err(FrlError::Contract(format!("action {a:?} does not match the policy head"))),
        }
    }

    pub fn logprob_grad(&self, theta: &[f64], s: &[f64], a: &Action) -> Result<ParamVector> {
        let mut ws = self.workspace();
        self.forward(theta, s, &mut ws)?;
        let mut g = ParamVector::zeros(self.d);
        self.accumulate_logprob_grad(theta, &mut ws, a, 1.0, &mut g)?;
        if !g.is_finite() {
            return Err(FrlError::NumericFault("non-finite log-prob gradient".into()));
        }
        Ok(g)
    }

    /// `grad += scale * d log pi(a|s) / d theta`, using the activations left in
    /// `ws` by the preceding [`Mlp::forward`] call.
    pub fn accumulate_logprob_grad(
        &self,
        theta: &[f64],
        ws: &mut Workspace,
        a: &Action,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let n_layers = self.layers.len();
        let out_dim = self.arch.output_dim();
        ws.head_grad.resize(out_dim, 0.0);
        // d log pi / d (head output), then through the output tanh.
        match (&self.arch.head, a) {
            (Head::Categorical { m }, Action::Discrete(i)) if i < m => {
                let p = softmax(&ws.a[n_layers]);
                for (j, (g, pj)) in ws.head_grad.iter_mut().zip(&p).enumerate() {
                    let onehot = if j == *i { 1.0 } else { 0.0 };
                    *g = onehot - pj;
                }
            }
            (Head::Gaussian { dim, lo, hi }, Action::Continuous(v)) if v.len() == *dim => {
                let half = (hi - lo) / 2.0;
                let mid = (hi + lo) / 2.0;
                for j in 0..out_dim {
                    let log_std = theta[self.log_std_off + j];
                    let var = (2.0 * log_std).exp();
                    let mean = mid + half * ws.a[n_layers][j];
                    let diff = v[j] - mean;
                    ws.head_grad[j] = diff / var * half;
                    grad[self.log_std_off + j] += scale * (diff * diff / var - 1.0);
                }
            }
            _ => return Err(FrlError::Contract(format!("action {a:?} does not match the policy head"))),
        }

        ws.delta.clear();
        let raw = self.output_is_raw();
        for j in 0..out_dim {
            let o = ws.a[n_layers][j];
            let d = if raw { 1.0 } else { 1.0 - o * o };
            ws.delta.push(ws.head_grad[j] * d);
        }

        for li in (0..n_layers).rev() {
            let l = self.layers[li];
            let input = &ws.a[li];
            for j in 0..l.fan_out {
                let dj = scale * ws.delta[j];
                if dj != 0.0 {
                    let row = &mut grad[l.w_off + j * l.fan_in..l.w_off + (j + 1) * l.fan_in];
                    for (g, x) in row.iter_mut().zip(input.iter()) {
                        *g += dj * x;
                    }
                }
                grad[l.b_off + j] += dj;
            }
            if li == 0 {
                break;
            }
            ws.delta_prev.clear();
            ws.delta_prev.resize(l.fan_in, 0.0);
            let w = &theta[l.w_off..l.b_off];
            for j in 0..l.fan_out {
                let dj = ws.delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = &w[j * l.fan_in..(j + 1) * l.fan_in];
                for (acc, wij) in ws.delta_prev.iter_mut().zip(row) {
                    *acc += dj * wij;
                }
            }
            let (z, a) = (&ws.z[li - 1], &ws.a[li]);
            for k in 0..l.fan_in {
                ws.delta_prev[k] *= self.arch.activation.derivative(z[k], a[k]);
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cdf = 0.0;
    for (i, pi) in p.iter().enumerate() {
        cdf += pi;
        if u < cdf {
            return i;
        }
    }
    // Rounding left u above the final cdf; take the last action with mass.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

pub fn greedy_from(dist: &ActionDistribution, space: &ActionSpace) -> Action {
    match dist {
        ActionDistribution::Categorical(p) => {
            let mut best = 0;
            for (i, &pi) in p.iter().enumerate() {
                if pi > p[best] {
                    best = i;
                }
            }
            Action::Discrete(best)
        }
        ActionDistribution::Gaussian { mean, .. } => {
            let mut a = mean.clone();
            space.clamp(&mut a);
            Action::Continuous(a)
        }
    }
}

/// Checkpoint layout: `d` as u64 LE, `d` f64 LE values, then the arch record
/// as a u64 LE byte length followed by its JSON encoding.
pub fn write_checkpoint(path: &Path, arch: &ArchSpec, theta: &ParamVector) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * theta.dim());
    buf.extend_from_slice(&(theta.dim() as u64).to_le_bytes());
    for v in theta.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let desc = serde_json::to_vec(arch).map_err(|e| FrlError::Checkpoint(e.to_string()))?;
    buf.extend_from_slice(&(desc.len() as u64).to_le_bytes());
    buf.extend_from_slice(&desc);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(ArchSpec, ParamVector)> {
    let mut buf = vec![];
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = buf.get(pos..pos + n).ok_or_else(|| FrlError::Checkpoint("truncated file".into()))?;
        pos += n;
        Ok(s)
    };
    let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let d = u64_at(take(8)?) as usize;
    let mut values = Vec::with_capacity(d);
    for _ in 0..d {
        values.push(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
    }
    let len = u64_at(take(8)?) as usize;
    let arch: ArchSpec = serde_json::from_slice(take(len)?).map_err(|e| FrlError::Checkpoint(e.to_string()))?;
    if arch.param_count() != d {
        return Err(FrlError::Checkpoint(format!(
            "arch expects {} parameters, file holds {d}",
            arch.param_count()
        )));
    }
    Ok((arch, ParamVector(values)))
}
