//! Fully-connected network with optional batch normalization on each hidden
//! layer and a softmax cross-entropy head.
//!
//! Parameter layout (block-major, fixed):
//!
//! 1. BN blocks: for every batch-normalized hidden layer in order, one block
//!    per unit holding that unit's incoming weights (`fan_in` values).
//! 2. Tail blocks, for every hidden layer in order: `gamma` then `beta` for a
//!    BN layer, or the row-major weight matrix then the bias for a plain one.
//! 3. The output layer's row-major weight matrix, then its bias.
//!
//! BN layers carry no bias: it cancels against the batch mean.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Batch, LossOracle};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Widths from input to output, e.g. `[2, 64, 64, 2]`.
    pub layers: Vec<usize>,
    /// One flag per hidden layer.
    pub bn: Vec<bool>,
    #[serde(default)]
    pub activation: Activation,
    /// Variance floor inside BN denominators.
    pub eps: f64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::Config(
                "network needs at least an input and an output width".into(),
            ));
        }
        if let Some(i) = self.layers.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("layer {i} has zero width")));
        }
        if self.layers[self.layers.len() - 1] < 2 {
            return Err(Error::Config("output layer needs at least 2 classes".into()));
        }
        if self.bn.len() != self.layers.len() - 2 {
            return Err(Error::Config(format!(
                "bn needs one flag per hidden layer ({}), got {}",
                self.layers.len() - 2,
                self.bn.len()
            )));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::Config(format!("eps must be >= 0, got {}", self.eps)));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0]
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1]
    }
}

#[derive(Debug, Clone, Copy)]
enum HiddenSlots {
    Bn {
        first_row: usize,
        gamma: usize,
        beta: usize,
    },
    Plain {
        weight: usize,
        bias: usize,
    },
}

#[derive(Debug, Clone)]
struct Layout {
    hidden: Vec<HiddenSlots>,
    out_weight: usize,
    out_bias: usize,
    dims: Vec<usize>,
    n1: usize,
}

impl Layout {
    fn new(spec: &NetworkSpec) -> Self {
        let n_hidden = spec.layers.len() - 2;
        let mut dims = Vec::new();
        let mut first_rows = vec![0; n_hidden];
        for l in 0..n_hidden {
            if spec.bn[l] {
                first_rows[l] = dims.len();
                dims.extend(std::iter::repeat_n(spec.layers[l], spec.layers[l + 1]));
            }
        }
        let n1 = dims.len();
        let mut hidden = Vec::with_capacity(n_hidden);
        for l in 0..n_hidden {
            let (fan_in, width) = (spec.layers[l], spec.layers[l + 1]);
            let base = dims.len();
            if spec.bn[l] {
                dims.push(width);
                dims.push(width);
                hidden.push(HiddenSlots::Bn {
                    first_row: first_rows[l],
                    gamma: base,
                    beta: base + 1,
                });
            } else {
                dims.push(width * fan_in);
                dims.push(width);
                hidden.push(HiddenSlots::Plain {
                    weight: base,
                    bias: base + 1,
                });
            }
        }
        let last = spec.layers.len() - 1;
        let out_weight = dims.len();
        dims.push(spec.layers[last] * spec.layers[last - 1]);
        dims.push(spec.layers[last]);
        Self {
            hidden,
            out_weight,
            out_bias: out_weight + 1,
            dims,
            n1,
        }
    }
}

/// Per-layer running mean and (biased) variance of BN pre-activations,
/// used only for evaluation-mode predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub momentum: f64,
    /// One entry per hidden layer; `None` for layers without BN.
    pub layers: Vec<Option<LayerStats>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// `stats <- (1 - momentum) * stats + momentum * batch`.
    pub fn update(&mut self, batch: &[Option<LayerStats>]) {
        let m = self.momentum;
        for (run, cur) in self.layers.iter_mut().zip(batch) {
            if let (Some(run), Some(cur)) = (run.as_mut(), cur.as_ref()) {
                for (r, c) in run.mean.iter_mut().zip(&cur.mean) {
                    *r = (1.0 - m) * *r + m * c;
                }
                for (r, c) in run.var.iter_mut().zip(&cur.var) {
                    *r = (1.0 - m) * *r + m * c;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum StatsMode<'a> {
    /// Normalize with the statistics of the batch itself.
    Batch,
    /// Normalize with stored running statistics.
    Running(&'a RunningStats),
}

struct HiddenCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    out: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

struct ForwardPass {
    caches: Vec<HiddenCache>,
    last_input: Vec<f64>,
    logits: Vec<f64>,
    stats: Vec<Option<LayerStats>>,
}

#[derive(Debug, Clone)]
pub struct BnNetwork {
    spec: NetworkSpec,
    layout: Layout,
}

impl BnNetwork {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Copy of this network with a different variance floor.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::new(NetworkSpec {
            eps,
            ..self.spec.clone()
        })
    }

    pub fn n1(&self) -> usize {
        self.layout.n1
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.layout.dims
    }

    /// Indices of the BN blocks belonging to hidden layer `layer` (empty for
    /// a plain layer).
    pub fn bn_blocks_of_layer(&self, layer: usize) -> std::ops::Range<usize> {
        match self.layout.hidden.get(layer) {
            Some(HiddenSlots::Bn { first_row, .. }) => {
                *first_row..*first_row + self.spec.layers[layer + 1]
            }
            _ => 0..0,
        }
    }

    /// He-normal weights, unit `gamma`, zero `beta` and biases.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = &self.spec;
        let mut blocks: Vec<Vec<f64>> = self.layout.dims.iter().map(|&d| vec![0.0; d]).collect();
        let mut he = |block: &mut Vec<f64>, fan_in: usize| {
            let std = (2.0 / fan_in as f64).sqrt();
            for x in block.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = std * z;
            }
        };
        for (l, slots) in self.layout.hidden.iter().enumerate() {
            let fan_in = spec.layers[l];
            match *slots {
                HiddenSlots::Bn {
                    first_row, gamma, ..
                } => {
                    for j in 0..spec.layers[l + 1] {
                        he(&mut blocks[first_row + j], fan_in);
                    }
                    blocks[gamma].fill(1.0);
                }
                HiddenSlots::Plain { weight, .. } => he(&mut blocks[weight], fan_in),
            }
        }
        let last_fan_in = spec.layers[spec.layers.len() - 2];
        he(&mut blocks[self.layout.out_weight], last_fan_in);
        ParamVector::new(blocks, self.layout.n1).expect("layout is valid")
    }

    pub fn fresh_running_stats(&self, momentum: f64) -> RunningStats {
        let layers = self
            .layout
            .hidden
            .iter()
            .enumerate()
            .map(|(l, s)| match s {
                HiddenSlots::Bn { .. } => Some(LayerStats {
                    mean: vec![0.0; self.spec.layers[l + 1]],
                    var: vec![1.0; self.spec.layers[l + 1]],
                }),
                HiddenSlots::Plain { .. } => None,
            })
            .collect();
        RunningStats { momentum, layers }
    }

    fn check(&self, theta: &ParamVector, n_features: usize) -> Result<()> {
        if theta.n1() != self.layout.n1 || theta.block_dims() != self.layout.dims {
            return Err(Error::Structural(format!(
                "parameter layout {:?} (n1 = {}) does not match network layout {:?} (n1 = {})",
                theta.block_dims(),
                theta.n1(),
                self.layout.dims,
                self.layout.n1
            )));
        }
        if n_features != self.spec.n_inputs() {
            return Err(Error::Structural(format!(
                "inputs have {n_features} features, network expects {}",
                self.spec.n_inputs()
            )));
        }
        Ok(())
    }

    fn forward(
        &self,
        theta: &ParamVector,
        inputs: &[f64],
        m: usize,
        mode: StatsMode<'_>,
    ) -> Result<ForwardPass> {
        let spec = &self.spec;
        let mut h = inputs.to_vec();
        let mut caches = Vec::with_capacity(self.layout.hidden.len());
        let mut stats = Vec::with_capacity(self.layout.hidden.len());
        for (l, slots) in self.layout.hidden.iter().enumerate() {
            let (fan_in, width) = (spec.layers[l], spec.layers[l + 1]);
            let mut pre = vec![0.0; m * width];
            let mut xhat = Vec::new();
            let mut inv_std = Vec::new();
            match *slots {
                HiddenSlots::Bn {
                    first_row,
                    gamma,
                    beta,
                } => {
                    let mut z = vec![0.0; m * width];
                    for j in 0..width {
                        let w = theta.block(first_row + j);
                        for i in 0..m {
                            z[i * width + j] = dot(&h[i * fan_in..(i + 1) * fan_in], w);
                        }
                    }
                    let (mean, var) = match mode {
                        StatsMode::Batch => column_moments(&z, m, width),
                        StatsMode::Running(rs) => match rs.layers.get(l) {
                            Some(Some(ls)) => (ls.mean.clone(), ls.var.clone()),
                            _ => {
                                return Err(Error::Structural(format!(
                                    "running statistics missing for BN layer {l}"
                                )))
                            }
                        },
                    };
                    inv_std = Vec::with_capacity(width);
                    for (j, &v) in var.iter().enumerate() {
                        let denom = v + spec.eps;
                        if !(denom > 0.0) {
                            return Err(Error::DegenerateStatistics { layer: l, unit: j });
                        }
                        inv_std.push(1.0 / denom.sqrt());
                    }
                    xhat = vec![0.0; m * width];
                    let (g, b) = (theta.block(gamma), theta.block(beta));
                    for i in 0..m {
                        for j in 0..width {
                            let k = i * width + j;
                            xhat[k] = (z[k] - mean[j]) * inv_std[j];
                            pre[k] = g[j] * xhat[k] + b[j];
                        }
                    }
                    stats.push(Some(LayerStats { mean, var }));
                }
                HiddenSlots::Plain { weight, bias } => {
                    let (w, b) = (theta.block(weight), theta.block(bias));
                    for i in 0..m {
                        let row = &h[i * fan_in..(i + 1) * fan_in];
                        for j in 0..width {
                            pre[i * width + j] = dot(row, &w[j * fan_in..(j + 1) * fan_in]) + b[j];
                        }
                    }
                    stats.push(None);
                }
            }
            let out: Vec<f64> = pre.iter().map(|&x| spec.activation.apply(x)).collect();
            let input = std::mem::replace(&mut h, out.clone());
            caches.push(HiddenCache {
                input,
                pre,
                out,
                xhat,
                inv_std,
            });
        }
        let last = spec.layers.len() - 1;
        let (fan_in, n_out) = (spec.layers[last - 1], spec.layers[last]);
        let (w, b) = (
            theta.block(self.layout.out_weight),
            theta.block(self.layout.out_bias),
        );
        let mut logits = vec![0.0; m * n_out];
        for i in 0..m {
            let row = &h[i * fan_in..(i + 1) * fan_in];
            for k in 0..n_out {
                logits[i * n_out + k] = dot(row, &w[k * fan_in..(k + 1) * fan_in]) + b[k];
            }
        }
        Ok(ForwardPass {
            caches,
            last_input: h,
            logits,
            stats,
        })
    }

    fn cross_entropy(&self, logits: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let n_out = self.spec.n_classes();
        let m = labels.len();
        let mut probs = vec![0.0; logits.len()];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= n_out {
                return Err(Error::Domain(format!(
                    "label {y} out of range for {n_out} classes"
                )));
            }
            let row = &logits[i * n_out..(i + 1) * n_out];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&z| (z - mx).exp()).sum();
            let lse = mx + sum.ln();
            total += lse - row[y];
            for k in 0..n_out {
                probs[i * n_out + k] = (row[k] - lse).exp();
            }
        }
        let loss = total / m as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("cross-entropy loss is {loss}")));
        }
        Ok((loss, probs))
    }

    fn backward(
        &self,
        theta: &ParamVector,
        fwd: &ForwardPass,
        probs: &[f64],
        labels: &[usize],
    ) -> ParamVector {
        let spec = &self.spec;
        let m = labels.len();
        let mut grad = theta.zeros_like();
        let last = spec.layers.len() - 1;
        let (fan_in, n_out) = (spec.layers[last - 1], spec.layers[last]);

        let mut dlogits = probs.to_vec();
        for (i, &y) in labels.iter().enumerate() {
            dlogits[i * n_out + y] -= 1.0;
        }
        let inv_m = 1.0 / m as f64;
        for d in &mut dlogits {
            *d *= inv_m;
        }

        {
            let gw = grad.block_mut(self.layout.out_weight);
            for i in 0..m {
                let a = &fwd.last_input[i * fan_in..(i + 1) * fan_in];
                for k in 0..n_out {
                    let d = dlogits[i * n_out + k];
                    for (g, x) in gw[k * fan_in..(k + 1) * fan_in].iter_mut().zip(a) {
                        *g += d * x;
                    }
                }
            }
        }
        {
            let gb = grad.block_mut(self.layout.out_bias);
            for i in 0..m {
                for k in 0..n_out {
                    gb[k] += dlogits[i * n_out + k];
                }
            }
        }
        let w_out = theta.block(self.layout.out_weight);
        let mut dh = vec![0.0; m * fan_in];
        for i in 0..m {
            for k in 0..n_out {
                let d = dlogits[i * n_out + k];
                for (g, w) in dh[i * fan_in..(i + 1) * fan_in]
                    .iter_mut()
                    .zip(&w_out[k * fan_in..(k + 1) * fan_in])
                {
                    *g += d * w;
                }
            }
        }

        for l in (0..self.layout.hidden.len()).rev() {
            let cache = &fwd.caches[l];
            let (fan_in, width) = (spec.layers[l], spec.layers[l + 1]);
            let mut dpre = dh;
            for ((d, &x), &y) in dpre.iter_mut().zip(&cache.pre).zip(&cache.out) {
                *d *= spec.activation.derivative(x, y);
            }
            let dz = match self.layout.hidden[l] {
                HiddenSlots::Bn {
                    gamma, beta, ..
                } => {
                    let g = theta.block(gamma);
                    let mut dgamma = vec![0.0; width];
                    let mut dbeta = vec![0.0; width];
                    let mut sum_dx = vec![0.0; width];
                    let mut sum_dx_xhat = vec![0.0; width];
                    for i in 0..m {
                        for j in 0..width {
                            let k = i * width + j;
                            let d = dpre[k];
                            dgamma[j] += d * cache.xhat[k];
                            dbeta[j] += d;
                            let dx = d * g[j];
                            sum_dx[j] += dx;
                            sum_dx_xhat[j] += dx * cache.xhat[k];
                        }
                    }
                    grad.block_mut(gamma).copy_from_slice(&dgamma);
                    grad.block_mut(beta).copy_from_slice(&dbeta);
                    let mf = m as f64;
                    let mut dz = vec![0.0; m * width];
                    for i in 0..m {
                        for j in 0..width {
                            let k = i * width + j;
                            let dx = dpre[k] * g[j];
                            dz[k] = cache.inv_std[j] / mf
                                * (mf * dx - sum_dx[j] - cache.xhat[k] * sum_dx_xhat[j]);
                        }
                    }
                    dz
                }
                HiddenSlots::Plain { bias, .. } => {
                    let gb = grad.block_mut(bias);
                    for i in 0..m {
                        for j in 0..width {
                            gb[j] += dpre[i * width + j];
                        }
                    }
                    dpre
                }
            };

            for j in 0..width {
                let gw = match self.layout.hidden[l] {
                    HiddenSlots::Bn { first_row, .. } => grad.block_mut(first_row + j),
                    HiddenSlots::Plain { weight, .. } => {
                        &mut grad.block_mut(weight)[j * fan_in..(j + 1) * fan_in]
                    }
                };
                for i in 0..m {
                    let d = dz[i * width + j];
                    for (g, x) in gw.iter_mut().zip(&cache.input[i * fan_in..(i + 1) * fan_in]) {
                        *g += d * x;
                    }
                }
            }

            if l == 0 {
                dh = Vec::new();
            } else {
                dh = vec![0.0; m * fan_in];
                for j in 0..width {
                    let w = match self.layout.hidden[l] {
                        HiddenSlots::Bn { first_row, .. } => theta.block(first_row + j),
                        HiddenSlots::Plain { weight, .. } => {
                            &theta.block(weight)[j * fan_in..(j + 1) * fan_in]
                        }
                    };
                    for i in 0..m {
                        let d = dz[i * width + j];
                        for (g, wv) in dh[i * fan_in..(i + 1) * fan_in].iter_mut().zip(w) {
                            *g += d * wv;
                        }
                    }
                }
            }
        }
        grad
    }

    /// Loss, gradient and the batch statistics of every BN layer.
    pub fn loss_grad_stats(
        &self,
        theta: &ParamVector,
        batch: &Batch,
    ) -> Result<(f64, ParamVector, Vec<Option<LayerStats>>)> {
        self.check_batch(theta, batch)?;
        let fwd = self.forward(theta, batch.inputs(), batch.len(), StatsMode::Batch)?;
        let (loss, probs) = self.cross_entropy(&fwd.logits, batch.labels())?;
        let grad = self.backward(theta, &fwd, &probs, batch.labels());
        Ok((loss, grad, fwd.stats))
    }

    fn check_batch(&self, theta: &ParamVector, batch: &Batch) -> Result<()> {
        self.check(theta, batch.n_features())?;
        if batch.len() < 2 {
            return Err(Error::Domain(format!(
                "BN network needs a batch of at least 2 samples, got {}",
                batch.len()
            )));
        }
        Ok(())
    }

    /// Class logits for `m` row-major inputs.
    pub fn logits(
        &self,
        theta: &ParamVector,
        inputs: &[f64],
        mode: StatsMode<'_>,
    ) -> Result<Vec<f64>> {
        let d = self.spec.n_inputs();
        self.check(theta, d)?;
        if inputs.len() % d != 0 {
            return Err(Error::Structural(format!(
                "input length {} is not a multiple of {d}",
                inputs.len()
            )));
        }
        Ok(self.forward(theta, inputs, inputs.len() / d, mode)?.logits)
    }

    pub fn predict(
        &self,
        theta: &ParamVector,
        inputs: &[f64],
        mode: StatsMode<'_>,
    ) -> Result<Vec<usize>> {
        let logits = self.logits(theta, inputs, mode)?;
        Ok(logits
            .chunks_exact(self.spec.n_classes())
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                        if v > bv {
                            (i, v)
                        } else {
                            (bi, bv)
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Fraction of rows whose arg-max logit equals the label.
    pub fn accuracy(
        &self,
        theta: &ParamVector,
        inputs: &[f64],
        labels: &[usize],
        mode: StatsMode<'_>,
    ) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(theta, inputs, mode)?;
        let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / labels.len() as f64)
    }
}

impl LossOracle for BnNetwork {
    fn loss(&self, theta: &ParamVector, batch: &Batch) -> Result<f64> {
        self.check_batch(theta, batch)?;
        let fwd = self.forward(theta, batch.inputs(), batch.len(), StatsMode::Batch)?;
        Ok(self.cross_entropy(&fwd.logits, batch.labels())?.0)
    }

    fn loss_and_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        let (loss, grad, _) = self.loss_grad_stats(theta, batch)?;
        Ok((loss, grad))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn column_moments(z: &[f64], m: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; width];
    for row in z.chunks_exact(width) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= m as f64;
    }
    let mut var = vec![0.0; width];
    for row in z.chunks_exact(width) {
        for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    for a in &mut var {
        *a /= m as f64;
    }
    (mean, var)
}

/// Batch-normalize a single column of pre-activations (no affine part).
pub fn normalize_column(z: &[f64], eps: f64) -> Result<Vec<f64>> {
    let (mean, var) = column_moments(z, z.len(), 1);
    let denom = var[0] + eps;
    if !(denom > 0.0) {
        return Err(Error::DegenerateStatistics { layer: 0, unit: 0 });
    }
    let s = denom.sqrt();
    Ok(z.iter().map(|&v| (v - mean[0]) / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::scale_transform;
    use rand::Rng;

    pub(crate) fn toy_batch(m: usize, d: usize, classes: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..m).map(|i| i % classes).collect();
        Batch::new(inputs, labels, d).unwrap()
    }

    fn spec(eps: f64) -> NetworkSpec {
        NetworkSpec {
            layers: vec![3, 5, 4, 3],
            bn: vec![true, true],
            activation: Activation::Relu,
            eps,
        }
    }

    #[test]
    fn layout_puts_bn_rows_first() {
        let net = BnNetwork::new(spec(0.0)).unwrap();
        assert_eq!(net.n1(), 9);
        assert_eq!(
            net.block_dims(),
            &[3, 3, 3, 3, 3, 5, 5, 5, 5, 5, 5, 4, 4, 12, 3]
        );
        assert_eq!(net.bn_blocks_of_layer(1), 5..9);
        let mixed = BnNetwork::new(NetworkSpec {
            layers: vec![2, 3, 4, 2],
            bn: vec![false, true],
            activation: Activation::Tanh,
            eps: 0.0,
        })
        .unwrap();
        assert_eq!(mixed.n1(), 4);
        assert_eq!(mixed.block_dims(), &[3, 3, 3, 3, 6, 3, 4, 4, 8, 2]);
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(0.0);
        s.bn = vec![true];
        assert!(BnNetwork::new(s).is_err());
        let mut s = spec(0.0);
        s.eps = -1.0;
        assert!(BnNetwork::new(s).is_err());
        let mut s = spec(0.0);
        s.layers = vec![3, 1];
        s.bn = vec![];
        assert!(BnNetwork::new(s).is_err());
    }

    #[test]
    fn bn_unit_is_scale_free() {
        let z: Vec<f64> = (0..17).map(|i| ((i * 7919) % 23) as f64 - 11.3).collect();
        let scaled: Vec<f64> = z.iter().map(|v| 7.3 * v).collect();
        let a = normalize_column(&z, 0.0).unwrap();
        let b = normalize_column(&scaled, 0.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300).max(1.0));
        }
        assert!(matches!(
            normalize_column(&[2.0, 2.0, 2.0], 0.0),
            Err(Error::DegenerateStatistics { .. })
        ));
    }

    #[test]
    fn constant_unit_with_zero_eps_is_degenerate() {
        let net = BnNetwork::new(spec(0.0)).unwrap();
        let theta = net.init(1);
        let batch = Batch::new(vec![0.5; 6], vec![0, 1], 3).unwrap();
        assert!(matches!(
            net.loss(&theta, &batch),
            Err(Error::DegenerateStatistics { .. })
        ));
        let floored = net.with_eps(1e-5).unwrap();
        assert!(floored.loss(&theta, &batch).unwrap().is_finite());
    }

    #[test]
    fn loss_is_invariant_under_positive_block_scaling() {
        let net = BnNetwork::new(spec(0.0)).unwrap();
        let theta = net.init(3);
        let batch = toy_batch(16, 3, 3, 4);
        let base = net.loss(&theta, &batch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a: Vec<f64> = (0..net.n1())
                .map(|_| 10f64.powf(rng.random_range(-1.0..1.0)))
                .collect();
            let scaled = scale_transform(&theta, &a).unwrap();
            let l = net.loss(&scaled, &batch).unwrap();
            assert!((l - base).abs() <= 1e-10 * (1.0 + base.abs()), "{l} vs {base}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for act in [Activation::Relu, Activation::Tanh] {
            let net = BnNetwork::new(NetworkSpec {
                activation: act,
                ..spec(1e-5)
            })
            .unwrap();
            let theta = net.init(11);
            let batch = toy_batch(12, 3, 3, 12);
            let g = net.grad(&theta, &batch).unwrap().flat();
            let flat = theta.flat();
            let h = 1e-6;
            for k in 0..flat.len() {
                let mut p = flat.clone();
                p[k] += h;
                let mut q = flat.clone();
                q[k] -= h;
                let fd = (net.loss(&theta.with_flat(&p).unwrap(), &batch).unwrap()
                    - net.loss(&theta.with_flat(&q).unwrap(), &batch).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()),
                    "{act:?} coord {k}: fd {fd} vs {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn running_stats_mode_differs_from_batch_mode_until_warm() {
        let net = BnNetwork::new(spec(1e-5)).unwrap();
        let theta = net.init(2);
        let batch = toy_batch(32, 3, 3, 1);
        let (_, _, stats) = net.loss_grad_stats(&theta, &batch).unwrap();
        let mut rs = net.fresh_running_stats(1.0);
        rs.update(&stats);
        let a = net
            .logits(&theta, batch.inputs(), StatsMode::Batch)
            .unwrap();
        let b = net
            .logits(&theta, batch.inputs(), StatsMode::Running(&rs))
            .unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let acc = net
            .accuracy(&theta, batch.inputs(), batch.labels(), StatsMode::Running(&rs))
            .unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
