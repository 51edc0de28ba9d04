//! Dense/ReLU/dropout/batch-norm networks with softmax or sigmoid heads.
//!
//! All trainable parameters live in one flat buffer; each layer records its
//! offsets. Gradients use the same layout, which keeps the optimizer, the
//! checkpoint format and finite-difference checks layer-agnostic.

use rand::Rng;
use rayon::prelude::*;

use super::spec::{Activation, Head, LayerSpec, Loss, NetworkSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{hash_words, stream};
use crate::scalar::{axpy, dot, Scalar};

pub const BATCHNORM_MOMENTUM: f64 = 0.9;
pub const BATCHNORM_EPSILON: f64 = 1e-5;
/// Probabilities are clamped to at least this inside cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Op {
    Dense {
        inputs: usize,
        units: usize,
        weights: usize,
        bias: usize,
        relu: bool,
    },
    Dropout {
        rate: f64,
    },
    BatchNorm {
        dim: usize,
        gamma: usize,
        beta: usize,
        /// Offset of `dim` running means followed by `dim` running variances.
        stats: usize,
    },
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks are drawn from `mask_seed`; batch norm uses batch
    /// statistics. The same seed reproduces the same masks.
    Train { mask_seed: u64 },
    Infer,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    None,
    Mask(Vec<T>),
    Norm {
        x_hat: Matrix<T>,
        inv_std: Vec<T>,
        mean: Vec<T>,
        var: Vec<T>,
    },
}

/// Everything backpropagation needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    mode: Mode,
    /// `acts[0]` is the input, `acts[i + 1]` the output of op `i`.
    acts: Vec<Matrix<T>>,
    caches: Vec<Cache<T>>,
    /// Head activations: softmax rows or sigmoid entries.
    pub outputs: Matrix<T>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn logits(&self) -> &Matrix<T> {
        self.acts.last().expect("at least the output layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    ops: Vec<Op>,
    params: Vec<T>,
    running: Vec<T>,
}

fn glorot<T: Scalar>(rng: &mut impl Rng, fan_in: usize, fan_out: usize, out: &mut [T]) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out {
        *w = T::of(rng.random_range(-limit..limit));
    }
}

impl<T: Scalar> Network<T> {
    /// Lays out parameters and initializes them: Glorot-uniform weights from
    /// `spec.init_seed`, zero biases, unit batch-norm scale, zero shift,
    /// running mean 0 and running variance 1.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut ops = Vec::with_capacity(spec.layers.len() + 1);
        let mut n_params = 0;
        let mut n_running = 0;
        let mut width = spec.input_dim;
        let dense = |inputs: usize, units: usize, relu: bool, n_params: &mut usize| {
            let op = Op::Dense {
                inputs,
                units,
                weights: *n_params,
                bias: *n_params + inputs * units,
                relu,
            };
            *n_params += inputs * units + units;
            op
        };
        for layer in &spec.layers {
            match *layer {
                LayerSpec::Dense { units, activation } => {
                    ops.push(dense(width, units, activation == Activation::Relu, &mut n_params));
                    width = units;
                }
                LayerSpec::Dropout { rate } => ops.push(Op::Dropout { rate }),
                LayerSpec::Batchnorm => {
                    ops.push(Op::BatchNorm {
                        dim: width,
                        gamma: n_params,
                        beta: n_params + width,
                        stats: n_running,
                    });
                    n_params += 2 * width;
                    n_running += 2 * width;
                }
            }
        }
        ops.push(dense(width, spec.head.classes(), false, &mut n_params));

        let mut params = vec![T::zero(); n_params];
        let mut running = vec![T::zero(); n_running];
        let mut rng = stream(hash_words(&[spec.init_seed, 0x1417]));
        for op in &ops {
            match *op {
                Op::Dense {
                    inputs,
                    units,
                    weights,
                    ..
                } => glorot(&mut rng, inputs, units, &mut params[weights..weights + inputs * units]),
                Op::BatchNorm {
                    dim, gamma, stats, ..
                } => {
                    params[gamma..gamma + dim].fill(T::one());
                    running[stats + dim..stats + 2 * dim].fill(T::one());
                }
                Op::Dropout { .. } => {}
            }
        }
        Ok(Network {
            spec,
            ops,
            params,
            running,
        })
    }

    pub(crate) fn from_parts(spec: NetworkSpec, params: Vec<T>, running: Vec<T>) -> Result<Self> {
        let mut net = Network::new(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::dim("network parameters", params.len(), net.params.len()));
        }
        if running.len() != net.running.len() {
            return Err(Error::dim("running statistics", running.len(), net.running.len()));
        }
        net.params = params;
        net.running = running;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[T] {
        &self.running
    }

    pub fn output_dim(&self) -> usize {
        self.spec.head.classes()
    }

    pub fn forward(&self, batch: &Matrix<T>, mode: Mode) -> Result<ForwardPass<T>> {
        if batch.cols() != self.spec.input_dim {
            return Err(Error::dim("network input", batch.cols(), self.spec.input_dim));
        }
        if !batch.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        let n = batch.rows();
        let mut acts = Vec::with_capacity(self.ops.len() + 1);
        let mut caches = Vec::with_capacity(self.ops.len());
        acts.push(batch.clone());
        for (idx, op) in self.ops.iter().enumerate() {
            let x = acts.last().expect("input pushed");
            let (y, cache) = match *op {
                Op::Dense {
                    inputs,
                    units,
                    weights,
                    bias,
                    relu,
                } => {
                    let w = &self.params[weights..weights + inputs * units];
                    let b = &self.params[bias..bias + units];
                    let mut y = Matrix::zeros(n, units);
                    for i in 0..n {
                        let xi = x.row(i);
                        let yi = y.row_mut(i);
                        for (o, (wo, yo)) in w.chunks_exact(inputs).zip(yi.iter_mut()).enumerate() {
                            let z = b[o] + dot(wo, xi);
                            *yo = if relu && z < T::zero() { T::zero() } else { z };
                        }
                    }
                    (y, Cache::None)
                }
                Op::Dropout { rate } => match mode {
                    Mode::Train { mask_seed } if rate > 0.0 => {
                        let mut rng = stream(hash_words(&[mask_seed, idx as u64]));
                        let keep = T::one() / T::of(1.0 - rate);
                        let mask: Vec<T> = (0..x.as_slice().len())
                            .map(|_| {
                                if rng.random::<f64>() < rate {
                                    T::zero()
                                } else {
                                    keep
                                }
                            })
                            .collect();
                        let mut y = x.clone();
                        for (v, m) in y.as_mut_slice().iter_mut().zip(&mask) {
                            *v *= *m;
                        }
                        (y, Cache::Mask(mask))
                    }
                    _ => (x.clone(), Cache::None),
                },
                Op::BatchNorm {
                    dim,
                    gamma,
                    beta,
                    stats,
                } => {
                    let eps = T::of(BATCHNORM_EPSILON);
                    let (mean, var) = match mode {
                        Mode::Train { .. } => column_moments(x),
                        Mode::Infer => (
                            self.running[stats..stats + dim].to_vec(),
                            self.running[stats + dim..stats + 2 * dim].to_vec(),
                        ),
                    };
                    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
                    let g = &self.params[gamma..gamma + dim];
                    let bt = &self.params[beta..beta + dim];
                    let mut x_hat = Matrix::zeros(n, dim);
                    let mut y = Matrix::zeros(n, dim);
                    for i in 0..n {
                        for j in 0..dim {
                            let h = (x.get(i, j) - mean[j]) * inv_std[j];
                            x_hat.set(i, j, h);
                            y.set(i, j, g[j] * h + bt[j]);
                        }
                    }
                    (
                        y,
                        Cache::Norm {
                            x_hat,
                            inv_std,
                            mean,
                            var,
                        },
                    )
                }
            };
            acts.push(y);
            caches.push(cache);
        }
        let outputs = apply_head(self.spec.head, acts.last().expect("output layer"));
        Ok(ForwardPass {
            mode,
            acts,
            caches,
            outputs,
        })
    }

    /// Mean loss over the batch for a finished forward pass.
    pub fn loss(&self, pass: &ForwardPass<T>, targets: &Matrix<T>) -> Result<T> {
        self.check_targets(pass, targets)?;
        Ok(mean_loss(self.spec.loss, &pass.outputs, targets))
    }

    fn check_targets(&self, pass: &ForwardPass<T>, targets: &Matrix<T>) -> Result<()> {
        if targets.cols() != self.output_dim() || targets.rows() != pass.outputs.rows() {
            return Err(Error::LabelArity(format!(
                "targets are {}x{}, outputs {}x{}",
                targets.rows(),
                targets.cols(),
                pass.outputs.rows(),
                pass.outputs.cols()
            )));
        }
        Ok(())
    }

    /// Loss and backpropagated gradients, laid out like [`Network::params`].
    pub fn backward(&self, pass: &ForwardPass<T>, targets: &Matrix<T>) -> Result<(T, Vec<T>)> {
        self.check_targets(pass, targets)?;
        let loss = mean_loss(self.spec.loss, &pass.outputs, targets);
        let n = targets.rows();
        let k = targets.cols();
        let mut grads = vec![T::zero(); self.params.len()];

        // d loss / d logits
        let mut delta = Matrix::zeros(n, k);
        match self.spec.loss {
            Loss::CategoricalCe => {
                let scale = T::one() / T::of_usize(n);
                for i in 0..n {
                    let mass: T = targets.row(i).iter().copied().sum();
                    for j in 0..k {
                        let d = pass.outputs.get(i, j) * mass - targets.get(i, j);
                        delta.set(i, j, d * scale);
                    }
                }
            }
            Loss::BinaryCe => {
                let scale = T::one() / T::of_usize(n * k);
                for i in 0..n {
                    for j in 0..k {
                        let d = pass.outputs.get(i, j) - targets.get(i, j);
                        delta.set(i, j, d * scale);
                    }
                }
            }
        }

        for (idx, op) in self.ops.iter().enumerate().rev() {
            let x = &pass.acts[idx];
            let y = &pass.acts[idx + 1];
            match (*op, &pass.caches[idx]) {
                (
                    Op::Dense {
                        inputs,
                        units,
                        weights,
                        bias,
                        relu,
                    },
                    _,
                ) => {
                    if relu {
                        for (d, out) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                            if *out <= T::zero() {
                                *d = T::zero();
                            }
                        }
                    }
                    let (head, tail) = grads.split_at_mut(bias);
                    let gw = &mut head[weights..weights + inputs * units];
                    let gb = &mut tail[..units];
                    let w = &self.params[weights..weights + inputs * units];
                    let need_dx = idx > 0;
                    let mut dx = Matrix::zeros(if need_dx { n } else { 0 }, inputs);
                    for o in 0..units {
                        let gwo = &mut gw[o * inputs..(o + 1) * inputs];
                        let wo = &w[o * inputs..(o + 1) * inputs];
                        for i in 0..n {
                            let d = delta.get(i, o);
                            if d.is_zero() {
                                continue;
                            }
                            gb[o] += d;
                            axpy(d, x.row(i), gwo);
                            if need_dx {
                                axpy(d, wo, dx.row_mut(i));
                            }
                        }
                    }
                    delta = dx;
                }
                (Op::Dropout { .. }, Cache::Mask(mask)) => {
                    for (d, m) in delta.as_mut_slice().iter_mut().zip(mask) {
                        *d *= *m;
                    }
                }
                (Op::Dropout { .. }, _) => {}
                (
                    Op::BatchNorm {
                        dim, gamma, beta, ..
                    },
                    Cache::Norm { x_hat, inv_std, .. },
                ) => {
                    let g = &self.params[gamma..gamma + dim];
                    let mut dx = Matrix::zeros(n, dim);
                    let nn = T::of_usize(n);
                    for j in 0..dim {
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for i in 0..n {
                            let d = delta.get(i, j);
                            sum_d += d;
                            sum_dh += d * x_hat.get(i, j);
                        }
                        grads[gamma + j] += sum_dh;
                        grads[beta + j] += sum_d;
                        match pass.mode {
                            Mode::Train { .. } => {
                                // d x_hat = delta * gamma; batch statistics depend on x
                                let c = g[j] * inv_std[j] / nn;
                                for i in 0..n {
                                    let v = nn * delta.get(i, j) - sum_d - x_hat.get(i, j) * sum_dh;
                                    dx.set(i, j, c * v);
                                }
                            }
                            Mode::Infer => {
                                for i in 0..n {
                                    dx.set(i, j, delta.get(i, j) * g[j] * inv_std[j]);
                                }
                            }
                        }
                    }
                    delta = dx;
                }
                (Op::BatchNorm { .. }, _) => unreachable!("batch norm always caches"),
            }
        }
        Ok((loss, grads))
    }

    /// Moves running statistics toward the batch statistics of a training
    /// pass: `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, pass: &ForwardPass<T>) {
        let m = T::of(BATCHNORM_MOMENTUM);
        for (op, cache) in self.ops.iter().zip(&pass.caches) {
            if let (Op::BatchNorm { dim, stats, .. }, Cache::Norm { mean, var, .. }) = (op, cache) {
                if pass.mode == Mode::Infer {
                    continue;
                }
                for j in 0..*dim {
                    let rm = &mut self.running[stats + j];
                    *rm = m * *rm + (T::one() - m) * mean[j];
                    let rv = &mut self.running[stats + dim + j];
                    *rv = m * *rv + (T::one() - m) * var[j];
                }
            }
        }
    }

    /// Sets every batch-norm layer's running statistics to the batch
    /// statistics of `pass`.
    pub fn set_running_stats_from(&mut self, pass: &ForwardPass<T>) {
        for (op, cache) in self.ops.iter().zip(&pass.caches) {
            if let (Op::BatchNorm { dim, stats, .. }, Cache::Norm { mean, var, .. }) = (op, cache) {
                self.running[*stats..stats + dim].copy_from_slice(mean);
                self.running[stats + dim..stats + 2 * dim].copy_from_slice(var);
            }
        }
    }

    /// Inference-mode forward pass. Rows are processed in parallel chunks;
    /// every row is computed independently, so the result does not depend on
    /// chunking.
    pub fn predict_proba(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        const CHUNK: usize = 256;
        if x.rows() <= CHUNK {
            return Ok(self.forward(x, Mode::Infer)?.outputs);
        }
        let idx: Vec<usize> = (0..x.rows()).collect();
        let parts = idx
            .par_chunks(CHUNK)
            .map(|rows| Ok(self.forward(&x.select_rows(rows), Mode::Infer)?.outputs))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(x.rows() * self.output_dim());
        for p in parts {
            data.extend(p.into_vec());
        }
        Matrix::from_vec(x.rows(), self.output_dim(), data)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().chain(&self.running).all(|v| v.is_finite())
    }
}

/// Per-column mean and biased variance.
fn column_moments<T: Scalar>(x: &Matrix<T>) -> (Vec<T>, Vec<T>) {
    let n = T::of_usize(x.rows().max(1));
    let mut mean = vec![T::zero(); x.cols()];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += *v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); x.cols()];
    for row in x.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (*v - *m) * (*v - *m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

pub fn softmax_row<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, z) in out.iter_mut().zip(logits) {
        *o = (*z - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn apply_head<T: Scalar>(head: Head, logits: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    match head {
        Head::Softmax(_) => {
            for i in 0..logits.rows() {
                softmax_row(logits.row(i), out.row_mut(i));
            }
        }
        Head::Sigmoid(_) => {
            for (o, z) in out.as_mut_slice().iter_mut().zip(logits.as_slice()) {
                *o = sigmoid(*z);
            }
        }
    }
    out
}

fn mean_loss<T: Scalar>(loss: Loss, probs: &Matrix<T>, targets: &Matrix<T>) -> T {
    let eps = T::of(PROB_CLAMP);
    let n = probs.rows();
    let mut total = T::zero();
    match loss {
        Loss::CategoricalCe => {
            for (p, y) in probs.as_slice().iter().zip(targets.as_slice()) {
                if !y.is_zero() {
                    total -= *y * p.max(eps).ln();
                }
            }
            total / T::of_usize(n)
        }
        Loss::BinaryCe => {
            for (p, y) in probs.as_slice().iter().zip(targets.as_slice()) {
                total -= *y * p.max(eps).ln() + (T::one() - *y) * (T::one() - *p).max(eps).ln();
            }
            total / T::of_usize(n * probs.cols())
        }
    }
}
