//! A small dense-network engine with hand-written backpropagation.
//!
//! Each layer computes `act(bn(x W^T + b))`, batches are row-major (`M x in`).
//! Batch normalization in training mode uses the batch statistics and reports
//! them in the [`Tape`]; running statistics change only through
//! [`DenseNet::commit_batch_stats`], which keeps `forward` itself pure.

mod adam;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::container::{Reader, Writer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(self, y: f64) -> f64 {
        match self {
            Activation::Relu => y.max(0.0),
            Activation::LeakyRelu(a) => {
                if y > 0.0 {
                    y
                } else {
                    a * y
                }
            }
            Activation::Sigmoid => sigmoid(y),
            Activation::Linear => y,
        }
    }

    /// Derivative given the pre-activation `y` and output `a`.
    fn derivative(self, y: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(alpha) => {
                if y > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }

    fn code(self) -> (u8, f64) {
        match self {
            Activation::Relu => (0, 0.0),
            Activation::LeakyRelu(a) => (1, a),
            Activation::Sigmoid => (2, 0.0),
            Activation::Linear => (3, 0.0),
        }
    }

    fn from_code(code: u8, alpha: f64) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::LeakyRelu(alpha)),
            2 => Ok(Activation::Sigmoid),
            3 => Ok(Activation::Linear),
            c => Err(Error::InvalidContainer(format!(
                "unknown activation code {c}"
            ))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new(width: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNorm {
            gamma: DVector::from_element(width, 1.0),
            beta: DVector::zeros(width),
            running_mean: DVector::zeros(width),
            running_var: DVector::from_element(width, 1.0),
            momentum,
            epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
    pub batch_norm: Option<BatchNorm>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn n_params(&self) -> usize {
        let bn = if self.batch_norm.is_some() {
            2 * self.out_dim()
        } else {
            0
        };
        self.weights.len() + self.bias.len() + bn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub out_dim: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub in_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl NetSpec {
    /// `hidden` equal-width layers followed by an output layer without batch
    /// normalization.
    pub fn mlp(
        in_dim: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        out_dim: usize,
        out_activation: Activation,
        batch_norm: bool,
    ) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&w| LayerSpec {
                out_dim: w,
                activation: hidden_activation,
                batch_norm,
            })
            .collect();
        layers.push(LayerSpec {
            out_dim,
            activation: out_activation,
            batch_norm: false,
        });
        NetSpec {
            in_dim,
            layers,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
struct LayerTape {
    input: DMatrix<f64>,
    /// Normalized pre-activation (`x_hat`), only with batch norm.
    normalized: Option<DMatrix<f64>>,
    inv_std: Option<DVector<f64>>,
    batch_mean: Option<DVector<f64>>,
    batch_var: Option<DVector<f64>>,
    pre_activation: DMatrix<f64>,
    output: DMatrix<f64>,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    mode: Mode,
    layers: Vec<LayerTape>,
}

impl Tape {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Post-activation output of layer `k`.
    pub fn activation(&self, k: usize) -> &DMatrix<f64> {
        &self.layers[k].output
    }

    /// Pre-activation (post batch-norm) of layer `k`.
    pub fn pre_activation(&self, k: usize) -> &DMatrix<f64> {
        &self.layers[k].pre_activation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gamma: Option<DVector<f64>>,
    pub beta: Option<DVector<f64>>,
}

/// Parameter gradients, one entry per layer. Layers a partial backward pass
/// did not reach hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    /// Same order as [`DenseNet::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.extend_from_slice(g.as_slice());
                out.extend_from_slice(b.as_slice());
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

fn add_row(m: &mut DMatrix<f64>, row: &DVector<f64>) {
    for mut r in m.row_iter_mut() {
        r += row.transpose();
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    m.row_sum().transpose()
}

/// Deterministic initialization: uniform weights with He fan-in scaling for
/// (leaky) ReLU layers and Xavier scaling otherwise; zero biases; BN `gamma=1`,
/// `beta=0`.
pub fn init_net(spec: &NetSpec, seed: u64) -> Result<DenseNet> {
    if spec.layers.is_empty() {
        return Err(Error::InvalidSpec(
            "network needs at least one layer".into(),
        ));
    }
    if spec.in_dim == 0 || spec.layers.iter().any(|l| l.out_dim == 0) {
        return Err(Error::InvalidSpec("layer widths must be positive".into()));
    }
    if !(spec.bn_epsilon > 0.0) || !(0.0..1.0).contains(&spec.bn_momentum) {
        return Err(Error::InvalidSpec(
            "batch-norm momentum must be in [0,1) and epsilon > 0".into(),
        ));
    }
    let mut rng = crate::seed::rng(seed);
    let mut in_dim = spec.in_dim;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        let limit = match l.activation {
            Activation::Relu | Activation::LeakyRelu(_) => (6.0 / in_dim as f64).sqrt(),
            Activation::Sigmoid | Activation::Linear => (6.0 / (in_dim + l.out_dim) as f64).sqrt(),
        };
        let weights = DMatrix::from_fn(l.out_dim, in_dim, |_, _| rng.random_range(-limit..limit));
        layers.push(Dense {
            weights,
            bias: DVector::zeros(l.out_dim),
            activation: l.activation,
            batch_norm: l
                .batch_norm
                .then(|| BatchNorm::new(l.out_dim, spec.bn_momentum, spec.bn_epsilon)),
        });
        in_dim = l.out_dim;
    }
    Ok(DenseNet { layers })
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec(
                "network needs at least one layer".into(),
            ));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::InvalidSpec(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(Error::InvalidSpec(
                    "bias length differs from layer width".into(),
                ));
            }
            if let Some(bn) = &l.batch_norm {
                let w = l.out_dim();
                if bn.gamma.len() != w
                    || bn.beta.len() != w
                    || bn.running_mean.len() != w
                    || bn.running_var.len() != w
                {
                    return Err(Error::InvalidSpec(
                        "batch-norm vectors differ from layer width".into(),
                    ));
                }
                if bn.running_var.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::InvalidSpec(
                        "running variance must be positive".into(),
                    ));
                }
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn forward(&self, batch: &DMatrix<f64>, mode: Mode) -> Result<(DMatrix<f64>, Tape)> {
        if batch.ncols() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.in_dim()
            )));
        }
        let m = batch.nrows();
        let uses_bn = self.layers.iter().any(|l| l.batch_norm.is_some());
        if mode == Mode::Train && uses_bn && m < 2 {
            return Err(Error::BatchTooSmall(m));
        }
        if m == 0 {
            return Err(Error::BatchTooSmall(0));
        }
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut z = &x * layer.weights.transpose();
            add_row(&mut z, &layer.bias);
            let (pre, normalized, inv_std, batch_mean, batch_var) = match (&layer.batch_norm, mode)
            {
                (None, _) => (z, None, None, None, None),
                (Some(bn), Mode::Train) => {
                    let mean = z.row_mean().transpose();
                    let var = DVector::from_fn(z.ncols(), |j, _| {
                        z.column(j)
                            .iter()
                            .map(|v| (v - mean[j]).powi(2))
                            .sum::<f64>()
                            / m as f64
                    });
                    let inv = var.map(|v| 1.0 / (v + bn.epsilon).sqrt());
                    let xhat =
                        DMatrix::from_fn(m, z.ncols(), |i, j| (z[(i, j)] - mean[j]) * inv[j]);
                    let y = DMatrix::from_fn(m, z.ncols(), |i, j| {
                        bn.gamma[j] * xhat[(i, j)] + bn.beta[j]
                    });
                    (y, Some(xhat), Some(inv), Some(mean), Some(var))
                }
                (Some(bn), Mode::Eval) => {
                    let inv = bn.running_var.map(|v| 1.0 / (v + bn.epsilon).sqrt());
                    let xhat = DMatrix::from_fn(m, z.ncols(), |i, j| {
                        (z[(i, j)] - bn.running_mean[j]) * inv[j]
                    });
                    let y = DMatrix::from_fn(m, z.ncols(), |i, j| {
                        bn.gamma[j] * xhat[(i, j)] + bn.beta[j]
                    });
                    (y, Some(xhat), Some(inv), None, None)
                }
            };
            let act = layer.activation;
            let out = pre.map(|v| act.apply(v));
            tapes.push(LayerTape {
                input: std::mem::replace(&mut x, out.clone()),
                normalized,
                inv_std,
                batch_mean,
                batch_var,
                pre_activation: pre,
                output: out,
            });
        }
        Ok((
            x,
            Tape {
                mode,
                layers: tapes,
            },
        ))
    }

    /// Folds a training-mode tape's batch statistics into the running
    /// statistics: `running = momentum * running + (1 - momentum) * batch`,
    /// using the unbiased batch variance.
    pub fn commit_batch_stats(&mut self, tape: &Tape) -> Result<()> {
        self.check_tape(tape)?;
        if tape.mode != Mode::Train {
            return Ok(());
        }
        for (layer, lt) in self.layers.iter_mut().zip(&tape.layers) {
            if let (Some(bn), Some(mean), Some(var)) =
                (&mut layer.batch_norm, &lt.batch_mean, &lt.batch_var)
            {
                let m = lt.input.nrows() as f64;
                let unbiased = var * (m / (m - 1.0));
                bn.running_mean = &bn.running_mean * bn.momentum + mean * (1.0 - bn.momentum);
                bn.running_var = &bn.running_var * bn.momentum + unbiased * (1.0 - bn.momentum);
            }
        }
        Ok(())
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        if tape.layers.len() != self.layers.len() {
            return Err(Error::TapeMismatch(format!(
                "tape has {} layers, network has {}",
                tape.layers.len(),
                self.layers.len()
            )));
        }
        for (k, (l, t)) in self.layers.iter().zip(&tape.layers).enumerate() {
            if t.input.ncols() != l.in_dim() || t.output.ncols() != l.out_dim() {
                return Err(Error::TapeMismatch(format!("layer {k} dimensions differ")));
            }
            if l.batch_norm.is_some() != t.normalized.is_some() {
                return Err(Error::TapeMismatch(format!(
                    "layer {k} batch-norm presence differs"
                )));
            }
        }
        Ok(())
    }

    /// Gradients of all parameters and of the input, given the gradient with
    /// respect to the network output.
    pub fn backward(
        &self,
        tape: &Tape,
        output_grad: &DMatrix<f64>,
    ) -> Result<(NetGrads, DMatrix<f64>)> {
        let last = self.layers.len() - 1;
        self.backward_from(tape, last, output_grad, false)
    }

    /// As [`backward`](Self::backward), but starting from the gradient with
    /// respect to the last layer's pre-activation (e.g. logits).
    pub fn backward_from_logits(
        &self,
        tape: &Tape,
        logit_grad: &DMatrix<f64>,
    ) -> Result<(NetGrads, DMatrix<f64>)> {
        let last = self.layers.len() - 1;
        self.backward_from(tape, last, logit_grad, true)
    }

    /// Backpropagates a gradient on the post-activation output of layer
    /// `layer` down to the input. Parameters above `layer` get zero gradients.
    pub fn backward_from_layer(
        &self,
        tape: &Tape,
        layer: usize,
        activation_grad: &DMatrix<f64>,
    ) -> Result<(NetGrads, DMatrix<f64>)> {
        if layer >= self.layers.len() {
            return Err(Error::TapeMismatch(format!("no layer {layer}")));
        }
        self.backward_from(tape, layer, activation_grad, false)
    }

    fn backward_from(
        &self,
        tape: &Tape,
        top: usize,
        grad: &DMatrix<f64>,
        grad_is_pre_activation: bool,
    ) -> Result<(NetGrads, DMatrix<f64>)> {
        self.check_tape(tape)?;
        let top_tape = &tape.layers[top];
        if grad.shape() != top_tape.output.shape() {
            return Err(Error::TapeMismatch(format!(
                "gradient shape {:?} differs from layer output {:?}",
                grad.shape(),
                top_tape.output.shape()
            )));
        }
        let mut grads: Vec<LayerGrads> = self
            .layers
            .iter()
            .map(|l| LayerGrads {
                weights: DMatrix::zeros(l.out_dim(), l.in_dim()),
                bias: DVector::zeros(l.out_dim()),
                gamma: l.batch_norm.as_ref().map(|_| DVector::zeros(l.out_dim())),
                beta: l.batch_norm.as_ref().map(|_| DVector::zeros(l.out_dim())),
            })
            .collect();
        let mut upstream = grad.clone();
        for k in (0..=top).rev() {
            let layer = &self.layers[k];
            let lt = &tape.layers[k];
            let m = lt.input.nrows();
            let d_pre = if k == top && grad_is_pre_activation {
                upstream
            } else {
                let act = layer.activation;
                DMatrix::from_fn(m, layer.out_dim(), |i, j| {
                    upstream[(i, j)] * act.derivative(lt.pre_activation[(i, j)], lt.output[(i, j)])
                })
            };
            let d_z = match (&layer.batch_norm, &lt.normalized, &lt.inv_std) {
                (Some(bn), Some(xhat), Some(inv)) => {
                    let d_gamma = column_sums(&d_pre.component_mul(xhat));
                    let d_beta = column_sums(&d_pre);
                    let d_xhat =
                        DMatrix::from_fn(m, layer.out_dim(), |i, j| d_pre[(i, j)] * bn.gamma[j]);
                    let d_z = match tape.mode {
                        Mode::Train => {
                            let sum = column_sums(&d_xhat);
                            let sum_x = column_sums(&d_xhat.component_mul(xhat));
                            let mf = m as f64;
                            DMatrix::from_fn(m, layer.out_dim(), |i, j| {
                                inv[j] / mf
                                    * (mf * d_xhat[(i, j)] - sum[j] - xhat[(i, j)] * sum_x[j])
                            })
                        }
                        Mode::Eval => {
                            DMatrix::from_fn(m, layer.out_dim(), |i, j| d_xhat[(i, j)] * inv[j])
                        }
                    };
                    grads[k].gamma = Some(d_gamma);
                    grads[k].beta = Some(d_beta);
                    d_z
                }
                _ => d_pre,
            };
            grads[k].weights = d_z.tr_mul(&lt.input);
            grads[k].bias = column_sums(&d_z);
            upstream = &d_z * &layer.weights;
        }
        Ok((NetGrads { layers: grads }, upstream))
    }

    /// All trainable parameters: per layer `W` (column-major), `b`, then
    /// `gamma`, `beta` when batch-normalized.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
            if let Some(bn) = &l.batch_norm {
                out.extend_from_slice(bn.gamma.as_slice());
                out.extend_from_slice(bn.beta.as_slice());
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters supplied, network has {}",
                params.len(),
                self.n_params()
            )));
        }
        let mut rest = params;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for l in &mut self.layers {
            take(l.weights.as_mut_slice());
            take(l.bias.as_mut_slice());
            if let Some(bn) = &mut l.batch_norm {
                take(bn.gamma.as_mut_slice());
                take(bn.beta.as_mut_slice());
            }
        }
        Ok(())
    }

    /// One Adam update of every parameter.
    pub fn apply_adam(&mut self, grads: &NetGrads, state: &mut AdamState) -> Result<()> {
        let mut p = self.params();
        adam_step(&mut p, &grads.flatten(), state)?;
        self.set_params(&p)
    }

    pub(crate) fn write_to(&self, w: &mut Writer) {
        w.usize(self.layers.len());
        for l in &self.layers {
            w.usize(l.in_dim());
            w.usize(l.out_dim());
            let (code, alpha) = l.activation.code();
            w.u8(code);
            w.f64(alpha);
            w.f64s(l.weights.as_slice());
            w.f64s(l.bias.as_slice());
            match &l.batch_norm {
                None => w.u8(0),
                Some(bn) => {
                    w.u8(1);
                    w.f64(bn.momentum);
                    w.f64(bn.epsilon);
                    for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                        w.f64s(v.as_slice());
                    }
                }
            }
        }
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.usize()?;
        let mut layers = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let in_dim = r.usize()?;
            let out_dim = r.usize()?;
            let code = r.u8()?;
            let alpha = r.f64()?;
            let len = in_dim
                .checked_mul(out_dim)
                .ok_or_else(|| Error::InvalidContainer("layer size overflow".into()))?;
            let weights = DMatrix::from_column_slice(out_dim, in_dim, &r.f64s(len)?);
            let bias = DVector::from_vec(r.f64s(out_dim)?);
            let batch_norm = match r.u8()? {
                0 => None,
                1 => {
                    let momentum = r.f64()?;
                    let epsilon = r.f64()?;
                    let mut vs = (0..4)
                        .map(|_| r.f64s(out_dim).map(DVector::from_vec))
                        .collect::<Result<Vec<_>>>()?;
                    let running_var = vs.pop().unwrap();
                    let running_mean = vs.pop().unwrap();
                    let beta = vs.pop().unwrap();
                    let gamma = vs.pop().unwrap();
                    Some(BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                        momentum,
                        epsilon,
                    })
                }
                f => return Err(Error::InvalidContainer(format!("bad batch-norm flag {f}"))),
            };
            layers.push(Dense {
                weights,
                bias,
                activation: Activation::from_code(code, alpha)?,
                batch_norm,
            });
        }
        DenseNet::from_layers(layers).map_err(|e| Error::InvalidContainer(e.to_string()))
    }
}

#[cfg(test)]
mod tests;
