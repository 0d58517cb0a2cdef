//! Three-layer MLP feature extractor with a temporary 360-way head.
//!
//! Each hidden layer computes `ReLU(BN(x W + b))`. In training mode dropout
//! follows every hidden layer, so the head sees a dropped-out embedding;
//! the embedding returned by [`MlpParams::embed`] is the clean output of
//! the last layer in evaluation mode.
//!
//! The network is trained once (on the first task) with binary
//! cross-entropy against Gaussian-smoothed targets, Adam and a step
//! learning-rate decay, then frozen.

use ndarray::{Array1, Array2, ArrayD, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed::{self, Rng};
use crate::signal::LabeledSample;
use crate::{Error, Result, N_BINS};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// The learning rate is multiplied by `lr_decay` every `lr_step_epochs` epochs.
    pub lr_step_epochs: usize,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_step_epochs: 2,
            lr_decay: 0.5,
            epochs: 10,
            batch_size: 128,
            dropout: 0.1,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.lr_step_epochs == 0 {
            return Err(Error::InvalidArgument("epochs, batch size and lr step must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_step_epochs) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: BatchNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<HiddenLayer>,
    dropout: f64,
    frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub dense: Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub mlp: MlpParams,
    pub head: HeadParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || n.sample(rng))
}

impl MlpParams {
    /// Rebuilds parameters from stored layers (used by checkpoints).
    pub fn from_parts(layers: Vec<HiddenLayer>, dropout: f64, frozen: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].dense.weight.ncols() != w[1].dense.weight.nrows() {
                return Err(Error::Dimension {
                    context: "mlp layer chain",
                    expected: w[0].dense.weight.ncols(),
                    actual: w[1].dense.weight.nrows(),
                });
            }
        }
        Ok(Self {
            layers,
            dropout,
            frozen,
        })
    }

    pub fn layers(&self) -> &[HiddenLayer] {
        &self.layers
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].dense.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").dense.weight.ncols()
    }

    /// FNV-1a over the bit patterns of every tensor.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            let tensors = [
                l.dense.weight.iter().collect::<Vec<_>>(),
                l.dense.bias.iter().collect(),
                l.norm.scale.iter().collect(),
                l.norm.shift.iter().collect(),
                l.norm.running_mean.iter().collect(),
                l.norm.running_var.iter().collect(),
            ];
            for t in tensors {
                for v in t {
                    for b in v.to_bits().to_le_bytes() {
                        h ^= b as u64;
                        h = h.wrapping_mul(0x0100_0000_01b3);
                    }
                }
            }
        }
        h
    }

    /// Embeddings `N × h` in evaluation mode. Requires frozen parameters.
    pub fn embed(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if !self.frozen {
            return Err(Error::NotFrozen);
        }
        self.forward_eval(features)
    }

    fn forward_eval(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "mlp input",
                expected: self.input_dim(),
                actual: features.ncols(),
            });
        }
        let mut x = features.to_owned();
        for l in &self.layers {
            let mut z = x.dot(&l.dense.weight);
            z += &l.dense.bias;
            let n = &l.norm;
            Zip::from(z.rows_mut()).for_each(|mut row| {
                Zip::from(&mut row)
                    .and(&n.running_mean)
                    .and(&n.running_var)
                    .and(&n.scale)
                    .and(&n.shift)
                    .for_each(|v, &m, &var, &g, &b| {
                        *v = relu(g * (*v - m) / (var + BN_EPS).sqrt() + b);
                    });
            });
            x = z;
        }
        Ok(x)
    }
}

impl HeadParams {
    /// `N(0, 1/fan_in)` weights, zero bias.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::InvalidArgument("head dimensions must be positive".into()));
        }
        Ok(Self {
            dense: Dense {
                weight: normal_matrix(input, output, (1.0 / input as f64).sqrt(), rng),
                bias: Array1::zeros(output),
            },
        })
    }

    pub fn logits(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if h.ncols() != self.dense.weight.nrows() {
            return Err(Error::Dimension {
                context: "head input",
                expected: self.dense.weight.nrows(),
                actual: h.ncols(),
            });
        }
        Ok(h.dot(&self.dense.weight) + &self.dense.bias)
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![self.dense.weight.view_mut().into_dyn(), self.dense.bias.view_mut().into_dyn()]
    }
}

/// Cached activations of one training-mode layer.
#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    /// Post-BN, pre-ReLU values.
    pre_relu: Array2<f64>,
    /// Scaled keep mask, present when dropout is active.
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Output of the last hidden layer, before dropout.
    pub hidden: Array2<f64>,
    pub logits: Array2<f64>,
    mode: Mode,
    layers: Vec<LayerCache>,
    head_input: Array2<f64>,
}

impl ForwardPass {
    /// Batch mean and biased variance of each layer's pre-normalization
    /// activations (training mode only).
    pub fn batch_stats(&self) -> Vec<(&Array1<f64>, &Array1<f64>)> {
        self.layers.iter().map(|c| (&c.batch_mean, &c.batch_var)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

impl Gradients {
    /// Same order as [`Network::trainable_mut`].
    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.view().into_dyn());
            out.push(l.bias.view().into_dyn());
            out.push(l.scale.view().into_dyn());
            out.push(l.shift.view().into_dyn());
        }
        out.push(self.head_weight.view().into_dyn());
        out.push(self.head_bias.view().into_dyn());
        out
    }
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
}

impl Network {
    /// Fan-in normal initialization: `N(0, 2/fan_in)` for the ReLU layers,
    /// `N(0, 1/fan_in)` for the head. Biases zero, batch-norm identity.
    pub fn init(input: usize, hidden: &[usize], output: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        if input == 0 || output == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidArgument("network dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input;
        for &width in hidden {
            layers.push(HiddenLayer {
                dense: Dense {
                    weight: normal_matrix(fan_in, width, (2.0 / fan_in as f64).sqrt(), rng),
                    bias: Array1::zeros(width),
                },
                norm: BatchNorm {
                    scale: Array1::ones(width),
                    shift: Array1::zeros(width),
                    running_mean: Array1::zeros(width),
                    running_var: Array1::ones(width),
                },
            });
            fan_in = width;
        }
        let head = HeadParams::init(fan_in, output, rng)?;
        Ok(Self {
            mlp: MlpParams {
                layers,
                dropout,
                frozen: false,
            },
            head,
        })
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, mode: Mode, rng: &mut Rng) -> Result<ForwardPass> {
        if x.ncols() != self.mlp.input_dim() {
            return Err(Error::Dimension {
                context: "mlp input",
                expected: self.mlp.input_dim(),
                actual: x.ncols(),
            });
        }
        if mode == Mode::Eval {
            let hidden = self.mlp.forward_eval(x)?;
            let logits = self.head.logits(hidden.view())?;
            return Ok(ForwardPass {
                head_input: hidden.clone(),
                hidden,
                logits,
                mode,
                layers: Vec::new(),
            });
        }
        let b = x.nrows() as f64;
        let p = self.mlp.dropout;
        let mut input = x.to_owned();
        let mut caches = Vec::with_capacity(self.mlp.layers.len());
        let mut hidden = Array2::zeros((0, 0));
        let n_layers = self.mlp.layers.len();
        for (li, l) in self.mlp.layers.iter().enumerate() {
            let mut z = input.dot(&l.dense.weight);
            z += &l.dense.bias;
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &z - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / b;
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = &centered * &inv_std;
            let pre_relu = &xhat * &l.norm.scale + &l.norm.shift;
            let act = pre_relu.mapv(relu);
            let (next, mask) = if p > 0.0 {
                let m = dropout_mask(act.nrows(), act.ncols(), p, rng);
                (&act * &m, Some(m))
            } else {
                (act.clone(), None)
            };
            if li + 1 == n_layers {
                hidden = act;
            }
            caches.push(LayerCache {
                input,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                pre_relu,
                mask,
            });
            input = next;
        }
        let logits = self.head.logits(input.view())?;
        Ok(ForwardPass {
            hidden,
            logits,
            mode,
            layers: caches,
            head_input: input,
        })
    }

    /// Back-propagates `dlogits` through a training-mode pass.
    pub fn backward(&self, pass: &ForwardPass, dlogits: ArrayView2<'_, f64>) -> Result<Gradients> {
        if pass.mode != Mode::Train {
            return Err(Error::InvalidArgument("backward needs a training-mode pass".into()));
        }
        let head_weight = pass.head_input.t().dot(&dlogits);
        let head_bias = dlogits.sum_axis(Axis(0));
        let mut grad = dlogits.dot(&self.head.dense.weight.t());
        let mut layers = Vec::with_capacity(self.mlp.layers.len());
        for (l, c) in self.mlp.layers.iter().zip(&pass.layers).rev() {
            if let Some(m) = &c.mask {
                grad *= m;
            }
            Zip::from(&mut grad).and(&c.pre_relu).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            });
            let dscale = (&grad * &c.xhat).sum_axis(Axis(0));
            let dshift = grad.sum_axis(Axis(0));
            let dxhat = &grad * &l.norm.scale;
            let b = dxhat.nrows() as f64;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
            let dz = (&dxhat * b - &sum_dxhat - &(&c.xhat * &sum_dxhat_xhat)) * &(&c.inv_std / b);
            let dweight = c.input.t().dot(&dz);
            let dbias = dz.sum_axis(Axis(0));
            grad = dz.dot(&l.dense.weight.t());
            layers.push(LayerGrads {
                weight: dweight,
                bias: dbias,
                scale: dscale,
                shift: dshift,
            });
        }
        layers.reverse();
        Ok(Gradients {
            layers,
            head_weight,
            head_bias,
        })
    }

    /// Training-mode BCE loss and gradients for one batch.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        rng: &mut Rng,
    ) -> Result<(f64, Gradients, ForwardPass)> {
        let pass = self.forward(x, Mode::Train, rng)?;
        let (loss, dlogits) = bce_loss(pass.logits.view(), targets)?;
        let grads = self.backward(&pass, dlogits.view())?;
        Ok((loss, grads, pass))
    }

    /// Mutable views of every trainable tensor: per layer weight, bias,
    /// scale, shift, then the head weight and bias.
    pub fn trainable_mut(&mut self) -> Result<Vec<ArrayViewMutD<'_, f64>>> {
        if self.mlp.frozen {
            return Err(Error::InvalidArgument("cannot train a frozen MLP".into()));
        }
        let mut out = Vec::new();
        for l in &mut self.mlp.layers {
            out.push(l.dense.weight.view_mut().into_dyn());
            out.push(l.dense.bias.view_mut().into_dyn());
            out.push(l.norm.scale.view_mut().into_dyn());
            out.push(l.norm.shift.view_mut().into_dyn());
        }
        out.extend(self.head.tensors_mut());
        Ok(out)
    }

    fn update_running_stats(&mut self, pass: &ForwardPass, momentum: f64) {
        let b = pass.hidden.nrows() as f64;
        let unbias = if b > 1.0 { b / (b - 1.0) } else { 1.0 };
        for (l, c) in self.mlp.layers.iter_mut().zip(&pass.layers) {
            l.norm.running_mean = &l.norm.running_mean * (1.0 - momentum) + &c.batch_mean * momentum;
            l.norm.running_var = &l.norm.running_var * (1.0 - momentum) + &c.batch_var * (momentum * unbias);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// `f64::max` would map NaN to zero and hide a diverged forward pass.
fn relu(v: f64) -> f64 {
    if v < 0.0 { 0.0 } else { v }
}

/// Mean binary cross-entropy over batch and bins, with its gradient
/// `(σ(x) - z) / (batch · bins)`.
pub fn bce_loss(logits: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::Dimension {
            context: "bce targets",
            expected: logits.len(),
            actual: targets.len(),
        });
    }
    let count = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    Zip::from(&mut grad)
        .and(&logits)
        .and(&targets)
        .for_each(|g, &x, &z| {
            loss += x.max(0.0) - x * z + (-x.abs()).exp().ln_1p();
            *g = (sigmoid(x) - z) / count;
        });
    Ok((loss / count, grad))
}

struct Adam {
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: i32,
}

impl Adam {
    fn new(shapes: &[Vec<usize>]) -> Self {
        Self {
            m: shapes.iter().map(|s| ArrayD::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| ArrayD::zeros(s.clone())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: Vec<ArrayViewMutD<'_, f64>>, grads: &[ArrayViewD<'_, f64>], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for (((mut p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.adam_eps);
            });
        }
    }
}

/// Row-stacked features of `samples`.
pub fn feature_matrix(samples: &[LabeledSample]) -> Array2<f64> {
    let d = samples.first().map_or(0, |s| s.feature.len());
    let mut x = Array2::zeros((samples.len(), d));
    for (mut row, s) in x.rows_mut().into_iter().zip(samples) {
        row.assign(&ArrayView2::from_shape((1, d), s.feature.values()).expect("row").row(0));
    }
    x
}

/// Row-stacked Gaussian-smoothed targets of `samples`.
pub fn target_matrix(samples: &[LabeledSample]) -> Array2<f64> {
    let mut z = Array2::zeros((samples.len(), N_BINS));
    for (mut row, s) in z.rows_mut().into_iter().zip(samples) {
        row.assign(&Array1::from(s.smooth()));
    }
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: Network,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Trains MLP and head end to end on the first task, then freezes the MLP.
/// Batches of a single sample are skipped (batch statistics undefined).
pub fn train_task1(samples: &[LabeledSample], hidden: &[usize], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("task 1 needs at least two samples".into()));
    }
    let x = feature_matrix(samples);
    let z = target_matrix(samples);
    let mut init_rng = seed::rng(config.seed, &[seed::STREAM_BACKBONE, 0]);
    let mut net = Network::init(x.ncols(), hidden, N_BINS, config.dropout, &mut init_rng)?;
    let shapes: Vec<Vec<usize>> = net.trainable_mut()?.iter().map(|t| t.shape().to_vec()).collect();
    let mut adam = Adam::new(&shapes);
    let mut order_rng = seed::rng(config.seed, &[seed::STREAM_BACKBONE, 1]);
    let mut drop_rng = seed::rng(config.seed, &[seed::STREAM_BACKBONE, 2]);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let (mut total, mut seen) = (0.0, 0usize);
        for idx in batches(x.nrows(), config.batch_size, &mut order_rng) {
            let xb = x.select(Axis(0), &idx);
            let zb = z.select(Axis(0), &idx);
            let (loss, grads, pass) = net.loss_and_gradients(xb.view(), zb.view(), &mut drop_rng)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, loss });
            }
            adam.step(net.trainable_mut()?, &grads.tensors(), lr, config);
            net.update_running_stats(&pass, config.bn_momentum);
            total += loss * idx.len() as f64;
            seen += idx.len();
        }
        let mean = total / seen.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch: epoch + 1, loss: mean });
        }
        epoch_losses.push(mean);
    }
    net.mlp.freeze();
    Ok(TrainOutcome {
        network: net,
        epoch_losses,
    })
}

/// Fine-tunes only the head on fixed embeddings (no anti-forgetting term).
/// Dropout is applied to the embeddings as in end-to-end training.
pub fn train_head(
    head: &mut HeadParams,
    embeddings: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    config.validate()?;
    let shapes: Vec<Vec<usize>> = head.tensors_mut().iter().map(|t| t.shape().to_vec()).collect();
    let mut adam = Adam::new(&shapes);
    let mut order_rng = seed::rng(seed, &[seed::STREAM_HEAD, 0]);
    let mut drop_rng = seed::rng(seed, &[seed::STREAM_HEAD, 1]);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let (mut total, mut seen) = (0.0, 0usize);
        for idx in batches(embeddings.nrows(), config.batch_size, &mut order_rng) {
            let mut hb = embeddings.select(Axis(0), &idx);
            if config.dropout > 0.0 {
                hb *= &dropout_mask(hb.nrows(), hb.ncols(), config.dropout, &mut drop_rng);
            }
            let zb = targets.select(Axis(0), &idx);
            let logits = head.logits(hb.view())?;
            let (loss, dlogits) = bce_loss(logits.view(), zb.view())?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, loss });
            }
            let gw = hb.t().dot(&dlogits);
            let gb = dlogits.sum_axis(Axis(0));
            adam.step(head.tensors_mut(), &[gw.view().into_dyn(), gb.view().into_dyn()], lr, config);
            total += loss * idx.len() as f64;
            seen += idx.len();
        }
        losses.push(total / seen.max(1) as f64);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adir::argmax;
    use ndarray::array;

    fn rng(s: u64) -> Rng {
        seed::rng(s, &[])
    }

    fn random_matrix(r: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        let a = Network::init(306, &[1000], 360, 0.1, &mut rng(1)).unwrap();
        let b = Network::init(306, &[1000], 360, 0.1, &mut rng(1)).unwrap();
        assert_eq!(a, b);
        let w = &a.mlp.layers()[0].dense.weight;
        let std = (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        let want = (2.0 / 306.0f64).sqrt();
        assert!((std / want - 1.0).abs() < 0.2, "{std} vs {want}");
        let h = &a.head.dense.weight;
        let std = (h.iter().map(|v| v * v).sum::<f64>() / h.len() as f64).sqrt();
        assert!((std / (1.0 / 1000.0f64).sqrt() - 1.0).abs() < 0.2);
        let x = random_matrix(&mut rng(2), 8, 306);
        let out = a.forward(x.view(), Mode::Train, &mut rng(3)).unwrap();
        assert!(out.logits.iter().all(|v| v.is_finite()));
        assert!(Network::init(0, &[4], 3, 0.1, &mut rng(0)).is_err());
        assert!(Network::init(3, &[4], 3, 1.0, &mut rng(0)).is_err());
    }

    #[test]
    fn identity_layer_in_eval_mode_is_relu() {
        let mut net = Network::init(3, &[3], 2, 0.0, &mut rng(0)).unwrap();
        net.mlp.layers[0].dense.weight = Array2::eye(3);
        let x = array![[1.0, -2.0, 0.5], [-0.1, 3.0, 0.0]];
        let out = net.forward(x.view(), Mode::Eval, &mut rng(0)).unwrap();
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for (o, i) in out.hidden.iter().zip(x.iter()) {
            assert!((o - i.max(0.0) * scale).abs() < 1e-15);
        }
    }

    #[test]
    fn train_forward_repeatable_with_same_rng() {
        let net = Network::init(5, &[7, 7, 7], 4, 0.3, &mut rng(4)).unwrap();
        let x = random_matrix(&mut rng(5), 6, 5);
        let a = net.forward(x.view(), Mode::Train, &mut rng(9)).unwrap();
        let b = net.forward(x.view(), Mode::Train, &mut rng(9)).unwrap();
        assert_eq!(a.logits, b.logits);
        assert!(net.forward(random_matrix(&mut rng(5), 2, 4).view(), Mode::Eval, &mut rng(0)).is_err());
    }

    #[test]
    fn eval_is_per_sample() {
        let mut net = Network::init(10, &[16, 16, 16], 6, 0.1, &mut rng(6)).unwrap();
        // non-trivial running statistics
        for l in &mut net.mlp.layers {
            l.norm.running_mean.mapv_inplace(|_| 0.3);
            l.norm.running_var.mapv_inplace(|_| 2.0);
        }
        let x = random_matrix(&mut rng(7), 32, 10);
        let batched = net.forward(x.view(), Mode::Eval, &mut rng(0)).unwrap();
        for i in 0..32 {
            let single = net
                .forward(x.slice(ndarray::s![i..i + 1, ..]), Mode::Eval, &mut rng(0))
                .unwrap();
            for (a, b) in single.logits.row(0).iter().zip(batched.logits.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bce_analytic_cases() {
        let (loss, grad) = bce_loss(Array2::zeros((2, 3)).view(), Array2::from_elem((2, 3), 0.5).view()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(grad.iter().all(|&g| g == 0.0));
        let x = array![[0.3, -2.0]];
        let z = x.mapv(sigmoid);
        let (_, grad) = bce_loss(x.view(), z.view()).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-17));
        // large logits stay finite
        let (loss, _) = bce_loss(array![[800.0, -800.0]].view(), array![[0.0, 1.0]].view()).unwrap();
        assert!((loss - 800.0).abs() < 1e-9);
        assert!(bce_loss(array![[1.0]].view(), array![[1.0, 0.0]].view()).is_err());
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut r = rng(11);
        let x = random_matrix(&mut r, 3, 5) * 3.0;
        let z = random_matrix(&mut r, 3, 5).mapv(|v| (v + 1.0) / 2.0);
        let (_, grad) = bce_loss(x.view(), z.view()).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            for j in 0..5 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (bce_loss(xp.view(), z.view()).unwrap().0 - bce_loss(xm.view(), z.view()).unwrap().0) / (2.0 * h);
                let rel = (fd - grad[[i, j]]).abs() / fd.abs().max(grad[[i, j]].abs()).max(1e-12);
                assert!(rel <= 1e-4, "{rel}");
            }
        }
    }

    fn toy_samples() -> Vec<LabeledSample> {
        let g = crate::signal::ArrayGeometry::default();
        (0..10)
            .map(|i| {
                let doa = (i * 36) as u16;
                let f = crate::signal::synth_frame(&g, doa as f64, Some(20.0), 2048, &mut rng(100 + i as u64)).unwrap();
                LabeledSample::new(crate::signal::extract_features(&f, &g, 25).unwrap(), doa).unwrap()
            })
            .collect()
    }

    #[test]
    fn overfits_toy_task_and_freezes() {
        let samples = toy_samples();
        let cfg = TrainConfig {
            epochs: 200,
            lr_step_epochs: 1000,
            batch_size: 10,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train_task1(&samples, &[64, 64, 64], &cfg).unwrap();
        assert!(out.network.mlp.is_frozen());
        let x = feature_matrix(&samples);
        let h = out.network.mlp.embed(x.view()).unwrap();
        let logits = out.network.head.logits(h.view()).unwrap();
        for (row, s) in logits.rows().into_iter().zip(&samples) {
            let pred = argmax(&row.to_vec());
            assert!(crate::signal::circular_bin_distance(pred, s.class()) <= 5);
        }
        let first = out.epoch_losses[0];
        let last = *out.epoch_losses.last().unwrap();
        assert!(last < first);
        let again = train_task1(&samples, &[64, 64, 64], &cfg).unwrap();
        assert_eq!(again.epoch_losses, out.epoch_losses);
        let mut frozen = out.network.clone();
        assert!(frozen.trainable_mut().is_err());
    }

    #[test]
    fn loss_is_monotone_after_smoothing() {
        let samples = toy_samples();
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 4,
            seed: 8,
            ..TrainConfig::default()
        };
        let out = train_task1(&samples, &[32, 32, 32], &cfg).unwrap();
        let smooth: Vec<f64> = out.epoch_losses.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
        for w in smooth.windows(2) {
            assert!(w[1] <= w[0] * 1.02, "{:?}", out.epoch_losses);
        }
    }

    #[test]
    fn embed_requires_freeze() {
        let net = Network::init(306, &[16, 16, 16], 360, 0.1, &mut rng(0)).unwrap();
        let samples = toy_samples();
        let x = feature_matrix(&samples);
        assert!(matches!(net.mlp.embed(x.view()), Err(Error::NotFrozen)));
        let mut mlp = net.mlp.clone();
        mlp.freeze();
        let h = mlp.embed(x.view()).unwrap();
        assert_eq!(h.dim(), (10, 16));
        assert!(h.iter().all(|v| v.is_finite()));
        assert!(h.rows().into_iter().all(|r| r.iter().any(|&v| v != 0.0)));
        let dup = ndarray::concatenate![Axis(0), x.slice(ndarray::s![0..1, ..]), x.slice(ndarray::s![0..1, ..])];
        let hd = mlp.embed(dup.view()).unwrap();
        assert_eq!(hd.row(0), hd.row(1));
    }

    #[test]
    fn divergence_is_reported() {
        let mut samples = toy_samples();
        samples[0].feature = crate::signal::GccFeature::new(vec![f64::NAN; 306], 51).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 10,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_task1(&samples, &[8, 8, 8], &cfg),
            Err(Error::Divergence { epoch: 1, .. })
        ));
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(1), 1e-3);
        assert_eq!(cfg.lr_at(2), 5e-4);
        assert_eq!(cfg.lr_at(5), 2.5e-4);
    }
}
