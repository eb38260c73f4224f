//! Shifted penalties and binary-weight MLP training.
//!
//! A shifted penalty `p̃(x) = p(x − μ·sign(x))` vanishes at `x = ±μ` and
//! pulls latent weights toward `μ·{−1, +1}`. Two baselines from the BNN
//! literature are provided alongside: `||x| − μ|` and `(|x| − μ)²`.
//!
//! [`QuantNet`] is a small fully connected network whose hidden layers are
//! binarized in the forward pass (weights and input activations through
//! `sign`, outputs scaled by a trainable per-neuron `μ`). The first and last
//! layers stay full precision. Gradients through `sign` use the
//! straight-through estimator, zeroed where the pre-sign value exceeds 1 in
//! magnitude.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::penalty::{eval_unchecked, grad_unchecked, PenaltyParams};

/// Lower bound enforced on every scaling factor after each update.
pub const MU_FLOOR: f64 = 1e-4;
/// A weight counts as concentrated when it lies within this fraction of `μ` from `±μ`.
pub const CONCENTRATION_BAND: f64 = 0.1;

const STE_CLIP: f64 = 1.0;

/// `sign` with `sign(0) = +1`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Foothill,
    ModL1,
    ModL2,
}

impl PenaltyKind {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Foothill => "foothill",
            PenaltyKind::ModL1 => "mod_l1",
            PenaltyKind::ModL2 => "mod_l2",
        }
    }
}

/// A penalty kind plus foothill parameters. `mod_l1` and `mod_l2` ignore `params`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawShifted", into = "RawShifted")]
pub struct ShiftedPenalty {
    pub kind: PenaltyKind,
    pub params: PenaltyParams,
}

#[derive(Serialize, Deserialize)]
struct RawShifted {
    kind: PenaltyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
}

impl TryFrom<RawShifted> for ShiftedPenalty {
    type Error = Error;

    fn try_from(raw: RawShifted) -> Result<Self> {
        match (raw.kind, raw.alpha, raw.beta) {
            (PenaltyKind::Foothill, Some(a), Some(b)) => Ok(Self::foothill(PenaltyParams::new(a, b)?)),
            (PenaltyKind::Foothill, _, _) => {
                Err(Error::InvalidArgument("foothill penalty needs alpha and beta".into()))
            }
            (kind, _, _) => Ok(Self::baseline(kind)),
        }
    }
}

impl From<ShiftedPenalty> for RawShifted {
    fn from(p: ShiftedPenalty) -> Self {
        let foothill = p.kind == PenaltyKind::Foothill;
        RawShifted {
            kind: p.kind,
            alpha: foothill.then(|| p.params.alpha()),
            beta: foothill.then(|| p.params.beta()),
        }
    }
}

impl ShiftedPenalty {
    pub fn foothill(params: PenaltyParams) -> Self {
        Self {
            kind: PenaltyKind::Foothill,
            params,
        }
    }

    pub fn baseline(kind: PenaltyKind) -> Self {
        Self {
            kind,
            params: PenaltyParams::new(1.0, 1.0).expect("unit params are valid"),
        }
    }

    #[inline]
    fn value(&self, x: f64, mu: f64) -> f64 {
        match self.kind {
            PenaltyKind::Foothill => eval_unchecked(&self.params, x - mu * sign(x)),
            PenaltyKind::ModL1 => (x.abs() - mu).abs(),
            PenaltyKind::ModL2 => {
                let d = x.abs() - mu;
                d * d
            }
        }
    }

    #[inline]
    fn gradient(&self, x: f64, mu: f64) -> (f64, f64) {
        let s = sign(x);
        match self.kind {
            PenaltyKind::Foothill => {
                let g = grad_unchecked(&self.params, x - mu * s);
                (g, -s * g)
            }
            PenaltyKind::ModL1 => {
                let d = x.abs() - mu;
                if d == 0.0 {
                    (0.0, 0.0)
                } else {
                    let sd = d.signum();
                    (sd * s, -sd)
                }
            }
            PenaltyKind::ModL2 => {
                let d = x.abs() - mu;
                (2.0 * d * s, -2.0 * d)
            }
        }
    }
}

fn check_shift(x: f64, mu: f64) -> Result<()> {
    ensure_finite("x", x)?;
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mu must be positive and finite, got {mu}"
        )));
    }
    Ok(())
}

/// Value of the shifted penalty at `x` for scaling factor `mu`. Zero at `±mu`.
pub fn shifted_eval(pen: &ShiftedPenalty, x: f64, mu: f64) -> Result<f64> {
    check_shift(x, mu)?;
    Ok(pen.value(x, mu))
}

/// Partial derivatives `(∂/∂x, ∂/∂μ)` of the shifted penalty.
///
/// At the kinks of `mod_l1` the zero subgradient is returned.
pub fn shifted_grad(pen: &ShiftedPenalty, x: f64, mu: f64) -> Result<(f64, f64)> {
    check_shift(x, mu)?;
    Ok(pen.gradient(x, mu))
}

/// Penalty weight for a zero-based epoch index: `lambda_base · ln(epoch + 1)`.
pub fn lambda_schedule(lambda_base: f64, epoch: usize) -> f64 {
    lambda_base * ((epoch + 1) as f64).ln()
}

/// Labeled feature vectors with integer classes starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<DVector<f64>>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let n_features = features[0].len();
        if n_features == 0 {
            return Err(Error::Data("rows need at least one feature".into()));
        }
        if features.iter().any(|f| f.len() != n_features) {
            return Err(Error::Data("rows have differing feature counts".into()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("features must be finite".into()));
        }
        let n_classes = labels.iter().max().copied().unwrap_or(0) + 1;
        Ok(Self {
            features: features.into_iter().map(DVector::from_vec).collect(),
            labels,
            n_features,
            n_classes,
        })
    }

    /// Two isotropic unit-variance Gaussian classes whose means are
    /// `separation` apart along the diagonal. Classes alternate by index.
    pub fn two_gaussians(n: usize, separation: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("need at least two points".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let offset = 0.5 * separation / 2f64.sqrt();
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            let center = if label == 0 { -offset } else { offset };
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            features.push(vec![center + a, center + b]);
            labels.push(label);
        }
        Self::new(features, labels)
    }

    /// Reads CSV with header `label,f1,...,fp`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("label") {
            return Err(Error::Data("first column must be named `label`".into()));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Data(format!("row {} has {} fields", row + 1, record.len())));
            }
            let label = record[0]
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("row {}: bad label `{}`", row + 1, &record[0])))?;
            let f = record
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Data(format!("row {}: cannot parse `{s}`", row + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            labels.push(label);
            features.push(f);
        }
        Self::new(features, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// Latent real-valued weights, `outputs × inputs`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// Per-output-neuron scaling factor. Only used by binarized layers.
    pub mu: DVector<f64>,
    pub binarized: bool,
}

/// How binarized layers are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forward {
    /// `μ ⊙ (sign(W)·sign(a)) + b`, the network actually trained.
    Binary,
    /// `W·sign(a) + b` with the real latent weights.
    Latent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantNet {
    layers: Vec<DenseLayer>,
}

impl QuantNet {
    /// Builds a network with the given layer widths, e.g. `[2, 16, 16, 2]`.
    ///
    /// Weights are drawn from `N(0, 1/fan_in)`, biases start at zero and each
    /// binarized neuron's `μ` is the mean absolute value of its weight row.
    /// Every layer except the first and the last is binarized.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let n_layers = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                });
                let binarized = l > 0 && l + 1 < n_layers;
                let mu = if binarized {
                    DVector::from_fn(fan_out, |i, _| {
                        let m = weights.row(i).iter().map(|v| v.abs()).sum::<f64>() / fan_in as f64;
                        m.max(MU_FLOOR)
                    })
                } else {
                    DVector::from_element(fan_out, 1.0)
                };
                DenseLayer {
                    weights,
                    bias: DVector::zeros(fan_out),
                    mu,
                    binarized,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            let out = layer.weights.nrows();
            if layer.bias.len() != out || layer.mu.len() != out {
                return Err(Error::InvalidArgument(format!("layer {l}: bias/mu length mismatch")));
            }
            if l > 0 && layers[l - 1].weights.nrows() != layer.weights.ncols() {
                return Err(Error::InvalidArgument(format!("layer {l}: input width mismatch")));
            }
            if layer.mu.iter().any(|&m| m.is_nan() || m <= 0.0) {
                return Err(Error::InvalidArgument(format!("layer {l}: mu must be positive")));
            }
        }
        let last = layers.len() - 1;
        if layers[0].binarized || layers[last].binarized {
            return Err(Error::InvalidArgument(
                "first and last layers must stay full precision".into(),
            ));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    fn forward_trace(&self, input: &DVector<f64>, mode: Forward) -> ForwardTrace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut binary_sums = Vec::with_capacity(self.layers.len());
        let mut a = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = if layer.binarized {
                let a_bin = a.map(sign);
                let s = match mode {
                    Forward::Binary => layer.weights.map(sign) * &a_bin,
                    Forward::Latent => &layer.weights * &a_bin,
                };
                let z = match mode {
                    Forward::Binary => s.component_mul(&layer.mu) + &layer.bias,
                    Forward::Latent => &s + &layer.bias,
                };
                binary_sums.push(Some(s));
                inputs.push(a_bin);
                z
            } else {
                binary_sums.push(None);
                let z = &layer.weights * &a + &layer.bias;
                inputs.push(a);
                z
            };
            a = if l == last { z.clone() } else { z.map(sign) };
            pre.push(z);
        }
        ForwardTrace {
            inputs,
            pre,
            binary_sums,
        }
    }

    /// Output logits.
    pub fn predict_logits(&self, input: &[f64], mode: Forward) -> DVector<f64> {
        let x = DVector::from_column_slice(input);
        let trace = self.forward_trace(&x, mode);
        trace.pre.last().cloned().expect("at least one layer")
    }

    fn classify(&self, input: &DVector<f64>, mode: Forward) -> usize {
        let trace = self.forward_trace(input, mode);
        argmax(trace.pre.last().expect("at least one layer"))
    }

    /// Fraction of binarized-layer weights within `CONCENTRATION_BAND·μᵢ` of `±μᵢ`.
    pub fn concentration(&self) -> f64 {
        let mut close = 0usize;
        let mut total = 0usize;
        for layer in self.layers.iter().filter(|l| l.binarized) {
            for (i, row) in layer.weights.row_iter().enumerate() {
                let mu = layer.mu[i];
                for &w in row.iter() {
                    total += 1;
                    if (w - mu).abs().min((w + mu).abs()) < CONCENTRATION_BAND * mu {
                        close += 1;
                    }
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            close as f64 / total as f64
        }
    }

    /// Scaling factors of the binarized layers, in layer order.
    pub fn binarized_mu(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .filter(|l| l.binarized)
            .map(|l| l.mu.iter().copied().collect())
            .collect()
    }
}

struct ForwardTrace {
    /// Input seen by each layer (already binarized for binarized layers).
    inputs: Vec<DVector<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<DVector<f64>>,
    /// `sign(W)·sign(a)` for binarized layers.
    binary_sums: Vec<Option<DVector<f64>>>,
}

fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Copy of `net` with every binarized-layer weight replaced by `μᵢ·sign(wᵢⱼ)`.
pub fn binarize_snapshot(net: &QuantNet) -> QuantNet {
    let mut out = net.clone();
    for layer in out.layers.iter_mut().filter(|l| l.binarized) {
        for (i, mut row) in layer.weights.row_iter_mut().enumerate() {
            let mu = layer.mu[i];
            for w in row.iter_mut() {
                *w = mu * sign(*w);
            }
        }
    }
    out
}

pub fn accuracy(net: &QuantNet, data: &Dataset, mode: Forward) -> f64 {
    let correct = data
        .features
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| net.classify(x, mode) == y)
        .count();
    correct as f64 / data.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Constant `c` of the penalty schedule `λ(t) = c·ln(t + 1)`.
    pub lambda_base: f64,
    pub seed: u64,
    pub penalty: ShiftedPenalty,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(self.lambda_base.is_finite() && self.lambda_base >= 0.0) {
            return Err(Error::InvalidArgument("lambda_base must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantReport {
    pub penalty: ShiftedPenalty,
    /// Penalty weight used during each epoch.
    pub lambda: Vec<f64>,
    /// Mean cross-entropy over each epoch's minibatches.
    pub loss: Vec<f64>,
    /// Accuracy of the binary forward pass after each epoch.
    pub train_accuracy: Vec<f64>,
    /// Accuracy with the real latent weights after each epoch.
    pub latent_accuracy: Vec<f64>,
    pub concentration: Vec<f64>,
    /// Accuracy of [`binarize_snapshot`] of the final network.
    pub quantized_accuracy: f64,
    pub final_mu: Vec<Vec<f64>>,
}

impl QuantReport {
    pub fn final_train_accuracy(&self) -> f64 {
        *self.train_accuracy.last().expect("at least one epoch")
    }

    pub fn final_latent_accuracy(&self) -> f64 {
        *self.latent_accuracy.last().expect("at least one epoch")
    }

    pub fn final_concentration(&self) -> f64 {
        *self.concentration.last().expect("at least one epoch")
    }

    /// Per-epoch rows `epoch,lambda,train_acc,concentration`.
    pub fn write_epoch_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "lambda", "train_acc", "concentration"])?;
        for epoch in 0..self.lambda.len() {
            w.write_record([
                epoch.to_string(),
                self.lambda[epoch].to_string(),
                self.train_accuracy[epoch].to_string(),
                self.concentration[epoch].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Gradients {
    weights: Vec<DMatrix<f64>>,
    bias: Vec<DVector<f64>>,
    mu: Vec<DVector<f64>>,
}

impl Gradients {
    fn zeros(net: &QuantNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
            bias: net.layers.iter().map(|l| DVector::zeros(l.bias.len())).collect(),
            mu: net.layers.iter().map(|l| DVector::zeros(l.mu.len())).collect(),
        }
    }
}

/// Accumulates the cross-entropy gradient of one sample; returns its loss.
fn backprop(net: &QuantNet, x: &DVector<f64>, label: usize, grads: &mut Gradients) -> f64 {
    let trace = net.forward_trace(x, Forward::Binary);
    let logits = trace.pre.last().expect("at least one layer");
    let max = logits.max();
    let exp = logits.map(|v| (v - max).exp());
    let total = exp.sum();
    let loss = -((exp[label] / total).ln());

    let mut delta = exp / total;
    delta[label] -= 1.0;

    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let input = &trace.inputs[l];
        grads.bias[l] += &delta;
        let upstream = if layer.binarized {
            let sums = trace.binary_sums[l].as_ref().expect("binarized layers record sums");
            grads.mu[l] += delta.component_mul(sums);
            let scaled = delta.component_mul(&layer.mu);
            let signs = layer.weights.map(sign);
            for i in 0..layer.weights.nrows() {
                for j in 0..layer.weights.ncols() {
                    if layer.weights[(i, j)].abs() <= STE_CLIP {
                        grads.weights[l][(i, j)] += scaled[i] * input[j];
                    }
                }
            }
            signs.tr_mul(&scaled)
        } else {
            grads.weights[l] += &delta * input.transpose();
            layer.weights.tr_mul(&delta)
        };
        if l > 0 {
            // straight-through estimator for the sign activation of layer l-1
            let z_prev = &trace.pre[l - 1];
            delta = upstream.zip_map(z_prev, |g, z| if z.abs() <= STE_CLIP { g } else { 0.0 });
        }
    }
    loss
}

/// Trains `net` with minibatch SGD on cross-entropy plus `λ(t)·Σ p̃(W)`
/// over binarized layers, where `λ(t) = lambda_base·ln(t + 1)`.
///
/// Each scaling factor receives the forward-path gradient plus
/// `λ(t)·Σⱼ ∂p̃/∂μ` over its weight row, and is clamped at [`MU_FLOOR`].
/// Minibatch order is shuffled per epoch from `cfg.seed`.
pub fn train(data: &Dataset, net: &mut QuantNet, cfg: &TrainConfig) -> Result<QuantReport> {
    cfg.validate()?;
    if data.n_features() != net.input_width() {
        return Err(Error::InvalidArgument(format!(
            "data has {} features but the network expects {}",
            data.n_features(),
            net.input_width()
        )));
    }
    if data.n_classes() > net.output_width() {
        return Err(Error::InvalidArgument(format!(
            "data has {} classes but the network has {} outputs",
            data.n_classes(),
            net.output_width()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = QuantReport {
        penalty: cfg.penalty,
        lambda: Vec::with_capacity(cfg.epochs),
        loss: Vec::with_capacity(cfg.epochs),
        train_accuracy: Vec::with_capacity(cfg.epochs),
        latent_accuracy: Vec::with_capacity(cfg.epochs),
        concentration: Vec::with_capacity(cfg.epochs),
        quantized_accuracy: 0.0,
        final_mu: Vec::new(),
    };

    for epoch in 0..cfg.epochs {
        let lambda = lambda_schedule(cfg.lambda_base, epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros(net);
            let mut batch_loss = 0.0;
            for &idx in batch {
                batch_loss += backprop(net, &data.features[idx], data.labels[idx], &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            epoch_loss += batch_loss * scale;
            batches += 1;
            apply_update(net, &grads, scale, lambda, cfg);
        }
        let mean_loss = epoch_loss / batches as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        report.lambda.push(lambda);
        report.loss.push(mean_loss);
        report.train_accuracy.push(accuracy(net, data, Forward::Binary));
        report.latent_accuracy.push(accuracy(net, data, Forward::Latent));
        report.concentration.push(net.concentration());
    }

    report.quantized_accuracy = accuracy(&binarize_snapshot(net), data, Forward::Latent);
    report.final_mu = net.binarized_mu();
    Ok(report)
}

fn apply_update(net: &mut QuantNet, grads: &Gradients, scale: f64, lambda: f64, cfg: &TrainConfig) {
    let lr = cfg.learning_rate;
    for (l, layer) in net.layers.iter_mut().enumerate() {
        layer.bias.axpy(-lr * scale, &grads.bias[l], 1.0);
        if !layer.binarized {
            layer.weights -= &grads.weights[l] * (lr * scale);
            continue;
        }
        for i in 0..layer.weights.nrows() {
            let mu = layer.mu[i];
            let mut mu_penalty = 0.0;
            for j in 0..layer.weights.ncols() {
                let w = layer.weights[(i, j)];
                let (d_dx, d_dmu) = cfg.penalty.gradient(w, mu);
                mu_penalty += d_dmu;
                layer.weights[(i, j)] = w - lr * (scale * grads.weights[l][(i, j)] + lambda * d_dx);
            }
            let step = scale * grads.mu[l][i] + lambda * mu_penalty;
            layer.mu[i] = (mu - lr * step).max(MU_FLOOR);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn foothill(a: f64, b: f64) -> ShiftedPenalty {
        ShiftedPenalty::foothill(PenaltyParams::new(a, b).unwrap())
    }

    #[test]
    fn sign_convention() {
        assert_eq!(sign(0.0), 1.0);
        assert_eq!(sign(-0.0), 1.0);
        assert_eq!(sign(-2.0), -1.0);
    }

    #[test]
    fn shifted_eval_examples() {
        assert_eq!(shifted_eval(&foothill(16.0, 0.125), 1.5, 1.5).unwrap(), 0.0);
        let l1 = ShiftedPenalty::baseline(PenaltyKind::ModL1);
        assert_eq!(shifted_eval(&l1, -0.5, 1.5).unwrap(), 1.0);
        let v = shifted_eval(&foothill(1.0, 2.0), 0.0, 1.0).unwrap();
        assert!((v - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn shifted_grad_examples() {
        assert_eq!(shifted_grad(&foothill(1.0, 1.0), 1.3, 1.3).unwrap(), (0.0, 0.0));
        let (dx, dmu) = shifted_grad(&foothill(1.0, 1.0), 3.0, 1.0).unwrap();
        assert!((dx - 1.181_568_497_569_791).abs() < 1e-14);
        assert!((dmu + 1.181_568_497_569_791).abs() < 1e-14);
        let l2 = ShiftedPenalty::baseline(PenaltyKind::ModL2);
        assert_eq!(shifted_grad(&l2, 2.0, 1.0).unwrap(), (2.0, -2.0));
        let l1 = ShiftedPenalty::baseline(PenaltyKind::ModL1);
        assert_eq!(shifted_grad(&l1, -1.0, 1.0).unwrap(), (0.0, 0.0));
        assert_eq!(shifted_grad(&l1, -2.0, 1.0).unwrap(), (-1.0, -1.0));
    }

    #[test]
    fn mu_must_be_positive() {
        for kind in [PenaltyKind::ModL1, PenaltyKind::ModL2] {
            let pen = ShiftedPenalty::baseline(kind);
            assert!(matches!(shifted_eval(&pen, 1.0, 0.0), Err(Error::InvalidArgument(_))));
            assert!(shifted_grad(&pen, 1.0, -1.0).is_err());
        }
        assert!(shifted_eval(&foothill(1.0, 1.0), f64::NAN, 1.0).is_err());
    }

    #[test]
    fn schedule_starts_at_zero() {
        assert_eq!(lambda_schedule(1e-6, 0), 0.0);
        let mut prev = 0.0;
        for t in 1..200 {
            let l = lambda_schedule(1e-6, t);
            assert!(l > prev);
            prev = l;
        }
    }

    #[test]
    fn snapshot_examples() {
        let layer = |w: &[f64], mu: f64, binarized| DenseLayer {
            weights: DMatrix::from_row_slice(1, w.len(), w),
            bias: DVector::zeros(1),
            mu: DVector::from_element(1, mu),
            binarized,
        };
        let net = QuantNet::from_layers(vec![
            layer(&[1.0, 1.0], 1.0, false),
            layer(&[0.9], 1.0, true),
            layer(&[1.0], 1.0, false),
        ])
        .unwrap();
        let snap = binarize_snapshot(&net);
        assert_eq!(snap.layers()[1].weights[(0, 0)], 1.0);

        let mut row = net.clone();
        row.layers[1] = DenseLayer {
            weights: DMatrix::from_row_slice(2, 1, &[0.9, -1.1]),
            bias: DVector::zeros(2),
            mu: DVector::from_element(2, 1.0),
            binarized: true,
        };
        let flat = binarize_snapshot(&QuantNet {
            layers: vec![row.layers[1].clone()],
        });
        assert_eq!(flat.layers()[0].weights.as_slice(), &[1.0, -1.0]);

        let at_mu = binarize_snapshot(&snap);
        assert_eq!(at_mu, snap);
    }

    #[test]
    fn network_shape_rules() {
        let net = QuantNet::new(&[2, 16, 16, 2], 7).unwrap();
        let flags: Vec<bool> = net.layers().iter().map(|l| l.binarized).collect();
        assert_eq!(flags, vec![false, true, false]);
        assert!(net.layers()[1].mu.iter().all(|&m| m > 0.0));
        assert!(QuantNet::new(&[2], 7).is_err());
        assert!(QuantNet::new(&[2, 0, 2], 7).is_err());

        let mut layers = net.layers().to_vec();
        layers[0].binarized = true;
        assert!(QuantNet::from_layers(layers).is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let json = r#"{"epochs":3,"batch_size":8,"learning_rate":0.1,"lambda_base":0.01,"seed":5,
                       "penalty":{"kind":"foothill","alpha":0.5,"beta":50}}"#;
        let cfg: TrainConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.penalty, foothill(0.5, 50.0));
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);

        let l1: ShiftedPenalty = serde_json::from_str(r#"{"kind":"mod_l1"}"#).unwrap();
        assert_eq!(l1.kind, PenaltyKind::ModL1);
        assert!(serde_json::from_str::<ShiftedPenalty>(r#"{"kind":"foothill","alpha":1}"#).is_err());
        assert!(serde_json::from_str::<ShiftedPenalty>(r#"{"kind":"foothill","alpha":1,"beta":0}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let base = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 0.1,
            lambda_base: 0.0,
            seed: 1,
            penalty: foothill(1.0, 1.0),
        };
        assert!(base.validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..base }.validate().is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..base
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lambda_base: -1.0,
            ..base
        }
        .validate()
        .is_err());
    }

    #[test]
    fn dataset_csv() {
        let data = Dataset::from_csv("label,f1,f2\n0,1.0,2.0\n1,-1.0,0.5\n".as_bytes()).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.n_features(), 2);
        assert_eq!(data.n_classes(), 2);
        assert!(Dataset::from_csv("f1,label\n1,0\n".as_bytes()).is_err());
        assert!(Dataset::from_csv("label,f1\n-1,0\n".as_bytes()).is_err());
        assert!(Dataset::from_csv("label,f1\n".as_bytes()).is_err());
    }

    #[test]
    fn train_rejects_mismatched_data() {
        let data = Dataset::two_gaussians(20, 4.0, 1).unwrap();
        let mut net = QuantNet::new(&[3, 4, 4, 2], 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 0.1,
            lambda_base: 0.0,
            seed: 1,
            penalty: foothill(1.0, 1.0),
        };
        assert!(train(&data, &mut net, &cfg).is_err());
    }

    #[test]
    fn diverging_training_reports_epoch() {
        let data = Dataset::new(vec![vec![1e300, 1e300], vec![1e300, 1e300]], vec![0, 1]).unwrap();
        let mut net = QuantNet::new(&[2, 2], 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 1e10,
            lambda_base: 0.0,
            seed: 1,
            penalty: foothill(1.0, 1.0),
        };
        assert!(matches!(train(&data, &mut net, &cfg), Err(Error::NonFiniteLoss { .. })));
    }
}
