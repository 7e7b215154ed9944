//! Minimal fully connected network: forward pass, cross-entropy, accuracy
//! and a minibatch SGD trainer.
//!
//! Parameter layout inside a flat [`WeightVector`], per layer in order:
//! the `out x in` weight matrix row-major (`w[o * in + i]`), then the `out`
//! biases. The activation is applied after every layer except the last, so
//! the network emits raw logits.
//!
//! Weights are stored as `f32`; every reduction accumulates in `f64` with a
//! fixed left-to-right order so results are bit-stable.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::checksum::digest64;
use crate::error::{Result, SoupError};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Identity => 3,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
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
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        };
        f.write_str(s)
    }
}

/// 8-byte checksum binding weights to an architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchHash(pub u64);

impl fmt::Display for ArchHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawArch")]
pub struct ArchDescriptor {
    layer_widths: Vec<usize>,
    activation: Activation,
}

#[derive(Deserialize)]
struct RawArch {
    layer_widths: Vec<usize>,
    activation: Activation,
}

impl TryFrom<RawArch> for ArchDescriptor {
    type Error = SoupError;

    fn try_from(raw: RawArch) -> Result<Self> {
        ArchDescriptor::new(raw.layer_widths, raw.activation)
    }
}

/// One affine layer's slice of the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerShape {
    fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }
}

impl ArchDescriptor {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(SoupError::InvalidArch(format!(
                "need at least 2 layer widths (input and output), got {}",
                layer_widths.len()
            )));
        }
        if let Some(pos) = layer_widths.iter().position(|&w| w == 0) {
            return Err(SoupError::InvalidArch(format!(
                "layer width at position {pos} is zero"
            )));
        }
        Ok(Self {
            layer_widths,
            activation,
        })
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Total parameter count `sum (w_i + 1) * w_{i+1}`.
    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn hash(&self) -> ArchHash {
        let mut bytes = Vec::with_capacity(17 + 8 * self.layer_widths.len());
        bytes.extend_from_slice(b"SOUPARCH");
        bytes.push(self.activation.tag());
        bytes.extend_from_slice(&(self.layer_widths.len() as u64).to_le_bytes());
        for &w in &self.layer_widths {
            bytes.extend_from_slice(&(w as u64).to_le_bytes());
        }
        ArchHash(digest64(&bytes))
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += (w[0] + 1) * w[1];
                shape
            })
            .collect()
    }

    fn check_params(&self, len: usize) -> Result<()> {
        let expected = self.param_count();
        if len != expected {
            return Err(SoupError::DimensionMismatch {
                what: "parameter count M",
                expected,
                actual: len,
            });
        }
        Ok(())
    }

    fn check_inputs(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(SoupError::DimensionMismatch {
                what: "input feature count F",
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }
}

/// Flat `f32` parameter vector of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f32>,
    arch_hash: ArchHash,
}

impl WeightVector {
    pub fn new(arch: &ArchDescriptor, values: Vec<f32>) -> Result<Self> {
        arch.check_params(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SoupError::NonFinite(format!("weight {i} is {}", values[i])));
        }
        Ok(Self {
            values,
            arch_hash: arch.hash(),
        })
    }

    pub fn zeros(arch: &ArchDescriptor) -> Self {
        Self {
            values: vec![0.0; arch.param_count()],
            arch_hash: arch.hash(),
        }
    }

    /// Glorot-uniform weights and zero biases drawn from a seeded SplitMix64.
    pub fn random_init(arch: &ArchDescriptor, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut values = vec![0.0f32; arch.param_count()];
        for layer in arch.layers() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for v in &mut values[layer.offset..layer.bias_offset()] {
                *v = rng.random_range(-limit..limit) as f32;
            }
        }
        Self {
            values,
            arch_hash: arch.hash(),
        }
    }

    pub(crate) fn from_raw(values: Vec<f32>, arch_hash: ArchHash) -> Self {
        Self { values, arch_hash }
    }

    pub fn from_f64(arch: &ArchDescriptor, values: &[f64]) -> Result<Self> {
        Self::new(arch, values.iter().map(|&v| v as f32).collect())
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn arch_hash(&self) -> ArchHash {
        self.arch_hash
    }

    pub(crate) fn check_arch(&self, arch: &ArchDescriptor) -> Result<()> {
        let expected = arch.hash();
        if self.arch_hash != expected {
            return Err(SoupError::ArchHashMismatch {
                expected: expected.0,
                found: self.arch_hash.0,
            });
        }
        arch.check_params(self.values.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Pretrain,
    Finetune,
    Validation,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [
        SplitTag::Pretrain,
        SplitTag::Finetune,
        SplitTag::Validation,
        SplitTag::Test,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Pretrain => "pretrain",
            SplitTag::Finetune => "finetune",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Labelled examples: `D x F` features, `D` labels in `[0, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix<f32>,
    labels: Vec<u32>,
    n_classes: usize,
    split: SplitTag,
}

impl Dataset {
    pub fn new(
        features: Matrix<f32>,
        labels: Vec<u32>,
        n_classes: usize,
        split: SplitTag,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(SoupError::EmptyDataset);
        }
        if features.rows() != labels.len() {
            return Err(SoupError::DimensionMismatch {
                what: "dataset rows vs labels",
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if let Some(d) = labels.iter().position(|&y| y as usize >= n_classes) {
            return Err(SoupError::InvalidInput(format!(
                "label {} at row {d} is not below class count {n_classes}",
                labels[d]
            )));
        }
        if let Some(i) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(SoupError::NonFinite(format!(
                "feature at flat index {i} is not finite"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            split,
        })
    }

    pub fn features(&self) -> &Matrix<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub input_noise_std: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SoupError::InvalidInput(format!("hyperparams: {msg}")));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be finite and > 0");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and >= 0");
        }
        if !(self.input_noise_std.is_finite() && self.input_noise_std >= 0.0) {
            return bad("input_noise_std must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// Forward pass over `f64` parameters and a row-major `rows x F` input
/// buffer. Returns row-major `rows x C` logits.
pub fn forward_f64(arch: &ArchDescriptor, params: &[f64], inputs: &[f64]) -> Result<Vec<f64>> {
    arch.check_params(params.len())?;
    let f = arch.input_dim();
    if inputs.len() % f != 0 {
        return Err(SoupError::DimensionMismatch {
            what: "input buffer length (multiple of F)",
            expected: f * (inputs.len() / f + 1),
            actual: inputs.len(),
        });
    }
    let layers = arch.layers();
    let rows = inputs.len() / f;
    let mut out = Vec::with_capacity(rows * arch.output_dim());
    let mut cur = Vec::new();
    let mut next = Vec::new();
    for x in inputs.chunks_exact(f) {
        cur.clear();
        cur.extend_from_slice(x);
        for (li, layer) in layers.iter().enumerate() {
            affine(params, layer, &cur, &mut next);
            if li + 1 < layers.len() {
                for v in &mut next {
                    *v = arch.activation.apply(*v);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.extend_from_slice(&cur);
    }
    Ok(out)
}

#[inline]
fn affine(params: &[f64], layer: &LayerShape, input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let w = &params[layer.offset..layer.bias_offset()];
    let b = &params[layer.bias_offset()..layer.bias_offset() + layer.fan_out];
    for o in 0..layer.fan_out {
        let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
        let mut acc = 0.0f64;
        for (wi, xi) in row.iter().zip(input) {
            acc += wi * xi;
        }
        out.push(acc + b[o]);
    }
}

/// Raw logits of `w` on every row of `inputs`.
pub fn forward(arch: &ArchDescriptor, w: &WeightVector, inputs: &Matrix<f32>) -> Result<Matrix<f32>> {
    w.check_arch(arch)?;
    arch.check_inputs(inputs.cols())?;
    let params = w.to_f64();
    let x: Vec<f64> = inputs.as_slice().iter().map(|&v| v as f64).collect();
    let logits = forward_f64(arch, &params, &x)?;
    Matrix::from_vec(
        inputs.rows(),
        arch.output_dim(),
        logits.into_iter().map(|v| v as f32).collect(),
    )
}

fn check_labels(rows: usize, cols: usize, labels: &[u32]) -> Result<()> {
    if rows == 0 {
        return Err(SoupError::EmptyDataset);
    }
    if labels.len() != rows {
        return Err(SoupError::DimensionMismatch {
            what: "label count",
            expected: rows,
            actual: labels.len(),
        });
    }
    if let Some(d) = labels.iter().position(|&y| y as usize >= cols) {
        return Err(SoupError::InvalidInput(format!(
            "label {} at row {d} is out of range for {cols} classes",
            labels[d]
        )));
    }
    Ok(())
}

/// `-log softmax(row)[label]` with log-sum-exp stabilisation.
#[inline]
fn row_loss<T: Copy + Into<f64>>(row: &[T], label: usize) -> f64 {
    let max = row
        .iter()
        .map(|&v| v.into())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0f64;
    for &v in row {
        sum += (v.into() - max).exp();
    }
    max + sum.ln() - row[label].into()
}

/// Index of the largest entry; ties go to the lowest index.
#[inline]
pub fn argmax<T: Copy + Into<f64>>(row: &[T]) -> usize {
    let mut best = 0;
    let mut best_val: f64 = row[0].into();
    for (j, &v) in row.iter().enumerate().skip(1) {
        let v: f64 = v.into();
        if v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

pub(crate) fn cross_entropy_rows<T: Copy + Into<f64>>(
    data: &[T],
    cols: usize,
    labels: &[u32],
) -> Result<f64> {
    let rows = if cols == 0 { 0 } else { data.len() / cols };
    check_labels(rows, cols, labels)?;
    let mut total = 0.0f64;
    for (row, &y) in data.chunks_exact(cols).zip(labels) {
        total += row_loss(row, y as usize);
    }
    Ok(total / rows as f64)
}

pub(crate) fn accuracy_rows<T: Copy + Into<f64>>(data: &[T], cols: usize, labels: &[u32]) -> Result<f64> {
    let rows = if cols == 0 { 0 } else { data.len() / cols };
    check_labels(rows, cols, labels)?;
    let correct = data
        .chunks_exact(cols)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y as usize)
        .count();
    Ok(correct as f64 / rows as f64)
}

/// Mean cross-entropy of raw logits against integer labels.
pub fn cross_entropy<T: Copy + Into<f64>>(logits: &Matrix<T>, labels: &[u32]) -> Result<f64> {
    cross_entropy_rows(logits.as_slice(), logits.cols(), labels)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy<T: Copy + Into<f64>>(logits: &Matrix<T>, labels: &[u32]) -> Result<f64> {
    accuracy_rows(logits.as_slice(), logits.cols(), labels)
}

/// Mean cross-entropy and its gradient with respect to `params`, by
/// backpropagation. `inputs` is row-major `labels.len() x F`.
pub fn loss_and_gradient(
    arch: &ArchDescriptor,
    params: &[f64],
    inputs: &[f64],
    labels: &[u32],
) -> Result<(f64, Vec<f64>)> {
    arch.check_params(params.len())?;
    let f = arch.input_dim();
    let c = arch.output_dim();
    if inputs.len() != labels.len() * f {
        return Err(SoupError::DimensionMismatch {
            what: "batch input length",
            expected: labels.len() * f,
            actual: inputs.len(),
        });
    }
    if labels.is_empty() {
        return Err(SoupError::EmptyDataset);
    }
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= c) {
        return Err(SoupError::InvalidInput(format!(
            "label {y} out of range for {c} classes"
        )));
    }
    let layers = arch.layers();
    let n = labels.len() as f64;
    let mut grad = vec![0.0f64; params.len()];
    let mut total = 0.0f64;

    // pre[l] / post[l] hold layer l's pre-activation and output; post of the
    // input "layer" is the example itself.
    let mut pre: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
    let mut post: Vec<Vec<f64>> = vec![Vec::new(); layers.len() + 1];
    let mut delta = Vec::new();
    let mut prev_delta = Vec::new();

    for (x, &y) in inputs.chunks_exact(f).zip(labels) {
        post[0].clear();
        post[0].extend_from_slice(x);
        for (li, layer) in layers.iter().enumerate() {
            let (head, tail) = post.split_at_mut(li + 1);
            affine(params, layer, &head[li], &mut pre[li]);
            let out = &mut tail[0];
            out.clear();
            if li + 1 < layers.len() {
                out.extend(pre[li].iter().map(|&z| arch.activation.apply(z)));
            } else {
                out.extend_from_slice(&pre[li]);
            }
        }
        let logits = &post[layers.len()];
        total += row_loss(logits, y as usize);

        // d loss / d logits = softmax - onehot, scaled for the batch mean
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &v in logits {
            z += (v - max).exp();
        }
        delta.clear();
        delta.extend(logits.iter().map(|&v| (v - max).exp() / z / n));
        delta[y as usize] -= 1.0 / n;

        for li in (0..layers.len()).rev() {
            let layer = &layers[li];
            let input = &post[li];
            for o in 0..layer.fan_out {
                let d = delta[o];
                let row = layer.offset + o * layer.fan_in;
                for (g, &a) in grad[row..row + layer.fan_in].iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[layer.bias_offset() + o] += d;
            }
            if li == 0 {
                break;
            }
            prev_delta.clear();
            prev_delta.resize(layer.fan_in, 0.0);
            for o in 0..layer.fan_out {
                let d = delta[o];
                let row = &params[layer.offset + o * layer.fan_in..layer.offset + (o + 1) * layer.fan_in];
                for (pd, &w) in prev_delta.iter_mut().zip(row) {
                    *pd += w * d;
                }
            }
            for (j, pd) in prev_delta.iter_mut().enumerate() {
                *pd *= arch.activation.derivative(pre[li - 1][j], post[li][j]);
            }
            std::mem::swap(&mut delta, &mut prev_delta);
        }
    }
    Ok((total / n, grad))
}

/// Minibatch SGD with L2 weight decay and optional Gaussian input noise.
///
/// All randomness (per-epoch shuffle, noise) comes from one SplitMix64
/// stream seeded with `hp.seed`, so the result is a pure function of
/// `(w_start, data, hp)`. Parameters are updated in `f64` and rounded to
/// `f32` once at the end.
pub fn sgd_train(
    arch: &ArchDescriptor,
    w_start: &WeightVector,
    data: &Dataset,
    hp: &Hyperparams,
) -> Result<WeightVector> {
    if !matches!(data.split(), SplitTag::Pretrain | SplitTag::Finetune) {
        return Err(SoupError::InvalidInput(format!(
            "sgd_train needs a pretrain or finetune split, got {}",
            data.split()
        )));
    }
    hp.validate()?;
    w_start.check_arch(arch)?;
    arch.check_inputs(data.n_features())?;
    if data.n_classes() > arch.output_dim() {
        return Err(SoupError::DimensionMismatch {
            what: "class count C",
            expected: arch.output_dim(),
            actual: data.n_classes(),
        });
    }
    if hp.epochs == 0 {
        return Ok(w_start.clone());
    }

    let mut rng = SplitMix64::seed_from_u64(hp.seed);
    let noise = if hp.input_noise_std > 0.0 {
        Some(Normal::new(0.0, hp.input_noise_std).map_err(|e| SoupError::InvalidInput(e.to_string()))?)
    } else {
        None
    };
    let f = data.n_features();
    let mut params = w_start.to_f64();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch_x = Vec::with_capacity(hp.batch_size * f);
    let mut batch_y = Vec::with_capacity(hp.batch_size);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(hp.batch_size).enumerate() {
            batch_x.clear();
            batch_y.clear();
            for &i in idx {
                for &v in data.features().row(i) {
                    let jitter = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                    batch_x.push(v as f64 + jitter);
                }
                batch_y.push(data.labels()[i]);
            }
            let (loss, grad) = loss_and_gradient(arch, &params, &batch_x, &batch_y)?;
            if !loss.is_finite() {
                return Err(SoupError::NonFiniteLoss { epoch, batch });
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= hp.learning_rate * (g + hp.weight_decay * *p);
            }
            // weights are stored as f32, so leaving its range is divergence too
            if params.iter().any(|p| !(p.abs() <= f32::MAX as f64)) {
                return Err(SoupError::NonFiniteLoss { epoch, batch });
            }
        }
    }
    WeightVector::from_f64(arch, &params)
}
