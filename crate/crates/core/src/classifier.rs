//! A small fully-connected softmax classifier with exact gradients with
//! respect to its input, the model under attack.
//!
//! Layer weights are stored `fan_in × fan_out` (row `i` holds input unit
//! `i`'s outgoing weights) so that zero-valued inputs can be skipped in both
//! the forward pass and the weight-gradient accumulation.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::ImageSet;
use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("input has {got} features, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad model header: {0}")]
    BadHeader(String),
    #[error("unsupported model version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_in, fan_out),
            biases: vec![0.0; fan_out],
        }
    }

    /// `b + Wᵀ a`, skipping zero activations.
    fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut z = self.biases.clone();
        for (i, &a) in input.iter().enumerate() {
            if a != 0.0 {
                for (zj, w) in z.iter_mut().zip(self.weights.row(i)) {
                    *zj += a * w;
                }
            }
        }
        z
    }

    /// `W δ`: the gradient passed back to this layer's input.
    fn back(&self, delta: &[f64]) -> Vec<f64> {
        self.weights
            .row_iter()
            .map(|w| w.iter().zip(delta).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 5,
            batch_size: 32,
            seed: 42,
        }
    }
}

/// A trained model plus the mean training loss of each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub loss_trace: Vec<f64>,
}

/// Fully-connected network: rectifier hidden layers, softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
}

struct ForwardTrace {
    /// `activations[0]` is the input, `activations[l]` the output of hidden
    /// layer `l`; the last entry holds the logits.
    activations: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn new(dims: &[usize], rng: &mut RngStream) -> Result<Self, ClassifierError> {
        let mut model = Self::zeros(dims)?;
        for layer in &mut model.layers {
            let bound = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            for w in layer.weights.as_mut_slice() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, ClassifierError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(ClassifierError::InvalidConfig(format!(
                "layer dims {dims:?} need at least an input and an output, all positive"
            )));
        }
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            activation: Activation::Relu,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, ClassifierError> {
        let first = layers
            .first()
            .ok_or_else(|| ClassifierError::InvalidConfig("no layers".into()))?;
        let mut dims = vec![first.fan_in()];
        for l in &layers {
            if l.fan_in() != *dims.last().unwrap() || l.biases.len() != l.fan_out() {
                return Err(ClassifierError::InvalidConfig(format!(
                    "layer shape {}x{} (bias {}) does not chain after width {}",
                    l.fan_in(),
                    l.fan_out(),
                    l.biases.len(),
                    dims.last().unwrap()
                )));
            }
            if l.biases.iter().any(|b| !b.is_finite()) {
                return Err(ClassifierError::InvalidConfig("non-finite bias".into()));
            }
            dims.push(l.fan_out());
        }
        Ok(Self {
            dims,
            layers,
            activation: Activation::Relu,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ClassifierError> {
        if x.len() != self.input_dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<(), ClassifierError> {
        if y >= self.num_classes() {
            return Err(ClassifierError::LabelOutOfRange {
                label: y,
                classes: self.num_classes(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> ForwardTrace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(activations.last().unwrap());
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(z);
        }
        ForwardTrace { activations }
    }

    /// Pushes `delta` (gradient at the logits) back to the input.
    fn backprop_to_input(&self, trace: &ForwardTrace, mut delta: Vec<f64>) -> Vec<f64> {
        for l in (0..self.layers.len()).rev() {
            let mut g = self.layers[l].back(&delta);
            if l > 0 {
                // rectifier derivative: 1 where the unit was active
                for (gi, &a) in g.iter_mut().zip(&trace.activations[l]) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            delta = g;
        }
        delta
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        self.check_input(x)?;
        Ok(self.trace(x).activations.pop().unwrap())
    }

    /// Class probabilities.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, ClassifierError> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Cross-entropy `−log p_y`.
    pub fn loss(&self, x: &[f64], y: usize) -> Result<f64, ClassifierError> {
        self.check_label(y)?;
        let z = self.logits(x)?;
        Ok(log_sum_exp(&z) - z[y])
    }

    /// Exact gradient of [`Mlp::loss`] with respect to `x`.
    pub fn input_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>, ClassifierError> {
        self.check_input(x)?;
        self.check_label(y)?;
        let trace = self.trace(x);
        let mut delta = softmax(trace.activations.last().unwrap());
        delta[y] -= 1.0;
        Ok(self.backprop_to_input(&trace, delta))
    }

    /// `num_classes × input_dim` matrix whose row `k` is `∂logit_k/∂x`.
    pub fn logit_jacobian(&self, x: &[f64]) -> Result<Matrix, ClassifierError> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let c = self.num_classes();
        let mut data = Vec::with_capacity(c * x.len());
        for k in 0..c {
            let mut e = vec![0.0; c];
            e[k] = 1.0;
            data.extend(self.backprop_to_input(&trace, e));
        }
        Ok(Matrix::from_raw(c, x.len(), data))
    }

    /// Fraction of samples whose argmax prediction equals the label.
    pub fn accuracy(&self, data: &ImageSet) -> Result<f64, ClassifierError> {
        if data.is_empty() {
            return Err(ClassifierError::EmptyDataset);
        }
        let correct = (0..data.len())
            .into_par_iter()
            .map(|i| {
                self.predict(&data.sample_f64(i))
                    .map(|p| usize::from(p == data.labels()[i]))
            })
            .sum::<Result<usize, _>>()?;
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&ACTIVATION_RELU.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for layer in &self.layers {
            for v in layer.weights.as_slice().iter().chain(&layer.biases) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        let mut r = ByteReader { bytes, at: 0 };
        if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
            return Err(ClassifierError::BadHeader("missing DRMLP magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(ClassifierError::VersionMismatch {
                expected: MODEL_VERSION,
                found: version,
            });
        }
        let act = r.u32()?;
        if act != ACTIVATION_RELU {
            return Err(ClassifierError::BadHeader(format!("unknown activation tag {act}")));
        }
        let n_dims = r.u32()? as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(ClassifierError::BadHeader(format!("{n_dims} layer dims")));
        }
        let dims: Vec<usize> = (0..n_dims)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<_, _>>()?;
        let mut layers = Vec::with_capacity(n_dims - 1);
        for w in dims.windows(2) {
            let weights = (0..w[0] * w[1]).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let biases = (0..w[1]).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let weights = Matrix::from_vec(w[0], w[1], weights)
                .map_err(|e| ClassifierError::BadHeader(e.to_string()))?;
            layers.push(Layer { weights, biases });
        }
        if r.at != bytes.len() {
            return Err(ClassifierError::BadHeader(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        Self::from_layers(layers)
    }
}

const MODEL_MAGIC: &[u8; 5] = b"DRMLP";
pub const MODEL_VERSION: u32 = 1;
const ACTIVATION_RELU: u32 = 0;

struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let s = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| ClassifierError::BadHeader("file is truncated".into()))?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ClassifierError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; first wins on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch SGD on mean cross-entropy, reshuffling every epoch from
/// `cfg.seed`.
pub fn train(model: Mlp, data: &ImageSet, cfg: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) || cfg.batch_size == 0 {
        return Err(ClassifierError::InvalidConfig(format!(
            "learning rate {} and batch size {} (need lr >= 0, batch >= 1)",
            cfg.learning_rate, cfg.batch_size
        )));
    }
    if data.sample_len() != model.input_dim() {
        return Err(ClassifierError::DimensionMismatch {
            expected: model.input_dim(),
            got: data.sample_len(),
        });
    }
    if let Some(&label) = data.labels().iter().find(|&&l| l >= model.num_classes()) {
        return Err(ClassifierError::LabelOutOfRange {
            label,
            classes: model.num_classes(),
        });
    }

    let mut model = model;
    let mut rng = RngStream::new(cfg.seed, 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads: Vec<Layer> = model
        .layers
        .iter()
        .map(|l| Layer::zeros(l.fan_in(), l.fan_out()))
        .collect();
    let mut x = vec![0.0; data.sample_len()];
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in &mut grads {
                g.weights.as_mut_slice().fill(0.0);
                g.biases.fill(0.0);
            }
            for &i in batch {
                for (xi, &p) in x.iter_mut().zip(data.sample(i)) {
                    *xi = p as f64;
                }
                epoch_loss += accumulate_gradients(&model, &x, data.labels()[i], &mut grads);
            }
            let step = cfg.learning_rate / batch.len() as f64;
            if step != 0.0 {
                for (layer, g) in model.layers.iter_mut().zip(&grads) {
                    for (w, gw) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                        *w -= step * gw;
                    }
                    for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                        *b -= step * gb;
                    }
                }
            }
        }
        loss_trace.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Adds one sample's parameter gradients into `grads` and returns its loss.
fn accumulate_gradients(model: &Mlp, x: &[f64], y: usize, grads: &mut [Layer]) -> f64 {
    let trace = model.trace(x);
    let logits = trace.activations.last().unwrap();
    let loss = log_sum_exp(logits) - logits[y];
    let mut delta = softmax(logits);
    delta[y] -= 1.0;
    for l in (0..model.layers.len()).rev() {
        let input = &trace.activations[l];
        let g = &mut grads[l];
        for (i, &a) in input.iter().enumerate() {
            if a != 0.0 {
                for (gw, d) in g.weights.row_mut(i).iter_mut().zip(&delta) {
                    *gw += a * d;
                }
            }
        }
        for (gb, d) in g.biases.iter_mut().zip(&delta) {
            *gb += d;
        }
        if l > 0 {
            let mut back = model.layers[l].back(&delta);
            for (bi, &a) in back.iter_mut().zip(input) {
                if a <= 0.0 {
                    *bi = 0.0;
                }
            }
            delta = back;
        }
    }
    loss
}
