//! Small classifiers with hand-derived gradients.
//!
//! Parameters live in one flat vector: for each dense layer, the weight
//! matrix (`out x in`, row-major) followed by its bias. `logreg` has a single
//! layer; `mlp` has a ReLU hidden layer followed by the output layer. The loss
//! is mean softmax cross-entropy.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::config::{rng_for, ModelConfig, ModelKind};
use crate::data::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value at coordinate {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Logreg,
    Mlp { hidden: usize },
}

impl From<&ModelConfig> for Architecture {
    fn from(c: &ModelConfig) -> Self {
        match c.kind {
            ModelKind::Logreg => Self::Logreg,
            ModelKind::Mlp => Self::Mlp { hidden: c.hidden },
        }
    }
}

/// Shape of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    out: usize,
    inp: usize,
    offset: usize,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.out * self.inp
    }

    fn len(&self) -> usize {
        self.out * self.inp + self.out
    }

    fn weight<'a>(&self, v: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.out, self.inp), &v[self.offset..self.offset + self.weight_len()])
            .expect("layer shape matches")
    }

    fn bias<'a>(&self, v: &'a [f64]) -> ArrayView1<'a, f64> {
        let start = self.offset + self.weight_len();
        ArrayView1::from(&v[start..start + self.out])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    input_dim: usize,
    classes: usize,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture, input_dim: usize, classes: usize) -> Self {
        let p = param_count(arch, input_dim, classes);
        Self {
            arch,
            input_dim,
            classes,
            values: vec![0.0; p],
        }
    }

    /// All-zero for `logreg`; Glorot-uniform weights and zero biases for `mlp`.
    pub fn init(arch: Architecture, input_dim: usize, classes: usize, seed: u64) -> Self {
        let mut params = Self::zeros(arch, input_dim, classes);
        if let Architecture::Mlp { .. } = arch {
            let mut rng = rng_for(seed);
            for layer in params.layers() {
                let a = (6.0 / (layer.inp + layer.out) as f64).sqrt();
                for v in &mut params.values[layer.offset..layer.offset + layer.weight_len()] {
                    *v = rng.random_range(-a..a);
                }
            }
        }
        params
    }

    /// Rebuild from a flat vector.
    pub fn unflatten(
        arch: Architecture,
        input_dim: usize,
        classes: usize,
        values: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let expected = param_count(arch, input_dim, classes);
        if values.len() != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            arch,
            input_dim,
            classes,
            values,
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Total flattened dimension P.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight matrices and bias vectors as owned arrays, input layer first.
    pub fn to_layers(&self) -> Vec<(Array2<f64>, Array1<f64>)> {
        self.layers()
            .iter()
            .map(|l| (l.weight(&self.values).to_owned(), l.bias(&self.values).to_owned()))
            .collect()
    }

    /// `self + delta`.
    pub fn with_delta(&self, delta: &[f64]) -> Result<Self, ModelError> {
        self.check_len(delta.len())?;
        let mut next = self.clone();
        next.add_assign(delta)?;
        Ok(next)
    }

    pub fn add_assign(&mut self, delta: &[f64]) -> Result<(), ModelError> {
        self.check_len(delta.len())?;
        for (w, d) in self.values.iter_mut().zip(delta) {
            *w += d;
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<(), ModelError> {
        if len != self.values.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.values.len(),
                actual: len,
            });
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerShape> {
        layer_shapes(self.arch, self.input_dim, self.classes)
    }

    fn check_batch(&self, x: &ArrayView2<f64>, y: &[usize]) -> Result<(), ModelError> {
        if x.nrows() == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if x.ncols() != self.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim,
                actual: x.ncols(),
            });
        }
        if y.len() != x.nrows() {
            return Err(ModelError::DimensionMismatch {
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        if let Some(&label) = y.iter().find(|&&l| l >= self.classes) {
            return Err(ModelError::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        Ok(())
    }

    /// Logits for a batch with the given flat parameters (no checks).
    fn logits_with(&self, values: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let layers = self.layers();
        let mut act = dense(&layers[0], values, x);
        for layer in &layers[1..] {
            act.mapv_inplace(relu);
            act = dense(layer, values, &act.view());
        }
        act
    }

    pub fn logits(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        if x.ncols() != self.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim,
                actual: x.ncols(),
            });
        }
        Ok(self.logits_with(&self.values, x))
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Vec<usize>, ModelError> {
        Ok(self.logits(x)?.outer_iter().map(|row| argmax(row)).collect())
    }

    /// Top-1 accuracy; `None` on an empty dataset.
    pub fn accuracy(&self, data: &Dataset) -> Result<Option<f64>, ModelError> {
        if data.is_empty() {
            return Ok(None);
        }
        let pred = self.predict(&data.features())?;
        let hits = pred.iter().zip(data.labels()).filter(|(p, y)| p == y).count();
        Ok(Some(hits as f64 / data.len() as f64))
    }
}

pub fn param_count(arch: Architecture, input_dim: usize, classes: usize) -> usize {
    layer_shapes(arch, input_dim, classes).iter().map(LayerShape::len).sum()
}

fn layer_shapes(arch: Architecture, input_dim: usize, classes: usize) -> Vec<LayerShape> {
    let dims: Vec<(usize, usize)> = match arch {
        Architecture::Logreg => vec![(classes, input_dim)],
        Architecture::Mlp { hidden } => vec![(hidden, input_dim), (classes, hidden)],
    };
    let mut offset = 0;
    dims.into_iter()
        .map(|(out, inp)| {
            let shape = LayerShape { out, inp, offset };
            offset += shape.len();
            shape
        })
        .collect()
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn dense(layer: &LayerShape, values: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
    x.dot(&layer.weight(values).t()) + layer.bias(values)
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise log-softmax, shifted by the row max.
fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn mean_nll(log_probs: &Array2<f64>, y: &[usize]) -> f64 {
    -y.iter().enumerate().map(|(i, &c)| log_probs[[i, c]]).sum::<f64>() / y.len() as f64
}

/// Mean cross-entropy and logits for a batch.
pub fn forward_loss(
    params: &ModelParams,
    x: &ArrayView2<f64>,
    y: &[usize],
) -> Result<(f64, Array2<f64>), ModelError> {
    params.check_batch(x, y)?;
    let logits = params.logits_with(&params.values, x);
    let loss = mean_nll(&log_softmax(&logits), y);
    Ok((loss, logits))
}

/// Mean cross-entropy and its exact gradient with respect to the flat parameters.
pub fn backward(
    params: &ModelParams,
    x: &ArrayView2<f64>,
    y: &[usize],
) -> Result<(f64, Vec<f64>), ModelError> {
    params.check_batch(x, y)?;
    Ok(loss_and_grad(params, &params.values, x, y))
}

/// Same as [`backward`] but evaluated at an alternative flat parameter vector
/// with the architecture of `params`.
pub(crate) fn loss_and_grad(
    params: &ModelParams,
    values: &[f64],
    x: &ArrayView2<f64>,
    y: &[usize],
) -> (f64, Vec<f64>) {
    let layers = params.layers();
    let n = x.nrows() as f64;

    // Forward, keeping each layer's input and pre-activation.
    let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(layers.len());
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(layers.len());
    let mut act = x.to_owned();
    for (i, layer) in layers.iter().enumerate() {
        let z = dense(layer, values, &act.view());
        inputs.push(act);
        act = if i + 1 < layers.len() { z.mapv(relu) } else { z.clone() };
        pre.push(z);
    }

    let log_probs = log_softmax(pre.last().expect("at least one layer"));
    let loss = mean_nll(&log_probs, y);

    // dL/dlogits = (softmax - onehot) / n
    let mut delta = log_probs.mapv(f64::exp);
    for (i, &c) in y.iter().enumerate() {
        delta[[i, c]] -= 1.0;
    }
    delta /= n;

    let mut grad = vec![0.0; values.len()];
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let gw = delta.t().dot(&inputs[l]);
        let gb = delta.sum_axis(Axis(0));
        let w_end = layer.offset + layer.weight_len();
        for (g, v) in grad[layer.offset..w_end].iter_mut().zip(gw.iter()) {
            *g = *v;
        }
        for (g, v) in grad[w_end..w_end + layer.out].iter_mut().zip(gb.iter()) {
            *g = *v;
        }
        if l > 0 {
            let mut upstream = delta.dot(&layer.weight(values));
            ndarray::Zip::from(&mut upstream)
                .and(&pre[l - 1])
                .for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            delta = upstream;
        }
    }
    (loss, grad)
}

/// A model delta: trained weights minus the round's global weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    /// Rejects NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
    }
}

/// Local optimization protocol shared by sellers and the buyer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Train a copy of `global` on `data` with Adam and return the weight delta.
///
/// Each epoch visits the rows in a fresh seeded order, in mini-batches of
/// `batch_size` (the last batch may be smaller). Optimizer state starts at zero
/// on every call.
pub fn local_train(
    global: &ModelParams,
    data: &Dataset,
    spec: &TrainSpec,
    seed: u64,
) -> Result<GradientVector, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if data.dim() != global.input_dim {
        return Err(ModelError::DimensionMismatch {
            expected: global.input_dim,
            actual: data.dim(),
        });
    }
    let mut rng = rng_for(seed);
    let mut w = global.values.clone();
    let mut m = vec![0.0; w.len()];
    let mut v = vec![0.0; w.len()];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let x_all = data.features();
    let bs = spec.batch_size.max(1);

    for _ in 0..spec.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            let xb = x_all.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            global.check_batch(&xb.view(), &yb)?;
            let (_, g) = loss_and_grad(global, &w, &xb.view(), &yb);
            step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(step);
            let c2 = 1.0 - ADAM_BETA2.powi(step);
            for j in 0..w.len() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                w[j] -= spec.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
    let delta = w.iter().zip(&global.values).map(|(a, b)| a - b).collect();
    GradientVector::new(delta)
}
