//! Synthetic self-explaining pipeline with a known generative process.
//!
//! Four latent factors `z` drive everything: attributes are noisy copies of
//! the first K factors, inputs are a fixed random linear mix of all factors,
//! and the label depends only on the causal factors (plus, in the hidden
//! dependency variant, on a factor no attribute describes). A two-headed MLP
//! (shared tanh hidden layer, softmax decision head, linear attribute heads)
//! is trained on it, and its activations are dumped for auditing.
//!
//! Training runs in `f32`. The forward and backward passes are generic so
//! the gradient check can run the very same code on an `f64` copy.

use std::fs;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{write_tensor, DataError, Manifest, Metadata, RoleEntry, Splits, TensorFile, MANIFEST_VERSION};
use crate::linalg::Matrix;
use crate::rng::{Stream, SxRng};

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("invalid demo config: {0}")]
    InvalidConfig(String),
    #[error("training loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub const ATTRIBUTE_NAMES: [&str; 4] = ["subtlety", "sphericity", "margin", "lobulation"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub latent_dim: usize,
    pub observed_dim: usize,
    pub attribute_names: Vec<String>,
    /// Attributes whose factors enter the label with weight 2.
    pub causal: Vec<usize>,
    /// Weight of the last latent factor in the label logit. It has no
    /// attribute when `attribute_names.len() < latent_dim`.
    pub hidden_weight: f64,
    pub attribute_noise: f64,
    pub input_noise: f64,
    pub label_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 500,
            latent_dim: 4,
            observed_dim: 16,
            attribute_names: ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect(),
            causal: vec![0, 1],
            hidden_weight: 0.0,
            attribute_noise: 0.1,
            input_noise: 0.05,
            label_noise: 0.1,
        }
    }
}

impl SyntheticConfig {
    /// Non-causal attributes dropped, and the label gains a dependency on a
    /// factor that no attribute describes.
    pub fn hidden_dependency() -> Self {
        Self {
            attribute_names: ATTRIBUTE_NAMES[..2].iter().map(|s| s.to_string()).collect(),
            hidden_weight: 2.0,
            ..Self::default()
        }
    }

    pub fn k(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn validate(&self) -> Result<(), DemoError> {
        let bad = |m: &str| Err(DemoError::InvalidConfig(m.into()));
        let k = self.k();
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive");
        }
        if self.latent_dim == 0 || self.observed_dim == 0 {
            return bad("dimensions must be positive");
        }
        if k == 0 || k > self.latent_dim {
            return bad("attribute count must be in 1..=latent_dim");
        }
        if self.causal.is_empty() || self.causal.iter().any(|&c| c >= k) {
            return bad("causal set must be a non-empty subset of the attributes");
        }
        if self.hidden_weight == 0.0 && self.causal.len() >= k {
            return bad("causal set must be a strict subset of the attributes");
        }
        if self.hidden_weight != 0.0 && k == self.latent_dim {
            return bad("hidden dependency needs a factor without an attribute");
        }
        Ok(())
    }
}

/// Rows `0..n_train` are training examples, the rest test examples. All
/// stored values are f32-representable.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub z: Matrix,
    pub x: Matrix,
    pub attributes: Matrix,
    pub labels: Vec<usize>,
    pub mixing: Matrix,
    pub n_train: usize,
}

impl SyntheticDataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn train_rows(&self) -> std::ops::Range<usize> {
        0..self.n_train
    }

    pub fn test_rows(&self) -> std::ops::Range<usize> {
        self.n_train..self.n()
    }
}

fn f32r(v: f64) -> f64 {
    v as f32 as f64
}

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset, DemoError> {
    config.validate()?;
    let (dz, dx, k) = (config.latent_dim, config.observed_dim, config.k());
    let mut rm = SxRng::new(seed, Stream::MixingMatrix);
    let mixing = Matrix::from_vec(dx, dz, (0..dx * dz).map(|_| rm.normal()).collect());

    let n = config.n_train + config.n_test;
    let mut z = Matrix::zeros(n, dz);
    let mut x = Matrix::zeros(n, dx);
    let mut a = Matrix::zeros(n, k);
    let mut labels = Vec::with_capacity(n);
    let mut train_rng = SxRng::new(seed, Stream::TrainSamples);
    let mut test_rng = SxRng::new(seed, Stream::TestSamples);
    for i in 0..n {
        let r = if i < config.n_train { &mut train_rng } else { &mut test_rng };
        let zi: Vec<f64> = (0..dz).map(|_| r.normal()).collect();
        for j in 0..k {
            a.row_mut(i)[j] = f32r(zi[j] + config.attribute_noise * r.normal());
        }
        let mixed = mixing.matvec(&zi);
        for (o, m) in x.row_mut(i).iter_mut().zip(&mixed) {
            *o = f32r(m + config.input_noise * r.normal());
        }
        let mut logit: f64 = config.causal.iter().map(|&c| 2.0 * zi[c]).sum();
        logit += config.hidden_weight * zi[dz - 1];
        logit += config.label_noise * r.normal();
        labels.push(usize::from(logit > 0.0));
        z.row_mut(i).copy_from_slice(&zi);
    }
    Ok(SyntheticDataset {
        z,
        x,
        attributes: a,
        labels,
        mixing,
        n_train: config.n_train,
    })
}

// ---------------------------------------------------------------------------
// Scalar abstraction so one forward/backward implementation serves both the
// f32 training path and the f64 gradient check. Transcendentals go through
// libm for host-independent rounding.

pub trait Real:
    Copy
    + Default
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn tanh(self) -> Self {
        libm::tanhf(self)
    }
    fn exp(self) -> Self {
        libm::expf(self)
    }
    fn ln(self) -> Self {
        libm::logf(self)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
    fn exp(self) -> Self {
        libm::exp(self)
    }
    fn ln(self) -> Self {
        libm::log(self)
    }
}

/// Offsets of each parameter block in the flat parameter vector:
/// `W1 (h×i) | b1 (h) | Wd (c×h) | bd (c) | Wa (k×h) | ba (k)`, matrices
/// row-major with one row per output unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub attributes: usize,
}

impl Layout {
    pub fn w1(&self) -> usize {
        0
    }
    pub fn b1(&self) -> usize {
        self.hidden * self.input
    }
    pub fn wd(&self) -> usize {
        self.b1() + self.hidden
    }
    pub fn bd(&self) -> usize {
        self.wd() + self.classes * self.hidden
    }
    pub fn wa(&self) -> usize {
        self.bd() + self.classes
    }
    pub fn ba(&self) -> usize {
        self.wa() + self.attributes * self.hidden
    }
    pub fn len(&self) -> usize {
        self.ba() + self.attributes
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Whether parameter `p` is a bias.
    pub fn is_bias(&self, p: usize) -> bool {
        (self.b1()..self.wd()).contains(&p)
            || (self.bd()..self.wa()).contains(&p)
            || (self.ba()..self.len()).contains(&p)
    }
    pub fn attribute_head(&self) -> std::ops::Range<usize> {
        self.wa()..self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoNetwork {
    pub layout: Layout,
    pub dropout: f64,
    /// Per-feature input standardization, fitted on the training inputs.
    pub input_mean: Vec<f32>,
    pub input_std: Vec<f32>,
    pub params: Vec<f32>,
}

pub struct Forward<T> {
    pub hidden: Vec<T>,
    pub probabilities: Vec<T>,
    pub attributes: Vec<T>,
}

fn normalize<T: Real>(net_mean: &[f32], net_std: &[f32], x: &[f64]) -> Vec<T> {
    x.iter()
        .zip(net_mean.iter().zip(net_std))
        .map(|(&v, (&m, &s))| (T::of(v) - T::of(f64::from(m))) / T::of(f64::from(s)))
        .collect()
}

fn forward<T: Real>(
    lay: &Layout,
    params: &[T],
    xn: &[T],
    mask: Option<&[T]>,
) -> Forward<T> {
    let (ni, nh) = (lay.input, lay.hidden);
    let mut hidden = Vec::with_capacity(nh);
    for u in 0..nh {
        let w = &params[lay.w1() + u * ni..lay.w1() + (u + 1) * ni];
        let mut s = params[lay.b1() + u];
        for (wi, xi) in w.iter().zip(xn) {
            s += *wi * *xi;
        }
        hidden.push(s.tanh());
    }
    let dropped: Vec<T> = match mask {
        Some(m) => hidden.iter().zip(m).map(|(h, m)| *h * *m).collect(),
        None => hidden.clone(),
    };
    let head = |w0: usize, b0: usize, outputs: usize| -> Vec<T> {
        (0..outputs)
            .map(|o| {
                let mut s = params[b0 + o];
                for (wi, hi) in params[w0 + o * nh..w0 + (o + 1) * nh].iter().zip(&dropped) {
                    s += *wi * *hi;
                }
                s
            })
            .collect()
    };
    let logits = head(lay.wd(), lay.bd(), lay.classes);
    let attributes = head(lay.wa(), lay.ba(), lay.attributes);
    let max = logits.iter().copied().fold(logits[0], |m, v| if v > m { v } else { m });
    let e: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let mut sum = T::default();
    for v in &e {
        sum += *v;
    }
    Forward {
        hidden,
        probabilities: e.into_iter().map(|v| v / sum).collect(),
        attributes,
    }
}

/// One training example as seen by the loss.
pub struct Example<'a, T> {
    pub input: &'a [T],
    pub label: usize,
    pub attributes: &'a [T],
    pub mask: Option<&'a [T]>,
}

/// Mean over the batch of `CE + w·mean_k (a_k − t_k)²`, accumulating its
/// gradient into `grad` when given.
fn batch_loss<T: Real>(
    lay: &Layout,
    params: &[T],
    batch: &[Example<'_, T>],
    attr_weight: f64,
    mut grad: Option<&mut [T]>,
) -> T {
    let b = T::of(batch.len() as f64);
    let kf = T::of(lay.attributes as f64);
    let (ni, nh) = (lay.input, lay.hidden);
    let aw = T::of(attr_weight);
    let scale_a = (aw * T::of(2.0)) / (kf * b);
    let mut total = T::default();
    for ex in batch {
        let f = forward(lay, params, ex.input, ex.mask);
        let p_label = f.probabilities[ex.label];
        let tiny = T::of(1e-30);
        let ce = -(if p_label > tiny { p_label } else { tiny }).ln();
        let mut se = T::default();
        for (a, t) in f.attributes.iter().zip(ex.attributes) {
            se += (*a - *t) * (*a - *t);
        }
        total += ce + aw * se / kf;

        let Some(g) = grad.as_deref_mut() else { continue };
        let dropped: Vec<T> = match ex.mask {
            Some(m) => f.hidden.iter().zip(m).map(|(h, m)| *h * *m).collect(),
            None => f.hidden.clone(),
        };
        let dzd: Vec<T> = (0..lay.classes)
            .map(|c| {
                let y = if c == ex.label { T::of(1.0) } else { T::default() };
                (f.probabilities[c] - y) / b
            })
            .collect();
        let dya: Vec<T> = f
            .attributes
            .iter()
            .zip(ex.attributes)
            .map(|(a, t)| (*a - *t) * scale_a)
            .collect();
        let mut dh = vec![T::default(); nh];
        for (c, &d) in dzd.iter().enumerate() {
            g[lay.bd() + c] += d;
            for u in 0..nh {
                g[lay.wd() + c * nh + u] += d * dropped[u];
                dh[u] += params[lay.wd() + c * nh + u] * d;
            }
        }
        for (o, &d) in dya.iter().enumerate() {
            g[lay.ba() + o] += d;
            for u in 0..nh {
                g[lay.wa() + o * nh + u] += d * dropped[u];
                dh[u] += params[lay.wa() + o * nh + u] * d;
            }
        }
        for u in 0..nh {
            let m = ex.mask.map_or(T::of(1.0), |m| m[u]);
            let h = f.hidden[u];
            let da = dh[u] * m * (T::of(1.0) - h * h);
            g[lay.b1() + u] += da;
            for i in 0..ni {
                g[lay.w1() + u * ni + i] += da * ex.input[i];
            }
        }
    }
    total / b
}

impl DemoNetwork {
    /// Glorot-uniform hidden weights; zero heads and biases, so the untrained
    /// network predicts the uniform distribution.
    pub fn init(layout: Layout, dropout: f64, x_train: &Matrix, seed: u64) -> Self {
        let mut r = SxRng::new(seed, Stream::NetworkInit);
        let mut params = vec![0.0f32; layout.len()];
        let a = (6.0 / (layout.input + layout.hidden) as f64).sqrt();
        for p in &mut params[layout.w1()..layout.b1()] {
            *p = r.uniform_range(-a, a) as f32;
        }
        let (mean, std) = column_stats(x_train);
        Self {
            layout,
            dropout,
            input_mean: mean,
            input_std: std,
            params,
        }
    }

    /// Small random network with all parameters nonzero, for gradient checks.
    pub fn random(layout: Layout, seed: u64) -> Self {
        let mut r = SxRng::new(seed, Stream::Scratch);
        Self {
            layout,
            dropout: 0.0,
            input_mean: vec![0.0; layout.input],
            input_std: vec![1.0; layout.input],
            params: (0..layout.len()).map(|_| (0.5 * r.normal()) as f32).collect(),
        }
    }

    fn normalized(&self, x: &[f64]) -> Vec<f32> {
        normalize(&self.input_mean, &self.input_std, x)
    }

    /// Deterministic pass (dropout off), in f64 for reporting.
    pub fn predict(&self, x: &[f64]) -> Forward<f64> {
        self.predict_masked(x, None)
    }

    pub fn predict_masked(&self, x: &[f64], mask: Option<&[f32]>) -> Forward<f64> {
        let f = forward(&self.layout, &self.params, &self.normalized(x), mask);
        Forward {
            hidden: f.hidden.iter().map(|&v| f64::from(v)).collect(),
            probabilities: f.probabilities.iter().map(|&v| f64::from(v)).collect(),
            attributes: f.attributes.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Inverted dropout mask: each unit kept with probability `1 − p` and
    /// scaled by `1/(1 − p)`.
    pub fn draw_mask(&self, r: &mut SxRng) -> Vec<f32> {
        let keep = 1.0 - self.dropout;
        let scale = (1.0 / keep) as f32;
        (0..self.layout.hidden)
            .map(|_| if r.uniform() <= keep { scale } else { 0.0 })
            .collect()
    }
}

fn column_stats(x: &Matrix) -> (Vec<f32>, Vec<f32>) {
    let n = x.rows() as f64;
    (0..x.cols())
        .map(|j| {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            (mean as f32, std as f32)
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub attribute_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            dropout: 0.2,
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.05,
            attribute_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    /// Mean minibatch loss over the final epoch (dropout on).
    pub final_epoch_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Test mean-squared error per attribute head.
    pub test_attribute_mse: Vec<f64>,
}

pub fn train_demo_network(
    data: &SyntheticDataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<(DemoNetwork, TrainingSummary), DemoError> {
    if config.batch_size == 0 || config.hidden == 0 || !(0.0..1.0).contains(&config.dropout) {
        return Err(DemoError::InvalidConfig(
            "batch_size and hidden must be positive, dropout in [0, 1)".into(),
        ));
    }
    let layout = Layout {
        input: data.x.cols(),
        hidden: config.hidden,
        classes: 2,
        attributes: data.attributes.cols(),
    };
    let x_train = data.x.slice_rows(0, data.n_train);
    let mut net = DemoNetwork::init(layout, config.dropout, &x_train, seed);

    let inputs: Vec<Vec<f32>> = data.x.iter_rows().map(|r| net.normalized(r)).collect();
    let targets: Vec<Vec<f32>> = data
        .attributes
        .iter_rows()
        .map(|r| r.iter().map(|&v| v as f32).collect())
        .collect();

    let mut order: Vec<usize> = data.train_rows().collect();
    let mut shuffle_rng = SxRng::new(seed, Stream::Minibatch);
    let mut dropout_rng = SxRng::new(seed, Stream::TrainDropout);
    let lr = config.learning_rate as f32;
    let mut grad = vec![0.0f32; layout.len()];
    let mut final_epoch_loss = f64::NAN;
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let masks: Vec<Vec<f32>> = chunk.iter().map(|_| net.draw_mask(&mut dropout_rng)).collect();
            let batch: Vec<Example<'_, f32>> = chunk
                .iter()
                .zip(&masks)
                .map(|(&i, m)| Example {
                    input: &inputs[i],
                    label: data.labels[i],
                    attributes: &targets[i],
                    mask: (config.dropout > 0.0).then_some(m.as_slice()),
                })
                .collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = batch_loss(&layout, &net.params, &batch, config.attribute_weight, Some(&mut grad));
            if !loss.is_finite() {
                return Err(DemoError::DivergedLoss { epoch });
            }
            for (p, g) in net.params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            epoch_loss += f64::from(loss);
            batches += 1;
        }
        final_epoch_loss = epoch_loss / batches.max(1) as f64;
    }

    let accuracy = |rows: std::ops::Range<usize>| {
        let n = rows.len().max(1) as f64;
        rows.filter(|&i| {
            crate::dataio::argmax(&net.predict(data.x.row(i)).probabilities) == data.labels[i]
        })
        .count() as f64
            / n
    };
    let train_accuracy = accuracy(data.train_rows());
    let test_accuracy = accuracy(data.test_rows());
    let mut mse = vec![0.0; layout.attributes];
    for i in data.test_rows() {
        let f = net.predict(data.x.row(i));
        for (j, m) in mse.iter_mut().enumerate() {
            let d = f.attributes[j] - data.attributes.row(i)[j];
            *m += d * d;
        }
    }
    let nt = data.test_rows().len().max(1) as f64;
    mse.iter_mut().for_each(|m| *m /= nt);
    Ok((
        net,
        TrainingSummary {
            epochs: config.epochs,
            final_epoch_loss,
            train_accuracy,
            test_accuracy,
            test_attribute_mse: mse,
        },
    ))
}

/// Labelled inputs for evaluating the loss outside training.
pub struct LossBatch<'a> {
    pub x: &'a Matrix,
    pub labels: &'a [usize],
    pub attributes: &'a Matrix,
}

/// Loss and gradient in f64 for the given (already trained or random)
/// network, dropout off.
pub fn loss_and_gradient_f64(net: &DemoNetwork, batch: &LossBatch<'_>, attr_weight: f64, params: &[f64]) -> (f64, Vec<f64>) {
    let inputs: Vec<Vec<f64>> = batch
        .x
        .iter_rows()
        .map(|r| normalize::<f64>(&net.input_mean, &net.input_std, r))
        .collect();
    let exs: Vec<Example<'_, f64>> = (0..batch.x.rows())
        .map(|i| Example {
            input: &inputs[i],
            label: batch.labels[i],
            attributes: batch.attributes.row(i),
            mask: None,
        })
        .collect();
    let mut g = vec![0.0; params.len()];
    let l = batch_loss(&net.layout, params, &exs, attr_weight, Some(&mut g));
    (l, g)
}

/// Largest relative error `|a − n| / max(|a|, |n|, 1e-8)` between the
/// analytic gradient and central differences with step `eps`, over every
/// parameter. Runs on an f64 copy of the weights with dropout off.
pub fn mlp_gradient_check(net: &DemoNetwork, batch: &LossBatch<'_>, attr_weight: f64, eps: f64) -> f64 {
    let params: Vec<f64> = net.params.iter().map(|&p| f64::from(p)).collect();
    let (_, analytic) = loss_and_gradient_f64(net, batch, attr_weight, &params);
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for p in 0..params.len() {
        probe[p] = params[p] + eps;
        let (up, _) = loss_and_gradient_f64(net, batch, attr_weight, &probe);
        probe[p] = params[p] - eps;
        let (down, _) = loss_and_gradient_f64(net, batch, attr_weight, &probe);
        probe[p] = params[p];
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[p];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

/// The gradient-check fixture: a seeded random 4→3→{2, 1} network on eight
/// random examples.
pub fn gradcheck_fixture(seed: u64) -> (DemoNetwork, Matrix, Vec<usize>, Matrix) {
    let layout = Layout {
        input: 4,
        hidden: 3,
        classes: 2,
        attributes: 1,
    };
    let net = DemoNetwork::random(layout, seed);
    let mut r = SxRng::new(seed ^ 0x9e37_79b9, Stream::Scratch);
    let x = Matrix::from_vec(8, 4, (0..32).map(|_| r.normal()).collect());
    let labels = (0..8).map(|_| r.below(2)).collect();
    let a = Matrix::from_vec(8, 1, (0..8).map(|_| r.normal()).collect());
    (net, x, labels, a)
}

// ---------------------------------------------------------------------------
// Dumping

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpConfig {
    /// Stochastic passes; 0 omits the MC sample roles.
    pub passes: usize,
    /// With `false` the MC passes run without dropout (all identical).
    pub mc_dropout: bool,
    /// Query inputs are shifted by this many training standard deviations
    /// per feature before the network sees them.
    pub query_shift: f64,
}

impl Default for DumpConfig {
    fn default() -> Self {
        Self {
            passes: 30,
            mc_dropout: true,
            query_shift: 0.0,
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Query rows as the network sees them: test inputs shifted by
/// `shift · σ_j` with σ the training standard deviation of feature j,
/// rounded to f32.
pub fn query_inputs(data: &SyntheticDataset, shift: f64) -> Matrix {
    let (_, std) = column_stats(&data.x.slice_rows(0, data.n_train));
    let mut q = data.x.slice_rows(data.n_train, data.n());
    if shift != 0.0 {
        for i in 0..q.rows() {
            for (v, s) in q.row_mut(i).iter_mut().zip(&std) {
                *v = f32r(*v + shift * f64::from(*s));
            }
        }
    }
    q
}

/// Writes the tensors and `manifest.json` into `out_dir`; returns the
/// manifest path. Per-example roles hold the training rows followed by the
/// query rows, recorded in the manifest's split metadata.
pub fn dump_activations(
    net: &DemoNetwork,
    data: &SyntheticDataset,
    config: &DumpConfig,
    names: &[String],
    seed: u64,
    out_dir: &Path,
) -> Result<PathBuf, DemoError> {
    fs::create_dir_all(out_dir)?;
    let n_train = data.n_train;
    let queries = query_inputs(data, config.query_shift);
    let train_x = data.x.slice_rows(0, n_train);
    let rows: Vec<&[f64]> = train_x.iter_rows().chain(queries.iter_rows()).collect();
    let n = rows.len();
    let lay = net.layout;

    let mut latents = Vec::with_capacity(n * lay.hidden);
    let mut decision = Vec::with_capacity(n * lay.classes);
    let mut attributes = Vec::with_capacity(n * lay.attributes);
    for r in &rows {
        let f = net.predict(r);
        latents.extend(f.hidden.iter().map(|&v| v as f32));
        decision.extend(f.probabilities.iter().map(|&v| v as f32));
        attributes.extend(f.attributes.iter().map(|&v| v as f32));
    }
    let labels: Vec<f32> = data.labels.iter().map(|&l| l as f32).collect();

    let mut roles = std::collections::BTreeMap::new();
    let mut put = |role: &str, t: TensorFile| -> Result<(), DemoError> {
        let file = format!("{role}.sxt");
        write_tensor(out_dir.join(&file), &t)?;
        roles.insert(
            role.to_string(),
            RoleEntry {
                path: file,
                shape: Some(t.dims().to_vec()),
                maskable: false,
            },
        );
        Ok(())
    };
    put("train_inputs", TensorFile::from_matrix(&train_x))?;
    put("query_inputs", TensorFile::from_matrix(&queries))?;
    put("latents", TensorFile::new(vec![n, lay.hidden], latents)?)?;
    put("decision", TensorFile::new(vec![n, lay.classes], decision)?)?;
    put("attributes", TensorFile::new(vec![n, lay.attributes], attributes)?)?;
    put("labels", TensorFile::new(vec![n], labels)?)?;

    if config.passes > 0 {
        let t = config.passes;
        let mut mc_d = Vec::with_capacity(t * n * lay.classes);
        let mut mc_a = Vec::with_capacity(t * n * lay.attributes);
        let mut r = SxRng::new(seed, Stream::McDropout);
        for _ in 0..t {
            for x in &rows {
                let mask = config.mc_dropout.then(|| net.draw_mask(&mut r));
                let f = net.predict_masked(x, mask.as_deref());
                mc_d.extend(f.probabilities.iter().map(|&v| v as f32));
                mc_a.extend(f.attributes.iter().map(|&v| v as f32));
            }
        }
        put("mc_decision_samples", TensorFile::new(vec![t, n, lay.classes], mc_d)?)?;
        put("mc_attribute_samples", TensorFile::new(vec![t, n, lay.attributes], mc_a)?)?;
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        roles,
        metadata: Metadata {
            seed: Some(seed),
            model: Some(format!(
                "demo-mlp-{}-{}-{}+{}",
                lay.input, lay.hidden, lay.classes, lay.attributes
            )),
            notes: Some(format!(
                "synthetic demo; query shift {} sd; mc passes {}{}",
                config.query_shift,
                config.passes,
                if config.mc_dropout { "" } else { " (dropout off)" }
            )),
            splits: Some(Splits {
                train: [0, n_train],
                query: [n_train, n],
            }),
            attribute_names: Some(names.to_vec()),
        },
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json())?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DemoConfig {
    pub synthetic: SyntheticConfig,
    pub train: TrainConfig,
    pub dump: DumpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoRun {
    pub manifest: PathBuf,
    pub training: TrainingSummary,
}

/// Generate, train, and dump in one call.
pub fn run_demo(config: &DemoConfig, seed: u64, out_dir: &Path) -> Result<DemoRun, DemoError> {
    let data = generate_synthetic(&config.synthetic, seed)?;
    let (net, training) = train_demo_network(&data, &config.train, seed)?;
    let manifest = dump_activations(
        &net,
        &data,
        &config.dump,
        &config.synthetic.attribute_names,
        seed,
        out_dir,
    )?;
    Ok(DemoRun { manifest, training })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn generation_is_deterministic() {
        let c = SyntheticConfig::default();
        assert_eq!(generate_synthetic(&c, 7).unwrap(), generate_synthetic(&c, 7).unwrap());
        assert_ne!(
            generate_synthetic(&c, 7).unwrap().x,
            generate_synthetic(&c, 8).unwrap().x
        );
    }

    #[test]
    fn labels_are_balanced_and_causal() {
        let d = generate_synthetic(&SyntheticConfig::default(), 42).unwrap();
        let train = &d.labels[..2000];
        let frac = train.iter().sum::<usize>() as f64 / 2000.0;
        assert!((frac - 0.5).abs() <= 0.03, "{frac}");
        let logit: Vec<f64> = d.z.iter_rows().map(|z| 2.0 * z[0] + 2.0 * z[1]).collect();
        let c0 = pearson(&d.attributes.column(0), &logit).abs();
        let c2 = pearson(&d.attributes.column(2), &logit).abs();
        assert!(c0 > 0.6 && c2 < 0.1, "{c0} {c2}");
    }

    #[test]
    fn config_validation() {
        let mut c = SyntheticConfig::default();
        c.causal = vec![0, 1, 2, 3];
        assert!(c.validate().is_err());
        c.causal = vec![5];
        assert!(c.validate().is_err());
        assert!(SyntheticConfig::hidden_dependency().validate().is_ok());
    }

    #[test]
    fn gradient_check_on_tiny_net() {
        let (net, x, labels, a) = gradcheck_fixture(3);
        let batch = LossBatch { x: &x, labels: &labels, attributes: &a };
        let err = mlp_gradient_check(&net, &batch, 1.0, 1e-4);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_weights_give_zero_weight_gradients() {
        let (mut net, x, labels, _) = gradcheck_fixture(4);
        net.params.iter_mut().for_each(|p| *p = 0.0);
        let zeros = Matrix::zeros(x.rows(), 1);
        let batch = LossBatch { x: &x, labels: &labels, attributes: &zeros };
        let params = vec![0.0; net.layout.len()];
        let (_, g) = loss_and_gradient_f64(&net, &batch, 1.0, &params);
        for (p, v) in g.iter().enumerate() {
            if !net.layout.is_bias(p) {
                assert_eq!(*v, 0.0, "parameter {p}");
            }
        }
        for p in net.layout.attribute_head() {
            assert_eq!(g[p], 0.0);
        }
    }

    #[test]
    fn attribute_weight_scales_head_gradients_exactly() {
        let (net, x, labels, a) = gradcheck_fixture(5);
        let batch = LossBatch { x: &x, labels: &labels, attributes: &a };
        let params: Vec<f64> = net.params.iter().map(|&p| f64::from(p)).collect();
        let (_, g1) = loss_and_gradient_f64(&net, &batch, 1.0, &params);
        let (_, g2) = loss_and_gradient_f64(&net, &batch, 2.0, &params);
        for p in net.layout.attribute_head() {
            assert_eq!(g2[p], 2.0 * g1[p]);
        }
    }

    #[test]
    fn untrained_network_is_at_chance() {
        let c = SyntheticConfig::default();
        let d = generate_synthetic(&c, 42).unwrap();
        let t = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (_, s) = train_demo_network(&d, &t, 42).unwrap();
        assert!((s.test_accuracy - 0.5).abs() < 0.06, "{}", s.test_accuracy);
    }

    #[test]
    fn diverging_learning_rate_is_reported() {
        let d = generate_synthetic(&SyntheticConfig::default(), 1).unwrap();
        let t = TrainConfig {
            learning_rate: 1e30,
            epochs: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_demo_network(&d, &t, 1),
            Err(DemoError::DivergedLoss { .. })
        ));
    }

    #[test]
    fn mask_statistics() {
        let net = DemoNetwork::random(
            Layout {
                input: 2,
                hidden: 1000,
                classes: 2,
                attributes: 1,
            },
            1,
        );
        let net = DemoNetwork { dropout: 0.2, ..net };
        let m = net.draw_mask(&mut SxRng::new(1, Stream::Scratch));
        let kept = m.iter().filter(|&&v| v > 0.0).count();
        assert!((700..=900).contains(&kept));
        assert!(m.iter().all(|&v| v == 0.0 || v == 1.25));
    }
}
