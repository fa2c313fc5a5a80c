//! Attributes-only surrogate: a multinomial logistic regression predicting
//! the decision from the explanation attributes, and the accuracy gap
//! between it and the main model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::rng::{Stream, SxRng};

#[derive(Debug, Error, PartialEq)]
pub enum PosthocError {
    #[error("only one class present in the targets")]
    SingleClass,
    #[error("non-finite value encountered ({0})")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least 10·K = {needed} examples, got {got}")]
    TooFewExamples { needed: usize, got: usize },
    #[error("accuracy {0} outside [0, 1]")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub grad_tol: f64,
    pub max_iterations: usize,
    /// Recorded for provenance; zero initialization makes training seed-free.
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            l2: 1e-4,
            grad_tol: 1e-6,
            max_iterations: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub classes: usize,
    pub features: usize,
    /// Per class: `features` weights followed by the bias.
    pub params: Vec<f64>,
    pub meta: TrainingMeta,
}

impl SurrogateModel {
    pub fn weights(&self, class: usize) -> &[f64] {
        let w = self.features + 1;
        &self.params[class * w..class * w + self.features]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.params[class * (self.features + 1) + self.features]
    }

    pub fn probabilities(&self, row: &[f64]) -> Vec<f64> {
        softmax_row(&self.params, self.classes, row)
    }
}

fn logits(params: &[f64], classes: usize, row: &[f64]) -> Vec<f64> {
    let k = row.len();
    (0..classes)
        .map(|c| {
            let p = &params[c * (k + 1)..(c + 1) * (k + 1)];
            p[..k].iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + p[k]
        })
        .collect()
}

fn softmax_row(params: &[f64], classes: usize, row: &[f64]) -> Vec<f64> {
    let z = logits(params, classes, row);
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy plus `l2/2 · ‖W‖²` (biases unpenalized).
pub fn loss(params: &[f64], classes: usize, a: &Matrix, d: &[usize], l2: f64) -> f64 {
    let k = a.cols();
    let n = a.rows() as f64;
    let mut ce = 0.0;
    for (row, &y) in a.iter_rows().zip(d) {
        let z = logits(params, classes, row);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ce += lse - z[y];
    }
    let mut reg = 0.0;
    for c in 0..classes {
        for w in &params[c * (k + 1)..c * (k + 1) + k] {
            reg += w * w;
        }
    }
    ce / n + 0.5 * l2 * reg
}

pub fn loss_and_gradient(
    params: &[f64],
    classes: usize,
    a: &Matrix,
    d: &[usize],
    l2: f64,
) -> (f64, Vec<f64>) {
    let k = a.cols();
    let n = a.rows() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut ce = 0.0;
    for (row, &y) in a.iter_rows().zip(d) {
        let z = logits(params, classes, row);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        ce += max + s.ln() - z[y];
        for c in 0..classes {
            let g = e[c] / s - if c == y { 1.0 } else { 0.0 };
            let base = c * (k + 1);
            for (j, x) in row.iter().enumerate() {
                grad[base + j] += g * x;
            }
            grad[base + k] += g;
        }
    }
    let mut reg = 0.0;
    for c in 0..classes {
        let base = c * (k + 1);
        for j in 0..k {
            grad[base + j] = grad[base + j] / n + l2 * params[base + j];
            reg += params[base + j] * params[base + j];
        }
        grad[base + k] /= n;
    }
    (ce / n + 0.5 * l2 * reg, grad)
}

/// Largest relative error between `loss_and_gradient` and central
/// differences of `loss` with step `h`.
pub fn gradient_check(params: &[f64], classes: usize, a: &Matrix, d: &[usize], l2: f64, h: f64) -> f64 {
    let (_, g) = loss_and_gradient(params, classes, a, d, l2);
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        probe[p] = params[p] + h;
        let up = loss(&probe, classes, a, d, l2);
        probe[p] = params[p] - h;
        let down = loss(&probe, classes, a, d, l2);
        probe[p] = params[p];
        let num = (up - down) / (2.0 * h);
        worst = worst.max((g[p] - num).abs() / g[p].abs().max(num.abs()).max(1e-8));
    }
    worst
}

/// Seeded random instance for `gradient_check`: 3 classes, 4 attributes,
/// 20 examples, normal parameters.
pub fn gradcheck_instance(seed: u64) -> (Vec<f64>, usize, Matrix, Vec<usize>) {
    let mut r = SxRng::new(seed, Stream::Scratch);
    let (n, k, classes) = (20, 4, 3);
    let a = Matrix::from_vec(n, k, (0..n * k).map(|_| r.normal()).collect());
    let d = (0..n).map(|_| r.below(classes)).collect();
    let params = (0..classes * (k + 1)).map(|_| r.normal()).collect();
    (params, classes, a, d)
}

/// Full-batch gradient descent with a halving backtracking line search.
/// Returns the model and the per-iteration loss trace.
pub fn train_surrogate_traced(
    a: &Matrix,
    d: &[usize],
    config: &SurrogateConfig,
) -> Result<(SurrogateModel, Vec<f64>), PosthocError> {
    let n = a.rows();
    let k = a.cols();
    if d.len() != n {
        return Err(PosthocError::ShapeMismatch(format!(
            "{n} attribute rows but {} labels",
            d.len()
        )));
    }
    if n < 10 * k.max(1) {
        return Err(PosthocError::TooFewExamples {
            needed: 10 * k.max(1),
            got: n,
        });
    }
    if !a.is_finite() {
        return Err(PosthocError::NonFinite("attributes"));
    }
    let classes = d.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; classes];
    d.iter().for_each(|&c| present[c] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(PosthocError::SingleClass);
    }

    let mut params = vec![0.0; classes * (k + 1)];
    let (mut cur_loss, mut grad) = loss_and_gradient(&params, classes, a, d, config.l2);
    let initial_loss = cur_loss;
    let mut trace = vec![cur_loss];
    let mut iterations = 0;
    let mut converged = false;
    let grad_norm = |g: &[f64]| g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    while iterations < config.max_iterations {
        if grad_norm(&grad) < config.grad_tol {
            converged = true;
            break;
        }
        let mut step = config.learning_rate;
        let mut accepted = None;
        while step > 1e-16 {
            let cand: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            let l = loss(&cand, classes, a, d, config.l2);
            if l < cur_loss {
                accepted = Some(cand);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            // No descent possible at machine precision.
            converged = true;
            break;
        };
        params = next;
        let (l, g) = loss_and_gradient(&params, classes, a, d, config.l2);
        if !l.is_finite() {
            return Err(PosthocError::NonFinite("loss"));
        }
        cur_loss = l;
        grad = g;
        trace.push(cur_loss);
        iterations += 1;
    }
    let final_grad_norm = grad_norm(&grad);
    if final_grad_norm < config.grad_tol {
        converged = true;
    }
    Ok((
        SurrogateModel {
            classes,
            features: k,
            params,
            meta: TrainingMeta {
                iterations,
                initial_loss,
                final_loss: cur_loss,
                final_grad_norm,
                learning_rate: config.learning_rate,
                l2: config.l2,
                seed: config.seed,
                converged,
            },
        },
        trace,
    ))
}

pub fn train_surrogate(
    a: &Matrix,
    d: &[usize],
    config: &SurrogateConfig,
) -> Result<SurrogateModel, PosthocError> {
    train_surrogate_traced(a, d, config).map(|(m, _)| m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMetrics {
    pub accuracy: f64,
    /// Recall per class; `None` for classes absent from the targets.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub mean_log_loss: f64,
    pub n: usize,
}

/// Argmax predictions with ties toward the lower class index.
pub fn predict(model: &SurrogateModel, a: &Matrix) -> Vec<usize> {
    a.iter_rows()
        .map(|r| crate::dataio::argmax(&model.probabilities(r)))
        .collect()
}

pub fn evaluate_surrogate(
    model: &SurrogateModel,
    a: &Matrix,
    d: &[usize],
) -> Result<SurrogateMetrics, PosthocError> {
    if a.rows() != d.len() || a.cols() != model.features {
        return Err(PosthocError::ShapeMismatch(format!(
            "model expects {} features; got {}×{} attributes and {} labels",
            model.features,
            a.rows(),
            a.cols(),
            d.len()
        )));
    }
    let n = d.len();
    let classes = model.classes.max(d.iter().max().map_or(0, |m| m + 1));
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    let mut correct = 0usize;
    let mut log_loss = 0.0;
    for (row, &y) in a.iter_rows().zip(d) {
        let p = model.probabilities(row);
        let pred = crate::dataio::argmax(&p);
        totals[y] += 1;
        if pred == y {
            hits[y] += 1;
            correct += 1;
        }
        let py = p.get(y).copied().unwrap_or(0.0).max(1e-300);
        log_loss -= py.ln();
    }
    Ok(SurrogateMetrics {
        accuracy: correct as f64 / n.max(1) as f64,
        per_class_accuracy: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
        mean_log_loss: log_loss / n.max(1) as f64,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FidelityTag {
    AttributesSufficient,
    AdditionalFeaturesLikely,
}

impl std::fmt::Display for FidelityTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FidelityTag::AttributesSufficient => "ATTRIBUTES_SUFFICIENT",
            FidelityTag::AdditionalFeaturesLikely => "ADDITIONAL_FEATURES_LIKELY",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityGap {
    pub main_accuracy: f64,
    pub surrogate_accuracy: f64,
    pub gap: f64,
    pub threshold: f64,
    pub tag: FidelityTag,
}

pub const DEFAULT_FIDELITY_THRESHOLD: f64 = 0.02;

/// `main − surrogate`; within `threshold` (plus 1e-12 rounding slack) the
/// attributes are deemed sufficient.
pub fn fidelity_gap(main: f64, surrogate: f64, threshold: f64) -> Result<FidelityGap, PosthocError> {
    for v in [main, surrogate] {
        if !(0.0..=1.0).contains(&v) {
            return Err(PosthocError::OutOfRange(v));
        }
    }
    let gap = main - surrogate;
    let tag = if gap <= threshold + 1e-12 {
        FidelityTag::AttributesSufficient
    } else {
        FidelityTag::AdditionalFeaturesLikely
    };
    Ok(FidelityGap {
        main_accuracy: main,
        surrogate_accuracy: surrogate,
        gap,
        threshold,
        tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_matrix(r: &mut SxRng, n: usize, k: usize) -> Matrix {
        Matrix::from_vec(n, k, (0..n * k).map(|_| r.normal()).collect())
    }

    #[test]
    fn gradient_check_fixture_passes() {
        for seed in 0..5 {
            let (p, c, a, d) = gradcheck_instance(seed);
            assert!(gradient_check(&p, c, &a, &d, 1e-4, 1e-5) < 1e-4);
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let mut r = SxRng::new(1, Stream::Scratch);
        let a = normal_matrix(&mut r, 1000, 3);
        let d: Vec<usize> = a.iter_rows().map(|row| usize::from(row[0] > 0.0)).collect();
        let m = train_surrogate(&a, &d, &SurrogateConfig::default()).unwrap();
        let acc = evaluate_surrogate(&m, &a, &d).unwrap().accuracy;
        assert!(acc >= 0.99, "{acc}");
        assert!(m.meta.final_loss <= m.meta.initial_loss);
    }

    #[test]
    fn xor_is_not_linearly_learnable() {
        let mut r = SxRng::new(2, Stream::Scratch);
        let n = 1000;
        let mut rows = Vec::with_capacity(n * 2);
        let mut d = Vec::with_capacity(n);
        for _ in 0..n {
            let (x1, x2) = (r.below(2), r.below(2));
            rows.push(x1 as f64);
            rows.push(x2 as f64);
            d.push(x1 ^ x2);
        }
        let a = Matrix::from_vec(n, 2, rows);
        let m = train_surrogate(&a, &d, &SurrogateConfig::default()).unwrap();
        assert!(evaluate_surrogate(&m, &a, &d).unwrap().accuracy <= 0.6);
    }

    #[test]
    fn independent_targets_sit_at_chance() {
        let mut r = SxRng::new(3, Stream::Scratch);
        let a = normal_matrix(&mut r, 10_000, 2);
        let d: Vec<usize> = (0..10_000).map(|i| i % 2).collect();
        let m = train_surrogate(&a, &d, &SurrogateConfig::default()).unwrap();
        let acc = evaluate_surrogate(&m, &a, &d).unwrap().accuracy;
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn loss_never_increases() {
        let mut r = SxRng::new(4, Stream::Scratch);
        let a = normal_matrix(&mut r, 300, 3);
        let d: Vec<usize> = a
            .iter_rows()
            .map(|row| if row[0] + 0.5 * row[1] > 0.3 { 2 } else { usize::from(row[2] > 0.0) })
            .collect();
        let cfg = SurrogateConfig {
            max_iterations: 300,
            ..SurrogateConfig::default()
        };
        let (_, trace) = train_surrogate_traced(&a, &d, &cfg).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn single_class_rejected() {
        let a = Matrix::from_vec(20, 1, (0..20).map(f64::from).collect());
        assert_eq!(
            train_surrogate(&a, &[1; 20], &SurrogateConfig::default()).unwrap_err(),
            PosthocError::SingleClass
        );
    }

    #[test]
    fn perfect_and_inverted_predictions() {
        let model = SurrogateModel {
            classes: 2,
            features: 1,
            params: vec![-40.0, 0.0, 40.0, 0.0],
            meta: TrainingMeta {
                iterations: 0,
                initial_loss: 0.0,
                final_loss: 0.0,
                final_grad_norm: 0.0,
                learning_rate: 1.0,
                l2: 0.0,
                seed: 0,
                converged: true,
            },
        };
        let a = Matrix::from_vec(4, 1, vec![-1.0, -2.0, 1.0, 2.0]);
        let m = evaluate_surrogate(&model, &a, &[0, 0, 1, 1]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.mean_log_loss < 1e-12);
        let m = evaluate_surrogate(&model, &a, &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert!(evaluate_surrogate(&model, &a, &[0, 1]).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let g = fidelity_gap(0.95, 0.95, DEFAULT_FIDELITY_THRESHOLD).unwrap();
        assert_eq!(g.gap, 0.0);
        assert_eq!(g.tag, FidelityTag::AttributesSufficient);
        let g = fidelity_gap(0.95, 0.60, DEFAULT_FIDELITY_THRESHOLD).unwrap();
        assert!((g.gap - 0.35).abs() < 1e-12);
        assert_eq!(g.tag, FidelityTag::AdditionalFeaturesLikely);
        assert_eq!(
            fidelity_gap(1.2, 0.5, 0.02).unwrap_err(),
            PosthocError::OutOfRange(1.2)
        );
    }
}
