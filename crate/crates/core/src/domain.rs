//! Applicability-domain analysis.
//!
//! Training inputs are standardized, reduced with PCA, and then three checks
//! run in the reduced space: exact convex-hull membership (a phase-1 simplex
//! feasibility problem), mean distance to the k nearest training points, and
//! the ridge-regularized hat-matrix leverage. The hull decides IN; the kNN
//! distance grades points outside the hull into BORDERLINE or OUT.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{read_tensor, write_tensor, DataError, TensorFile};
use crate::linalg::{dot, jacobi_eigen, percentile, spd_inverse, squared_distance, Matrix};

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("need at least {needed} training points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("query has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("simplex exceeded its iteration cap ({0}); numerically troubled instance")]
    LpCycleLimit(usize),
    #[error("leverage Gram matrix is not positive definite")]
    SingularGram,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub variance_target: f64,
    pub max_dims: usize,
    pub knn_k: usize,
    pub knn_percentile: f64,
    pub hull_eps: f64,
    pub ridge: f64,
    /// Leverage threshold multiplier in `c·(p+1)/n`.
    pub leverage_factor: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            variance_target: 0.95,
            max_dims: 10,
            knn_k: 5,
            knn_percentile: 0.95,
            hull_eps: 1e-7,
            ridge: 1e-8,
            leverage_factor: 3.0,
        }
    }
}

impl DomainConfig {
    fn validate(&self) -> Result<(), DomainError> {
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return Err(DomainError::BadConfig("variance_target must be in (0, 1]".into()));
        }
        if self.max_dims == 0 || self.knn_k == 0 {
            return Err(DomainError::BadConfig("max_dims and knn_k must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.knn_percentile) {
            return Err(DomainError::BadConfig("knn_percentile must be in [0, 1]".into()));
        }
        if !(self.hull_eps >= 0.0) || !(self.ridge > 0.0) || !(self.leverage_factor > 0.0) {
            return Err(DomainError::BadConfig(
                "hull_eps must be ≥ 0, ridge and leverage_factor > 0".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Standardization and PCA

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardizer {
    /// Per-feature mean and sample (n−1) standard deviation; constant
    /// features get σ = 1 and are flagged.
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows() as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for r in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in x.iter_rows() {
            for j in 0..d {
                let dv = r[j] - mean[j];
                var[j] += dv * dv;
            }
        }
        let mut std = Vec::with_capacity(d);
        let mut constant = Vec::with_capacity(d);
        for v in var {
            let s = (v / (n - 1.0).max(1.0)).sqrt();
            if s > 0.0 {
                std.push(s);
                constant.push(false);
            } else {
                std.push(1.0);
                constant.push(true);
            }
        }
        Self {
            mean,
            std,
            constant,
        }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = Vec::with_capacity(x.rows() * x.cols());
        for r in x.iter_rows() {
            out.extend(self.transform_row(r));
        }
        Matrix::from_vec(x.rows(), x.cols(), out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub center: Vec<f64>,
    /// One retained component per row (d_reduced × d).
    pub components: Matrix,
    /// Ratios for every eigen-direction, descending.
    pub explained_variance_ratio: Vec<f64>,
    pub d_reduced: usize,
}

impl PcaModel {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        self.components.matvec(&centered)
    }

    pub fn reconstruct(&self, p: &[f64]) -> Vec<f64> {
        let mut out = self.center.clone();
        for (k, &coef) in p.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.components.row(k)) {
                *o += coef * c;
            }
        }
        out
    }
}

const JACOBI_REL_TOL: f64 = 1e-10;

pub fn fit_pca(x: &Matrix, variance_target: f64, max_dims: usize) -> Result<PcaModel, DomainError> {
    let n = x.rows();
    let d = x.cols();
    if n < 2 {
        return Err(DomainError::TooFewPoints { needed: 2, got: n });
    }
    let mut center = vec![0.0; d];
    for r in x.iter_rows() {
        for (c, v) in center.iter_mut().zip(r) {
            *c += v;
        }
    }
    center.iter_mut().for_each(|c| *c /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    for r in x.iter_rows() {
        for i in 0..d {
            let di = r[i] - center[i];
            for j in i..d {
                cov[(i, j)] += di * (r[j] - center[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = jacobi_eigen(&cov, JACOBI_REL_TOL);
    let values: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let ratios: Vec<f64> = if total > 0.0 {
        values.iter().map(|v| v / total).collect()
    } else {
        vec![0.0; d]
    };
    let rank = values.iter().filter(|&&v| v > 1e-12 * total).count().max(1);
    let mut keep = d;
    let mut cum = 0.0;
    for (k, r) in ratios.iter().enumerate() {
        cum += r;
        if cum >= variance_target - 1e-12 {
            keep = k + 1;
            break;
        }
    }
    let d_reduced = keep.min(rank).min(max_dims).max(1);
    let components = eig.vectors.slice_rows(0, d_reduced);
    Ok(PcaModel {
        center,
        components,
        explained_variance_ratio: ratios,
        d_reduced,
    })
}

// ---------------------------------------------------------------------------
// Convex hull membership by phase-1 simplex

/// Per-coordinate affine map of the training points onto [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScaling {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

impl UnitScaling {
    pub fn fit(points: &Matrix) -> Self {
        let d = points.cols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in points.iter_rows() {
            for j in 0..d {
                min[j] = min[j].min(r[j]);
                max[j] = max[j].max(r[j]);
            }
        }
        let range = min
            .iter()
            .zip(&max)
            .map(|(lo, hi)| if hi > lo { hi - lo } else { 1.0 })
            .collect();
        Self { min, range }
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.min)
            .zip(&self.range)
            .map(|((v, lo), r)| (v - lo) / r)
            .collect()
    }
}

const PIVOT_TOL: f64 = 1e-12;

/// Optimal phase-1 objective (sum of artificials) for
/// `{λ ≥ 0 : Σλ = 1, Σ λ_i x_i = q}`, stopping early once it is ≤ `stop_at`.
/// Points and query must already be scaled.
fn phase_one(points: &Matrix, q: &[f64], stop_at: f64) -> Result<f64, DomainError> {
    let n = points.rows();
    let d = points.cols();
    let m = d + 1;
    let width = n + m + 1;
    let rhs_col = n + m;
    let mut t = vec![0.0; m * width];
    for r in 0..m {
        let (row_rhs, sign) = if r < d {
            (q[r], if q[r] < 0.0 { -1.0 } else { 1.0 })
        } else {
            (1.0, 1.0)
        };
        let row = &mut t[r * width..(r + 1) * width];
        for i in 0..n {
            row[i] = sign * if r < d { points[(i, r)] } else { 1.0 };
        }
        row[n + r] = 1.0;
        row[rhs_col] = sign * row_rhs;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    // Reduced costs c_j − z_j with c = 1 on the artificials.
    let mut obj = vec![0.0; width];
    for r in 0..m {
        let row = &t[r * width..(r + 1) * width];
        for j in 0..n {
            obj[j] -= row[j];
        }
        obj[rhs_col] -= row[rhs_col];
    }

    let cap = 10 * (n + d);
    for _ in 0..cap {
        let w = -obj[rhs_col];
        if w <= stop_at {
            return Ok(w.max(0.0));
        }
        // Bland: lowest-index improving column.
        let Some(enter) = (0..n + m).find(|&j| obj[j] < -PIVOT_TOL) else {
            return Ok(w.max(0.0));
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            let a = t[r * width + enter];
            if a > PIVOT_TOL {
                let ratio = t[r * width + rhs_col] / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio || (ratio == lratio && basis[r] < basis[lr]) {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
        }
        let Some((pr, _)) = leave else {
            // Unbounded direction cannot occur in phase 1; treat as optimal.
            return Ok(w.max(0.0));
        };
        let piv = t[pr * width + enter];
        for j in 0..width {
            t[pr * width + j] /= piv;
        }
        let pivot_row: Vec<f64> = t[pr * width..(pr + 1) * width].to_vec();
        for r in 0..m {
            if r == pr {
                continue;
            }
            let f = t[r * width + enter];
            if f != 0.0 {
                let row = &mut t[r * width..(r + 1) * width];
                for (x, p) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * p;
                }
                row[enter] = 0.0;
            }
        }
        let f = obj[enter];
        for (x, p) in obj.iter_mut().zip(&pivot_row) {
            *x -= f * p;
        }
        obj[enter] = 0.0;
        basis[pr] = enter;
    }
    Err(DomainError::LpCycleLimit(cap))
}

/// Whether `q` is a convex combination of the rows of `points`. Boundary
/// points count as inside.
pub fn hull_membership(points: &Matrix, q: &[f64], eps: f64) -> Result<bool, DomainError> {
    let scaling = UnitScaling::fit(points);
    hull_membership_scaled(points, &scaling, q, eps)
}

fn hull_membership_scaled(
    points: &Matrix,
    scaling: &UnitScaling,
    q: &[f64],
    eps: f64,
) -> Result<bool, DomainError> {
    let d = points.cols();
    if q.len() != d {
        return Err(DomainError::DimensionMismatch {
            expected: d,
            got: q.len(),
        });
    }
    if points.rows() < d + 1 {
        return Err(DomainError::TooFewPoints {
            needed: d + 1,
            got: points.rows(),
        });
    }
    let mut scaled = Vec::with_capacity(points.rows() * d);
    for r in points.iter_rows() {
        scaled.extend(scaling.apply(r));
    }
    let scaled = Matrix::from_vec(points.rows(), d, scaled);
    let qs = scaling.apply(q);
    Ok(phase_one(&scaled, &qs, eps)? <= eps)
}

// ---------------------------------------------------------------------------
// kNN distance

fn mean_of_k_smallest(dists: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for v in dists {
        if best.len() < k || v < best[k - 1] {
            let pos = best.partition_point(|&b| b <= v);
            best.insert(pos, v);
            best.truncate(k);
        }
    }
    best.iter().sum::<f64>() / best.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnStats {
    /// Leave-one-out mean distance to the k nearest other points.
    pub per_point: Vec<f64>,
    pub threshold: f64,
}

pub fn knn_stats(points: &Matrix, k: usize, pct: f64) -> Result<KnnStats, DomainError> {
    let n = points.rows();
    if k == 0 || n <= k {
        return Err(DomainError::TooFewPoints {
            needed: k + 1,
            got: n,
        });
    }
    let per_point: Vec<f64> = (0..n)
        .map(|i| {
            let pi = points.row(i);
            mean_of_k_smallest(
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| squared_distance(pi, points.row(j)).sqrt()),
                k,
            )
        })
        .collect();
    let threshold = percentile(&per_point, pct);
    Ok(KnnStats {
        per_point,
        threshold,
    })
}

pub fn knn_distance(points: &Matrix, q: &[f64], k: usize) -> f64 {
    mean_of_k_smallest(
        points.iter_rows().map(|r| squared_distance(r, q).sqrt()),
        k.min(points.rows()),
    )
}

// ---------------------------------------------------------------------------
// Leverage

/// `(X̃ᵀX̃ + ridge·I)⁻¹` for the intercept-augmented matrix X̃ = [1 | X].
pub fn leverage_gram_inverse(points: &Matrix, ridge: f64) -> Result<Matrix, DomainError> {
    let p = points.cols() + 1;
    let mut g = Matrix::zeros(p, p);
    let mut aug = vec![1.0; p];
    for r in points.iter_rows() {
        aug[1..].copy_from_slice(r);
        for i in 0..p {
            for j in i..p {
                g[(i, j)] += aug[i] * aug[j];
            }
        }
    }
    for i in 0..p {
        g[(i, i)] += ridge;
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    spd_inverse(&g).ok_or(DomainError::SingularGram)
}

pub fn leverage(gram_inverse: &Matrix, q: &[f64]) -> f64 {
    let mut aug = Vec::with_capacity(q.len() + 1);
    aug.push(1.0);
    aug.extend_from_slice(q);
    dot(&aug, &gram_inverse.matvec(&aug))
}

// ---------------------------------------------------------------------------
// Fitted model and verdicts

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DomainLevel {
    In,
    Borderline,
    Out,
}

impl std::fmt::Display for DomainLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DomainLevel::In => "IN",
            DomainLevel::Borderline => "BORDERLINE",
            DomainLevel::Out => "OUT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainVerdict {
    pub in_hull: bool,
    pub knn_distance: f64,
    pub knn_exceeded: bool,
    pub leverage: f64,
    pub leverage_exceeded: bool,
    pub level: DomainLevel,
}

#[derive(Debug, Clone)]
pub struct DomainModel {
    pub config: DomainConfig,
    pub standardizer: Standardizer,
    pub pca: PcaModel,
    pub train_proj: Matrix,
    pub hull_scaling: UnitScaling,
    pub train_knn: Vec<f64>,
    pub knn_threshold: f64,
    pub gram_inverse: Matrix,
    pub leverage_threshold: f64,
    train_raw: Matrix,
}

pub fn fit_domain_model(x_train: &Matrix, config: &DomainConfig) -> Result<DomainModel, DomainError> {
    config.validate()?;
    let n = x_train.rows();
    if n < 8 {
        return Err(DomainError::TooFewPoints { needed: 8, got: n });
    }
    if !x_train.is_finite() {
        return Err(DomainError::NonFinite("training inputs"));
    }
    let standardizer = Standardizer::fit(x_train);
    let xs = standardizer.transform(x_train);
    let pca = fit_pca(&xs, config.variance_target, config.max_dims)?;
    let mut proj = Vec::with_capacity(n * pca.d_reduced);
    for r in xs.iter_rows() {
        proj.extend(pca.project(r));
    }
    let train_proj = Matrix::from_vec(n, pca.d_reduced, proj);
    if n < pca.d_reduced + 1 {
        return Err(DomainError::TooFewPoints {
            needed: pca.d_reduced + 1,
            got: n,
        });
    }
    let knn = knn_stats(&train_proj, config.knn_k, config.knn_percentile)?;
    let gram_inverse = leverage_gram_inverse(&train_proj, config.ridge)?;
    let leverage_threshold = config.leverage_factor * (pca.d_reduced + 1) as f64 / n as f64;
    Ok(DomainModel {
        config: *config,
        standardizer,
        hull_scaling: UnitScaling::fit(&train_proj),
        pca,
        train_proj,
        train_knn: knn.per_point,
        knn_threshold: knn.threshold,
        gram_inverse,
        leverage_threshold,
        train_raw: x_train.clone(),
    })
}

impl DomainModel {
    pub fn input_dim(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn d_reduced(&self) -> usize {
        self.pca.d_reduced
    }

    pub fn train_raw(&self) -> &Matrix {
        &self.train_raw
    }

    /// Standardize then project a raw point into the reduced space.
    pub fn embed(&self, q: &[f64]) -> Vec<f64> {
        self.pca.project(&self.standardizer.transform_row(q))
    }

    /// Inverse of [`embed`](Self::embed) for points in the reduced space.
    pub fn lift(&self, p: &[f64]) -> Vec<f64> {
        self.standardizer.inverse_row(&self.pca.reconstruct(p))
    }

    pub fn check_projected(&self, p: &[f64]) -> Result<DomainVerdict, DomainError> {
        let in_hull =
            hull_membership_scaled(&self.train_proj, &self.hull_scaling, p, self.config.hull_eps)?;
        let knn_distance = knn_distance(&self.train_proj, p, self.config.knn_k);
        let knn_exceeded = knn_distance > self.knn_threshold;
        let h = leverage(&self.gram_inverse, p);
        let level = if in_hull {
            DomainLevel::In
        } else if knn_exceeded {
            DomainLevel::Out
        } else {
            DomainLevel::Borderline
        };
        Ok(DomainVerdict {
            in_hull,
            knn_distance,
            knn_exceeded,
            leverage: h,
            leverage_exceeded: h > self.leverage_threshold,
            level,
        })
    }
}

pub fn check_domain(model: &DomainModel, q: &[f64]) -> Result<DomainVerdict, DomainError> {
    if q.len() != model.input_dim() {
        return Err(DomainError::DimensionMismatch {
            expected: model.input_dim(),
            got: q.len(),
        });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(DomainError::NonFinite("query"));
    }
    model.check_projected(&model.embed(q))
}

pub fn check_all(model: &DomainModel, queries: &Matrix) -> Result<Vec<DomainVerdict>, DomainError> {
    queries.iter_rows().map(|q| check_domain(model, q)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub in_domain: usize,
    pub borderline: usize,
    pub out: usize,
}

impl LevelCounts {
    pub fn tally(verdicts: &[DomainVerdict]) -> Self {
        let mut c = Self::default();
        for v in verdicts {
            match v.level {
                DomainLevel::In => c.in_domain += 1,
                DomainLevel::Borderline => c.borderline += 1,
                DomainLevel::Out => c.out += 1,
            }
        }
        c
    }
}

// ---------------------------------------------------------------------------
// Persistence: the raw training matrix goes into the tensor file, the
// config and fitted scalars into a JSON sidecar. Loading refits from the
// stored inputs (the fit is deterministic) and checks the sidecar agrees.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSidecar {
    pub format: String,
    pub config: DomainConfig,
    pub n: usize,
    pub input_dim: usize,
    pub d_reduced: usize,
    pub explained_variance_ratio: Vec<f64>,
    pub knn_threshold: f64,
    pub leverage_threshold: f64,
    pub source: String,
}

pub const SIDECAR_FORMAT: &str = "sxai-domain-v1";

pub fn sidecar_path(model_path: &Path) -> PathBuf {
    let mut s = model_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl DomainModel {
    pub fn sidecar(&self, source: &str) -> DomainSidecar {
        DomainSidecar {
            format: SIDECAR_FORMAT.into(),
            config: self.config,
            n: self.train_raw.rows(),
            input_dim: self.input_dim(),
            d_reduced: self.d_reduced(),
            explained_variance_ratio: self.pca.explained_variance_ratio.clone(),
            knn_threshold: self.knn_threshold,
            leverage_threshold: self.leverage_threshold,
            source: source.into(),
        }
    }
}

/// Writes `path` (training inputs as an f32 tensor) and `path.json`.
/// The model should have been fitted on f32-representable inputs for the
/// reload to reproduce it exactly.
pub fn save_domain_model(model: &DomainModel, path: &Path, source: &str) -> Result<(), DomainError> {
    write_tensor(path, &TensorFile::from_matrix(&model.train_raw))?;
    let json = serde_json::to_string_pretty(&model.sidecar(source))
        .map_err(|e| DomainError::ModelFile(e.to_string()))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn load_domain_model(path: &Path) -> Result<(DomainModel, DomainSidecar), DomainError> {
    let raw = read_tensor(path)?.to_matrix()?;
    let text = fs::read_to_string(sidecar_path(path))?;
    let sidecar: DomainSidecar =
        serde_json::from_str(&text).map_err(|e| DomainError::ModelFile(e.to_string()))?;
    if sidecar.format != SIDECAR_FORMAT {
        return Err(DomainError::ModelFile(format!(
            "unknown sidecar format `{}`",
            sidecar.format
        )));
    }
    let model = fit_domain_model(&raw, &sidecar.config)?;
    if model.d_reduced() != sidecar.d_reduced
        || model.knn_threshold != sidecar.knn_threshold
        || model.leverage_threshold != sidecar.leverage_threshold
    {
        return Err(DomainError::ModelFile(
            "refit from stored inputs disagrees with the sidecar".into(),
        ));
    }
    Ok((model, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Stream, SxRng};

    fn tri() -> Matrix {
        Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]])
    }

    #[test]
    fn triangle_membership() {
        assert!(hull_membership(&tri(), &[0.25, 0.25], 1e-7).unwrap());
        assert!(!hull_membership(&tri(), &[1.0, 1.0], 1e-7).unwrap());
        // boundary and vertices count as inside
        assert!(hull_membership(&tri(), &[0.5, 0.5], 1e-7).unwrap());
        assert!(hull_membership(&tri(), &[1.0, 0.0], 1e-7).unwrap());
        assert!(!hull_membership(&tri(), &[-0.01, 0.5], 1e-7).unwrap());
    }

    #[test]
    fn hull_needs_enough_points() {
        let two = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert!(matches!(
            hull_membership(&two, &[0.5, 0.0], 1e-7),
            Err(DomainError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn pca_on_a_line() {
        let x = Matrix::from_rows(&[
            vec![-1.5, -1.5],
            vec![-0.5, -0.5],
            vec![0.5, 0.5],
            vec![1.5, 1.5],
        ]);
        let p = fit_pca(&x, 0.95, 10).unwrap();
        assert_eq!(p.d_reduced, 1);
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_isotropic_ratios() {
        let mut r = SxRng::new(2, Stream::Scratch);
        let rows: Vec<Vec<f64>> = (0..10_000).map(|_| vec![r.normal(), r.normal()]).collect();
        let x = Matrix::from_rows(&rows);
        let p = fit_pca(&Standardizer::fit(&x).transform(&x), 0.95, 10).unwrap();
        for ratio in &p.explained_variance_ratio {
            assert!((0.48..=0.52).contains(ratio), "{ratio}");
        }
        assert!(p.explained_variance_ratio.iter().sum::<f64>() <= 1.0 + 1e-9);
    }

    #[test]
    fn pca_full_reconstruction() {
        let mut r = SxRng::new(3, Stream::Scratch);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|_| r.normal()).collect())
            .collect();
        let x = Matrix::from_rows(&rows);
        let p = fit_pca(&x, 1.0, 10).unwrap();
        assert_eq!(p.d_reduced, 4);
        let g = p.components.matmul(&p.components.transpose());
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-8);
            }
        }
        for row in x.iter_rows() {
            let back = p.reconstruct(&p.project(row));
            for (a, b) in back.iter().zip(row) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn knn_examples() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
        let s = knn_stats(&x, 1, 0.95).unwrap();
        assert_eq!(s.per_point, vec![1.0, 1.0, 1.0]);
        assert_eq!(s.threshold, 1.0);
        let dup = Matrix::from_rows(&vec![vec![0.5, 0.5]; 6]);
        assert_eq!(knn_stats(&dup, 2, 0.95).unwrap().threshold, 0.0);
        assert!(matches!(
            knn_stats(&x, 3, 0.95),
            Err(DomainError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn two_point_leverage_is_one() {
        let x = Matrix::from_rows(&[vec![-1.0], vec![2.0]]);
        let g = leverage_gram_inverse(&x, 1e-8).unwrap();
        for r in x.iter_rows() {
            assert!((leverage(&g, r) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn standardizer_flags_constant_features() {
        let x = Matrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]);
        let s = Standardizer::fit(&x);
        assert_eq!(s.constant, vec![false, true]);
        assert_eq!(s.std[1], 1.0);
        let t = s.transform(&x);
        let col = t.column(0);
        let mean: f64 = col.iter().sum::<f64>() / 3.0;
        let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_on_check() {
        let mut r = SxRng::new(4, Stream::Scratch);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| vec![r.normal(), r.normal(), r.normal()]).collect();
        let m = fit_domain_model(&Matrix::from_rows(&rows), &DomainConfig::default()).unwrap();
        assert!(matches!(
            check_domain(&m, &[0.0, 0.0]),
            Err(DomainError::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(
            check_domain(&m, &[0.0, f64::NAN, 0.0]),
            Err(DomainError::NonFinite(_))
        ));
    }
}
