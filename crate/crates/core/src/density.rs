//! Histogram and Parzen-window (Gaussian product kernel) density estimates.

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("x and y lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("bandwidths must be strictly positive")]
    BadBandwidth,
    #[error("query has dimension {got}, model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bin count must be at least 1")]
    ZeroBins,
}

pub const MIN_BINS: usize = 4;
pub const MAX_BINS: usize = 64;

/// `clamp(ceil(n^(1/3)), 4, 64)`, with the cube root taken exactly on integers.
pub fn bin_count_rule(n: usize) -> Result<usize, DensityError> {
    if n < 4 {
        return Err(DensityError::TooFewSamples { needed: 4, got: n });
    }
    let mut b = 1usize;
    while b.saturating_mul(b).saturating_mul(b) < n && b < MAX_BINS {
        b += 1;
    }
    Ok(b.clamp(MIN_BINS, MAX_BINS))
}

/// Equal-width binning of one axis over its observed range.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBinning {
    pub edges: Vec<f64>,
    pub degenerate: bool,
    min: f64,
    width: f64,
}

impl AxisBinning {
    pub fn fit(values: &[f64], bins: usize) -> Result<Self, DensityError> {
        if bins == 0 {
            return Err(DensityError::ZeroBins);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DensityError::NonFinite(i));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Ok(Self {
                edges: vec![min - 0.5, min + 0.5],
                degenerate: true,
                min,
                width: 1.0,
            });
        }
        let width = (max - min) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|b| min + width * b as f64).collect();
        edges.push(max);
        Ok(Self {
            edges,
            degenerate: false,
            min,
            width,
        })
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Bin index; the right-most edge falls in the last bin.
    pub fn index(&self, v: f64) -> usize {
        if self.degenerate {
            return 0;
        }
        let raw = ((v - self.min) / self.width).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.bins() - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// Row-major, x bins by y bins.
    pub counts: Vec<u64>,
    pub n: u64,
    pub x_degenerate: bool,
    pub y_degenerate: bool,
}

impl Histogram2D {
    pub fn x_bins(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn y_bins(&self) -> usize {
        self.y_edges.len() - 1
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.y_bins() + j]
    }

    pub fn is_degenerate(&self) -> bool {
        self.x_degenerate || self.y_degenerate
    }
}

pub fn fit_histogram_2d(
    x: &[f64],
    y: &[f64],
    x_bins: usize,
    y_bins: usize,
) -> Result<Histogram2D, DensityError> {
    if x.len() != y.len() {
        return Err(DensityError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 4 {
        return Err(DensityError::TooFewSamples {
            needed: 4,
            got: x.len(),
        });
    }
    let bx = AxisBinning::fit(x, x_bins)?;
    let by = AxisBinning::fit(y, y_bins)?;
    let (nx, ny) = (bx.bins(), by.bins());
    let mut counts = vec![0u64; nx * ny];
    for (&xi, &yi) in x.iter().zip(y) {
        counts[bx.index(xi) * ny + by.index(yi)] += 1;
    }
    Ok(Histogram2D {
        x_edges: bx.edges,
        y_edges: by.edges,
        counts,
        n: x.len() as u64,
        x_degenerate: bx.degenerate,
        y_degenerate: by.degenerate,
    })
}

/// Mean and sample (N−1) standard deviation, independent of sample order.
pub fn mean_and_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = order_free_sum(x.to_vec()) / n;
    let var = order_free_sum(x.iter().map(|v| (v - mean) * (v - mean)).collect()) / (n - 1.0);
    (mean, var.sqrt())
}

/// Rule-of-thumb bandwidth `1.06 σ N^(-1/5)` with the sample (N−1) σ.
pub fn silverman_bandwidth(x: &[f64]) -> Result<f64, DensityError> {
    if x.len() < 2 {
        return Err(DensityError::TooFewSamples {
            needed: 2,
            got: x.len(),
        });
    }
    let (_, sd) = mean_and_std(x);
    if !(sd > 0.0) {
        return Err(DensityError::ZeroVariance);
    }
    Ok(1.06 * sd * (x.len() as f64).powf(-0.2))
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian product-kernel density estimate over stored points.
#[derive(Debug, Clone)]
pub struct KdeModel {
    points: Matrix,
    bandwidths: Vec<f64>,
    log_norm: f64,
}

impl KdeModel {
    pub fn new(points: Matrix, bandwidths: Vec<f64>) -> Result<Self, DensityError> {
        if points.rows() == 0 {
            return Err(DensityError::TooFewSamples { needed: 1, got: 0 });
        }
        if bandwidths.len() != points.cols() {
            return Err(DensityError::DimensionMismatch {
                expected: points.cols(),
                got: bandwidths.len(),
            });
        }
        if bandwidths.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(DensityError::BadBandwidth);
        }
        let log_norm = -(points.rows() as f64).ln()
            - bandwidths
                .iter()
                .map(|h| h.ln() + LN_SQRT_2PI)
                .sum::<f64>();
        Ok(Self {
            points,
            bandwidths,
            log_norm,
        })
    }

    /// One-dimensional model with the given bandwidth.
    pub fn univariate(x: &[f64], h: f64) -> Result<Self, DensityError> {
        Self::new(Matrix::from_vec(x.len(), 1, x.to_vec()), vec![h])
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    fn exponent(&self, point: &[f64], query: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((p, q), h) in point.iter().zip(query).zip(&self.bandwidths) {
            let u = (q - p) / h;
            s += u * u;
        }
        -0.5 * s
    }

    /// Log density at `query`, via log-sum-exp so that far queries stay finite.
    pub fn log_density(&self, query: &[f64]) -> Result<f64, DensityError> {
        if query.len() != self.dim() {
            return Err(DensityError::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        let mut max = f64::NEG_INFINITY;
        for p in self.points.iter_rows() {
            max = max.max(self.exponent(p, query));
        }
        let s = order_free_sum(
            self.points
                .iter_rows()
                .map(|p| (self.exponent(p, query) - max).exp())
                .collect(),
        );
        Ok(self.log_norm + max + s.ln())
    }

    /// Log density at every stored point (resubstitution).
    ///
    /// Points are visited in lexicographic order and kernel terms farther
    /// than `RESUB_CUTOFF` bandwidths along the first axis are skipped; the
    /// self term bounds the sum below by 1, so the skipped mass is under
    /// `n·exp(-RESUB_CUTOFF²/2)` relative, below f64 resolution for
    /// n < 10⁶. Each pair is evaluated once and credited to both ends;
    /// duplicated points all take the value of the first of their run, so
    /// results are independent of input order.
    pub fn resubstitution_log_densities(&self) -> Vec<f64> {
        let n = self.len();
        let d = self.dim();
        let lex = |a: usize, b: usize| {
            let (ra, rb) = (self.points.row(a), self.points.row(b));
            ra.iter()
                .zip(rb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| lex(a, b));
        // Bandwidth-scaled coordinates, contiguous in sorted order.
        let mut z = Vec::with_capacity(n * d);
        for &i in &order {
            z.extend(self.points.row(i).iter().zip(&self.bandwidths).map(|(v, h)| v / h));
        }
        let cut2 = RESUB_CUTOFF * RESUB_CUTOFF;

        let mut sums = vec![1.0; n];
        for a in 0..n {
            let za = &z[a * d..(a + 1) * d];
            let mut own = 0.0;
            for (b, zb) in z[(a + 1) * d..].chunks_exact(d).enumerate() {
                let u0 = zb[0] - za[0];
                if u0 > RESUB_CUTOFF {
                    break;
                }
                let mut u2 = u0 * u0;
                for k in 1..d {
                    let u = zb[k] - za[k];
                    u2 += u * u;
                }
                if u2 <= cut2 {
                    let w = (-0.5 * u2).exp();
                    own += w;
                    sums[a + 1 + b] += w;
                }
            }
            sums[a] += own;
        }
        let mut out = vec![0.0; n];
        let mut run_value = 0.0;
        for (pos, &i) in order.iter().enumerate() {
            if pos == 0 || lex(order[pos - 1], i).is_ne() {
                run_value = self.log_norm + sums[pos].ln();
            }
            out[i] = run_value;
        }
        out
    }
}

const RESUB_CUTOFF: f64 = 10.0;

/// Sum in ascending order of value, so the result does not depend on the
/// order the terms were produced in.
pub(crate) fn order_free_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}
