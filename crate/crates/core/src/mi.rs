//! Shannon entropy and mutual information estimators, in nats.
//!
//! Two plug-in routes are provided: a binned (histogram) estimator that sums
//! `p(x,y) ln(p(x,y) / (p(x) p(y)))` over occupied cells, optionally with the
//! Miller–Madow first-order bias correction, and a Parzen-window
//! resubstitution estimator. Both clamp the reported value at zero so it can
//! always feed [`mi_correlation`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{
    bin_count_rule, fit_histogram_2d, order_free_sum, silverman_bandwidth, AxisBinning,
    DensityError, KdeModel,
};
use crate::linalg::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum MiError {
    #[error("probability vector is not normalized (sum = {0})")]
    NotNormalized(f64),
    #[error("mutual information must be non-negative, got {0}")]
    NegativeMi(f64),
    #[error(transparent)]
    Density(#[from] DensityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Hist,
    Kde,
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hist" => Ok(Estimator::Hist),
            "kde" => Ok(Estimator::Kde),
            other => Err(format!("unknown estimator `{other}` (hist|kde)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correction {
    #[default]
    None,
    MillerMadow,
}

impl std::str::FromStr for Correction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Correction::None),
            "mm" | "miller-madow" => Ok(Correction::MillerMadow),
            other => Err(format!("unknown correction `{other}` (none|mm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bins {
    #[default]
    Auto,
    Fixed(usize),
}

impl Bins {
    pub fn resolve(self, n: usize) -> Result<usize, DensityError> {
        match self {
            Bins::Auto => bin_count_rule(n),
            Bins::Fixed(0) => Err(DensityError::ZeroBins),
            Bins::Fixed(b) => Ok(b),
        }
    }
}

impl std::str::FromStr for Bins {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Bins::Auto);
        }
        s.parse::<usize>()
            .ok()
            .filter(|b| *b > 0)
            .map(Bins::Fixed)
            .ok_or_else(|| format!("bins must be `auto` or a positive integer, got `{s}`"))
    }
}

/// Above this the estimate corresponds to r^MI ≥ 0.99.
pub const NEAR_DETERMINISTIC_NATS: f64 = 1.958_517_773_625_844_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub value: f64,
    pub raw_value: f64,
    pub estimator: Estimator,
    pub correction: Correction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidths: Option<Vec<f64>>,
    pub n: usize,
    pub degenerate: bool,
    pub near_deterministic: bool,
}

impl MiEstimate {
    fn degenerate(estimator: Estimator, correction: Correction, n: usize) -> Self {
        Self {
            value: 0.0,
            raw_value: 0.0,
            estimator,
            correction,
            bins: None,
            bandwidths: None,
            n,
            degenerate: true,
            near_deterministic: false,
        }
    }
}

pub fn entropy_discrete(p: &[f64]) -> Result<f64, MiError> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(MiError::NotNormalized(sum));
    }
    Ok(-p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>())
}

/// Plug-in entropy of an empirical count vector.
pub fn entropy_from_counts(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let terms = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / nf;
            -p * p.ln()
        })
        .collect();
    order_free_sum(terms)
}

/// A two-way table of co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
}

impl ContingencyTable {
    pub fn new(rows: usize, cols: usize, counts: Vec<u64>) -> Self {
        assert_eq!(rows * cols, counts.len());
        Self { rows, cols, counts }
    }

    pub fn from_indices(a: &[usize], b: &[usize], rows: usize, cols: usize) -> Self {
        let mut counts = vec![0u64; rows * cols];
        for (&i, &j) in a.iter().zip(b) {
            counts[i * cols + j] += 1;
        }
        Self { rows, cols, counts }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.cols + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j)).sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0u64; self.counts.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                counts[j * self.rows + i] = self.get(i, j);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            counts,
        }
    }

    /// Merges row `i` into row `i + 1`'s position (one fewer row).
    pub fn merge_adjacent_rows(&self, i: usize) -> Self {
        assert!(i + 1 < self.rows);
        let mut counts = Vec::with_capacity((self.rows - 1) * self.cols);
        for r in 0..self.rows {
            if r == i + 1 {
                continue;
            }
            for j in 0..self.cols {
                let mut c = self.get(r, j);
                if r == i {
                    c += self.get(i + 1, j);
                }
                counts.push(c);
            }
        }
        Self {
            rows: self.rows - 1,
            cols: self.cols,
            counts,
        }
    }

    pub fn merge_adjacent_cols(&self, j: usize) -> Self {
        self.transpose().merge_adjacent_rows(j).transpose()
    }

    /// Plug-in MI over occupied cells. Terms are summed in value order, so
    /// transposing the table or reordering samples gives the same bits.
    pub fn plugin_mi(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        let nf = n as f64;
        let rs = self.row_sums();
        let cs = self.col_sums();
        let mut terms = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let c = self.get(i, j);
                if c == 0 {
                    continue;
                }
                let cf = c as f64;
                let ratio = (cf * nf) / (rs[i] as f64 * cs[j] as f64);
                terms.push(cf / nf * ratio.ln());
            }
        }
        order_free_sum(terms).max(0.0)
    }

    /// `[(m_x − 1) + (m_y − 1) − (m_xy − 1)] / (2N)` with m the occupied-bin counts.
    pub fn miller_madow_term(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        let mx = self.row_sums().iter().filter(|&&c| c > 0).count() as f64;
        let my = self.col_sums().iter().filter(|&&c| c > 0).count() as f64;
        let mxy = self.counts.iter().filter(|&&c| c > 0).count() as f64;
        ((mx - 1.0) + (my - 1.0) - (mxy - 1.0)) / (2.0 * n as f64)
    }
}

fn finish_plugin(
    table: &ContingencyTable,
    correction: Correction,
    bins: [usize; 2],
    n: usize,
) -> MiEstimate {
    let raw = table.plugin_mi();
    let value = match correction {
        Correction::None => raw,
        Correction::MillerMadow => (raw + table.miller_madow_term()).max(0.0),
    };
    MiEstimate {
        value,
        raw_value: raw,
        estimator: Estimator::Hist,
        correction,
        bins: Some(bins),
        bandwidths: None,
        n,
        degenerate: false,
        near_deterministic: value >= NEAR_DETERMINISTIC_NATS,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HistConfig {
    pub bins: Bins,
    pub correction: Correction,
}

pub fn mi_histogram(x: &[f64], y: &[f64], config: &HistConfig) -> Result<MiEstimate, MiError> {
    if x.len() != y.len() {
        return Err(DensityError::LengthMismatch(x.len(), y.len()).into());
    }
    let n = x.len();
    let b = config.bins.resolve(n)?;
    let h = fit_histogram_2d(x, y, b, b)?;
    if h.is_degenerate() {
        return Ok(MiEstimate::degenerate(Estimator::Hist, config.correction, n));
    }
    let table = ContingencyTable::new(h.x_bins(), h.y_bins(), h.counts);
    Ok(finish_plugin(&table, config.correction, [b, b], n))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KdeConfig {
    pub bandwidth_x: Option<f64>,
    pub bandwidth_y: Option<f64>,
}

pub fn mi_kde(x: &[f64], y: &[f64], config: &KdeConfig) -> Result<MiEstimate, MiError> {
    if x.len() != y.len() {
        return Err(DensityError::LengthMismatch(x.len(), y.len()).into());
    }
    let n = x.len();
    if n < 8 {
        return Err(DensityError::TooFewSamples { needed: 8, got: n }.into());
    }
    let hx = match config.bandwidth_x {
        Some(h) => h,
        None => match silverman_bandwidth(x) {
            Ok(h) => h,
            Err(DensityError::ZeroVariance) => {
                return Ok(MiEstimate::degenerate(Estimator::Kde, Correction::None, n))
            }
            Err(e) => return Err(e.into()),
        },
    };
    let hy = match config.bandwidth_y {
        Some(h) => h,
        None => match silverman_bandwidth(y) {
            Ok(h) => h,
            Err(DensityError::ZeroVariance) => {
                return Ok(MiEstimate::degenerate(Estimator::Kde, Correction::None, n))
            }
            Err(e) => return Err(e.into()),
        },
    };
    let mut joint = Vec::with_capacity(2 * n);
    for (&a, &b) in x.iter().zip(y) {
        joint.push(a);
        joint.push(b);
    }
    let pxy = KdeModel::new(Matrix::from_vec(n, 2, joint), vec![hx, hy])?;
    let px = KdeModel::univariate(x, hx)?;
    let py = KdeModel::univariate(y, hy)?;
    let lxy = pxy.resubstitution_log_densities();
    let lx = px.resubstitution_log_densities();
    let ly = py.resubstitution_log_densities();
    let terms = (0..n).map(|i| lxy[i] - lx[i] - ly[i]).collect();
    let raw = order_free_sum(terms) / n as f64;
    let value = raw.max(0.0);
    Ok(MiEstimate {
        value,
        raw_value: raw,
        estimator: Estimator::Kde,
        correction: Correction::None,
        bins: None,
        bandwidths: Some(vec![hx, hy]),
        n,
        degenerate: false,
        near_deterministic: value >= NEAR_DETERMINISTIC_NATS,
    })
}

/// `sqrt(1 − exp(−2·mi))`; equals |ρ| when (x, y) is bivariate Gaussian.
pub fn mi_correlation(mi: f64) -> Result<f64, MiError> {
    if !(mi >= 0.0) {
        return Err(MiError::NegativeMi(mi));
    }
    Ok((-(-2.0 * mi).exp_m1()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedConfig {
    pub estimator: Estimator,
    pub bins: Bins,
    pub correction: Correction,
    pub bandwidth: Option<f64>,
}

impl Default for MixedConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Hist,
            bins: Bins::Auto,
            correction: Correction::None,
            bandwidth: None,
        }
    }
}

/// Maps arbitrary labels to dense indices in ascending label order.
fn compact_labels(d: &[usize]) -> (Vec<usize>, usize) {
    let mut distinct: Vec<usize> = d.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let idx = d
        .iter()
        .map(|v| distinct.binary_search(v).unwrap())
        .collect();
    (idx, distinct.len())
}

/// MI between a continuous variable and a class label.
pub fn mi_mixed(x: &[f64], d: &[usize], config: &MixedConfig) -> Result<MiEstimate, MiError> {
    if x.len() != d.len() {
        return Err(DensityError::LengthMismatch(x.len(), d.len()).into());
    }
    let n = x.len();
    if n < 4 {
        return Err(DensityError::TooFewSamples { needed: 4, got: n }.into());
    }
    let (classes, n_classes) = compact_labels(d);
    if n_classes < 2 {
        return Ok(MiEstimate::degenerate(config.estimator, config.correction, n));
    }
    match config.estimator {
        Estimator::Hist => {
            let b = config.bins.resolve(n)?;
            let axis = AxisBinning::fit(x, b)?;
            if axis.degenerate {
                return Ok(MiEstimate::degenerate(Estimator::Hist, config.correction, n));
            }
            let xi: Vec<usize> = x.iter().map(|&v| axis.index(v)).collect();
            let table = ContingencyTable::from_indices(&xi, &classes, axis.bins(), n_classes);
            Ok(finish_plugin(&table, config.correction, [b, n_classes], n))
        }
        Estimator::Kde => {
            let h = match config.bandwidth {
                Some(h) => h,
                None => match silverman_bandwidth(x) {
                    Ok(h) => h,
                    Err(DensityError::ZeroVariance) => {
                        return Ok(MiEstimate::degenerate(Estimator::Kde, Correction::None, n))
                    }
                    Err(e) => return Err(e.into()),
                },
            };
            let marginal = KdeModel::univariate(x, h)?;
            let h_x = -order_free_sum(marginal.resubstitution_log_densities()) / n as f64;
            let mut conditional = 0.0;
            for c in 0..n_classes {
                let xc: Vec<f64> = x
                    .iter()
                    .zip(&classes)
                    .filter(|(_, &k)| k == c)
                    .map(|(&v, _)| v)
                    .collect();
                let model = KdeModel::univariate(&xc, h)?;
                let h_c = -order_free_sum(model.resubstitution_log_densities()) / xc.len() as f64;
                conditional += xc.len() as f64 / n as f64 * h_c;
            }
            let raw = h_x - conditional;
            let value = raw.max(0.0);
            Ok(MiEstimate {
                value,
                raw_value: raw,
                estimator: Estimator::Kde,
                correction: Correction::None,
                bins: None,
                bandwidths: Some(vec![h]),
                n,
                degenerate: false,
                near_deterministic: value >= NEAR_DETERMINISTIC_NATS,
            })
        }
    }
}
