//! Summaries of repeated stochastic (dropout-on) forward passes.
//!
//! For classification heads the predictive entropy H(mean) splits into the
//! expected per-pass entropy and the epistemic remainder (the BALD mutual
//! information between prediction and dropout mask).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::percentile;

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("need at least 2 passes, got {0}")]
    TooFewPasses(usize),
    #[error("row {row} is not a probability vector (sum = {sum})")]
    RowNotNormalized { row: usize, sum: f64 },
    #[error("rows have inconsistent widths")]
    RaggedRows,
    #[error("thresholds must satisfy 0 < yellow < red (got {yellow}, {red})")]
    BadThresholds { yellow: f64, red: f64 },
    #[error("no calibration values")]
    EmptyCalibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub predictive_mean: Vec<f64>,
    pub predictive_entropy: f64,
    pub expected_entropy: f64,
    pub epistemic: f64,
    /// Per-class sample (T−1) variance across passes.
    pub variance: Vec<f64>,
    pub passes: usize,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Aggregates T probability rows (one per stochastic pass).
pub fn aggregate_classification(samples: &[Vec<f64>]) -> Result<UncertaintySummary, UncertaintyError> {
    let t = samples.len();
    if t < 2 {
        return Err(UncertaintyError::TooFewPasses(t));
    }
    let c = samples[0].len();
    for (row, s) in samples.iter().enumerate() {
        if s.len() != c {
            return Err(UncertaintyError::RaggedRows);
        }
        let sum: f64 = s.iter().sum();
        if s.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(UncertaintyError::RowNotNormalized { row, sum });
        }
    }
    let tf = t as f64;
    // Offsets from the first pass, so identical passes give their value back exactly.
    let first = &samples[0];
    let mut offset = vec![0.0; c];
    for s in samples {
        for ((o, v), f) in offset.iter_mut().zip(s).zip(first) {
            *o += v - f;
        }
    }
    let mean: Vec<f64> = first.iter().zip(&offset).map(|(f, o)| f + o / tf).collect();
    let mut variance = vec![0.0; c];
    for s in samples {
        for ((acc, v), m) in variance.iter_mut().zip(s).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|v| *v /= tf - 1.0);

    let predictive_entropy = entropy(&mean);
    let expected_entropy = samples.iter().map(|s| entropy(s)).sum::<f64>() / tf;
    // Mean KL(p_t || p_mean) equals the entropy difference but vanishes
    // exactly when every pass matches the mean.
    let raw = samples
        .iter()
        .map(|s| {
            s.iter()
                .zip(&mean)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, m)| p * (p / m).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / tf;
    debug_assert!(raw >= -1e-12, "Jensen gap violated: {raw}");
    Ok(UncertaintySummary {
        predictive_mean: mean,
        predictive_entropy,
        expected_entropy,
        epistemic: raw.max(0.0),
        variance,
        passes: t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub mean: f64,
    pub std: f64,
    pub passes: usize,
}

/// Sample mean and unbiased (T−1) standard deviation.
pub fn aggregate_regression(samples: &[f64]) -> Result<RegressionSummary, UncertaintyError> {
    let t = samples.len();
    if t < 2 {
        return Err(UncertaintyError::TooFewPasses(t));
    }
    let tf = t as f64;
    let mean = samples[0] + samples.iter().map(|v| v - samples[0]).sum::<f64>() / tf;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (tf - 1.0);
    Ok(RegressionSummary {
        mean,
        std: var.sqrt(),
        passes: t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum UncertaintyLevel {
    Low,
    Moderate,
    High,
}

impl std::fmt::Display for UncertaintyLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UncertaintyLevel::Low => "LOW",
            UncertaintyLevel::Moderate => "MODERATE",
            UncertaintyLevel::High => "HIGH",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpistemicThresholds {
    pub epistemic_yellow: f64,
    pub epistemic_red: f64,
}

impl EpistemicThresholds {
    pub fn new(yellow: f64, red: f64) -> Result<Self, UncertaintyError> {
        if !(yellow > 0.0 && red > yellow) {
            return Err(UncertaintyError::BadThresholds { yellow, red });
        }
        Ok(Self {
            epistemic_yellow: yellow,
            epistemic_red: red,
        })
    }

    /// 90th / 99th percentiles of calibration epistemic values. Degenerate
    /// calibration sets (all zero, or p99 == p90) are nudged just enough to
    /// keep `0 < yellow < red`.
    pub fn calibrate(epistemic: &[f64]) -> Result<Self, UncertaintyError> {
        if epistemic.is_empty() {
            return Err(UncertaintyError::EmptyCalibration);
        }
        let yellow = percentile(epistemic, 0.90).max(1e-12);
        let red = percentile(epistemic, 0.99);
        let red = if red > yellow {
            red
        } else {
            yellow * (1.0 + 1e-9) + 1e-15
        };
        Self::new(yellow, red)
    }
}

pub fn flag_epistemic(epistemic: f64, thresholds: &EpistemicThresholds) -> UncertaintyLevel {
    if epistemic >= thresholds.epistemic_red {
        UncertaintyLevel::High
    } else if epistemic >= thresholds.epistemic_yellow {
        UncertaintyLevel::Moderate
    } else {
        UncertaintyLevel::Low
    }
}

pub fn uncertainty_flag(
    summary: &UncertaintySummary,
    thresholds: &EpistemicThresholds,
) -> Result<UncertaintyLevel, UncertaintyError> {
    let t = EpistemicThresholds::new(thresholds.epistemic_yellow, thresholds.epistemic_red)?;
    Ok(flag_epistemic(summary.epistemic, &t))
}
