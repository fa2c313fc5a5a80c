//! Relatedness between the decision head and each explanation attribute,
//! measured through the shared latent layer:
//!
//! `R(A_j) = Σ_i MI(L_i, D) · MI(L_i, A_j)` over latent units `i`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Split;
use crate::linalg::Matrix;
use crate::mi::{
    mi_correlation, mi_histogram, mi_kde, mi_mixed, Bins, Correction, Estimator, HistConfig,
    KdeConfig, MiError, MixedConfig,
};

#[derive(Debug, Error, PartialEq)]
pub enum RelatednessError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least 8 examples, got {0}")]
    TooFewExamples(usize),
    #[error("attribute index {index} out of range (K = {k})")]
    IndexOutOfRange { index: usize, k: usize },
    #[error(transparent)]
    Mi(#[from] MiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelatednessConfig {
    pub estimator: Estimator,
    pub bins: Bins,
    pub correction: Correction,
    /// Replace every MI factor by its correlation coefficient sqrt(1 − e^(−2·MI)).
    pub use_correlation_factors: bool,
    pub top_units: usize,
}

impl Default for RelatednessConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Hist,
            bins: Bins::Auto,
            correction: Correction::None,
            use_correlation_factors: false,
            top_units: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitProfile {
    pub unit: usize,
    pub mi_decision: f64,
    pub mi_attribute: Vec<f64>,
    pub degenerate: bool,
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

pub fn unit_profiles(
    latents: &Matrix,
    decision: &[usize],
    attributes: &Matrix,
    config: &RelatednessConfig,
) -> Result<Vec<UnitProfile>, RelatednessError> {
    let n = latents.rows();
    if decision.len() != n || attributes.rows() != n {
        return Err(RelatednessError::ShapeMismatch(format!(
            "latents has {n} rows, decision {}, attributes {}",
            decision.len(),
            attributes.rows()
        )));
    }
    if n < 8 {
        return Err(RelatednessError::TooFewExamples(n));
    }
    let k = attributes.cols();
    let attr_cols: Vec<Vec<f64>> = (0..k).map(|j| attributes.column(j)).collect();
    let mixed = MixedConfig {
        estimator: config.estimator,
        bins: config.bins,
        correction: config.correction,
        bandwidth: None,
    };
    let hist = HistConfig {
        bins: config.bins,
        correction: config.correction,
    };

    let factor = |v: f64| -> Result<f64, MiError> {
        if config.use_correlation_factors {
            mi_correlation(v)
        } else {
            Ok(v)
        }
    };

    (0..latents.cols())
        .map(|i| {
            let unit = latents.column(i);
            if is_constant(&unit) {
                return Ok(UnitProfile {
                    unit: i,
                    mi_decision: 0.0,
                    mi_attribute: vec![0.0; k],
                    degenerate: true,
                });
            }
            let mi_decision = factor(mi_mixed(&unit, decision, &mixed)?.value)?;
            let mi_attribute = attr_cols
                .iter()
                .map(|a| {
                    let e = match config.estimator {
                        Estimator::Hist => mi_histogram(&unit, a, &hist)?,
                        Estimator::Kde => mi_kde(&unit, a, &KdeConfig::default())?,
                    };
                    factor(e.value)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(UnitProfile {
                unit: i,
                mi_decision,
                mi_attribute,
                degenerate: false,
            })
        })
        .collect()
}

fn check_index(profiles: &[UnitProfile], j: usize) -> Result<(), RelatednessError> {
    let k = profiles.first().map_or(0, |p| p.mi_attribute.len());
    if j >= k {
        return Err(RelatednessError::IndexOutOfRange { index: j, k });
    }
    Ok(())
}

/// `Σ_i MI(L_i, D) · MI(L_i, A_j)`, in nats².
pub fn relatedness_score(profiles: &[UnitProfile], j: usize) -> Result<f64, RelatednessError> {
    check_index(profiles, j)?;
    Ok(profiles
        .iter()
        .map(|p| p.mi_decision * p.mi_attribute[j])
        .sum())
}

/// Cosine between the decision MI vector and attribute `j`'s MI vector;
/// zero when either vector vanishes.
pub fn normalized_relatedness(
    profiles: &[UnitProfile],
    j: usize,
) -> Result<f64, RelatednessError> {
    let r = relatedness_score(profiles, j)?;
    let nd = profiles
        .iter()
        .map(|p| p.mi_decision * p.mi_decision)
        .sum::<f64>()
        .sqrt();
    let na = profiles
        .iter()
        .map(|p| p.mi_attribute[j] * p.mi_attribute[j])
        .sum::<f64>()
        .sqrt();
    if nd == 0.0 || na == 0.0 {
        return Ok(0.0);
    }
    Ok(r / (nd * na))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitContribution {
    pub unit: usize,
    pub mi_decision: f64,
    pub mi_attribute: f64,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRelatedness {
    pub index: usize,
    pub name: String,
    pub r: f64,
    pub r_normalized: f64,
    pub top_units: Vec<UnitContribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatednessReport {
    pub attributes: Vec<AttributeRelatedness>,
    pub ranking: Vec<usize>,
    pub config: RelatednessConfig,
    pub split: Split,
    pub n: usize,
    pub units: usize,
    pub degenerate_units: usize,
}

pub fn build_report(
    profiles: &[UnitProfile],
    names: &[String],
    config: &RelatednessConfig,
    split: Split,
    n: usize,
) -> Result<RelatednessReport, RelatednessError> {
    let k = names.len();
    let mut attributes = Vec::with_capacity(k);
    for (j, name) in names.iter().enumerate() {
        let r = relatedness_score(profiles, j)?;
        let r_normalized = normalized_relatedness(profiles, j)?;
        let mut contributions: Vec<UnitContribution> = profiles
            .iter()
            .map(|p| UnitContribution {
                unit: p.unit,
                mi_decision: p.mi_decision,
                mi_attribute: p.mi_attribute[j],
                product: p.mi_decision * p.mi_attribute[j],
            })
            .collect();
        contributions.sort_by(|a, b| b.product.total_cmp(&a.product).then(a.unit.cmp(&b.unit)));
        contributions.truncate(config.top_units);
        attributes.push(AttributeRelatedness {
            index: j,
            name: name.clone(),
            r,
            r_normalized,
            top_units: contributions,
        });
    }
    let mut report = RelatednessReport {
        attributes,
        ranking: Vec::new(),
        config: *config,
        split,
        n,
        units: profiles.len(),
        degenerate_units: profiles.iter().filter(|p| p.degenerate).count(),
    };
    report.ranking = rank_attributes(&report);
    Ok(report)
}

/// Attribute indices by normalized score, then raw score, both descending;
/// remaining ties go to the lower index.
pub fn rank_attributes(report: &RelatednessReport) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..report.attributes.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ea, eb) = (&report.attributes[a], &report.attributes[b]);
        eb.r_normalized
            .total_cmp(&ea.r_normalized)
            .then(eb.r.total_cmp(&ea.r))
            .then(a.cmp(&b))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn profile(unit: usize, d: f64, a: Vec<f64>) -> UnitProfile {
        UnitProfile {
            unit,
            mi_decision: d,
            mi_attribute: a,
            degenerate: false,
        }
    }

    fn report_with(scores: &[(f64, f64)]) -> RelatednessReport {
        RelatednessReport {
            attributes: scores
                .iter()
                .enumerate()
                .map(|(i, &(r, rn))| AttributeRelatedness {
                    index: i,
                    name: format!("a{i}"),
                    r,
                    r_normalized: rn,
                    top_units: vec![],
                })
                .collect(),
            ranking: vec![],
            config: RelatednessConfig::default(),
            split: Split::All,
            n: 0,
            units: 0,
            degenerate_units: 0,
        }
    }

    #[test]
    fn binary_units_brute_force() {
        // D = L_1; L_2 independent of D. N = 8, balanced.
        let l1 = [0., 0., 0., 0., 1., 1., 1., 1.];
        let l2 = [0., 1., 0., 1., 0., 1., 0., 1.];
        let mut lat = Vec::new();
        for i in 0..8 {
            lat.push(l1[i]);
            lat.push(l2[i]);
        }
        let latents = Matrix::from_vec(8, 2, lat);
        let d: Vec<usize> = l1.iter().map(|&v| v as usize).collect();
        let attrs = Matrix::from_vec(8, 1, l1.to_vec());
        let p = unit_profiles(&latents, &d, &attrs, &RelatednessConfig::default()).unwrap();
        assert!((p[0].mi_decision - LN_2).abs() < 1e-15);
        assert_eq!(p[1].mi_decision, 0.0);
        let r = relatedness_score(&p, 0).unwrap();
        assert!((r - 0.480_45).abs() < 1e-5);
    }

    #[test]
    fn constant_unit_is_degenerate() {
        let latents = Matrix::from_vec(8, 1, vec![3.0; 8]);
        let d = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let attrs = Matrix::from_vec(8, 1, (0..8).map(f64::from).collect());
        let p = unit_profiles(&latents, &d, &attrs, &RelatednessConfig::default()).unwrap();
        assert!(p[0].degenerate);
        assert_eq!(p[0].mi_decision, 0.0);
        assert_eq!(p[0].mi_attribute, vec![0.0]);
        assert_eq!(relatedness_score(&p, 0).unwrap(), 0.0);
    }

    #[test]
    fn permuting_units_permutes_profiles() {
        let n = 16;
        let mut lat = Vec::new();
        for i in 0..n {
            lat.extend_from_slice(&[(i % 2) as f64, ((i * 7) % 5) as f64, (i / 4) as f64]);
        }
        let latents = Matrix::from_vec(n, 3, lat);
        let d: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let attrs = Matrix::from_vec(n, 1, (0..n).map(|i| (i % 3) as f64).collect());
        let cfg = RelatednessConfig::default();
        let p = unit_profiles(&latents, &d, &attrs, &cfg).unwrap();
        let perm = [2usize, 0, 1];
        let mut lat2 = Vec::new();
        for i in 0..n {
            for &u in &perm {
                lat2.push(latents[(i, u)]);
            }
        }
        let p2 = unit_profiles(&Matrix::from_vec(n, 3, lat2), &d, &attrs, &cfg).unwrap();
        for (new_pos, &old) in perm.iter().enumerate() {
            assert_eq!(p2[new_pos].mi_decision, p[old].mi_decision);
            assert_eq!(p2[new_pos].mi_attribute, p[old].mi_attribute);
        }
    }

    #[test]
    fn independent_attribute_scores_zero() {
        let p = vec![profile(0, 0.5, vec![0.0]), profile(1, 0.2, vec![0.0])];
        assert_eq!(relatedness_score(&p, 0).unwrap(), 0.0);
        assert_eq!(normalized_relatedness(&p, 0).unwrap(), 0.0);
    }

    #[test]
    fn index_out_of_range() {
        let p = vec![profile(0, 0.5, vec![0.1])];
        assert_eq!(
            relatedness_score(&p, 1),
            Err(RelatednessError::IndexOutOfRange { index: 1, k: 1 })
        );
    }

    #[test]
    fn normalized_examples() {
        let same = vec![profile(0, 0.3, vec![0.3]), profile(1, 0.7, vec![0.7])];
        assert!((normalized_relatedness(&same, 0).unwrap() - 1.0).abs() < 1e-15);
        let orth = vec![profile(0, 1.0, vec![0.0]), profile(1, 0.0, vec![1.0])];
        assert_eq!(normalized_relatedness(&orth, 0).unwrap(), 0.0);
        let half = vec![profile(0, 1.0, vec![1.0]), profile(1, 1.0, vec![0.0])];
        assert!((normalized_relatedness(&half, 0).unwrap() - 0.707_11).abs() < 1e-5);
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_attributes(&report_with(&[(1.0, 0.4)])), vec![0]);
        let r = report_with(&[(0.9, 0.9), (0.1, 0.1), (0.5, 0.5)]);
        assert_eq!(rank_attributes(&r), vec![0, 2, 1]);
        // tie on normalized: raw breaks it, then index
        let r = report_with(&[(0.2, 0.5), (0.3, 0.5), (0.3, 0.5)]);
        assert_eq!(rank_attributes(&r), vec![1, 2, 0]);
    }

    #[test]
    fn report_keeps_top_units() {
        let p: Vec<UnitProfile> = (0..8)
            .map(|i| profile(i, i as f64 * 0.1, vec![0.2]))
            .collect();
        let cfg = RelatednessConfig::default();
        let rep = build_report(&p, &["x".into()], &cfg, Split::Train, 100).unwrap();
        let units: Vec<usize> = rep.attributes[0].top_units.iter().map(|u| u.unit).collect();
        assert_eq!(units, vec![7, 6, 5, 4, 3]);
        assert!(rep.attributes[0].r_normalized <= 1.0 + 1e-12);
    }
}
