//! End-to-end audit of an activation dump: relatedness, applicability
//! domain, MC-dropout uncertainty and surrogate fidelity, combined into a
//! GREEN / YELLOW / RED warning light.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataio::{load_dump, ActivationDump, DataError, DumpDims, Split};
use crate::domain::{check_all, fit_domain_model, DomainConfig, DomainLevel, DomainModel, DomainVerdict, LevelCounts};
use crate::linalg::Matrix;
use crate::posthoc::{evaluate_surrogate, fidelity_gap, train_surrogate, FidelityTag, SurrogateConfig, DEFAULT_FIDELITY_THRESHOLD};
use crate::relatedness::{build_report, unit_profiles, RelatednessConfig, RelatednessReport};
use crate::uncertainty::{
    aggregate_classification, aggregate_regression, flag_epistemic, EpistemicThresholds, UncertaintyLevel,
    UncertaintySummary,
};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("no signals available to compute a warning light")]
    NoSignals,
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainSpace {
    /// Fit on `train_inputs`, check `query_inputs`.
    Inputs,
    /// Fit on the training-split latents, check the query-split latents.
    Latents,
}

impl std::str::FromStr for DomainSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inputs" => Ok(DomainSpace::Inputs),
            "latents" => Ok(DomainSpace::Latents),
            other => Err(format!("unknown domain space `{other}` (inputs|latents)")),
        }
    }
}

impl std::fmt::Display for DomainSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DomainSpace::Inputs => "inputs",
            DomainSpace::Latents => "latents",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditConfig {
    pub relatedness: RelatednessConfig,
    pub relatedness_split: Split,
    pub domain: DomainConfig,
    pub domain_space: DomainSpace,
    /// Fixed epistemic thresholds; calibrated on the training split when unset.
    pub epistemic_thresholds: Option<EpistemicThresholds>,
    pub surrogate: SurrogateConfig,
    pub fidelity_threshold: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            relatedness: RelatednessConfig::default(),
            relatedness_split: Split::Train,
            domain: DomainConfig::default(),
            domain_space: DomainSpace::Inputs,
            epistemic_thresholds: None,
            surrogate: SurrogateConfig::default(),
            fidelity_threshold: DEFAULT_FIDELITY_THRESHOLD,
        }
    }
}

impl AuditConfig {
    /// Parses `key = value` lines. `#` starts a comment, `[section]` headers
    /// prefix the keys that follow (`[domain]` then `knn_k = 7` is
    /// `domain.knn_k`), and values may be double-quoted.
    pub fn parse(text: &str) -> Result<Self, AuditError> {
        let mut c = Self::default();
        let mut section = String::new();
        let mut yellow = None;
        let mut red = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| AuditError::Config {
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let key = if section.is_empty() || key.contains('.') {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            let value = value.trim().trim_matches('"');
            fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
                v.parse().map_err(|_| format!("cannot parse `{v}`"))
            }
            let r: Result<(), String> = (|| {
                match key.as_str() {
                    "relatedness.estimator" => c.relatedness.estimator = value.parse()?,
                    "relatedness.bins" => c.relatedness.bins = value.parse()?,
                    "relatedness.correction" => c.relatedness.correction = value.parse()?,
                    "relatedness.split" => c.relatedness_split = value.parse()?,
                    "relatedness.correlation_factors" => {
                        c.relatedness.use_correlation_factors = num(value)?
                    }
                    "relatedness.top_units" => c.relatedness.top_units = num(value)?,
                    "domain.space" => c.domain_space = value.parse()?,
                    "domain.variance_target" => c.domain.variance_target = num(value)?,
                    "domain.max_dims" => c.domain.max_dims = num(value)?,
                    "domain.knn_k" => c.domain.knn_k = num(value)?,
                    "domain.knn_percentile" => c.domain.knn_percentile = num(value)?,
                    "domain.hull_eps" => c.domain.hull_eps = num(value)?,
                    "domain.ridge" => c.domain.ridge = num(value)?,
                    "domain.leverage_factor" => c.domain.leverage_factor = num(value)?,
                    "uncertainty.epistemic_yellow" => yellow = Some(num::<f64>(value)?),
                    "uncertainty.epistemic_red" => red = Some(num::<f64>(value)?),
                    "posthoc.fidelity_threshold" => c.fidelity_threshold = num(value)?,
                    "posthoc.l2" => c.surrogate.l2 = num(value)?,
                    "posthoc.learning_rate" => c.surrogate.learning_rate = num(value)?,
                    "posthoc.grad_tol" => c.surrogate.grad_tol = num(value)?,
                    "posthoc.max_iterations" => c.surrogate.max_iterations = num(value)?,
                    other => return Err(format!("unknown key `{other}`")),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        c.epistemic_thresholds = match (yellow, red) {
            (None, None) => None,
            (Some(y), Some(r)) => Some(EpistemicThresholds::new(y, r).map_err(|e| AuditError::Config {
                line: 0,
                message: e.to_string(),
            })?),
            _ => {
                return Err(AuditError::Config {
                    line: 0,
                    message: "set both uncertainty.epistemic_yellow and uncertainty.epistemic_red, or neither"
                        .into(),
                })
            }
        };
        Ok(c)
    }
}

/// A report section: computed, deliberately skipped, or failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Section<T> {
    Ok(T),
    Skipped { note: String },
    Error { error: String },
}

impl<T> Section<T> {
    pub fn ok(&self) -> Option<&T> {
        match self {
            Section::Ok(v) => Some(v),
            _ => None,
        }
    }

    fn from_result<E: std::fmt::Display>(r: Result<T, E>) -> Self {
        match r {
            Ok(v) => Section::Ok(v),
            Err(e) => Section::Error { error: e.to_string() },
        }
    }
}

// ---------------------------------------------------------------------------
// Relatedness

pub fn relatedness_for(
    dump: &ActivationDump,
    config: &RelatednessConfig,
    split: Split,
) -> Result<RelatednessReport, crate::relatedness::RelatednessError> {
    let rows = dump.split_rows(split);
    let latents = dump.latents.select_rows(&rows);
    let attributes = dump.attributes.select_rows(&rows);
    let all = dump.decision.class_labels();
    let decision: Vec<usize> = rows.iter().map(|&i| all[i]).collect();
    let profiles = unit_profiles(&latents, &decision, &attributes, config)?;
    build_report(&profiles, &dump.attribute_names(), config, split, rows.len())
}

// ---------------------------------------------------------------------------
// Domain

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryVerdict {
    pub query: usize,
    #[serde(flatten)]
    pub verdict: DomainVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainSection {
    pub space: DomainSpace,
    pub n_train: usize,
    pub n_queries: usize,
    pub input_dim: usize,
    pub d_reduced: usize,
    pub explained_variance_ratio: Vec<f64>,
    pub knn_threshold: f64,
    pub leverage_threshold: f64,
    pub counts: LevelCounts,
    pub leverage_exceeded: usize,
    pub verdicts: Vec<QueryVerdict>,
}

/// Training and query matrices for the chosen space, or a skip note.
pub fn domain_matrices(dump: &ActivationDump, space: DomainSpace) -> Result<(Matrix, Matrix), String> {
    match space {
        DomainSpace::Inputs => match (&dump.train_inputs, &dump.query_inputs) {
            (Some(t), Some(q)) => Ok((t.clone(), q.clone())),
            (None, _) => Err("train_inputs role absent; domain check not run".into()),
            (_, None) => Err("query_inputs role absent; domain check not run".into()),
        },
        DomainSpace::Latents => Ok((
            dump.latents.select_rows(&dump.split_rows(Split::Train)),
            dump.latents.select_rows(&dump.split_rows(Split::Query)),
        )),
    }
}

fn domain_section(dump: &ActivationDump, config: &AuditConfig) -> Section<DomainSection> {
    let (train, queries) = match domain_matrices(dump, config.domain_space) {
        Ok(m) => m,
        Err(note) => return Section::Skipped { note },
    };
    Section::from_result((|| {
        let model: DomainModel = fit_domain_model(&train, &config.domain)?;
        let verdicts = check_all(&model, &queries)?;
        Ok::<_, crate::domain::DomainError>(DomainSection {
            space: config.domain_space,
            n_train: train.rows(),
            n_queries: queries.rows(),
            input_dim: model.input_dim(),
            d_reduced: model.d_reduced(),
            explained_variance_ratio: model.pca.explained_variance_ratio.clone(),
            knn_threshold: model.knn_threshold,
            leverage_threshold: model.leverage_threshold,
            counts: LevelCounts::tally(&verdicts),
            leverage_exceeded: verdicts.iter().filter(|v| v.leverage_exceeded).count(),
            verdicts: verdicts
                .into_iter()
                .enumerate()
                .map(|(query, verdict)| QueryVerdict { query, verdict })
                .collect(),
        })
    })())
}

// ---------------------------------------------------------------------------
// Uncertainty

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlagCounts {
    pub low: usize,
    pub moderate: usize,
    pub high: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionUncertainty {
    pub mean_epistemic: f64,
    pub max_epistemic: f64,
    pub mean_predictive_entropy: f64,
    pub mean_expected_entropy: f64,
    /// Flag of the mean query epistemic value; this is what the light uses.
    pub flag: UncertaintyLevel,
    /// Per-query flags, for reference.
    pub row_flags: FlagCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeUncertainty {
    pub name: String,
    pub mean_std_query: f64,
    pub mean_std_train: f64,
    pub max_std_query: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeHeads {
    pub heads: Vec<AttributeUncertainty>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintySection {
    pub passes: usize,
    pub thresholds: EpistemicThresholds,
    pub thresholds_calibrated: bool,
    pub n_queries: usize,
    pub decision: DecisionUncertainty,
    pub attributes: Section<AttributeHeads>,
}

/// Per-row classification summaries of the MC decision samples.
pub fn decision_summaries(
    dump: &ActivationDump,
    rows: &[usize],
) -> Option<Result<Vec<UncertaintySummary>, crate::uncertainty::UncertaintyError>> {
    let cube = dump.mc_decision_samples.as_ref()?;
    Some(rows.iter().map(|&i| aggregate_classification(&cube.example_rows(i))).collect())
}

/// Per-row standard deviation of attribute `j` across the MC samples.
pub fn attribute_stds(
    dump: &ActivationDump,
    j: usize,
    rows: &[usize],
) -> Option<Result<Vec<f64>, crate::uncertainty::UncertaintyError>> {
    let cube = dump.mc_attribute_samples.as_ref()?;
    Some(
        rows.iter()
            .map(|&i| {
                let v: Vec<f64> = (0..cube.passes).map(|t| cube.get(t, i)[j]).collect();
                aggregate_regression(&v).map(|s| s.std)
            })
            .collect(),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn uncertainty_section(dump: &ActivationDump, config: &AuditConfig) -> Section<UncertaintySection> {
    let train_rows = dump.split_rows(Split::Train);
    let query_rows = dump.split_rows(Split::Query);
    let Some(query) = decision_summaries(dump, &query_rows) else {
        return Section::Skipped {
            note: "mc_decision_samples role absent; uncertainty not assessed".into(),
        };
    };
    Section::from_result((|| {
        let query = query?;
        let (thresholds, calibrated) = match config.epistemic_thresholds {
            Some(t) => (t, false),
            None => {
                let train = decision_summaries(dump, &train_rows).expect("cube present")?;
                let e: Vec<f64> = train.iter().map(|s| s.epistemic).collect();
                (EpistemicThresholds::calibrate(&e)?, true)
            }
        };
        let epistemic: Vec<f64> = query.iter().map(|s| s.epistemic).collect();
        let mut row_flags = FlagCounts::default();
        for &e in &epistemic {
            match flag_epistemic(e, &thresholds) {
                UncertaintyLevel::Low => row_flags.low += 1,
                UncertaintyLevel::Moderate => row_flags.moderate += 1,
                UncertaintyLevel::High => row_flags.high += 1,
            }
        }
        let mean_epistemic = mean(&epistemic);
        let decision = DecisionUncertainty {
            mean_epistemic,
            max_epistemic: epistemic.iter().copied().fold(0.0, f64::max),
            mean_predictive_entropy: mean(&query.iter().map(|s| s.predictive_entropy).collect::<Vec<_>>()),
            mean_expected_entropy: mean(&query.iter().map(|s| s.expected_entropy).collect::<Vec<_>>()),
            flag: flag_epistemic(mean_epistemic, &thresholds),
            row_flags,
        };
        let attributes = if dump.mc_attribute_samples.is_none() {
            Section::Skipped {
                note: "mc_attribute_samples role absent".into(),
            }
        } else {
            Section::from_result(
                dump.attribute_names()
                    .into_iter()
                    .enumerate()
                    .map(|(j, name)| {
                        let q = attribute_stds(dump, j, &query_rows).expect("cube present")?;
                        let t = attribute_stds(dump, j, &train_rows).expect("cube present")?;
                        Ok(AttributeUncertainty {
                            name,
                            mean_std_query: mean(&q),
                            mean_std_train: mean(&t),
                            max_std_query: q.iter().copied().fold(0.0, f64::max),
                        })
                    })
                    .collect::<Result<Vec<_>, crate::uncertainty::UncertaintyError>>()
                    .map(|heads| AttributeHeads { heads }),
            )
        };
        Ok::<_, crate::uncertainty::UncertaintyError>(UncertaintySection {
            passes: dump.dims.t.unwrap_or(0),
            thresholds,
            thresholds_calibrated: calibrated,
            n_queries: query_rows.len(),
            decision,
            attributes,
        })
    })())
}

// ---------------------------------------------------------------------------
// Post-hoc surrogate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosthocSection {
    pub n_train: usize,
    pub n_queries: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
    /// Surrogate agreement with the model's own decisions.
    pub train_agreement: f64,
    pub query_agreement: f64,
    pub fidelity: Section<FidelitySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelitySection {
    pub main_accuracy: f64,
    pub surrogate_accuracy: f64,
    pub surrogate_train_accuracy: f64,
    pub gap: f64,
    pub threshold: f64,
    pub tag: FidelityTag,
}

/// Trains the attributes→decision surrogate on the training split and
/// scores it on the query split, against the model's decisions and, when
/// labels exist, against the labels.
pub fn posthoc_for(dump: &ActivationDump, config: &AuditConfig) -> Result<PosthocSection, crate::posthoc::PosthocError> {
    let train_rows = dump.split_rows(Split::Train);
    let query_rows = dump.split_rows(Split::Query);
    let decisions = dump.decision.class_labels();
    let pick = |rows: &[usize], v: &[usize]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let a_train = dump.attributes.select_rows(&train_rows);
    let a_query = dump.attributes.select_rows(&query_rows);
    let model = train_surrogate(&a_train, &pick(&train_rows, &decisions), &config.surrogate)?;
    let train_agreement = evaluate_surrogate(&model, &a_train, &pick(&train_rows, &decisions))?.accuracy;
    let query_agreement = evaluate_surrogate(&model, &a_query, &pick(&query_rows, &decisions))?.accuracy;
    let fidelity = match &dump.labels {
        None => Section::Skipped {
            note: "labels role absent; fidelity gap not computed".into(),
        },
        Some(labels) => Section::from_result((|| {
            let yq = pick(&query_rows, labels);
            let main = decisions_accuracy(&pick(&query_rows, &decisions), &yq);
            let sur = evaluate_surrogate(&model, &a_query, &yq)?.accuracy;
            let sur_train = evaluate_surrogate(&model, &a_train, &pick(&train_rows, labels))?.accuracy;
            let g = fidelity_gap(main, sur, config.fidelity_threshold)?;
            Ok::<_, crate::posthoc::PosthocError>(FidelitySection {
                main_accuracy: g.main_accuracy,
                surrogate_accuracy: g.surrogate_accuracy,
                surrogate_train_accuracy: sur_train,
                gap: g.gap,
                threshold: g.threshold,
                tag: g.tag,
            })
        })()),
    };
    Ok(PosthocSection {
        n_train: train_rows.len(),
        n_queries: query_rows.len(),
        iterations: model.meta.iterations,
        converged: model.meta.converged,
        final_loss: model.meta.final_loss,
        train_agreement,
        query_agreement,
        fidelity,
    })
}

fn decisions_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

// ---------------------------------------------------------------------------
// Warning light

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WarningLight {
    Green,
    Yellow,
    Red,
}

impl WarningLight {
    pub fn exit_code(self) -> i32 {
        match self {
            WarningLight::Green => 0,
            WarningLight::Yellow => 1,
            WarningLight::Red => 2,
        }
    }
}

impl std::fmt::Display for WarningLight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WarningLight::Green => "GREEN",
            WarningLight::Yellow => "YELLOW",
            WarningLight::Red => "RED",
        })
    }
}

/// Exit code for a failed run.
pub const EXIT_ERROR: i32 = 3;

/// RED on any OUT verdict or HIGH flag. GREEN needs domain verdicts that are
/// all IN, no flag above LOW and a sufficient fidelity tag; absent
/// uncertainty or fidelity signals do not block GREEN, an absent domain
/// signal does. Everything else is YELLOW.
pub fn warning_light(
    verdicts: Option<&[DomainLevel]>,
    flags: Option<&[UncertaintyLevel]>,
    fidelity: Option<FidelityTag>,
) -> Result<WarningLight, AuditError> {
    if verdicts.is_none() && flags.is_none() && fidelity.is_none() {
        return Err(AuditError::NoSignals);
    }
    let any_out = verdicts.is_some_and(|v| v.contains(&DomainLevel::Out));
    let any_high = flags.is_some_and(|f| f.contains(&UncertaintyLevel::High));
    if any_out || any_high {
        return Ok(WarningLight::Red);
    }
    let domain_ok = verdicts.is_some_and(|v| v.iter().all(|&l| l == DomainLevel::In));
    let flags_ok = flags.is_none_or(|f| f.iter().all(|&l| l == UncertaintyLevel::Low));
    let fidelity_ok = fidelity.is_none_or(|t| t == FidelityTag::AttributesSufficient);
    Ok(if domain_ok && flags_ok && fidelity_ok {
        WarningLight::Green
    } else {
        WarningLight::Yellow
    })
}

// ---------------------------------------------------------------------------
// Report

pub const RASHOMON_CAVEAT: &str = "Surrogate fidelity is advisory only. Models with very different internal \
mechanisms can reach the same accuracy (the Rashomon effect), so an attributes-only surrogate that matches \
the model does not show that the model reasons through those attributes.";

pub const NOTES: [&str; 3] = [
    RASHOMON_CAVEAT,
    "Relatedness scores measure information shared between latent units, the decision and each attribute. \
They are necessary for a faithful explanation but do not prove that the attribute drives the decision.",
    "The applicability-domain check only compares queries with the training data. A query inside the domain \
can still be predicted wrongly.",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub version: u32,
    pub manifest_digest: String,
    pub dims: DumpDims,
    pub config: AuditConfig,
    pub relatedness: Section<RelatednessReport>,
    pub domain: Section<DomainSection>,
    pub uncertainty: Section<UncertaintySection>,
    pub posthoc: Section<PosthocSection>,
    pub warning_light: WarningLight,
    pub light_reasons: Vec<String>,
    pub notes: Vec<String>,
}

pub fn run_audit(manifest_path: &Path, config: &AuditConfig) -> Result<AuditReport, AuditError> {
    let dump = load_dump(manifest_path)?;
    audit_dump(&dump, config)
}

pub fn audit_dump(dump: &ActivationDump, config: &AuditConfig) -> Result<AuditReport, AuditError> {
    let relatedness = Section::from_result(relatedness_for(dump, &config.relatedness, config.relatedness_split));
    let domain = domain_section(dump, config);
    let uncertainty = uncertainty_section(dump, config);
    let posthoc = Section::from_result(posthoc_for(dump, config));

    let levels: Option<Vec<DomainLevel>> = domain
        .ok()
        .map(|d| d.verdicts.iter().map(|v| v.verdict.level).collect());
    let flags: Option<Vec<UncertaintyLevel>> = uncertainty.ok().map(|u| vec![u.decision.flag]);
    let fidelity = posthoc.ok().and_then(|p| p.fidelity.ok()).map(|f| f.tag);
    let light = warning_light(levels.as_deref(), flags.as_deref(), fidelity)?;

    let mut reasons = Vec::new();
    match domain.ok() {
        Some(d) => {
            if d.counts.out > 0 {
                reasons.push(format!("{} of {} queries outside the applicability domain", d.counts.out, d.n_queries));
            }
            if d.counts.borderline > 0 {
                reasons.push(format!("{} of {} queries borderline", d.counts.borderline, d.n_queries));
            }
        }
        None => reasons.push("no domain verdicts; light capped at YELLOW".into()),
    }
    if let Some(u) = uncertainty.ok() {
        if u.decision.flag != UncertaintyLevel::Low {
            reasons.push(format!("decision epistemic uncertainty {}", u.decision.flag));
        }
    }
    if fidelity == Some(FidelityTag::AdditionalFeaturesLikely) {
        reasons.push("surrogate fidelity gap suggests the model uses features beyond the attributes".into());
    }

    Ok(AuditReport {
        version: REPORT_VERSION,
        manifest_digest: dump.manifest_digest.clone(),
        dims: dump.dims,
        config: config.clone(),
        relatedness,
        domain,
        uncertainty,
        posthoc,
        warning_light: light,
        light_reasons: reasons,
        notes: NOTES.iter().map(|s| s.to_string()).collect(),
    })
}

// ---------------------------------------------------------------------------
// Rendering

/// C `%g` with six significant digits; negative zero prints as `0`.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        trim(&format!("{:.*}", (5 - exp) as usize, v))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mant), exp.abs())
    }
}

fn write_canonical(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else {
                out.push_str(&format_g6(n.as_f64().expect("finite")));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string")),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_canonical(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push_str("{\n");
            for (i, (k, item)) in sorted.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(k).expect("key"));
                out.push_str(": ");
                write_canonical(item, indent + 1, out);
                out.push_str(if i + 1 < sorted.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Sorted keys, two-space indentation, floats as `%g` with six significant
/// digits, non-finite floats as `null`, trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("report serializes");
    let mut out = String::new();
    write_canonical(&v, 0, &mut out);
    out.push('\n');
    out
}

pub fn render_json(report: &AuditReport) -> String {
    canonical_json(report)
}

fn status_line<T>(s: &Section<T>) -> Option<String> {
    match s {
        Section::Ok(_) => None,
        Section::Skipped { note } => Some(format!("_Skipped: {note}_")),
        Section::Error { error } => Some(format!("**Error:** {error}")),
    }
}

pub fn render_markdown(report: &AuditReport) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Warning light: {}\n", report.warning_light);
    for r in &report.light_reasons {
        let _ = writeln!(md, "- {r}");
    }
    if !report.light_reasons.is_empty() {
        md.push('\n');
    }
    let d = report.dims;
    let _ = writeln!(
        md,
        "Dump `{}`: N={}, M={}, K={}, C={}, T={}.\n",
        &report.manifest_digest[..report.manifest_digest.len().min(16)],
        d.n,
        d.m,
        d.k,
        d.c,
        d.t.map_or("-".to_string(), |t| t.to_string())
    );

    md.push_str("## Relatedness\n\n");
    match &report.relatedness {
        Section::Ok(r) => {
            let _ = writeln!(md, "Split `{}`, n={}, {} latent units.\n", r.split, r.n, r.units);
            md.push_str("| rank | attribute | R (nats²) | R normalized |\n|---|---|---|---|\n");
            for (rank, &j) in r.ranking.iter().enumerate() {
                let a = &r.attributes[j];
                let _ = writeln!(md, "| {} | {} | {} | {} |", rank + 1, a.name, format_g6(a.r), format_g6(a.r_normalized));
            }
        }
        other => md.push_str(&status_line(other).unwrap_or_default()),
    }
    md.push_str("\n\n## Applicability domain\n\n");
    match &report.domain {
        Section::Ok(s) => {
            let _ = writeln!(
                md,
                "Fitted on {} training rows ({} space, {} → {} dims). Queries: {} IN, {} BORDERLINE, {} OUT; {} above the leverage threshold.",
                s.n_train,
                s.space,
                s.input_dim,
                s.d_reduced,
                s.counts.in_domain,
                s.counts.borderline,
                s.counts.out,
                s.leverage_exceeded
            );
        }
        other => md.push_str(&status_line(other).unwrap_or_default()),
    }
    md.push_str("\n\n## Uncertainty\n\n");
    match &report.uncertainty {
        Section::Ok(u) => {
            let _ = writeln!(
                md,
                "{} passes. Mean decision epistemic {} nats (yellow ≥ {}, red ≥ {}): **{}**. Per-query flags: {} LOW, {} MODERATE, {} HIGH.",
                u.passes,
                format_g6(u.decision.mean_epistemic),
                format_g6(u.thresholds.epistemic_yellow),
                format_g6(u.thresholds.epistemic_red),
                u.decision.flag,
                u.decision.row_flags.low,
                u.decision.row_flags.moderate,
                u.decision.row_flags.high
            );
            if let Section::Ok(attrs) = &u.attributes {
                md.push_str("\n| attribute | mean sd (query) | mean sd (train) |\n|---|---|---|\n");
                for a in &attrs.heads {
                    let _ = writeln!(md, "| {} | {} | {} |", a.name, format_g6(a.mean_std_query), format_g6(a.mean_std_train));
                }
            }
        }
        other => md.push_str(&status_line(other).unwrap_or_default()),
    }
    md.push_str("\n\n## Post-hoc surrogate\n\n");
    match &report.posthoc {
        Section::Ok(p) => {
            let _ = writeln!(
                md,
                "Agreement with the model's decisions: {} (train), {} (query).",
                format_g6(p.train_agreement),
                format_g6(p.query_agreement)
            );
            match &p.fidelity {
                Section::Ok(f) => {
                    let _ = writeln!(
                        md,
                        "Accuracy on labels: model {}, surrogate {}; gap {} → **{}**.",
                        format_g6(f.main_accuracy),
                        format_g6(f.surrogate_accuracy),
                        format_g6(f.gap),
                        f.tag
                    );
                }
                other => md.push_str(&status_line(other).unwrap_or_default()),
            }
        }
        other => md.push_str(&status_line(other).unwrap_or_default()),
    }
    md.push_str("\n\n## Notes\n\n");
    for n in &report.notes {
        let _ = writeln!(md, "- {n}");
    }
    md
}

pub fn write_report(report: &AuditReport, json_path: Option<&Path>, md_path: Option<&Path>) -> Result<(), AuditError> {
    if let Some(p) = json_path {
        std::fs::write(p, render_json(report))?;
    }
    if let Some(p) = md_path {
        std::fs::write(p, render_markdown(report))?;
    }
    Ok(())
}
