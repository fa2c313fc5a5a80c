//! Browser bindings. Each export takes plain numbers or text and returns a
//! JSON string; the plain functions below are what the exports wrap, so the
//! same code runs in native tests.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use sxai_core::domain::{check_domain, fit_domain_model, DomainConfig, DomainLevel};
use sxai_core::linalg::Matrix;
use sxai_core::mi::{mi_correlation, mi_histogram, mi_kde, Bins, Correction, HistConfig, KdeConfig};
use sxai_core::rng::{Stream, SxRng};
use sxai_core::uncertainty::{aggregate_classification, flag_epistemic, EpistemicThresholds};

/// Largest sample for which the quadratic KDE estimate is also computed.
pub const KDE_LIMIT: usize = 5000;
const SCATTER_POINTS: usize = 400;

/// Draws `n` pairs from a standard bivariate normal with correlation `rho`
/// and estimates their mutual information.
pub fn gaussian_mi(rho: f64, n: usize, seed: u64, bins: &str, correction: &str) -> Result<Value, String> {
    if !(-1.0 < rho && rho < 1.0) {
        return Err("rho must lie strictly between -1 and 1".into());
    }
    if n < 8 {
        return Err("need at least 8 samples".into());
    }
    let bins: Bins = bins.parse()?;
    let correction: Correction = correction.parse()?;
    let mut r = SxRng::new(seed, Stream::Scratch);
    let s = (1.0 - rho * rho).sqrt();
    let (x, y): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|_| {
            let a = r.normal();
            (a, rho * a + s * r.normal())
        })
        .unzip();
    let hist = mi_histogram(&x, &y, &HistConfig { bins, correction }).map_err(|e| e.to_string())?;
    let kde = if n <= KDE_LIMIT {
        Some(mi_kde(&x, &y, &KdeConfig::default()).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let r_of = |mi: f64| mi_correlation(mi).unwrap_or(f64::NAN);
    let scatter: Vec<[f64; 2]> = x.iter().zip(&y).take(SCATTER_POINTS).map(|(a, b)| [*a, *b]).collect();
    Ok(json!({
        "true_mi": -0.5 * (1.0 - rho * rho).ln(),
        "abs_rho": rho.abs(),
        "hist": { "mi": hist.value, "r_mi": r_of(hist.value), "bins": hist.bins },
        "kde": kde.map(|k| json!({ "mi": k.value, "r_mi": r_of(k.value), "bandwidths": k.bandwidths })),
        "scatter": scatter,
    }))
}

/// Fits a domain model to a seeded 2-D cloud (one or two Gaussian blobs)
/// and evaluates the verdict on a `resolution²` grid over [-4, 4]².
/// Levels are 0 = IN, 1 = BORDERLINE, 2 = OUT, rows from the top (y = 4).
pub fn domain_map(n: usize, clusters: usize, correlation: f64, resolution: usize, seed: u64) -> Result<Value, String> {
    if !(10..=2000).contains(&n) {
        return Err("n must be between 10 and 2000".into());
    }
    if !(2..=200).contains(&resolution) {
        return Err("resolution must be between 2 and 200".into());
    }
    if !(-0.95..=0.95).contains(&correlation) {
        return Err("correlation must be within [-0.95, 0.95]".into());
    }
    let clusters = clusters.clamp(1, 2);
    let mut r = SxRng::new(seed, Stream::Scratch);
    let s = (1.0 - correlation * correlation).sqrt();
    let centers = if clusters == 1 {
        vec![[0.0, 0.0]]
    } else {
        vec![[-1.6, -1.0], [1.6, 1.0]]
    };
    let spread = if clusters == 1 { 1.0 } else { 0.6 };
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = centers[i % clusters];
            let a = r.normal();
            let b = correlation * a + s * r.normal();
            vec![c[0] + spread * a, c[1] + spread * b]
        })
        .collect();
    let config = DomainConfig {
        variance_target: 1.0,
        ..DomainConfig::default()
    };
    let model = fit_domain_model(&Matrix::from_rows(&points), &config).map_err(|e| e.to_string())?;
    let step = 8.0 / (resolution - 1) as f64;
    let mut levels = Vec::with_capacity(resolution * resolution);
    let mut counts = [0usize; 3];
    for row in 0..resolution {
        let y = 4.0 - row as f64 * step;
        for col in 0..resolution {
            let x = -4.0 + col as f64 * step;
            let level = check_domain(&model, &[x, y]).map_err(|e| e.to_string())?.level;
            let code = match level {
                DomainLevel::In => 0,
                DomainLevel::Borderline => 1,
                DomainLevel::Out => 2,
            };
            counts[code] += 1;
            levels.push(code);
        }
    }
    Ok(json!({
        "points": points,
        "resolution": resolution,
        "extent": [-4.0, 4.0],
        "levels": levels,
        "counts": { "in_domain": counts[0], "borderline": counts[1], "out": counts[2] },
        "knn_threshold": model.knn_threshold,
        "d_reduced": model.d_reduced(),
    }))
}

/// Parses one probability row per line (numbers separated by spaces,
/// commas or tabs) and summarizes them as MC passes for one input.
pub fn mc_uncertainty(text: &str, yellow: f64, red: f64) -> Result<Value, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| format!("line {}: cannot parse `{t}`", i + 1)))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let thresholds = EpistemicThresholds::new(yellow, red).map_err(|e| e.to_string())?;
    let s = aggregate_classification(&rows).map_err(|e| e.to_string())?;
    Ok(json!({
        "passes": s.passes,
        "predictive_mean": s.predictive_mean,
        "variance": s.variance,
        "predictive_entropy": s.predictive_entropy,
        "expected_entropy": s.expected_entropy,
        "epistemic": s.epistemic,
        "flag": flag_epistemic(s.epistemic, &thresholds),
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = gaussianMi)]
pub fn gaussian_mi_js(rho: f64, n: usize, seed: u32, bins: &str, correction: &str) -> Result<String, JsValue> {
    to_js(gaussian_mi(rho, n, u64::from(seed), bins, correction))
}

#[wasm_bindgen(js_name = domainMap)]
pub fn domain_map_js(n: usize, clusters: usize, correlation: f64, resolution: usize, seed: u32) -> Result<String, JsValue> {
    to_js(domain_map(n, clusters, correlation, resolution, u64::from(seed)))
}

#[wasm_bindgen(js_name = mcUncertainty)]
pub fn mc_uncertainty_js(text: &str, yellow: f64, red: f64) -> Result<String, JsValue> {
    to_js(mc_uncertainty(text, yellow, red))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_mi_tracks_rho() {
        let v = gaussian_mi(0.8, 3000, 1, "auto", "none").unwrap();
        let r_hist = v["hist"]["r_mi"].as_f64().unwrap();
        let r_kde = v["kde"]["r_mi"].as_f64().unwrap();
        assert!((r_hist - 0.8).abs() < 0.05, "{r_hist}");
        assert!((r_kde - 0.8).abs() < 0.05, "{r_kde}");
        assert_eq!(v["scatter"].as_array().unwrap().len(), SCATTER_POINTS);
        assert!(gaussian_mi(0.5, 6000, 1, "20", "mm").unwrap()["kde"].is_null());
        assert!(gaussian_mi(1.0, 100, 1, "auto", "none").is_err());
        assert!(gaussian_mi(0.5, 100, 1, "zero", "none").is_err());
    }

    #[test]
    fn domain_map_marks_center_in_and_corners_out() {
        let v = domain_map(300, 1, 0.0, 21, 5).unwrap();
        let levels: Vec<u64> = v["levels"].as_array().unwrap().iter().map(|l| l.as_u64().unwrap()).collect();
        assert_eq!(levels.len(), 441);
        assert_eq!(levels[10 * 21 + 10], 0);
        assert_eq!(levels[0], 2);
        assert_eq!(levels[440], 2);
        let c = &v["counts"];
        let total: u64 = ["in_domain", "borderline", "out"].iter().map(|k| c[k].as_u64().unwrap()).sum();
        assert_eq!(total, 441);
    }

    #[test]
    fn two_clusters_leave_a_borderline_gap() {
        let v = domain_map(400, 2, 0.3, 41, 2).unwrap();
        assert!(v["counts"]["borderline"].as_u64().unwrap() > 0);
    }

    #[test]
    fn mc_uncertainty_parses_rows() {
        let v = mc_uncertainty("1 0\n0, 1\n", 0.1, 0.5).unwrap();
        assert_eq!(v["epistemic"].as_f64().unwrap(), std::f64::consts::LN_2);
        assert_eq!(v["flag"], "HIGH");
        let v = mc_uncertainty("0.5\t0.5\n0.5 0.5", 0.1, 0.5).unwrap();
        assert_eq!(v["epistemic"].as_f64().unwrap(), 0.0);
        assert_eq!(v["flag"], "LOW");
        assert!(mc_uncertainty("0.5 x", 0.1, 0.5).unwrap_err().contains("line 1"));
        assert!(mc_uncertainty("0.9 0.1", 0.1, 0.5).is_err());
    }
}
