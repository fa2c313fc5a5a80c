//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail. Runs as a plain binary (`harness = false`) so the
//! lines appear in the normal test output.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use tempfile::TempDir;

use sxai_core::audit::{relatedness_for, render_json, run_audit, AuditConfig};
use sxai_core::dataio::{load_dump, Split};
use sxai_core::demo::{gradcheck_fixture, mlp_gradient_check, run_demo, DemoConfig, DumpConfig, LossBatch};
use sxai_core::domain::{check_domain, fit_domain_model, hull_membership, leverage, DomainConfig};
use sxai_core::linalg::Matrix;
use sxai_core::mi::{
    mi_correlation, mi_histogram, mi_kde, Bins, ContingencyTable, Correction, HistConfig, KdeConfig,
};
use sxai_core::posthoc::{gradcheck_instance, gradient_check};
use sxai_core::relatedness::{relatedness_score, unit_profiles, RelatednessConfig};
use sxai_core::rng::{Stream, SxRng};
use sxai_core::uncertainty::aggregate_classification;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian_pairs(seed: u64, n: usize, rho: f64) -> (Vec<f64>, Vec<f64>) {
    let mut r = SxRng::new(seed, Stream::Scratch);
    let s = (1.0 - rho * rho).sqrt();
    (0..n)
        .map(|_| {
            let a = r.normal();
            (a, rho * a + s * r.normal())
        })
        .unzip()
}

fn hist(correction: Correction) -> HistConfig {
    HistConfig {
        bins: Bins::Auto,
        correction,
    }
}

fn c1_gaussian_recovery() -> Outcome {
    let start = Instant::now();
    let (x, y) = gaussian_pairs(1, 20_000, 0.8);
    let rh = mi_correlation(mi_histogram(&x, &y, &hist(Correction::None)).unwrap().value).unwrap();
    let rk = mi_correlation(mi_kde(&x, &y, &KdeConfig::default()).unwrap().value).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = |r: f64| (0.75..=0.85).contains(&r);
    outcome(
        ok(rh) && ok(rk) && secs < 10.0,
        format!("r_hist={rh:.4} r_kde={rk:.4} in [0.75, 0.85], {secs:.2}s < 10s"),
    )
}

fn c2_independence_floor() -> Outcome {
    let (x, y) = gaussian_pairs(2, 20_000, 0.0);
    let h = mi_histogram(&x, &y, &hist(Correction::MillerMadow)).unwrap().value;
    let k = mi_kde(&x, &y, &KdeConfig::default()).unwrap().value;
    outcome(h <= 0.02 && k <= 0.02, format!("hist+mm={h:.5} kde={k:.5} nats <= 0.02"))
}

fn c3_closed_form() -> Outcome {
    let truth = -0.5 * (1.0f64 - 0.25).ln();
    let (x, y) = gaussian_pairs(3, 20_000, 0.5);
    let h = mi_histogram(&x, &y, &hist(Correction::None)).unwrap().value;
    let k = mi_kde(&x, &y, &KdeConfig::default()).unwrap().value;
    outcome(
        (h - truth).abs() <= 0.05 && (k - truth).abs() <= 0.05,
        format!("true={truth:.5} hist={h:.5} kde={k:.5}, tolerance 0.05"),
    )
}

/// Plug-in MI of two discrete sequences from their joint counts.
fn count_mi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint = std::collections::BTreeMap::new();
    let mut ma = std::collections::BTreeMap::new();
    let mut mb = std::collections::BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *ma.entry(x).or_insert(0.0) += 1.0;
        *mb.entry(y).or_insert(0.0) += 1.0;
    }
    joint
        .iter()
        .map(|(&(x, y), &c)| c / n * (c * n / (ma[&x] * mb[&y])).ln())
        .sum()
}

fn c4_brute_force_relatedness() -> Outcome {
    // The 12-bit index is the decision column; the unit and attribute
    // columns are drawn from a generator keyed by the same index.
    let n = 12;
    let mut worst = 0.0f64;
    for mask in 0u64..1 << n {
        let d: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
        let mut r = SxRng::new(mask, Stream::Scratch);
        let bits = |r: &mut SxRng| (0..n).map(|_| r.below(2)).collect::<Vec<usize>>();
        let (l0, l1, a) = (bits(&mut r), bits(&mut r), bits(&mut r));
        let to_f = |v: &[usize]| v.iter().map(|&b| b as f64).collect::<Vec<_>>();
        let mut lat = Vec::with_capacity(2 * n);
        for i in 0..n {
            lat.push(l0[i] as f64);
            lat.push(l1[i] as f64);
        }
        let latents = Matrix::from_vec(n, 2, lat);
        let attrs = Matrix::from_vec(n, 1, to_f(&a));
        let profiles = unit_profiles(&latents, &d, &attrs, &RelatednessConfig::default()).unwrap();
        let got = relatedness_score(&profiles, 0).unwrap();
        let want = count_mi(&l0, &d) * count_mi(&l0, &a) + count_mi(&l1, &d) * count_mi(&l1, &a);
        worst = worst.max((got - want).abs());
    }
    outcome(worst <= 1e-12, format!("4096 datasets, max |R - oracle| = {worst:.3e} <= 1e-12"))
}

fn c5_relatedness_ground_truth() -> Outcome {
    let start = Instant::now();
    let dir = TempDir::new().unwrap();
    let cfg = DemoConfig {
        dump: DumpConfig {
            passes: 0,
            ..DumpConfig::default()
        },
        ..DemoConfig::default()
    };
    let mut correct = 0;
    for seed in 1..=20u64 {
        let run = run_demo(&cfg, seed, &dir.path().join(seed.to_string())).unwrap();
        let dump = load_dump(&run.manifest).unwrap();
        let rep = relatedness_for(&dump, &RelatednessConfig::default(), Split::Train).unwrap();
        let r: Vec<f64> = rep.attributes.iter().map(|a| a.r).collect();
        if r[0].min(r[1]) > r[2].max(r[3]) {
            correct += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        correct >= 19 && secs < 300.0,
        format!("causal outrank non-causal in {correct}/20 seeds (need 19), {secs:.1}s < 300s"),
    )
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Jarvis march; counter-clockwise hull vertices.
fn gift_wrap(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let start = (0..pts.len())
        .min_by(|&a, &b| pts[a][0].total_cmp(&pts[b][0]).then(pts[a][1].total_cmp(&pts[b][1])))
        .unwrap();
    let mut hull = vec![];
    let mut p = start;
    loop {
        hull.push(pts[p]);
        let mut q = (p + 1) % pts.len();
        for r in 0..pts.len() {
            if cross(pts[p], pts[q], pts[r]) < 0.0 {
                q = r;
            }
        }
        p = q;
        if p == start {
            break;
        }
    }
    hull
}

fn in_polygon(hull: &[[f64; 2]], q: [f64; 2]) -> bool {
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], q) >= 0.0)
}

fn c6_hull_oracle() -> Outcome {
    let mut r = SxRng::new(6, Stream::Scratch);
    let (mut agree, mut total, mut inside) = (0, 0, 0);
    for _ in 0..50 {
        let n = 5 + r.below(40);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [r.normal(), 0.5 * r.normal()]).collect();
        let m = Matrix::from_rows(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>());
        let hull = gift_wrap(&pts);
        for _ in 0..20 {
            let q = [r.uniform_range(-3.0, 3.0), r.uniform_range(-1.5, 1.5)];
            let want = in_polygon(&hull, q);
            let got = hull_membership(&m, &q, 1e-7).unwrap();
            inside += usize::from(want);
            agree += usize::from(want == got);
            total += 1;
        }
    }
    outcome(agree == total, format!("{agree}/{total} agree with gift-wrap oracle ({inside} inside), eps 1e-7"))
}

fn random_matrix(r: &mut SxRng, n: usize, d: usize) -> Matrix {
    // Correlated features with distinct scales.
    let mix: Vec<f64> = (0..d * d).map(|_| r.normal()).collect();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| r.normal()).collect();
        for j in 0..d {
            data.push((0..d).map(|k| mix[j * d + k] * z[k]).sum::<f64>() * (1.0 + j as f64));
        }
    }
    Matrix::from_vec(n, d, data)
}

fn c7_leverage_trace() -> Outcome {
    let mut r = SxRng::new(7, Stream::Scratch);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = 20 + r.below(181);
        let d = 2 + r.below(7);
        let x = random_matrix(&mut r, n, d);
        let m = fit_domain_model(&x, &DomainConfig::default()).unwrap();
        let total: f64 = (0..n).map(|i| leverage(&m.gram_inverse, m.train_proj.row(i))).sum();
        worst = worst.max((total - (m.d_reduced() + 1) as f64).abs());
    }
    outcome(worst <= 1e-6, format!("50 instances, max |sum h - (d+1)| = {worst:.3e} <= 1e-6"))
}

fn c8_affine_invariance() -> Outcome {
    let mut r = SxRng::new(8, Stream::Scratch);
    let (mut same, mut total) = (0, 0);
    let mut levels = [0usize; 3];
    for _ in 0..100 {
        let n = 40 + r.below(80);
        let d = 2 + r.below(4);
        let x = random_matrix(&mut r, n, d);
        let scale: Vec<f64> = (0..d).map(|_| r.uniform_range(0.1, 10.0)).collect();
        let shift: Vec<f64> = (0..d).map(|_| r.uniform_range(-5.0, 5.0)).collect();
        let tf = |row: &[f64]| -> Vec<f64> { row.iter().zip(&scale).zip(&shift).map(|((v, a), b)| a * v + b).collect() };
        let xt = Matrix::from_rows(&x.iter_rows().map(tf).collect::<Vec<_>>());
        let m = fit_domain_model(&x, &DomainConfig::default()).unwrap();
        let mt = fit_domain_model(&xt, &DomainConfig::default()).unwrap();
        for _ in 0..10 {
            let base = x.row(r.below(n)).to_vec();
            let spread = r.uniform_range(0.0, 3.0);
            let q: Vec<f64> = base.iter().map(|v| v * spread + r.normal()).collect();
            let a = check_domain(&m, &q).unwrap().level;
            let b = check_domain(&mt, &tf(&q)).unwrap().level;
            levels[a as usize] += 1;
            same += usize::from(a == b);
            total += 1;
        }
    }
    outcome(
        same == total,
        format!("{same}/{total} verdict levels unchanged over 100 instances (IN/BORDERLINE/OUT = {levels:?})"),
    )
}

fn c9_uncertainty_identities() -> Outcome {
    let constant = aggregate_classification(&vec![vec![0.3, 0.7]; 10]).unwrap();
    let split = aggregate_classification(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let uniform = aggregate_classification(&vec![vec![0.25; 4]; 5]).unwrap();
    let a = constant.variance.iter().all(|&v| v == 0.0) && constant.epistemic == 0.0;
    let b = split.epistemic == std::f64::consts::LN_2;
    let c = (uniform.predictive_entropy - 4f64.ln()).abs() <= 1e-12;
    outcome(
        a && b && c,
        format!(
            "constant: var 0 & epistemic {} | one-hot pair: epistemic - ln2 = {:e} | uniform: H - ln4 = {:e}",
            constant.epistemic,
            split.epistemic - std::f64::consts::LN_2,
            uniform.predictive_entropy - 4f64.ln()
        ),
    )
}

fn c10_gradient_checks() -> Outcome {
    let mut mlp = 0.0f64;
    let mut logistic = 0.0f64;
    for seed in 0..10 {
        let (net, x, labels, attrs) = gradcheck_fixture(seed);
        let batch = LossBatch {
            x: &x,
            labels: &labels,
            attributes: &attrs,
        };
        mlp = mlp.max(mlp_gradient_check(&net, &batch, 1.0, 1e-4));
        let (p, c, a, d) = gradcheck_instance(seed);
        logistic = logistic.max(gradient_check(&p, c, &a, &d, 1e-4, 1e-5));
    }
    outcome(
        mlp < 1e-4 && logistic < 1e-4,
        format!("max relative error: mlp {mlp:.3e}, logistic {logistic:.3e} (< 1e-4, 10 seeds)"),
    )
}

fn sxai(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sxai")).args(args).output().unwrap()
}

fn demo_and_audit(dir: &Path, extra: &[&str]) -> (i32, String) {
    let out = dir.to_str().unwrap();
    let mut args = vec!["demo", "run", "--seed", "42", "--out", out];
    args.extend_from_slice(extra);
    let run = sxai(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let manifest = dir.join("manifest.json");
    let report = dir.join("report.json");
    let audit = sxai(&[
        "audit",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    (audit.status.code().unwrap_or(-1), std::fs::read_to_string(report).unwrap_or_default())
}

fn light_of(report: &str) -> String {
    serde_json::from_str::<serde_json::Value>(report).unwrap()["warning_light"]
        .as_str()
        .unwrap_or("?")
        .to_string()
}

fn c11a_shifted_alert() -> Outcome {
    let dir = TempDir::new().unwrap();
    let (code, report) = demo_and_audit(dir.path(), &["--query-shift", "10"]);
    let light = light_of(&report);
    outcome(code == 2 && light == "RED", format!("+10 sigma queries: light {light}, exit {code} (want RED, 2)"))
}

fn c11b_in_distribution_green() -> Outcome {
    let dir = TempDir::new().unwrap();
    let (code, report) = demo_and_audit(dir.path(), &[]);
    let light = light_of(&report);
    let r = run_audit(&dir.path().join("manifest.json"), &AuditConfig::default()).unwrap();
    let c = r.domain.ok().map(|d| d.counts);
    outcome(
        code == 0 && light == "GREEN",
        format!("unshifted queries: light {light}, exit {code} (want GREEN, 0); domain counts {c:?}"),
    )
}

fn c12_reproducibility() -> Outcome {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (_, ra) = demo_and_audit(a.path(), &[]);
    let (_, rb) = demo_and_audit(b.path(), &[]);
    let lib = render_json(&run_audit(&a.path().join("manifest.json"), &AuditConfig::default()).unwrap());
    outcome(
        !ra.is_empty() && ra == rb && ra == lib,
        format!("two runs: {} and {} bytes, identical = {}", ra.len(), rb.len(), ra == rb),
    )
}

fn c13_coarsening() -> Outcome {
    let mut r = SxRng::new(13, Stream::Scratch);
    let (mut ok, mut total) = (0, 0);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let counts: Vec<u64> = (0..16).map(|_| r.below(20) as u64).collect();
        let t = ContingencyTable::new(4, 4, counts);
        if t.total() == 0 {
            continue;
        }
        let base = t.plugin_mi();
        for i in 0..3 {
            for merged in [t.merge_adjacent_rows(i), t.merge_adjacent_cols(i)] {
                let d = merged.plugin_mi() - base;
                worst = worst.max(d);
                ok += usize::from(d <= 1e-12);
                total += 1;
            }
        }
    }
    outcome(ok == total, format!("{ok}/{total} merges did not increase MI (max change {worst:.3e}, slack 1e-12)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("1 gaussian MI recovery", c1_gaussian_recovery),
        ("2 independence floor", c2_independence_floor),
        ("3 closed-form MI", c3_closed_form),
        ("4 brute-force relatedness", c4_brute_force_relatedness),
        ("5 relatedness ground truth", c5_relatedness_ground_truth),
        ("6 hull oracle", c6_hull_oracle),
        ("7 leverage trace", c7_leverage_trace),
        ("8 domain affine invariance", c8_affine_invariance),
        ("9 uncertainty identities", c9_uncertainty_identities),
        ("10 gradient checks", c10_gradient_checks),
        ("11a shifted queries alert", c11a_shifted_alert),
        ("11b in-distribution green", c11b_in_distribution_green),
        ("12 reproducible report", c12_reproducibility),
        ("13 coarsening", c13_coarsening),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let o = f();
        let t: Duration = start.elapsed();
        println!(
            "{} criterion {name}: {} [{:.2}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
