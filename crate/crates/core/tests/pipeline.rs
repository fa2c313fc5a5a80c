use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

use sxai_core::audit::{audit_dump, render_json, render_markdown, run_audit, AuditConfig, Section, RASHOMON_CAVEAT};
use sxai_core::dataio::{load_dump, DataError, Manifest, Split};
use sxai_core::demo::{
    generate_synthetic, run_demo, train_demo_network, DemoConfig, DumpConfig, SyntheticConfig, TrainConfig,
    MANIFEST_FILE,
};
use sxai_core::domain::{
    check_domain, fit_domain_model, load_domain_model, save_domain_model, DomainConfig, DomainLevel,
};
use sxai_core::posthoc::FidelityTag;
use sxai_core::uncertainty::aggregate_classification;

struct Runs {
    _dir: TempDir,
    plain: PathBuf,
    shifted: PathBuf,
    hidden: PathBuf,
    no_dropout: PathBuf,
}

fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let go = |name: &str, cfg: DemoConfig| run_demo(&cfg, 42, &dir.path().join(name)).unwrap().manifest;
        let plain = go("plain", DemoConfig::default());
        let shifted = go(
            "shifted",
            DemoConfig {
                dump: DumpConfig {
                    query_shift: 10.0,
                    ..DumpConfig::default()
                },
                ..DemoConfig::default()
            },
        );
        let hidden = go(
            "hidden",
            DemoConfig {
                synthetic: SyntheticConfig::hidden_dependency(),
                ..DemoConfig::default()
            },
        );
        let no_dropout = go(
            "no_dropout",
            DemoConfig {
                dump: DumpConfig {
                    mc_dropout: false,
                    passes: 5,
                    ..DumpConfig::default()
                },
                ..DemoConfig::default()
            },
        );
        Runs {
            _dir: dir,
            plain,
            shifted,
            hidden,
            no_dropout,
        }
    })
}

fn schema() -> jsonschema::Validator {
    let text = include_str!("../schema/audit_report.schema.json");
    jsonschema::validator_for(&serde_json::from_str(text).unwrap()).unwrap()
}

fn assert_valid(json: &str) {
    let v: Value = serde_json::from_str(json).unwrap();
    let validator = schema();
    let errors: Vec<String> = validator.iter_errors(&v).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn trained_network_meets_accuracy_targets() {
    let data = generate_synthetic(&SyntheticConfig::default(), 42).unwrap();
    let (_, s) = train_demo_network(&data, &TrainConfig::default(), 42).unwrap();
    assert!(s.test_accuracy >= 0.9, "{}", s.test_accuracy);
    for (j, mse) in s.test_attribute_mse.iter().enumerate() {
        assert!(*mse < 0.1, "attribute {j}: {mse}");
    }
}

#[test]
fn demo_dump_loads_with_expected_shapes() {
    let d = load_dump(&runs().plain).unwrap();
    assert_eq!((d.dims.n, d.dims.m, d.dims.k, d.dims.c, d.dims.t), (2500, 32, 4, 2, Some(30)));
    assert_eq!(d.latents.rows(), 2500);
    assert_eq!(d.latents.cols(), 32);
    assert_eq!(d.split_rows(Split::Train).len(), 2000);
    assert_eq!(d.split_rows(Split::Query).len(), 500);
    assert_eq!(d.attribute_names(), ["subtlety", "sphericity", "margin", "lobulation"]);
    assert_eq!(d.train_inputs.as_ref().unwrap().rows(), 2000);
    assert_eq!(d.query_inputs.as_ref().unwrap().rows(), 500);
}

#[test]
fn dumps_are_bit_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = DemoConfig {
        dump: DumpConfig {
            passes: 3,
            ..DumpConfig::default()
        },
        ..DemoConfig::default()
    };
    let a = run_demo(&cfg, 9, &dir.path().join("a")).unwrap();
    let b = run_demo(&cfg, 9, &dir.path().join("b")).unwrap();
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for name in names {
        let fa = fs::read(a.manifest.parent().unwrap().join(&name)).unwrap();
        let fb = fs::read(b.manifest.parent().unwrap().join(&name)).unwrap();
        assert!(fa == fb, "{name:?} differs");
    }
}

#[test]
fn mc_samples_without_dropout_are_identical() {
    let d = load_dump(&runs().no_dropout).unwrap();
    let cube = d.mc_decision_samples.as_ref().unwrap();
    for i in [0, 17, 2499] {
        let s = aggregate_classification(&cube.example_rows(i)).unwrap();
        assert!(s.variance.iter().all(|&v| v == 0.0));
        assert_eq!(s.epistemic, 0.0);
    }
}

#[test]
fn shifted_queries_are_more_uncertain() {
    let cfg = AuditConfig::default();
    let plain = run_audit(&runs().plain, &cfg).unwrap();
    let shifted = run_audit(&runs().shifted, &cfg).unwrap();
    let e = |r: &sxai_core::audit::AuditReport| r.uncertainty.ok().unwrap().decision.mean_epistemic;
    assert!(e(&shifted) > e(&plain), "{} vs {}", e(&shifted), e(&plain));
}

#[test]
fn surrogate_generalizes_and_fidelity_flips_with_hidden_dependency() {
    let cfg = AuditConfig::default();
    let plain = run_audit(&runs().plain, &cfg).unwrap();
    let f = plain.posthoc.ok().unwrap().fidelity.ok().unwrap().clone();
    assert!((f.surrogate_accuracy - f.surrogate_train_accuracy).abs() <= 0.05);
    assert_eq!(f.tag, FidelityTag::AttributesSufficient);

    let hidden = run_audit(&runs().hidden, &cfg).unwrap();
    let h = hidden.posthoc.ok().unwrap().fidelity.ok().unwrap();
    assert_eq!(h.tag, FidelityTag::AdditionalFeaturesLikely, "gap {}", h.gap);
}

#[test]
fn shifted_queries_turn_the_light_red() {
    let r = run_audit(&runs().shifted, &AuditConfig::default()).unwrap();
    let d = r.domain.ok().unwrap();
    assert_eq!(d.counts.out, 500);
    assert_eq!(r.warning_light.exit_code(), 2);
}

#[test]
fn mc_samples_only_affect_the_uncertainty_section() {
    let dump = load_dump(&runs().plain).unwrap();
    let cfg = AuditConfig::default();
    let full = audit_dump(&dump, &cfg).unwrap();
    let bare = audit_dump(&dump.without_mc_samples(), &cfg).unwrap();
    assert_eq!(full.relatedness, bare.relatedness);
    assert_eq!(full.domain, bare.domain);
    assert_eq!(full.posthoc, bare.posthoc);
    assert!(matches!(bare.uncertainty, Section::Skipped { .. }));
    assert_valid(&render_json(&bare));
}

#[test]
fn reports_render_deterministically_and_validate() {
    let cfg = AuditConfig::default();
    for path in [&runs().plain, &runs().shifted, &runs().hidden] {
        let a = render_json(&run_audit(path, &cfg).unwrap());
        let b = render_json(&run_audit(path, &cfg).unwrap());
        assert!(a == b);
        assert_valid(&a);
    }
    let report = run_audit(&runs().plain, &cfg).unwrap();
    let md = render_markdown(&report);
    assert!(md.starts_with(&format!("# Warning light: {}", report.warning_light)));
    assert!(md.contains(RASHOMON_CAVEAT));
}

#[test]
fn report_without_labels_skips_fidelity() {
    let src = runs().plain.parent().unwrap();
    let dir = TempDir::new().unwrap();
    for e in fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), dir.path().join(e.file_name())).unwrap();
    }
    let mpath = dir.path().join(MANIFEST_FILE);
    let mut m = Manifest::parse(&fs::read_to_string(&mpath).unwrap()).unwrap();
    m.roles.remove("labels");
    fs::write(&mpath, m.to_json()).unwrap();
    let r = run_audit(&mpath, &AuditConfig::default()).unwrap();
    assert!(matches!(r.posthoc.ok().unwrap().fidelity, Section::Skipped { .. }));
    assert_valid(&render_json(&r));
}

#[test]
fn missing_and_inconsistent_roles_are_rejected() {
    let src = runs().plain.parent().unwrap();
    let dir = TempDir::new().unwrap();
    for e in fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), dir.path().join(e.file_name())).unwrap();
    }
    let mpath = dir.path().join(MANIFEST_FILE);
    let orig = Manifest::parse(&fs::read_to_string(&mpath).unwrap()).unwrap();

    let mut m = orig.clone();
    m.roles.remove("decision");
    fs::write(&mpath, m.to_json()).unwrap();
    assert!(matches!(load_dump(&mpath), Err(DataError::MissingRole(r)) if r == "decision"));

    let mut m = orig.clone();
    let short = sxai_core::dataio::TensorFile::new(vec![2499], vec![0.0; 2499]).unwrap();
    sxai_core::dataio::write_tensor(dir.path().join("short.sxt"), &short).unwrap();
    m.roles.get_mut("decision").unwrap().path = "short.sxt".into();
    m.roles.get_mut("decision").unwrap().shape = None;
    fs::write(&mpath, m.to_json()).unwrap();
    assert!(matches!(load_dump(&mpath), Err(DataError::ShapeMismatch(_))));
}

fn demo_domain() -> (sxai_core::linalg::Matrix, sxai_core::domain::DomainModel) {
    let d = load_dump(&runs().plain).unwrap();
    let x = d.train_inputs.unwrap();
    let m = fit_domain_model(&x, &DomainConfig::default()).unwrap();
    (x, m)
}

#[test]
fn demo_domain_model_examples() {
    let (x, m) = demo_domain();
    assert!(m.d_reduced() <= 10);
    for i in (0..x.rows()).step_by(7) {
        assert_eq!(check_domain(&m, x.row(i)).unwrap().level, DomainLevel::In, "row {i}");
    }
    let mid: Vec<f64> = x.row(3).iter().zip(x.row(1500)).map(|(a, b)| 0.5 * (a + b)).collect();
    assert_eq!(check_domain(&m, &mid).unwrap().level, DomainLevel::In);

    let far: Vec<f64> = m
        .standardizer
        .mean
        .iter()
        .zip(&m.standardizer.std)
        .map(|(mu, s)| mu + 10.0 * s)
        .collect();
    let v = check_domain(&m, &far).unwrap();
    assert_eq!(v.level, DomainLevel::Out);
    assert!(v.leverage_exceeded);
}

#[test]
fn nudged_hull_vertex_is_borderline() {
    let (_, m) = demo_domain();
    let d = m.d_reduced();
    let delta = 0.1 * m.knn_threshold / (d as f64).sqrt();
    let mut found = false;
    for axis in 0..d {
        for sign in [1.0, -1.0] {
            let v = (0..m.train_proj.rows())
                .max_by(|&a, &b| (sign * m.train_proj.row(a)[axis]).total_cmp(&(sign * m.train_proj.row(b)[axis])))
                .unwrap();
            let mut p = m.train_proj.row(v).to_vec();
            p[axis] += sign * delta;
            let verdict = m.check_projected(&p).unwrap();
            assert!(!verdict.in_hull);
            if !verdict.knn_exceeded {
                assert_eq!(verdict.level, DomainLevel::Borderline);
                found = true;
            }
        }
    }
    assert!(found);
}

#[test]
fn saved_domain_model_reproduces_verdicts() {
    let (x, m) = demo_domain();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("domain.bin");
    save_domain_model(&m, &path, "test").unwrap();
    let (loaded, sidecar) = load_domain_model(Path::new(&path)).unwrap();
    assert_eq!(sidecar.d_reduced, m.d_reduced());
    let d = load_dump(&runs().shifted).unwrap();
    for q in d.query_inputs.unwrap().iter_rows().take(20).chain(x.iter_rows().take(5)) {
        assert_eq!(check_domain(&m, q).unwrap(), check_domain(&loaded, q).unwrap());
    }
}
