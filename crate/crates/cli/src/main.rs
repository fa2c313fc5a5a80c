use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sxai_core::audit::{
    attribute_stds, canonical_json, decision_summaries, domain_matrices, posthoc_for, relatedness_for, run_audit,
    write_report, AuditConfig, DomainSpace, EXIT_ERROR,
};
use sxai_core::dataio::{csv_to_tensor, load_dump, read_tensor, read_tensor_maskable, write_tensor, Manifest, Split};
use sxai_core::demo::{
    gradcheck_fixture, mlp_gradient_check, run_demo, DemoConfig, LossBatch, SyntheticConfig,
};
use sxai_core::domain::{
    check_all, fit_domain_model, load_domain_model, save_domain_model, DomainConfig, LevelCounts,
};
use sxai_core::linalg::Matrix;
use sxai_core::mi::{mi_histogram, mi_kde, Bins, Correction, Estimator, HistConfig, KdeConfig};
use sxai_core::posthoc::{gradcheck_instance, gradient_check};
use sxai_core::relatedness::RelatednessConfig;
use sxai_core::uncertainty::{flag_epistemic, EpistemicThresholds};

#[derive(Parser)]
#[command(name = "sxai", version, about = "Audit a self-explaining model from its activation dump")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// File format conversion.
    #[command(subcommand)]
    Convert(ConvertCmd),
    /// Mutual information between two tensor columns.
    Mi(MiArgs),
    /// Attribute relatedness scores.
    Relatedness(RelatednessArgs),
    /// Applicability domain: fit a model or check queries against one.
    #[command(subcommand)]
    Ad(AdCmd),
    /// Per-example MC-dropout summaries for one head.
    Uncertainty(UncertaintyArgs),
    /// Attributes-only surrogate and fidelity gap.
    Posthoc(PosthocArgs),
    /// Synthetic demo model.
    #[command(subcommand)]
    Demo(DemoCmd),
    /// Full audit with warning light; exit code 0 green, 1 yellow, 2 red, 3 error.
    Audit(AuditArgs),
}

#[derive(Subcommand)]
enum ConvertCmd {
    /// CSV with a header row to an N×C tensor file.
    CsvToTensor {
        input: PathBuf,
        output: PathBuf,
    },
}

#[derive(Args)]
struct MiArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `role:column`, e.g. `latents:3`.
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    #[arg(long, default_value = "hist")]
    estimator: Estimator,
    #[arg(long, default_value = "auto")]
    bins: Bins,
    #[arg(long, default_value = "none")]
    correction: Correction,
    /// Restrict to a split of the per-example roles.
    #[arg(long)]
    split: Option<Split>,
}

#[derive(Args)]
struct RelatednessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "hist")]
    estimator: Estimator,
    #[arg(long, default_value = "auto")]
    bins: Bins,
    #[arg(long, default_value = "none")]
    correction: Correction,
    #[arg(long, default_value = "train")]
    split: Split,
    /// Use correlation coefficients instead of raw MI factors.
    #[arg(long)]
    correlation_factors: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AdCmd {
    /// Fit on the training rows and save `<out>` plus `<out>.json`.
    Fit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `inputs` (train_inputs role) or `latents` (training split).
        #[arg(long, default_value = "inputs")]
        space: DomainSpace,
    },
    /// Check every row of a role against a saved model.
    Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        queries: String,
        /// Defaults to the manifest the model was fitted from.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Restrict the query rows to a split.
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct UncertaintyArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `decision` or `attribute:<j>`.
    #[arg(long, default_value = "decision")]
    head: String,
    #[arg(long, default_value = "query")]
    split: Split,
    /// Fixed yellow threshold; thresholds are calibrated on the training split otherwise.
    #[arg(long, requires = "red")]
    yellow: Option<f64>,
    #[arg(long, requires = "yellow")]
    red: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PosthocArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DemoCmd {
    /// Generate data, train the network and write an activation dump.
    Run {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Shift query inputs by this many training standard deviations.
        #[arg(long, default_value_t = 0.0)]
        query_shift: f64,
        /// MC-dropout passes; 0 omits the sample roles.
        #[arg(long, default_value_t = 30)]
        passes: usize,
        #[arg(long)]
        no_mc_dropout: bool,
        /// Two attributes only, with the decision also driven by a hidden factor.
        #[arg(long)]
        hidden_dependency: bool,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Finite-difference checks of the network and surrogate gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    md: Option<PathBuf>,
    /// `key = value` file, optionally with `[section]` headers.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

/// The raw tensor of one manifest role as a matrix (1-D tensors become one column).
fn role_matrix(manifest_path: &Path, role: &str) -> Result<Matrix> {
    let text = fs::read_to_string(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest = Manifest::parse(&text)?;
    let Some(entry) = manifest.roles.get(role) else {
        bail!("role `{role}` not in manifest");
    };
    let path = manifest_dir(manifest_path).join(&entry.path);
    let t = if entry.maskable {
        read_tensor_maskable(&path)?
    } else {
        read_tensor(&path)?
    };
    match t.dims() {
        [n] => Ok(Matrix::from_vec(*n, 1, t.data().iter().map(|&v| f64::from(v)).collect())),
        [_, _] => Ok(t.to_matrix()?),
        dims => bail!("role `{role}` has shape {dims:?}; expected 1 or 2 dimensions"),
    }
}

fn restrict(m: Matrix, manifest: &Path, split: Option<Split>) -> Result<Matrix> {
    let Some(split) = split else { return Ok(m) };
    let dump = load_dump(manifest)?;
    if m.rows() != dump.dims.n {
        bail!("--split applies to per-example roles with {} rows, got {}", dump.dims.n, m.rows());
    }
    Ok(m.select_rows(&dump.split_rows(split)))
}

fn column(spec: &str, manifest: &Path, split: Option<Split>) -> Result<Vec<f64>> {
    let (role, col) = spec
        .rsplit_once(':')
        .with_context(|| format!("expected `role:column`, got `{spec}`"))?;
    let col: usize = col.parse().with_context(|| format!("bad column in `{spec}`"))?;
    let m = restrict(role_matrix(manifest, role)?, manifest, split)?;
    if col >= m.cols() {
        bail!("column {col} out of range; `{role}` has {} columns", m.cols());
    }
    Ok(m.column(col))
}

fn cmd_mi(a: MiArgs) -> Result<()> {
    let x = column(&a.x, &a.manifest, a.split)?;
    let y = column(&a.y, &a.manifest, a.split)?;
    if x.len() != y.len() {
        bail!("`{}` has {} rows but `{}` has {}", a.x, x.len(), a.y, y.len());
    }
    let est = match a.estimator {
        Estimator::Hist => mi_histogram(
            &x,
            &y,
            &HistConfig {
                bins: a.bins,
                correction: a.correction,
            },
        )?,
        Estimator::Kde => mi_kde(&x, &y, &KdeConfig::default())?,
    };
    emit(None, &canonical_json(&est))
}

fn cmd_relatedness(a: RelatednessArgs) -> Result<()> {
    let dump = load_dump(&a.manifest)?;
    let cfg = RelatednessConfig {
        estimator: a.estimator,
        bins: a.bins,
        correction: a.correction,
        use_correlation_factors: a.correlation_factors,
        ..RelatednessConfig::default()
    };
    let report = relatedness_for(&dump, &cfg, a.split)?;
    emit(a.out.as_deref(), &canonical_json(&report))
}

fn cmd_ad(cmd: AdCmd) -> Result<()> {
    match cmd {
        AdCmd::Fit { manifest, out, space } => {
            let dump = load_dump(&manifest)?;
            let (train, _) = domain_matrices(&dump, space).map_err(anyhow::Error::msg)?;
            let model = fit_domain_model(&train, &DomainConfig::default())?;
            save_domain_model(&model, &out, &manifest.to_string_lossy())?;
            let sidecar = model.sidecar(&manifest.to_string_lossy());
            emit(None, &canonical_json(&sidecar))
        }
        AdCmd::Check {
            model,
            queries,
            manifest,
            split,
            out,
        } => {
            let (model_fit, sidecar) =
                load_domain_model(&model).with_context(|| format!("loading {}", model.display()))?;
            let manifest = manifest.unwrap_or_else(|| PathBuf::from(&sidecar.source));
            let q = restrict(role_matrix(&manifest, &queries)?, &manifest, split)?;
            if q.cols() != model_fit.input_dim() {
                bail!(
                    "`{queries}` has {} columns but the model was fitted on {}",
                    q.cols(),
                    model_fit.input_dim()
                );
            }
            let verdicts = check_all(&model_fit, &q)?;
            let rows: Vec<_> = verdicts
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut o = serde_json::to_value(v).expect("verdict serializes");
                    o["query"] = json!(i);
                    o
                })
                .collect();
            let doc = json!({
                "queries": queries,
                "n_queries": q.rows(),
                "d_reduced": model_fit.d_reduced(),
                "knn_threshold": model_fit.knn_threshold,
                "leverage_threshold": model_fit.leverage_threshold,
                "counts": LevelCounts::tally(&verdicts),
                "verdicts": rows,
            });
            emit(out.as_deref(), &canonical_json(&doc))
        }
    }
}

fn cmd_uncertainty(a: UncertaintyArgs) -> Result<()> {
    let dump = load_dump(&a.manifest)?;
    let rows = dump.split_rows(a.split);
    let doc = if a.head == "decision" {
        let Some(summaries) = decision_summaries(&dump, &rows) else {
            bail!("mc_decision_samples role absent");
        };
        let summaries = summaries?;
        let thresholds = match (a.yellow, a.red) {
            (Some(y), Some(r)) => EpistemicThresholds::new(y, r)?,
            _ => {
                let train = decision_summaries(&dump, &dump.split_rows(Split::Train)).expect("cube present")?;
                EpistemicThresholds::calibrate(&train.iter().map(|s| s.epistemic).collect::<Vec<_>>())?
            }
        };
        let examples: Vec<_> = rows
            .iter()
            .zip(&summaries)
            .map(|(&i, s)| {
                let mut o = serde_json::to_value(s).expect("summary serializes");
                o["row"] = json!(i);
                o["flag"] = json!(flag_epistemic(s.epistemic, &thresholds));
                o
            })
            .collect();
        json!({
            "head": "decision",
            "split": a.split,
            "thresholds": thresholds,
            "examples": examples,
        })
    } else if let Some(j) = a.head.strip_prefix("attribute:") {
        let j: usize = j.parse().with_context(|| format!("bad attribute index in `{}`", a.head))?;
        if j >= dump.dims.k {
            bail!("attribute {j} out of range; the dump has {} attributes", dump.dims.k);
        }
        let Some(stds) = attribute_stds(&dump, j, &rows) else {
            bail!("mc_attribute_samples role absent");
        };
        let stds = stds?;
        let cube = dump.mc_attribute_samples.as_ref().expect("cube present");
        let examples: Vec<_> = rows
            .iter()
            .zip(&stds)
            .map(|(&i, std)| {
                let mean = (0..cube.passes).map(|t| cube.get(t, i)[j]).sum::<f64>() / cube.passes as f64;
                json!({ "row": i, "mean": mean, "std": std, "passes": cube.passes })
            })
            .collect();
        json!({
            "head": format!("attribute:{j}"),
            "name": dump.attribute_names()[j],
            "split": a.split,
            "examples": examples,
        })
    } else {
        bail!("--head must be `decision` or `attribute:<j>`, got `{}`", a.head);
    };
    emit(a.out.as_deref(), &canonical_json(&doc))
}

fn cmd_posthoc(a: PosthocArgs) -> Result<()> {
    let dump = load_dump(&a.manifest)?;
    let section = posthoc_for(&dump, &AuditConfig::default())?;
    emit(a.out.as_deref(), &canonical_json(&section))
}

fn cmd_demo(cmd: DemoCmd) -> Result<()> {
    match cmd {
        DemoCmd::Run {
            seed,
            out,
            query_shift,
            passes,
            no_mc_dropout,
            hidden_dependency,
            epochs,
        } => {
            let mut cfg = DemoConfig::default();
            if hidden_dependency {
                cfg.synthetic = SyntheticConfig::hidden_dependency();
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.dump.query_shift = query_shift;
            cfg.dump.passes = passes;
            cfg.dump.mc_dropout = !no_mc_dropout;
            let run = run_demo(&cfg, seed, &out)?;
            emit(None, &canonical_json(&run))
        }
        DemoCmd::Gradcheck { seed } => {
            let (net, x, labels, attrs) = gradcheck_fixture(seed);
            let batch = LossBatch {
                x: &x,
                labels: &labels,
                attributes: &attrs,
            };
            let mlp = mlp_gradient_check(&net, &batch, 1.0, 1e-4);
            let (params, classes, a, d) = gradcheck_instance(seed);
            let logistic = gradient_check(&params, classes, &a, &d, 1e-4, 1e-5);
            let pass = mlp < 1e-4 && logistic < 1e-4;
            emit(
                None,
                &canonical_json(&json!({
                    "mlp_max_relative_error": mlp,
                    "logistic_max_relative_error": logistic,
                    "tolerance": 1e-4,
                    "pass": pass,
                })),
            )?;
            if !pass {
                bail!("gradient check failed");
            }
            Ok(())
        }
    }
}

fn cmd_audit(a: AuditArgs) -> Result<i32> {
    let cfg = match &a.config {
        Some(p) => AuditConfig::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => AuditConfig::default(),
    };
    let report = run_audit(&a.manifest, &cfg).with_context(|| format!("auditing {}", a.manifest.display()))?;
    write_report(&report, a.out.as_deref(), a.md.as_deref())?;
    eprintln!("warning light: {}", report.warning_light);
    Ok(report.warning_light.exit_code())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Convert(ConvertCmd::CsvToTensor { input, output }) => {
            let t = csv_to_tensor(&input)?;
            write_tensor(&output, &t)?;
            eprintln!("wrote {} with shape {:?}", output.display(), t.dims());
        }
        Command::Mi(a) => cmd_mi(a)?,
        Command::Relatedness(a) => cmd_relatedness(a)?,
        Command::Ad(c) => cmd_ad(c)?,
        Command::Uncertainty(a) => cmd_uncertainty(a)?,
        Command::Posthoc(a) => cmd_posthoc(a)?,
        Command::Demo(c) => cmd_demo(c)?,
        Command::Audit(a) => return cmd_audit(a),
    }
    Ok(0)
}

/// The error chain, skipping causes whose text an outer message already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let c = cause.to_string();
        if !msg.contains(&c) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&c);
        }
    }
    msg
}

fn main() -> ExitCode {
    // Usage errors must not collide with the audit's RED exit code.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
