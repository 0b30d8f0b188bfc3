//! `distnet`: fit runtime distributions, rank families, train and apply
//! parameter models, run the experiment protocols, generate synthetic data.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use distnet::experiments::{self, DataSource, ExperimentConfig, ExperimentReport, ModelKind};
use distnet::io::{create, load_dataset, load_features, load_runtimes, log_dropped, write_features, write_runtimes};
use distnet::model_file::{ModelFile, SavedModel};
use distnet::reports::{self, write_report};
use distnet_core::distnet::{train_with_stop, Activation};
use distnet_core::forest::train_forest;
use distnet_core::metrics::{fit_instance, FitFailure};
use distnet_core::preprocessing::DEFAULT_CONSTANT_TOL;
use distnet_core::rng::derive_seed;
use distnet_core::synth::generate_synthetic;
use distnet_core::{
    ForestParams, ForestVariant, InstanceId, JoinReport, NetworkConfig, RtdFamily, SynthSpec, TrainConfig,
};

/// Overrides the default output directory of `rank`, `experiment` and `synth`.
const OUTPUT_DIR_ENV: &str = "DISTNET_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "distnet",
    version,
    about = "Predict runtime distributions of randomized solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one family to each instance's runtimes by maximum likelihood.
    Fit(FitArgs),
    /// Rank distribution families by normalized NLLH and KS rejection rate.
    Rank(RankArgs),
    /// Train a parameter model and save it as JSON.
    Train(TrainArgs),
    /// Predict distribution parameters (in seconds) for new instances.
    Predict(PredictArgs),
    /// Run one of the experiment protocols from a JSON config.
    Experiment(ExperimentArgs),
    /// Generate a synthetic dataset with known distributions.
    Synth(SynthArgs),
}

fn parse_family(s: &str) -> Result<RtdFamily, String> {
    s.parse()
        .map_err(|_| format!("unknown family `{s}` (expected one of N, LOG, EXP, INV)"))
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err("must lie strictly between 0 and 1".to_string())
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be positive and finite".to_string())
    }
}

fn parse_non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be non-negative and finite".to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModelArg {
    Distnet,
    Irf,
    Mrf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ActivationArg {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
enum QuestionArg {
    #[value(name = "1")]
    Q1,
    #[value(name = "2")]
    Q2,
    #[value(name = "3")]
    Q3,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    /// CSV with columns instance,seed,runtime.
    #[arg(long)]
    runtimes: PathBuf,
    #[arg(long, value_parser = parse_family)]
    family: RtdFamily,
    /// Only fit this instance.
    #[arg(long)]
    instance: Option<String>,
}

#[derive(Debug, Args, Serialize)]
struct RankArgs {
    /// CSV with an `instance` column followed by feature columns.
    #[arg(long)]
    features: PathBuf,
    /// CSV with columns instance,seed,runtime.
    #[arg(long)]
    runtimes: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_family, default_value = "N,LOG,EXP,INV")]
    families: Vec<RtdFamily>,
    /// KS test significance level.
    #[arg(long, value_parser = parse_alpha, default_value_t = 0.01)]
    alpha: f64,
    /// Output directory [default: $DISTNET_OUTPUT_DIR, else ./distnet-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    runtimes: PathBuf,
    #[arg(long, value_parser = parse_family)]
    family: RtdFamily,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Root seed for weight init, shuffling and bootstrap samples.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ignore the wall-clock budget so the result depends only on the inputs.
    #[arg(long)]
    deterministic: bool,
    /// Features whose training spread is below this are dropped.
    #[arg(long, value_parser = parse_non_negative, default_value_t = DEFAULT_CONSTANT_TOL)]
    constant_tol: f64,

    /// Hidden layer widths (distnet).
    #[arg(long, value_delimiter = ',', default_value = "16,16", help_heading = "DistNet")]
    hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ActivationArg::Tanh, help_heading = "DistNet")]
    activation: ActivationArg,
    /// Disable batch normalization.
    #[arg(long, help_heading = "DistNet")]
    no_batch_norm: bool,
    #[arg(long, value_parser = parse_non_negative, default_value_t = 1e-4, help_heading = "DistNet")]
    l2: f64,
    #[arg(long, default_value_t = 16, help_heading = "DistNet")]
    batch_size: usize,
    #[arg(long, value_parser = parse_positive, default_value_t = 1e-3, help_heading = "DistNet")]
    lr_start: f64,
    #[arg(long, value_parser = parse_positive, default_value_t = 1e-5, help_heading = "DistNet")]
    lr_end: f64,
    #[arg(long, default_value_t = 1000, help_heading = "DistNet")]
    max_epochs: usize,
    #[arg(long, value_parser = parse_positive, default_value_t = 3600.0, help_heading = "DistNet")]
    max_wall_seconds: f64,
    /// Global gradient-norm clip.
    #[arg(long, value_parser = parse_positive, default_value_t = 1.0, help_heading = "DistNet")]
    grad_clip: f64,

    #[arg(long, default_value_t = 100, help_heading = "Forests")]
    n_trees: usize,
    /// Features tried per split [default: a third of them, rounded up].
    #[arg(long, help_heading = "Forests")]
    max_features: Option<usize>,
    #[arg(long, default_value_t = 1, help_heading = "Forests")]
    min_samples_leaf: usize,
    /// Grow every tree on the full training set.
    #[arg(long, help_heading = "Forests")]
    no_bootstrap: bool,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// CSV with the same feature columns the model was trained on.
    #[arg(long)]
    features: PathBuf,
    /// Also print these quantiles, e.g. 0.5,0.9.
    #[arg(long, value_delimiter = ',', value_parser = parse_alpha)]
    quantiles: Vec<f64>,
    /// CSV to write [default: stdout]. A `.run.json` file with the run
    /// settings is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ExperimentArgs {
    #[arg(long = "q", value_enum)]
    question: QuestionArg,
    /// JSON config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $DISTNET_OUTPUT_DIR, else ./distnet-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Q2 report whose runs Q3 may reuse where subsampling keeps every runtime.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// Generator spec as JSON [default: 2000 LOG instances, 10 features, 100 runs].
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory [default: $DISTNET_OUTPUT_DIR, else ./distnet-out].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Settings of one invocation, embedded in every artifact it writes.
#[derive(Debug, Serialize)]
struct RunConfig {
    command: &'static str,
    version: &'static str,
    args: Value,
    seed: u64,
    deterministic: bool,
    jobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<PathBuf>,
}

impl RunConfig {
    fn new(command: &'static str, args: &impl Serialize) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            args: serde_json::to_value(args).expect("arguments serialize"),
            seed: 0,
            deterministic: true,
            jobs: 1,
            output: None,
        }
    }

    fn value(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}

fn output_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("distnet-out"))
}

fn dropped_ids(report: &JoinReport) -> Vec<InstanceId> {
    let mut ids: Vec<_> = report
        .missing_runtimes
        .iter()
        .chain(&report.missing_features)
        .cloned()
        .collect();
    ids.sort();
    ids
}

fn print_json(value: &Value) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> anyhow::Result<()> {
    let run = RunConfig::new("fit", args);
    let runtimes = load_runtimes(&args.runtimes)?;
    let selected: Vec<_> = match &args.instance {
        Some(id) => {
            let (id, times) = runtimes
                .iter()
                .find(|(k, _)| k.as_str() == id)
                .ok_or_else(|| anyhow!("{}: no runtimes for instance `{id}`", args.runtimes.display()))?;
            vec![(id.clone(), times.clone())]
        }
        None => runtimes.into_iter().collect(),
    };
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (id, times) in selected {
        let inst = distnet_core::Instance {
            id,
            features: distnet_core::FeatureVector(Vec::new()),
            runtimes: times,
        };
        match fit_instance(args.family, &inst) {
            Ok(f) => fits.push(json!({
                "instance": f.instance,
                "params": f.params,
                "nllh": f.nllh,
                "normalized_nllh": f.normalized_nllh,
            })),
            Err(f) => failures.push(f),
        }
    }
    for f in &failures {
        eprintln!(
            "{}",
            json!({"event": "fit_failed", "instance": f.instance, "reason": f.reason})
        );
    }
    print_json(&json!({
        "run": run.value(),
        "family": args.family,
        "fits": fits,
        "failures": failures,
    }))?;
    if fits.is_empty() {
        bail!("no instance could be fitted");
    }
    Ok(())
}

fn cmd_rank(args: &RankArgs) -> anyhow::Result<()> {
    let dir = output_dir(&args.out);
    let mut run = RunConfig::new("rank", args);
    run.jobs = args.jobs;
    run.output = Some(dir.clone());
    let (data, joined) = load_dataset(&args.features, &args.runtimes)?;
    log_dropped(&joined);
    let cfg = ExperimentConfig {
        data: DataSource::Csv {
            features: args.features.display().to_string(),
            runtimes: args.runtimes.display().to_string(),
        },
        families: args.families.clone(),
        alpha: args.alpha,
        jobs: args.jobs,
        deterministic: true,
        ..ExperimentConfig::default()
    };
    let mut report = experiments::run_q1(&data, &cfg, dropped_ids(&joined))?;
    report.run = Some(run.value());
    write_report(&dir, &report)?;
    reports::ranking_csv(std::io::stdout().lock(), &report)?;
    Ok(())
}

fn warn_excluded(excluded: &[FitFailure]) {
    for f in excluded {
        eprintln!(
            "{}",
            json!({"event": "instance_excluded", "instance": f.instance, "reason": f.reason})
        );
    }
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let mut run = RunConfig::new("train", args);
    run.seed = args.seed;
    run.deterministic = args.deterministic;
    run.output = Some(args.out.clone());
    let (data, joined) = load_dataset(&args.features, &args.runtimes)?;
    log_dropped(&joined);
    let start = Instant::now();
    let (model, excluded, extra) = match args.model {
        ModelArg::Distnet => {
            let net_cfg = NetworkConfig {
                hidden_layers: args.hidden.clone(),
                activation: match args.activation {
                    ActivationArg::Tanh => Activation::Tanh,
                    ActivationArg::Relu => Activation::Relu,
                },
                batch_norm: !args.no_batch_norm,
                l2: args.l2,
            };
            let train_cfg = TrainConfig {
                batch_size: args.batch_size,
                lr_start: args.lr_start,
                lr_end: args.lr_end,
                max_epochs: args.max_epochs,
                max_wall_seconds: args.max_wall_seconds,
                grad_clip_norm: args.grad_clip,
                init_seed: derive_seed(args.seed, "init", 0),
                shuffle_seed: derive_seed(args.seed, "shuffle", 0),
                constant_tol: args.constant_tol,
            };
            let deterministic = args.deterministic;
            let model = train_with_stop(&data, args.family, &net_cfg, &train_cfg, &mut |_| {
                !deterministic && start.elapsed().as_secs_f64() > train_cfg.max_wall_seconds
            })?;
            let extra = json!({
                "epochs": model.training_log.epochs.len(),
                "stop": model.training_log.stop,
                "final_loss": model.training_log.epochs.last().map(|e| e.mean_loss),
            });
            (SavedModel::Distnet(model), Vec::new(), extra)
        }
        ModelArg::Irf | ModelArg::Mrf => {
            let variant = if args.model == ModelArg::Irf {
                ForestVariant::Independent
            } else {
                ForestVariant::MultiOutput
            };
            let params = ForestParams {
                n_trees: args.n_trees,
                max_features: args.max_features,
                min_samples_leaf: args.min_samples_leaf,
                bootstrap: !args.no_bootstrap,
                seed: derive_seed(args.seed, "forest", 0),
            };
            let model = train_forest(&data, args.family, variant, &params, args.constant_tol)?;
            let excluded = model.excluded.clone();
            (SavedModel::Forest(model), excluded, json!({"n_trees": args.n_trees}))
        }
    };
    warn_excluded(&excluded);
    let file = ModelFile::new(run.value(), data.feature_names().to_vec(), model);
    create(&args.out)?
        .write_all(file.to_json().as_bytes())
        .with_context(|| args.out.display().to_string())?;
    let dropped = dropped_ids(&joined);
    let mut summary = json!({
        "model_file": args.out,
        "model": args.model,
        "family": args.family,
        "n_instances": data.len(),
        "n_features": data.n_features(),
        "n_observations": data.n_observations(),
        "warnings": excluded.len() + dropped.len(),
        "excluded": excluded,
        "dropped": dropped,
        "training": extra,
        "run": run.value(),
    });
    if !args.deterministic {
        summary["wall_seconds"] = json!(start.elapsed().as_secs_f64());
    }
    print_json(&summary)
}

/// Column name for a quantile: 0.5 -> q50, 0.975 -> q97.5.
fn quantile_column(q: f64) -> String {
    let pct = (q * 100.0 * 1e6).round() / 1e6;
    format!("q{pct}")
}

fn cmd_predict(args: &PredictArgs) -> anyhow::Result<()> {
    let mut run = RunConfig::new("predict", args);
    run.output = args.out.clone();
    let model = ModelFile::read(&args.model)?;
    let (names, rows) = load_features(&args.features)?;
    if names.len() != model.n_features() {
        bail!(
            "{}: {} feature columns, but the model was trained on {}",
            args.features.display(),
            names.len(),
            model.n_features()
        );
    }
    if names != model.feature_names {
        let (i, (got, want)) = names
            .iter()
            .zip(&model.feature_names)
            .enumerate()
            .find(|(_, (a, b))| a != b)
            .expect("names differ");
        bail!(
            "{}: feature column {} is `{got}`, the model expects `{want}`",
            args.features.display(),
            i + 1
        );
    }
    let family = model.family();
    let mut header: Vec<String> = vec!["instance".to_string()];
    header.extend(family.param_names().iter().map(|s| s.to_string()));
    header.extend(args.quantiles.iter().map(|&q| quantile_column(q)));

    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(&header)?;
    for (id, fv) in &rows {
        let params = model.predict(fv).with_context(|| format!("instance `{id}`"))?;
        let mut row = vec![id.to_string()];
        row.extend(params.theta().iter().map(|v| format!("{v:?}")));
        for &q in &args.quantiles {
            row.push(format!("{:?}", params.quantile(q)?));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    if let Some(path) = &args.out {
        let mut side = path.clone().into_os_string();
        side.push(".run.json");
        let side = PathBuf::from(side);
        let body = json!({"run": run.value(), "model_run": model.run, "family": family, "rows": rows.len()});
        create(&side)?.write_all(format!("{}\n", serde_json::to_string_pretty(&body)?).as_bytes())?;
    }
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    match path {
        None => Ok((ExperimentConfig::default(), PathBuf::from("."))),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
            let cfg = serde_json::from_str(&text).with_context(|| format!("{}: invalid config", path.display()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((cfg, base))
        }
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cmd_experiment(args: &ExperimentArgs) -> anyhow::Result<()> {
    let (mut cfg, base) = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if args.deterministic {
        cfg.deterministic = true;
    }
    if let Some(e) = args.max_epochs {
        cfg.training.max_epochs = e;
    }
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    if let Some(r) = args.repetitions {
        cfg.repetitions = r;
    }
    if let Some(k) = &args.k_grid {
        cfg.k_grid = k.clone();
    }
    cfg.validate()?;
    let dir = output_dir(&args.out);
    let mut run = RunConfig::new("experiment", args);
    run.seed = cfg.seed;
    run.deterministic = cfg.deterministic;
    run.jobs = cfg.jobs;
    run.output = Some(dir.clone());

    let (data, dropped) = match &cfg.data {
        DataSource::Synthetic(spec) => (generate_synthetic(spec)?.dataset, Vec::new()),
        DataSource::Csv { features, runtimes } => {
            let (data, joined) = load_dataset(&resolve(&base, features), &resolve(&base, runtimes))?;
            log_dropped(&joined);
            (data, dropped_ids(&joined))
        }
    };
    let mut report = match args.question {
        QuestionArg::Q1 => experiments::run_q1(&data, &cfg, dropped)?,
        QuestionArg::Q2 => experiments::run_q2(&data, &cfg, dropped)?,
        QuestionArg::Q3 => {
            let prior = match &args.prior {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
                    let r: ExperimentReport =
                        serde_json::from_str(&text).with_context(|| format!("{}: not a report", p.display()))?;
                    Some(r)
                }
                None => None,
            };
            experiments::run_q3(&data, &cfg, dropped, prior.as_ref())?
        }
    };
    report.run = Some(run.value());
    let written = write_report(&dir, &report)?;
    print_json(&json!({"written": written, "summary": headline(&report)}))
}

/// Compact per-question numbers for the terminal.
fn headline(report: &ExperimentReport) -> Value {
    if let Some(q1) = &report.q1 {
        return Value::Array(
            q1.ranking
                .iter()
                .map(|r| json!({"family": r.family, "normalized_nllh": r.normalized_nllh, "ks_rejection_pct": r.rejection_rate}))
                .collect(),
        );
    }
    if let Some(q2) = &report.q2 {
        return Value::Array(
            q2.summary
                .iter()
                .map(|s| json!({"model": s.model, "train": s.train.map(|v| v.mean), "test": s.test.map(|v| v.mean), "failed_folds": s.failed_folds}))
                .collect(),
        );
    }
    if let Some(q3) = &report.q3 {
        let mut rows: Vec<Value> = q3
            .curve
            .iter()
            .map(|p| json!({"model": p.model, "k": p.k, "test": p.test.map(|v| v.mean), "failed_runs": p.failed_runs}))
            .collect();
        rows.push(json!({"model": ModelKind::Fitted, "test": q3.gold_summary.mean}));
        return Value::Array(rows);
    }
    Value::Null
}

fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str::<SynthSpec>(&text).with_context(|| format!("{}: invalid spec", p.display()))?
        }
        None => SynthSpec::default_log(0),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let dir = output_dir(&args.out);
    let mut run = RunConfig::new("synth", args);
    run.seed = spec.seed;
    run.output = Some(dir.clone());
    let synth = generate_synthetic(&spec)?;

    let features = dir.join("features.csv");
    let runtimes = dir.join("runtimes.csv");
    write_features(create(&features)?, &synth.dataset).with_context(|| features.display().to_string())?;
    write_runtimes(create(&runtimes)?, &synth.dataset).with_context(|| runtimes.display().to_string())?;

    let truth = dir.join("truth.json");
    let body = json!({
        "run": run.value(),
        "spec": synth.spec,
        "directions": synth.directions,
        "truth": synth.truth,
    });
    write_json(&truth, &body)?;

    let cfg = ExperimentConfig {
        seed: spec.seed,
        data: DataSource::Csv {
            features: "features.csv".to_string(),
            runtimes: "runtimes.csv".to_string(),
        },
        family: spec.family,
        ..ExperimentConfig::default()
    };
    let experiment = dir.join("experiment.json");
    write_json(&experiment, &serde_json::to_value(&cfg)?)?;
    print_json(&json!({
        "written": [features, runtimes, truth, experiment],
        "n_instances": synth.dataset.len(),
        "n_observations": synth.dataset.n_observations(),
    }))
}

fn write_json(path: &Path, value: &Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    create(path)?
        .write_all(text.as_bytes())
        .with_context(|| path.display().to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
