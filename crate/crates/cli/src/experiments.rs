//! The three experiment protocols: family ranking (Q1), cross-validated
//! model comparison (Q2) and the observations-per-instance curve (Q3).
//!
//! Every job (one model on one fold, or one model on one fold of one
//! repetition at one k) draws its seeds from the root seed by name, so jobs
//! can run in any order on any number of threads and merge into the same
//! report.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use distnet_core::data::{shared_ids, split_folds};
use distnet_core::distnet::{self, StopReason};
use distnet_core::forest::train_forest;
use distnet_core::metrics::{fit_instance, instance_normalized_nllh, rank_families, FamilyRanking, FitFailure};
use distnet_core::preprocessing::DEFAULT_CONSTANT_TOL;
use distnet_core::rng::{derive_seed, substream};
use distnet_core::{
    Dataset, ForestParams, ForestVariant, Instance, InstanceId, NetworkConfig, RtdFamily, RtdParams,
    RuntimeObservations, SynthSpec, TrainConfig,
};

pub const REPORT_FORMAT: &str = "distnet-experiment-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Per-instance maximum-likelihood fit on the instance's own runtimes.
    #[serde(rename = "fitted")]
    Fitted,
    #[serde(rename = "iRF")]
    Irf,
    #[serde(rename = "mRF")]
    Mrf,
    #[serde(rename = "DistNet")]
    DistNet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Fitted, ModelKind::Irf, ModelKind::Mrf, ModelKind::DistNet];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fitted => "fitted",
            ModelKind::Irf => "iRF",
            ModelKind::Mrf => "mRF",
            ModelKind::DistNet => "DistNet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthSpec),
    /// Paths are relative to the config file's directory.
    Csv {
        features: String,
        runtimes: String,
    },
}

/// DistNet training settings shared by all folds; seeds are derived per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub max_epochs: usize,
    pub max_wall_seconds: f64,
    pub grad_clip_norm: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            batch_size: d.batch_size,
            lr_start: d.lr_start,
            lr_end: d.lr_end,
            max_epochs: d.max_epochs,
            max_wall_seconds: d.max_wall_seconds,
            grad_clip_norm: d.grad_clip_norm,
        }
    }
}

impl TrainingSettings {
    pub fn train_config(&self, init_seed: u64, shuffle_seed: u64, constant_tol: f64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            max_epochs: self.max_epochs,
            max_wall_seconds: self.max_wall_seconds,
            grad_clip_norm: self.grad_clip_norm,
            shuffle_seed,
            init_seed,
            constant_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestSettings {
    fn default() -> Self {
        let d = ForestParams::default();
        Self {
            n_trees: d.n_trees,
            max_features: d.max_features,
            min_samples_leaf: d.min_samples_leaf,
            bootstrap: d.bootstrap,
        }
    }
}

impl ForestSettings {
    pub fn params(&self, seed: u64) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_features: self.max_features,
            min_samples_leaf: self.min_samples_leaf,
            bootstrap: self.bootstrap,
            seed,
        }
    }
}

/// Everything an experiment run depends on. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    /// Families ranked by Q1.
    pub families: Vec<RtdFamily>,
    pub alpha: f64,
    /// Family predicted by the models in Q2 and Q3.
    pub family: RtdFamily,
    pub folds: usize,
    /// Models compared in Q2.
    pub models: Vec<ModelKind>,
    /// Models retrained on subsampled runtimes in Q3.
    pub curve_models: Vec<ModelKind>,
    pub k_grid: Vec<usize>,
    pub repetitions: usize,
    pub network: NetworkConfig,
    pub training: TrainingSettings,
    pub forest: ForestSettings,
    pub constant_tol: f64,
    /// Disables the wall-clock training budget and omits timings.
    pub deterministic: bool,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSource::Synthetic(SynthSpec::default_log(0)),
            families: RtdFamily::ALL.to_vec(),
            alpha: 0.01,
            family: RtdFamily::LogNormal,
            folds: 10,
            models: ModelKind::ALL.to_vec(),
            curve_models: vec![ModelKind::DistNet, ModelKind::Mrf],
            k_grid: vec![2, 4, 8, 16, 32, 64, 100],
            repetitions: 10,
            network: NetworkConfig::default(),
            training: TrainingSettings::default(),
            forest: ForestSettings::default(),
            constant_tol: DEFAULT_CONSTANT_TOL,
            deterministic: false,
            jobs: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Core(#[from] distnet_core::Error),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("k = {k} exceeds the {available} observations of instance `{instance}`")]
    NotEnoughObservations {
        k: usize,
        available: usize,
        instance: InstanceId,
    },
    #[error("fold {fold}: {count} instance(s) appear in both training and test data (first: `{first}`)")]
    Leakage {
        fold: usize,
        count: usize,
        first: InstanceId,
    },
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.families.is_empty() {
            return bad("`families` is empty");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("`alpha` must lie in (0, 1)");
        }
        if self.folds < 2 {
            return bad("`folds` must be at least 2");
        }
        if self.models.is_empty() {
            return bad("`models` is empty");
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return bad("`k_grid` must hold positive counts");
        }
        if self.repetitions == 0 {
            return bad("`repetitions` must be at least 1");
        }
        if self.curve_models.contains(&ModelKind::Fitted) {
            return bad("`curve_models` takes trained models only; the gold standard is always reported");
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))
    }

    /// Seeds used to train `model` on `fold`.
    pub fn job_seeds(&self, model: ModelKind, fold: usize) -> BTreeMap<String, u64> {
        let f = fold as u64;
        let mut seeds = BTreeMap::new();
        match model {
            ModelKind::Fitted => {}
            ModelKind::Irf | ModelKind::Mrf => {
                seeds.insert("forest".to_string(), derive_seed(self.seed, "forest", f));
            }
            ModelKind::DistNet => {
                seeds.insert("init".to_string(), derive_seed(self.seed, "init", f));
                seeds.insert("shuffle".to_string(), derive_seed(self.seed, "shuffle", f));
            }
        }
        seeds
    }

    /// Whether `other` trains the same models on the same folds, so Q3 can
    /// reuse its Q2 runs.
    fn same_training_setup(&self, other: &ExperimentConfig) -> bool {
        self.seed == other.seed
            && self.data == other.data
            && self.family == other.family
            && self.folds == other.folds
            && self.network == other.network
            && self.training == other.training
            && self.forest == other.forest
            && self.constant_tol.to_bits() == other.constant_tol.to_bits()
            && self.deterministic == other.deterministic
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let m = mean(values);
    let std = if n > 1 {
        (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean: m, std, n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub instance: InstanceId,
    pub normalized_nllh: f64,
}

/// A model's normalized NLLH on one set of instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean over `instances`.
    pub normalized_nllh: f64,
    pub instances: Vec<InstanceScore>,
    /// Instances the gold standard could not fit (left out of the mean).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FitFailure>,
}

impl Evaluation {
    fn from_scores(instances: Vec<InstanceScore>, failures: Vec<FitFailure>) -> Result<Self> {
        if instances.is_empty() {
            return Err(distnet_core::Error::Empty("no evaluable instances").into());
        }
        let values: Vec<f64> = instances.iter().map(|s| s.normalized_nllh).collect();
        Ok(Self {
            normalized_nllh: mean(&values),
            instances,
            failures,
        })
    }

    fn recomputed(&self) -> f64 {
        mean(&self.instances.iter().map(|s| s.normalized_nllh).collect::<Vec<_>>())
    }
}

/// Gold standard: every instance scored under its own maximum-likelihood fit.
pub fn evaluate_fitted(family: RtdFamily, data: &Dataset) -> Result<Evaluation> {
    let (mut scores, mut failures) = (Vec::new(), Vec::new());
    for inst in data.instances() {
        match fit_instance(family, inst) {
            Ok(fit) => scores.push(InstanceScore {
                instance: fit.instance,
                normalized_nllh: fit.normalized_nllh,
            }),
            Err(f) => failures.push(f),
        }
    }
    Evaluation::from_scores(scores, failures)
}

pub fn evaluate_predictions(
    data: &Dataset,
    predict: impl Fn(&Instance) -> distnet_core::Result<RtdParams>,
) -> Result<Evaluation> {
    let scores = data
        .instances()
        .iter()
        .map(|inst| {
            let params = predict(inst)?;
            Ok(InstanceScore {
                instance: inst.id.clone(),
                normalized_nllh: instance_normalized_nllh(&params, inst.runtimes.times()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Evaluation::from_scores(scores, Vec::new())
}

fn check_disjoint(fold: usize, train: &Dataset, test: &Dataset) -> Result<()> {
    let shared = shared_ids(train, test);
    match shared.iter().next() {
        None => Ok(()),
        Some(first) => Err(ExperimentError::Leakage {
            fold,
            count: shared.len(),
            first: first.clone(),
        }),
    }
}

/// Extra facts about how a trained model came to be.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
    /// Training instances the forest targets could not be fitted for.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<FitFailure>,
}

struct Trained {
    info: TrainingInfo,
    train_eval: Evaluation,
    test_eval: Evaluation,
}

/// Train `model` on `train` and score it on both sets. The fitted gold
/// standard reads each set's own runtimes and trains nothing.
fn train_and_evaluate(
    cfg: &ExperimentConfig,
    model: ModelKind,
    fold: usize,
    train: &Dataset,
    test: &Dataset,
) -> Result<Trained> {
    check_disjoint(fold, train, test)?;
    let seeds = cfg.job_seeds(model, fold);
    match model {
        ModelKind::Fitted => Ok(Trained {
            info: TrainingInfo::default(),
            train_eval: evaluate_fitted(cfg.family, train)?,
            test_eval: evaluate_fitted(cfg.family, test)?,
        }),
        ModelKind::Irf | ModelKind::Mrf => {
            let variant = if model == ModelKind::Irf {
                ForestVariant::Independent
            } else {
                ForestVariant::MultiOutput
            };
            let forest = train_forest(
                train,
                cfg.family,
                variant,
                &cfg.forest.params(seeds["forest"]),
                cfg.constant_tol,
            )?;
            Ok(Trained {
                train_eval: evaluate_predictions(train, |i| forest.predict(&i.features))?,
                test_eval: evaluate_predictions(test, |i| forest.predict(&i.features))?,
                info: TrainingInfo {
                    excluded: forest.excluded.clone(),
                    ..TrainingInfo::default()
                },
            })
        }
        ModelKind::DistNet => {
            let tc = cfg
                .training
                .train_config(seeds["init"], seeds["shuffle"], cfg.constant_tol);
            let start = Instant::now();
            let budget = cfg.training.max_wall_seconds;
            let deterministic = cfg.deterministic;
            let net = distnet::train_with_stop(train, cfg.family, &cfg.network, &tc, &mut |_| {
                !deterministic && start.elapsed().as_secs_f64() > budget
            })?;
            Ok(Trained {
                train_eval: evaluate_predictions(train, |i| net.predict(&i.features))?,
                test_eval: evaluate_predictions(test, |i| net.predict(&i.features))?,
                info: TrainingInfo {
                    epochs: Some(net.training_log.epochs.len()),
                    stop: Some(net.training_log.stop),
                    excluded: Vec::new(),
                },
            })
        }
    }
}

/// One model on one fold. A failed model keeps its error and is left out
/// of the summaries; the other models are unaffected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub model: ModelKind,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Evaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Evaluation>,
    #[serde(default)]
    pub training: TrainingInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

fn run_model(cfg: &ExperimentConfig, model: ModelKind, fold: usize, train: &Dataset, test: &Dataset) -> ModelRun {
    let start = Instant::now();
    let outcome = train_and_evaluate(cfg, model, fold, train, test);
    let wall_seconds = (!cfg.deterministic).then(|| start.elapsed().as_secs_f64());
    let seeds = cfg.job_seeds(model, fold);
    match outcome {
        Ok(t) => ModelRun {
            model,
            seeds,
            error: None,
            train: Some(t.train_eval),
            test: Some(t.test_eval),
            training: t.info,
            wall_seconds,
        },
        Err(e) => ModelRun {
            model,
            seeds,
            error: Some(e.to_string()),
            train: None,
            test: None,
            training: TrainingInfo::default(),
            wall_seconds,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_instances: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub n_observations: usize,
    pub min_observations: usize,
    pub max_observations: usize,
    /// Instances dropped when joining the input tables.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<InstanceId>,
}

impl DatasetSummary {
    pub fn of(data: &Dataset, dropped: Vec<InstanceId>) -> Self {
        let ks = data.instances().iter().map(|i| i.runtimes.len());
        Self {
            n_instances: data.len(),
            n_features: data.n_features(),
            feature_names: data.feature_names().to_vec(),
            n_observations: data.n_observations(),
            min_observations: ks.clone().min().unwrap_or(0),
            max_observations: ks.max().unwrap_or(0),
            dropped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q1Result {
    pub alpha: f64,
    /// Best family first.
    pub ranking: Vec<FamilyRanking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_instances: Vec<InstanceId>,
    pub n_train: usize,
    pub runs: Vec<ModelRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    /// Over the per-fold means of folds where the model succeeded.
    pub train: Option<Summary>,
    pub test: Option<Summary>,
    pub failed_folds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q2Result {
    pub family: RtdFamily,
    pub folds: Vec<FoldResult>,
    pub summary: Vec<ModelSummary>,
}

impl Q2Result {
    pub fn summary_of(&self, model: ModelKind) -> Option<&ModelSummary> {
        self.summary.iter().find(|s| s.model == model)
    }

    fn run(&self, fold: usize, model: ModelKind) -> Option<&ModelRun> {
        self.folds.get(fold)?.runs.iter().find(|r| r.model == model)
    }
}

fn summarize_models(models: &[ModelKind], folds: &[FoldResult]) -> Vec<ModelSummary> {
    models
        .iter()
        .map(|&model| {
            let (mut train, mut test, mut failed) = (Vec::new(), Vec::new(), Vec::new());
            for f in folds {
                let run = f.runs.iter().find(|r| r.model == model);
                match run.and_then(|r| r.train.as_ref().zip(r.test.as_ref())) {
                    Some((tr, te)) => {
                        train.push(tr.normalized_nllh);
                        test.push(te.normalized_nllh);
                    }
                    None => failed.push(f.fold),
                }
            }
            ModelSummary {
                model,
                train: (!train.is_empty()).then(|| summarize(&train)),
                test: (!test.is_empty()).then(|| summarize(&test)),
                failed_folds: failed,
            }
        })
        .collect()
}

/// One trained model at one k, repetition and fold, scored on the fold's
/// untouched test instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRun {
    pub k: usize,
    pub repetition: usize,
    pub fold: usize,
    pub model: ModelKind,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Evaluation>,
    #[serde(default)]
    pub training: TrainingInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub model: ModelKind,
    pub k: usize,
    /// Over the test means of every successful (fold, repetition) run.
    pub test: Option<Summary>,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Q3Result {
    pub family: RtdFamily,
    pub k_grid: Vec<usize>,
    pub repetitions: usize,
    /// Gold standard per fold, on the test instances' full runtimes.
    pub gold: Vec<Evaluation>,
    pub gold_summary: Summary,
    pub runs: Vec<CurveRun>,
    pub curve: Vec<CurvePoint>,
}

impl Q3Result {
    pub fn point(&self, model: ModelKind, k: usize) -> Option<&CurvePoint> {
        self.curve.iter().find(|p| p.model == model && p.k == k)
    }
}

fn curve_points(models: &[ModelKind], k_grid: &[usize], runs: &[CurveRun]) -> Vec<CurvePoint> {
    let mut points = Vec::new();
    for &model in models {
        for &k in k_grid {
            let mine: Vec<&CurveRun> = runs.iter().filter(|r| r.model == model && r.k == k).collect();
            let values: Vec<f64> = mine
                .iter()
                .filter_map(|r| r.test.as_ref())
                .map(|e| e.normalized_nllh)
                .collect();
            points.push(CurvePoint {
                model,
                k,
                test: (!values.is_empty()).then(|| summarize(&values)),
                failed_runs: mine.len() - values.len(),
            });
        }
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Question {
    #[serde(rename = "q1")]
    Q1,
    #[serde(rename = "q2")]
    Q2,
    #[serde(rename = "q3")]
    Q3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub version: u32,
    pub question: Question,
    pub config: ExperimentConfig,
    /// The invoking command line's settings, when run from the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
    pub notes: Vec<String>,
    pub dataset: DatasetSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q1: Option<Q1Result>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q2: Option<Q2Result>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q3: Option<Q3Result>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

fn notes(question: Question) -> Vec<String> {
    let mut n = vec![
        "normalized_nllh: per instance, mean over its runtimes of -ln(p(t) * max t); averaged over instances"
            .to_string(),
    ];
    match question {
        Question::Q1 => n.push(
            "KS p-values use the asymptotic Kolmogorov distribution at sqrt(k) * D; rejection_rate is the percentage of instances with p <= alpha"
                .to_string(),
        ),
        Question::Q2 | Question::Q3 => {
            n.push("fitted: each evaluated instance scored under a maximum-likelihood fit to its own runtimes (the optimistic gold standard); the only reader of test runtimes".to_string());
            n.push("forest targets are fitted in scaled time (runtimes divided by the training fold's maximum)".to_string());
            n.push("fold and summary means are plain means of the per-instance and per-fold values stored in this report; std uses n - 1".to_string());
        }
    }
    if question == Question::Q3 {
        n.push("training runtimes are subsampled without replacement per repetition; test instances keep all runtimes; forests are refitted to the subsampled runtimes".to_string());
        n.push("a k that equals every training instance's runtime count keeps the data unchanged, so those runs equal the Q2 runs of the same fold".to_string());
    }
    n
}

fn report(question: Question, cfg: &ExperimentConfig, data: &Dataset, dropped: Vec<InstanceId>) -> ExperimentReport {
    ExperimentReport {
        format: REPORT_FORMAT.to_string(),
        version: REPORT_VERSION,
        question,
        config: cfg.clone(),
        run: None,
        notes: notes(question),
        dataset: DatasetSummary::of(data, dropped),
        q1: None,
        q2: None,
        q3: None,
        wall_seconds: None,
    }
}

pub fn run_q1(data: &Dataset, cfg: &ExperimentConfig, dropped: Vec<InstanceId>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = cfg.pool()?;
    let rows = pool.install(|| {
        cfg.families
            .par_iter()
            .map(|&f| rank_families(data, &[f], cfg.alpha).map(|mut r| r.remove(0)))
            .collect::<distnet_core::Result<Vec<_>>>()
    })?;
    let mut ranking = rows;
    distnet_core::metrics::sort_ranking(&mut ranking);
    let mut rep = report(Question::Q1, cfg, data, dropped);
    rep.q1 = Some(Q1Result {
        alpha: cfg.alpha,
        ranking,
    });
    rep.wall_seconds = (!cfg.deterministic).then(|| start.elapsed().as_secs_f64());
    Ok(rep)
}

fn fold_splits(data: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<(Dataset, Dataset)>> {
    let folds = split_folds(data, cfg.folds, cfg.seed)?;
    Ok((0..cfg.folds).map(|f| folds.split(data, f)).collect())
}

pub fn run_q2(data: &Dataset, cfg: &ExperimentConfig, dropped: Vec<InstanceId>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let splits = fold_splits(data, cfg)?;
    let jobs: Vec<(usize, ModelKind)> = (0..cfg.folds)
        .flat_map(|f| cfg.models.iter().map(move |&m| (f, m)))
        .collect();
    let pool = cfg.pool()?;
    let mut runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(f, m)| run_model(cfg, m, f, &splits[f].0, &splits[f].1))
            .collect::<Vec<_>>()
    });
    let mut folds = Vec::with_capacity(cfg.folds);
    for (f, (train, test)) in splits.iter().enumerate() {
        let rest = runs.split_off(cfg.models.len());
        folds.push(FoldResult {
            fold: f,
            test_instances: test.ids().cloned().collect(),
            n_train: train.len(),
            runs: std::mem::replace(&mut runs, rest),
        });
    }
    let summary = summarize_models(&cfg.models, &folds);
    let mut rep = report(Question::Q2, cfg, data, dropped);
    rep.q2 = Some(Q2Result {
        family: cfg.family,
        folds,
        summary,
    });
    rep.wall_seconds = (!cfg.deterministic).then(|| start.elapsed().as_secs_f64());
    Ok(rep)
}

/// Keep `k` runtimes of every instance, drawn without replacement and kept
/// in their original order. `k` equal to an instance's count keeps it as is.
pub fn subsample(data: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    let mut rng = substream(seed, "subsample", 0);
    let mut instances = Vec::with_capacity(data.len());
    for inst in data.instances() {
        let times = inst.runtimes.times();
        if k > times.len() {
            return Err(ExperimentError::NotEnoughObservations {
                k,
                available: times.len(),
                instance: inst.id.clone(),
            });
        }
        let runtimes = if k == times.len() {
            inst.runtimes.clone()
        } else {
            let mut picked = index::sample(&mut rng, times.len(), k).into_vec();
            picked.sort_unstable();
            RuntimeObservations::new(picked.into_iter().map(|i| times[i]).collect())?
        };
        instances.push(Instance {
            id: inst.id.clone(),
            features: inst.features.clone(),
            runtimes,
        });
    }
    Ok(Dataset::new(data.feature_names().to_vec(), instances)?)
}

/// Seed of the runtime subsample for one (repetition, k, fold).
pub fn subsample_seed(root: u64, repetition: usize, k: usize, fold: usize) -> u64 {
    let rep = derive_seed(root, "subsample", repetition as u64);
    derive_seed(derive_seed(rep, "k", k as u64), "fold", fold as u64)
}

/// `prior` is an earlier Q2 report on the same data and training setup;
/// its runs stand in for the ones where subsampling keeps all runtimes.
pub fn run_q3(
    data: &Dataset,
    cfg: &ExperimentConfig,
    dropped: Vec<InstanceId>,
    prior: Option<&ExperimentReport>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let min_k = data.instances().iter().map(|i| i.runtimes.len()).min().unwrap_or(0);
    let max_k = data.instances().iter().map(|i| i.runtimes.len()).max().unwrap_or(0);
    if let Some(&k) = cfg.k_grid.iter().find(|&&k| k > min_k) {
        let inst = data
            .instances()
            .iter()
            .find(|i| i.runtimes.len() < k)
            .expect("min_k < k");
        return Err(ExperimentError::NotEnoughObservations {
            k,
            available: inst.runtimes.len(),
            instance: inst.id.clone(),
        });
    }
    let prior = prior
        .filter(|p| p.config.same_training_setup(cfg))
        .and_then(|p| p.q2.as_ref());
    let splits = fold_splits(data, cfg)?;
    // Subsampling keeps the data unchanged when every instance has exactly k
    // runtimes; those runs are identical across repetitions.
    let identity = |k: usize| min_k == max_k && k == max_k;

    let mut jobs = Vec::new();
    for &k in &cfg.k_grid {
        for rep in 0..cfg.repetitions {
            if identity(k) && rep > 0 {
                continue;
            }
            for f in 0..cfg.folds {
                for &m in &cfg.curve_models {
                    jobs.push((k, rep, f, m));
                }
            }
        }
    }
    let pool = cfg.pool()?;
    let computed: Vec<CurveRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, rep, f, model)| {
                let (train, test) = &splits[f];
                let sub_seed = subsample_seed(cfg.seed, rep, k, f);
                let mut seeds = cfg.job_seeds(model, f);
                if !identity(k) {
                    seeds.insert("subsample".to_string(), sub_seed);
                }
                let reused = identity(k).then(|| prior.and_then(|q2| q2.run(f, model))).flatten();
                let run = match reused {
                    Some(r) => r.clone(),
                    None => match subsample(train, k, sub_seed) {
                        Ok(sub) => run_model(cfg, model, f, &sub, test),
                        Err(e) => ModelRun {
                            model,
                            seeds: seeds.clone(),
                            error: Some(e.to_string()),
                            train: None,
                            test: None,
                            training: TrainingInfo::default(),
                            wall_seconds: None,
                        },
                    },
                };
                CurveRun {
                    k,
                    repetition: rep,
                    fold: f,
                    model,
                    seeds,
                    error: run.error,
                    test: run.test,
                    training: run.training,
                    wall_seconds: run.wall_seconds,
                }
            })
            .collect()
    });
    // Fan the repetition-independent runs out to every repetition.
    let mut runs = Vec::new();
    for run in computed {
        if identity(run.k) {
            for rep in 0..cfg.repetitions {
                runs.push(CurveRun {
                    repetition: rep,
                    ..run.clone()
                });
            }
        } else {
            runs.push(run);
        }
    }
    runs.sort_by_key(|r| (r.k, r.repetition, r.fold, r.model));

    let gold = splits
        .iter()
        .map(|(_, test)| evaluate_fitted(cfg.family, test))
        .collect::<Result<Vec<_>>>()?;
    let gold_summary = summarize(&gold.iter().map(|g| g.normalized_nllh).collect::<Vec<_>>());
    let curve = curve_points(&cfg.curve_models, &cfg.k_grid, &runs);
    let mut rep = report(Question::Q3, cfg, data, dropped);
    rep.q3 = Some(Q3Result {
        family: cfg.family,
        k_grid: cfg.k_grid.clone(),
        repetitions: cfg.repetitions,
        gold,
        gold_summary,
        runs,
        curve,
    });
    rep.wall_seconds = (!cfg.deterministic).then(|| start.elapsed().as_secs_f64());
    Ok(rep)
}

impl ExperimentReport {
    /// Recompute every aggregate from the stored per-instance values and
    /// compare bit for bit. Returns the first mismatch.
    pub fn verify(&self) -> std::result::Result<(), String> {
        let same = |what: String, stored: f64, again: f64| {
            if stored.to_bits() == again.to_bits() {
                Ok(())
            } else {
                Err(format!("{what}: stored {stored:?}, recomputed {again:?}"))
            }
        };
        if let Some(q1) = &self.q1 {
            for row in &q1.ranking {
                if row.fits.is_empty() {
                    continue;
                }
                let nllh: Vec<f64> = row.fits.iter().map(|f| f.normalized_nllh).collect();
                same(
                    format!("{} normalized_nllh", row.family),
                    row.normalized_nllh,
                    mean(&nllh),
                )?;
                let ps: Vec<f64> = row.fits.iter().map(|f| f.ks.p_value).collect();
                let rate = distnet_core::metrics::rejection_rate(&ps, q1.alpha).map_err(|e| e.to_string())?;
                same(format!("{} rejection_rate", row.family), row.rejection_rate, rate)?;
            }
            let mut sorted = q1.ranking.clone();
            distnet_core::metrics::sort_ranking(&mut sorted);
            if sorted != q1.ranking {
                return Err("ranking is not sorted".to_string());
            }
        }
        if let Some(q2) = &self.q2 {
            for fold in &q2.folds {
                for run in &fold.runs {
                    for (split, e) in [("train", &run.train), ("test", &run.test)] {
                        if let Some(e) = e {
                            let what = format!("fold {} {} {split}", fold.fold, run.model.name());
                            same(what, e.normalized_nllh, e.recomputed())?;
                        }
                    }
                }
            }
            let models: Vec<ModelKind> = q2.summary.iter().map(|s| s.model).collect();
            if summarize_models(&models, &q2.folds) != q2.summary {
                return Err("Q2 summary does not match the fold results".to_string());
            }
        }
        if let Some(q3) = &self.q3 {
            for run in &q3.runs {
                if let Some(e) = &run.test {
                    let what = format!(
                        "k {} rep {} fold {} {}",
                        run.k,
                        run.repetition,
                        run.fold,
                        run.model.name()
                    );
                    same(what, e.normalized_nllh, e.recomputed())?;
                }
            }
            for (f, g) in q3.gold.iter().enumerate() {
                same(format!("gold fold {f}"), g.normalized_nllh, g.recomputed())?;
            }
            let gold = summarize(&q3.gold.iter().map(|g| g.normalized_nllh).collect::<Vec<_>>());
            if gold != q3.gold_summary {
                return Err("gold summary does not match the per-fold values".to_string());
            }
            let models: Vec<ModelKind> = {
                let mut m: Vec<ModelKind> = Vec::new();
                for p in &q3.curve {
                    if !m.contains(&p.model) {
                        m.push(p.model);
                    }
                }
                m
            };
            if curve_points(&models, &q3.k_grid, &q3.runs) != q3.curve {
                return Err("Q3 curve does not match the stored runs".to_string());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use distnet_core::synth::{generate_synthetic, ParamLink};

    fn small_spec(family: RtdFamily, n: usize, k: usize, seed: u64) -> SynthSpec {
        let mut spec = SynthSpec::default_log(seed);
        spec.n_instances = n;
        spec.k_observations = k;
        spec.n_features = 4;
        if family != RtdFamily::LogNormal {
            spec.family = family;
            spec.links = match family {
                RtdFamily::Exponential => vec![spec.links[0]],
                _ => vec![spec.links[0], ParamLink::constant(1.0)],
            };
        }
        spec
    }

    fn quick_cfg() -> ExperimentConfig {
        ExperimentConfig {
            folds: 3,
            k_grid: vec![4, 10],
            repetitions: 2,
            training: TrainingSettings {
                max_epochs: 3,
                lr_start: 1e-2,
                lr_end: 1e-3,
                ..TrainingSettings::default()
            },
            forest: ForestSettings {
                n_trees: 5,
                ..ForestSettings::default()
            },
            deterministic: true,
            jobs: 1,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn summary_matches_textbook_values() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[7.0]).std, 0.0);
    }

    #[test]
    fn q1_on_exponential_data_ranks_exp_above_normal() {
        let data = generate_synthetic(&small_spec(RtdFamily::Exponential, 150, 60, 4))
            .unwrap()
            .dataset;
        let rep = run_q1(&data, &quick_cfg(), Vec::new()).unwrap();
        let order: Vec<RtdFamily> = rep.q1.as_ref().unwrap().ranking.iter().map(|r| r.family).collect();
        let pos = |f| order.iter().position(|&g| g == f).unwrap();
        assert!(pos(RtdFamily::Exponential) < pos(RtdFamily::Normal), "{order:?}");
        rep.verify().unwrap();
    }

    #[test]
    fn q1_with_one_family_is_trivially_ranked() {
        let data = generate_synthetic(&small_spec(RtdFamily::LogNormal, 20, 10, 1))
            .unwrap()
            .dataset;
        let cfg = ExperimentConfig {
            families: vec![RtdFamily::InverseNormal],
            ..quick_cfg()
        };
        let rep = run_q1(&data, &cfg, Vec::new()).unwrap();
        assert_eq!(rep.q1.unwrap().ranking.len(), 1);
    }

    #[test]
    fn q2_gold_standard_is_the_same_on_train_and_test_rows() {
        let data = generate_synthetic(&small_spec(RtdFamily::LogNormal, 30, 12, 2))
            .unwrap()
            .dataset;
        let rep = run_q2(&data, &quick_cfg(), Vec::new()).unwrap();
        rep.verify().unwrap();
        let q2 = rep.q2.unwrap();
        let mut seen: BTreeMap<InstanceId, (Option<f64>, Option<f64>)> = BTreeMap::new();
        for fold in &q2.folds {
            let fitted = fold.runs.iter().find(|r| r.model == ModelKind::Fitted).unwrap();
            for s in &fitted.train.as_ref().unwrap().instances {
                seen.entry(s.instance.clone()).or_default().0 = Some(s.normalized_nllh);
            }
            for s in &fitted.test.as_ref().unwrap().instances {
                seen.entry(s.instance.clone()).or_default().1 = Some(s.normalized_nllh);
            }
        }
        assert_eq!(seen.len(), 30);
        for (id, (tr, te)) in seen {
            assert_eq!(tr.unwrap().to_bits(), te.unwrap().to_bits(), "{id}");
        }
        assert_eq!(q2.summary.len(), 4);
        assert!(q2.summary.iter().all(|s| s.failed_folds.is_empty()));
    }

    #[test]
    fn q2_test_sets_partition_the_instances() {
        let data = generate_synthetic(&small_spec(RtdFamily::LogNormal, 25, 5, 3))
            .unwrap()
            .dataset;
        let cfg = ExperimentConfig {
            models: vec![ModelKind::Fitted],
            ..quick_cfg()
        };
        let rep = run_q2(&data, &cfg, Vec::new()).unwrap();
        let mut all: Vec<InstanceId> = rep
            .q2
            .unwrap()
            .folds
            .iter()
            .flat_map(|f| f.test_instances.clone())
            .collect();
        all.sort();
        assert_eq!(all, data.ids().cloned().collect::<Vec<_>>());
    }

    #[test]
    fn a_failing_model_does_not_sink_the_others() {
        // One runtime per instance: LOG cannot be fitted, so the forests have
        // no targets and the gold standard has nothing to score, while
        // DistNet trains on single observations just fine.
        let data = generate_synthetic(&small_spec(RtdFamily::LogNormal, 20, 1, 5))
            .unwrap()
            .dataset;
        let rep = run_q2(&data, &quick_cfg(), Vec::new()).unwrap();
        let q2 = rep.q2.as_ref().unwrap();
        for s in &q2.summary {
            match s.model {
                ModelKind::DistNet => assert!(s.failed_folds.is_empty() && s.test.is_some()),
                _ => assert_eq!(s.failed_folds.len(), 3, "{:?}", s.model),
            }
        }
        let err = q2.folds[0]
            .runs
            .iter()
            .find(|r| r.model == ModelKind::Mrf)
            .unwrap()
            .error
            .clone()
            .unwrap();
        assert!(err.contains("rows"), "{err}");
        rep.verify().unwrap();
    }

    #[test]
    fn leakage_guard_rejects_shared_instances() {
        let data = generate_synthetic(&small_spec(RtdFamily::LogNormal, 6, 4, 0))
            .unwrap()
            .dataset;
        let both = data.select(&[0, 1, 2]);
        let test = data.select(&[2, 3]);
        match check_disjoint(1, &both, &test) {
            Err(ExperimentError::Leakage { fold: 1, count: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(check_disjoint(0, &data.select(&[0, 1]), &test).is_ok());
    }

    #[test]
    fn subsampling_draws_without_replacement_in_order() {
        let data = generate_synthetic(&small_spec(RtdFamily::LogNormal, 5, 20, 0))
            .unwrap()
            .dataset;
        let sub = subsample(&data, 7, 99).unwrap();
        for (a, b) in data.instances().iter().zip(sub.instances()) {
            assert_eq!(b.runtimes.len(), 7);
            // Kept values appear in the original order (a subsequence).
            let mut it = a.runtimes.times().iter();
            assert!(b.runtimes.times().iter().all(|t| it.any(|u| u == t)));
        }
        assert_eq!(subsample(&data, 7, 99).unwrap(), sub);
        assert_ne!(subsample(&data, 7, 100).unwrap(), sub);
        assert_eq!(subsample(&data, 20, 5).unwrap(), data);
        assert!(matches!(
            subsample(&data, 21, 5),
            Err(ExperimentError::NotEnoughObservations {
                k: 21,
                available: 20,
                ..
            })
        ));
    }

    #[test]
    fn q3_at_full_k_reproduces_q2() {
        let data = generate_synthetic(&small_spec(RtdFamily::LogNormal, 30, 10, 6))
            .unwrap()
            .dataset;
        let cfg = quick_cfg();
        let q2 = run_q2(&data, &cfg, Vec::new()).unwrap();
        let fresh = run_q3(&data, &cfg, Vec::new(), None).unwrap();
        let reused = run_q3(&data, &cfg, Vec::new(), Some(&q2)).unwrap();
        assert!(fresh == reused, "reusing Q2 runs changed the Q3 report");
        fresh.verify().unwrap();
        let q3 = fresh.q3.unwrap();
        let q2 = q2.q2.unwrap();
        for model in [ModelKind::DistNet, ModelKind::Mrf] {
            for fold in 0..3 {
                let want = q2.run(fold, model).unwrap().test.as_ref().unwrap();
                for rep in 0..2 {
                    let got = q3
                        .runs
                        .iter()
                        .find(|r| r.k == 10 && r.fold == fold && r.repetition == rep && r.model == model)
                        .unwrap();
                    assert_eq!(got.test.as_ref().unwrap(), want);
                }
            }
            let p = q3.point(model, 10).unwrap().test.unwrap();
            assert_eq!(p.n, 6);
        }
        // Smaller k: repetitions draw different subsamples.
        let small: Vec<f64> = q3
            .runs
            .iter()
            .filter(|r| r.k == 4 && r.fold == 0 && r.model == ModelKind::Mrf)
            .map(|r| r.test.as_ref().unwrap().normalized_nllh)
            .collect();
        assert_eq!(small.len(), 2);
        assert_ne!(small[0], small[1]);
    }

    #[test]
    fn q3_rejects_k_beyond_the_data() {
        let data = generate_synthetic(&small_spec(RtdFamily::LogNormal, 12, 5, 0))
            .unwrap()
            .dataset;
        let cfg = ExperimentConfig {
            k_grid: vec![2, 6],
            ..quick_cfg()
        };
        assert!(matches!(
            run_q3(&data, &cfg, Vec::new(), None),
            Err(ExperimentError::NotEnoughObservations { k: 6, available: 5, .. })
        ));
    }

    #[test]
    fn reports_do_not_depend_on_thread_count() {
        let data = generate_synthetic(&small_spec(RtdFamily::LogNormal, 24, 8, 7))
            .unwrap()
            .dataset;
        let one = run_q2(&data, &quick_cfg(), Vec::new()).unwrap();
        let four = run_q2(&data, &ExperimentConfig { jobs: 4, ..quick_cfg() }, Vec::new()).unwrap();
        assert!(one.q2 == four.q2);
    }

    #[test]
    fn verify_catches_an_edited_aggregate() {
        let data = generate_synthetic(&small_spec(RtdFamily::LogNormal, 20, 6, 8))
            .unwrap()
            .dataset;
        let mut rep = run_q2(
            &data,
            &ExperimentConfig {
                models: vec![ModelKind::Fitted],
                ..quick_cfg()
            },
            Vec::new(),
        )
        .unwrap();
        rep.verify().unwrap();
        let e = rep.q2.as_mut().unwrap().folds[1].runs[0].test.as_mut().unwrap();
        e.normalized_nllh += 1e-12;
        assert!(rep.verify().unwrap_err().contains("fold 1 fitted test"));
    }

    #[test]
    fn config_defaults_fill_missing_fields() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seed": 5, "training": {"max_epochs": 7}}"#).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.training.max_epochs, 7);
        assert_eq!(cfg.training.batch_size, 16);
        assert_eq!(cfg.k_grid, [2, 4, 8, 16, 32, 64, 100]);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sede": 5}"#).is_err());
        let bad = ExperimentConfig {
            curve_models: vec![ModelKind::Fitted],
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
