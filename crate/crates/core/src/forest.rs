//! Random-forest baselines. Each training instance gets its RTD parameters
//! fitted by maximum likelihood (in scaled time); forests then regress those
//! parameters on the preprocessed features, either one forest per parameter
//! (iRF) or one multi-output forest (mRF).

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector, InstanceId};
use crate::distributions::{mle_fit, RtdFamily, RtdParams};
use crate::error::{Error, Result};
use crate::metrics::FitFailure;
use crate::preprocessing::{FeaturePipeline, RuntimeScaler};
use crate::rng::{self, StreamRng};

/// Smallest parameter value a forest may predict.
pub const PARAM_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestVariant {
    /// One single-output forest per distribution parameter.
    #[serde(rename = "iRF")]
    Independent,
    /// One forest whose leaves hold all parameters jointly.
    #[serde(rename = "mRF")]
    MultiOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(m / 3)`.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub instance: InstanceId,
    pub features: Vec<f64>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTargets {
    pub family: RtdFamily,
    pub pipeline: FeaturePipeline,
    pub scaler: RuntimeScaler,
    pub rows: Vec<TargetRow>,
    /// Instances whose parameters could not be fitted.
    pub excluded: Vec<FitFailure>,
}

/// Preprocess features and fit `family` to each instance's scaled runtimes.
pub fn build_training_targets(train: &Dataset, family: RtdFamily, constant_tol: f64) -> Result<TrainingTargets> {
    let pipeline = FeaturePipeline::fit(train, constant_tol)?;
    let scaler = RuntimeScaler::fit(train)?;
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for inst in train.instances() {
        let scaled: Vec<f64> = inst.runtimes.times().iter().map(|&t| scaler.scale(t)).collect();
        match mle_fit(family, &scaled) {
            Ok(p) => rows.push(TargetRow {
                instance: inst.id.clone(),
                features: pipeline.transform(&inst.features)?,
                params: p.theta().to_vec(),
            }),
            Err(e) => excluded.push(FitFailure {
                instance: inst.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(TrainingTargets {
        family,
        pipeline,
        scaler,
        rows,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: Vec<f64>,
    },
}

/// CART regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, Copy)]
struct TreeSettings {
    max_features: usize,
    min_samples_leaf: usize,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Grow a tree on the sample `rows` (indices into `x`/`y`, repeats
    /// allowed).
    fn grow(x: &[Vec<f64>], y: &[Vec<f64>], rows: Vec<usize>, settings: TreeSettings, rng: &mut StreamRng) -> Self {
        let n_out = y[0].len();
        let mut nodes = vec![TreeNode::Leaf { value: Vec::new() }];
        let mut stack = vec![(0usize, rows)];
        while let Some((idx, rows)) = stack.pop() {
            match best_split(x, y, &rows, settings, rng) {
                Some(choice) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| x[i][choice.feature] <= choice.threshold);
                    let left = nodes.len();
                    nodes.push(TreeNode::Leaf { value: Vec::new() });
                    nodes.push(TreeNode::Leaf { value: Vec::new() });
                    nodes[idx] = TreeNode::Split {
                        feature: choice.feature,
                        threshold: choice.threshold,
                        left,
                        right: left + 1,
                    };
                    stack.push((left + 1, r));
                    stack.push((left, l));
                }
                None => {
                    let mut value = vec![0.0; n_out];
                    for &i in &rows {
                        for (v, t) in value.iter_mut().zip(&y[i]) {
                            *v += t;
                        }
                    }
                    value.iter_mut().for_each(|v| *v /= rows.len() as f64);
                    nodes[idx] = TreeNode::Leaf { value };
                }
            }
        }
        Self { nodes }
    }
}

/// Split maximizing the variance reduction summed over all outputs.
///
/// Candidate features are visited in a random order; the first
/// `max_features` are always searched, further ones only until some valid
/// split exists. Thresholds are midpoints between consecutive distinct
/// values.
fn best_split(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    rows: &[usize],
    settings: TreeSettings,
    rng: &mut StreamRng,
) -> Option<SplitChoice> {
    let n = rows.len();
    let min_leaf = settings.min_samples_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let first = &y[rows[0]];
    if rows.iter().all(|&i| y[i] == *first) {
        return None;
    }
    let n_out = first.len();
    let mut total = vec![0.0; n_out];
    for &i in rows {
        for (s, v) in total.iter_mut().zip(&y[i]) {
            *s += v;
        }
    }
    let parent_score: f64 = total.iter().map(|s| s * s / n as f64).sum();

    let m = x[0].len();
    let mut features: Vec<usize> = (0..m).collect();
    features.shuffle(rng);

    let mut best: Option<(f64, SplitChoice)> = None;
    let mut order = rows.to_vec();
    let mut left = vec![0.0; n_out];
    for (visited, &f) in features.iter().enumerate() {
        if visited >= settings.max_features && best.is_some() {
            break;
        }
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        left.iter_mut().for_each(|v| *v = 0.0);
        for pos in 0..n - 1 {
            let i = order[pos];
            for (s, v) in left.iter_mut().zip(&y[i]) {
                *s += v;
            }
            let n_left = pos + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let (lo, hi) = (x[i][f], x[order[pos + 1]][f]);
            if lo >= hi {
                continue;
            }
            let score: f64 = left
                .iter()
                .zip(&total)
                .map(|(l, t)| {
                    let r = t - l;
                    l * l / n_left as f64 + r * r / n_right as f64
                })
                .sum();
            if score > parent_score && best.as_ref().is_none_or(|(b, _)| score > *b) {
                let mut threshold = 0.5 * (lo + hi);
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some((score, SplitChoice { feature: f, threshold }));
            }
        }
    }
    best.map(|(_, c)| c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub trees: Vec<RegressionTree>,
}

impl Ensemble {
    fn fit(x: &[Vec<f64>], y: &[Vec<f64>], hyper: &ForestParams, settings: TreeSettings, seed: u64) -> Self {
        let n = x.len();
        let trees = (0..hyper.n_trees)
            .map(|t| {
                let mut rng = rng::substream(seed, "tree", t as u64);
                let rows = if hyper.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::grow(x, y, rows, settings, &mut rng)
            })
            .collect();
        Self { trees }
    }

    /// Mean of the trees' leaf vectors.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = self.trees[0].predict(x).to_vec();
        for tree in &self.trees[1..] {
            for (a, v) in acc.iter_mut().zip(tree.predict(x)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.trees.len() as f64);
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub family: RtdFamily,
    pub variant: ForestVariant,
    pub hyperparameters: ForestParams,
    /// Time domain the targets were fitted in.
    pub target_space: String,
    /// iRF: one ensemble per parameter; mRF: a single ensemble.
    pub ensembles: Vec<Ensemble>,
    pub pipeline: FeaturePipeline,
    pub scaler: RuntimeScaler,
    pub excluded: Vec<FitFailure>,
}

pub fn fit_forest(targets: &TrainingTargets, variant: ForestVariant, hyper: &ForestParams) -> Result<ForestModel> {
    if targets.rows.len() < 2 {
        return Err(Error::NotEnoughRows {
            needed: 2,
            got: targets.rows.len(),
        });
    }
    if hyper.n_trees == 0 {
        return Err(Error::InvalidConfig("n_trees must be at least 1".to_string()));
    }
    let x: Vec<Vec<f64>> = targets.rows.iter().map(|r| r.features.clone()).collect();
    let m = x[0].len();
    let settings = TreeSettings {
        max_features: hyper.max_features.unwrap_or(m.div_ceil(3)).clamp(1, m),
        min_samples_leaf: hyper.min_samples_leaf,
    };
    let p = targets.family.n_params();
    let ensembles = match variant {
        ForestVariant::MultiOutput => {
            let y: Vec<Vec<f64>> = targets.rows.iter().map(|r| r.params.clone()).collect();
            vec![Ensemble::fit(&x, &y, hyper, settings, hyper.seed)]
        }
        ForestVariant::Independent => (0..p)
            .map(|j| {
                let y: Vec<Vec<f64>> = targets.rows.iter().map(|r| vec![r.params[j]]).collect();
                let seed = rng::derive_seed(hyper.seed, "output", j as u64);
                Ensemble::fit(&x, &y, hyper, settings, seed)
            })
            .collect(),
    };
    Ok(ForestModel {
        family: targets.family,
        variant,
        hyperparameters: hyper.clone(),
        target_space: "scaled".to_string(),
        ensembles,
        pipeline: targets.pipeline.clone(),
        scaler: targets.scaler,
        excluded: targets.excluded.clone(),
    })
}

/// Build targets on `train` and fit a forest in one go.
pub fn train_forest(
    train: &Dataset,
    family: RtdFamily,
    variant: ForestVariant,
    hyper: &ForestParams,
    constant_tol: f64,
) -> Result<ForestModel> {
    let targets = build_training_targets(train, family, constant_tol)?;
    fit_forest(&targets, variant, hyper)
}

impl ForestModel {
    /// Raw ensemble means for a preprocessed feature vector (scaled time,
    /// before the positivity clamp).
    pub fn predict_preprocessed(&self, x: &[f64]) -> Vec<f64> {
        match self.variant {
            ForestVariant::MultiOutput => self.ensembles[0].predict(x),
            ForestVariant::Independent => self.ensembles.iter().map(|e| e.predict(x)[0]).collect(),
        }
    }

    pub fn predict_scaled(&self, raw: &FeatureVector) -> Result<RtdParams> {
        let x = self.pipeline.transform(raw)?;
        let theta: Vec<f64> = self
            .predict_preprocessed(&x)
            .into_iter()
            .map(|v| v.max(PARAM_FLOOR))
            .collect();
        RtdParams::new(self.family, &theta)
    }

    /// Parameters in seconds.
    pub fn predict(&self, raw: &FeatureVector) -> Result<RtdParams> {
        self.scaler.unscale_params(&self.predict_scaled(raw)?)
    }
}
