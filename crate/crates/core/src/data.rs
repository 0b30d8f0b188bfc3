//! Instances, their features and runtime observations, and instance-level
//! cross-validation folds.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct InstanceId(String);

impl InstanceId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::EmptyInstanceId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for InstanceId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<InstanceId> for String {
    fn from(id: InstanceId) -> Self {
        id.0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Raw instance features; `None` marks a value the feature extractor could
/// not compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<Option<f64>>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values.into_iter().map(Some).collect())
    }
}

/// Observed runtimes (seconds) of one instance across solver seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RuntimeObservations(Vec<f64>);

impl RuntimeObservations {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::NoObservations);
        }
        if let Some(&value) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidRuntime { value });
        }
        Ok(Self(times))
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::MIN_POSITIVE, f64::max)
    }
}

impl TryFrom<Vec<f64>> for RuntimeObservations {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<RuntimeObservations> for Vec<f64> {
    fn from(obs: RuntimeObservations) -> Self {
        obs.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub features: FeatureVector,
    pub runtimes: RuntimeObservations,
}

/// Joined table of instances, kept sorted by instance id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    feature_names: Vec<String>,
    instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, mut instances: Vec<Instance>) -> Result<Self> {
        let m = feature_names.len();
        instances.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in instances.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateInstance(pair[0].id.0.clone()));
            }
        }
        for inst in &instances {
            if inst.features.len() != m {
                return Err(Error::RaggedFeatures {
                    id: inst.id.0.clone(),
                    expected: m,
                    got: inst.features.len(),
                });
            }
        }
        Ok(Self {
            feature_names,
            instances,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_observations(&self) -> usize {
        self.instances.iter().map(|i| i.runtimes.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = &InstanceId> {
        self.instances.iter().map(|i| &i.id)
    }

    /// Sub-dataset holding the instances at `indices` (any order; result is
    /// re-sorted by id).
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut instances: Vec<Instance> = indices.iter().map(|&i| self.instances[i].clone()).collect();
        instances.sort_by(|a, b| a.id.cmp(&b.id));
        Dataset {
            feature_names: self.feature_names.clone(),
            instances,
        }
    }

    /// Same instances with their observation lists replaced by `f`.
    pub fn map_runtimes<F>(&self, mut f: F) -> Result<Dataset>
    where
        F: FnMut(usize, &Instance) -> Result<RuntimeObservations>,
    {
        let instances = self
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                Ok(Instance {
                    id: inst.id.clone(),
                    features: inst.features.clone(),
                    runtimes: f(i, inst)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            feature_names: self.feature_names.clone(),
            instances,
        })
    }
}

/// Instances that appeared in only one of the two input tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JoinReport {
    pub missing_runtimes: Vec<InstanceId>,
    pub missing_features: Vec<InstanceId>,
}

impl JoinReport {
    pub fn dropped(&self) -> usize {
        self.missing_runtimes.len() + self.missing_features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dropped() == 0
    }
}

/// Inner join of feature rows and runtime groups on instance id.
pub fn join_dataset(
    feature_names: Vec<String>,
    features: BTreeMap<InstanceId, FeatureVector>,
    mut runtimes: BTreeMap<InstanceId, RuntimeObservations>,
) -> Result<(Dataset, JoinReport)> {
    let mut report = JoinReport::default();
    let mut instances = Vec::new();
    for (id, fv) in features {
        match runtimes.remove(&id) {
            Some(obs) => instances.push(Instance {
                id,
                features: fv,
                runtimes: obs,
            }),
            None => report.missing_runtimes.push(id),
        }
    }
    report.missing_features = runtimes.into_keys().collect();
    if instances.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok((Dataset::new(feature_names, instances)?, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    n_folds: usize,
    fold_of: BTreeMap<InstanceId, usize>,
}

impl FoldAssignment {
    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn fold_of(&self, id: &InstanceId) -> Option<usize> {
        self.fold_of.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0; self.n_folds];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Indices into `dataset` of (training, test) instances for `fold`.
    pub fn indices(&self, dataset: &Dataset, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, inst) in dataset.instances().iter().enumerate() {
            if self.fold_of.get(&inst.id) == Some(&fold) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    /// (training, test) datasets for `fold`.
    pub fn split(&self, dataset: &Dataset, fold: usize) -> (Dataset, Dataset) {
        let (train, test) = self.indices(dataset, fold);
        (dataset.select(&train), dataset.select(&test))
    }
}

/// Shuffle instance ids with `seed`, then deal them round-robin into
/// `n_folds` folds.
pub fn split_folds(dataset: &Dataset, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 || n_folds > dataset.len() {
        return Err(Error::FoldCount {
            folds: n_folds,
            instances: dataset.len(),
        });
    }
    let mut ids: Vec<&InstanceId> = dataset.ids().collect();
    ids.shuffle(&mut rng::substream(seed, "fold-split", 0));
    let fold_of = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i % n_folds))
        .collect();
    Ok(FoldAssignment { n_folds, fold_of })
}

/// Ids present in both datasets.
pub fn shared_ids(a: &Dataset, b: &Dataset) -> BTreeSet<InstanceId> {
    let left: BTreeSet<&InstanceId> = a.ids().collect();
    b.ids().filter(|id| left.contains(id)).cloned().collect()
}
