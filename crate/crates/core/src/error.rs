use alloc::string::String;

use crate::distributions::RtdFamily;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid {family} parameters: {reason}")]
    InvalidParams { family: RtdFamily, reason: String },
    #[error("{family} fit needs at least {needed} observations, got {got}")]
    TooFewObservations {
        family: RtdFamily,
        needed: usize,
        got: usize,
    },
    #[error("runtime observation {value} is not a positive finite number")]
    InvalidRuntime { value: f64 },
    #[error("an instance needs at least one runtime observation")]
    NoObservations,
    #[error("instance id must be non-empty")]
    EmptyInstanceId,
    #[error("duplicate instance id `{0}`")]
    DuplicateInstance(String),
    #[error("instance `{id}` has {got} features, expected {expected}")]
    RaggedFeatures { id: String, expected: usize, got: usize },
    #[error("feature and runtime tables share no instance")]
    EmptyIntersection,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("cannot split {instances} instances into {folds} folds")]
    FoldCount { folds: usize, instances: usize },
    #[error("feature vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("all feature columns are (close to) constant")]
    NoUsableFeatures,
    #[error("need at least {needed} rows, got {got}")]
    NotEnoughRows { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),
    #[error("{0} values to aggregate")]
    Empty(&'static str),
}
