//! Parametric runtime distributions (RTDs) for randomized solvers, and
//! models that predict RTD parameters from instance features.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the experiment
//! harness and the command line live in the `distnet` crate.
//!
//! - [`data`]: instances, feature vectors, runtime observations, folds.
//! - [`distributions`]: the N / LOG / EXP / INV families.
//! - [`metrics`]: likelihood measures and Kolmogorov-Smirnov testing.
//! - [`preprocessing`]: feature pipeline and runtime scaler.
//! - [`distnet`]: the network trained end-to-end on runtime likelihood.
//! - [`forest`]: random-forest baselines on fitted parameters.
//! - [`synth`]: synthetic datasets with known ground-truth RTDs.
#![no_std]

extern crate alloc;

pub mod data;
pub mod distnet;
pub mod distributions;
mod error;
pub mod forest;
pub mod metrics;
#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
pub mod preprocessing;
pub mod rng;
mod special;
pub mod synth;

pub use data::{Dataset, FeatureVector, FoldAssignment, Instance, InstanceId, JoinReport, RuntimeObservations};
pub use distnet::{DistNetModel, NetworkConfig, TrainConfig};
pub use distributions::{RtdFamily, RtdParams};
pub use error::{Error, Result};
pub use forest::{ForestModel, ForestParams, ForestVariant};
pub use preprocessing::{FeaturePipeline, RuntimeScaler};
pub use synth::{SynthSpec, SyntheticData};
