//! Feature preprocessing (constant-column removal, median imputation,
//! z-scoring) and runtime scaling. Both are fitted on training data only and
//! travel with every trained model.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector};
use crate::distributions::RtdParams;
use crate::error::{Error, Result};

pub const DEFAULT_CONSTANT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    n_input: usize,
    kept_columns: Vec<usize>,
    medians: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

fn population_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl FeaturePipeline {
    /// Fit on `train`. Columns whose non-missing values have a (population)
    /// standard deviation `<= constant_tol` are dropped, as are columns with
    /// no known value at all.
    pub fn fit(train: &Dataset, constant_tol: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let m = train.n_features();
        let mut pipeline = FeaturePipeline {
            n_input: m,
            kept_columns: Vec::new(),
            medians: Vec::new(),
            means: Vec::new(),
            stds: Vec::new(),
        };
        for col in 0..m {
            let mut known: Vec<f64> = train
                .instances()
                .iter()
                .filter_map(|inst| inst.features.values()[col])
                .filter(|v| v.is_finite())
                .collect();
            if known.is_empty() || population_mean_std(&known).1 <= constant_tol {
                continue;
            }
            let med = median(&mut known);
            let imputed: Vec<f64> = train
                .instances()
                .iter()
                .map(|inst| impute(inst.features.values()[col], med))
                .collect();
            let (mean, std) = population_mean_std(&imputed);
            if std <= 0.0 {
                continue;
            }
            pipeline.kept_columns.push(col);
            pipeline.medians.push(med);
            pipeline.means.push(mean);
            pipeline.stds.push(std);
        }
        if pipeline.kept_columns.is_empty() {
            return Err(Error::NoUsableFeatures);
        }
        Ok(pipeline)
    }

    pub fn n_input(&self) -> usize {
        self.n_input
    }

    pub fn n_output(&self) -> usize {
        self.kept_columns.len()
    }

    pub fn kept_columns(&self) -> &[usize] {
        &self.kept_columns
    }

    pub fn medians(&self) -> &[f64] {
        &self.medians
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    /// Drop removed columns, impute stored medians, z-score. Never refits.
    pub fn transform(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        if fv.len() != self.n_input {
            return Err(Error::LengthMismatch {
                expected: self.n_input,
                got: fv.len(),
            });
        }
        Ok(self
            .kept_columns
            .iter()
            .enumerate()
            .map(|(j, &col)| (impute(fv.values()[col], self.medians[j]) - self.means[j]) / self.stds[j])
            .collect())
    }

    /// Transformed rows of every instance, in dataset order.
    pub fn transform_dataset(&self, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
        dataset
            .instances()
            .iter()
            .map(|inst| self.transform(&inst.features))
            .collect()
    }
}

fn impute(value: Option<f64>, median: f64) -> f64 {
    match value {
        Some(v) if v.is_finite() => v,
        _ => median,
    }
}

/// Divides runtimes by the largest training runtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeScaler {
    max_runtime: f64,
}

impl RuntimeScaler {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let max_runtime = train
            .instances()
            .iter()
            .map(|i| i.runtimes.max())
            .fold(f64::MIN_POSITIVE, f64::max);
        Ok(Self { max_runtime })
    }

    pub fn with_max(max_runtime: f64) -> Result<Self> {
        if !(max_runtime > 0.0 && max_runtime.is_finite()) {
            return Err(Error::InvalidRuntime { value: max_runtime });
        }
        Ok(Self { max_runtime })
    }

    pub fn max_runtime(&self) -> f64 {
        self.max_runtime
    }

    /// Test runtimes may exceed the training maximum and map above 1.
    pub fn scale(&self, t: f64) -> f64 {
        t / self.max_runtime
    }

    /// Parameters predicted in scaled time, converted back to seconds.
    pub fn unscale_params(&self, params: &RtdParams) -> Result<RtdParams> {
        params.rescale(self.max_runtime)
    }
}
