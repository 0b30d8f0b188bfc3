//! On-disk envelope for trained models: the model itself plus the settings
//! of the run that produced it and the training feature names.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use distnet_core::{DistNetModel, FeatureVector, ForestModel, RtdFamily, RtdParams};

pub const MODEL_FORMAT: &str = "distnet-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SavedModel {
    Distnet(DistNetModel),
    Forest(ForestModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub run: serde_json::Value,
    pub feature_names: Vec<String>,
    pub model: SavedModel,
}

impl ModelFile {
    pub fn new(run: serde_json::Value, feature_names: Vec<String>, model: SavedModel) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            run,
            feature_names,
            model,
        }
    }

    pub fn family(&self) -> RtdFamily {
        match &self.model {
            SavedModel::Distnet(m) => m.family,
            SavedModel::Forest(m) => m.family,
        }
    }

    /// Raw feature columns the model expects.
    pub fn n_features(&self) -> usize {
        match &self.model {
            SavedModel::Distnet(m) => m.pipeline.n_input(),
            SavedModel::Forest(m) => m.pipeline.n_input(),
        }
    }

    /// Parameters in seconds.
    pub fn predict(&self, raw: &FeatureVector) -> distnet_core::Result<RtdParams> {
        match &self.model {
            SavedModel::Distnet(m) => m.predict(raw),
            SavedModel::Forest(m) => m.predict(raw),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("models serialize");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
        let file: ModelFile =
            serde_json::from_str(&text).with_context(|| format!("{}: not a model file", path.display()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            bail!(
                "{}: unsupported model format `{}` version {}",
                path.display(),
                file.format,
                file.version
            );
        }
        Ok(file)
    }
}
