//! Single-file checkpoint: parameters keyed by hierarchical name, the run
//! config and the number of completed epochs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::params::{ParamStore, StoredArray};
use crate::scalar::Scalar;
use crate::streams::TwoStreamModel;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
const FORMAT: &str = "debias-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Completed epochs.
    pub epoch: usize,
    pub config: ExperimentConfig,
    pub params: BTreeMap<String, StoredArray>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(config: &ExperimentConfig, epoch: usize, model: &TwoStreamModel<T>) -> Self {
        Self {
            format: FORMAT.to_string(),
            epoch,
            config: config.clone(),
            params: model.params.to_serializable(),
        }
    }

    /// Rebuilds the model, checking every parameter name and shape against
    /// a freshly initialised model of the stored config.
    pub fn model<T: Scalar>(&self) -> Result<TwoStreamModel<T>> {
        let mut model = TwoStreamModel::<T>::new(self.config.model_config(), self.config.seed)?;
        let params = ParamStore::<T>::from_serializable(&self.params);
        if params.shapes() != model.params.shapes() {
            return Err(Error::Malformed {
                what: "checkpoint",
                detail: "parameter names or shapes do not match the stored config".into(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes = serde_json::to_vec(self)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_slice(&bytes).map_err(|e| Error::Malformed {
            what: "checkpoint",
            detail: e.to_string(),
        })?;
        if ck.format != FORMAT {
            return Err(Error::Malformed {
                what: "checkpoint",
                detail: format!("unsupported format `{}`", ck.format),
            });
        }
        Ok(ck)
    }
}
