//! Experiment configuration: a TOML file plus `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hsic::KernelSpec;
use crate::losses::LossWeights;
use crate::params::AdamWConfig;
use crate::scene::ScenePretrainConfig;
use crate::streams::{BiasedStreamKind, EncoderConfig, ModelConfig};
use crate::synth::{BiasSpec, ClipShape, RenderSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub clip: ClipShape,
    pub bias: BiasSpec,
    pub render: RenderSpec,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    /// Directory of a persisted dataset; generated in memory when unset.
    pub dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            clip: ClipShape::default(),
            bias: BiasSpec::default(),
            render: RenderSpec::default(),
            n_train: 2000,
            n_val: 500,
            seed: 0,
            dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub unbiased: EncoderConfig,
    pub extractor: EncoderConfig,
    pub biased_stream_kind: BiasedStreamKind,
    pub scene_prediction: bool,
    pub grl_strength: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            unbiased: EncoderConfig::spatiotemporal(),
            extractor: EncoderConfig::per_frame(),
            biased_stream_kind: BiasedStreamKind::ExtractorBased,
            scene_prediction: true,
            grl_strength: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub output_dir: PathBuf,
    /// Checkpoint of the frozen scene classifier.
    pub scene_classifier: PathBuf,
    pub data: DataConfig,
    pub model: ModelSection,
    pub loss: LossWeights,
    pub optimizer: AdamWConfig,
    pub kernel: KernelSpec,
    pub scene_pretrain: ScenePretrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            batch_size: 16,
            eval_every: 10,
            output_dir: PathBuf::from("runs/default"),
            scene_classifier: PathBuf::from("runs/scene_classifier.json"),
            data: DataConfig::default(),
            model: ModelSection::default(),
            loss: LossWeights::default(),
            optimizer: AdamWConfig::default(),
            kernel: KernelSpec::median(),
            scene_pretrain: ScenePretrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            clip: self.data.clip,
            num_actions: self.data.bias.num_actions,
            num_scenes: self.data.bias.num_scenes,
            unbiased: self.model.unbiased,
            extractor: self.model.extractor,
            biased_kind: self.model.biased_stream_kind,
            scene_prediction: self.model.scene_prediction,
            grl_strength: self.model.grl_strength,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for HSIC".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.data.n_train < self.batch_size || self.data.n_val < 2 {
            return Err(Error::Config(
                "need at least one full training batch and two validation clips".into(),
            ));
        }
        self.data.clip.validate()?;
        self.data.bias.validate()?;
        self.loss.validate()?;
        self.kernel.validate()?;
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.model_config().validate()
    }

    /// Hex SHA-256 prefix (40 characters) of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect::<String>()[..40].to_string()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Malformed {
            what: "config",
            detail: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    /// Reads `path` and applies `overrides` (each `dotted.key=value`).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Malformed {
            what: "config",
            detail: e.to_string(),
        })?;
        // Start from the defaults so overrides may target keys the file omits.
        let mut merged = toml::Value::try_from(Self::default()).expect("defaults serialise");
        merge(&mut merged, &mut value);
        for o in overrides {
            apply_override(&mut merged, o)?;
        }
        merged.try_into().map_err(|e: toml::de::Error| Error::Malformed {
            what: "config",
            detail: e.to_string(),
        })
    }
}

fn merge(base: &mut toml::Value, over: &mut toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o.iter_mut() {
                match b.get_mut(k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Applies one `dotted.key=value` override. The value is parsed as a TOML
/// literal and falls back to a plain string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Malformed {
        what: "override",
        detail: format!("`{spec}` is not of the form key=value"),
    })?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Malformed {
            what: "override",
            detail: format!("`{spec}` has an empty key"),
        });
    }
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| Error::Malformed {
            what: "override",
            detail: format!("`{}` is not a table", parts[..i].join(".")),
        })?;
        if i + 1 == parts.len() {
            if !table.contains_key(*part) && !is_optional_key(key) {
                return Err(Error::Malformed {
                    what: "override",
                    detail: format!("unknown config key `{key}`"),
                });
            }
            table.insert((*part).to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry((*part).to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("split always yields at least one part")
}

/// Keys whose default is `None` and so never appear in serialised defaults.
fn is_optional_key(key: &str) -> bool {
    matches!(key, "data.dir")
}
