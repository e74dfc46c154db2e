//! Configuration, training, evaluation, checkpoints, run logs and reports.

mod checkpoint;
mod config;
mod eval;
mod report;
mod runlog;
mod train;

use std::path::Path;

pub use checkpoint::{Checkpoint, CHECKPOINT_FILE};
pub use config::{apply_override, DataConfig, ExperimentConfig, ModelSection};
pub use eval::{evaluate, Evaluation};
pub use report::{
    loss_svg, metric_bars_svg, metrics_csv, write_report, LOSS_PLOT, METRIC_PLOT, TABLE_CSV,
    TABLE_TXT,
};
pub use runlog::{LogRecord, RunLog, Timing, RUNLOG_FILE, TIMING_FILE};
pub use train::{eval_seed, objective, train, Objective, TrainOutcome};

use crate::dataset::{load_dataset, Dataset, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::{pretrain_scene_classifier, FrozenSceneClassifier};
use crate::synth::generate_dataset_with;

/// Environment variable capping the worker pool used for data generation
/// and evaluation.
pub const WORKERS_ENV: &str = "DEBIAS_WORKERS";

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn worker_cap() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{s}`"
            ))),
        },
    }
}

/// Runs `f` on a rayon pool honouring [`WORKERS_ENV`].
pub fn with_workers<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    match worker_cap()? {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Renders the training and validation splits described by `cfg`. Training
/// clips take ids `0..n_train`, validation clips follow.
pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.data;
    let train = generate_dataset_with(d.n_train, d.clip, &d.bias, &d.render, d.seed, 0)?;
    let val = generate_dataset_with(d.n_val, d.clip, &d.bias, &d.render, d.seed, d.n_train)?;
    Ok(Dataset { train, val })
}

/// Loads the dataset from `data.dir` when it holds a manifest, otherwise
/// generates it in memory.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data.dir {
        Some(dir) if dir.join(MANIFEST_FILE).exists() => {
            let data = load_dataset(dir)?;
            if data.train.len() != cfg.data.n_train || data.val.len() != cfg.data.n_val {
                return Err(Error::Config(format!(
                    "dataset at {} has {}/{} clips but the config asks for {}/{}",
                    dir.display(),
                    data.train.len(),
                    data.val.len(),
                    cfg.data.n_train,
                    cfg.data.n_val
                )));
            }
            Ok(data)
        }
        _ => generate(cfg),
    }
}

/// Pretrains the scene classifier described by `cfg`.
pub fn pretrain_scene<T: Scalar>(cfg: &ExperimentConfig) -> Result<FrozenSceneClassifier<T>> {
    pretrain_scene_classifier(
        &cfg.data.clip,
        cfg.data.bias.num_scenes,
        &cfg.data.render,
        &cfg.scene_pretrain,
    )
}

/// Loads the scene classifier when scene prediction is on. A missing file
/// is an error naming the path.
pub fn load_scene_classifier<T: Scalar>(
    cfg: &ExperimentConfig,
) -> Result<Option<FrozenSceneClassifier<T>>> {
    if !cfg.model.scene_prediction {
        return Ok(None);
    }
    let path: &Path = &cfg.scene_classifier;
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    FrozenSceneClassifier::load(path).map(Some)
}
