use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use debias::dataset::save_dataset;
use debias::experiment::{
    self, eval_seed, evaluate, with_workers, Checkpoint, ExperimentConfig, RunLog, CHECKPOINT_FILE,
};
use debias::metrics::{render_table, write_records, MetricsReport};
use debias::{Error, SceneClassifier32};

const PREDICTIONS_FILE: &str = "predictions.jsonl";
const METRICS_FILE: &str = "metrics.json";

#[derive(Parser)]
#[command(name = "debias", version, about = "Two-stream static-bias mitigation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set loss.t0=15`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig::load(&self.config, &self.overrides).map_err(|e| match e {
            Error::MissingArtifact(p) => anyhow::anyhow!("config file not found: {}", p.display()),
            other => anyhow::Error::new(other),
        })?;
        cfg.validate().context("config failed validation")?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset to `data.dir` (default `<output_dir>/data`).
    GenerateData(ConfigArgs),
    /// Pretrain and freeze the scene classifier at `scene_classifier`.
    PretrainScene(ConfigArgs),
    /// Train a model; writes the run log, checkpoint and final predictions.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the validation split.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint to evaluate (default `<output_dir>/checkpoint.json`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Emit the metrics table and plots from one or more run logs.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Extra run directories to compare, as `label=dir` or `dir`.
        #[arg(long = "run")]
        runs: Vec<String>,
    },
}

fn data_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.data
        .dir
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("data"))
}

fn write_predictions(dir: &Path, eval: &experiment::Evaluation) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_records(&dir.join(PREDICTIONS_FILE), &eval.records)?;
    let path = dir.join(METRICS_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&eval.report)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn generate_data(cfg: &ExperimentConfig) -> Result<()> {
    let dir = data_dir(cfg);
    let data = with_workers(|| experiment::generate(cfg))??;
    save_dataset(&dir, &data).with_context(|| format!("writing dataset to {}", dir.display()))?;
    println!(
        "wrote {} training and {} validation clips to {}",
        data.train.len(),
        data.val.len(),
        dir.display()
    );
    Ok(())
}

fn pretrain_scene(cfg: &ExperimentConfig) -> Result<()> {
    let clf = experiment::pretrain_scene::<f32>(cfg).context("scene classifier pretraining failed")?;
    clf.save(&cfg.scene_classifier)?;
    println!(
        "scene classifier: held-out accuracy {:.3}, saved to {}",
        clf.heldout_accuracy(),
        cfg.scene_classifier.display()
    );
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let scene: Option<SceneClassifier32> = experiment::load_scene_classifier(cfg).map_err(|e| match e {
        Error::MissingArtifact(p) => anyhow::anyhow!(
            "scene prediction is enabled but the scene classifier checkpoint {} does not exist; run `debias pretrain-scene` first",
            p.display()
        ),
        other => anyhow::Error::new(other).context("loading the scene classifier"),
    })?;
    let mut cfg = cfg.clone();
    if cfg.data.dir.is_none() && data_dir(&cfg).exists() {
        cfg.data.dir = Some(data_dir(&cfg));
    }
    let data = with_workers(|| experiment::prepare_dataset(&cfg))??;
    let out = with_workers(|| experiment::train::<f32>(&cfg, &data, scene.as_ref(), Some(&cfg.output_dir)))??;
    write_predictions(&cfg.output_dir, &out.evaluation)?;
    println!("{}", render_table(&[(label_of(&cfg.output_dir), out.evaluation.report)]));
    Ok(())
}

fn evaluate_cmd(cfg: &ExperimentConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let path = checkpoint.unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE));
    let ck = Checkpoint::load(&path).map_err(|e| match e {
        Error::MissingArtifact(p) => anyhow::anyhow!("checkpoint not found: {}", p.display()),
        other => anyhow::Error::new(other),
    })?;
    let model = ck.model::<f32>()?;
    let mut data_cfg = cfg.clone();
    if data_cfg.data.dir.is_none() && data_dir(cfg).exists() {
        data_cfg.data.dir = Some(data_dir(cfg));
    }
    let data = with_workers(|| experiment::prepare_dataset(&data_cfg))??;
    let eval = with_workers(|| {
        evaluate(&model, &data.val, &ck.config.kernel, ck.config.batch_size, eval_seed(&ck.config))
    })?
    .context("evaluation failed")?;
    write_predictions(&cfg.output_dir, &eval)?;
    println!("checkpoint {} (epoch {})", path.display(), ck.epoch);
    println!("{}", render_table(&[(label_of(&cfg.output_dir), eval.report)]));
    Ok(())
}

fn label_of(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn report(cfg: &ExperimentConfig, extra: &[String]) -> Result<()> {
    let mut dirs = vec![(label_of(&cfg.output_dir), cfg.output_dir.clone())];
    for spec in extra {
        let (label, dir) = match spec.split_once('=') {
            Some((l, d)) => (l.to_string(), PathBuf::from(d)),
            None => (label_of(Path::new(spec)), PathBuf::from(spec)),
        };
        dirs.push((label, dir));
    }
    let mut runs = Vec::new();
    for (label, dir) in dirs {
        let log = RunLog::load(&dir).map_err(|e| match e {
            Error::MissingArtifact(p) => anyhow::anyhow!("run log not found: {}", p.display()),
            other => anyhow::Error::new(other),
        })?;
        runs.push((label, log));
    }
    let out = cfg.output_dir.join("report");
    let written = experiment::write_report(&runs, &out)?;
    let rows: Vec<(String, MetricsReport)> = runs
        .iter()
        .filter_map(|(l, r)| r.final_metrics().map(|m| (l.clone(), *m)))
        .collect();
    println!("{}", render_table(&rows));
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData(a) => generate_data(&a.load()?),
        Command::PretrainScene(a) => pretrain_scene(&a.load()?),
        Command::Train(a) => train(&a.load()?),
        Command::Evaluate { cfg, checkpoint } => evaluate_cmd(&cfg.load()?, checkpoint),
        Command::Report { cfg, runs } => report(&cfg.load()?, &runs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

