use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use debias::experiment::{ExperimentConfig, RunLog, CHECKPOINT_FILE};
use debias::metrics::read_records;
use debias::streams::{EncoderConfig, TemporalMode};
use debias::synth::ClipShape;

fn encoder(mode: TemporalMode) -> EncoderConfig {
    EncoderConfig {
        embed_dim: 8,
        depth: 1,
        heads: 2,
        patch_size: 4,
        temporal_mode: mode,
        mlp_ratio: 2,
    }
}

/// Writes a small but complete config rooted at `root`.
fn write_config(root: &Path) -> PathBuf {
    let mut c = ExperimentConfig::default();
    c.epochs = 2;
    c.batch_size = 8;
    c.eval_every = 1;
    c.output_dir = root.join("run");
    c.scene_classifier = root.join("scene.json");
    c.data.clip = ClipShape {
        frames: 4,
        height: 8,
        width: 8,
        channels: 3,
    };
    c.data.render.fg_size = 3;
    c.data.render.speed = 1;
    c.data.n_train = 32;
    c.data.n_val = 16;
    c.model.unbiased = encoder(TemporalMode::Spatiotemporal);
    c.model.extractor = encoder(TemporalMode::PerFrame);
    c.scene_pretrain.encoder = encoder(TemporalMode::PerFrame);
    c.optimizer.lr = 1e-3;
    let path = root.join("config.toml");
    fs::write(&path, c.to_toml_string()).unwrap();
    path
}

fn debias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(args)
        .env_remove("DEBIAS_WORKERS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_without_scene_classifier_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = debias(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains(dir.path().join("scene.json").to_str().unwrap()), "{err}");
    assert!(err.contains("pretrain-scene"), "{err}");
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    for sub in ["generate-data", "pretrain-scene", "train"] {
        let out = debias(&[sub, "--config", cfg]);
        assert!(out.status.success(), "{sub}: {}", stderr(&out));
    }
    let run = dir.path().join("run");
    assert!(run.join("data/manifest.jsonl").exists());
    assert!(run.join(CHECKPOINT_FILE).exists());
    let log = RunLog::load(&run).unwrap();
    let trained = *log.final_metrics().unwrap();
    assert_eq!(log.evals().count(), 2);

    let out = debias(&["evaluate", "--config", cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let records = read_records(&run.join("predictions.jsonl")).unwrap();
    assert_eq!(records.len(), 16);
    let again = debias::metrics::MetricsReport::from_records(&records, trained.inter_stream_hsic).unwrap();
    assert_eq!(again, trained);

    let baseline = dir.path().join("baseline");
    let out = debias(&[
        "train",
        "--config",
        cfg,
        "--set",
        &format!("output_dir={:?}", baseline.to_str().unwrap()),
        "--set",
        "model.biased_stream_kind=\"none\"",
        "--set",
        "model.scene_prediction=false",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let base_log = RunLog::load(&baseline).unwrap();
    assert!(!base_log.config().unwrap().model.scene_prediction);

    let out = debias(&["report", "--config", cfg, "--run", &format!("baseline={}", baseline.display())]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("baseline"));
    let report = run.join("report");
    let csv = fs::read_to_string(report.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("run,top-1,BOR,HOR,SHAcc,SBErr,HSIC"));
    assert_eq!(csv.lines().count(), 3);
    for f in ["metrics.txt", "loss_curves.svg", "metric_bars.svg"] {
        assert!(report.join(f).exists(), "{f}");
    }
}

#[test]
fn override_reaches_the_run_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = debias(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "model.scene_prediction=false",
        "--set",
        "epochs=1",
        "--set",
        "loss.lambda=5.0",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let c = RunLog::load(&dir.path().join("run")).unwrap().config().unwrap().clone();
    assert_eq!(c.epochs, 1);
    assert_eq!(c.loss.lambda, 5.0);
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "epochs = \"many\"\n").unwrap();
    let cfg = write_config(dir.path());
    let cases: Vec<Vec<String>> = vec![
        vec!["train".into(), "--config".into(), bad.display().to_string()],
        vec!["train".into(), "--config".into(), dir.path().join("absent.toml").display().to_string()],
        vec!["train".into(), "--config".into(), cfg.display().to_string(), "--set".into(), "no.such=1".into()],
        vec!["train".into(), "--config".into(), cfg.display().to_string(), "--set".into(), "epochs=0".into()],
        vec!["train".into(), "--bogus-flag".into()],
        vec!["evaluate".into(), "--config".into(), cfg.display().to_string()],
    ];
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = debias(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!stderr(&out).is_empty());
    }
    let out = debias(&["evaluate", "--config", cfg.to_str().unwrap()]);
    assert!(stderr(&out).contains("checkpoint not found"));
}

#[test]
fn invalid_worker_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(["generate-data", "--config", cfg.to_str().unwrap()])
        .env("DEBIAS_WORKERS", "0")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("DEBIAS_WORKERS"));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path, &[]).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
