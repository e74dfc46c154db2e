//! Append-only JSONL run log.
//!
//! The log holds only deterministic content so that two runs of the same
//! config and seed write byte-identical files. Wall-clock timings go to a
//! separate sidecar.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::metrics::MetricsReport;
use crate::streams::InputTransform;

pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        config_hash: String,
        config: Box<ExperimentConfig>,
    },
    Step {
        epoch: usize,
        step: usize,
        /// Input transform applied to the biased stream, if there is one.
        transform: Option<InputTransform>,
        loss: LossBreakdown,
    },
    Eval {
        epoch: usize,
        metrics: MetricsReport,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub epoch: usize,
    pub seconds: f64,
}

struct Sink {
    log: BufWriter<File>,
    timing: BufWriter<File>,
    path: PathBuf,
}

/// In-memory record list with an optional file sink. Appends are
/// serialised through a mutex.
#[derive(Default)]
pub struct RunLog {
    records: Vec<LogRecord>,
    timings: Vec<Timing>,
    sink: Option<Mutex<Sink>>,
}

impl std::fmt::Debug for RunLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunLog")
            .field("records", &self.records.len())
            .field("timings", &self.timings.len())
            .finish()
    }
}

impl RunLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Truncates and writes `runlog.jsonl` and `timing.jsonl` under `dir`.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(&p)
                .map_err(|e| Error::io(&p, e))?;
            Ok(BufWriter::new(f))
        };
        Ok(Self {
            records: Vec::new(),
            timings: Vec::new(),
            sink: Some(Mutex::new(Sink {
                log: open(RUNLOG_FILE)?,
                timing: open(TIMING_FILE)?,
                path: dir.to_path_buf(),
            })),
        })
    }

    pub fn append(&mut self, record: LogRecord) -> Result<()> {
        if let Some(sink) = &self.sink {
            let mut s = sink.lock().expect("runlog sink poisoned");
            let path = s.path.join(RUNLOG_FILE);
            serde_json::to_writer(&mut s.log, &record)?;
            s.log.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn append_timing(&mut self, timing: Timing) -> Result<()> {
        if let Some(sink) = &self.sink {
            let mut s = sink.lock().expect("runlog sink poisoned");
            let path = s.path.join(TIMING_FILE);
            serde_json::to_writer(&mut s.timing, &timing)?;
            s.timing.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        self.timings.push(timing);
        Ok(())
    }

    pub fn flush(&self) -> Result<()> {
        if let Some(sink) = &self.sink {
            let mut s = sink.lock().expect("runlog sink poisoned");
            let path = s.path.clone();
            s.log.flush().map_err(|e| Error::io(&path, e))?;
            s.timing.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn timings(&self) -> &[Timing] {
        &self.timings
    }

    /// Reads a run directory (or a `runlog.jsonl` path) back into memory.
    pub fn load(path: &Path) -> Result<Self> {
        let file_path = if path.is_dir() {
            path.join(RUNLOG_FILE)
        } else {
            path.to_path_buf()
        };
        let records = read_jsonl(&file_path, "run log")?;
        let timing_path = file_path.with_file_name(TIMING_FILE);
        let timings = if timing_path.exists() {
            read_jsonl(&timing_path, "timing log")?
        } else {
            Vec::new()
        };
        Ok(Self {
            records,
            timings,
            sink: None,
        })
    }

    pub fn config(&self) -> Option<&ExperimentConfig> {
        self.records.iter().find_map(|r| match r {
            LogRecord::Header { config, .. } => Some(config.as_ref()),
            _ => None,
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = (usize, usize, &LossBreakdown)> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step {
                epoch, step, loss, ..
            } => Some((*epoch, *step, loss)),
            _ => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = (usize, &MetricsReport)> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Eval { epoch, metrics } => Some((*epoch, metrics)),
            _ => None,
        })
    }

    pub fn final_metrics(&self) -> Option<&MetricsReport> {
        self.evals().last().map(|(_, m)| m)
    }

    /// Mean of every loss term per epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<(usize, LossBreakdown)> {
        let mut out: Vec<(usize, LossBreakdown, usize)> = Vec::new();
        for (epoch, _, l) in self.steps() {
            if out.last().map(|e| e.0) != Some(epoch) {
                out.push((epoch, LossBreakdown::default(), 0));
            }
            let (_, acc, n) = out.last_mut().expect("just pushed");
            acc.ce_u += l.ce_u;
            acc.ce_b += l.ce_b;
            acc.scene_u += l.scene_u;
            acc.scene_b += l.scene_b;
            acc.ind += l.ind;
            acc.total_u += l.total_u;
            acc.total_b += l.total_b;
            acc.total += l.total;
            acc.beta_t += l.beta_t;
            *n += 1;
        }
        out.into_iter()
            .map(|(e, mut acc, n)| {
                let k = n as f64;
                for v in [
                    &mut acc.ce_u,
                    &mut acc.ce_b,
                    &mut acc.scene_u,
                    &mut acc.scene_b,
                    &mut acc.ind,
                    &mut acc.total_u,
                    &mut acc.total_b,
                    &mut acc.total,
                    &mut acc.beta_t,
                ] {
                    *v /= k;
                }
                (e, acc)
            })
            .collect()
    }
}

fn read_jsonl<R: serde::de::DeserializeOwned>(path: &Path, what: &'static str) -> Result<Vec<R>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            what,
            detail: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(epoch: usize, step: usize, total: f64) -> LogRecord {
        LogRecord::Step {
            epoch,
            step,
            transform: Some(InputTransform::Shuffle),
            loss: LossBreakdown {
                total,
                ..Default::default()
            },
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = RunLog::create(dir.path()).unwrap();
        let cfg = ExperimentConfig::default();
        log.append(LogRecord::Header {
            config_hash: cfg.hash(),
            config: Box::new(cfg.clone()),
        })
        .unwrap();
        log.append(step(0, 0, 1.0)).unwrap();
        log.append(step(0, 1, 3.0)).unwrap();
        log.append(step(1, 0, 5.0)).unwrap();
        log.append_timing(Timing { epoch: 0, seconds: 0.5 }).unwrap();
        log.flush().unwrap();
        let back = RunLog::load(dir.path()).unwrap();
        assert_eq!(back.records(), log.records());
        assert_eq!(back.timings(), log.timings());
        assert_eq!(back.config(), Some(&cfg));
        let means = back.epoch_means();
        assert_eq!(means.len(), 2);
        assert_eq!(means[0].1.total, 2.0);
        assert_eq!(means[1].1.total, 5.0);
    }

    #[test]
    fn missing_log_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(RunLog::load(dir.path()), Err(Error::MissingArtifact(_))));
    }
}
