//! Top-1 accuracy and the background/human bias metrics.
//!
//! BOR and HOR are variant accuracies divided by original accuracy and are
//! not clamped; they are absent when the original accuracy is zero.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsic::{hsic_value, KernelSpec};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Scale at which inter-stream HSIC is displayed.
pub const HSIC_DISPLAY_SCALE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: usize,
    pub true_action: usize,
    pub pred_original: usize,
    pub pred_bg_only: usize,
    pub pred_human_only: usize,
    pub pred_bg_swapped: usize,
    pub swap_source_action: usize,
}

fn accuracy(records: &[PredictionRecord], pred: impl Fn(&PredictionRecord) -> usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(hits(records, pred) as f64 / records.len() as f64)
}

pub fn top1(records: &[PredictionRecord]) -> Result<f64> {
    accuracy(records, |r| r.pred_original)
}

fn hits(records: &[PredictionRecord], pred: impl Fn(&PredictionRecord) -> usize) -> usize {
    records.iter().filter(|r| pred(r) == r.true_action).count()
}

// Ratio of hit counts: equal to the ratio of accuracies, without the
// rounding of two divisions.
fn ratio(records: &[PredictionRecord], pred: impl Fn(&PredictionRecord) -> usize) -> Result<Option<f64>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let base = hits(records, |r| r.pred_original);
    if base == 0 {
        return Ok(None);
    }
    Ok(Some(hits(records, pred) as f64 / base as f64))
}

/// Background-only accuracy over original accuracy.
pub fn bor(records: &[PredictionRecord]) -> Result<Option<f64>> {
    ratio(records, |r| r.pred_bg_only)
}

/// Human-only accuracy over original accuracy.
pub fn hor(records: &[PredictionRecord]) -> Result<Option<f64>> {
    ratio(records, |r| r.pred_human_only)
}

/// Accuracy on background-swapped clips.
pub fn shacc(records: &[PredictionRecord]) -> Result<f64> {
    accuracy(records, |r| r.pred_bg_swapped)
}

/// Among wrong predictions on swapped clips, the fraction that named the
/// background donor's action. Zero when there are no wrong predictions.
pub fn sberr(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let wrong: Vec<_> = records
        .iter()
        .filter(|r| r.pred_bg_swapped != r.true_action)
        .collect();
    if wrong.is_empty() {
        return Ok(0.0);
    }
    let from_source = wrong
        .iter()
        .filter(|r| r.pred_bg_swapped == r.swap_source_action)
        .count();
    Ok(from_source as f64 / wrong.len() as f64)
}

/// Mean HSIC between paired biased and unbiased feature batches.
pub fn inter_stream_hsic<T: Scalar>(
    batches: &[(Matrix<T>, Matrix<T>)],
    kernel: &KernelSpec,
) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut total = 0.0;
    for (f_b, f_u) in batches {
        total += hsic_value(f_b, f_u, kernel, kernel)?.to_f64_lossy();
    }
    Ok(total / batches.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub top1: f64,
    pub bor: Option<f64>,
    pub hor: Option<f64>,
    pub shacc: f64,
    pub sberr: f64,
    /// Raw estimator value; absent for single-stream models.
    pub inter_stream_hsic: Option<f64>,
}

impl MetricsReport {
    pub fn from_records(records: &[PredictionRecord], inter_stream_hsic: Option<f64>) -> Result<Self> {
        Ok(Self {
            top1: top1(records)?,
            bor: bor(records)?,
            hor: hor(records)?,
            shacc: shacc(records)?,
            sberr: sberr(records)?,
            inter_stream_hsic,
        })
    }

    pub const HEADER: [&'static str; 6] = ["top-1", "BOR", "HOR", "SHAcc", "SBErr", "HSIC"];

    /// Cells in table order: percentages for the rates, `x1e4` for HSIC,
    /// `---` for absent values.
    pub fn cells(&self) -> [String; 6] {
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        let opt_pct = |v: Option<f64>| v.map_or_else(|| "---".to_string(), pct);
        [
            pct(self.top1),
            opt_pct(self.bor),
            opt_pct(self.hor),
            pct(self.shacc),
            pct(self.sberr),
            self.inter_stream_hsic
                .map_or_else(|| "---".to_string(), |h| format!("{:.2}", h * HSIC_DISPLAY_SCALE)),
        ]
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells = self.cells();
        for (i, (h, c)) in Self::HEADER.iter().zip(cells.iter()).enumerate() {
            if i > 0 {
                write!(f, "  ")?;
            }
            write!(f, "{h} {c}")?;
        }
        Ok(())
    }
}

/// Renders labelled reports as an aligned text table in the fixed column
/// order.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<label_width$}", "run");
    for h in MetricsReport::HEADER {
        out.push_str(&format!(" | {h:>7}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_width + 6 * 10));
    out.push('\n');
    for (label, r) in rows {
        out.push_str(&format!("{label:<label_width$}"));
        for c in r.cells() {
            out.push_str(&format!(" | {c:>7}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<PredictionRecord>> {
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
            what: "prediction records",
            detail: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}
