//! Tables and SVG plots from one or more run logs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::runlog::RunLog;
use crate::error::{Error, Result};
use crate::metrics::{render_table, MetricsReport};

pub const TABLE_CSV: &str = "metrics.csv";
pub const TABLE_TXT: &str = "metrics.txt";
pub const LOSS_PLOT: &str = "loss_curves.svg";
pub const METRIC_PLOT: &str = "metric_bars.svg";

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Comma-separated table: a header row, then one row per run.
pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("run");
    for h in MetricsReport::HEADER {
        out.push(',');
        out.push_str(h);
    }
    out.push('\n');
    for (label, r) in rows {
        out.push_str(&label.replace(',', ";"));
        for c in r.cells() {
            out.push(',');
            out.push_str(&c);
        }
        out.push('\n');
    }
    out
}

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of per-epoch mean total, action CE and independence losses
/// for every run.
pub fn loss_svg(runs: &[(String, &RunLog)]) -> String {
    let (w, h, pad) = (720.0, 420.0, 50.0);
    let series: Vec<(String, Vec<(f64, f64)>)> = runs
        .iter()
        .flat_map(|(label, log)| {
            let means = log.epoch_means();
            let pick = |f: fn(&crate::losses::LossBreakdown) -> f64| {
                means.iter().map(|(e, l)| (*e as f64, f(l))).collect::<Vec<_>>()
            };
            vec![
                (format!("{label} total"), pick(|l| l.total)),
                (format!("{label} ce_u"), pick(|l| l.ce_u)),
            ]
        })
        .filter(|(_, pts)| !pts.is_empty())
        .collect();
    let mut svg = svg_open(w, h);
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (x_max, mut y_min, mut y_max) = pts.iter().fold((1.0f64, f64::INFINITY, f64::NEG_INFINITY), |a, p| {
        (a.0.max(p.0), a.1.min(p.1), a.2.max(p.1))
    });
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| pad + x / x_max * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y_min) / (y_max - y_min) * (h - 2.0 * pad);
    let _ = writeln!(
        svg,
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/><line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{0}\" stroke=\"black\"/>",
        h - pad,
        w - pad
    );
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">epoch</text>", w / 2.0, h - 15.0);
    let _ = writeln!(svg, "<text x=\"{pad}\" y=\"{}\">{y_max:.3}</text>", pad - 5.0);
    let _ = writeln!(svg, "<text x=\"{pad}\" y=\"{}\">{y_min:.3}</text>", h - pad + 14.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x_max}</text>", w - pad, h - pad + 14.0);
    for (i, (name, p)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>",
            path.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{colour}\">{}</text>",
            w - pad - 150.0,
            pad + 14.0 * i as f64,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bars of the rate metrics (top-1, BOR, HOR, SHAcc, SBErr) per run.
pub fn metric_bars_svg(rows: &[(String, MetricsReport)]) -> String {
    let names = ["top-1", "BOR", "HOR", "SHAcc", "SBErr"];
    let (w, h, pad) = (720.0, 420.0, 50.0);
    let mut svg = svg_open(w, h);
    let values: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|(_, r)| vec![Some(r.top1), r.bor, r.hor, Some(r.shacc), Some(r.sberr)])
        .collect();
    let y_max = values
        .iter()
        .flatten()
        .flatten()
        .fold(1.0f64, |a, &v| a.max(v));
    let group_w = (w - 2.0 * pad) / names.len() as f64;
    let bar_w = group_w * 0.8 / rows.len().max(1) as f64;
    let _ = writeln!(
        svg,
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>",
        h - pad,
        w - pad
    );
    let _ = writeln!(svg, "<text x=\"{pad}\" y=\"{}\">{:.0}%</text>", pad - 5.0, y_max * 100.0);
    for (g, name) in names.iter().enumerate() {
        let gx = pad + g as f64 * group_w;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{name}</text>",
            gx + group_w / 2.0,
            h - pad + 16.0
        );
        for (r, vals) in values.iter().enumerate() {
            let Some(v) = vals[g] else { continue };
            let bh = v / y_max * (h - 2.0 * pad);
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                gx + group_w * 0.1 + r as f64 * bar_w,
                h - pad - bh,
                bar_w,
                bh,
                PALETTE[r % PALETTE.len()]
            );
        }
    }
    for (r, (label, _)) in rows.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>",
            w - pad - 150.0,
            pad + 14.0 * r as f64,
            PALETTE[r % PALETTE.len()],
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the table (CSV and aligned text) and both plots for the given
/// runs into `out_dir`. Returns the written paths.
pub fn write_report(runs: &[(String, RunLog)], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut rows = Vec::new();
    for (label, log) in runs {
        let m = log.final_metrics().ok_or_else(|| Error::Malformed {
            what: "run log",
            detail: format!("run `{label}` has no evaluation records"),
        })?;
        rows.push((label.clone(), *m));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let refs: Vec<(String, &RunLog)> = runs.iter().map(|(l, r)| (l.clone(), r)).collect();
    let outputs = [
        (TABLE_CSV, metrics_csv(&rows)),
        (TABLE_TXT, render_table(&rows)),
        (LOSS_PLOT, loss_svg(&refs)),
        (METRIC_PLOT, metric_bars_svg(&rows)),
    ];
    let mut written = Vec::new();
    for (name, body) in outputs {
        let p = out_dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_keeps_column_order_and_absent_marker() {
        let r = MetricsReport {
            top1: 0.5,
            bor: None,
            hor: Some(1.0),
            shacc: 0.25,
            sberr: 0.75,
            inter_stream_hsic: Some(1.5e-4),
        };
        let csv = metrics_csv(&[("a,b".into(), r)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("run,top-1,BOR,HOR,SHAcc,SBErr,HSIC"));
        assert_eq!(lines.next(), Some("a;b,50.0,---,100.0,25.0,75.0,1.50"));
    }

    #[test]
    fn plots_are_svg() {
        let r = MetricsReport {
            top1: 0.5,
            bor: Some(0.5),
            hor: Some(1.0),
            shacc: 0.25,
            sberr: 0.75,
            inter_stream_hsic: None,
        };
        let s = metric_bars_svg(&[("x".into(), r)]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<rect").count(), 1 + 5);
        let log = RunLog::in_memory();
        let l = loss_svg(&[("x".into(), &log)]);
        assert!(l.contains("</svg>"));
    }
}
