// SPDX-License-Identifier: Apache-2.0

//! Columnar text outputs. Every file starts with a header line; absent
//! values are written as `NA`.

use std::io::{self, Write};

use crate::analysis::{fmt_num, DetectionOutcome, FeatureVector};
use crate::pipeline::{MetricsRow, RunOutput, WindowCost};
use crate::sim::GroundTruthLabel;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt_num)
}

pub fn write_features(
    w: &mut impl Write,
    features: &[FeatureVector],
    bins: usize,
) -> io::Result<()> {
    writeln!(w, "{}", FeatureVector::csv_header(bins))?;
    for f in features {
        writeln!(w, "{}", f.to_csv(bins))?;
    }
    Ok(())
}

pub fn write_outcomes(w: &mut impl Write, outcomes: &[DetectionOutcome]) -> io::Result<()> {
    writeln!(w, "{}", DetectionOutcome::CSV_HEADER)?;
    for o in outcomes {
        writeln!(w, "{}", o.to_csv())?;
    }
    Ok(())
}

pub fn write_costs(w: &mut impl Write, costs: &[WindowCost]) -> io::Result<()> {
    writeln!(w, "window,mode,export_bytes")?;
    for c in costs {
        writeln!(w, "{},{},{}", c.window, c.mode, c.bytes)?;
    }
    Ok(())
}

pub fn write_labels(w: &mut impl Write, labels: &[GroundTruthLabel]) -> io::Result<()> {
    writeln!(w, "window,scope,kind")?;
    for l in labels.iter().filter(|l| l.active) {
        writeln!(w, "{},{},{}", l.window, l.scope, l.kind.as_str())?;
    }
    Ok(())
}

pub const METRICS_HEADER: &str = "mode,detector,kind,auprc,f1,threshold,ttfd_median_ms,ttfd_detected,ttfd_censored,positives,units,export_bytes_per_window,export_mbps";

fn row_fields(r: &MetricsRow) -> [String; 13] {
    [
        r.mode.to_string(),
        r.detector.map_or_else(|| "none".into(), |d| d.to_string()),
        r.kind.map_or("all", |k| k.as_str()).to_string(),
        opt(r.auprc),
        opt(r.f1),
        opt(r.threshold),
        opt(r.ttfd.median_ns.map(|n| n / 1e6)),
        r.ttfd.detected.to_string(),
        r.ttfd.censored.to_string(),
        r.positives.to_string(),
        r.units.to_string(),
        fmt_num(r.export_bytes_per_window),
        fmt_num(r.export_mbps),
    ]
}

pub fn write_metrics_csv(w: &mut impl Write, rows: &[MetricsRow]) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", row_fields(r).join(","))?;
    }
    Ok(())
}

/// Aligned plain-text table of the same rows plus a run summary.
pub fn write_metrics_txt(
    w: &mut impl Write,
    name: &str,
    out: &RunOutput,
    rows: &[MetricsRow],
) -> io::Result<()> {
    writeln!(
        w,
        "scenario {name}: {} windows, {} offered, {} delivered, {} dropped",
        out.windows, out.offered, out.delivered, out.dropped
    )?;
    if out.rebins > 0 {
        writeln!(w, "re-binned {} times", out.rebins)?;
    }
    let header: Vec<&str> = [
        "mode", "detector", "kind", "AUPRC", "F1", "thr", "TTFD ms", "det", "cens", "pos", "units",
        "B/window", "Mbps",
    ]
    .to_vec();
    let body: Vec<[String; 13]> = rows.iter().map(row_fields).collect();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in &body {
        for (i, f) in r.iter().enumerate() {
            width[i] = width[i].max(f.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&width)
            .map(|(c, n)| format!("{c:>n$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(w, "{}", line(header))?;
    for r in &body {
        writeln!(w, "{}", line(r.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}
