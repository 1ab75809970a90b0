//! JSON reports and CSV traces.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{KamError, Result};
use crate::kam::IterationReport;
use crate::measure::MeasureReport;

/// Pretty JSON with a trailing newline.  Field order follows the struct
/// definitions and maps are ordered, so equal reports give equal bytes.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| KamError::Internal(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn csv_err(e: csv::Error) -> KamError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => KamError::Io(io),
        other => KamError::Internal(format!("csv: {other:?}")),
    }
}

/// ε-trace with columns `m, eps_scheduled, eps_measured, xF_norm, residual, delta0`.
pub fn trace_csv(report: &IterationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "eps_scheduled", "eps_measured", "xF_norm", "residual", "delta0"]).map_err(csv_err)?;
    for r in &report.records {
        w.write_record([
            r.m.to_string(),
            format!("{:e}", r.eps_scheduled),
            format!("{:e}", r.eps_measured),
            format!("{:e}", r.xf_norm),
            format!("{:e}", r.residual),
            format!("{:e}", r.delta0),
        ])
        .map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| KamError::Internal(e.to_string()))?).map_err(|e| KamError::Internal(e.to_string()))
}

/// Rows `family, k, threshold, excluded_fraction, analytic_bound`.
pub fn measure_csv(report: &MeasureReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["family", "k", "threshold", "excluded_fraction", "analytic_bound"]).map_err(csv_err)?;
    for r in &report.rows {
        let k = r.k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([format!("{:?}", r.family), k, format!("{:e}", r.threshold), format!("{:e}", r.excluded_fraction), format!("{:e}", r.analytic_bound)])
            .map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| KamError::Internal(e.to_string()))?).map_err(|e| KamError::Internal(e.to_string()))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut f = fs::File::create(&path)?;
    f.write_all(body.as_bytes())?;
    Ok(path)
}

/// Writes `report.json` and the trace CSV; returns the paths.
pub fn emit_iteration(report: &IterationReport, dir: &Path, json_name: &str, trace_name: &str) -> Result<Vec<PathBuf>> {
    Ok(vec![write(dir, json_name, &to_json(report)?)?, write(dir, trace_name, &trace_csv(report)?)?])
}

/// Writes the measure JSON and its CSV rows.
pub fn emit_measure(reports: &[MeasureReport], dir: &Path, json_name: &str, csv_name: &str) -> Result<Vec<PathBuf>> {
    let mut body = String::new();
    for (i, r) in reports.iter().enumerate() {
        let csv = measure_csv(r)?;
        if i == 0 {
            body.push_str(&csv);
        } else {
            body.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
        }
    }
    Ok(vec![write(dir, json_name, &to_json(&reports)?)?, write(dir, csv_name, &body)?])
}
