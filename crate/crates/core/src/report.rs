// SPDX-License-Identifier: Apache-2.0

//! Versioned JSON run reports with an optional flat CSV projection.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::boundary::BoundaryStats;
use crate::config::RunConfig;
use crate::energy::EnergyReport;
use crate::kvbench::{KvBenchConfig, ThroughputLatencySeries};
use crate::metrics::TransferMetrics;
use crate::server::FlowRecord;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub tool: String,
    pub version: String,
    pub role: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Arguments that reproduce the run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command_line: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferMetrics>,
    /// Bit/s over the whole measurement window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<f64>,
    /// Bit/s over time spent inside transmit calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transmit_throughput: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub server: Vec<FlowRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_config: Option<KvBenchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv: Option<ThroughputLatencySeries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    pub fn new(role: &str, started_unix: f64, finished_unix: f64) -> RunReport {
        RunReport {
            schema: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            role: role.to_string(),
            started_unix,
            finished_unix,
            command_line: Vec::new(),
            config: None,
            transfer: None,
            throughput: None,
            transmit_throughput: None,
            server: Vec::new(),
            boundary: None,
            kv_config: None,
            kv: None,
            energy: None,
            error: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write report under {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot encode CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Creates `<stem>.<ext>` in `dir`, or `<stem>-N.<ext>` if taken.
fn create_unique(dir: &Path, stem: &str, ext: &str) -> io::Result<(PathBuf, File)> {
    for n in 0u32.. {
        let name = if n == 0 {
            format!("{stem}.{ext}")
        } else {
            format!("{stem}-{n}.{ext}")
        };
        let path = dir.join(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("u32 suffixes exhausted")
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) => {
            let joined: Vec<String> = items
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            out.push((prefix.to_string(), joined.join(" ")));
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// The CSV projection: one row per KV rate point when the report has a
/// series, otherwise a single row of every scalar field.
pub fn csv_rows(report: &RunReport) -> Vec<Vec<(String, String)>> {
    let mut value = serde_json::to_value(report).expect("report serializes");
    let map = value.as_object_mut().expect("object");
    let points = map
        .get_mut("kv")
        .and_then(|kv| kv.as_object_mut())
        .and_then(|kv| kv.remove("points"));
    let mut base = Vec::new();
    flatten("", &Value::Object(map.clone()), &mut base);
    match points {
        Some(Value::Array(points)) => points
            .iter()
            .map(|p| {
                let mut row = base.clone();
                flatten("point", p, &mut row);
                row
            })
            .collect(),
        _ => vec![base],
    }
}

fn write_csv(rows: &[Vec<(String, String)>], file: File) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(file);
    if let Some(first) = rows.first() {
        w.write_record(first.iter().map(|(k, _)| k))?;
    }
    for row in rows {
        w.write_record(row.iter().map(|(_, v)| v))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<role>-<unix_start>.json` (and `.csv` when asked) under `dir`.
pub fn write_report(
    report: &RunReport,
    dir: &Path,
    csv: bool,
) -> Result<Vec<PathBuf>, ReportError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let stem = format!("{}-{}", report.role, report.started_unix.floor() as u64);
    let (json_path, mut file) = create_unique(dir, &stem, "json").map_err(io_err(dir))?;
    file.write_all(report.to_json().as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(io_err(&json_path))?;
    let mut written = vec![json_path.clone()];
    if csv {
        let csv_stem = json_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&stem)
            .to_string();
        let (csv_path, file) = create_unique(dir, &csv_stem, "csv").map_err(io_err(dir))?;
        write_csv(&csv_rows(report), file)?;
        written.push(csv_path);
    }
    Ok(written)
}

/// Persists the report; if that fails the JSON goes to standard output so
/// the measurement is not lost, and the error is returned.
pub fn emit_report(report: &RunReport, dir: &Path, csv: bool) -> Result<Vec<PathBuf>, ReportError> {
    write_report(report, dir, csv).inspect_err(|_| {
        println!("{}", report.to_json());
    })
}

/// Reads a report back.
pub fn read_report(path: &Path) -> io::Result<RunReport> {
    let raw = fs::read(path)?;
    serde_json::from_slice(&raw).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
