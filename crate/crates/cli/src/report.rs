//! Metric report serialization: one JSON object and a one-row CSV whose
//! columns follow [`MetricsReport::columns`].

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use triview_core::metrics::MetricsReport;

use crate::error::CliResult;
use crate::io::write_json;

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    samples: &'a [String],
    columns: Map<String, Value>,
    report: &'a MetricsReport,
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn csv_text(report: &MetricsReport) -> String {
    let cols = report.columns();
    let header: Vec<&str> = cols.iter().map(|(n, _)| n.as_str()).collect();
    let row: Vec<String> = cols.iter().map(|(_, v)| if v.is_nan() { "nan".into() } else { v.to_string() }).collect();
    format!("{}\n{}\n", header.join(","), row.join(","))
}

pub fn json_value(report: &MetricsReport, samples: &[String]) -> Value {
    let columns = report.columns().into_iter().map(|(n, v)| (n, number(v))).collect();
    serde_json::to_value(ReportFile { samples, columns, report }).expect("report serializes")
}

/// CSV path written next to a JSON report.
pub fn csv_path(json: &Path) -> PathBuf {
    json.with_extension("csv")
}

/// Writes `<out>` as JSON and the same path with a `.csv` extension.
pub fn write_report(out: &Path, report: &MetricsReport, samples: &[String]) -> CliResult<PathBuf> {
    write_json(out, &json_value(report, samples))?;
    let csv = csv_path(out);
    std::fs::write(&csv, csv_text(report)).map_err(|e| crate::error::CliError::io(&csv, e))?;
    Ok(csv)
}
