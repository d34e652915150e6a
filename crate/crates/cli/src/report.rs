//! Tabular results and their CSV / JSON renderings.

use std::io::Write;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NoConvergence,
    Failed,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::NoConvergence => "no_convergence",
            Status::Failed => "failed",
        }
    }

    pub fn of(err: &flowline::Error) -> Self {
        match err {
            flowline::Error::NoConvergence { .. } => Status::NoConvergence,
            _ => Status::Failed,
        }
    }
}

/// One case's results: named numeric cells plus free-form metadata.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub case: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(serialize_with = "ordered_values")]
    pub values: Vec<(String, Option<f64>)>,
    pub meta: Map<String, Value>,
}

fn ordered_values<S: serde::Serializer>(v: &[(String, Option<f64>)], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut m = s.serialize_map(Some(v.len()))?;
    for (k, x) in v {
        m.serialize_entry(k, x)?;
    }
    m.end()
}

impl ReportRow {
    pub fn new(case: &str) -> Self {
        Self {
            case: case.to_string(),
            status: Status::Ok,
            message: None,
            values: Vec::new(),
            meta: Map::new(),
        }
    }

    pub fn failed(case: &str, err: &flowline::Error) -> Self {
        Self {
            status: Status::of(err),
            message: Some(err.to_string()),
            ..Self::new(case)
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: impl Into<Option<f64>>) {
        self.values.push((name.into(), value.into()));
    }

    pub fn push_series(&mut self, prefix: &str, values: impl IntoIterator<Item = f64>) {
        for (i, v) in values.into_iter().enumerate() {
            self.push(format!("{prefix}{}", i + 1), v);
        }
    }

    pub fn meta(&mut self, key: &str, value: impl Serialize) {
        self.meta.insert(
            key.to_string(),
            serde_json::to_value(value).expect("metadata is plain data"),
        );
    }
}

/// Header row: `case`, the union of value columns (widest row first), `status`.
pub fn columns(rows: &[ReportRow], default: &[&str]) -> Vec<String> {
    let mut order: Vec<&ReportRow> = rows.iter().collect();
    order.sort_by_key(|r| std::cmp::Reverse(r.values.len()));
    let mut cols: Vec<String> = Vec::new();
    for r in order {
        for (k, _) in &r.values {
            if !cols.contains(k) {
                cols.push(k.clone());
            }
        }
    }
    if cols.is_empty() {
        cols = default.iter().map(|s| s.to_string()).collect();
    }
    cols
}

pub fn write_csv(out: impl Write, rows: &[ReportRow], default_columns: &[&str]) -> Result<(), CliError> {
    let cols = columns(rows, default_columns);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["case".to_string()];
    header.extend(cols.iter().cloned());
    header.push("status".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.case.clone()];
        for c in &cols {
            let cell = r
                .values
                .iter()
                .find(|(k, _)| k == c)
                .and_then(|(_, v)| *v)
                .map(|v| format!("{v:.5}"))
                .unwrap_or_default();
            rec.push(cell);
        }
        rec.push(r.status.as_str().into());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::Io {
        path: "output".into(),
        source: e,
    })?;
    Ok(())
}

#[derive(Serialize)]
struct JsonReport<'a> {
    command: &'a str,
    tool_version: &'a str,
    cases: &'a [ReportRow],
}

pub fn write_json(mut out: impl Write, command: &str, rows: &[ReportRow]) -> Result<(), CliError> {
    let doc = JsonReport {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        cases: rows,
    };
    serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| CliError::Parse(e.to_string()))?;
    writeln!(out).map_err(|e| CliError::Io {
        path: "output".into(),
        source: e,
    })
}

/// `100 (estimate − reference) / reference`.
pub fn percent_diff(estimate: f64, reference: f64) -> Option<f64> {
    (reference != 0.0).then(|| 100.0 * (estimate - reference) / reference)
}
