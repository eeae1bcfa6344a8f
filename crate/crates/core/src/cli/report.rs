//! Side-by-side comparison of metrics files.

use std::path::{Path, PathBuf};

use serde_json::Value;

use super::eval::METRICS_SCHEMA_VERSION;
use crate::error::{Error, Result};

/// One row per metric, one column per metrics file. Missing cells are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<String>>)>,
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => Some(items.iter().filter_map(scalar).collect::<Vec<_>>().join(";")),
        other => Some(other.to_string()),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Option<String>)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => out.push((prefix.to_string(), scalar(v))),
    }
}

fn load(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    let found = value.get("schema_version").and_then(Value::as_u64);
    if found != Some(METRICS_SCHEMA_VERSION as u64) {
        return Err(Error::SchemaVersion {
            expected: METRICS_SCHEMA_VERSION,
            found: found.map_or(0, |f| f as u32),
            path: path.to_path_buf(),
        });
    }
    Ok(value)
}

/// Flattens one metrics document into `(key, value)` pairs; per-object
/// entries are keyed `object.<id>.<field>`.
pub fn flatten_metrics(doc: &Value) -> Vec<(String, Option<String>)> {
    let mut out = Vec::new();
    if let Value::Object(map) = doc {
        for (k, v) in map {
            match (k.as_str(), v) {
                ("schema_version" | "dataset_manifest_sha256", _) => {}
                ("objects", Value::Array(items)) => {
                    for item in items {
                        let id = item.get("object_id").and_then(scalar).unwrap_or_else(|| "?".into());
                        let mut fields = Vec::new();
                        flatten(&format!("object.{id}"), item, &mut fields);
                        out.extend(fields.into_iter().filter(|(key, _)| !key.ends_with(".object_id")));
                    }
                }
                _ => flatten(k, v, &mut out),
            }
        }
    }
    out
}

pub fn build_report(paths: &[PathBuf]) -> Result<Report> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one metrics file".into()));
    }
    let mut columns = Vec::new();
    let mut flat = Vec::new();
    for path in paths {
        let doc = load(path)?;
        let label = format!(
            "{}/{}",
            doc.get("scenario").and_then(Value::as_str).unwrap_or("?"),
            doc.get("mode").and_then(Value::as_str).unwrap_or("?")
        );
        let mut unique = label.clone();
        let mut n = 2;
        while columns.contains(&unique) {
            unique = format!("{label}#{n}");
            n += 1;
        }
        columns.push(unique);
        flat.push(flatten_metrics(&doc));
    }
    let mut keys: Vec<String> = Vec::new();
    for f in &flat {
        for (k, _) in f {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    let rows = keys
        .into_iter()
        .map(|k| {
            let cells = flat
                .iter()
                .map(|f| f.iter().find(|(key, _)| *key == k).and_then(|(_, v)| v.clone()))
                .collect();
            (k, cells)
        })
        .collect();
    Ok(Report { columns, rows })
}

fn shorten(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(x) if cell.contains('.') || cell.contains('e') => format!("{x:.4}"),
        _ => cell.to_string(),
    }
}

impl Report {
    /// Aligned plain-text table; numbers rounded to 4 decimals.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(_, r)| r.iter().map(|c| c.as_deref().map_or("-".to_string(), shorten)).collect())
            .collect();
        let key_w = self.rows.iter().map(|(k, _)| k.len()).chain([6]).max().unwrap_or(6);
        let col_w: Vec<usize> = (0..self.columns.len())
            .map(|j| cells.iter().map(|r| r[j].len()).chain([self.columns[j].len()]).max().unwrap_or(1))
            .collect();
        let mut s = format!("{:key_w$}", "metric");
        for (c, w) in self.columns.iter().zip(&col_w) {
            s.push_str(&format!("  {c:>w$}"));
        }
        s.push('\n');
        for ((k, _), r) in self.rows.iter().zip(&cells) {
            s.push_str(&format!("{k:key_w$}"));
            for (c, w) in r.iter().zip(&col_w) {
                s.push_str(&format!("  {c:>w$}"));
            }
            s.push('\n');
        }
        s
    }

    /// CSV with a `metric` column followed by one column per file; missing cells are `-`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("metric").chain(self.columns.iter().map(String::as_str)).collect();
        let internal = |e: csv::Error| Error::Internal(format!("csv: {e}"));
        w.write_record(&header).map_err(internal)?;
        for (k, r) in &self.rows {
            let record: Vec<&str> = std::iter::once(k.as_str())
                .chain(r.iter().map(|c| c.as_deref().unwrap_or("-")))
                .collect();
            w.write_record(&record).map_err(internal)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(format!("csv: {e}")))
    }
}

/// Builds the comparison and, when `out_dir` is given, writes `report.txt` and `report.csv`.
pub fn cmd_report(paths: &[PathBuf], out_dir: Option<&Path>) -> Result<Report> {
    let report = build_report(paths)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("report.txt", report.to_text()), ("report.csv", report.to_csv()?)] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(report)
}
