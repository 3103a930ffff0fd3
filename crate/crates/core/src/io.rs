//! Matrix-set files, canonical JSON output and run records.
//!
//! Floats are written with 17 significant digits so that every value
//! round-trips exactly; non-finite values become `null`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::access::PerturbationCertificate;
use crate::error::{Error, Result};
use crate::matset::{Matrix, MatrixSet};

pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_float(n.as_f64().expect("f64 number")));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
            } else if items.iter().all(|x| !x.is_array() && !x.is_object()) {
                out.push('[');
                for (i, x) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, x, indent);
                }
                out.push(']');
            } else {
                out.push_str("[\n");
                for (i, x) in items.iter().enumerate() {
                    out.push_str(&pad(indent + 1));
                    write_value(out, x, indent + 1);
                    out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
                }
                out.push_str(&pad(indent));
                out.push(']');
            }
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, x)) in map.iter().enumerate() {
                let _ = write!(out, "{}{}: ", pad(indent + 1), serde_json::to_string(k).expect("key"));
                write_value(out, x, indent + 1);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Deterministic pretty JSON: struct field order, 17-digit floats.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub label: String,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSetFile {
    pub dim: usize,
    pub matrices: Vec<MatrixEntry>,
}

impl MatrixSetFile {
    pub fn from_set(set: &MatrixSet) -> Self {
        Self {
            dim: set.dim(),
            matrices: set
                .iter()
                .map(|(label, m)| MatrixEntry {
                    label: label.to_string(),
                    rows: (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect(),
                })
                .collect(),
        }
    }
}

fn schema(at: &str, what: &str) -> Error {
    Error::Format(format!("{at}: {what}"))
}

/// Parses and validates a matrix-set document.
pub fn parse_matrix_set(text: &str) -> Result<MatrixSet> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| schema("$", "expected an object"))?;
    let dim = obj
        .get("dim")
        .and_then(Value::as_u64)
        .ok_or_else(|| schema("dim", "expected a positive integer"))? as usize;
    if dim == 0 {
        return Err(schema("dim", "expected a positive integer"));
    }
    let entries = obj
        .get("matrices")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("matrices", "expected an array"))?;
    let mut labels = Vec::with_capacity(entries.len());
    let mut ms = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let at = format!("matrices[{i}]");
        let label = e
            .get("label")
            .and_then(Value::as_str)
            .ok_or_else(|| schema(&at, "missing string field \"label\""))?;
        let rows = e
            .get("rows")
            .and_then(Value::as_array)
            .ok_or_else(|| schema(&at, "missing array field \"rows\""))?;
        if rows.len() != dim {
            return Err(schema(&format!("{at}.rows"), &format!("expected {dim} rows, found {}", rows.len())));
        }
        let mut m = Matrix::zeros(dim, dim);
        for (r, row) in rows.iter().enumerate() {
            let row = row
                .as_array()
                .ok_or_else(|| schema(&format!("{at}.rows[{r}]"), "expected an array"))?;
            if row.len() != dim {
                return Err(schema(
                    &format!("{at}.rows[{r}]"),
                    &format!("expected {dim} entries, found {}", row.len()),
                ));
            }
            for (c, x) in row.iter().enumerate() {
                m[(r, c)] = x
                    .as_f64()
                    .ok_or_else(|| schema(&format!("{at}.rows[{r}][{c}]"), "expected a number"))?;
            }
        }
        labels.push(label.to_string());
        ms.push(m);
    }
    MatrixSet::new(labels, ms)
}

pub fn load_matrix_set(path: &Path) -> Result<MatrixSet> {
    parse_matrix_set(&std::fs::read_to_string(path)?)
}

pub fn matrix_set_to_json(set: &MatrixSet) -> String {
    to_canonical_json(&MatrixSetFile::from_set(set)).expect("plain data")
}

pub fn save_matrix_set(set: &MatrixSet, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, matrix_set_to_json(set))?)
}

pub fn load_certificate(path: &Path) -> Result<PerturbationCertificate> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance for one CLI run. Kept out of the report so that reports stay
/// byte-identical across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    /// SHA-256 of the matrix-set file, when one was read.
    pub input_digest: Option<String>,
    pub config: Value,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
    pub version: String,
}
