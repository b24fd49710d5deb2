//! File ingestion: CSV (RFC-4180-style, header row required) and JSON lines.
//! Values are coerced to the declared schema; any coercion failure is a
//! schema violation and aborts the load.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::StorageError;
use crate::value::{parse_date, DataType, Row, Schema, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FileFormat {
    Csv,
    JsonLines,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Result<FileFormat, StorageError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(FileFormat::Csv),
            Some("jsonl") | Some("ndjson") | Some("json") => Ok(FileFormat::JsonLines),
            other => Err(StorageError::Manifest(format!(
                "cannot infer file format from extension {other:?}"
            ))),
        }
    }
}

/// Reads and coerces a whole file into rows in schema column order.
pub fn read_rows(
    path: &Path,
    format: FileFormat,
    schema: &Schema,
) -> Result<Vec<Row>, StorageError> {
    match format {
        FileFormat::Csv => read_csv(path, schema),
        FileFormat::JsonLines => read_jsonl(path, schema),
    }
}

fn coerce(text: &str, dtype: DataType) -> Option<Value> {
    match dtype {
        DataType::Int64 => text.parse::<i64>().ok().map(Value::Int64),
        DataType::Float64 => text.parse::<f64>().ok().map(Value::Float64),
        DataType::Boolean => match text.to_ascii_lowercase().as_str() {
            "true" | "1" => Some(Value::Boolean(true)),
            "false" | "0" => Some(Value::Boolean(false)),
            _ => None,
        },
        DataType::Utf8 => Some(Value::Utf8(text.to_string())),
        DataType::Date => parse_date(text).map(Value::Date),
    }
}

fn read_csv(path: &Path, schema: &Schema) -> Result<Vec<Row>, StorageError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| StorageError::SchemaViolation(format!("csv open: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| StorageError::SchemaViolation(format!("csv header: {e}")))?
        .clone();
    // Map each schema column to its position in the file.
    let mut positions = Vec::with_capacity(schema.len());
    for f in schema.fields() {
        let pos = headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(&f.name))
            .ok_or_else(|| {
                StorageError::SchemaViolation(format!("csv is missing column `{}`", f.name))
            })?;
        positions.push(pos);
    }

    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| StorageError::SchemaViolation(format!("csv row {line}: {e}")))?;
        let mut row = Vec::with_capacity(schema.len());
        for (c, &pos) in positions.iter().enumerate() {
            let text = record.get(pos).unwrap_or("");
            if text.is_empty() {
                row.push(None); // empty field = null
            } else {
                let dtype = schema.field(c).dtype;
                let v = coerce(text, dtype).ok_or_else(|| {
                    StorageError::SchemaViolation(format!(
                        "csv row {line}, column `{}`: cannot coerce `{text}` to {dtype}",
                        schema.field(c).name
                    ))
                })?;
                row.push(Some(v));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_jsonl(path: &Path, schema: &Schema) -> Result<Vec<Row>, StorageError> {
    let file = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (line_no, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
            .map_err(|e| StorageError::SchemaViolation(format!("jsonl line {line_no}: {e}")))?;
        let mut row = Vec::with_capacity(schema.len());
        for f in schema.fields() {
            let raw = obj
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(&f.name))
                .map(|(_, v)| v);
            let v = match raw {
                None | Some(serde_json::Value::Null) => None,
                Some(raw) => Some(coerce_json(raw, f.dtype).ok_or_else(|| {
                    StorageError::SchemaViolation(format!(
                        "jsonl line {line_no}, column `{}`: cannot coerce {raw} to {}",
                        f.name, f.dtype
                    ))
                })?),
            };
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn coerce_json(v: &serde_json::Value, dtype: DataType) -> Option<Value> {
    use serde_json::Value as J;
    match (dtype, v) {
        (DataType::Int64, J::Number(n)) => n.as_i64().map(Value::Int64),
        (DataType::Float64, J::Number(n)) => n.as_f64().map(Value::Float64),
        (DataType::Boolean, J::Bool(b)) => Some(Value::Boolean(*b)),
        (DataType::Utf8, J::String(s)) => Some(Value::Utf8(s.clone())),
        (DataType::Date, J::String(s)) => parse_date(s).map(Value::Date),
        _ => None,
    }
}

/// Length and content digest of a file, recorded when a dataset snapshots it.
pub fn file_fingerprint(path: &Path) -> Result<(u64, String), StorageError> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut len = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        len += n as u64;
        hasher.update(&buf[..n]);
    }
    let digest = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok((len, digest))
}
