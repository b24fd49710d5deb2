//! Typed relational data model shared by every layer: scalar values, rows,
//! schemas, canonical byte encodings and the hash used for data routing.
//!
//! Routing stability matters more than speed here: co-partitioned joins only
//! work if every load and every shuffle routes a given key to the same
//! partition, on every run. All hashing therefore goes through one FNV-1a
//! function over a canonical byte encoding that is independent of platform
//! and process.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::StorageError;

/// Column types supported by the engine. `Date` is days since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataType {
    Int64,
    Float64,
    Boolean,
    Utf8,
    Date,
}

impl DataType {
    pub fn name(self) -> &'static str {
        match self {
            DataType::Int64 => "int64",
            DataType::Float64 => "float64",
            DataType::Boolean => "boolean",
            DataType::Utf8 => "utf8",
            DataType::Date => "date",
        }
    }

    pub fn parse(s: &str) -> Option<DataType> {
        match s.to_ascii_lowercase().as_str() {
            "int64" | "int" | "bigint" | "long" => Some(DataType::Int64),
            "float64" | "float" | "double" => Some(DataType::Float64),
            "boolean" | "bool" => Some(DataType::Boolean),
            "utf8" | "string" | "varchar" | "text" => Some(DataType::Utf8),
            "date" => Some(DataType::Date),
            _ => None,
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, DataType::Int64 | DataType::Float64)
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single scalar. Nullability is carried by `Option<Value>` so a `Value`
/// is always a concrete datum of its type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Int64(i64),
    Float64(f64),
    Boolean(bool),
    Utf8(String),
    Date(i32),
}

/// Canonical NaN bit pattern so NaN hashes and compares as a single value.
const CANON_NAN_BITS: u64 = 0x7ff8_0000_0000_0000;

fn canon_f64_bits(v: f64) -> u64 {
    if v.is_nan() {
        CANON_NAN_BITS
    } else if v == 0.0 {
        0 // collapse -0.0 and +0.0
    } else {
        v.to_bits()
    }
}

/// Canonical float for ordering/equality: one NaN, one zero. Keeps Ord, Eq
/// and Hash mutually consistent.
pub fn canon_f64(v: f64) -> f64 {
    f64::from_bits(canon_f64_bits(v))
}

impl Value {
    pub fn data_type(&self) -> DataType {
        match self {
            Value::Int64(_) => DataType::Int64,
            Value::Float64(_) => DataType::Float64,
            Value::Boolean(_) => DataType::Boolean,
            Value::Utf8(_) => DataType::Utf8,
            Value::Date(_) => DataType::Date,
        }
    }

    /// Logical byte size used for partition size accounting. Variable-width
    /// values carry a 4-byte length in addition to their payload.
    pub fn byte_size(&self) -> usize {
        match self {
            Value::Int64(_) | Value::Float64(_) => 8,
            Value::Boolean(_) => 1,
            Value::Utf8(s) => 4 + s.len(),
            Value::Date(_) => 4,
        }
    }

    /// Placeholder datum stored in null slots of encoded columns; validity
    /// bitmaps restore the nulls on decode.
    pub fn placeholder(dtype: DataType) -> Value {
        match dtype {
            DataType::Int64 => Value::Int64(0),
            DataType::Float64 => Value::Float64(0.0),
            DataType::Boolean => Value::Boolean(false),
            DataType::Utf8 => Value::Utf8(String::new()),
            DataType::Date => Value::Date(0),
        }
    }

    /// Appends the canonical byte encoding: a type tag followed by a fixed
    /// little-endian payload (floats are canonicalized first).
    pub fn write_canonical(&self, out: &mut Vec<u8>) {
        match self {
            Value::Int64(v) => {
                out.push(1);
                out.extend_from_slice(&v.to_le_bytes());
            }
            Value::Float64(v) => {
                out.push(2);
                out.extend_from_slice(&canon_f64_bits(*v).to_le_bytes());
            }
            Value::Boolean(v) => {
                out.push(3);
                out.push(*v as u8);
            }
            Value::Utf8(s) => {
                out.push(4);
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            Value::Date(v) => {
                out.push(5);
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    /// Total order within one type; across types, ordered by type tag so the
    /// comparison is still total (mixed types only meet in test helpers).
    pub fn canonical_cmp(&self, other: &Value) -> Ordering {
        use Value::*;
        match (self, other) {
            (Int64(a), Int64(b)) => a.cmp(b),
            (Float64(a), Float64(b)) => canon_f64(*a).total_cmp(&canon_f64(*b)),
            (Boolean(a), Boolean(b)) => a.cmp(b),
            (Utf8(a), Utf8(b)) => a.as_bytes().cmp(b.as_bytes()),
            (Date(a), Date(b)) => a.cmp(b),
            _ => type_rank(self).cmp(&type_rank(other)),
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int64(v) => Some(*v),
            Value::Date(v) => Some(*v as i64),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int64(v) => Some(*v as f64),
            Value::Float64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Utf8(s) => Some(s),
            _ => None,
        }
    }
}

fn type_rank(v: &Value) -> u8 {
    match v {
        Value::Int64(_) => 1,
        Value::Float64(_) => 2,
        Value::Boolean(_) => 3,
        Value::Utf8(_) => 4,
        Value::Date(_) => 5,
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.canonical_cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.canonical_cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical_cmp(other)
    }
}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        let mut buf = Vec::with_capacity(16);
        self.write_canonical(&mut buf);
        state.write(&buf);
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int64(v) => write!(f, "{v}"),
            Value::Float64(v) => write!(f, "{v:?}"),
            Value::Boolean(v) => write!(f, "{v}"),
            Value::Utf8(s) => f.write_str(s),
            Value::Date(d) => f.write_str(&format_date(*d)),
        }
    }
}

/// Nulls order before every concrete value.
pub fn cmp_opt(a: &Option<Value>, b: &Option<Value>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(a), Some(b)) => a.canonical_cmp(b),
    }
}

pub type Row = Vec<Option<Value>>;
pub type RowBatch = Vec<Row>;

pub fn cmp_rows(a: &Row, b: &Row) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match cmp_opt(x, y) {
            Ordering::Equal => {}
            non_eq => return non_eq,
        }
    }
    a.len().cmp(&b.len())
}

pub fn row_byte_size(row: &Row) -> usize {
    row.iter()
        .map(|v| 1 + v.as_ref().map_or(0, Value::byte_size))
        .sum()
}

pub fn batch_byte_size(rows: &[Row]) -> usize {
    rows.iter().map(row_byte_size).sum()
}

// --- hashing -----------------------------------------------------------

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. The one hash used for data routing; never change it, every
/// co-partitioned table on disk implicitly depends on it.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash of one nullable value over its canonical bytes (nulls hash the tag 0).
pub fn hash_value(v: &Option<Value>) -> u64 {
    let mut buf = Vec::with_capacity(16);
    write_canonical_opt(v, &mut buf);
    fnv1a64(&buf)
}

/// Hash of a composite key (e.g. multi-column group-by keys).
pub fn hash_key(values: &[&Option<Value>]) -> u64 {
    let mut buf = Vec::with_capacity(16 * values.len());
    for v in values {
        write_canonical_opt(v, &mut buf);
    }
    fnv1a64(&buf)
}

pub fn write_canonical_opt(v: &Option<Value>, out: &mut Vec<u8>) {
    match v {
        None => out.push(0),
        Some(v) => v.write_canonical(out),
    }
}

pub fn row_canonical_bytes(row: &Row) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 * row.len());
    for v in row {
        write_canonical_opt(v, &mut buf);
    }
    buf
}

// --- binary row codec ---------------------------------------------------

/// Serializes a batch with the canonical value encoding plus row/batch
/// framing. Spilled shuffle buckets read back bit-identically through this.
pub fn encode_batch(rows: &[Row]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 16 * rows.len());
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for row in rows {
        out.extend_from_slice(&(row.len() as u16).to_le_bytes());
        for v in row {
            write_canonical_opt(v, &mut out);
        }
    }
    out
}

pub fn decode_batch(bytes: &[u8]) -> Result<RowBatch, StorageError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let n_rows = cur.u32()? as usize;
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let n_cols = cur.u16()? as usize;
        let mut row = Vec::with_capacity(n_cols);
        for _ in 0..n_cols {
            row.push(cur.value()?);
        }
        rows.push(row);
    }
    Ok(rows)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StorageError> {
        if self.pos + n > self.buf.len() {
            return Err(StorageError::CorruptChunk("truncated row batch".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, StorageError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, StorageError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn value(&mut self) -> Result<Option<Value>, StorageError> {
        let tag = self.take(1)?[0];
        Ok(match tag {
            0 => None,
            1 => Some(Value::Int64(i64::from_le_bytes(
                self.take(8)?.try_into().unwrap(),
            ))),
            2 => Some(Value::Float64(f64::from_bits(u64::from_le_bytes(
                self.take(8)?.try_into().unwrap(),
            )))),
            3 => Some(Value::Boolean(self.take(1)?[0] != 0)),
            4 => {
                let len = self.u32()? as usize;
                let bytes = self.take(len)?;
                Some(Value::Utf8(
                    String::from_utf8(bytes.to_vec())
                        .map_err(|_| StorageError::CorruptChunk("invalid utf8".into()))?,
                ))
            }
            5 => Some(Value::Date(i32::from_le_bytes(
                self.take(4)?.try_into().unwrap(),
            ))),
            t => {
                return Err(StorageError::CorruptChunk(format!(
                    "unknown value tag {t}"
                )))
            }
        })
    }
}

// --- dates --------------------------------------------------------------

pub fn parse_date(s: &str) -> Option<i32> {
    let d = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    let epoch = chrono::NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
    Some((d - epoch).num_days() as i32)
}

pub fn format_date(days: i32) -> String {
    let epoch = chrono::NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
    let d = epoch + chrono::Duration::days(days as i64);
    d.format("%Y-%m-%d").to_string()
}

// --- schema ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub dtype: DataType,
}

impl Field {
    pub fn new(name: impl Into<String>, dtype: DataType) -> Field {
        Field {
            name: name.into(),
            dtype,
        }
    }
}

/// Ordered, non-empty list of uniquely named columns. Name matching is
/// case-insensitive everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    fields: Vec<Field>,
}

impl Schema {
    pub fn new(fields: Vec<Field>) -> Result<Schema, StorageError> {
        if fields.is_empty() {
            return Err(StorageError::InvalidSchema("schema has no columns".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &fields {
            if !seen.insert(f.name.to_ascii_lowercase()) {
                return Err(StorageError::InvalidSchema(format!(
                    "duplicate column name `{}`",
                    f.name
                )));
            }
        }
        Ok(Schema { fields })
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, i: usize) -> &Field {
        &self.fields[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields
            .iter()
            .position(|f| f.name.eq_ignore_ascii_case(name))
    }

    /// Checks arity and per-value type agreement; nulls pass any type.
    pub fn validate_row(&self, row: &Row) -> Result<(), StorageError> {
        if row.len() != self.fields.len() {
            return Err(StorageError::SchemaViolation(format!(
                "row has {} values, schema has {} columns",
                row.len(),
                self.fields.len()
            )));
        }
        for (i, v) in row.iter().enumerate() {
            if let Some(v) = v {
                if v.data_type() != self.fields[i].dtype {
                    return Err(StorageError::SchemaViolation(format!(
                        "column `{}` expects {}, got {}",
                        self.fields[i].name,
                        self.fields[i].dtype,
                        v.data_type()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        // Standard FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn float_canonicalization() {
        assert_eq!(
            hash_value(&Some(Value::Float64(0.0))),
            hash_value(&Some(Value::Float64(-0.0)))
        );
        assert_eq!(Value::Float64(f64::NAN), Value::Float64(-f64::NAN));
        assert_eq!(Value::Float64(0.0), Value::Float64(-0.0));
    }

    #[test]
    fn value_order_is_total_within_type() {
        let mut vals = vec![
            Some(Value::Float64(2.5)),
            None,
            Some(Value::Float64(f64::NAN)),
            Some(Value::Float64(-1.0)),
        ];
        vals.sort_by(cmp_opt);
        assert_eq!(vals[0], None);
        assert_eq!(vals[1], Some(Value::Float64(-1.0)));
        assert_eq!(vals[2], Some(Value::Float64(2.5)));
    }

    #[test]
    fn batch_codec_round_trip() {
        let rows: RowBatch = vec![
            vec![
                Some(Value::Int64(-42)),
                None,
                Some(Value::Utf8("héllo".into())),
            ],
            vec![
                Some(Value::Float64(1.0 / 3.0)),
                Some(Value::Boolean(true)),
                Some(Value::Date(19_000)),
            ],
        ];
        let bytes = encode_batch(&rows);
        assert_eq!(decode_batch(&bytes).unwrap(), rows);
    }

    #[test]
    fn date_round_trip() {
        let d = parse_date("2000-01-15").unwrap();
        assert_eq!(format_date(d), "2000-01-15");
        assert_eq!(parse_date("1970-01-01"), Some(0));
    }

    #[test]
    fn schema_rejects_duplicates_case_insensitively() {
        let err = Schema::new(vec![
            Field::new("a", DataType::Int64),
            Field::new("A", DataType::Utf8),
        ]);
        assert!(err.is_err());
        assert!(Schema::new(vec![]).is_err());
    }
}
