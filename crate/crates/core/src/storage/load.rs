//! Table loading: row routing into partitions, per-partition encoding and
//! statistics collection.
//!
//! Loading either splits rows into consecutive partitions of bounded size or
//! routes them by key hash when a distribute key is given. Partition
//! encoding runs data-parallel; decisions are per-partition with no
//! cross-partition coordination. A load either fully succeeds or returns an
//! error; callers never observe a partially built table.

use crate::error::StorageError;
use crate::par::{par_map, ExecMode};
use crate::storage::encoding::{decode_column, encode_column, ColumnChunk, EncodeOptions};
use crate::storage::stats::{compute_partition_stats, PartitionStats};
use crate::value::{hash_value, Row, RowBatch, Schema};

/// Storage-layer tunables.
#[derive(Debug, Clone)]
pub struct StorageOptions {
    pub target_partition_rows: usize,
    pub enum_threshold: usize,
    pub encode: EncodeOptions,
    pub exec_mode: ExecMode,
}

impl Default for StorageOptions {
    fn default() -> Self {
        StorageOptions {
            target_partition_rows: 1024,
            enum_threshold: 32,
            encode: EncodeOptions::default(),
            exec_mode: ExecMode::default(),
        }
    }
}

/// Column chunks for one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnarPartition {
    pub chunks: Vec<ColumnChunk>,
}

impl ColumnarPartition {
    pub fn row_count(&self) -> usize {
        self.chunks.first().map_or(0, |c| c.row_count)
    }

    pub fn encoded_bytes(&self) -> usize {
        self.chunks.iter().map(ColumnChunk::payload_bytes).sum()
    }

    pub fn decode_rows(&self) -> Result<RowBatch, StorageError> {
        let cols: Vec<_> = self
            .chunks
            .iter()
            .map(decode_column)
            .collect::<Result<_, _>>()?;
        let n = self.row_count();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            rows.push(cols.iter().map(|c| c[i].clone()).collect());
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone)]
pub struct TablePartition {
    pub columns: ColumnarPartition,
    pub stats: PartitionStats,
}

/// How a table's rows map to partitions when hash-distributed.
#[derive(Debug, Clone, PartialEq)]
pub struct HashPartitioning {
    /// Column index of the distribute key.
    pub key: usize,
    pub count: usize,
}

/// A fully loaded, encoded, stat-collected in-memory table.
#[derive(Debug, Clone)]
pub struct CachedTable {
    pub schema: Schema,
    pub partitions: Vec<TablePartition>,
    pub partitioning: Option<HashPartitioning>,
}

impl CachedTable {
    pub fn row_count(&self) -> usize {
        self.partitions.iter().map(|p| p.stats.row_count).sum()
    }

    pub fn encoded_bytes(&self) -> usize {
        self.partitions
            .iter()
            .map(|p| p.columns.encoded_bytes())
            .sum()
    }
}

/// Routes rows into partition row-batches without encoding them.
///
/// Without a distribute key, consecutive slices of at most
/// `target_partition_rows`. With one, `hash(key) mod count` routing where
/// `count` defaults to the consecutive-split partition count.
pub fn route_rows(
    rows: Vec<Row>,
    target_partition_rows: usize,
    distribute: Option<(usize, Option<usize>)>,
) -> (Vec<RowBatch>, Option<HashPartitioning>) {
    let target = target_partition_rows.max(1);
    match distribute {
        None => {
            let mut parts = Vec::new();
            let mut it = rows.into_iter();
            loop {
                let chunk: Vec<Row> = it.by_ref().take(target).collect();
                if chunk.is_empty() {
                    break;
                }
                parts.push(chunk);
            }
            (parts, None)
        }
        Some((key, count)) => {
            let count = count
                .unwrap_or_else(|| rows.len().div_ceil(target))
                .max(1);
            let mut parts: Vec<RowBatch> = vec![Vec::new(); count];
            for row in rows {
                let bucket = (hash_value(&row[key]) % count as u64) as usize;
                parts[bucket].push(row);
            }
            (
                parts,
                Some(HashPartitioning { key, count }),
            )
        }
    }
}

/// Encodes one partition's rows column by column and collects its stats.
pub fn encode_partition(
    rows: &[Row],
    schema: &Schema,
    opts: &StorageOptions,
) -> Result<TablePartition, StorageError> {
    let n_cols = schema.len();
    let mut columns: Vec<Vec<Option<crate::value::Value>>> =
        (0..n_cols).map(|_| Vec::with_capacity(rows.len())).collect();
    for row in rows {
        for (c, v) in row.iter().enumerate() {
            columns[c].push(v.clone());
        }
    }
    let chunks = columns
        .iter()
        .enumerate()
        .map(|(c, col)| encode_column(col, schema.field(c).dtype, &opts.encode))
        .collect::<Result<Vec<_>, _>>()?;
    let stats = compute_partition_stats(&columns, opts.enum_threshold);
    Ok(TablePartition {
        columns: ColumnarPartition { chunks },
        stats,
    })
}

/// Loads rows into a [`CachedTable`]: validate, route, encode, collect stats.
pub fn load_table(
    rows: Vec<Row>,
    schema: &Schema,
    opts: &StorageOptions,
    distribute: Option<(usize, Option<usize>)>,
) -> Result<CachedTable, StorageError> {
    for (i, row) in rows.iter().enumerate() {
        schema
            .validate_row(row)
            .map_err(|e| StorageError::SchemaViolation(format!("row {i}: {e}")))?;
    }
    let (batches, partitioning) = route_rows(rows, opts.target_partition_rows, distribute);
    let partitions = par_map(opts.exec_mode, batches, |batch| {
        encode_partition(&batch, schema, opts)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(CachedTable {
        schema: schema.clone(),
        partitions,
        partitioning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{DataType, Field, Value};

    fn schema() -> Schema {
        Schema::new(vec![
            Field::new("k", DataType::Int64),
            Field::new("s", DataType::Utf8),
        ])
        .unwrap()
    }

    fn rows(n: usize) -> Vec<Row> {
        (0..n)
            .map(|i| {
                vec![
                    Some(Value::Int64(i as i64)),
                    Some(Value::Utf8(format!("v{}", i % 7))),
                ]
            })
            .collect()
    }

    fn opts(target: usize) -> StorageOptions {
        StorageOptions {
            target_partition_rows: target,
            ..StorageOptions::default()
        }
    }

    #[test]
    fn consecutive_split_sizes() {
        let t = load_table(rows(10), &schema(), &opts(4), None).unwrap();
        let sizes: Vec<usize> = t.partitions.iter().map(|p| p.stats.row_count).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert!(t.partitioning.is_none());
    }

    #[test]
    fn empty_table_has_zero_partitions() {
        let t = load_table(vec![], &schema(), &opts(4), None).unwrap();
        assert!(t.partitions.is_empty());
    }

    #[test]
    fn distribute_routing_is_deterministic_and_correct() {
        let t1 = load_table(rows(1000), &schema(), &opts(100), Some((0, Some(8)))).unwrap();
        let t2 = load_table(rows(1000), &schema(), &opts(100), Some((0, Some(8)))).unwrap();
        assert_eq!(t1.partitions.len(), 8);
        for (p1, p2) in t1.partitions.iter().zip(&t2.partitions) {
            assert_eq!(
                p1.columns.decode_rows().unwrap(),
                p2.columns.decode_rows().unwrap()
            );
        }
        // Routing invariant: hash(key) mod count == partition index.
        for (i, p) in t1.partitions.iter().enumerate() {
            for row in p.columns.decode_rows().unwrap() {
                assert_eq!(hash_value(&row[0]) % 8, i as u64);
            }
        }
    }

    #[test]
    fn stats_cover_all_stored_values() {
        let t = load_table(rows(64), &schema(), &opts(16), None).unwrap();
        for p in &t.partitions {
            let decoded = p.columns.decode_rows().unwrap();
            for row in &decoded {
                for (c, v) in row.iter().enumerate() {
                    let Some(v) = v else { continue };
                    let st = &p.stats.columns[c];
                    assert!(v >= st.min.as_ref().unwrap());
                    assert!(v <= st.max.as_ref().unwrap());
                    if let Some(set) = &st.distinct {
                        assert!(set.contains(v));
                    }
                }
            }
        }
    }

    #[test]
    fn schema_violation_aborts_load() {
        let mut bad = rows(5);
        bad[3][0] = Some(Value::Utf8("oops".into()));
        let err = load_table(bad, &schema(), &opts(4), None);
        assert!(matches!(err, Err(StorageError::SchemaViolation(_))));
    }
}
