//! Memory-based shuffle: map tasks materialize per-reducer buckets in
//! memory, spilling large buckets to scratch files with identical read-back
//! semantics. Buckets stay on the producing worker for the job's lifetime so
//! reduce-side retries never rerun the map side.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::EngineError;
use crate::lineage::eval::shuffle_bucket;
use crate::pde::{log_encode_size, HashHistogram, MisraGries, TaskStats};
use crate::value::{batch_byte_size, decode_batch, encode_batch, hash_key, Row, RowBatch, Value};

#[derive(Debug)]
pub enum Bucket {
    Mem(Arc<RowBatch>),
    Spilled {
        path: PathBuf,
        rows: usize,
        bytes: usize,
    },
}

impl Bucket {
    pub fn read(&self) -> Result<Arc<RowBatch>, EngineError> {
        match self {
            Bucket::Mem(rows) => Ok(rows.clone()),
            Bucket::Spilled { path, .. } => {
                let bytes = std::fs::read(path)
                    .map_err(|e| EngineError::ScratchIo(format!("{}: {e}", path.display())))?;
                let rows = decode_batch(&bytes)
                    .map_err(|e| EngineError::ScratchIo(format!("{}: {e}", path.display())))?;
                Ok(Arc::new(rows))
            }
        }
    }

    pub fn row_count(&self) -> usize {
        match self {
            Bucket::Mem(rows) => rows.len(),
            Bucket::Spilled { rows, .. } => *rows,
        }
    }

    pub fn byte_size(&self) -> usize {
        match self {
            Bucket::Mem(rows) => batch_byte_size(rows),
            Bucket::Spilled { bytes, .. } => *bytes,
        }
    }
}

/// One map task's shuffle output: `reducers` buckets plus its stats.
#[derive(Debug)]
pub struct MapOutput {
    pub buckets: Vec<Bucket>,
    pub stats: TaskStats,
}

pub struct ShuffleWriteConfig<'a> {
    pub reducers: usize,
    pub keys: &'a [usize],
    pub spill_threshold_bytes: usize,
    pub scratch_dir: &'a Path,
    /// Unique file prefix: job/exchange/map/attempt.
    pub file_tag: String,
    pub hh_k: usize,
    pub histogram_buckets: usize,
}

/// Partitions task output rows into reducer buckets by key hash, collecting
/// runtime statistics along the way. Buckets above the spill threshold go to
/// scratch files; reading them back yields the exact same rows.
pub fn shuffle_write(rows: &[Row], cfg: &ShuffleWriteConfig) -> Result<MapOutput, EngineError> {
    let reducers = cfg.reducers.max(1);
    let mut buckets: Vec<RowBatch> = vec![Vec::new(); reducers];
    let mut sketch: MisraGries<Row> = MisraGries::new(cfg.hh_k);
    let mut histogram = HashHistogram::new(cfg.histogram_buckets);

    for row in rows {
        let key_row: Row = cfg.keys.iter().map(|&k| row[k].clone()).collect();
        let key_refs: Vec<&Option<Value>> = key_row.iter().collect();
        histogram.update(hash_key(&key_refs));
        sketch.update(key_row);
        buckets[shuffle_bucket(row, cfg.keys, reducers)].push(row.clone());
    }

    let mut size_codes = Vec::with_capacity(reducers);
    let mut record_counts = Vec::with_capacity(reducers);
    let mut size_overflow = false;
    let mut out = Vec::with_capacity(reducers);
    for (r, bucket) in buckets.into_iter().enumerate() {
        let bytes = batch_byte_size(&bucket);
        if bytes as u64 > 32 << 30 {
            size_overflow = true;
        }
        size_codes.push(log_encode_size(bytes as u64));
        record_counts.push(bucket.len() as u32);
        if bytes > cfg.spill_threshold_bytes {
            let path = cfg.scratch_dir.join(format!("{}-r{r}.bucket", cfg.file_tag));
            let encoded = encode_batch(&bucket);
            std::fs::write(&path, &encoded)
                .map_err(|e| EngineError::ScratchIo(format!("{}: {e}", path.display())))?;
            out.push(Bucket::Spilled {
                path,
                rows: bucket.len(),
                bytes,
            });
        } else {
            out.push(Bucket::Mem(Arc::new(bucket)));
        }
    }

    Ok(MapOutput {
        buckets: out,
        stats: TaskStats {
            size_codes,
            record_counts,
            heavy_hitters: sketch.report(cfg.hh_k),
            histogram,
            size_overflow,
        },
    })
}
