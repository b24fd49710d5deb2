//! Columnar in-memory store: typed column encodings, per-partition
//! compression selection at load time, partition statistics for map pruning,
//! file ingestion and the table catalog.

pub mod catalog;
pub mod encoding;
pub mod ingest;
pub mod load;
pub mod stats;

pub use catalog::{Catalog, Manifest, ManifestTable, TableEntry};
pub use encoding::{
    choose_encoding, decode_column, encode_column, profile_values, ColumnChunk, ColumnProfile,
    EncodeOptions, EncodedValues, EncodingKind,
};
pub use ingest::{file_fingerprint, read_rows, FileFormat};
pub use load::{
    encode_partition, load_table, route_rows, CachedTable, ColumnarPartition, HashPartitioning,
    StorageOptions, TablePartition,
};
pub use stats::{compute_partition_stats, ColumnStats, PartitionStats};
