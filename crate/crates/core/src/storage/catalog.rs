//! Table catalog and its human-readable manifest.
//!
//! The catalog is master-side metadata: schemas, per-partition statistics
//! for pruning, and each table's defining lineage. Partition payloads live
//! on workers. Publication is atomic: readers observe either the previous
//! catalog state or the fully built table, never a partial one.

use std::path::PathBuf;
use std::sync::Arc;

use indexmap::IndexMap;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::StorageError;
use crate::lineage::DatasetNode;
use crate::storage::stats::PartitionStats;
use crate::value::{DataType, Field, Schema};

#[derive(Debug)]
pub struct TableEntry {
    pub name: String,
    pub schema: Schema,
    /// Partition payloads kept resident in worker memory.
    pub cached: bool,
    /// Backing file for externally loaded tables.
    pub source_path: Option<PathBuf>,
    /// Defining SELECT for tables created via CREATE TABLE ... AS.
    pub defining_query: Option<String>,
    pub distribute_key: Option<String>,
    pub copartition_of: Option<String>,
    /// Root of the lineage graph that produces this table's partitions;
    /// partition i of the table is partition i of this dataset.
    pub defining: Arc<DatasetNode>,
    /// Per-partition statistics collected while loading.
    pub stats: Vec<PartitionStats>,
}

impl TableEntry {
    pub fn partition_count(&self) -> usize {
        self.defining.partition_count
    }

    pub fn row_count(&self) -> usize {
        self.stats.iter().map(|s| s.row_count).sum()
    }
}

#[derive(Default)]
pub struct Catalog {
    tables: RwLock<IndexMap<String, Arc<TableEntry>>>,
}

impl Catalog {
    pub fn new() -> Catalog {
        Catalog::default()
    }

    pub fn get(&self, name: &str) -> Result<Arc<TableEntry>, StorageError> {
        self.tables
            .read()
            .get(&name.to_ascii_lowercase())
            .cloned()
            .ok_or_else(|| StorageError::UnknownTable(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tables.read().contains_key(&name.to_ascii_lowercase())
    }

    /// Atomic publication; fails if the name is taken.
    pub fn publish(&self, entry: TableEntry) -> Result<Arc<TableEntry>, StorageError> {
        let key = entry.name.to_ascii_lowercase();
        let entry = Arc::new(entry);
        let mut tables = self.tables.write();
        if tables.contains_key(&key) {
            return Err(StorageError::TableExists(entry.name.clone()));
        }
        tables.insert(key, entry.clone());
        Ok(entry)
    }

    pub fn drop_table(&self, name: &str) -> Result<Arc<TableEntry>, StorageError> {
        self.tables
            .write()
            .shift_remove(&name.to_ascii_lowercase())
            .ok_or_else(|| StorageError::UnknownTable(name.to_string()))
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.read().values().map(|t| t.name.clone()).collect()
    }

    pub fn entries(&self) -> Vec<Arc<TableEntry>> {
        self.tables.read().values().cloned().collect()
    }
}

// --- manifest ---------------------------------------------------------------

/// On-disk catalog description (TOML). File-backed tables carry schema and
/// source path; derived tables carry the defining query and are replayed in
/// order after the file tables when a manifest is opened.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Manifest {
    #[serde(default)]
    pub table: Vec<ManifestTable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTable {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default)]
    pub cache: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribute_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub copartition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<usize>,
    /// (name, type) pairs; empty for query-defined tables.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<(String, String)>,
}

impl ManifestTable {
    pub fn schema(&self) -> Result<Schema, StorageError> {
        let fields = self
            .columns
            .iter()
            .map(|(name, ty)| {
                DataType::parse(ty)
                    .map(|dt| Field::new(name.clone(), dt))
                    .ok_or_else(|| {
                        StorageError::Manifest(format!("unknown column type `{ty}` for `{name}`"))
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Schema::new(fields)
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest, StorageError> {
        toml::from_str(text).map_err(|e| StorageError::Manifest(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    /// Snapshot of a catalog as a manifest.
    pub fn from_catalog(catalog: &Catalog) -> Manifest {
        let table = catalog
            .entries()
            .iter()
            .map(|t| ManifestTable {
                name: t.name.clone(),
                source: t
                    .source_path
                    .as_ref()
                    .map(|p| p.display().to_string()),
                query: t.defining_query.clone(),
                cache: t.cached,
                distribute_key: t.distribute_key.clone(),
                copartition: t.copartition_of.clone(),
                partitions: Some(t.partition_count()),
                columns: if t.defining_query.is_some() {
                    vec![]
                } else {
                    t.schema
                        .fields()
                        .iter()
                        .map(|f| (f.name.clone(), f.dtype.name().to_string()))
                        .collect()
                },
            })
            .collect();
        Manifest { table }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_through_toml() {
        let m = Manifest {
            table: vec![
                ManifestTable {
                    name: "rankings".into(),
                    source: Some("data/rankings.csv".into()),
                    query: None,
                    cache: true,
                    distribute_key: None,
                    copartition: None,
                    partitions: Some(8),
                    columns: vec![
                        ("pageURL".into(), "utf8".into()),
                        ("pageRank".into(), "int64".into()),
                    ],
                },
                ManifestTable {
                    name: "top".into(),
                    source: None,
                    query: Some("SELECT * FROM rankings WHERE pageRank > 10".into()),
                    cache: false,
                    distribute_key: None,
                    copartition: None,
                    partitions: None,
                    columns: vec![],
                },
            ],
        };
        let text = m.to_toml();
        let back = Manifest::parse(&text).unwrap();
        assert_eq!(back.table.len(), 2);
        assert_eq!(back.table[0].name, "rankings");
        assert_eq!(back.table[0].schema().unwrap().len(), 2);
        assert!(back.table[1].query.is_some());
    }
}
