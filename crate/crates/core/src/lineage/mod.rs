//! Immutable partitioned datasets defined by deterministic coarse-grained
//! operators, plus the lineage graph that lets any lost partition be
//! recomputed from base data.
//!
//! Determinism contract: every operator defines its output order (aggregates
//! emit groups sorted by key, joins emit probe-major with build matches in
//! build order, exchanges concatenate map inputs by index), so evaluating a
//! partition twice yields byte-identical rows. Row functions are registered
//! named values carrying serialized parameters, never raw closures, so
//! lineage replay works after the original context is gone.

pub mod aggregate;
pub mod eval;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::error::LineageError;
use crate::expr::Expr;
use crate::storage::FileFormat;
use crate::value::{Row, RowBatch, Schema, Value};

pub use aggregate::{AggFunc, AggSpec};
pub use eval::{evaluate_partition, lineage_closure, recompute_partition, EvalContext};

pub type DatasetId = u64;

/// Hash-partitioning property of a dataset: every row in partition `i`
/// satisfies `hash(keys) mod count == i`. Key indices refer to the dataset's
/// own output schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    pub keys: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinSide {
    Left,
    Right,
}

/// One projected output column: input position plus output name.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectCol {
    pub input: usize,
    pub name: String,
}

/// External data feeding a source dataset. Files are snapshotted (length +
/// content digest) when the dataset is created; replay fails loudly if the
/// file changed since.
#[derive(Debug, Clone)]
pub enum SourceSpec {
    File(FileSnapshot),
    /// Immutable in-memory rows, partitioned like a file source.
    Inline { rows: Arc<RowBatch>, target_rows: usize },
}

#[derive(Debug, Clone)]
pub struct FileSnapshot {
    pub path: PathBuf,
    pub format: FileFormat,
    pub schema: Schema,
    pub byte_len: u64,
    pub digest: String,
    pub row_count: usize,
    pub target_rows: usize,
}

/// The deterministic operator defining a dataset from its parents.
#[derive(Debug, Clone)]
pub enum OperatorSpec {
    Source(SourceSpec),
    /// Per-row function from the registry; params are plain values so the
    /// lineage graph stays serializable and replayable.
    Map { function: String, params: Vec<Value> },
    Filter { predicate: Expr },
    Project { columns: Vec<ProjectCol> },
    /// Repartition by key hash into `reducers` partitions. Output partition
    /// r concatenates the matching rows of parent partitions in index order.
    ShuffleExchange { keys: Vec<usize>, reducers: usize },
    /// Per-partition partial aggregation, groups sorted by key.
    LocalAggregate { keys: Vec<usize>, aggs: Vec<AggSpec> },
    /// Merges partial rows (already routed by key hash) into final groups.
    /// `keys` is the original aggregation's parent-relative key list, used
    /// to reconstruct the partial row layout.
    MergeAggregate { keys: Vec<usize>, aggs: Vec<AggSpec> },
    /// Per-partition equi-join of co-partitioned inputs; parents are
    /// [left, right], output columns are left then right.
    HashJoinLocal {
        left_keys: Vec<usize>,
        right_keys: Vec<usize>,
    },
    /// Join with the build side replicated to every probe partition.
    /// Parents are [left, right]; output partition i pairs probe partition i
    /// against the whole build side.
    BroadcastJoin {
        build_side: JoinSide,
        build_keys: Vec<usize>,
        probe_keys: Vec<usize>,
    },
    Limit { n: usize },
    /// Glues fine parent partitions into coarse ones; output j concatenates
    /// assigned fine partitions in ascending index order.
    Coalesce {
        assignment: Vec<usize>,
        coarse_count: usize,
    },
}

impl OperatorSpec {
    pub fn display_name(&self) -> String {
        match self {
            OperatorSpec::Source(SourceSpec::File(s)) => {
                format!("source file {}", s.path.display())
            }
            OperatorSpec::Source(SourceSpec::Inline { .. }) => "source inline".into(),
            OperatorSpec::Map { function, .. } => format!("map {function}"),
            OperatorSpec::Filter { predicate } => format!("filter {predicate}"),
            OperatorSpec::Project { columns } => {
                let names: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
                format!("project [{}]", names.join(", "))
            }
            OperatorSpec::ShuffleExchange { keys, reducers } => {
                format!("exchange hash{keys:?} reducers={reducers}")
            }
            OperatorSpec::LocalAggregate { keys, aggs } => {
                format!("local-aggregate keys={keys:?} aggs={}", agg_names(aggs))
            }
            OperatorSpec::MergeAggregate { aggs, .. } => {
                format!("merge-aggregate aggs={}", agg_names(aggs))
            }
            OperatorSpec::HashJoinLocal { .. } => "hash-join-local".into(),
            OperatorSpec::BroadcastJoin { build_side, .. } => {
                format!(
                    "broadcast-join build={}",
                    match build_side {
                        JoinSide::Left => "left",
                        JoinSide::Right => "right",
                    }
                )
            }
            OperatorSpec::Limit { n } => format!("limit {n}"),
            OperatorSpec::Coalesce {
                assignment,
                coarse_count,
            } => format!("coalesce {}->{}", assignment.len(), coarse_count),
        }
    }
}

fn agg_names(aggs: &[AggSpec]) -> String {
    let names: Vec<&str> = aggs.iter().map(|a| a.name.as_str()).collect();
    format!("[{}]", names.join(", "))
}

/// An immutable dataset definition: operator, parents, shape.
#[derive(Debug)]
pub struct DatasetNode {
    pub id: DatasetId,
    pub op: OperatorSpec,
    pub parents: Vec<Arc<DatasetNode>>,
    pub partition_count: usize,
    pub schema: Schema,
    pub partitioning: Option<Partitioning>,
    /// Computed partitions of this node are worth keeping resident.
    pub cache: bool,
}

// --- row function registry ----------------------------------------------

/// A pure, registered per-row function. Implementations must be
/// deterministic in (row, params) for lineage replay to hold.
pub trait RowFunction: Send + Sync {
    fn output_schema(&self, input: &Schema, params: &[Value]) -> Result<Schema, LineageError>;
    fn apply(&self, row: &Row, params: &[Value]) -> Row;
}

#[derive(Default)]
pub struct FunctionRegistry {
    fns: RwLock<HashMap<String, Arc<dyn RowFunction>>>,
}

impl FunctionRegistry {
    pub fn new() -> FunctionRegistry {
        FunctionRegistry::default()
    }

    pub fn register(&self, name: &str, f: Arc<dyn RowFunction>) {
        self.fns.write().insert(name.to_string(), f);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn RowFunction>, LineageError> {
        self.fns
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| LineageError::UnknownFunction(name.to_string()))
    }
}

// --- partition store ------------------------------------------------------

/// Where computed partitions live. Implementations provide interior
/// mutability; duplicate concurrent publications of the same partition are
/// permitted and must carry identical content (last write wins harmlessly).
pub trait PartitionStore: Sync {
    fn get(&self, id: DatasetId, index: usize) -> Option<Arc<RowBatch>>;
    fn put(&self, node: &DatasetNode, index: usize, rows: &Arc<RowBatch>);
    /// All partitions of a dataset concatenated, when the store can serve
    /// that directly (broadcast variables). `None` falls back to
    /// per-partition evaluation.
    fn whole_dataset(&self, _id: DatasetId) -> Option<Arc<RowBatch>> {
        None
    }
}

/// Simple shared in-memory store; keeps everything it is given.
#[derive(Default)]
pub struct MemoryStore {
    map: RwLock<HashMap<(DatasetId, usize), Arc<RowBatch>>>,
}

impl MemoryStore {
    pub fn new() -> MemoryStore {
        MemoryStore::default()
    }

    pub fn evict(&self, id: DatasetId, index: usize) -> bool {
        self.map.write().remove(&(id, index)).is_some()
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PartitionStore for MemoryStore {
    fn get(&self, id: DatasetId, index: usize) -> Option<Arc<RowBatch>> {
        self.map.read().get(&(id, index)).cloned()
    }

    fn put(&self, node: &DatasetNode, index: usize, rows: &Arc<RowBatch>) {
        self.map.write().insert((node.id, index), rows.clone());
    }
}

// --- node construction ----------------------------------------------------

/// Allocates dataset ids and builds nodes with computed schemas and
/// propagated partitioning. One builder per session keeps ids unique.
pub struct NodeBuilder {
    next_id: AtomicU64,
    registry: Arc<FunctionRegistry>,
}

impl NodeBuilder {
    pub fn new(registry: Arc<FunctionRegistry>) -> NodeBuilder {
        NodeBuilder {
            next_id: AtomicU64::new(1),
            registry,
        }
    }

    pub fn registry(&self) -> &Arc<FunctionRegistry> {
        &self.registry
    }

    fn fresh_id(&self) -> DatasetId {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    pub fn source_file(&self, snapshot: FileSnapshot) -> Arc<DatasetNode> {
        let partition_count = snapshot.row_count.div_ceil(snapshot.target_rows.max(1));
        Arc::new(DatasetNode {
            id: self.fresh_id(),
            schema: snapshot.schema.clone(),
            op: OperatorSpec::Source(SourceSpec::File(snapshot)),
            parents: vec![],
            partition_count,
            partitioning: None,
            cache: false,
        })
    }

    pub fn source_inline(
        &self,
        rows: Arc<RowBatch>,
        schema: Schema,
        target_rows: usize,
    ) -> Arc<DatasetNode> {
        let partition_count = rows.len().div_ceil(target_rows.max(1));
        Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::Source(SourceSpec::Inline { rows, target_rows }),
            parents: vec![],
            partition_count,
            schema,
            partitioning: None,
            cache: false,
        })
    }

    pub fn map(
        &self,
        parent: Arc<DatasetNode>,
        function: &str,
        params: Vec<Value>,
    ) -> Result<Arc<DatasetNode>, LineageError> {
        let schema = self
            .registry
            .get(function)?
            .output_schema(&parent.schema, &params)?;
        Ok(Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::Map {
                function: function.to_string(),
                params,
            },
            partition_count: parent.partition_count,
            schema,
            partitioning: None,
            parents: vec![parent],
            cache: false,
        }))
    }

    pub fn filter(&self, parent: Arc<DatasetNode>, predicate: Expr) -> Arc<DatasetNode> {
        Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::Filter { predicate },
            partition_count: parent.partition_count,
            schema: parent.schema.clone(),
            partitioning: parent.partitioning.clone(),
            parents: vec![parent],
            cache: false,
        })
    }

    pub fn project(
        &self,
        parent: Arc<DatasetNode>,
        columns: Vec<ProjectCol>,
    ) -> Result<Arc<DatasetNode>, LineageError> {
        let fields = columns
            .iter()
            .map(|c| crate::value::Field::new(c.name.clone(), parent.schema.field(c.input).dtype))
            .collect();
        let schema = Schema::new(fields)?;
        // Partitioning survives only if every key column survives.
        let partitioning = parent.partitioning.as_ref().and_then(|p| {
            let keys = p
                .keys
                .iter()
                .map(|k| columns.iter().position(|c| c.input == *k))
                .collect::<Option<Vec<_>>>()?;
            Some(Partitioning {
                keys,
                count: p.count,
            })
        });
        Ok(Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::Project { columns },
            partition_count: parent.partition_count,
            schema,
            partitioning,
            parents: vec![parent],
            cache: false,
        }))
    }

    pub fn exchange(
        &self,
        parent: Arc<DatasetNode>,
        keys: Vec<usize>,
        reducers: usize,
    ) -> Arc<DatasetNode> {
        Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::ShuffleExchange {
                keys: keys.clone(),
                reducers,
            },
            partition_count: reducers,
            schema: parent.schema.clone(),
            partitioning: Some(Partitioning {
                keys,
                count: reducers,
            }),
            parents: vec![parent],
            cache: false,
        })
    }

    pub fn local_aggregate(
        &self,
        parent: Arc<DatasetNode>,
        keys: Vec<usize>,
        aggs: Vec<AggSpec>,
    ) -> Result<Arc<DatasetNode>, LineageError> {
        let schema = aggregate::partial_schema(&parent.schema, &keys, &aggs)?;
        Ok(Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::LocalAggregate { keys, aggs },
            partition_count: parent.partition_count,
            schema,
            partitioning: None,
            parents: vec![parent],
            cache: false,
        }))
    }

    /// `keys` must be the same parent-relative key list the matching
    /// [`NodeBuilder::local_aggregate`] used.
    pub fn merge_aggregate(
        &self,
        parent: Arc<DatasetNode>,
        keys: Vec<usize>,
        aggs: Vec<AggSpec>,
    ) -> Result<Arc<DatasetNode>, LineageError> {
        let schema = aggregate::final_schema(&parent.schema, keys.len(), &aggs)?;
        Ok(Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::MergeAggregate { keys, aggs },
            partition_count: parent.partition_count,
            schema,
            partitioning: None,
            parents: vec![parent],
            cache: false,
        }))
    }

    pub fn hash_join_local(
        &self,
        left: Arc<DatasetNode>,
        right: Arc<DatasetNode>,
        left_keys: Vec<usize>,
        right_keys: Vec<usize>,
    ) -> Result<Arc<DatasetNode>, LineageError> {
        assert_eq!(
            left.partition_count, right.partition_count,
            "local join requires co-partitioned inputs"
        );
        self.hash_join_local_unchecked(left, right, left_keys, right_keys)
    }

    /// Like [`NodeBuilder::hash_join_local`] without the co-partitioning
    /// assertion; used for schema probing of plans that are never evaluated.
    pub fn hash_join_local_unchecked(
        &self,
        left: Arc<DatasetNode>,
        right: Arc<DatasetNode>,
        left_keys: Vec<usize>,
        right_keys: Vec<usize>,
    ) -> Result<Arc<DatasetNode>, LineageError> {
        let schema = join_schema(&left.schema, &right.schema)?;
        let partitioning = left.partitioning.clone();
        Ok(Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::HashJoinLocal {
                left_keys,
                right_keys,
            },
            partition_count: left.partition_count,
            schema,
            partitioning,
            parents: vec![left, right],
            cache: false,
        }))
    }

    pub fn broadcast_join(
        &self,
        left: Arc<DatasetNode>,
        right: Arc<DatasetNode>,
        build_side: JoinSide,
        left_keys: Vec<usize>,
        right_keys: Vec<usize>,
    ) -> Result<Arc<DatasetNode>, LineageError> {
        let schema = join_schema(&left.schema, &right.schema)?;
        let (probe, build_keys, probe_keys) = match build_side {
            JoinSide::Left => (&right, left_keys, right_keys),
            JoinSide::Right => (&left, right_keys, left_keys),
        };
        let partition_count = probe.partition_count;
        let partitioning = match build_side {
            // Probe-side partitioning survives; key indices shift for the
            // right side by the width of the left schema.
            JoinSide::Right => left.partitioning.clone(),
            JoinSide::Left => right.partitioning.as_ref().map(|p| Partitioning {
                keys: p.keys.iter().map(|k| k + left.schema.len()).collect(),
                count: p.count,
            }),
        };
        Ok(Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::BroadcastJoin {
                build_side,
                build_keys,
                probe_keys,
            },
            partition_count,
            schema,
            partitioning,
            parents: vec![left, right],
            cache: false,
        }))
    }

    pub fn limit(&self, parent: Arc<DatasetNode>, n: usize) -> Arc<DatasetNode> {
        Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::Limit { n },
            partition_count: parent.partition_count,
            schema: parent.schema.clone(),
            partitioning: parent.partitioning.clone(),
            parents: vec![parent],
            cache: false,
        })
    }

    pub fn coalesce(
        &self,
        parent: Arc<DatasetNode>,
        assignment: Vec<usize>,
        coarse_count: usize,
    ) -> Arc<DatasetNode> {
        assert_eq!(assignment.len(), parent.partition_count);
        debug_assert!(assignment.iter().all(|&c| c < coarse_count));
        Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: OperatorSpec::Coalesce {
                assignment,
                coarse_count,
            },
            partition_count: coarse_count,
            schema: parent.schema.clone(),
            partitioning: None,
            parents: vec![parent],
            cache: false,
        })
    }

    /// Clones a node over new parents (plan rewriting). The operator and
    /// schema are preserved; the partition count follows the new parents.
    pub fn with_parents(
        &self,
        node: &Arc<DatasetNode>,
        parents: Vec<Arc<DatasetNode>>,
    ) -> Arc<DatasetNode> {
        let partition_count = match &node.op {
            OperatorSpec::Source(_) => node.partition_count,
            OperatorSpec::ShuffleExchange { reducers, .. } => *reducers,
            OperatorSpec::Coalesce { coarse_count, .. } => *coarse_count,
            OperatorSpec::BroadcastJoin { build_side, .. } => match build_side {
                JoinSide::Left => parents[1].partition_count,
                JoinSide::Right => parents[0].partition_count,
            },
            _ => parents[0].partition_count,
        };
        Arc::new(DatasetNode {
            id: self.fresh_id(),
            op: node.op.clone(),
            parents,
            partition_count,
            schema: node.schema.clone(),
            partitioning: node.partitioning.clone(),
            cache: node.cache,
        })
    }

    /// Marks a node's computed partitions as worth keeping resident.
    pub fn cached(&self, node: Arc<DatasetNode>) -> Arc<DatasetNode> {
        Arc::new(DatasetNode {
            id: node.id,
            op: node.op.clone(),
            parents: node.parents.clone(),
            partition_count: node.partition_count,
            schema: node.schema.clone(),
            partitioning: node.partitioning.clone(),
            cache: true,
        })
    }
}

fn join_schema(left: &Schema, right: &Schema) -> Result<Schema, LineageError> {
    let fields = left
        .fields()
        .iter()
        .chain(right.fields().iter())
        .cloned()
        .collect();
    Ok(Schema::new(fields)?)
}
