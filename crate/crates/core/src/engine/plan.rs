//! Executable plan handed to the engine by the planner.
//!
//! Most queries arrive as a concrete dataset DAG. Joins whose strategy is
//! deferred to runtime arrive as two pre-shuffle inputs plus the suffix of
//! operators to apply above the join once it is resolved.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::EngineError;
use crate::expr::Expr;
use crate::lineage::{AggSpec, DatasetId, DatasetNode, NodeBuilder, ProjectCol};
use crate::pde::BroadcastSide;

/// Per-scan planning info: identifies table-defining roots (stage planning
/// treats them as sources) and which of their partitions were pruned.
#[derive(Debug, Clone)]
pub struct ScanInfo {
    pub table: String,
    /// pruned[i] == true means partition i provably cannot satisfy the
    /// query's predicate and is never scanned.
    pub pruned: Vec<bool>,
    pub cached: bool,
}

impl ScanInfo {
    pub fn scanned(&self) -> usize {
        self.pruned.iter().filter(|&&p| !p).count()
    }

    pub fn pruned_count(&self) -> usize {
        self.pruned.iter().filter(|&&p| p).count()
    }
}

#[derive(Debug, Clone)]
pub struct JoinInput {
    /// Narrow chain producing this side's rows.
    pub chain: Arc<DatasetNode>,
    /// Join key positions in the chain's output schema.
    pub keys: Vec<usize>,
}

/// Operators to apply above the join once its strategy is known.
#[derive(Debug, Clone)]
pub enum SuffixStep {
    Filter(Expr),
    Project(Vec<ProjectCol>),
    /// Lowers to local aggregate -> exchange -> merge aggregate.
    Aggregate { keys: Vec<usize>, aggs: Vec<AggSpec> },
    LimitPerPartition(usize),
    /// Repartition by key hash (DISTRIBUTE BY on a derived table).
    Exchange { keys: Vec<usize>, count: usize },
    /// Gather everything into one partition, then cap it (global LIMIT with
    /// lineage-exact semantics).
    CollectLimit(usize),
}

#[derive(Debug, Clone)]
pub struct AdaptiveJoin {
    pub left: JoinInput,
    pub right: JoinInput,
    /// Statically likely-small side, if any: it is pre-shuffled first and a
    /// small observed output skips the other side's pre-shuffle entirely.
    pub hint: Option<BroadcastSide>,
    pub suffix: Vec<SuffixStep>,
}

#[derive(Debug, Clone)]
pub enum ExecKind {
    Static { root: Arc<DatasetNode> },
    AdaptiveJoin(AdaptiveJoin),
}

/// A runnable plan: the DAG (or deferred join), scan boundaries and pruning.
#[derive(Debug, Clone)]
pub struct ExecPlan {
    pub kind: ExecKind,
    pub scans: HashMap<DatasetId, ScanInfo>,
}

impl ExecPlan {
    pub fn kind_static(root: Arc<DatasetNode>, scans: HashMap<DatasetId, ScanInfo>) -> ExecPlan {
        ExecPlan {
            kind: ExecKind::Static { root },
            scans,
        }
    }
}

/// Builds the post-join operator chain over a resolved join node. Aggregate
/// exchanges get `reducers` fine partitions.
pub fn apply_suffix(
    builder: &NodeBuilder,
    mut node: Arc<DatasetNode>,
    suffix: &[SuffixStep],
    reducers: usize,
) -> Result<Arc<DatasetNode>, EngineError> {
    for step in suffix {
        node = match step {
            SuffixStep::Filter(expr) => builder.filter(node, expr.clone()),
            SuffixStep::Project(cols) => builder
                .project(node, cols.clone())
                .map_err(EngineError::Lineage)?,
            SuffixStep::Aggregate { keys, aggs } => {
                let local = builder
                    .local_aggregate(node, keys.clone(), aggs.clone())
                    .map_err(EngineError::Lineage)?;
                let ex_keys: Vec<usize> = (0..keys.len()).collect();
                let r = if keys.is_empty() { 1 } else { reducers };
                let ex = builder.exchange(local, ex_keys, r);
                builder
                    .merge_aggregate(ex, keys.clone(), aggs.clone())
                    .map_err(EngineError::Lineage)?
            }
            SuffixStep::LimitPerPartition(n) => builder.limit(node, *n),
            SuffixStep::Exchange { keys, count } => {
                builder.exchange(node, keys.clone(), *count)
            }
            SuffixStep::CollectLimit(n) => {
                let fine = node.partition_count;
                let gathered = builder.coalesce(node, vec![0; fine], 1);
                builder.limit(gathered, *n)
            }
        };
    }
    Ok(node)
}
