//! Physical planning: lowering the optimized logical tree onto the dataset
//! DAG, with partition pruning, co-partitioned join detection, and deferral
//! of join strategy to the runtime optimizer.

use std::collections::HashMap;
use std::sync::Arc;

use crate::engine::plan::{AdaptiveJoin, ExecKind, ExecPlan, JoinInput, ScanInfo, SuffixStep};
use crate::error::SqlError;
use crate::expr::Expr;
use crate::lineage::{DatasetNode, NodeBuilder, ProjectCol};
use crate::pde::BroadcastSide;
use crate::sql::plan::{LNode, LogicalPlan};
use crate::sql::prune::prune_partitions;
use crate::value::Schema;

/// Which join strategy planning is allowed to choose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForceJoin {
    /// Co-partitioned local join when possible, otherwise decided at runtime.
    #[default]
    Auto,
    Shuffle,
    BroadcastLeft,
    BroadcastRight,
}

impl ForceJoin {
    pub fn parse(s: &str) -> Option<ForceJoin> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Some(ForceJoin::Auto),
            "shuffle" => Some(ForceJoin::Shuffle),
            "broadcast_left" => Some(ForceJoin::BroadcastLeft),
            "broadcast_right" => Some(ForceJoin::BroadcastRight),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlannerOptions {
    pub pruning_on: bool,
    pub force_join: ForceJoin,
    /// Fine reducer count for exchanges planned statically.
    pub reducers: usize,
}

/// A runnable physical query plus collect-side behavior.
#[derive(Debug)]
pub struct PhysicalQuery {
    pub exec: ExecPlan,
    pub output_schema: Schema,
    /// Driver-side ORDER BY over output columns (index, ascending).
    pub order_by: Vec<(usize, bool)>,
    /// Driver-side global LIMIT.
    pub limit: Option<usize>,
    /// Planner notes surfaced in reports (static join choices etc.).
    pub notes: Vec<String>,
}

enum Lowered {
    Chain(Arc<DatasetNode>),
    Deferred(AdaptiveJoin),
}

impl Lowered {
    fn schema(&self, builder: &NodeBuilder) -> Result<Schema, SqlError> {
        match self {
            Lowered::Chain(n) => Ok(n.schema.clone()),
            Lowered::Deferred(aj) => {
                // Schema of join output with the suffix applied; build a
                // throwaway local-join DAG to compute it.
                let probe = builder
                    .hash_join_local_unchecked(
                        aj.left.chain.clone(),
                        aj.right.chain.clone(),
                        aj.left.keys.clone(),
                        aj.right.keys.clone(),
                    )
                    .map_err(|e| SqlError::PlanError(e.to_string()))?;
                let rooted =
                    crate::engine::plan::apply_suffix(builder, probe, &aj.suffix, 1)
                        .map_err(|e| SqlError::PlanError(e.to_string()))?;
                Ok(rooted.schema.clone())
            }
        }
    }
}

struct Lowering<'a> {
    builder: &'a NodeBuilder,
    opts: &'a PlannerOptions,
    scans: HashMap<u64, ScanInfo>,
    notes: Vec<String>,
}

/// Lowers an optimized logical plan to an executable plan.
pub fn physical_plan(
    plan: &LogicalPlan,
    builder: &NodeBuilder,
    opts: &PlannerOptions,
) -> Result<PhysicalQuery, SqlError> {
    let mut ctx = Lowering {
        builder,
        opts,
        scans: HashMap::new(),
        notes: Vec::new(),
    };
    let lowered = ctx.lower(&plan.root)?;
    let output_schema = lowered.schema(builder)?;
    let kind = match lowered {
        Lowered::Chain(root) => ExecKind::Static { root },
        Lowered::Deferred(aj) => ExecKind::AdaptiveJoin(aj),
    };
    Ok(PhysicalQuery {
        exec: ExecPlan {
            kind,
            scans: ctx.scans,
        },
        output_schema,
        order_by: plan.order_by.clone(),
        limit: plan.limit,
        notes: ctx.notes,
    })
}

impl<'a> Lowering<'a> {
    fn lower(&mut self, node: &LNode) -> Result<Lowered, SqlError> {
        match node {
            LNode::Scan {
                entry,
                binding,
                schema,
                residual,
            } => {
                let mut chain = entry.defining.clone();
                // Rename to the (possibly qualified) planning schema.
                if *schema != entry.schema {
                    let cols = schema
                        .fields()
                        .iter()
                        .enumerate()
                        .map(|(i, f)| ProjectCol {
                            input: i,
                            name: f.name.clone(),
                        })
                        .collect();
                    chain = self
                        .builder
                        .project(chain, cols)
                        .map_err(|e| SqlError::PlanError(e.to_string()))?;
                }
                let pruned = if self.opts.pruning_on && !residual.is_empty() {
                    prune_partitions(residual, &entry.stats)
                } else {
                    vec![false; entry.partition_count()]
                };
                // The same table scanned twice keeps a partition unless every
                // use prunes it.
                self.scans
                    .entry(entry.defining.id)
                    .and_modify(|info| {
                        for (a, b) in info.pruned.iter_mut().zip(&pruned) {
                            *a = *a && *b;
                        }
                    })
                    .or_insert(ScanInfo {
                        table: format!("{} ({binding})", entry.name),
                        pruned,
                        cached: entry.cached,
                    });
                if !residual.is_empty() {
                    chain = self
                        .builder
                        .filter(chain, Expr::and_all(residual.clone()));
                }
                Ok(Lowered::Chain(chain))
            }
            LNode::Filter { input, predicate } => match self.lower(input)? {
                Lowered::Chain(c) => Ok(Lowered::Chain(
                    self.builder.filter(c, predicate.clone()),
                )),
                Lowered::Deferred(mut aj) => {
                    aj.suffix.push(SuffixStep::Filter(predicate.clone()));
                    Ok(Lowered::Deferred(aj))
                }
            },
            LNode::Project { input, cols } => {
                let pcols: Vec<ProjectCol> = cols
                    .iter()
                    .map(|(i, name)| ProjectCol {
                        input: *i,
                        name: name.clone(),
                    })
                    .collect();
                match self.lower(input)? {
                    Lowered::Chain(c) => Ok(Lowered::Chain(
                        self.builder
                            .project(c, pcols)
                            .map_err(|e| SqlError::PlanError(e.to_string()))?,
                    )),
                    Lowered::Deferred(mut aj) => {
                        aj.suffix.push(SuffixStep::Project(pcols));
                        Ok(Lowered::Deferred(aj))
                    }
                }
            }
            LNode::Aggregate { input, keys, aggs } => match self.lower(input)? {
                Lowered::Chain(c) => {
                    let local = self
                        .builder
                        .local_aggregate(c, keys.clone(), aggs.clone())
                        .map_err(|e| SqlError::PlanError(e.to_string()))?;
                    let ex_keys: Vec<usize> = (0..keys.len()).collect();
                    let reducers = if keys.is_empty() { 1 } else { self.opts.reducers };
                    let ex = self.builder.exchange(local, ex_keys, reducers);
                    Ok(Lowered::Chain(
                        self.builder
                            .merge_aggregate(ex, keys.clone(), aggs.clone())
                            .map_err(|e| SqlError::PlanError(e.to_string()))?,
                    ))
                }
                Lowered::Deferred(mut aj) => {
                    aj.suffix.push(SuffixStep::Aggregate {
                        keys: keys.clone(),
                        aggs: aggs.clone(),
                    });
                    Ok(Lowered::Deferred(aj))
                }
            },
            LNode::Join {
                left,
                right,
                left_key,
                right_key,
            } => {
                let l = self.lower(left)?;
                let r = self.lower(right)?;
                let (Lowered::Chain(lc), Lowered::Chain(rc)) = (l, r) else {
                    return Err(SqlError::PlanError(
                        "at most one join per query is supported".into(),
                    ));
                };
                self.lower_join(lc, rc, *left_key, *right_key, left, right)
            }
            // Sorting happens at collect; the physical chain is unchanged.
            LNode::Sort { input, .. } => self.lower(input),
            LNode::Limit { input, n } => {
                let has_sort = contains_sort(input);
                match self.lower(input)? {
                    Lowered::Chain(c) => {
                        // A per-partition limit is only sound when no global
                        // sort reorders rows afterwards.
                        if has_sort {
                            Ok(Lowered::Chain(c))
                        } else {
                            Ok(Lowered::Chain(self.builder.limit(c, *n)))
                        }
                    }
                    Lowered::Deferred(mut aj) => {
                        if !has_sort {
                            aj.suffix.push(SuffixStep::LimitPerPartition(*n));
                        }
                        Ok(Lowered::Deferred(aj))
                    }
                }
            }
        }
    }

    fn lower_join(
        &mut self,
        left: Arc<DatasetNode>,
        right: Arc<DatasetNode>,
        left_key: usize,
        right_key: usize,
        left_plan: &LNode,
        right_plan: &LNode,
    ) -> Result<Lowered, SqlError> {
        // Co-partitioned inputs join partition-wise with no exchange at all.
        let co_partitioned = match (&left.partitioning, &right.partitioning) {
            (Some(lp), Some(rp)) => {
                lp.keys == vec![left_key] && rp.keys == vec![right_key] && lp.count == rp.count
            }
            _ => false,
        };
        if co_partitioned && self.opts.force_join == ForceJoin::Auto {
            self.notes
                .push("join strategy=local_copartitioned (no exchange)".into());
            return Ok(Lowered::Chain(
                self.builder
                    .hash_join_local(left, right, vec![left_key], vec![right_key])
                    .map_err(|e| SqlError::PlanError(e.to_string()))?,
            ));
        }

        match self.opts.force_join {
            ForceJoin::Shuffle => {
                let ex_l = self
                    .builder
                    .exchange(left, vec![left_key], self.opts.reducers);
                let ex_r = self
                    .builder
                    .exchange(right, vec![right_key], self.opts.reducers);
                self.notes.push("join strategy=shuffle_join (forced)".into());
                Ok(Lowered::Chain(
                    self.builder
                        .hash_join_local(ex_l, ex_r, vec![left_key], vec![right_key])
                        .map_err(|e| SqlError::PlanError(e.to_string()))?,
                ))
            }
            ForceJoin::BroadcastLeft | ForceJoin::BroadcastRight => {
                let side = if self.opts.force_join == ForceJoin::BroadcastLeft {
                    crate::lineage::JoinSide::Left
                } else {
                    crate::lineage::JoinSide::Right
                };
                self.notes.push(format!(
                    "join strategy=map_join build={} (forced)",
                    if self.opts.force_join == ForceJoin::BroadcastLeft {
                        "left"
                    } else {
                        "right"
                    }
                ));
                Ok(Lowered::Chain(
                    self.builder
                        .broadcast_join(left, right, side, vec![left_key], vec![right_key])
                        .map_err(|e| SqlError::PlanError(e.to_string()))?,
                ))
            }
            ForceJoin::Auto => {
                let hint = join_hint(left_plan, right_plan, &left, &right);
                Ok(Lowered::Deferred(AdaptiveJoin {
                    left: JoinInput {
                        chain: left,
                        keys: vec![left_key],
                    },
                    right: JoinInput {
                        chain: right,
                        keys: vec![right_key],
                    },
                    hint,
                    suffix: vec![],
                }))
            }
        }
    }
}

fn contains_sort(node: &LNode) -> bool {
    match node {
        LNode::Sort { .. } => true,
        LNode::Scan { .. } => false,
        LNode::Filter { input, .. }
        | LNode::Project { input, .. }
        | LNode::Aggregate { input, .. }
        | LNode::Limit { input, .. } => contains_sort(input),
        LNode::Join { left, right, .. } => contains_sort(left) || contains_sort(right),
    }
}

/// Static smallness prior: a filtered side is probably small; otherwise the
/// side whose base table is smaller. No signal, no hint.
fn join_hint(
    left_plan: &LNode,
    right_plan: &LNode,
    _left: &Arc<DatasetNode>,
    _right: &Arc<DatasetNode>,
) -> Option<BroadcastSide> {
    fn filtered(n: &LNode) -> bool {
        matches!(n, LNode::Scan { residual, .. } if !residual.is_empty())
            || matches!(n, LNode::Filter { .. })
    }
    fn base_bytes(n: &LNode) -> Option<usize> {
        match n {
            LNode::Scan { entry, .. } => Some(entry.stats.iter().map(|s| s.byte_size).sum()),
            LNode::Filter { input, .. } | LNode::Project { input, .. } => base_bytes(input),
            _ => None,
        }
    }
    match (filtered(left_plan), filtered(right_plan)) {
        (true, false) => return Some(BroadcastSide::Left),
        (false, true) => return Some(BroadcastSide::Right),
        _ => {}
    }
    match (base_bytes(left_plan), base_bytes(right_plan)) {
        (Some(l), Some(r)) if l < r => Some(BroadcastSide::Left),
        (Some(l), Some(r)) if r < l => Some(BroadcastSide::Right),
        _ => None,
    }
}
