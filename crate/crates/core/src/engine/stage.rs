//! Stage planning: cuts the dataset DAG into pipelined stages at shuffle and
//! broadcast-build boundaries.
//!
//! A stage owns a chain of narrow operators rooted at one node; its tasks
//! evaluate that root per partition. Exchange nodes become edges between a
//! shuffle-map stage (which materializes buckets) and the consuming stage;
//! broadcast-join build sides become dedicated build stages whose collected
//! output is broadcast to probe tasks. Table-defining roots are treated as
//! sources regardless of their internal shape.

use std::collections::HashMap;
use std::sync::Arc;

use crate::engine::plan::ScanInfo;
use crate::lineage::{DatasetId, DatasetNode, JoinSide, OperatorSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    Pending,
    Running,
    Complete,
    Skipped,
}

#[derive(Debug, Clone)]
pub enum StageKind {
    /// Materializes shuffle buckets for this exchange node.
    ShuffleMap { exchange: Arc<DatasetNode> },
    /// Materializes the build side of a broadcast join; output partitions
    /// concatenate (in index order) into the broadcast variable.
    BroadcastBuild,
    /// Produces the job's result partitions.
    Result,
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub id: usize,
    pub kind: StageKind,
    /// Top narrow node this stage computes per task.
    pub root: Arc<DatasetNode>,
    pub deps: Vec<usize>,
    /// Partition indices with work to do (pruned ones never get tasks).
    pub task_parts: Vec<usize>,
    pub status: StageStatus,
    /// Fused operator names, top down, for EXPLAIN and reports.
    pub ops: Vec<String>,
}

impl Stage {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            StageKind::ShuffleMap { .. } => "shuffle_map",
            StageKind::BroadcastBuild => "broadcast_build",
            StageKind::Result => "result",
        }
    }
}

/// True when partition `part` of `node` can contain rows the job needs.
/// Scan pruning propagates up narrow chains; a co-partitioned inner join
/// needs both sides present.
pub fn partition_needed(
    node: &Arc<DatasetNode>,
    part: usize,
    scans: &HashMap<DatasetId, ScanInfo>,
) -> bool {
    if let Some(info) = scans.get(&node.id) {
        return !info.pruned.get(part).copied().unwrap_or(false);
    }
    match &node.op {
        OperatorSpec::Source(_) => true,
        OperatorSpec::ShuffleExchange { .. } => true,
        OperatorSpec::Coalesce { assignment, .. } => assignment
            .iter()
            .enumerate()
            .any(|(fine, &coarse)| coarse == part && partition_needed(&node.parents[0], fine, scans)),
        OperatorSpec::HashJoinLocal { .. } => {
            partition_needed(&node.parents[0], part, scans)
                && partition_needed(&node.parents[1], part, scans)
        }
        OperatorSpec::BroadcastJoin { build_side, .. } => {
            let probe = match build_side {
                JoinSide::Left => &node.parents[1],
                JoinSide::Right => &node.parents[0],
            };
            partition_needed(probe, part, scans)
        }
        _ => partition_needed(&node.parents[0], part, scans),
    }
}

/// The exchange partitions a task needs pre-fetched: (exchange node, reducer
/// index) pairs reachable from `node` at `part` without crossing stage or
/// table boundaries.
pub fn exchange_requests(
    node: &Arc<DatasetNode>,
    part: usize,
    scans: &HashMap<DatasetId, ScanInfo>,
    out: &mut Vec<(Arc<DatasetNode>, usize)>,
) {
    if scans.contains_key(&node.id) {
        return;
    }
    match &node.op {
        OperatorSpec::Source(_) => {}
        OperatorSpec::ShuffleExchange { .. } => out.push((node.clone(), part)),
        OperatorSpec::Coalesce { assignment, .. } => {
            for (fine, &coarse) in assignment.iter().enumerate() {
                if coarse == part {
                    exchange_requests(&node.parents[0], fine, scans, out);
                }
            }
        }
        OperatorSpec::HashJoinLocal { .. } => {
            exchange_requests(&node.parents[0], part, scans, out);
            exchange_requests(&node.parents[1], part, scans, out);
        }
        OperatorSpec::BroadcastJoin { build_side, .. } => {
            let probe = match build_side {
                JoinSide::Left => &node.parents[1],
                JoinSide::Right => &node.parents[0],
            };
            exchange_requests(probe, part, scans, out);
        }
        _ => exchange_requests(&node.parents[0], part, scans, out),
    }
}

/// First table-defining leaf under `node` at `part`, for locality: the task
/// prefers the worker holding that resident partition.
pub fn locality_leaf(
    node: &Arc<DatasetNode>,
    part: usize,
    scans: &HashMap<DatasetId, ScanInfo>,
) -> Option<(DatasetId, usize)> {
    if scans.contains_key(&node.id) {
        return Some((node.id, part));
    }
    match &node.op {
        OperatorSpec::Source(_) | OperatorSpec::ShuffleExchange { .. } => None,
        OperatorSpec::Coalesce { assignment, .. } => {
            let fine = assignment.iter().position(|&c| c == part)?;
            locality_leaf(&node.parents[0], fine, scans)
        }
        OperatorSpec::HashJoinLocal { .. } => {
            locality_leaf(&node.parents[0], part, scans)
                .or_else(|| locality_leaf(&node.parents[1], part, scans))
        }
        OperatorSpec::BroadcastJoin { build_side, .. } => {
            let probe = match build_side {
                JoinSide::Left => &node.parents[1],
                JoinSide::Right => &node.parents[0],
            };
            locality_leaf(probe, part, scans)
        }
        _ => locality_leaf(&node.parents[0], part, scans),
    }
}

struct Planner<'a> {
    scans: &'a HashMap<DatasetId, ScanInfo>,
    stages: Vec<Stage>,
    next_id: usize,
    /// exchange node id -> its shuffle-map stage id
    map_stages: HashMap<DatasetId, usize>,
    /// build node id -> its broadcast-build stage id
    build_stages: HashMap<DatasetId, usize>,
    /// exchanges whose map side already ran (adaptive joins reuse them)
    completed_exchanges: &'a HashMap<DatasetId, usize>,
}

impl<'a> Planner<'a> {
    /// Walks the narrow chain under `node`, recording fused ops and
    /// dependency edges; returns dep stage ids discovered.
    fn walk_chain(&mut self, node: &Arc<DatasetNode>, ops: &mut Vec<String>, deps: &mut Vec<usize>) {
        if let Some(info) = self.scans.get(&node.id) {
            ops.push(format!(
                "scan {} partitions={} pruned={} scanned={}",
                info.table,
                node.partition_count,
                info.pruned_count(),
                info.scanned()
            ));
            return;
        }
        ops.push(node.op.display_name());
        match &node.op {
            OperatorSpec::Source(_) => {}
            OperatorSpec::ShuffleExchange { .. } => {
                let dep = self.map_stage(node);
                ops.push(format!("<- shuffle from stage {dep}"));
                deps.push(dep);
            }
            OperatorSpec::BroadcastJoin { build_side, .. } => {
                let (build, probe) = match build_side {
                    JoinSide::Left => (&node.parents[0], &node.parents[1]),
                    JoinSide::Right => (&node.parents[1], &node.parents[0]),
                };
                let dep = self.broadcast_stage(build);
                ops.push(format!("<- broadcast from stage {dep}"));
                deps.push(dep);
                self.walk_chain(probe, ops, deps);
            }
            OperatorSpec::HashJoinLocal { .. } => {
                self.walk_chain(&node.parents[0], ops, deps);
                self.walk_chain(&node.parents[1], ops, deps);
            }
            _ => {
                for p in &node.parents {
                    self.walk_chain(p, ops, deps);
                }
            }
        }
    }

    fn new_stage(&mut self, kind: StageKind, root: Arc<DatasetNode>) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        // Reserve the slot before walking so nested stages get later ids.
        self.stages.push(Stage {
            id,
            kind: kind.clone(),
            root: root.clone(),
            deps: vec![],
            task_parts: vec![],
            status: StageStatus::Pending,
            ops: vec![],
        });
        let slot = self.stages.len() - 1;

        let mut ops = Vec::new();
        let mut deps = Vec::new();
        self.walk_chain(&root, &mut ops, &mut deps);
        let task_parts: Vec<usize> = (0..root.partition_count)
            .filter(|&p| partition_needed(&root, p, self.scans))
            .collect();

        let stage = &mut self.stages[slot];
        stage.ops = ops;
        stage.deps = deps;
        stage.task_parts = task_parts;
        id
    }

    fn map_stage(&mut self, exchange: &Arc<DatasetNode>) -> usize {
        if let Some(&sid) = self.completed_exchanges.get(&exchange.id) {
            return sid;
        }
        if let Some(&sid) = self.map_stages.get(&exchange.id) {
            return sid;
        }
        let id = self.new_stage(
            StageKind::ShuffleMap {
                exchange: exchange.clone(),
            },
            exchange.parents[0].clone(),
        );
        self.map_stages.insert(exchange.id, id);
        id
    }

    fn broadcast_stage(&mut self, build: &Arc<DatasetNode>) -> usize {
        if let Some(&sid) = self.build_stages.get(&build.id) {
            return sid;
        }
        let id = self.new_stage(StageKind::BroadcastBuild, build.clone());
        self.build_stages.insert(build.id, id);
        id
    }
}

/// Plans the stage graph for `root`. `completed_exchanges` maps exchange
/// dataset ids to already-finished stage ids (their buckets exist on
/// workers); consumers depend on those ids without re-planning them.
pub fn plan_stages(
    root: &Arc<DatasetNode>,
    scans: &HashMap<DatasetId, ScanInfo>,
    start_id: usize,
    completed_exchanges: &HashMap<DatasetId, usize>,
) -> Vec<Stage> {
    let mut planner = Planner {
        scans,
        stages: Vec::new(),
        next_id: start_id,
        map_stages: HashMap::new(),
        build_stages: HashMap::new(),
        completed_exchanges,
    };
    planner.new_stage(StageKind::Result, root.clone());
    planner.stages
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{CmpOp, ColRef, Expr};
    use crate::lineage::{AggFunc, AggSpec, FunctionRegistry, NodeBuilder};
    use crate::value::{DataType, Field, RowBatch, Schema, Value};
    use std::sync::Arc;

    fn builder() -> NodeBuilder {
        NodeBuilder::new(Arc::new(FunctionRegistry::new()))
    }

    fn source(b: &NodeBuilder, parts: usize) -> Arc<DatasetNode> {
        let rows: RowBatch = (0..parts * 4)
            .map(|i| vec![Some(Value::Int64(i as i64))])
            .collect();
        b.source_inline(
            Arc::new(rows),
            Schema::new(vec![Field::new("x", DataType::Int64)]).unwrap(),
            4,
        )
    }

    fn count_star() -> AggSpec {
        AggSpec {
            func: AggFunc::CountStar,
            arg: None,
            arg_type: None,
            name: "n".into(),
        }
    }

    #[test]
    fn narrow_chain_is_one_stage() {
        let b = builder();
        let src = source(&b, 3);
        let f = b.filter(
            src,
            Expr::Compare {
                op: CmpOp::Gt,
                lhs: Box::new(Expr::Column(ColRef {
                    index: 0,
                    name: "x".into(),
                })),
                rhs: Box::new(Expr::literal(Value::Int64(3))),
            },
        );
        let stages = plan_stages(&f, &HashMap::new(), 0, &HashMap::new());
        assert_eq!(stages.len(), 1);
        assert!(matches!(stages[0].kind, StageKind::Result));
        assert_eq!(stages[0].task_parts.len(), 3);
    }

    #[test]
    fn aggregate_is_two_stages() {
        let b = builder();
        let src = source(&b, 3);
        let local = b.local_aggregate(src, vec![0], vec![count_star()]).unwrap();
        let ex = b.exchange(local, vec![0], 4);
        let merge = b.merge_aggregate(ex, vec![0], vec![count_star()]).unwrap();
        let stages = plan_stages(&merge, &HashMap::new(), 0, &HashMap::new());
        assert_eq!(stages.len(), 2);
        assert!(matches!(stages[0].kind, StageKind::Result));
        assert!(matches!(stages[1].kind, StageKind::ShuffleMap { .. }));
        assert_eq!(stages[0].deps, vec![1]);
        assert_eq!(stages[0].task_parts.len(), 4);
    }

    #[test]
    fn shuffle_join_is_three_stages() {
        let b = builder();
        let l = source(&b, 2);
        let r_src = source(&b, 3);
        let r = b
            .project(
                r_src,
                vec![crate::lineage::ProjectCol {
                    input: 0,
                    name: "y".into(),
                }],
            )
            .unwrap();
        let exl = b.exchange(l, vec![0], 4);
        let exr = b.exchange(r, vec![0], 4);
        let join = b.hash_join_local(exl, exr, vec![0], vec![0]).unwrap();
        let stages = plan_stages(&join, &HashMap::new(), 0, &HashMap::new());
        assert_eq!(stages.len(), 3);
        let maps = stages
            .iter()
            .filter(|s| matches!(s.kind, StageKind::ShuffleMap { .. }))
            .count();
        assert_eq!(maps, 2);
    }

    #[test]
    fn broadcast_join_cuts_at_build_side() {
        let b = builder();
        let build = source(&b, 2);
        let probe_src = source(&b, 5);
        let probe = b
            .project(
                probe_src,
                vec![crate::lineage::ProjectCol {
                    input: 0,
                    name: "y".into(),
                }],
            )
            .unwrap();
        let join = b
            .broadcast_join(build, probe, crate::lineage::JoinSide::Left, vec![0], vec![0])
            .unwrap();
        let stages = plan_stages(&join, &HashMap::new(), 0, &HashMap::new());
        assert_eq!(stages.len(), 2);
        assert!(matches!(stages[1].kind, StageKind::BroadcastBuild));
        assert_eq!(stages[0].task_parts.len(), 5); // probe partitions
    }

    #[test]
    fn pruned_scan_partitions_get_no_tasks() {
        let b = builder();
        let src = source(&b, 4);
        let mut scans = HashMap::new();
        scans.insert(
            src.id,
            ScanInfo {
                table: "t".into(),
                pruned: vec![false, true, true, false],
                cached: true,
            },
        );
        let f = b.filter(src.clone(), Expr::literal(Value::Boolean(true)));
        let stages = plan_stages(&f, &scans, 0, &HashMap::new());
        assert_eq!(stages[0].task_parts, vec![0, 3]);
    }
}
