//! EXPLAIN rendering: a stable, line-oriented description of the physical
//! plan. PDE decisions taken at run time are appended by the session after
//! execution.

use std::collections::HashMap;
use std::sync::Arc;

use crate::engine::plan::{ExecKind, ScanInfo, SuffixStep};
use crate::engine::stage::plan_stages;
use crate::lineage::{DatasetId, DatasetNode, OperatorSpec};
use crate::sql::physical::PhysicalQuery;

pub fn explain_physical(pq: &PhysicalQuery) -> String {
    let mut out = String::from("== plan ==\n");
    match &pq.exec.kind {
        ExecKind::Static { root } => {
            let stages = plan_stages(root, &pq.exec.scans, 0, &HashMap::new());
            let mut ordered = stages;
            ordered.sort_by_key(|s| s.id);
            for s in &ordered {
                out.push_str(&format!(
                    "stage {} {} tasks={}\n",
                    s.id,
                    s.kind_name(),
                    s.task_parts.len()
                ));
                for op in &s.ops {
                    out.push_str(&format!("  {op}\n"));
                }
            }
        }
        ExecKind::AdaptiveJoin(aj) => {
            out.push_str("adaptive join: strategy decided at run time\n");
            let hint = match aj.hint {
                Some(crate::pde::BroadcastSide::Left) => " (hinted small, scheduled first)",
                Some(crate::pde::BroadcastSide::Right) => "",
                None => "",
            };
            out.push_str(&format!("  left pre-shuffle{hint}:\n"));
            chain_ops(&aj.left.chain, &pq.exec.scans, &mut out);
            let hint = match aj.hint {
                Some(crate::pde::BroadcastSide::Right) => " (hinted small, scheduled first)",
                _ => "",
            };
            out.push_str(&format!("  right pre-shuffle{hint}:\n"));
            chain_ops(&aj.right.chain, &pq.exec.scans, &mut out);
            if !aj.suffix.is_empty() {
                out.push_str("  after join:\n");
                for step in &aj.suffix {
                    out.push_str(&format!("    {}\n", suffix_name(step)));
                }
            }
        }
    }
    for note in &pq.notes {
        out.push_str(&format!("note: {note}\n"));
    }
    let order: Vec<String> = pq
        .order_by
        .iter()
        .map(|(i, asc)| format!("{}{}", pq.output_schema.field(*i).name, if *asc { "" } else { " desc" }))
        .collect();
    out.push_str(&format!(
        "collect: order_by=[{}] limit={}\n",
        order.join(", "),
        pq.limit.map_or("none".to_string(), |n| n.to_string())
    ));
    out
}

fn chain_ops(node: &Arc<DatasetNode>, scans: &HashMap<DatasetId, ScanInfo>, out: &mut String) {
    if let Some(info) = scans.get(&node.id) {
        out.push_str(&format!(
            "    scan {} partitions={} pruned={} scanned={}\n",
            info.table,
            node.partition_count,
            info.pruned_count(),
            info.scanned()
        ));
        return;
    }
    out.push_str(&format!("    {}\n", node.op.display_name()));
    if !matches!(node.op, OperatorSpec::Source(_)) {
        for p in &node.parents {
            chain_ops(p, scans, out);
        }
    }
}

fn suffix_name(step: &SuffixStep) -> String {
    match step {
        SuffixStep::Filter(e) => format!("filter {e}"),
        SuffixStep::Project(cols) => {
            let names: Vec<&str> = cols.iter().map(|c| c.name.as_str()).collect();
            format!("project [{}]", names.join(", "))
        }
        SuffixStep::Aggregate { keys, aggs } => {
            let names: Vec<&str> = aggs.iter().map(|a| a.name.as_str()).collect();
            format!(
                "aggregate keys={keys:?} aggs=[{}] (local + exchange + merge)",
                names.join(", ")
            )
        }
        SuffixStep::LimitPerPartition(n) => format!("limit {n} (per partition)"),
        SuffixStep::Exchange { keys, count } => format!("exchange hash{keys:?} reducers={count}"),
        SuffixStep::CollectLimit(n) => format!("collect-limit {n}"),
    }
}
