//! Zone-map partition pruning: a partition is skipped only when its column
//! statistics prove the scan predicate cannot be true there. Conservative by
//! construction — a partition that might hold a satisfying row always
//! survives.

use std::cmp::Ordering;

use crate::expr::{compare_values, CmpOp, Expr};
use crate::storage::{ColumnStats, PartitionStats};
use crate::value::Value;

/// Returns one flag per partition; `true` means provably no row satisfies
/// the conjunction and the partition is pruned.
pub fn prune_partitions(conjuncts: &[Expr], stats: &[PartitionStats]) -> Vec<bool> {
    stats
        .iter()
        .map(|p| conjuncts.iter().any(|c| provably_false(c, p)))
        .collect()
}

fn provably_false(expr: &Expr, stats: &PartitionStats) -> bool {
    match expr {
        Expr::Literal(Some(Value::Boolean(false))) | Expr::Literal(None) => true,
        Expr::And(parts) => parts.iter().any(|p| provably_false(p, stats)),
        Expr::Compare { op, lhs, rhs } => match (lhs.as_ref(), rhs.as_ref()) {
            (Expr::Column(c), Expr::Literal(lit)) => {
                col_cmp_never_true(&stats.columns[c.index], *op, lit)
            }
            (Expr::Literal(lit), Expr::Column(c)) => {
                col_cmp_never_true(&stats.columns[c.index], flip(*op), lit)
            }
            _ => false,
        },
        Expr::Between { expr, low, high } => {
            let (Expr::Column(c), Expr::Literal(low), Expr::Literal(high)) =
                (expr.as_ref(), low.as_ref(), high.as_ref())
            else {
                return false;
            };
            let col = &stats.columns[c.index];
            col_cmp_never_true(col, CmpOp::GtEq, low) || col_cmp_never_true(col, CmpOp::LtEq, high)
        }
        Expr::InList { expr, list } => {
            let Expr::Column(c) = expr.as_ref() else {
                return false;
            };
            let col = &stats.columns[c.index];
            list.iter()
                .all(|v| col_cmp_never_true(col, CmpOp::Eq, &Some(v.clone())))
        }
        _ => false,
    }
}

fn flip(op: CmpOp) -> CmpOp {
    match op {
        CmpOp::Lt => CmpOp::Gt,
        CmpOp::LtEq => CmpOp::GtEq,
        CmpOp::Gt => CmpOp::Lt,
        CmpOp::GtEq => CmpOp::LtEq,
        other => other,
    }
}

/// True when `column <op> lit` cannot be true for any stored row.
fn col_cmp_never_true(col: &ColumnStats, op: CmpOp, lit: &Option<Value>) -> bool {
    // Comparison with NULL is never true.
    let Some(lit) = lit else { return true };
    // All-null column: no row can satisfy any comparison.
    let (Some(min), Some(max)) = (&col.min, &col.max) else {
        return true;
    };
    // With the distinct set present, check membership exactly.
    if let Some(set) = &col.distinct {
        return !set
            .iter()
            .any(|m| compare_values(m, lit).is_some_and(|ord| matches(op, ord)));
    }
    let (min_ord, max_ord) = match (compare_values(min, lit), compare_values(max, lit)) {
        (Some(a), Some(b)) => (a, b),
        _ => return false, // incomparable types: never prune
    };
    match op {
        CmpOp::Eq => min_ord == Ordering::Greater || max_ord == Ordering::Less,
        CmpOp::NotEq => min_ord == Ordering::Equal && max_ord == Ordering::Equal,
        CmpOp::Lt => min_ord != Ordering::Less,
        CmpOp::LtEq => min_ord == Ordering::Greater,
        CmpOp::Gt => max_ord != Ordering::Greater,
        CmpOp::GtEq => max_ord == Ordering::Less,
    }
}

fn matches(op: CmpOp, ord: Ordering) -> bool {
    match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::NotEq => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::LtEq => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::GtEq => ord != Ordering::Less,
    }
}
