//! Rule-based logical optimization: constant folding and predicate pushdown.
//! Semantics-preserving by construction; the equivalence property tests hold
//! it to that.

use crate::expr::Expr;
use crate::sql::plan::{LNode, LogicalPlan};
use crate::value::Value;

pub fn optimize(plan: LogicalPlan) -> LogicalPlan {
    LogicalPlan {
        root: optimize_node(plan.root),
        ..plan
    }
}

fn optimize_node(node: LNode) -> LNode {
    match node {
        LNode::Filter { input, predicate } => {
            let conjuncts: Vec<Expr> = predicate
                .conjuncts()
                .into_iter()
                .map(|c| fold(c.clone()))
                .collect();
            push_conjuncts(optimize_node(*input), conjuncts)
        }
        LNode::Project { input, cols } => LNode::Project {
            input: Box::new(optimize_node(*input)),
            cols,
        },
        LNode::Aggregate { input, keys, aggs } => LNode::Aggregate {
            input: Box::new(optimize_node(*input)),
            keys,
            aggs,
        },
        LNode::Join {
            left,
            right,
            left_key,
            right_key,
        } => LNode::Join {
            left: Box::new(optimize_node(*left)),
            right: Box::new(optimize_node(*right)),
            left_key,
            right_key,
        },
        LNode::Sort { input, keys } => LNode::Sort {
            input: Box::new(optimize_node(*input)),
            keys,
        },
        LNode::Limit { input, n } => LNode::Limit {
            input: Box::new(optimize_node(*input)),
            n,
        },
        leaf @ LNode::Scan { .. } => leaf,
    }
}

/// Places conjuncts as deep as their column references allow; whatever
/// cannot sink stays as a Filter at this level.
fn push_conjuncts(node: LNode, conjuncts: Vec<Expr>) -> LNode {
    if conjuncts.is_empty() {
        return node;
    }
    match node {
        LNode::Scan {
            entry,
            binding,
            schema,
            mut residual,
        } => {
            residual.extend(conjuncts);
            LNode::Scan {
                entry,
                binding,
                schema,
                residual,
            }
        }
        LNode::Filter { input, predicate } => {
            let mut all = conjuncts;
            all.extend(predicate.conjuncts().into_iter().map(|c| fold(c.clone())));
            push_conjuncts(*input, all)
        }
        LNode::Project { input, cols } => {
            // Rewrite through the (rename-only) projection.
            let inner_schema = input.schema();
            let mut pushable = Vec::new();
            let mut stuck = Vec::new();
            for c in conjuncts {
                let remapped = c.remap_columns(&|out_idx| {
                    cols.get(out_idx)
                        .map(|(in_idx, _)| (*in_idx, inner_schema.field(*in_idx).name.clone()))
                });
                match remapped {
                    Some(r) => pushable.push(r),
                    None => stuck.push(c),
                }
            }
            let node = LNode::Project {
                input: Box::new(push_conjuncts(*input, pushable)),
                cols,
            };
            wrap_filter(node, stuck)
        }
        LNode::Join {
            left,
            right,
            left_key,
            right_key,
        } => {
            let left_width = left.schema().len();
            let right_schema = right.schema();
            let mut to_left = Vec::new();
            let mut to_right = Vec::new();
            let mut stuck = Vec::new();
            for c in conjuncts {
                let refs = c.referenced_columns();
                if refs.iter().all(|&i| i < left_width) {
                    to_left.push(c);
                } else if refs.iter().all(|&i| i >= left_width) {
                    let shifted = c
                        .remap_columns(&|i| {
                            Some((i - left_width, right_schema.field(i - left_width).name.clone()))
                        })
                        .expect("shift is total");
                    to_right.push(shifted);
                } else {
                    stuck.push(c);
                }
            }
            let node = LNode::Join {
                left: Box::new(push_conjuncts(*left, to_left)),
                right: Box::new(push_conjuncts(*right, to_right)),
                left_key,
                right_key,
            };
            wrap_filter(node, stuck)
        }
        other => wrap_filter(other, conjuncts),
    }
}

fn wrap_filter(node: LNode, conjuncts: Vec<Expr>) -> LNode {
    if conjuncts.is_empty() {
        node
    } else {
        LNode::Filter {
            input: Box::new(node),
            predicate: Expr::and_all(conjuncts),
        }
    }
}

/// Folds column-free (sub)expressions to boolean literals.
fn fold(expr: Expr) -> Expr {
    if let Expr::And(parts) = expr {
        return Expr::and_all(parts.into_iter().map(fold).collect());
    }
    if expr.referenced_columns().is_empty() {
        let row = Vec::new();
        return match expr.eval_truth(&row) {
            crate::expr::Truth::True => Expr::literal(Value::Boolean(true)),
            crate::expr::Truth::False => Expr::literal(Value::Boolean(false)),
            crate::expr::Truth::Unknown => Expr::Literal(None),
        };
    }
    expr
}
