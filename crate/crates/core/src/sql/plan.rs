//! Logical planning: name resolution, type checking, and the logical
//! operator tree the optimizer rewrites.

use std::sync::Arc;

use crate::error::SqlError;
use crate::expr::{comparable, CmpOp, ColRef, Expr};
use crate::lineage::{AggFunc, AggSpec};
use crate::sql::ast::{
    AggCall, AstExpr, ColumnRef, Operand, Projection, SelectStmt,
};
use crate::storage::{Catalog, TableEntry};
use crate::value::{parse_date, DataType, Field, Schema, Value};

#[derive(Debug, Clone)]
pub enum LNode {
    Scan {
        entry: Arc<TableEntry>,
        binding: String,
        /// Output schema; names are binding-qualified when the query needs
        /// disambiguation.
        schema: Schema,
        /// Residual predicate conjuncts, pushed here by the optimizer.
        residual: Vec<Expr>,
    },
    Filter {
        input: Box<LNode>,
        predicate: Expr,
    },
    Project {
        input: Box<LNode>,
        cols: Vec<(usize, String)>,
    },
    Aggregate {
        input: Box<LNode>,
        keys: Vec<usize>,
        aggs: Vec<AggSpec>,
    },
    Join {
        left: Box<LNode>,
        right: Box<LNode>,
        left_key: usize,
        right_key: usize,
    },
    Sort {
        input: Box<LNode>,
        keys: Vec<(usize, bool)>,
    },
    Limit {
        input: Box<LNode>,
        n: usize,
    },
}

impl LNode {
    pub fn schema(&self) -> Schema {
        match self {
            LNode::Scan { schema, .. } => schema.clone(),
            LNode::Filter { input, .. } | LNode::Sort { input, .. } | LNode::Limit { input, .. } => {
                input.schema()
            }
            LNode::Project { input, cols } => {
                let inner = input.schema();
                Schema::new(
                    cols.iter()
                        .map(|(i, name)| Field::new(name.clone(), inner.field(*i).dtype))
                        .collect(),
                )
                .expect("projection schema is valid")
            }
            LNode::Aggregate { input, keys, aggs } => {
                let inner = input.schema();
                let mut fields: Vec<Field> =
                    keys.iter().map(|&k| inner.field(k).clone()).collect();
                for a in aggs {
                    fields.push(Field::new(a.name.clone(), a.output_type()));
                }
                Schema::new(fields).expect("aggregate schema is valid")
            }
            LNode::Join { left, right, .. } => {
                let fields = left
                    .schema()
                    .fields()
                    .iter()
                    .chain(right.schema().fields().iter())
                    .cloned()
                    .collect();
                Schema::new(fields).expect("join schema is valid")
            }
        }
    }
}

/// A fully planned SELECT: the logical tree plus collect-side ordering.
#[derive(Debug, Clone)]
pub struct LogicalPlan {
    pub root: LNode,
    /// ORDER BY over the root's output (index, ascending); applied at
    /// collect time together with the global LIMIT.
    pub order_by: Vec<(usize, bool)>,
    pub limit: Option<usize>,
    pub distribute_by: Option<String>,
}

impl LogicalPlan {
    pub fn output_schema(&self) -> Schema {
        self.root.schema()
    }
}

pub struct Scope {
    /// (binding lowercase, field name lowercase, output index, dtype)
    entries: Vec<(String, String, usize, DataType)>,
}

impl Scope {
    fn of(binding: &str, schema: &Schema, offset: usize) -> Scope {
        Scope {
            entries: schema
                .fields()
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    (
                        binding.to_ascii_lowercase(),
                        // Qualified output names still resolve by their bare
                        // column name.
                        f.name
                            .rsplit('.')
                            .next()
                            .unwrap()
                            .to_ascii_lowercase(),
                        offset + i,
                        f.dtype,
                    )
                })
                .collect(),
        }
    }

    fn concat(mut self, other: Scope) -> Scope {
        self.entries.extend(other.entries);
        self
    }

    fn resolve(&self, col: &ColumnRef) -> Result<(usize, DataType), SqlError> {
        let name = col.name.to_ascii_lowercase();
        let qualifier = col.qualifier.as_ref().map(|q| q.to_ascii_lowercase());
        let matches: Vec<&(String, String, usize, DataType)> = self
            .entries
            .iter()
            .filter(|(b, n, _, _)| *n == name && qualifier.as_ref().is_none_or(|q| q == b))
            .collect();
        match matches.len() {
            0 => Err(SqlError::FieldNotFound(col.to_string())),
            1 => Ok((matches[0].2, matches[0].3)),
            _ => Err(SqlError::AmbiguousColumn(col.to_string())),
        }
    }
}

/// Builds and type-checks a logical plan for a SELECT against the catalog.
pub fn plan_select(stmt: &SelectStmt, catalog: &Catalog) -> Result<LogicalPlan, SqlError> {
    let left_entry = catalog.get(&stmt.from.name)?;
    let left_binding = stmt.from.binding().to_string();

    let (mut node, scope) = match &stmt.join {
        None => {
            let schema = left_entry.schema.clone();
            let scope = Scope::of(&left_binding, &schema, 0);
            (
                LNode::Scan {
                    entry: left_entry,
                    binding: left_binding,
                    schema,
                    residual: vec![],
                },
                scope,
            )
        }
        Some(join) => {
            let right_entry = catalog.get(&join.table.name)?;
            let right_binding = join.table.binding().to_string();
            if right_binding.eq_ignore_ascii_case(&left_binding) {
                return Err(SqlError::PlanError(format!(
                    "duplicate table binding `{right_binding}`"
                )));
            }

            // Qualify colliding column names so the join output schema stays
            // unique.
            let collide = |name: &str| {
                left_entry.schema.index_of(name).is_some()
                    && right_entry.schema.index_of(name).is_some()
            };
            let qualify = |binding: &str, schema: &Schema| -> Schema {
                Schema::new(
                    schema
                        .fields()
                        .iter()
                        .map(|f| {
                            if collide(&f.name) {
                                Field::new(format!("{binding}.{}", f.name), f.dtype)
                            } else {
                                f.clone()
                            }
                        })
                        .collect(),
                )
                .expect("qualified schema is valid")
            };
            let left_schema = qualify(&left_binding, &left_entry.schema);
            let right_schema = qualify(&right_binding, &right_entry.schema);

            let left_scope = Scope::of(&left_binding, &left_schema, 0);
            let right_scope = Scope::of(&right_binding, &right_schema, left_schema.len());
            let scope = Scope {
                entries: left_scope.entries.clone(),
            }
            .concat(Scope {
                entries: right_scope.entries.clone(),
            });

            // Resolve ON sides; each must land entirely on one input.
            let (lk, lt) = resolve_on_side(&join.on_left, &left_scope, &right_scope)?;
            let (rk, rt) = resolve_on_side(&join.on_right, &left_scope, &right_scope)?;
            let ((left_key, left_t), (right_key, right_t)) = match (lk, rk) {
                (OnSide::Left(i), OnSide::Right(j)) => ((i, lt), (j - left_schema.len(), rt)),
                (OnSide::Right(j), OnSide::Left(i)) => ((i, rt), (j - left_schema.len(), lt)),
                _ => {
                    return Err(SqlError::PlanError(
                        "join condition must compare one column from each table".into(),
                    ))
                }
            };
            if left_t != right_t {
                return Err(SqlError::TypeError(format!(
                    "join keys must share a type ({left_t} vs {right_t})"
                )));
            }

            let node = LNode::Join {
                left: Box::new(LNode::Scan {
                    entry: left_entry,
                    binding: left_binding,
                    schema: left_schema,
                    residual: vec![],
                }),
                right: Box::new(LNode::Scan {
                    entry: right_entry,
                    binding: right_binding,
                    schema: right_schema,
                    residual: vec![],
                }),
                left_key,
                right_key,
            };
            (node, scope)
        }
    };

    // WHERE.
    if let Some(w) = &stmt.where_clause {
        let predicate = resolve_predicate(w, &scope, &node.schema())?;
        node = LNode::Filter {
            input: Box::new(node),
            predicate,
        };
    }

    // Projections / aggregation.
    let has_aggs = stmt
        .projections
        .iter()
        .any(|p| matches!(p, Projection::Aggregate { .. }));
    let schema_before = node.schema();

    if has_aggs || !stmt.group_by.is_empty() {
        let keys: Vec<usize> = stmt
            .group_by
            .iter()
            .map(|c| scope.resolve(c).map(|(i, _)| i))
            .collect::<Result<_, _>>()?;
        let mut aggs = Vec::new();
        let mut out_cols: Vec<(AggOrKey, String)> = Vec::new();
        for p in &stmt.projections {
            match p {
                Projection::Star => {
                    return Err(SqlError::PlanError(
                        "SELECT * cannot be combined with aggregation".into(),
                    ))
                }
                Projection::Column { col, alias } => {
                    let (idx, _) = scope.resolve(col)?;
                    let key_pos = keys.iter().position(|&k| k == idx).ok_or_else(|| {
                        SqlError::PlanError(format!(
                            "column `{col}` must appear in GROUP BY or an aggregate"
                        ))
                    })?;
                    let name = alias.clone().unwrap_or_else(|| col.name.clone());
                    out_cols.push((AggOrKey::Key(key_pos), name));
                }
                Projection::Aggregate { func, alias } => {
                    let spec = resolve_agg(func, &scope, alias.as_deref())?;
                    out_cols.push((AggOrKey::Agg(aggs.len()), spec.name.clone()));
                    aggs.push(spec);
                }
            }
        }
        let key_count = keys.len();
        node = LNode::Aggregate {
            input: Box::new(node),
            keys,
            aggs,
        };
        // Reorder aggregate output ([keys..., aggs...]) into SELECT order.
        let cols: Vec<(usize, String)> = out_cols
            .into_iter()
            .map(|(src, name)| {
                let idx = match src {
                    AggOrKey::Key(k) => k,
                    AggOrKey::Agg(a) => key_count + a,
                };
                (idx, name)
            })
            .collect();
        node = LNode::Project {
            input: Box::new(node),
            cols,
        };
    } else {
        // Plain projection.
        let mut cols = Vec::new();
        for p in &stmt.projections {
            match p {
                Projection::Star => {
                    for (i, f) in schema_before.fields().iter().enumerate() {
                        cols.push((i, f.name.clone()));
                    }
                }
                Projection::Column { col, alias } => {
                    let (idx, _) = scope.resolve(col)?;
                    cols.push((idx, alias.clone().unwrap_or_else(|| col.name.clone())));
                }
                Projection::Aggregate { .. } => unreachable!(),
            }
        }
        // Unique output names: later duplicates get positional suffixes.
        let mut seen = std::collections::HashSet::new();
        for (pos, (_, name)) in cols.iter_mut().enumerate() {
            if !seen.insert(name.to_ascii_lowercase()) {
                *name = format!("{name}#{pos}");
                seen.insert(name.to_ascii_lowercase());
            }
        }
        node = LNode::Project {
            input: Box::new(node),
            cols,
        };
    }

    // ORDER BY binds to the output schema (aliases included).
    let out_schema = node.schema();
    let mut order_by = Vec::new();
    for (col, asc) in &stmt.order_by {
        let idx = out_schema
            .index_of(&col.to_string())
            .or_else(|| out_schema.index_of(&col.name))
            .ok_or_else(|| SqlError::FieldNotFound(format!("ORDER BY {col}")))?;
        order_by.push((idx, *asc));
    }
    if !order_by.is_empty() {
        node = LNode::Sort {
            input: Box::new(node),
            keys: order_by.clone(),
        };
    }

    if let Some(n) = stmt.limit {
        node = LNode::Limit {
            input: Box::new(node),
            n,
        };
    }

    Ok(LogicalPlan {
        root: node,
        order_by,
        limit: stmt.limit,
        distribute_by: stmt.distribute_by.clone(),
    })
}

enum AggOrKey {
    Key(usize),
    Agg(usize),
}

enum OnSide {
    Left(usize),
    Right(usize),
}

fn resolve_on_side(
    col: &ColumnRef,
    left: &Scope,
    right: &Scope,
) -> Result<(OnSide, DataType), SqlError> {
    match (left.resolve(col), right.resolve(col)) {
        (Ok((i, t)), Err(SqlError::FieldNotFound(_))) => Ok((OnSide::Left(i), t)),
        (Err(SqlError::FieldNotFound(_)), Ok((j, t))) => Ok((OnSide::Right(j), t)),
        (Ok(_), Ok(_)) => Err(SqlError::AmbiguousColumn(col.to_string())),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

fn resolve_agg(call: &AggCall, scope: &Scope, alias: Option<&str>) -> Result<AggSpec, SqlError> {
    let name = alias
        .map(|a| a.to_string())
        .unwrap_or_else(|| call.default_name());
    let spec = match call {
        AggCall::CountStar => AggSpec {
            func: AggFunc::CountStar,
            arg: None,
            arg_type: None,
            name,
        },
        AggCall::Count { col, distinct } => {
            let (idx, t) = scope.resolve(col)?;
            AggSpec {
                func: if *distinct {
                    AggFunc::CountDistinct
                } else {
                    AggFunc::Count
                },
                arg: Some(idx),
                arg_type: Some(t),
                name,
            }
        }
        AggCall::Sum(col) | AggCall::Avg(col) => {
            let (idx, t) = scope.resolve(col)?;
            if !t.is_numeric() {
                return Err(SqlError::TypeError(format!(
                    "{} requires a numeric column, `{col}` is {t}",
                    call.default_name()
                )));
            }
            AggSpec {
                func: if matches!(call, AggCall::Sum(_)) {
                    AggFunc::Sum
                } else {
                    AggFunc::Avg
                },
                arg: Some(idx),
                arg_type: Some(t),
                name,
            }
        }
        AggCall::Min(col) | AggCall::Max(col) => {
            let (idx, t) = scope.resolve(col)?;
            AggSpec {
                func: if matches!(call, AggCall::Min(_)) {
                    AggFunc::Min
                } else {
                    AggFunc::Max
                },
                arg: Some(idx),
                arg_type: Some(t),
                name,
            }
        }
    };
    Ok(spec)
}

/// Resolves and type-checks a WHERE clause into an executable expression.
pub fn resolve_predicate(
    ast: &AstExpr,
    scope: &Scope,
    schema: &Schema,
) -> Result<Expr, SqlError> {
    Ok(match ast {
        AstExpr::And(parts) => Expr::And(
            parts
                .iter()
                .map(|p| resolve_predicate(p, scope, schema))
                .collect::<Result<_, _>>()?,
        ),
        AstExpr::Compare { op, lhs, rhs } => {
            let (le, lt) = resolve_operand(lhs, scope, schema)?;
            let (re, rt) = resolve_operand(rhs, scope, schema)?;
            let (le, lt, re, rt) = coerce_pair(le, lt, re, rt)?;
            if !comparable(lt, rt) {
                return Err(SqlError::TypeError(format!(
                    "cannot compare {lt} with {rt}"
                )));
            }
            Expr::Compare {
                op: *op,
                lhs: Box::new(le),
                rhs: Box::new(re),
            }
        }
        AstExpr::Between { operand, low, high } => {
            let (e, t) = resolve_operand(operand, scope, schema)?;
            let low = coerce_literal(low.clone(), t)?;
            let high = coerce_literal(high.clone(), t)?;
            for lit in [&low, &high] {
                if !comparable(t, lit.data_type()) {
                    return Err(SqlError::TypeError(format!(
                        "cannot compare {t} with {}",
                        lit.data_type()
                    )));
                }
            }
            Expr::Between {
                expr: Box::new(e),
                low: Box::new(Expr::Literal(Some(low))),
                high: Box::new(Expr::Literal(Some(high))),
            }
        }
        AstExpr::InList { operand, list } => {
            let (e, t) = resolve_operand(operand, scope, schema)?;
            let list = list
                .iter()
                .map(|v| {
                    let v = coerce_literal(v.clone(), t)?;
                    if comparable(t, v.data_type()) {
                        Ok(v)
                    } else {
                        Err(SqlError::TypeError(format!(
                            "IN list value type {} does not match column type {t}",
                            v.data_type()
                        )))
                    }
                })
                .collect::<Result<_, _>>()?;
            Expr::InList {
                expr: Box::new(e),
                list,
            }
        }
    })
}

fn resolve_operand(
    op: &Operand,
    scope: &Scope,
    schema: &Schema,
) -> Result<(Expr, DataType), SqlError> {
    match op {
        Operand::Column(col) => {
            let (idx, t) = scope.resolve(col)?;
            Ok((
                Expr::Column(ColRef {
                    index: idx,
                    name: schema.field(idx).name.clone(),
                }),
                t,
            ))
        }
        Operand::Literal(v) => Ok((Expr::Literal(Some(v.clone())), v.data_type())),
    }
}

/// Date columns accept YYYY-MM-DD string literals.
fn coerce_literal(v: Value, target: DataType) -> Result<Value, SqlError> {
    match (&v, target) {
        (Value::Utf8(s), DataType::Date) => parse_date(s).map(Value::Date).ok_or_else(|| {
            SqlError::TypeError(format!("`{s}` is not a date (expected YYYY-MM-DD)"))
        }),
        _ => Ok(v),
    }
}

fn coerce_pair(
    le: Expr,
    lt: DataType,
    re: Expr,
    rt: DataType,
) -> Result<(Expr, DataType, Expr, DataType), SqlError> {
    // String literal vs date column, either direction.
    if lt == DataType::Date && rt == DataType::Utf8 {
        if let Expr::Literal(Some(v)) = &re {
            let v = coerce_literal(v.clone(), DataType::Date)?;
            return Ok((le, lt, Expr::Literal(Some(v)), DataType::Date));
        }
    }
    if rt == DataType::Date && lt == DataType::Utf8 {
        if let Expr::Literal(Some(v)) = &le {
            let v = coerce_literal(v.clone(), DataType::Date)?;
            return Ok((Expr::Literal(Some(v)), DataType::Date, re, rt));
        }
    }
    Ok((le, lt, re, rt))
}

/// Scope construction for single-table residual resolution (pruning reuse).
pub fn scan_scope(binding: &str, schema: &Schema) -> Scope {
    Scope::of(binding, schema, 0)
}

/// CmpOp re-export for the reference evaluator.
pub fn cmp_matches(op: CmpOp, ord: std::cmp::Ordering) -> bool {
    match op {
        CmpOp::Eq => ord == std::cmp::Ordering::Equal,
        CmpOp::NotEq => ord != std::cmp::Ordering::Equal,
        CmpOp::Lt => ord == std::cmp::Ordering::Less,
        CmpOp::LtEq => ord != std::cmp::Ordering::Greater,
        CmpOp::Gt => ord == std::cmp::Ordering::Greater,
        CmpOp::GtEq => ord != std::cmp::Ordering::Less,
    }
}
