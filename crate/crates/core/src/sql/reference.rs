//! Reference evaluator: straightforward row-at-a-time execution of the AST
//! over raw in-memory tables. It shares nothing with the planner, lineage or
//! engine code paths and defines ground truth for equivalence testing.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::SqlError;
use crate::expr::{compare_values, CmpOp};
use crate::sql::ast::{AggCall, AstExpr, ColumnRef, Operand, Projection, SelectStmt};
use crate::value::{cmp_opt, parse_date, row_canonical_bytes, DataType, Row, RowBatch, Schema, Value};

/// Raw tables: name -> (schema, rows).
pub type RawTables = HashMap<String, (Schema, RowBatch)>;

struct RefScope {
    /// (binding, column name, index, dtype), all lowercase names.
    cols: Vec<(String, String, usize, DataType)>,
}

impl RefScope {
    fn from_table(binding: &str, schema: &Schema, offset: usize) -> RefScope {
        RefScope {
            cols: schema
                .fields()
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    (
                        binding.to_ascii_lowercase(),
                        f.name.to_ascii_lowercase(),
                        offset + i,
                        f.dtype,
                    )
                })
                .collect(),
        }
    }

    fn lookup(&self, col: &ColumnRef) -> Result<(usize, DataType), SqlError> {
        let name = col.name.to_ascii_lowercase();
        let q = col.qualifier.as_ref().map(|q| q.to_ascii_lowercase());
        let hits: Vec<_> = self
            .cols
            .iter()
            .filter(|(b, n, _, _)| *n == name && q.as_ref().map_or(true, |q| q == b))
            .collect();
        match hits.len() {
            0 => Err(SqlError::FieldNotFound(col.to_string())),
            1 => Ok((hits[0].2, hits[0].3)),
            _ => Err(SqlError::AmbiguousColumn(col.to_string())),
        }
    }
}

fn get_table<'a>(
    tables: &'a RawTables,
    name: &str,
) -> Result<&'a (Schema, RowBatch), SqlError> {
    tables
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v)
        .ok_or_else(|| SqlError::PlanError(format!("unknown table `{name}`")))
}

#[derive(PartialEq)]
enum Tri {
    T,
    F,
    U,
}

fn operand_value(
    op: &Operand,
    scope: &RefScope,
    row: &Row,
) -> Result<Option<Value>, SqlError> {
    Ok(match op {
        Operand::Column(c) => row[scope.lookup(c)?.0].clone(),
        Operand::Literal(v) => Some(v.clone()),
    })
}

/// String literals coerce to dates when compared against date values.
fn coerce_for(other: &Value, v: Value) -> Value {
    if let (Value::Date(_), Value::Utf8(s)) = (other, &v) {
        if let Some(d) = parse_date(s) {
            return Value::Date(d);
        }
    }
    v
}

fn eval_pred(expr: &AstExpr, scope: &RefScope, row: &Row) -> Result<Tri, SqlError> {
    Ok(match expr {
        AstExpr::And(parts) => {
            let mut acc = Tri::T;
            for p in parts {
                match eval_pred(p, scope, row)? {
                    Tri::F => return Ok(Tri::F),
                    Tri::U => acc = Tri::U,
                    Tri::T => {}
                }
            }
            acc
        }
        AstExpr::Compare { op, lhs, rhs } => {
            let (a, b) = (
                operand_value(lhs, scope, row)?,
                operand_value(rhs, scope, row)?,
            );
            match (a, b) {
                (Some(a), Some(b)) => {
                    let b = coerce_for(&a, b);
                    let a = coerce_for(&b, a);
                    match compare_values(&a, &b) {
                        Some(ord) => {
                            if cmp_matches(*op, ord) {
                                Tri::T
                            } else {
                                Tri::F
                            }
                        }
                        None => Tri::U,
                    }
                }
                _ => Tri::U,
            }
        }
        AstExpr::Between { operand, low, high } => {
            let v = operand_value(operand, scope, row)?;
            match v {
                None => Tri::U,
                Some(v) => {
                    let low = coerce_for(&v, low.clone());
                    let high = coerce_for(&v, high.clone());
                    let ge = compare_values(&v, &low).map(|o| o != Ordering::Less);
                    let le = compare_values(&v, &high).map(|o| o != Ordering::Greater);
                    match (ge, le) {
                        (Some(true), Some(true)) => Tri::T,
                        (Some(false), _) | (_, Some(false)) => Tri::F,
                        _ => Tri::U,
                    }
                }
            }
        }
        AstExpr::InList { operand, list } => {
            let v = operand_value(operand, scope, row)?;
            match v {
                None => Tri::U,
                Some(v) => {
                    if list.iter().any(|item| {
                        let item = coerce_for(&v, item.clone());
                        compare_values(&v, &item) == Some(Ordering::Equal)
                    }) {
                        Tri::T
                    } else {
                        Tri::F
                    }
                }
            }
        }
    })
}

fn cmp_matches(op: CmpOp, ord: Ordering) -> bool {
    match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::NotEq => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::LtEq => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::GtEq => ord != Ordering::Less,
    }
}

#[derive(Clone)]
enum Acc {
    Count(i64),
    SumInt(Option<i64>),
    SumFloat(Option<f64>),
    Avg(f64, i64),
    Min(Option<Value>),
    Max(Option<Value>),
    Distinct(BTreeSet<Value>),
}

impl Acc {
    fn update(&mut self, v: Option<&Value>) {
        match self {
            Acc::Count(n) => {
                if v.is_some() {
                    *n += 1;
                }
            }
            Acc::SumInt(acc) => {
                if let Some(v) = v {
                    *acc = Some(acc.unwrap_or(0).wrapping_add(v.as_i64().unwrap_or(0)));
                }
            }
            Acc::SumFloat(acc) => {
                if let Some(v) = v {
                    *acc = Some(acc.unwrap_or(0.0) + v.as_f64().unwrap_or(0.0));
                }
            }
            Acc::Avg(sum, n) => {
                if let Some(v) = v {
                    *sum += v.as_f64().unwrap_or(0.0);
                    *n += 1;
                }
            }
            Acc::Min(acc) => {
                if let Some(v) = v {
                    if acc.as_ref().is_none_or(|m| v < m) {
                        *acc = Some(v.clone());
                    }
                }
            }
            Acc::Max(acc) => {
                if let Some(v) = v {
                    if acc.as_ref().is_none_or(|m| v > m) {
                        *acc = Some(v.clone());
                    }
                }
            }
            Acc::Distinct(set) => {
                if let Some(v) = v {
                    set.insert(v.clone());
                }
            }
        }
    }

    fn finish(&self) -> Option<Value> {
        match self {
            Acc::Count(n) => Some(Value::Int64(*n)),
            Acc::SumInt(acc) => acc.map(Value::Int64),
            Acc::SumFloat(acc) => acc.map(Value::Float64),
            Acc::Avg(sum, n) => (*n > 0).then(|| Value::Float64(sum / *n as f64)),
            Acc::Min(acc) | Acc::Max(acc) => acc.clone(),
            Acc::Distinct(set) => Some(Value::Int64(set.len() as i64)),
        }
    }
}

/// Evaluates the statement and returns result rows (after ORDER BY/LIMIT).
pub fn reference_eval(stmt: &SelectStmt, tables: &RawTables) -> Result<RowBatch, SqlError> {
    // FROM (+ JOIN): joined raw rows.
    let (left_schema, left_rows) = get_table(tables, &stmt.from.name)?;
    let mut scope = RefScope::from_table(stmt.from.binding(), left_schema, 0);

    let mut rows: RowBatch;
    match &stmt.join {
        None => rows = left_rows.clone(),
        Some(join) => {
            let (right_schema, right_rows) = get_table(tables, &join.table.name)?;
            let right_scope =
                RefScope::from_table(join.table.binding(), right_schema, left_schema.len());
            scope.cols.extend(right_scope.cols);
            // Resolve ON columns in the combined scope; null keys never match.
            let (li, _) = scope.lookup(&join.on_left)?;
            let (ri, _) = scope.lookup(&join.on_right)?;
            rows = Vec::new();
            for l in left_rows {
                for r in right_rows {
                    let joined: Row = l.iter().chain(r.iter()).cloned().collect();
                    let (a, b) = (&joined[li], &joined[ri]);
                    if let (Some(a), Some(b)) = (a, b) {
                        if compare_values(a, b) == Some(Ordering::Equal) {
                            rows.push(joined);
                        }
                    }
                }
            }
        }
    }

    // WHERE.
    if let Some(w) = &stmt.where_clause {
        let mut kept = Vec::new();
        for row in rows {
            if eval_pred(w, &scope, &row)? == Tri::T {
                kept.push(row);
            }
        }
        rows = kept;
    }

    // Aggregation or plain projection.
    let has_aggs = stmt
        .projections
        .iter()
        .any(|p| matches!(p, Projection::Aggregate { .. }));
    let mut out: RowBatch;
    let out_names: Vec<String>;

    if has_aggs || !stmt.group_by.is_empty() {
        let key_idx: Vec<usize> = stmt
            .group_by
            .iter()
            .map(|c| scope.lookup(c).map(|(i, _)| i))
            .collect::<Result<_, _>>()?;
        let mut groups: BTreeMap<Vec<Option<Value>>, Vec<Acc>> = BTreeMap::new();
        let make_accs = |scope: &RefScope| -> Result<Vec<(Acc, Option<usize>)>, SqlError> {
            stmt.projections
                .iter()
                .filter_map(|p| match p {
                    Projection::Aggregate { func, .. } => Some(match func {
                        AggCall::CountStar => Ok((Acc::Count(0), None)),
                        AggCall::Count { col, distinct } => scope.lookup(col).map(|(i, _)| {
                            if *distinct {
                                (Acc::Distinct(BTreeSet::new()), Some(i))
                            } else {
                                (Acc::Count(0), Some(i))
                            }
                        }),
                        AggCall::Sum(col) => scope.lookup(col).map(|(i, t)| {
                            if t == DataType::Int64 {
                                (Acc::SumInt(None), Some(i))
                            } else {
                                (Acc::SumFloat(None), Some(i))
                            }
                        }),
                        AggCall::Avg(col) => scope.lookup(col).map(|(i, _)| (Acc::Avg(0.0, 0), Some(i))),
                        AggCall::Min(col) => scope.lookup(col).map(|(i, _)| (Acc::Min(None), Some(i))),
                        AggCall::Max(col) => scope.lookup(col).map(|(i, _)| (Acc::Max(None), Some(i))),
                    }),
                    _ => None,
                })
                .map(|r| r.map(|(a, _i)| (a, _i)))
                .collect()
        };
        let proto = make_accs(&scope)?;
        for row in &rows {
            let key: Vec<Option<Value>> = key_idx.iter().map(|&i| row[i].clone()).collect();
            let accs = groups
                .entry(key)
                .or_insert_with(|| proto.iter().map(|(a, _)| a.clone()).collect());
            for (acc, (proto_acc, arg)) in accs.iter_mut().zip(&proto) {
                let _ = proto_acc;
                match arg {
                    None => {
                        if let Acc::Count(n) = acc {
                            *n += 1;
                        }
                    }
                    Some(i) => acc.update(row[*i].as_ref()),
                }
            }
        }
        if key_idx.is_empty() && groups.is_empty() {
            groups.insert(Vec::new(), proto.iter().map(|(a, _)| a.clone()).collect());
        }

        out = Vec::new();
        out_names = stmt
            .projections
            .iter()
            .map(|p| match p {
                Projection::Star => "*".to_string(),
                Projection::Column { col, alias } => {
                    alias.clone().unwrap_or_else(|| col.name.clone())
                }
                Projection::Aggregate { func, alias } => {
                    alias.clone().unwrap_or_else(|| func.default_name())
                }
            })
            .collect();
        for (key, accs) in groups {
            let mut row = Vec::new();
            let mut acc_it = accs.iter();
            for p in &stmt.projections {
                match p {
                    Projection::Star => {
                        return Err(SqlError::PlanError(
                            "SELECT * cannot be combined with aggregation".into(),
                        ))
                    }
                    Projection::Column { col, .. } => {
                        let (i, _) = scope.lookup(col)?;
                        let kpos = key_idx.iter().position(|&k| k == i).ok_or_else(|| {
                            SqlError::PlanError(format!("`{col}` not in GROUP BY"))
                        })?;
                        row.push(key[kpos].clone());
                    }
                    Projection::Aggregate { .. } => {
                        row.push(acc_it.next().unwrap().finish());
                    }
                }
            }
            out.push(row);
        }
    } else {
        let mut indices = Vec::new();
        let mut names = Vec::new();
        for p in &stmt.projections {
            match p {
                Projection::Star => {
                    for (b, n, i, _) in &scope.cols {
                        let _ = b;
                        indices.push(*i);
                        names.push(n.clone());
                    }
                }
                Projection::Column { col, alias } => {
                    indices.push(scope.lookup(col)?.0);
                    names.push(alias.clone().unwrap_or_else(|| col.name.clone()));
                }
                Projection::Aggregate { .. } => unreachable!(),
            }
        }
        out = rows
            .iter()
            .map(|row| indices.iter().map(|&i| row[i].clone()).collect())
            .collect();
        out_names = names;
    }

    // ORDER BY on output columns (aliases allowed), then LIMIT.
    if !stmt.order_by.is_empty() {
        let mut keys = Vec::new();
        for (col, asc) in &stmt.order_by {
            let target = col.to_string().to_ascii_lowercase();
            let bare = col.name.to_ascii_lowercase();
            let idx = out_names
                .iter()
                .position(|n| n.eq_ignore_ascii_case(&target) || n.eq_ignore_ascii_case(&bare))
                .ok_or_else(|| SqlError::FieldNotFound(format!("ORDER BY {col}")))?;
            keys.push((idx, *asc));
        }
        out.sort_by(|a, b| order_rows(a, b, &keys));
    }
    if let Some(n) = stmt.limit {
        out.truncate(n);
    }
    Ok(out)
}

/// Total order for ORDER BY: requested keys (nulls first on ascending),
/// ties broken by the canonical row encoding so the order is unambiguous.
pub fn order_rows(a: &Row, b: &Row, keys: &[(usize, bool)]) -> Ordering {
    for &(i, asc) in keys {
        let ord = cmp_opt(&a[i], &b[i]);
        let ord = if asc { ord } else { ord.reverse() };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    row_canonical_bytes(a).cmp(&row_canonical_bytes(b))
}
