//! Scalar predicate expressions with SQL three-valued logic.
//!
//! The subset is deliberately small: column references, literals,
//! comparisons, BETWEEN, IN lists and conjunction. Numeric comparisons
//! promote int to float; everything else compares within its own type.

use std::cmp::Ordering;
use std::fmt;

use crate::value::{DataType, Row, Value};

/// A column reference resolved to an input index. The name is kept for
/// display and for rewriting through projections.
#[derive(Debug, Clone, PartialEq)]
pub struct ColRef {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::NotEq => "<>",
            CmpOp::Lt => "<",
            CmpOp::LtEq => "<=",
            CmpOp::Gt => ">",
            CmpOp::GtEq => ">=",
        }
    }

    fn matches(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::NotEq => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::LtEq => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::GtEq => ord != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column(ColRef),
    Literal(Option<Value>),
    Compare {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Between {
        expr: Box<Expr>,
        low: Box<Expr>,
        high: Box<Expr>,
    },
    InList {
        expr: Box<Expr>,
        list: Vec<Value>,
    },
    And(Vec<Expr>),
}

/// SQL three-valued truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    True,
    False,
    Unknown,
}

impl Truth {
    pub fn is_true(self) -> bool {
        self == Truth::True
    }
}

/// Compares two non-null values, promoting int<->float; `None` when the
/// types are not comparable.
pub fn compare_values(a: &Value, b: &Value) -> Option<Ordering> {
    use crate::value::canon_f64;
    use Value::*;
    match (a, b) {
        (Int64(x), Int64(y)) => Some(x.cmp(y)),
        (Float64(x), Float64(y)) => Some(canon_f64(*x).total_cmp(&canon_f64(*y))),
        (Int64(x), Float64(y)) => Some(canon_f64(*x as f64).total_cmp(&canon_f64(*y))),
        (Float64(x), Int64(y)) => Some(canon_f64(*x).total_cmp(&canon_f64(*y as f64))),
        (Boolean(x), Boolean(y)) => Some(x.cmp(y)),
        (Utf8(x), Utf8(y)) => Some(x.as_bytes().cmp(y.as_bytes())),
        (Date(x), Date(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

/// True when a comparison between these column types is well-typed.
pub fn comparable(a: DataType, b: DataType) -> bool {
    a == b || (a.is_numeric() && b.is_numeric())
}

impl Expr {
    pub fn literal(v: Value) -> Expr {
        Expr::Literal(Some(v))
    }

    /// Evaluates an operand sub-expression to a nullable value.
    pub fn eval_value(&self, row: &Row) -> Option<Value> {
        match self {
            Expr::Column(c) => row[c.index].clone(),
            Expr::Literal(v) => v.clone(),
            _ => match self.eval_truth(row) {
                Truth::True => Some(Value::Boolean(true)),
                Truth::False => Some(Value::Boolean(false)),
                Truth::Unknown => None,
            },
        }
    }

    /// Evaluates the expression as a predicate under three-valued logic.
    pub fn eval_truth(&self, row: &Row) -> Truth {
        match self {
            Expr::Literal(Some(Value::Boolean(true))) => Truth::True,
            Expr::Literal(Some(Value::Boolean(false))) => Truth::False,
            Expr::Literal(None) => Truth::Unknown,
            Expr::Literal(_) | Expr::Column(_) => match self.eval_value(row) {
                Some(Value::Boolean(true)) => Truth::True,
                Some(Value::Boolean(false)) => Truth::False,
                _ => Truth::Unknown,
            },
            Expr::Compare { op, lhs, rhs } => {
                let (a, b) = (lhs.eval_value(row), rhs.eval_value(row));
                match (a, b) {
                    (Some(a), Some(b)) => match compare_values(&a, &b) {
                        Some(ord) if op.matches(ord) => Truth::True,
                        Some(_) => Truth::False,
                        None => Truth::Unknown,
                    },
                    _ => Truth::Unknown,
                }
            }
            Expr::Between { expr, low, high } => {
                let ge = Expr::Compare {
                    op: CmpOp::GtEq,
                    lhs: expr.clone(),
                    rhs: low.clone(),
                };
                let le = Expr::Compare {
                    op: CmpOp::LtEq,
                    lhs: expr.clone(),
                    rhs: high.clone(),
                };
                truth_and(ge.eval_truth(row), le.eval_truth(row))
            }
            Expr::InList { expr, list } => match expr.eval_value(row) {
                None => Truth::Unknown,
                Some(v) => {
                    if list
                        .iter()
                        .any(|item| compare_values(&v, item) == Some(Ordering::Equal))
                    {
                        Truth::True
                    } else {
                        Truth::False
                    }
                }
            },
            Expr::And(parts) => {
                let mut acc = Truth::True;
                for p in parts {
                    acc = truth_and(acc, p.eval_truth(row));
                    if acc == Truth::False {
                        return Truth::False;
                    }
                }
                acc
            }
        }
    }

    /// Flattens nested conjunctions into a list of conjuncts.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::And(parts) => parts.iter().flat_map(|p| p.conjuncts()).collect(),
            other => vec![other],
        }
    }

    pub fn and_all(mut parts: Vec<Expr>) -> Expr {
        match parts.len() {
            0 => Expr::literal(Value::Boolean(true)),
            1 => parts.pop().unwrap(),
            _ => Expr::And(parts),
        }
    }

    /// Column indices referenced anywhere in the expression.
    pub fn referenced_columns(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_columns(&mut |c| out.push(c.index));
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn visit_columns(&self, f: &mut impl FnMut(&ColRef)) {
        match self {
            Expr::Column(c) => f(c),
            Expr::Literal(_) => {}
            Expr::Compare { lhs, rhs, .. } => {
                lhs.visit_columns(f);
                rhs.visit_columns(f);
            }
            Expr::Between { expr, low, high } => {
                expr.visit_columns(f);
                low.visit_columns(f);
                high.visit_columns(f);
            }
            Expr::InList { expr, .. } => expr.visit_columns(f),
            Expr::And(parts) => parts.iter().for_each(|p| p.visit_columns(f)),
        }
    }

    /// Rewrites column indices through a mapping; `None` in the map means the
    /// column is not available and the rewrite fails.
    pub fn remap_columns(&self, map: &impl Fn(usize) -> Option<(usize, String)>) -> Option<Expr> {
        Some(match self {
            Expr::Column(c) => {
                let (index, name) = map(c.index)?;
                Expr::Column(ColRef { index, name })
            }
            Expr::Literal(v) => Expr::Literal(v.clone()),
            Expr::Compare { op, lhs, rhs } => Expr::Compare {
                op: *op,
                lhs: Box::new(lhs.remap_columns(map)?),
                rhs: Box::new(rhs.remap_columns(map)?),
            },
            Expr::Between { expr, low, high } => Expr::Between {
                expr: Box::new(expr.remap_columns(map)?),
                low: Box::new(low.remap_columns(map)?),
                high: Box::new(high.remap_columns(map)?),
            },
            Expr::InList { expr, list } => Expr::InList {
                expr: Box::new(expr.remap_columns(map)?),
                list: list.clone(),
            },
            Expr::And(parts) => Expr::And(
                parts
                    .iter()
                    .map(|p| p.remap_columns(map))
                    .collect::<Option<Vec<_>>>()?,
            ),
        })
    }
}

fn truth_and(a: Truth, b: Truth) -> Truth {
    match (a, b) {
        (Truth::False, _) | (_, Truth::False) => Truth::False,
        (Truth::True, Truth::True) => Truth::True,
        _ => Truth::Unknown,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(c) => f.write_str(&c.name),
            Expr::Literal(None) => f.write_str("NULL"),
            Expr::Literal(Some(Value::Utf8(s))) => write!(f, "'{s}'"),
            Expr::Literal(Some(Value::Date(d))) => {
                write!(f, "DATE '{}'", crate::value::format_date(*d))
            }
            Expr::Literal(Some(v)) => write!(f, "{v}"),
            Expr::Compare { op, lhs, rhs } => write!(f, "{lhs} {} {rhs}", op.symbol()),
            Expr::Between { expr, low, high } => {
                write!(f, "{expr} BETWEEN {low} AND {high}")
            }
            Expr::InList { expr, list } => {
                write!(f, "{expr} IN (")?;
                for (i, v) in list.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    match v {
                        Value::Utf8(s) => write!(f, "'{s}'")?,
                        Value::Date(d) => write!(f, "DATE '{}'", crate::value::format_date(*d))?,
                        other => write!(f, "{other}")?,
                    }
                }
                f.write_str(")")
            }
            Expr::And(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(i: usize) -> Expr {
        Expr::Column(ColRef {
            index: i,
            name: format!("c{i}"),
        })
    }

    #[test]
    fn three_valued_comparison() {
        let pred = Expr::Compare {
            op: CmpOp::Gt,
            lhs: Box::new(col(0)),
            rhs: Box::new(Expr::literal(Value::Int64(10))),
        };
        assert_eq!(pred.eval_truth(&vec![Some(Value::Int64(11))]), Truth::True);
        assert_eq!(pred.eval_truth(&vec![Some(Value::Int64(10))]), Truth::False);
        assert_eq!(pred.eval_truth(&vec![None]), Truth::Unknown);
    }

    #[test]
    fn and_short_circuits_false_over_unknown() {
        let p = Expr::And(vec![
            Expr::Compare {
                op: CmpOp::Eq,
                lhs: Box::new(col(0)),
                rhs: Box::new(Expr::Literal(None)),
            },
            Expr::literal(Value::Boolean(false)),
        ]);
        assert_eq!(p.eval_truth(&vec![Some(Value::Int64(1))]), Truth::False);
    }

    #[test]
    fn between_and_in() {
        let between = Expr::Between {
            expr: Box::new(col(0)),
            low: Box::new(Expr::literal(Value::Int64(15))),
            high: Box::new(Expr::literal(Value::Int64(30))),
        };
        assert_eq!(
            between.eval_truth(&vec![Some(Value::Int64(20))]),
            Truth::True
        );
        let inlist = Expr::InList {
            expr: Box::new(col(0)),
            list: vec![Value::Utf8("us".into()), Value::Utf8("de".into())],
        };
        assert_eq!(
            inlist.eval_truth(&vec![Some(Value::Utf8("fr".into()))]),
            Truth::False
        );
        assert_eq!(inlist.eval_truth(&vec![None]), Truth::Unknown);
    }

    #[test]
    fn int_float_promotion() {
        assert_eq!(
            compare_values(&Value::Int64(2), &Value::Float64(2.0)),
            Some(Ordering::Equal)
        );
    }
}
