//! Abstract syntax for the SQL subset: SELECT with projections and
//! aggregates, one optional equi-join, conjunctive WHERE, GROUP BY,
//! ORDER BY, LIMIT; CREATE TABLE ... TBLPROPERTIES (...) AS SELECT
//! [DISTRIBUTE BY col]; DROP TABLE; EXPLAIN.

use crate::expr::CmpOp;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Select(SelectStmt),
    CreateTableAs {
        name: String,
        properties: Vec<(String, String)>,
        query: SelectStmt,
    },
    DropTable {
        name: String,
    },
    Explain(SelectStmt),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectStmt {
    pub projections: Vec<Projection>,
    pub from: TableRef,
    pub join: Option<JoinClause>,
    pub where_clause: Option<AstExpr>,
    pub group_by: Vec<ColumnRef>,
    pub order_by: Vec<(ColumnRef, bool)>,
    pub limit: Option<usize>,
    pub distribute_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
}

impl TableRef {
    pub fn binding(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinClause {
    pub table: TableRef,
    /// ON <left> = <right>; sides are resolved to tables during planning.
    pub on_left: ColumnRef,
    pub on_right: ColumnRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Star,
    Column {
        col: ColumnRef,
        alias: Option<String>,
    },
    Aggregate {
        func: AggCall,
        alias: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggCall {
    CountStar,
    Count { col: ColumnRef, distinct: bool },
    Sum(ColumnRef),
    Avg(ColumnRef),
    Min(ColumnRef),
    Max(ColumnRef),
}

impl AggCall {
    pub fn default_name(&self) -> String {
        match self {
            AggCall::CountStar => "count(*)".into(),
            AggCall::Count { col, distinct } => {
                if *distinct {
                    format!("count(distinct {col})")
                } else {
                    format!("count({col})")
                }
            }
            AggCall::Sum(c) => format!("sum({c})"),
            AggCall::Avg(c) => format!("avg({c})"),
            AggCall::Min(c) => format!("min({c})"),
            AggCall::Max(c) => format!("max({c})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Column(ColumnRef),
    Literal(Value),
}

/// WHERE clause: a conjunction of simple predicates.
#[derive(Debug, Clone, PartialEq)]
pub enum AstExpr {
    Compare {
        op: CmpOp,
        lhs: Operand,
        rhs: Operand,
    },
    Between {
        operand: Operand,
        low: Value,
        high: Value,
    },
    InList {
        operand: Operand,
        list: Vec<Value>,
    },
    And(Vec<AstExpr>),
}

impl AstExpr {
    pub fn conjuncts(&self) -> Vec<&AstExpr> {
        match self {
            AstExpr::And(parts) => parts.iter().flat_map(|p| p.conjuncts()).collect(),
            other => vec![other],
        }
    }
}
