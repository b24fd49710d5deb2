//! Hand-rolled lexer and recursive-descent parser for the SQL subset.
//! Reserved words are case-insensitive; syntax errors carry byte offsets.

use crate::error::SqlError;
use crate::expr::CmpOp;
use crate::sql::ast::*;
use crate::value::{parse_date, Value};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        match c {
            '\'' | '"' => {
                let quote = c;
                i += 1;
                let mut s = String::new();
                loop {
                    if i >= bytes.len() {
                        return Err(SqlError::Syntax {
                            offset: start,
                            msg: "unterminated string literal".into(),
                        });
                    }
                    let ch = bytes[i] as char;
                    if ch == quote {
                        // Doubled quote escapes itself.
                        if i + 1 < bytes.len() && bytes[i + 1] as char == quote {
                            s.push(quote);
                            i += 2;
                            continue;
                        }
                        i += 1;
                        break;
                    }
                    s.push(ch);
                    i += 1;
                }
                toks.push(Token {
                    tok: Tok::Str(s),
                    offset: start,
                });
            }
            c if c.is_ascii_digit()
                || (c == '-' && i + 1 < bytes.len() && (bytes[i + 1] as char).is_ascii_digit()) =>
            {
                i += 1;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_digit()
                        || bytes[i] == b'.'
                        || bytes[i] == b'e'
                        || bytes[i] == b'E'
                        || (i > start
                            && (bytes[i - 1] == b'e' || bytes[i - 1] == b'E')
                            && (bytes[i] == b'+' || bytes[i] == b'-')))
                {
                    i += 1;
                }
                toks.push(Token {
                    tok: Tok::Number(text[start..i].to_string()),
                    offset: start,
                });
            }
            c if c.is_alphabetic() || c == '_' => {
                i += 1;
                while i < bytes.len()
                    && ((bytes[i] as char).is_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push(Token {
                    tok: Tok::Ident(text[start..i].to_string()),
                    offset: start,
                });
            }
            '<' => {
                let sym = if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    i += 2;
                    "<="
                } else if i + 1 < bytes.len() && bytes[i + 1] == b'>' {
                    i += 2;
                    "<>"
                } else {
                    i += 1;
                    "<"
                };
                toks.push(Token {
                    tok: Tok::Sym(sym),
                    offset: start,
                });
            }
            '>' => {
                let sym = if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    i += 2;
                    ">="
                } else {
                    i += 1;
                    ">"
                };
                toks.push(Token {
                    tok: Tok::Sym(sym),
                    offset: start,
                });
            }
            '!' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    i += 2;
                    toks.push(Token {
                        tok: Tok::Sym("<>"),
                        offset: start,
                    });
                } else {
                    return Err(SqlError::Syntax {
                        offset: start,
                        msg: "unexpected `!`".into(),
                    });
                }
            }
            '=' | '(' | ')' | ',' | '.' | '*' | ';' => {
                i += 1;
                let sym = match c {
                    '=' => "=",
                    '(' => "(",
                    ')' => ")",
                    ',' => ",",
                    '.' => ".",
                    '*' => "*",
                    _ => ";",
                };
                toks.push(Token {
                    tok: Tok::Sym(sym),
                    offset: start,
                });
            }
            other => {
                return Err(SqlError::Syntax {
                    offset: start,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    toks.push(Token {
        tok: Tok::Eof,
        offset: text.len(),
    });
    Ok(toks)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, SqlError> {
        Err(SqlError::Syntax {
            offset: self.peek().offset,
            msg: msg.into(),
        })
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            self.err(format!("expected {kw}"))
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if matches!(&self.peek().tok, Tok::Sym(s) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), SqlError> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            self.err(format!("expected `{sym}`"))
        }
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        match &self.peek().tok {
            Tok::Ident(s) if !is_reserved(s) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Tok::Ident(s) => self.err(format!("`{s}` is a reserved word")),
            _ => self.err("expected identifier"),
        }
    }

    fn column_ref(&mut self) -> Result<ColumnRef, SqlError> {
        let first = self.ident()?;
        if self.eat_sym(".") {
            let name = self.ident()?;
            Ok(ColumnRef {
                qualifier: Some(first),
                name,
            })
        } else {
            Ok(ColumnRef {
                qualifier: None,
                name: first,
            })
        }
    }

    fn literal(&mut self) -> Result<Value, SqlError> {
        let offset = self.peek().offset;
        match self.peek().tok.clone() {
            Tok::Number(raw) => {
                self.pos += 1;
                if raw.contains(['.', 'e', 'E']) {
                    raw.parse::<f64>()
                        .map(Value::Float64)
                        .map_err(|_| SqlError::Syntax {
                            offset,
                            msg: format!("bad number `{raw}`"),
                        })
                } else {
                    raw.parse::<i64>()
                        .map(Value::Int64)
                        .map_err(|_| SqlError::Syntax {
                            offset,
                            msg: format!("bad number `{raw}`"),
                        })
                }
            }
            Tok::Str(s) => {
                self.pos += 1;
                Ok(Value::Utf8(s))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("true") => {
                self.pos += 1;
                Ok(Value::Boolean(true))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("false") => {
                self.pos += 1;
                Ok(Value::Boolean(false))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("date") => {
                self.pos += 1;
                match self.peek().tok.clone() {
                    Tok::Str(d) => {
                        let offset = self.peek().offset;
                        self.pos += 1;
                        parse_date(&d).map(Value::Date).ok_or(SqlError::Syntax {
                            offset,
                            msg: format!("bad date `{d}` (expected YYYY-MM-DD)"),
                        })
                    }
                    _ => self.err("expected date string after DATE"),
                }
            }
            _ => self.err("expected literal"),
        }
    }

    fn operand(&mut self) -> Result<Operand, SqlError> {
        match &self.peek().tok {
            Tok::Ident(s)
                if !is_reserved(s)
                    || s.eq_ignore_ascii_case("true")
                    || s.eq_ignore_ascii_case("false")
                    || s.eq_ignore_ascii_case("date") =>
            {
                if s.eq_ignore_ascii_case("true")
                    || s.eq_ignore_ascii_case("false")
                    || s.eq_ignore_ascii_case("date")
                {
                    Ok(Operand::Literal(self.literal()?))
                } else {
                    Ok(Operand::Column(self.column_ref()?))
                }
            }
            _ => Ok(Operand::Literal(self.literal()?)),
        }
    }

    fn predicate(&mut self) -> Result<AstExpr, SqlError> {
        let lhs = self.operand()?;
        if self.eat_keyword("BETWEEN") {
            let low = self.literal()?;
            self.expect_keyword("AND")?;
            let high = self.literal()?;
            return Ok(AstExpr::Between {
                operand: lhs,
                low,
                high,
            });
        }
        if self.eat_keyword("IN") {
            self.expect_sym("(")?;
            let mut list = vec![self.literal()?];
            while self.eat_sym(",") {
                list.push(self.literal()?);
            }
            self.expect_sym(")")?;
            return Ok(AstExpr::InList { operand: lhs, list });
        }
        let op = if self.eat_sym("=") {
            CmpOp::Eq
        } else if self.eat_sym("<>") {
            CmpOp::NotEq
        } else if self.eat_sym("<=") {
            CmpOp::LtEq
        } else if self.eat_sym(">=") {
            CmpOp::GtEq
        } else if self.eat_sym("<") {
            CmpOp::Lt
        } else if self.eat_sym(">") {
            CmpOp::Gt
        } else {
            return self.err("expected comparison operator, BETWEEN, or IN");
        };
        let rhs = self.operand()?;
        Ok(AstExpr::Compare { op, lhs, rhs })
    }

    fn where_clause(&mut self) -> Result<AstExpr, SqlError> {
        let mut parts = vec![self.predicate()?];
        while self.eat_keyword("AND") {
            parts.push(self.predicate()?);
        }
        if parts.len() == 1 {
            Ok(parts.pop().unwrap())
        } else {
            Ok(AstExpr::And(parts))
        }
    }

    fn agg_call(&mut self, func: &str) -> Result<AggCall, SqlError> {
        self.expect_sym("(")?;
        let call = match func.to_ascii_lowercase().as_str() {
            "count" => {
                if self.eat_sym("*") {
                    AggCall::CountStar
                } else {
                    let distinct = self.eat_keyword("DISTINCT");
                    AggCall::Count {
                        col: self.column_ref()?,
                        distinct,
                    }
                }
            }
            "sum" => AggCall::Sum(self.column_ref()?),
            "avg" => AggCall::Avg(self.column_ref()?),
            "min" => AggCall::Min(self.column_ref()?),
            "max" => AggCall::Max(self.column_ref()?),
            other => return self.err(format!("unknown aggregate `{other}`")),
        };
        self.expect_sym(")")?;
        Ok(call)
    }

    fn projection(&mut self) -> Result<Projection, SqlError> {
        if self.eat_sym("*") {
            return Ok(Projection::Star);
        }
        let is_agg = matches!(&self.peek().tok, Tok::Ident(s)
            if AGG_FUNCS.iter().any(|f| s.eq_ignore_ascii_case(f)))
            && matches!(self.toks.get(self.pos + 1).map(|t| &t.tok), Some(Tok::Sym("(")));
        if is_agg {
            let Tok::Ident(func) = self.peek().tok.clone() else {
                unreachable!()
            };
            self.pos += 1;
            let call = self.agg_call(&func)?;
            let alias = self.alias()?;
            return Ok(Projection::Aggregate { func: call, alias });
        }
        let col = self.column_ref()?;
        let alias = self.alias()?;
        Ok(Projection::Column { col, alias })
    }

    fn alias(&mut self) -> Result<Option<String>, SqlError> {
        if self.eat_keyword("AS") {
            return Ok(Some(self.ident()?));
        }
        Ok(None)
    }

    fn table_ref(&mut self) -> Result<TableRef, SqlError> {
        let name = self.ident()?;
        let alias = if self.eat_keyword("AS") {
            Some(self.ident()?)
        } else if matches!(&self.peek().tok, Tok::Ident(s) if !is_reserved(s)) {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(TableRef { name, alias })
    }

    fn select(&mut self) -> Result<SelectStmt, SqlError> {
        self.expect_keyword("SELECT")?;
        let mut projections = vec![self.projection()?];
        while self.eat_sym(",") {
            projections.push(self.projection()?);
        }
        self.expect_keyword("FROM")?;
        let from = self.table_ref()?;

        let join = if self.eat_keyword("JOIN") {
            let table = self.table_ref()?;
            self.expect_keyword("ON")?;
            let on_left = self.column_ref()?;
            self.expect_sym("=")?;
            let on_right = self.column_ref()?;
            Some(JoinClause {
                table,
                on_left,
                on_right,
            })
        } else {
            None
        };

        let where_clause = if self.eat_keyword("WHERE") {
            Some(self.where_clause()?)
        } else {
            None
        };

        let mut group_by = Vec::new();
        if self.eat_keyword("GROUP") {
            self.expect_keyword("BY")?;
            group_by.push(self.column_ref()?);
            while self.eat_sym(",") {
                group_by.push(self.column_ref()?);
            }
        }

        let mut order_by = Vec::new();
        if self.eat_keyword("ORDER") {
            self.expect_keyword("BY")?;
            loop {
                let col = self.column_ref()?;
                let asc = if self.eat_keyword("DESC") {
                    false
                } else {
                    self.eat_keyword("ASC");
                    true
                };
                order_by.push((col, asc));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }

        let limit = if self.eat_keyword("LIMIT") {
            match self.peek().tok.clone() {
                Tok::Number(raw) => {
                    let offset = self.peek().offset;
                    self.pos += 1;
                    Some(raw.parse::<usize>().map_err(|_| SqlError::Syntax {
                        offset,
                        msg: format!("bad LIMIT `{raw}`"),
                    })?)
                }
                _ => return self.err("expected number after LIMIT"),
            }
        } else {
            None
        };

        let distribute_by = if self.eat_keyword("DISTRIBUTE") {
            self.expect_keyword("BY")?;
            Some(self.ident()?)
        } else {
            None
        };

        Ok(SelectStmt {
            projections,
            from,
            join,
            where_clause,
            group_by,
            order_by,
            limit,
            distribute_by,
        })
    }

    fn statement(&mut self) -> Result<Statement, SqlError> {
        if self.eat_keyword("EXPLAIN") {
            return Ok(Statement::Explain(self.select()?));
        }
        if self.eat_keyword("DROP") {
            self.expect_keyword("TABLE")?;
            let name = self.ident()?;
            return Ok(Statement::DropTable { name });
        }
        if self.eat_keyword("CREATE") {
            self.expect_keyword("TABLE")?;
            let name = self.ident()?;
            let mut properties = Vec::new();
            if self.eat_keyword("TBLPROPERTIES") {
                self.expect_sym("(")?;
                loop {
                    let key = match self.peek().tok.clone() {
                        Tok::Str(s) => {
                            self.pos += 1;
                            s
                        }
                        Tok::Ident(s) => {
                            self.pos += 1;
                            s
                        }
                        _ => return self.err("expected property name"),
                    };
                    self.expect_sym("=")?;
                    let value = match self.peek().tok.clone() {
                        Tok::Str(s) => {
                            self.pos += 1;
                            s
                        }
                        Tok::Number(s) => {
                            self.pos += 1;
                            s
                        }
                        Tok::Ident(s) => {
                            self.pos += 1;
                            s
                        }
                        _ => return self.err("expected property value"),
                    };
                    properties.push((key, value));
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym(")")?;
            }
            self.expect_keyword("AS")?;
            let query = self.select()?;
            return Ok(Statement::CreateTableAs {
                name,
                properties,
                query,
            });
        }
        if self.at_keyword("SELECT") {
            return Ok(Statement::Select(self.select()?));
        }
        self.err("expected SELECT, CREATE TABLE, DROP TABLE, or EXPLAIN")
    }
}

const AGG_FUNCS: [&str; 5] = ["count", "sum", "avg", "min", "max"];

fn is_reserved(word: &str) -> bool {
    const RESERVED: [&str; 25] = [
        "select", "from", "where", "group", "order", "by", "limit", "join", "on", "and",
        "between", "in", "as", "create", "table", "drop", "explain", "tblproperties",
        "distribute", "asc", "desc", "distinct", "true", "false", "date",
    ];
    RESERVED.iter().any(|r| word.eq_ignore_ascii_case(r))
}

/// Parses one statement; a trailing `;` is allowed.
pub fn parse(text: &str) -> Result<Statement, SqlError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let stmt = p.statement()?;
    p.eat_sym(";");
    if !matches!(p.peek().tok, Tok::Eof) {
        return p.err("unexpected trailing input");
    }
    Ok(stmt)
}
