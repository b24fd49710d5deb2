//! Shared test support: random table and query generation for the
//! engine/oracle equivalence harness, plus comparison helpers.
//!
//! Float values are dyadic rationals (multiples of 1/256) with bounded
//! magnitude, so sums and averages are exact in f64 regardless of addition
//! order and engine/oracle results can be compared bit for bit.

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use skiff::sql::reference::RawTables;
use skiff::value::{cmp_rows, DataType, Field, Row, RowBatch, Schema, Value};
use skiff::{Session, SessionConfig};

pub fn test_session_config() -> SessionConfig {
    SessionConfig {
        target_partition_rows: 64,
        scratch_dir: Some(std::env::temp_dir().join(format!(
            "skiff-tests-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .subsec_nanos()
        ))),
        ..SessionConfig::default()
    }
}

pub fn dyadic(rng: &mut ChaCha8Rng, range: i64) -> f64 {
    rng.gen_range(-range * 256..=range * 256) as f64 / 256.0
}

/// A generated test table plus its raw rows for the oracle.
pub struct GenTable {
    pub name: String,
    pub schema: Schema,
    pub rows: RowBatch,
    pub cached: bool,
    pub distribute_key: Option<String>,
}

pub fn gen_tables(rng: &mut ChaCha8Rng, max_rows: usize) -> Vec<GenTable> {
    let tags = ["red", "green", "blue", "gray", "gold"];
    let n0 = rng.gen_range(50..=max_rows);
    let facts_schema = Schema::new(vec![
        Field::new("id", DataType::Int64),
        Field::new("grp", DataType::Int64),
        Field::new("val", DataType::Float64),
        Field::new("flag", DataType::Boolean),
        Field::new("tag", DataType::Utf8),
        Field::new("day", DataType::Date),
    ])
    .unwrap();
    let facts_rows: RowBatch = (0..n0)
        .map(|i| {
            let null_roll = rng.gen_range(0..20);
            vec![
                Some(Value::Int64(i as i64)),
                Some(Value::Int64(rng.gen_range(0..12))),
                if null_roll == 0 {
                    None
                } else {
                    Some(Value::Float64(dyadic(rng, 1000)))
                },
                Some(Value::Boolean(rng.gen())),
                if null_roll == 1 {
                    None
                } else {
                    Some(Value::Utf8(tags.choose(rng).unwrap().to_string()))
                },
                if null_roll == 2 {
                    None
                } else {
                    Some(Value::Date(19_000 + rng.gen_range(0..30)))
                },
            ]
        })
        .collect();

    let n1 = rng.gen_range(20..=max_rows / 2 + 20);
    let dims_schema = Schema::new(vec![
        Field::new("key", DataType::Int64),
        Field::new("amount", DataType::Float64),
        Field::new("label", DataType::Utf8),
    ])
    .unwrap();
    let dims_rows: RowBatch = (0..n1)
        .map(|_| {
            vec![
                Some(Value::Int64(rng.gen_range(0..12))),
                Some(Value::Float64(dyadic(rng, 100))),
                Some(Value::Utf8(format!("L{}", rng.gen_range(0..6)))),
            ]
        })
        .collect();

    vec![
        GenTable {
            name: "facts".into(),
            schema: facts_schema,
            rows: facts_rows,
            cached: rng.gen(),
            distribute_key: if rng.gen_bool(0.3) {
                Some("grp".into())
            } else {
                None
            },
        },
        GenTable {
            name: "dims".into(),
            schema: dims_schema,
            rows: dims_rows,
            cached: rng.gen(),
            distribute_key: if rng.gen_bool(0.3) {
                Some("key".into())
            } else {
                None
            },
        },
    ]
}

pub fn session_with(tables: &[GenTable], cfg: SessionConfig) -> (Session, RawTables) {
    let mut session = Session::new(cfg).unwrap();
    let mut raw = HashMap::new();
    for t in tables {
        session
            .register_table_from_rows(
                &t.name,
                t.schema.clone(),
                t.rows.clone(),
                t.cached,
                t.distribute_key.as_deref(),
            )
            .unwrap();
        raw.insert(t.name.clone(), (t.schema.clone(), t.rows.clone()));
    }
    (session, raw)
}

fn literal_for(rng: &mut ChaCha8Rng, dtype: DataType) -> String {
    match dtype {
        DataType::Int64 => rng.gen_range(-5..1200).to_string(),
        DataType::Float64 => format!("{:?}", dyadic(rng, 500)),
        DataType::Boolean => if rng.gen() { "true" } else { "false" }.to_string(),
        DataType::Utf8 => format!(
            "'{}'",
            ["red", "green", "blue", "gray", "gold", "L1", "L3", "zz"]
                .choose(rng)
                .unwrap()
        ),
        DataType::Date => format!(
            "DATE '{}'",
            skiff::value::format_date(19_000 + rng.gen_range(-2..32))
        ),
    }
}

fn predicate_for(rng: &mut ChaCha8Rng, prefix: &str, fields: &[Field]) -> String {
    let f = fields.choose(rng).unwrap();
    let col = format!("{prefix}{}", f.name);
    match rng.gen_range(0..6) {
        0 => format!("{col} = {}", literal_for(rng, f.dtype)),
        1 => format!("{col} <> {}", literal_for(rng, f.dtype)),
        2 => format!("{col} > {}", literal_for(rng, f.dtype)),
        3 => format!("{col} <= {}", literal_for(rng, f.dtype)),
        4 => {
            let (a, b) = (literal_for(rng, f.dtype), literal_for(rng, f.dtype));
            format!("{col} BETWEEN {a} AND {b}")
        }
        _ => {
            let items: Vec<String> = (0..rng.gen_range(1..4))
                .map(|_| literal_for(rng, f.dtype))
                .collect();
            format!("{col} IN ({})", items.join(", "))
        }
    }
}

fn where_clause(rng: &mut ChaCha8Rng, prefix: &str, fields: &[Field]) -> String {
    let n = rng.gen_range(1..=3);
    let parts: Vec<String> = (0..n).map(|_| predicate_for(rng, prefix, fields)).collect();
    format!(" WHERE {}", parts.join(" AND "))
}

/// Generates a query in the subset grammar over the generated tables.
/// LIMIT always comes with a total ORDER BY so comparisons stay exact.
pub fn gen_query(rng: &mut ChaCha8Rng, tables: &[GenTable]) -> String {
    let facts = &tables[0];
    let dims = &tables[1];
    match rng.gen_range(0..10) {
        // Plain selection / projection.
        0 | 1 => {
            let cols = ["id", "grp", "val", "tag"];
            let k = rng.gen_range(1..=cols.len());
            let mut chosen: Vec<&str> = cols.choose_multiple(rng, k).cloned().collect();
            chosen.sort();
            let mut q = format!("SELECT {} FROM facts", chosen.join(", "));
            if rng.gen_bool(0.7) {
                q.push_str(&where_clause(rng, "", facts.schema.fields()));
            }
            if rng.gen_bool(0.4) {
                q.push_str(&format!(" ORDER BY {}", chosen[0]));
                if rng.gen_bool(0.5) {
                    q.push_str(" DESC");
                }
                if rng.gen_bool(0.6) {
                    q.push_str(&format!(" LIMIT {}", rng.gen_range(1..40)));
                }
            }
            q
        }
        // Grouped aggregation over facts.
        2 | 3 | 4 => {
            let key = ["grp", "tag", "flag", "day"].choose(rng).unwrap();
            let aggs = [
                "COUNT(*) AS n",
                "SUM(val) AS sv",
                "AVG(val) AS av",
                "MIN(val) AS mnv",
                "MAX(id) AS mxi",
                "COUNT(DISTINCT tag) AS dt",
                "COUNT(val) AS cv",
            ];
            let k = rng.gen_range(1..=3);
            let chosen: Vec<&str> = aggs.choose_multiple(rng, k).cloned().collect();
            let mut q = format!(
                "SELECT {key}, {} FROM facts",
                chosen.join(", ")
            );
            if rng.gen_bool(0.6) {
                q.push_str(&where_clause(rng, "", facts.schema.fields()));
            }
            q.push_str(&format!(" GROUP BY {key}"));
            if rng.gen_bool(0.4) {
                q.push_str(&format!(" ORDER BY {key}"));
            }
            q
        }
        // Ungrouped aggregates.
        5 => {
            let mut q =
                "SELECT COUNT(*) AS n, SUM(val) AS s, AVG(val) AS a, MIN(tag) AS m FROM facts"
                    .to_string();
            if rng.gen_bool(0.7) {
                q.push_str(&where_clause(rng, "", facts.schema.fields()));
            }
            q
        }
        // Joins (equi on grp = key), optionally aggregated.
        _ => {
            let mut q = String::from("SELECT f.id, f.val, d.amount, d.label ");
            let grouped = rng.gen_bool(0.4);
            if grouped {
                q = String::from("SELECT d.label, COUNT(*) AS n, SUM(f.val) AS sv ");
            }
            q.push_str("FROM facts f JOIN dims d ON f.grp = d.key");
            if rng.gen_bool(0.6) {
                let side = rng.gen_bool(0.5);
                let (prefix, fields) = if side {
                    ("f.", facts.schema.fields())
                } else {
                    ("d.", dims.schema.fields())
                };
                q.push_str(&where_clause(rng, prefix, fields));
            }
            if grouped {
                q.push_str(" GROUP BY d.label");
            } else if rng.gen_bool(0.3) {
                q.push_str(" ORDER BY id");
                if rng.gen_bool(0.5) {
                    q.push_str(&format!(" LIMIT {}", rng.gen_range(1..50)));
                }
            }
            q
        }
    }
}

pub fn sorted(mut rows: RowBatch) -> RowBatch {
    rows.sort_by(cmp_rows);
    rows
}

/// Engine vs oracle comparison: exact, order-normalized unless the query
/// carries ORDER BY (then both are already in the same total order).
pub fn assert_rows_match(query: &str, engine: &[Row], oracle: &[Row], ordered: bool) {
    let (engine, oracle) = if ordered {
        (engine.to_vec(), oracle.to_vec())
    } else {
        (sorted(engine.to_vec()), sorted(oracle.to_vec()))
    };
    assert_eq!(
        engine, oracle,
        "engine and reference disagree on: {query}\nengine rows: {}\noracle rows: {}",
        engine.len(),
        oracle.len()
    );
}
