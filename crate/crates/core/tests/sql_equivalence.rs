//! Property harness: generated queries over random tables must match the
//! independent reference evaluator exactly, with and without pruning, and
//! optimization must never change results.

mod support;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use skiff::sql::ast::Statement;
use skiff::sql::reference::reference_eval;
use skiff::sql::parse;
use skiff::StatementOutput;
use support::*;

fn run_equivalence(seed: u64, queries: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables = gen_tables(&mut rng, 600);
    let (mut session, raw) = session_with(&tables, test_session_config());
    for qi in 0..queries {
        let query = gen_query(&mut rng, &tables);
        let stmt = match parse(&query) {
            Ok(Statement::Select(s)) => s,
            other => panic!("generator emitted unparsable query ({other:?}): {query}"),
        };
        let engine_rows = match session.execute(&query) {
            Ok(StatementOutput::Rows { rows, .. }) => rows,
            Ok(_) => unreachable!(),
            Err(e) => panic!("query {qi} failed: {e}\n{query}"),
        };
        let oracle_rows = reference_eval(&stmt, &raw).unwrap();
        assert_rows_match(&query, &engine_rows, &oracle_rows, !stmt.order_by.is_empty());
    }
}

#[test]
fn generated_queries_match_reference() {
    run_equivalence(11, 60);
}

#[test]
fn generated_queries_match_reference_second_seed() {
    run_equivalence(29, 60);
}

#[test]
fn pruning_never_changes_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tables = gen_tables(&mut rng, 400);
    let (mut with, _) = session_with(&tables, test_session_config());
    let (mut without, _) = session_with(&tables, test_session_config());
    without.set_option("pruning_on", "false").unwrap();
    for _ in 0..30 {
        let query = gen_query(&mut rng, &tables);
        let a = match with.execute(&query) {
            Ok(StatementOutput::Rows { rows, .. }) => rows,
            other => panic!("{query}: {other:?}"),
        };
        let b = match without.execute(&query) {
            Ok(StatementOutput::Rows { rows, .. }) => rows,
            other => panic!("{query}: {other:?}"),
        };
        assert_eq!(sorted(a), sorted(b), "pruning changed results for {query}");
    }
}

#[test]
fn binpack_coalescing_never_changes_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let tables = gen_tables(&mut rng, 400);
    let (mut plain, _) = session_with(&tables, test_session_config());
    let mut cfg = test_session_config();
    cfg.binpack_enabled = true;
    cfg.target_bytes_per_reducer = 512; // force interesting coalesce plans
    let (mut packed, _) = session_with(&tables, cfg);
    for _ in 0..25 {
        let query = gen_query(&mut rng, &tables);
        let a = match plain.execute(&query) {
            Ok(StatementOutput::Rows { rows, .. }) => rows,
            other => panic!("{query}: {other:?}"),
        };
        let b = match packed.execute(&query) {
            Ok(StatementOutput::Rows { rows, .. }) => rows,
            other => panic!("{query}: {other:?}"),
        };
        assert_eq!(sorted(a), sorted(b), "coalescing changed results for {query}");
    }
}

#[test]
fn limit_without_order_returns_valid_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let tables = gen_tables(&mut rng, 300);
    let (mut session, raw) = session_with(&tables, test_session_config());
    let query = "SELECT id, grp FROM facts WHERE grp > 2 LIMIT 7";
    let stmt = match parse(query).unwrap() {
        Statement::Select(s) => s,
        _ => unreachable!(),
    };
    let engine_rows = match session.execute(query).unwrap() {
        StatementOutput::Rows { rows, .. } => rows,
        _ => unreachable!(),
    };
    let mut unlimited = stmt.clone();
    unlimited.limit = None;
    let full = sorted(reference_eval(&unlimited, &raw).unwrap());
    assert_eq!(engine_rows.len(), 7.min(full.len()));
    for row in &engine_rows {
        assert!(full.contains(row), "limit produced a row not in the result");
    }
}
