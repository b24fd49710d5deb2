//! End-to-end statement tests through the session: DDL, queries, joins,
//! pruning, recovery meta-operations and ML verbs.

use skiff::engine::{FaultAction, FaultEvent, FaultTrigger};
use skiff::value::{DataType, Field, RowBatch, Schema, Value};
use skiff::{Session, SessionConfig, StatementOutput};

fn small_config() -> SessionConfig {
    SessionConfig {
        target_partition_rows: 8,
        scratch_dir: Some(std::env::temp_dir().join(format!(
            "skiff-test-{}-{}",
            std::process::id(),
            rand_suffix()
        ))),
        ..SessionConfig::default()
    }
}

fn rand_suffix() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now().duration_since(UNIX_EPOCH).unwrap().subsec_nanos() as u64
}

fn i(v: i64) -> Option<Value> {
    Some(Value::Int64(v))
}

fn s(v: &str) -> Option<Value> {
    Some(Value::Utf8(v.into()))
}

fn rankings_session() -> Session {
    let mut session = Session::new(small_config()).unwrap();
    let schema = Schema::new(vec![
        Field::new("pageURL", DataType::Utf8),
        Field::new("pageRank", DataType::Int64),
        Field::new("country", DataType::Utf8),
    ])
    .unwrap();
    let rows: RowBatch = (0..40)
        .map(|n| {
            vec![
                s(&format!("url{n}")),
                i(n % 20),
                s(["us", "de", "fr", "jp"][(n % 4) as usize]),
            ]
        })
        .collect();
    session
        .register_table_from_rows("rankings", schema, rows, true, None)
        .unwrap();
    session
}

fn rows_of(out: StatementOutput) -> RowBatch {
    match out {
        StatementOutput::Rows { rows, .. } => rows,
        _ => panic!("expected rows"),
    }
}

#[test]
fn selection_query() {
    let mut session = rankings_session();
    let rows = rows_of(
        session
            .execute("SELECT pageURL, pageRank FROM rankings WHERE pageRank > 10")
            .unwrap(),
    );
    assert_eq!(rows.len(), 18); // ranks 11..=19 appear twice each
    for row in &rows {
        assert!(row[1].as_ref().unwrap().as_i64().unwrap() > 10);
    }
}

#[test]
fn group_by_with_order_and_aliases() {
    let mut session = rankings_session();
    let rows = rows_of(
        session
            .execute(
                "SELECT country, COUNT(*) AS n, AVG(pageRank) AS r \
                 FROM rankings GROUP BY country ORDER BY country",
            )
            .unwrap(),
    );
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][0], s("de"));
    assert_eq!(rows[0][1], i(10));
}

#[test]
fn ungrouped_aggregates_on_empty_input() {
    let mut session = rankings_session();
    let rows = rows_of(
        session
            .execute("SELECT COUNT(*), SUM(pageRank), MIN(country) FROM rankings WHERE pageRank > 99")
            .unwrap(),
    );
    assert_eq!(rows, vec![vec![i(0), None, None]]);
    let rows = rows_of(
        session
            .execute("SELECT country, COUNT(*) FROM rankings WHERE pageRank > 99 GROUP BY country")
            .unwrap(),
    );
    assert!(rows.is_empty());
}

#[test]
fn count_distinct_mixed_with_plain_aggregates() {
    let mut session = rankings_session();
    let rows = rows_of(
        session
            .execute(
                "SELECT country, COUNT(*) AS n, COUNT(DISTINCT pageRank) AS dr \
                 FROM rankings GROUP BY country ORDER BY country",
            )
            .unwrap(),
    );
    // Each country has 10 rows; with ranks n%20 the country sees each of
    // its 5 rank values twice.
    assert_eq!(rows[0], vec![s("de"), i(10), i(5)]);
}

#[test]
fn limit_is_applied_per_partition_and_globally() {
    let mut session = rankings_session();
    let rows = rows_of(session.execute("SELECT pageURL FROM rankings LIMIT 5").unwrap());
    assert_eq!(rows.len(), 5);
    let report = session.last_report().unwrap();
    // 40 rows / 8 per partition = 5 partitions; each task emitted at most 5.
    let result_stage = report.stages.iter().find(|s| s.kind == "result").unwrap();
    assert!(result_stage.rows_out <= 5 * 5);
}

#[test]
fn create_table_as_cached_and_stats() {
    let mut session = rankings_session();
    let out = session
        .execute(
            "CREATE TABLE top TBLPROPERTIES (\"shark.cache\"=true) \
             AS SELECT pageURL, pageRank FROM rankings WHERE pageRank > 10",
        )
        .unwrap();
    match out {
        StatementOutput::Created { table, rows, .. } => {
            assert_eq!(table, "top");
            assert_eq!(rows, 18);
        }
        _ => panic!(),
    }
    let stats = session.table_stats_text("top").unwrap();
    assert!(stats.contains("cached=true"));
    assert!(stats.contains("min="));
    let rows = rows_of(session.execute("SELECT COUNT(*) FROM top").unwrap());
    assert_eq!(rows, vec![vec![i(18)]]);
}

#[test]
fn drop_table_removes_catalog_and_payloads() {
    let mut session = rankings_session();
    session
        .execute("CREATE TABLE t2 TBLPROPERTIES (\"shark.cache\"=true) AS SELECT * FROM rankings")
        .unwrap();
    session.execute("DROP TABLE t2").unwrap();
    assert!(session.execute("SELECT * FROM t2").is_err());
}

#[test]
fn join_auto_broadcasts_filtered_small_side_and_skips_large_preshuffle() {
    let mut session = rankings_session();
    let schema = Schema::new(vec![
        Field::new("country", DataType::Utf8),
        Field::new("gdp", DataType::Int64),
    ])
    .unwrap();
    let rows: RowBatch = ["us", "de", "fr", "jp", "cn", "br"]
        .iter()
        .enumerate()
        .map(|(idx, c)| vec![s(c), i(idx as i64 * 100)])
        .collect();
    session
        .register_table_from_rows("nations", schema, rows, true, None)
        .unwrap();

    let rows = rows_of(
        session
            .execute(
                "SELECT r.pageURL, n.gdp FROM rankings r JOIN nations n \
                 ON r.country = n.country WHERE n.gdp < 150",
            )
            .unwrap(),
    );
    // gdp < 150: us (0), de (100) -> 20 ranking rows join.
    assert_eq!(rows.len(), 20);
    let report = session.last_report().unwrap();
    assert!(
        report.pde_decisions.iter().any(|d| d.contains("map_join")),
        "decisions: {:?}",
        report.pde_decisions
    );
    assert!(report
        .pde_decisions
        .iter()
        .any(|d| d.contains("skipped")));
    // The skipped stage reports zero tasks.
    let skipped = report.stages.iter().find(|s| s.status == "skipped");
    assert!(skipped.is_none() || skipped.unwrap().tasks == 0);
}

#[test]
fn forced_shuffle_join_matches_auto_join_results() {
    let run = |force: &str| -> RowBatch {
        let mut session = rankings_session();
        let schema = Schema::new(vec![
            Field::new("country", DataType::Utf8),
            Field::new("gdp", DataType::Int64),
        ])
        .unwrap();
        let rows: RowBatch = ["us", "de", "fr"]
            .iter()
            .enumerate()
            .map(|(idx, c)| vec![s(c), i(idx as i64)])
            .collect();
        session
            .register_table_from_rows("nations", schema, rows, false, None)
            .unwrap();
        session.set_option("force_join", force).unwrap();
        let mut rows = rows_of(
            session
                .execute(
                    "SELECT r.pageURL, n.gdp FROM rankings r JOIN nations n ON r.country = n.country",
                )
                .unwrap(),
        );
        rows.sort_by(skiff::value::cmp_rows);
        rows
    };
    let auto = run("auto");
    let shuffle = run("shuffle");
    let blt = run("broadcast_left");
    let brt = run("broadcast_right");
    assert_eq!(auto, shuffle);
    assert_eq!(auto, blt);
    assert_eq!(auto, brt);
    assert_eq!(auto.len(), 30);
}

#[test]
fn copartitioned_tables_join_with_zero_shuffle_stages() {
    let mut session = Session::new(small_config()).unwrap();
    let line_schema = Schema::new(vec![
        Field::new("orderkey", DataType::Int64),
        Field::new("qty", DataType::Int64),
    ])
    .unwrap();
    let line_rows: RowBatch = (0..64).map(|n| vec![i(n % 16), i(n)]).collect();
    let order_schema = Schema::new(vec![
        Field::new("o_orderkey", DataType::Int64),
        Field::new("prio", DataType::Int64),
    ])
    .unwrap();
    let order_rows: RowBatch = (0..16).map(|n| vec![i(n), i(n % 3)]).collect();
    session
        .register_table_from_rows("lineitem", line_schema, line_rows, true, None)
        .unwrap();
    session
        .register_table_from_rows("orders", order_schema, order_rows, true, None)
        .unwrap();
    session
        .execute(
            "CREATE TABLE l_mem TBLPROPERTIES (\"shark.cache\"=true) \
             AS SELECT * FROM lineitem DISTRIBUTE BY orderkey",
        )
        .unwrap();
    session
        .execute(
            "CREATE TABLE o_mem TBLPROPERTIES (\"shark.cache\"=true, \"copartition\"=\"l_mem\") \
             AS SELECT * FROM orders DISTRIBUTE BY o_orderkey",
        )
        .unwrap();

    let rows = rows_of(
        session
            .execute(
                "SELECT l.qty, o.prio FROM l_mem l JOIN o_mem o ON l.orderkey = o.o_orderkey",
            )
            .unwrap(),
    );
    assert_eq!(rows.len(), 64);
    let report = session.last_report().unwrap();
    assert!(
        report
            .pde_decisions
            .iter()
            .any(|d| d.contains("local_copartitioned")),
        "decisions: {:?}",
        report.pde_decisions
    );
    assert_eq!(
        report
            .stages
            .iter()
            .filter(|s| s.kind == "shuffle_map")
            .count(),
        0
    );
    assert_eq!(report.shuffle_bytes, 0);
}

#[test]
fn pruning_skips_partitions_and_preserves_results() {
    // Data clustered by day: 30 days, one partition per day (8 rows each).
    let mut session = Session::new(small_config()).unwrap();
    let schema = Schema::new(vec![
        Field::new("day", DataType::Date),
        Field::new("hits", DataType::Int64),
    ])
    .unwrap();
    let rows: RowBatch = (0..240)
        .map(|n| vec![Some(Value::Date(19000 + n / 8)), i(n as i64)])
        .collect();
    session
        .register_table_from_rows("logs", schema, rows, true, None)
        .unwrap();

    let q = "SELECT COUNT(*) FROM logs WHERE day = DATE '2022-01-08'";
    let with = rows_of(session.execute(q).unwrap());
    let scanned_with = session.last_report().unwrap().scanned_partitions;
    session.set_option("pruning_on", "false").unwrap();
    let without = rows_of(session.execute(q).unwrap());
    let scanned_without = session.last_report().unwrap().scanned_partitions;
    assert_eq!(with, without);
    assert_eq!(with, vec![vec![i(8)]]);
    assert_eq!(scanned_with, 1, "only the matching day's partition scanned");
    assert_eq!(scanned_without, 30);
}

#[test]
fn explain_shows_plan_then_decisions() {
    let mut session = rankings_session();
    let q = "SELECT country, COUNT(*) FROM rankings WHERE pageRank > 10 GROUP BY country";
    let before = session.explain_text(q).unwrap();
    assert!(before.contains("== plan =="));
    assert!(before.contains("scan rankings"));
    assert!(before.contains("merge-aggregate"));
    assert!(!before.contains("pde decisions"));
    session.execute(q).unwrap();
    let after = session.explain_text(q).unwrap();
    assert!(after.contains("== pde decisions (last execution) =="));
}

#[test]
fn evict_then_query_recomputes_via_lineage() {
    let mut session = rankings_session();
    assert!(session.evict("rankings", 0).unwrap());
    assert!(session.evict("rankings", 2).unwrap());
    let rows = rows_of(session.execute("SELECT COUNT(*) FROM rankings").unwrap());
    assert_eq!(rows, vec![vec![i(40)]]);
    let report = session.last_report().unwrap();
    assert_eq!(report.recomputations, 2);
}

#[test]
fn kill_worker_mid_query_returns_identical_results() {
    let baseline = {
        let mut session = rankings_session();
        rows_of(
            session
                .execute("SELECT country, SUM(pageRank) FROM rankings GROUP BY country")
                .unwrap(),
        )
    };
    let mut session = rankings_session();
    session.schedule_fault(FaultEvent {
        trigger: FaultTrigger::TaskCompletions { stage: 1, count: 2 },
        action: FaultAction::KillWorker { worker: 1 },
    });
    let rows = rows_of(
        session
            .execute("SELECT country, SUM(pageRank) FROM rankings GROUP BY country")
            .unwrap(),
    );
    assert_eq!(rows, baseline);
    assert!(session.last_report().unwrap().recomputations > 0);
}

#[test]
fn ml_logreg_verb_trains_on_separable_data() {
    let mut session = Session::new(small_config()).unwrap();
    let schema = Schema::new(vec![
        Field::new("label", DataType::Int64),
        Field::new("f1", DataType::Float64),
        Field::new("f2", DataType::Float64),
    ])
    .unwrap();
    let rows: RowBatch = (0..200)
        .map(|n| {
            let pos = n % 2 == 0;
            let offset = if pos { 1.0 } else { -1.0 };
            let jitter = ((n % 7) as f64 - 3.0) / 16.0;
            vec![
                i(if pos { 1 } else { 0 }),
                Some(Value::Float64(offset + jitter)),
                Some(Value::Float64(offset - jitter)),
            ]
        })
        .collect();
    session
        .register_table_from_rows("points", schema, rows.clone(), true, None)
        .unwrap();
    let out = session
        .ml_logreg("SELECT * FROM points", "auto", "label", 10, 42)
        .unwrap();
    // Training accuracy on the separable set.
    let correct = rows
        .iter()
        .filter(|r| {
            let y = if r[0].as_ref().unwrap().as_i64().unwrap() > 0 {
                1.0
            } else {
                -1.0
            };
            let x1 = r[1].as_ref().unwrap().as_f64().unwrap();
            let x2 = r[2].as_ref().unwrap().as_f64().unwrap();
            let score = out.weights[0] * x1 + out.weights[1] * x2;
            (score > 0.0) == (y > 0.0)
        })
        .count();
    assert!(correct as f64 / rows.len() as f64 >= 0.95);

    // Determinism: same seed, same weights.
    let mut session2 = Session::new(small_config()).unwrap();
    session2
        .register_table_from_rows(
            "points",
            Schema::new(vec![
                Field::new("label", DataType::Int64),
                Field::new("f1", DataType::Float64),
                Field::new("f2", DataType::Float64),
            ])
            .unwrap(),
            rows,
            true,
            None,
        )
        .unwrap();
    let out2 = session2
        .ml_logreg("SELECT * FROM points", "auto", "label", 10, 42)
        .unwrap();
    assert_eq!(out.weights, out2.weights);
}

#[test]
fn ml_kmeans_recovers_separated_clusters() {
    let mut session = Session::new(small_config()).unwrap();
    let schema = Schema::new(vec![
        Field::new("a", DataType::Float64),
        Field::new("b", DataType::Float64),
    ])
    .unwrap();
    // Points exactly at 3 well-separated locations.
    let centers = [(0.0, 0.0), (10.0, 10.0), (-10.0, 5.0)];
    let rows: RowBatch = (0..90)
        .map(|n| {
            let (cx, cy) = centers[n % 3];
            vec![Some(Value::Float64(cx)), Some(Value::Float64(cy))]
        })
        .collect();
    session
        .register_table_from_rows("pts", schema, rows, true, None)
        .unwrap();
    let out = session.ml_kmeans("SELECT * FROM pts", "auto", 3, 1, 7).unwrap();
    let mut got: Vec<(i64, i64)> = out
        .centroids
        .iter()
        .map(|c| (c[0] as i64, c[1] as i64))
        .collect();
    got.sort();
    assert_eq!(got, vec![(-10, 5), (0, 0), (10, 10)]);
}

#[test]
fn ml_verbs_parse_via_execute() {
    let mut session = rankings_session();
    let out = session
        .execute("ML KMEANS SELECT pageRank FROM rankings FEATURES auto K 2 ITER 3 SEED 1")
        .unwrap();
    match out {
        StatementOutput::Ml(text) => assert!(text.contains("kmeans")),
        _ => panic!("expected ml output"),
    }
}

#[test]
fn errors_carry_positions_and_kinds() {
    let mut session = rankings_session();
    let err = session.execute("SELECT").unwrap_err();
    assert!(err.to_string().contains("offset 6"));
    let err = session.execute("SELECT nosuch FROM rankings").unwrap_err();
    assert!(err.to_string().contains("nosuch"));
    let err = session.execute("SELECT * FROM missing").unwrap_err();
    assert!(err.to_string().contains("missing"));
}

#[test]
fn reports_are_written_to_the_report_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.report_dir = Some(dir.path().to_path_buf());
    let mut session = Session::new(cfg).unwrap();
    let schema = Schema::new(vec![Field::new("x", DataType::Int64)]).unwrap();
    let rows: RowBatch = (0..10).map(|n| vec![i(n)]).collect();
    session
        .register_table_from_rows("t", schema, rows, false, None)
        .unwrap();
    session.execute("SELECT COUNT(*) FROM t").unwrap();
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert!(entries.len() >= 2); // load + query reports
    let report = session.last_report().unwrap().render();
    assert!(report.contains("result_rows=1"));
    assert!(report.contains("result_digest="));
}

