//! Black-box tests of the `skiff` binary: batch semantics, error reporting,
//! EXPLAIN output shape, fault meta-commands, and run-to-run determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_skiff")
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Workspace {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        // Deterministic small dataset, clustered by day.
        let mut csv = String::from("id,day,country,score\n");
        for i in 0..600 {
            csv.push_str(&format!(
                "{i},2024-02-{:02},{},{}\n",
                1 + (i / 20) % 28,
                ["us", "de", "fr"][i % 3],
                (i * 7) % 100
            ));
        }
        std::fs::write(ws.path().join("events.csv"), csv).unwrap();
        let manifest = r#"
[[table]]
name = "events"
source = "events.csv"
cache = true
columns = [["id","int64"],["day","date"],["country","utf8"],["score","int64"]]
"#;
        std::fs::write(ws.path().join("catalog.toml"), manifest).unwrap();
        let config = format!(
            "catalog = \"{}\"\ntarget_partition_rows = 64\nreport_dir = \"{}\"\n",
            ws.path().join("catalog.toml").display(),
            ws.path().join("reports").display()
        );
        std::fs::write(ws.path().join("config.toml"), config).unwrap();
        ws
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn script(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn run(&self, script: &Path, seed: u64) -> Output {
        Command::new(bin())
            .arg("--config")
            .arg(self.path().join("config.toml"))
            .arg("--script")
            .arg(script)
            .arg("--seed")
            .arg(seed.to_string())
            .output()
            .unwrap()
    }
}

#[test]
fn batch_runs_queries_and_exits_zero() {
    let ws = Workspace::new();
    let script = ws.script(
        "q.sql",
        "SELECT country, COUNT(*) AS n FROM events GROUP BY country ORDER BY country;\n",
    );
    let out = ws.run(&script, 1);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("country,n"));
    assert!(stdout.contains("de,200"));
    assert!(stdout.contains("3 rows"));
}

#[test]
fn syntax_error_reports_line_and_fails() {
    let ws = Workspace::new();
    let script = ws.script("bad.sql", "SELECT country FROM events;\nSELEC oops;\n");
    let out = ws.run(&script, 1);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn explain_before_and_after_execution() {
    let ws = Workspace::new();
    let q = "SELECT country, COUNT(*) FROM events WHERE score > 90 GROUP BY country";
    let script = ws.script(
        "explain.sql",
        &format!("\\explain {q}\n{q};\n\\explain {q}\n"),
    );
    let out = ws.run(&script, 1);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let first = stdout.find("== plan ==").unwrap();
    let second = stdout.rfind("== plan ==").unwrap();
    assert_ne!(first, second, "expected two explain outputs");
    // Pre-execution: plan only. Post-execution: decisions section added.
    assert!(!stdout[..second].contains("pde decisions"));
    assert!(stdout[second..].contains("== pde decisions (last execution) =="));
    // The plan itself names the stages and the scan with pruning counts.
    assert!(stdout.contains("shuffle_map"));
    assert!(stdout.contains("scan events"));
    assert!(stdout.contains("merge-aggregate"));
}

#[test]
fn explain_join_shows_placeholder_then_strategy() {
    let ws = Workspace::new();
    // A second small table to join with.
    let mut csv = String::from("country,gdp\n");
    for (c, g) in [("us", 70), ("de", 50), ("fr", 40)] {
        csv.push_str(&format!("{c},{g}\n"));
    }
    std::fs::write(ws.path().join("nations.csv"), csv).unwrap();
    let manifest = format!(
        "[[table]]\nname = \"events\"\nsource = \"events.csv\"\ncache = true\ncolumns = [[\"id\",\"int64\"],[\"day\",\"date\"],[\"country\",\"utf8\"],[\"score\",\"int64\"]]\n\n[[table]]\nname = \"nations\"\nsource = \"{}\"\ncolumns = [[\"country\",\"utf8\"],[\"gdp\",\"int64\"]]\n",
        ws.path().join("nations.csv").display()
    );
    std::fs::write(ws.path().join("catalog.toml"), manifest).unwrap();

    let q = "SELECT e.id, n.gdp FROM events e JOIN nations n ON e.country = n.country WHERE n.gdp > 45";
    let script = ws.script("join.sql", &format!("\\explain {q}\n{q};\n\\explain {q}\n"));
    let out = ws.run(&script, 1);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("adaptive join: strategy decided at run time"));
    assert!(stdout.contains("map_join"), "stdout: {stdout}");
}

#[test]
fn kill_worker_meta_recovers_and_reports() {
    let ws = Workspace::new();
    let script = ws.script(
        "kill.sql",
        "\\kill-worker 2 at stage 1\nSELECT country, SUM(score) FROM events GROUP BY country ORDER BY country;\n\\metrics\n",
    );
    let out = ws.run(&script, 1);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    // Results unaffected by the kill.
    let baseline = ws.run(
        &ws.script(
            "base.sql",
            "SELECT country, SUM(score) FROM events GROUP BY country ORDER BY country;\n",
        ),
        1,
    );
    let baseline = String::from_utf8(baseline.stdout).unwrap();
    for line in baseline.lines().take(4) {
        assert!(stdout.contains(line), "missing `{line}`");
    }
    assert!(stdout.contains("recomputations="));
}

#[test]
fn identical_script_and_seed_give_identical_output_and_reports() {
    let run_once = || -> (String, Vec<(String, Vec<u8>)>) {
        let ws = Workspace::new();
        let script = ws.script(
            "det.sql",
            "CREATE TABLE hot TBLPROPERTIES (\"shark.cache\"=true) AS SELECT id, country, score FROM events WHERE score > 20;\n\
             SELECT country, COUNT(*) AS n, AVG(score) AS avg FROM hot GROUP BY country ORDER BY country;\n\
             ML KMEANS SELECT score FROM hot FEATURES auto K 3 ITER 4 SEED 9;\n\
             \\metrics\n",
        );
        let out = ws.run(&script, 42);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut reports: Vec<(String, Vec<u8>)> = std::fs::read_dir(ws.path().join("reports"))
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        reports.sort();
        (String::from_utf8(out.stdout).unwrap(), reports)
    };
    let (out1, reports1) = run_once();
    let (out2, reports2) = run_once();
    assert_eq!(out1, out2, "stdout differs between identical runs");
    assert_eq!(reports1.len(), reports2.len());
    for ((n1, b1), (n2, b2)) in reports1.iter().zip(&reports2) {
        assert_eq!(n1, n2);
        assert_eq!(b1, b2, "report {n1} differs between identical runs");
    }
}

#[test]
fn csv_output_escapes_and_counts() {
    let ws = Workspace::new();
    let script = ws.script(
        "csv.sql",
        "SELECT id FROM events WHERE id < 3 ORDER BY id;\n",
    );
    let out = ws.run(&script, 1);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.ends_with("3 rows\n"));
}
