//! Command loop shared by the REPL and the batch runner: statement
//! splitting, meta-commands, CSV result output.

use std::io::{BufRead, Write};
use std::path::Path;
use std::process::ExitCode;

use skiff::engine::{FaultAction, FaultEvent, FaultTrigger};
use skiff::value::{RowBatch, Schema, Value};
use skiff::{Session, StatementOutput};

pub fn run_repl(mut session: Session) -> ExitCode {
    let stdin = std::io::stdin();
    let mut buffer = String::new();
    print_prompt();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        let trimmed = line.trim();
        if buffer.is_empty() && trimmed.starts_with('\\') {
            if trimmed == "\\quit" || trimmed == "\\q" {
                break;
            }
            if let Err(e) = meta_command(&mut session, trimmed) {
                eprintln!("error: {e}");
            }
            print_prompt();
            continue;
        }
        buffer.push_str(&line);
        buffer.push('\n');
        for stmt in drain_statements(&mut buffer) {
            // The shell reports errors and keeps going.
            if let Err(e) = run_statement(&mut session, &stmt) {
                eprintln!("error: {e}");
            }
        }
        print_prompt();
    }
    ExitCode::SUCCESS
}

/// Non-interactive script execution: same semantics, first error stops the
/// run with its line number and a nonzero exit code.
pub fn run_script(mut session: Session, path: &Path) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    };
    let mut buffer = String::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if buffer.trim().is_empty() && (trimmed.is_empty() || trimmed.starts_with("--")) {
            continue;
        }
        if buffer.trim().is_empty() && trimmed.starts_with('\\') {
            if let Err(e) = meta_command(&mut session, trimmed) {
                eprintln!("error: line {}: {e}", lineno + 1);
                return ExitCode::FAILURE;
            }
            continue;
        }
        buffer.push_str(line);
        buffer.push('\n');
        for stmt in drain_statements(&mut buffer) {
            if let Err(e) = run_statement(&mut session, &stmt) {
                eprintln!("error: line {}: {e}", lineno + 1);
                return ExitCode::FAILURE;
            }
        }
    }
    if !buffer.trim().is_empty() {
        eprintln!("error: unterminated statement at end of script");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

fn print_prompt() {
    print!("skiff> ");
    std::io::stdout().flush().ok();
}

/// Splits complete `;`-terminated statements out of the buffer, respecting
/// quoted strings.
fn drain_statements(buffer: &mut String) -> Vec<String> {
    let mut out = Vec::new();
    loop {
        let mut split_at = None;
        let mut quote: Option<char> = None;
        for (i, c) in buffer.char_indices() {
            match quote {
                Some(q) => {
                    if c == q {
                        quote = None;
                    }
                }
                None => match c {
                    '\'' | '"' => quote = Some(c),
                    ';' => {
                        split_at = Some(i);
                        break;
                    }
                    _ => {}
                },
            }
        }
        match split_at {
            Some(i) => {
                let stmt = buffer[..i].trim().to_string();
                *buffer = buffer[i + 1..].to_string();
                if !stmt.is_empty() {
                    out.push(stmt);
                }
            }
            None => return out,
        }
    }
}

fn run_statement(session: &mut Session, stmt: &str) -> Result<(), skiff::Error> {
    match session.execute(stmt)? {
        StatementOutput::Rows { schema, rows } => print_csv(&schema, &rows),
        StatementOutput::Created {
            table,
            partitions,
            rows,
        } => println!("created table {table} ({rows} rows, {partitions} partitions)"),
        StatementOutput::Dropped { table } => println!("dropped table {table}"),
        StatementOutput::Explained(text) => print!("{text}"),
        StatementOutput::Ml(text) => println!("{text}"),
    }
    Ok(())
}

fn print_csv(schema: &Schema, rows: &RowBatch) {
    let header: Vec<String> = schema
        .fields()
        .iter()
        .map(|f| csv_field(&f.name))
        .collect();
    println!("{}", header.join(","));
    for row in rows {
        let fields: Vec<String> = row
            .iter()
            .map(|v| match v {
                None => String::new(),
                Some(Value::Utf8(s)) => csv_field(s),
                Some(other) => csv_field(&other.to_string()),
            })
            .collect();
        println!("{}", fields.join(","));
    }
    println!("{} rows", rows.len());
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn meta_command(session: &mut Session, line: &str) -> Result<(), skiff::Error> {
    let mut parts = line.split_whitespace();
    let cmd = parts.next().unwrap_or("");
    let rest: Vec<&str> = parts.collect();
    match cmd {
        "\\help" | "\\h" => {
            println!(
                "\\open <manifest>  \\tables  \\stats <t>  \\explain <q>  \\set <k> <v>\n\\evict <t> <p>  \\kill-worker <w> [at stage <n>]  \\delay-worker <w> <f>\n\\metrics  \\save <manifest>  \\quit"
            );
        }
        "\\open" => {
            let path = one_arg(&rest, "\\open <manifest.toml>")?;
            let loaded = session.open_manifest(Path::new(path))?;
            println!("loaded tables: {}", loaded.join(", "));
        }
        "\\save" => {
            let path = one_arg(&rest, "\\save <manifest.toml>")?;
            session.save_manifest(Path::new(path))?;
            println!("wrote {path}");
        }
        "\\tables" => {
            for name in session.catalog.table_names() {
                println!("{name}");
            }
        }
        "\\stats" => {
            let table = one_arg(&rest, "\\stats <table>")?;
            print!("{}", session.table_stats_text(table)?);
        }
        "\\explain" => {
            let query = line["\\explain".len()..].trim();
            if query.is_empty() {
                return Err(skiff::Error::Other("usage: \\explain <query>".into()));
            }
            print!("{}", session.explain_text(query)?);
        }
        "\\set" => {
            if rest.len() != 2 {
                return Err(skiff::Error::Other("usage: \\set <key> <value>".into()));
            }
            session.set_option(rest[0], rest[1])?;
            println!("{} = {}", rest[0], rest[1]);
        }
        "\\evict" => {
            if rest.len() != 2 {
                return Err(skiff::Error::Other("usage: \\evict <table> <partition>".into()));
            }
            let part: usize = rest[1]
                .parse()
                .map_err(|_| skiff::Error::Other(format!("bad partition `{}`", rest[1])))?;
            let hit = session.evict(rest[0], part)?;
            println!(
                "{}",
                if hit { "evicted" } else { "partition was not resident" }
            );
        }
        "\\kill-worker" => {
            // \kill-worker <id>            kill immediately
            // \kill-worker <id> at stage <n>  kill when stage n of the next
            //                                 job starts
            let id: usize = rest
                .first()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| skiff::Error::Other("usage: \\kill-worker <id> [at stage <n>]".into()))?;
            if rest.len() >= 4 && rest[1] == "at" && rest[2] == "stage" {
                let stage: usize = rest[3]
                    .parse()
                    .map_err(|_| skiff::Error::Other(format!("bad stage `{}`", rest[3])))?;
                session.schedule_fault(FaultEvent {
                    trigger: FaultTrigger::StageStart { stage },
                    action: FaultAction::KillWorker { worker: id },
                });
                println!("worker {id} will be killed at stage {stage} of the next job");
            } else {
                session.cluster.kill_worker(id);
                println!("worker {id} killed");
            }
        }
        "\\delay-worker" => {
            if rest.len() != 2 {
                return Err(skiff::Error::Other("usage: \\delay-worker <id> <factor>".into()));
            }
            let id: usize = rest[0]
                .parse()
                .map_err(|_| skiff::Error::Other(format!("bad worker `{}`", rest[0])))?;
            let factor: u64 = rest[1]
                .parse()
                .map_err(|_| skiff::Error::Other(format!("bad factor `{}`", rest[1])))?;
            session.cluster.delay_worker(id, factor);
            println!("worker {id} delayed {factor}x");
        }
        "\\metrics" => match session.last_report() {
            Some(report) => print!("{}", report.render()),
            None => println!("no jobs have run"),
        },
        other => {
            return Err(skiff::Error::Other(format!(
                "unknown meta-command `{other}` (try \\help)"
            )))
        }
    }
    Ok(())
}

fn one_arg<'a>(rest: &[&'a str], usage: &str) -> Result<&'a str, skiff::Error> {
    if rest.len() == 1 {
        Ok(rest[0])
    } else {
        Err(skiff::Error::Other(format!("usage: {usage}")))
    }
}
