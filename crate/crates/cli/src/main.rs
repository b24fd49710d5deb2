//! skiff: interactive shell and batch runner.
//!
//! SQL statements end with `;`. Meta-commands start with `\` and take one
//! line:
//!
//! ```text
//! \open <manifest.toml>        load a table manifest
//! \tables                      list catalog tables
//! \stats <table>               per-partition min/max statistics
//! \explain <query>             plan, plus decisions after execution
//! \set <key> <value>           session option
//! \evict <table> <partition>   drop a resident partition
//! \kill-worker <id> [at stage <n>]
//! \delay-worker <id> <factor>
//! \metrics                     last job report
//! \save <manifest.toml>        write the catalog manifest
//! \quit
//! ```

mod shell;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use skiff::{Session, SessionConfig};

#[derive(Parser, Debug)]
#[command(name = "skiff", about = "miniature fault-tolerant analytical query engine")]
struct Args {
    /// Session configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this script non-interactively; exit 0 iff every statement succeeds.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Number of simulated workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Scheduler / ML seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for machine-readable job reports.
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match &args.config {
        Some(path) => match SessionConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        },
        None => SessionConfig::default(),
    };
    if let Some(w) = args.workers {
        cfg.worker_count = w;
    }
    if let Some(s) = args.seed {
        cfg.scheduler_seed = s;
    }
    if let Some(dir) = &args.report_dir {
        cfg.report_dir = Some(dir.clone());
    }

    let session = match Session::new(cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };

    match &args.script {
        Some(path) => shell::run_script(session, path),
        None => shell::run_repl(session),
    }
}
