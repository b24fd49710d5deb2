//! Machine-readable job reports: one record per job, line-delimited
//! `key=value` pairs with a stable key order. No wall-clock timestamps, so
//! identical runs produce byte-identical reports.

use std::collections::BTreeMap;

use crate::value::{fnv1a64, row_canonical_bytes, Row};

#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub id: usize,
    pub kind: String,
    pub status: String,
    pub tasks: usize,
    pub attempts: usize,
    pub failed: usize,
    pub speculative: usize,
    pub rows_out: usize,
}

#[derive(Debug, Clone, Default)]
pub struct JobReport {
    pub job: u64,
    pub statement: String,
    pub stages: Vec<StageReport>,
    pub shuffle_bytes: u64,
    pub broadcast_bytes: u64,
    /// Cache-flagged partitions recomputed via lineage during this job.
    pub recomputations: usize,
    /// Distinct workers that executed at least one recomputation.
    pub recovery_workers: usize,
    pub scanned_partitions: usize,
    pub pruned_partitions: usize,
    pub total_partitions: usize,
    /// Human-readable optimizer decisions, in the order they were taken.
    pub pde_decisions: Vec<String>,
    pub stats_max_task_bytes: usize,
    pub result_rows: usize,
    pub result_digest: u64,
    pub time_steps: u64,
    /// Extra stable keys (ML iteration metrics and the like).
    pub extra: BTreeMap<String, String>,
}

impl JobReport {
    pub fn digest_rows(rows: &[Row]) -> u64 {
        let mut buf = Vec::new();
        for row in rows {
            buf.extend_from_slice(&row_canonical_bytes(row));
            buf.push(b'\n');
        }
        fnv1a64(&buf)
    }

    /// Serializes the report; the key set and order are stable across runs.
    pub fn to_lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("job={}", self.job),
            format!("statement={}", self.statement.replace('\n', " ")),
            format!("stages={}", self.stages.len()),
        ];
        for s in &self.stages {
            out.push(format!(
                "stage.{}.kind={} status={} tasks={} attempts={} failed={} speculative={} rows_out={}",
                s.id, s.kind, s.status, s.tasks, s.attempts, s.failed, s.speculative, s.rows_out
            ));
        }
        out.push(format!("shuffle_bytes={}", self.shuffle_bytes));
        out.push(format!("broadcast_bytes={}", self.broadcast_bytes));
        out.push(format!("recomputations={}", self.recomputations));
        out.push(format!("recovery_workers={}", self.recovery_workers));
        out.push(format!(
            "partitions scanned={} pruned={} total={}",
            self.scanned_partitions, self.pruned_partitions, self.total_partitions
        ));
        for (i, d) in self.pde_decisions.iter().enumerate() {
            out.push(format!("pde.{i}={d}"));
        }
        out.push(format!("stats_max_task_bytes={}", self.stats_max_task_bytes));
        out.push(format!("result_rows={}", self.result_rows));
        out.push(format!("result_digest={:016x}", self.result_digest));
        out.push(format!("time_steps={}", self.time_steps));
        for (k, v) in &self.extra {
            out.push(format!("{k}={v}"));
        }
        out
    }

    pub fn render(&self) -> String {
        let mut s = self.to_lines().join("\n");
        s.push('\n');
        s
    }
}
