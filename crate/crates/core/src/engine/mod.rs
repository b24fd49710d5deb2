//! Simulated multi-worker cluster: stage-based scheduling over the lineage
//! DAG, memory-based shuffle with spill, deterministic fault injection,
//! speculative execution and parallel recovery.
//!
//! Workers are in-process executors with private state; nothing crosses the
//! worker boundary except explicit transfers (bucket fetches, broadcast
//! variables, published partitions). The scheduler advances a virtual clock
//! and breaks every tie deterministically, so a job's outputs, reports and
//! decisions depend only on (plan, data, config, fault schedule) — never on
//! host thread timing. Task payload execution inside one clock step is
//! data-parallel.

pub mod job;
pub mod plan;
pub mod report;
pub mod shuffle;
pub mod stage;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::lineage::DatasetId;
use crate::par::ExecMode;
use crate::pde::CoalesceConfig;
use crate::storage::{ColumnarPartition, StorageOptions};

pub use job::run_job;
pub use plan::{AdaptiveJoin, ExecKind, ExecPlan, JoinInput, ScanInfo, SuffixStep};
pub use report::JobReport;
pub use stage::{plan_stages, Stage, StageKind, StageStatus};

pub type WorkerId = usize;

/// When to apply a fault action, in deterministic scheduler terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum FaultTrigger {
    /// When the stage with this id starts running.
    StageStart { stage: usize },
    /// After `count` task completions in this stage.
    TaskCompletions { stage: usize, count: usize },
    /// When the virtual clock reaches `step`.
    TimeStep { step: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum FaultAction {
    KillWorker { worker: WorkerId },
    DelayWorker { worker: WorkerId, factor: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    #[serde(flatten)]
    pub trigger: FaultTrigger,
    #[serde(flatten)]
    pub action: FaultAction,
}

/// PDE knobs consumed by the runtime optimizer.
#[derive(Debug, Clone)]
pub struct PdeOptions {
    pub broadcast_threshold_bytes: u64,
    pub target_bytes_per_reducer: u64,
    pub reducer_min: usize,
    pub reducer_max: usize,
    pub binpack_enabled: bool,
    pub hh_k: usize,
    pub histogram_buckets: usize,
}

impl PdeOptions {
    pub fn coalesce_config(&self) -> CoalesceConfig {
        CoalesceConfig {
            target_bytes_per_reducer: self.target_bytes_per_reducer,
            reducer_min: self.reducer_min,
            reducer_max: self.reducer_max,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub worker_count: usize,
    pub speculation_on: bool,
    pub spill_threshold_bytes: usize,
    pub scheduler_seed: u64,
    /// A task fails the job after this many failed attempts.
    pub retry_limit: usize,
    /// Prefer the data-local worker unless its queue is longer than this.
    pub locality_queue_limit: usize,
    /// Speculate when elapsed > ratio x median and the stage is half done.
    pub speculation_ratio: f64,
    pub exec_mode: ExecMode,
    pub scratch_dir: PathBuf,
    pub storage: StorageOptions,
    pub pde: PdeOptions,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let worker_count = 4;
        EngineConfig {
            worker_count,
            speculation_on: true,
            spill_threshold_bytes: 1 << 20,
            scheduler_seed: 0,
            retry_limit: 4,
            locality_queue_limit: 2,
            speculation_ratio: 2.0,
            exec_mode: ExecMode::default(),
            scratch_dir: std::env::temp_dir().join("skiff-scratch"),
            storage: StorageOptions::default(),
            pde: PdeOptions {
                broadcast_threshold_bytes: 1 << 20,
                target_bytes_per_reducer: 64 << 10,
                reducer_min: 1,
                reducer_max: 4 * worker_count,
                binpack_enabled: false,
                hh_k: 16,
                histogram_buckets: 32,
            },
        }
    }
}

/// One simulated worker's private state.
#[derive(Debug, Default)]
pub struct Worker {
    pub alive: bool,
    pub delay_factor: u64,
    /// Resident cache-flagged partitions, columnar.
    pub resident: HashMap<(DatasetId, usize), Arc<ColumnarPartition>>,
    /// Retained shuffle map outputs, keyed by (exchange dataset, map index).
    pub map_outputs: HashMap<(DatasetId, usize), Arc<shuffle::MapOutput>>,
}

/// The long-lived cluster: workers and their state survive across jobs;
/// map outputs are per-job and cleared when a job ends.
pub struct Cluster {
    pub cfg: EngineConfig,
    pub workers: Vec<Worker>,
    job_seq: u64,
}

impl Cluster {
    pub fn new(cfg: EngineConfig) -> Cluster {
        let workers = (0..cfg.worker_count.max(1))
            .map(|_| Worker {
                alive: true,
                delay_factor: 1,
                resident: HashMap::new(),
                map_outputs: HashMap::new(),
            })
            .collect();
        std::fs::create_dir_all(&cfg.scratch_dir).ok();
        Cluster {
            cfg,
            workers,
            job_seq: 0,
        }
    }

    pub fn next_job_id(&mut self) -> u64 {
        self.job_seq += 1;
        self.job_seq
    }

    pub fn alive_count(&self) -> usize {
        self.workers.iter().filter(|w| w.alive).count()
    }

    pub fn kill_worker(&mut self, w: WorkerId) {
        if let Some(worker) = self.workers.get_mut(w) {
            worker.alive = false;
            worker.resident.clear();
            worker.map_outputs.clear();
        }
    }

    pub fn delay_worker(&mut self, w: WorkerId, factor: u64) {
        if let Some(worker) = self.workers.get_mut(w) {
            worker.delay_factor = factor.max(1);
        }
    }

    /// Distributes a table's encoded partitions across alive workers,
    /// round-robin by partition index.
    pub fn publish_table(&mut self, defining: DatasetId, parts: Vec<ColumnarPartition>) {
        let alive: Vec<WorkerId> = (0..self.workers.len())
            .filter(|&w| self.workers[w].alive)
            .collect();
        if alive.is_empty() {
            return;
        }
        for (i, p) in parts.into_iter().enumerate() {
            let w = alive[i % alive.len()];
            self.workers[w].resident.insert((defining, i), Arc::new(p));
        }
    }

    /// Drops a resident partition wherever it lives.
    pub fn evict(&mut self, id: DatasetId, index: usize) -> bool {
        let mut hit = false;
        for w in &mut self.workers {
            hit |= w.resident.remove(&(id, index)).is_some();
        }
        hit
    }

    pub fn drop_dataset(&mut self, id: DatasetId) {
        for w in &mut self.workers {
            w.resident.retain(|(d, _), _| *d != id);
        }
    }

    pub fn resident_holder(&self, id: DatasetId, index: usize) -> Option<WorkerId> {
        self.workers
            .iter()
            .enumerate()
            .find(|(_, w)| w.alive && w.resident.contains_key(&(id, index)))
            .map(|(i, _)| i)
    }

    pub fn resident_count(&self, id: DatasetId) -> usize {
        self.workers
            .iter()
            .filter(|w| w.alive)
            .flat_map(|w| w.resident.keys())
            .filter(|(d, _)| *d == id)
            .count()
    }

    /// Per-worker resident partition counts for a dataset (alive workers).
    pub fn resident_distribution(&self, id: DatasetId) -> Vec<(WorkerId, usize)> {
        self.workers
            .iter()
            .enumerate()
            .filter(|(_, w)| w.alive)
            .map(|(i, w)| (i, w.resident.keys().filter(|(d, _)| *d == id).count()))
            .collect()
    }

    pub fn clear_job_state(&mut self) {
        for w in &mut self.workers {
            w.map_outputs.clear();
        }
    }
}
