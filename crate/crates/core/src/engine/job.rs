//! The job runner: a deterministic discrete-event scheduler driving task
//! waves over the simulated cluster.
//!
//! One logical scheduler owns all state transitions. Workers execute at most
//! one task at a time in virtual time; every task costs one step scaled by
//! the worker's delay factor. All ties break deterministically (lowest task
//! index, lowest worker id), so given (plan, data, config, fault schedule)
//! the results, reports and optimizer decisions are identical on every run.
//! Task payloads within one completion wave are computed data-parallel; each
//! task snapshots its inputs at launch, so in-wave ordering cannot leak into
//! results.
//!
//! Adaptive joins run their pre-shuffle stages first, then the observed
//! output sizes pick map join versus shuffle join; the not-yet-started
//! suffix of the plan is built only after that decision. Reducer coalescing
//! rewrites pending consumer stages the same way. Completed or running
//! stages are never altered.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::engine::plan::{AdaptiveJoin, ExecKind, ExecPlan, ScanInfo};
use crate::engine::report::{JobReport, StageReport};
use crate::engine::shuffle::{shuffle_write, MapOutput, ShuffleWriteConfig};
use crate::engine::stage::{
    exchange_requests, locality_leaf, plan_stages, Stage, StageKind, StageStatus,
};
use crate::engine::{Cluster, FaultAction, FaultEvent, FaultTrigger, WorkerId};
use crate::error::{EngineError, LineageError};
use crate::lineage::{
    evaluate_partition, DatasetId, DatasetNode, EvalContext, NodeBuilder, OperatorSpec,
    PartitionStore,
};
use crate::par::par_map;
use crate::pde::{
    aggregate_stats, choose_reducer_count, coalesce_into, select_join_strategy, BroadcastSide,
    GlobalStats, JoinStrategy,
};
use crate::storage::encode_partition;
use crate::value::{batch_byte_size, RowBatch, Schema};

/// Result of one job: partitions of the final dataset plus the resolved
/// root (the lineage a CREATE TABLE AS captures).
pub struct JobOutput {
    pub root: Arc<DatasetNode>,
    pub partitions: Vec<Option<Arc<RowBatch>>>,
    pub rows: RowBatch,
}

pub fn run_job(
    cluster: &mut Cluster,
    builder: &NodeBuilder,
    plan: &ExecPlan,
    faults: &[FaultEvent],
    job_id: u64,
    statement: &str,
) -> Result<(JobOutput, JobReport), EngineError> {
    let mut runner = Runner::new(cluster, builder, plan, faults, job_id, statement);
    let out = runner.run(plan);
    runner.cluster.clear_job_state();
    out.map(|o| (o, runner.report))
}

// --- scheduler state ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Item {
    /// (task list index) within the running stage.
    Task(usize),
    /// Rerun of an upstream map task: (exchange id, map partition).
    Recovery(DatasetId, usize),
}

#[derive(Debug, Clone)]
struct Running {
    item: Item,
    part: usize,
    attempt: usize,
    start: u64,
    finish: u64,
    /// What to evaluate: the owning stage's root for tasks, the upstream
    /// map stage's root for recovery reruns.
    exec_root: Arc<DatasetNode>,
    /// Present when the evaluation feeds a shuffle write.
    exec_exchange: Option<Arc<DatasetNode>>,
    view: Arc<TaskView>,
}

#[derive(Debug)]
struct TaskBook {
    part: usize,
    done: bool,
    queued: usize,
    live: usize,
    failures: usize,
    attempts: usize,
    speculated: bool,
    blocked: bool,
}

struct StageRun {
    books: Vec<TaskBook>,
    queues: Vec<VecDeque<Item>>,
    running: Vec<Option<Running>>,
    completed_durations: Vec<u64>,
    recovery_inflight: HashSet<(DatasetId, usize)>,
    task_stats: Vec<Option<crate::pde::TaskStats>>,
    outputs: HashMap<usize, Arc<RowBatch>>,
    attempts: usize,
    failed: usize,
    speculative: usize,
}

pub(crate) struct Runner<'a> {
    pub cluster: &'a mut Cluster,
    builder: &'a NodeBuilder,
    scans: HashMap<DatasetId, ScanInfo>,
    faults: Vec<(FaultEvent, bool)>,
    time: u64,
    stages: Vec<Stage>,
    /// exchange id -> (its map stage id, fine reducer count)
    exchange_stage: HashMap<DatasetId, usize>,
    exchange_stats: HashMap<DatasetId, GlobalStats>,
    broadcasts: HashMap<DatasetId, Arc<RowBatch>>,
    result_parts: HashMap<usize, Arc<RowBatch>>,
    completions: HashMap<usize, usize>,
    recompute_workers: BTreeSet<WorkerId>,
    pub report: JobReport,
    job_id: u64,
    resident_cache: Option<(u64, Arc<HashMap<(DatasetId, usize), Arc<crate::storage::ColumnarPartition>>>)>,
}

impl<'a> Runner<'a> {
    fn new(
        cluster: &'a mut Cluster,
        builder: &'a NodeBuilder,
        plan: &ExecPlan,
        faults: &[FaultEvent],
        job_id: u64,
        statement: &str,
    ) -> Runner<'a> {
        let mut report = JobReport {
            job: job_id,
            statement: statement.to_string(),
            ..JobReport::default()
        };
        for info in plan.scans.values() {
            report.scanned_partitions += info.scanned();
            report.pruned_partitions += info.pruned_count();
            report.total_partitions += info.pruned.len();
        }
        Runner {
            cluster,
            builder,
            scans: plan.scans.clone(),
            faults: faults.iter().map(|f| (*f, false)).collect(),
            time: 0,
            stages: Vec::new(),
            exchange_stage: HashMap::new(),
            exchange_stats: HashMap::new(),
            broadcasts: HashMap::new(),
            result_parts: HashMap::new(),
            completions: HashMap::new(),
            recompute_workers: BTreeSet::new(),
            report,
            job_id,
            resident_cache: None,
        }
    }

    fn run(&mut self, plan: &ExecPlan) -> Result<JobOutput, EngineError> {
        if self.cluster.alive_count() == 0 {
            return Err(EngineError::NoAliveWorkers);
        }
        let root = match &plan.kind {
            ExecKind::Static { root } => root.clone(),
            ExecKind::AdaptiveJoin(aj) => self.resolve_adaptive_join(aj)?,
        };

        // Plan the (remaining) graph; exchanges that already ran stay done.
        let completed: HashMap<DatasetId, usize> = self.exchange_stage.clone();
        let new_stages = plan_stages(&root, &self.scans, self.stages.len(), &completed);
        self.stages.extend(new_stages);

        loop {
            let next = self
                .stages
                .iter()
                .filter(|s| {
                    s.status == StageStatus::Pending
                        && s.deps
                            .iter()
                            .all(|&d| self.stages[d].status == StageStatus::Complete)
                })
                .map(|s| s.id)
                .min();
            let Some(sid) = next else { break };
            self.maybe_coalesce_before(sid)?;
            self.run_stage(sid)?;
        }

        if self.stages.iter().any(|s| s.status == StageStatus::Pending) {
            return Err(EngineError::Unrecoverable("stage graph stalled".into()));
        }
        // The result stage carries the final root; PDE rewrites may have
        // replaced the planned one.
        let final_root = self
            .stages
            .iter()
            .find(|s| matches!(s.kind, StageKind::Result))
            .map(|s| s.root.clone())
            .unwrap_or(root);

        let mut partitions: Vec<Option<Arc<RowBatch>>> = vec![None; final_root.partition_count];
        let mut rows = Vec::new();
        for p in 0..final_root.partition_count {
            if let Some(batch) = self.result_parts.get(&p) {
                partitions[p] = Some(batch.clone());
                rows.extend(batch.iter().cloned());
            }
        }
        self.report.result_rows = rows.len();
        self.report.result_digest = JobReport::digest_rows(&rows);
        self.report.time_steps = self.time;
        self.report.recovery_workers = self.recompute_workers.len();
        Ok(JobOutput {
            root: final_root,
            partitions,
            rows,
        })
    }

    // --- adaptive join resolution -----------------------------------------

    fn resolve_adaptive_join(
        &mut self,
        aj: &AdaptiveJoin,
    ) -> Result<Arc<DatasetNode>, EngineError> {
        let fine = self.cluster.cfg.pde.reducer_max.max(1);
        let ex_left = self
            .builder
            .exchange(aj.left.chain.clone(), aj.left.keys.clone(), fine);
        let ex_right = self
            .builder
            .exchange(aj.right.chain.clone(), aj.right.keys.clone(), fine);

        // Pre-shuffle stages; the hinted probably-small side goes first.
        let order: [BroadcastSide; 2] = match aj.hint {
            Some(BroadcastSide::Right) => [BroadcastSide::Right, BroadcastSide::Left],
            _ => [BroadcastSide::Left, BroadcastSide::Right],
        };
        let mut side_stage = HashMap::new();
        for side in order {
            let ex = match side {
                BroadcastSide::Left => &ex_left,
                BroadcastSide::Right => &ex_right,
            };
            let sid = self.push_map_stage(ex);
            side_stage.insert(side, sid);
        }

        let threshold = self.cluster.cfg.pde.broadcast_threshold_bytes;
        let decision = if let Some(hint) = aj.hint {
            let first = side_stage[&hint];
            self.run_stage(first)?;
            let first_ex = match hint {
                BroadcastSide::Left => &ex_left,
                BroadcastSide::Right => &ex_right,
            };
            let observed = self.exchange_stats[&first_ex.id].total_bytes;
            if observed <= threshold {
                // Small as predicted: broadcast it, never pre-shuffle the
                // other side.
                let other = side_stage[&other_side(hint)];
                self.stages[other].status = StageStatus::Skipped;
                self.report.pde_decisions.push(format!(
                    "join strategy=map_join build={} observed_bytes={observed} threshold={threshold}",
                    side_name(hint)
                ));
                self.report
                    .pde_decisions
                    .push(format!("stage {other} skipped (pre-shuffle avoided)"));
                JoinStrategy::Broadcast { side: hint }
            } else {
                self.report.pde_decisions.push(format!(
                    "hint {} observed_bytes={observed} above threshold {threshold}; scheduling other side",
                    side_name(hint)
                ));
                self.run_stage(side_stage[&other_side(hint)])?;
                self.decide_both(&ex_left, &ex_right, threshold)
            }
        } else {
            self.run_stage(side_stage[&BroadcastSide::Left])?;
            self.run_stage(side_stage[&BroadcastSide::Right])?;
            self.decide_both(&ex_left, &ex_right, threshold)
        };

        let join = match decision {
            JoinStrategy::Broadcast { side } => {
                let (left_node, right_node) = match side {
                    // Build from the completed exchange's buckets; probe the
                    // other side's original chain directly.
                    BroadcastSide::Left => (ex_left.clone(), aj.right.chain.clone()),
                    BroadcastSide::Right => (aj.left.chain.clone(), ex_right.clone()),
                };
                let build_side = match side {
                    BroadcastSide::Left => crate::lineage::JoinSide::Left,
                    BroadcastSide::Right => crate::lineage::JoinSide::Right,
                };
                self.builder
                    .broadcast_join(
                        left_node,
                        right_node,
                        build_side,
                        aj.left.keys.clone(),
                        aj.right.keys.clone(),
                    )
                    .map_err(EngineError::Lineage)?
            }
            JoinStrategy::Shuffle { reducers } => {
                let binpack = self.cluster.cfg.pde.binpack_enabled;
                let (l_in, r_in) = if binpack && reducers < fine {
                    let mut lhs = self.exchange_stats[&ex_left.id].bucket_bytes.clone();
                    let mut rhs = self.exchange_stats[&ex_right.id].bucket_bytes.clone();
                    lhs.resize(fine, 0);
                    rhs.resize(fine, 0);
                    let combined: Vec<u64> =
                        lhs.iter().zip(&rhs).map(|(a, b)| a + b).collect();
                    let cplan = coalesce_into(&combined, reducers);
                    self.report
                        .pde_decisions
                        .push(format!("coalesce reducers {fine}->{reducers}"));
                    (
                        self.builder.coalesce(
                            ex_left.clone(),
                            cplan.assignment.clone(),
                            cplan.coarse_count,
                        ),
                        self.builder.coalesce(
                            ex_right.clone(),
                            cplan.assignment.clone(),
                            cplan.coarse_count,
                        ),
                    )
                } else {
                    (ex_left.clone(), ex_right.clone())
                };
                self.builder
                    .hash_join_local(l_in, r_in, aj.left.keys.clone(), aj.right.keys.clone())
                    .map_err(EngineError::Lineage)?
            }
        };

        crate::engine::plan::apply_suffix(
            self.builder,
            join,
            &aj.suffix,
            self.cluster.cfg.pde.reducer_max,
        )
    }

    fn decide_both(
        &mut self,
        ex_left: &Arc<DatasetNode>,
        ex_right: &Arc<DatasetNode>,
        threshold: u64,
    ) -> JoinStrategy {
        let left = &self.exchange_stats[&ex_left.id];
        let right = &self.exchange_stats[&ex_right.id];
        let strategy = select_join_strategy(
            left,
            right,
            threshold,
            &self.cluster.cfg.pde.coalesce_config(),
        );
        match &strategy {
            JoinStrategy::Broadcast { side } => self.report.pde_decisions.push(format!(
                "join strategy=map_join build={} left_bytes={} right_bytes={} threshold={threshold}",
                side_name(*side),
                left.total_bytes,
                right.total_bytes
            )),
            JoinStrategy::Shuffle { .. } => self.report.pde_decisions.push(format!(
                "join strategy=shuffle_join left_bytes={} right_bytes={} threshold={threshold}",
                left.total_bytes, right.total_bytes
            )),
        }
        strategy
    }

    fn push_map_stage(&mut self, exchange: &Arc<DatasetNode>) -> usize {
        let mut stages = plan_stages(
            &exchange.clone(),
            &self.scans,
            self.stages.len(),
            &self.exchange_stage,
        );
        // plan_stages produced a Result stage rooted at the exchange plus its
        // map stage; keep only the map stage.
        let map = stages
            .iter()
            .position(|s| matches!(&s.kind, StageKind::ShuffleMap { exchange: e } if e.id == exchange.id))
            .expect("exchange has a map stage");
        let mut stage = stages.swap_remove(map);
        stage.id = self.stages.len();
        let sid = stage.id;
        self.stages.push(stage);
        sid
    }

    // --- reducer coalescing before a pending consumer stage ----------------

    fn maybe_coalesce_before(&mut self, sid: usize) -> Result<(), EngineError> {
        if !self.cluster.cfg.pde.binpack_enabled {
            return Ok(());
        }
        let stage = &self.stages[sid];
        if !matches!(stage.kind, StageKind::Result) {
            return Ok(());
        }
        // Distribute-by roots keep their exact partition structure.
        if matches!(stage.root.op, OperatorSpec::ShuffleExchange { .. }) {
            return Ok(());
        }
        let exchanges = direct_exchanges(&stage.root, &self.scans);
        // Only the single-exchange aggregate shape gets rewritten here; join
        // exchanges were coalesced at resolution time.
        if exchanges.len() != 1 {
            return Ok(());
        }
        let ex = exchanges[0].clone();
        let Some(stats) = self.exchange_stats.get(&ex.id) else {
            return Ok(());
        };
        let fine = ex.partition_count;
        let cfg = self.cluster.cfg.pde.coalesce_config();
        // A fully pruned/empty map side reports fewer buckets than the
        // exchange width; absent buckets weigh zero.
        let mut sizes = stats.bucket_bytes.clone();
        sizes.resize(fine, 0);
        let plan = choose_reducer_count(
            &sizes,
            cfg.target_bytes_per_reducer,
            cfg.reducer_min,
            cfg.reducer_max.min(fine),
        );
        if plan.coarse_count >= fine {
            return Ok(());
        }
        self.report
            .pde_decisions
            .push(format!("coalesce reducers {fine}->{}", plan.coarse_count));
        let coalesced = self
            .builder
            .coalesce(ex.clone(), plan.assignment, plan.coarse_count);
        let new_root = rebuild_with(self.builder, &self.stages[sid].root, ex.id, &coalesced);
        let scans = self.scans.clone();
        let stage = &mut self.stages[sid];
        stage.root = new_root.clone();
        stage.task_parts = (0..new_root.partition_count)
            .filter(|&p| crate::engine::stage::partition_needed(&new_root, p, &scans))
            .collect();
        stage.ops.insert(0, "(rewritten by coalesce)".into());
        Ok(())
    }

    // --- the stage event loop ----------------------------------------------

    fn run_stage(&mut self, sid: usize) -> Result<(), EngineError> {
        self.stages[sid].status = StageStatus::Running;
        self.fire_stage_start_faults(sid)?;

        let stage = self.stages[sid].clone();
        let n_workers = self.cluster.workers.len();
        let n_tasks = stage.task_parts.len();

        let mut run = StageRun {
            books: stage
                .task_parts
                .iter()
                .map(|&part| TaskBook {
                    part,
                    done: false,
                    queued: 0,
                    live: 0,
                    failures: 0,
                    attempts: 0,
                    speculated: false,
                    blocked: false,
                })
                .collect(),
            queues: (0..n_workers).map(|_| VecDeque::new()).collect(),
            running: (0..n_workers).map(|_| None).collect(),
            completed_durations: Vec::new(),
            recovery_inflight: HashSet::new(),
            task_stats: vec![None; n_tasks],
            outputs: HashMap::new(),
            attempts: 0,
            failed: 0,
            speculative: 0,
        };

        for ti in 0..n_tasks {
            self.enqueue_task(&stage, &mut run, ti, None)?;
        }

        loop {
            if run.books.iter().all(|b| b.done) {
                break;
            }
            if self.cluster.alive_count() == 0 {
                return Err(EngineError::NoAliveWorkers);
            }

            self.start_work(&stage, &mut run)?;

            // Next event: earliest completion, wake-up for a potential
            // speculation, or a time-step fault.
            let mut t_next: Option<u64> = run
                .running
                .iter()
                .enumerate()
                .filter(|(w, r)| self.cluster.workers[*w].alive && r.is_some())
                .map(|(_, r)| r.as_ref().unwrap().finish)
                .min();
            if let Some(t_spec) = self.speculation_wake_time(&run) {
                t_next = Some(t_next.map_or(t_spec, |t| t.min(t_spec)));
            }
            for (f, applied) in &self.faults {
                if let FaultTrigger::TimeStep { step } = f.trigger {
                    if !applied && step >= self.time {
                        t_next = Some(t_next.map_or(step, |t| t.min(step)));
                    }
                }
            }

            let Some(t_next) = t_next else {
                // Nothing running: either blocked tasks became serviceable
                // (their recoveries finished) or we are stuck.
                let progressed = self.requeue_blocked(&stage, &mut run)?;
                if !progressed {
                    return Err(EngineError::Unrecoverable(
                        "scheduler stalled with unrunnable tasks".into(),
                    ));
                }
                continue;
            };

            self.time = t_next;
            self.apply_time_faults(sid, &mut run)?;

            // Completion wave at this instant.
            let mut wave: Vec<(WorkerId, Running)> = Vec::new();
            for w in 0..n_workers {
                if !self.cluster.workers[w].alive {
                    continue;
                }
                if let Some(r) = &run.running[w] {
                    if r.finish == self.time {
                        wave.push((w, run.running[w].take().unwrap()));
                    }
                }
            }
            wave.sort_by_key(|(w, r)| (r.item, r.attempt, *w));

            let results = par_map(
                self.cluster.cfg.exec_mode,
                wave,
                |(w, r)| -> (WorkerId, Running, Result<ExecOutcome, EngineError>) {
                    let out = execute_item(&r);
                    (w, r, out)
                },
            );

            for (w, r, outcome) in results {
                if !self.cluster.workers[w].alive {
                    // Killed by a completion-triggered fault earlier in this
                    // wave; the attempt is lost.
                    self.record_item_failure(&stage, &mut run, &r)?;
                    continue;
                }
                self.apply_completion(sid, &stage, &mut run, w, r, outcome?)?;
            }

            self.requeue_blocked(&stage, &mut run)?;
            self.maybe_speculate(&stage, &mut run)?;
        }

        // Stage barrier: record metrics, aggregate stats, publish outputs.
        self.stages[sid].status = StageStatus::Complete;
        let rows_out: usize = run.outputs.values().map(|b| b.len()).sum();
        match &stage.kind {
            StageKind::ShuffleMap { exchange } => {
                let stats: Vec<crate::pde::TaskStats> =
                    run.task_stats.iter().flatten().cloned().collect();
                for t in &stats {
                    self.report.stats_max_task_bytes =
                        self.report.stats_max_task_bytes.max(t.serialized_len());
                }
                let global = aggregate_stats(&stats, self.cluster.cfg.pde.hh_k);
                self.exchange_stats.insert(exchange.id, global);
                self.exchange_stage.insert(exchange.id, sid);
            }
            StageKind::BroadcastBuild => {
                let mut rows = Vec::new();
                for &part in &stage.task_parts {
                    if let Some(batch) = run.outputs.get(&part) {
                        rows.extend(batch.iter().cloned());
                    }
                }
                self.report.broadcast_bytes += batch_byte_size(&rows) as u64;
                self.broadcasts.insert(stage.root.id, Arc::new(rows));
            }
            StageKind::Result => {
                for (&part, batch) in &run.outputs {
                    self.result_parts.insert(part, batch.clone());
                }
            }
        }
        self.report.stages.push(StageReport {
            id: sid,
            kind: stage.kind_name().into(),
            status: "complete".into(),
            tasks: n_tasks,
            attempts: run.attempts,
            failed: run.failed,
            speculative: run.speculative,
            rows_out,
        });
        Ok(())
    }

    // --- scheduling helpers -------------------------------------------------

    fn enqueue_task(
        &mut self,
        stage: &Stage,
        run: &mut StageRun,
        ti: usize,
        exclude: Option<WorkerId>,
    ) -> Result<(), EngineError> {
        let part = run.books[ti].part;
        let preferred = locality_leaf(&stage.root, part, &self.scans)
            .and_then(|(id, idx)| self.cluster.resident_holder(id, idx))
            .filter(|&w| Some(w) != exclude && self.cluster.workers[w].alive);
        let w = match preferred {
            Some(w) if run.queues[w].len() <= self.cluster.cfg.locality_queue_limit => w,
            _ => self
                .least_loaded_worker(run, exclude)
                .ok_or(EngineError::NoAliveWorkers)?,
        };
        run.queues[w].push_back(Item::Task(ti));
        run.books[ti].queued += 1;
        Ok(())
    }

    fn enqueue_recovery(
        &mut self,
        run: &mut StageRun,
        exchange_id: DatasetId,
        map_part: usize,
    ) -> Result<(), EngineError> {
        if !run.recovery_inflight.insert((exchange_id, map_part)) {
            return Ok(());
        }
        let w = self
            .least_loaded_worker(run, None)
            .ok_or(EngineError::NoAliveWorkers)?;
        run.queues[w].push_back(Item::Recovery(exchange_id, map_part));
        Ok(())
    }

    fn least_loaded_worker(&self, run: &StageRun, exclude: Option<WorkerId>) -> Option<WorkerId> {
        (0..self.cluster.workers.len())
            .filter(|&w| self.cluster.workers[w].alive && Some(w) != exclude)
            .min_by_key(|&w| {
                (
                    run.queues[w].len() + run.running[w].is_some() as usize,
                    w,
                )
            })
    }

    /// Pops queue items onto idle workers, assembling task inputs at launch.
    fn start_work(&mut self, stage: &Stage, run: &mut StageRun) -> Result<(), EngineError> {
        for w in 0..self.cluster.workers.len() {
            if !self.cluster.workers[w].alive {
                continue;
            }
            while run.running[w].is_none() {
                let Some(item) = run.queues[w].pop_front() else {
                    break;
                };
                match item {
                    Item::Task(ti) => {
                        run.books[ti].queued -= 1;
                        if run.books[ti].done {
                            continue; // superseded
                        }
                        let part = run.books[ti].part;
                        match self.prepare_task_view(&stage.root, part, run)? {
                            Some(view) => {
                                let attempt = run.books[ti].attempts;
                                run.books[ti].attempts += 1;
                                run.books[ti].live += 1;
                                run.books[ti].blocked = false;
                                run.attempts += 1;
                                let delay = self.cluster.workers[w].delay_factor.max(1);
                                let exec_exchange = match &stage.kind {
                                    StageKind::ShuffleMap { exchange } => Some(exchange.clone()),
                                    _ => None,
                                };
                                run.running[w] = Some(Running {
                                    item,
                                    part,
                                    attempt,
                                    start: self.time,
                                    finish: self.time + delay,
                                    exec_root: stage.root.clone(),
                                    exec_exchange,
                                    view: Arc::new(view),
                                });
                            }
                            None => {
                                // Inputs missing; recovery items were queued.
                                run.books[ti].blocked = true;
                            }
                        }
                    }
                    Item::Recovery(eid, m) => {
                        // Rerun the upstream map task that produced the lost
                        // buckets.
                        let map_stage = self.exchange_stage[&eid];
                        let exec_root = self.stages[map_stage].root.clone();
                        let StageKind::ShuffleMap { exchange } =
                            self.stages[map_stage].kind.clone()
                        else {
                            unreachable!("recovery targets a map stage")
                        };
                        let view = self.recovery_view(run)?;
                        let delay = self.cluster.workers[w].delay_factor.max(1);
                        run.attempts += 1;
                        run.running[w] = Some(Running {
                            item,
                            part: m,
                            attempt: 0,
                            start: self.time,
                            finish: self.time + delay,
                            exec_root,
                            exec_exchange: Some(exchange),
                            view: Arc::new(view),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Builds the launch-time input snapshot for a task, or returns `None`
    /// (after queueing recovery work) when shuffle inputs are missing.
    fn prepare_task_view(
        &mut self,
        root: &Arc<DatasetNode>,
        part: usize,
        run: &mut StageRun,
    ) -> Result<Option<TaskView>, EngineError> {
        let mut requests = Vec::new();
        exchange_requests(root, part, &self.scans, &mut requests);

        let mut missing = Vec::new();
        for (ex, _) in &requests {
            let map_stage = self.exchange_stage.get(&ex.id).copied();
            let map_parts = match map_stage {
                Some(ms) => self.stages[ms].task_parts.clone(),
                None => (0..ex.parents[0].partition_count).collect(),
            };
            for m in map_parts {
                if self.bucket_holder(ex.id, m).is_none() {
                    missing.push((ex.id, m));
                }
            }
        }
        if !missing.is_empty() {
            for (eid, m) in missing {
                self.enqueue_recovery(run, eid, m)?;
            }
            return Ok(None);
        }

        let mut prefetched = HashMap::new();
        for (ex, r) in &requests {
            if prefetched.contains_key(&(ex.id, *r)) {
                continue;
            }
            let map_stage = self.exchange_stage[&ex.id];
            let map_parts = self.stages[map_stage].task_parts.clone();
            let mut rows = Vec::new();
            for m in map_parts {
                let holder = self.bucket_holder(ex.id, m).expect("checked above");
                let output = self.cluster.workers[holder].map_outputs[&(ex.id, m)].clone();
                let bucket = &output.buckets[*r];
                self.report.shuffle_bytes += bucket.byte_size() as u64;
                rows.extend(bucket.read()?.iter().cloned());
            }
            prefetched.insert((ex.id, *r), Arc::new(rows));
        }

        Ok(Some(self.base_view(prefetched)))
    }

    fn recovery_view(&mut self, _run: &StageRun) -> Result<TaskView, EngineError> {
        Ok(self.base_view(HashMap::new()))
    }

    fn base_view(&mut self, prefetched: HashMap<(DatasetId, usize), Arc<RowBatch>>) -> TaskView {
        TaskView {
            registry: self.builder.registry().clone(),
            resident: self.resident_view(),
            prefetched,
            broadcasts: self.broadcasts.clone(),
            local: Mutex::new(HashMap::new()),
            published: Mutex::new(Vec::new()),
            job_id: self.job_id,
            spill_threshold: self.cluster.cfg.spill_threshold_bytes,
            scratch_dir: self.cluster.cfg.scratch_dir.clone(),
            hh_k: self.cluster.cfg.pde.hh_k,
            histogram_buckets: self.cluster.cfg.pde.histogram_buckets,
        }
    }

    fn bucket_holder(&self, exchange: DatasetId, map_part: usize) -> Option<WorkerId> {
        self.cluster
            .workers
            .iter()
            .enumerate()
            .find(|(_, w)| w.alive && w.map_outputs.contains_key(&(exchange, map_part)))
            .map(|(i, _)| i)
    }

    fn resident_view(
        &mut self,
    ) -> Arc<HashMap<(DatasetId, usize), Arc<crate::storage::ColumnarPartition>>> {
        if let Some((t, view)) = &self.resident_cache {
            if *t == self.time {
                return view.clone();
            }
        }
        let mut map = HashMap::new();
        for w in self.cluster.workers.iter().filter(|w| w.alive) {
            for (k, v) in &w.resident {
                map.insert(*k, v.clone());
            }
        }
        let view = Arc::new(map);
        self.resident_cache = Some((self.time, view.clone()));
        view
    }

    fn requeue_blocked(&mut self, stage: &Stage, run: &mut StageRun) -> Result<bool, EngineError> {
        let mut progressed = false;
        for ti in 0..run.books.len() {
            let b = &run.books[ti];
            if b.blocked && !b.done && b.queued == 0 && b.live == 0 {
                run.books[ti].blocked = false;
                self.enqueue_task(stage, run, ti, None)?;
                progressed = true;
            }
        }
        Ok(progressed)
    }

    fn apply_completion(
        &mut self,
        sid: usize,
        stage: &Stage,
        run: &mut StageRun,
        w: WorkerId,
        r: Running,
        outcome: ExecOutcome,
    ) -> Result<(), EngineError> {
        // Publish recomputed cache-flagged partitions to this worker.
        if !outcome.published.is_empty() {
            self.report.recomputations += outcome.published.len();
            self.recompute_workers.insert(w);
            for (id, idx, rows, schema) in outcome.published {
                let encoded = encode_partition(&rows, &schema, &self.cluster.cfg.storage)
                    .map_err(|e| EngineError::Lineage(LineageError::Storage(e)))?;
                self.cluster.workers[w]
                    .resident
                    .insert((id, idx), Arc::new(encoded.columns));
            }
            self.resident_cache = None;
        }

        match r.item {
            Item::Task(ti) => {
                run.books[ti].live -= 1;
                if run.books[ti].done {
                    return Ok(()); // a sibling attempt already won
                }
                run.books[ti].done = true;
                // Cancel the losing attempt, if any.
                for ow in 0..run.running.len() {
                    if let Some(other) = &run.running[ow] {
                        if other.item == Item::Task(ti) {
                            run.running[ow] = None;
                            run.books[ti].live -= 1;
                        }
                    }
                }
                match &stage.kind {
                    StageKind::ShuffleMap { exchange } => {
                        let output = outcome.map_output.expect("map task writes buckets");
                        run.task_stats[ti] = Some(output.stats.clone());
                        self.cluster.workers[w]
                            .map_outputs
                            .insert((exchange.id, r.part), Arc::new(output));
                    }
                    _ => {
                        run.outputs.insert(r.part, outcome.rows);
                    }
                }
                run.completed_durations.push(r.finish - r.start);
                *self.completions.entry(sid).or_insert(0) += 1;
                let count = self.completions[&sid];
                self.fire_completion_faults(sid, count, run)?;
            }
            Item::Recovery(eid, m) => {
                run.recovery_inflight.remove(&(eid, m));
                let output = outcome.map_output.expect("recovery rewrites buckets");
                self.cluster.workers[w]
                    .map_outputs
                    .insert((eid, m), Arc::new(output));
                self.report.recomputations += 1;
                self.recompute_workers.insert(w);
            }
        }
        Ok(())
    }

    fn record_item_failure(
        &mut self,
        stage: &Stage,
        run: &mut StageRun,
        r: &Running,
    ) -> Result<(), EngineError> {
        run.failed += 1;
        match r.item {
            Item::Task(ti) => {
                run.books[ti].live = run.books[ti].live.saturating_sub(1);
                run.books[ti].failures += 1;
                if run.books[ti].failures >= self.cluster.cfg.retry_limit {
                    return Err(EngineError::RetriesExceeded {
                        stage: stage.id,
                        partition: run.books[ti].part,
                        attempts: run.books[ti].failures,
                    });
                }
                if !run.books[ti].done && run.books[ti].live == 0 && run.books[ti].queued == 0 {
                    self.enqueue_task(stage, run, ti, None)?;
                }
            }
            Item::Recovery(eid, m) => {
                run.recovery_inflight.remove(&(eid, m));
                self.enqueue_recovery(run, eid, m)?;
            }
        }
        Ok(())
    }

    // --- speculation ---------------------------------------------------------

    fn speculation_threshold(&self, run: &StageRun) -> Option<u64> {
        if !self.cluster.cfg.speculation_on || run.completed_durations.is_empty() {
            return None;
        }
        let done = run.books.iter().filter(|b| b.done).count();
        if done * 2 < run.books.len() {
            return None;
        }
        let mut d = run.completed_durations.clone();
        d.sort_unstable();
        let median = d[d.len() / 2];
        Some(((median as f64) * self.cluster.cfg.speculation_ratio).ceil() as u64)
    }

    fn speculation_wake_time(&self, run: &StageRun) -> Option<u64> {
        let threshold = self.speculation_threshold(run)?;
        run.running
            .iter()
            .enumerate()
            .filter(|(w, r)| self.cluster.workers[*w].alive && r.is_some())
            .filter_map(|(_, r)| {
                let r = r.as_ref().unwrap();
                if let Item::Task(ti) = r.item {
                    if !run.books[ti].speculated && run.books[ti].live == 1 {
                        let eligible_at = r.start + threshold;
                        return (eligible_at > self.time).then_some(eligible_at);
                    }
                }
                None
            })
            .min()
    }

    fn maybe_speculate(&mut self, stage: &Stage, run: &mut StageRun) -> Result<(), EngineError> {
        let Some(threshold) = self.speculation_threshold(run) else {
            return Ok(());
        };
        let candidates: Vec<(usize, WorkerId)> = run
            .running
            .iter()
            .enumerate()
            .filter(|(w, r)| self.cluster.workers[*w].alive && r.is_some())
            .filter_map(|(w, r)| {
                let r = r.as_ref().unwrap();
                match r.item {
                    Item::Task(ti)
                        if !run.books[ti].speculated
                            && !run.books[ti].done
                            && run.books[ti].live == 1
                            && run.books[ti].queued == 0
                            && self.time - r.start >= threshold =>
                    {
                        Some((ti, w))
                    }
                    _ => None,
                }
            })
            .collect();
        for (ti, w) in candidates {
            run.books[ti].speculated = true;
            run.speculative += 1;
            self.enqueue_task(stage, run, ti, Some(w))?;
        }
        Ok(())
    }

    // --- fault application ----------------------------------------------------

    fn fire_stage_start_faults(&mut self, sid: usize) -> Result<(), EngineError> {
        let due: Vec<FaultAction> = self
            .faults
            .iter_mut()
            .filter(|(f, applied)| {
                !*applied && matches!(f.trigger, FaultTrigger::StageStart { stage } if stage == sid)
            })
            .map(|(f, applied)| {
                *applied = true;
                f.action
            })
            .collect();
        for action in due {
            self.apply_fault_action(action, None)?;
        }
        Ok(())
    }

    fn fire_completion_faults(
        &mut self,
        sid: usize,
        count: usize,
        run: &mut StageRun,
    ) -> Result<(), EngineError> {
        let due: Vec<FaultAction> = self
            .faults
            .iter_mut()
            .filter(|(f, applied)| {
                !*applied
                    && matches!(
                        f.trigger,
                        FaultTrigger::TaskCompletions { stage, count: c } if stage == sid && c == count
                    )
            })
            .map(|(f, applied)| {
                *applied = true;
                f.action
            })
            .collect();
        for action in due {
            self.apply_fault_action(action, Some(run))?;
        }
        Ok(())
    }

    fn apply_time_faults(&mut self, _sid: usize, run: &mut StageRun) -> Result<(), EngineError> {
        let now = self.time;
        let due: Vec<FaultAction> = self
            .faults
            .iter_mut()
            .filter(|(f, applied)| {
                !*applied && matches!(f.trigger, FaultTrigger::TimeStep { step } if step <= now)
            })
            .map(|(f, applied)| {
                *applied = true;
                f.action
            })
            .collect();
        for action in due {
            self.apply_fault_action(action, Some(run))?;
        }
        Ok(())
    }

    fn apply_fault_action(
        &mut self,
        action: FaultAction,
        run: Option<&mut StageRun>,
    ) -> Result<(), EngineError> {
        match action {
            FaultAction::DelayWorker { worker, factor } => {
                self.cluster.delay_worker(worker, factor);
            }
            FaultAction::KillWorker { worker } => {
                self.cluster.kill_worker(worker);
                self.resident_cache = None;
                if let Some(run) = run {
                    // Fail its running attempt and re-home its queue.
                    let stage = self
                        .stages
                        .iter()
                        .find(|s| s.status == StageStatus::Running)
                        .cloned();
                    if let Some(r) = run.running.get_mut(worker).and_then(Option::take) {
                        if let Some(stage) = &stage {
                            self.record_item_failure(stage, run, &r)?;
                        }
                    }
                    let orphaned: Vec<Item> = run.queues[worker].drain(..).collect();
                    for item in orphaned {
                        match item {
                            Item::Task(ti) => {
                                run.books[ti].queued -= 1;
                                if let Some(stage) = &stage {
                                    if !run.books[ti].done
                                        && run.books[ti].queued == 0
                                        && run.books[ti].live == 0
                                    {
                                        self.enqueue_task(stage, run, ti, None)?;
                                    }
                                }
                            }
                            Item::Recovery(eid, m) => {
                                run.recovery_inflight.remove(&(eid, m));
                                self.enqueue_recovery(run, eid, m)?;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn other_side(s: BroadcastSide) -> BroadcastSide {
    match s {
        BroadcastSide::Left => BroadcastSide::Right,
        BroadcastSide::Right => BroadcastSide::Left,
    }
}

fn side_name(s: BroadcastSide) -> &'static str {
    match s {
        BroadcastSide::Left => "left",
        BroadcastSide::Right => "right",
    }
}

/// Finds exchange nodes directly under `node` without crossing stage,
/// table, or coalesce boundaries.
fn direct_exchanges(
    node: &Arc<DatasetNode>,
    scans: &HashMap<DatasetId, ScanInfo>,
) -> Vec<Arc<DatasetNode>> {
    fn walk(
        node: &Arc<DatasetNode>,
        scans: &HashMap<DatasetId, ScanInfo>,
        out: &mut Vec<Arc<DatasetNode>>,
    ) {
        if scans.contains_key(&node.id) {
            return;
        }
        match &node.op {
            OperatorSpec::ShuffleExchange { .. } => out.push(node.clone()),
            OperatorSpec::Source(_) | OperatorSpec::Coalesce { .. } => {}
            OperatorSpec::BroadcastJoin { build_side, .. } => {
                let probe = match build_side {
                    crate::lineage::JoinSide::Left => &node.parents[1],
                    crate::lineage::JoinSide::Right => &node.parents[0],
                };
                walk(probe, scans, out);
            }
            _ => {
                for p in &node.parents {
                    walk(p, scans, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(node, scans, &mut out);
    out
}

/// Rebuilds the chain from `node` down, substituting `replacement` for the
/// node with id `target`.
fn rebuild_with(
    builder: &NodeBuilder,
    node: &Arc<DatasetNode>,
    target: DatasetId,
    replacement: &Arc<DatasetNode>,
) -> Arc<DatasetNode> {
    if node.id == target {
        return replacement.clone();
    }
    if node.parents.is_empty() {
        return node.clone();
    }
    let new_parents: Vec<Arc<DatasetNode>> = node
        .parents
        .iter()
        .map(|p| rebuild_with(builder, p, target, replacement))
        .collect();
    if new_parents
        .iter()
        .zip(&node.parents)
        .all(|(a, b)| a.id == b.id)
    {
        return node.clone();
    }
    builder.with_parents(node, new_parents)
}

// --- task execution (pure) -----------------------------------------------

/// Launch-time snapshot a task computes against. Reads go local overlay ->
/// prefetched shuffle partitions -> resident columnar; writes of
/// cache-flagged nodes are collected for publication by the scheduler.
struct TaskView {
    registry: Arc<crate::lineage::FunctionRegistry>,
    resident: Arc<HashMap<(DatasetId, usize), Arc<crate::storage::ColumnarPartition>>>,
    prefetched: HashMap<(DatasetId, usize), Arc<RowBatch>>,
    broadcasts: HashMap<DatasetId, Arc<RowBatch>>,
    local: Mutex<HashMap<(DatasetId, usize), Arc<RowBatch>>>,
    published: Mutex<Vec<(DatasetId, usize, Arc<RowBatch>, Schema)>>,
    // shuffle-write parameters
    job_id: u64,
    spill_threshold: usize,
    scratch_dir: std::path::PathBuf,
    hh_k: usize,
    histogram_buckets: usize,
}

impl std::fmt::Debug for TaskView {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TaskView")
    }
}

impl PartitionStore for TaskView {
    fn get(&self, id: DatasetId, index: usize) -> Option<Arc<RowBatch>> {
        if let Some(rows) = self.local.lock().get(&(id, index)) {
            return Some(rows.clone());
        }
        if let Some(rows) = self.prefetched.get(&(id, index)) {
            return Some(rows.clone());
        }
        if let Some(columnar) = self.resident.get(&(id, index)) {
            let rows = Arc::new(columnar.decode_rows().ok()?);
            self.local.lock().insert((id, index), rows.clone());
            return Some(rows);
        }
        None
    }

    fn put(&self, node: &DatasetNode, index: usize, rows: &Arc<RowBatch>) {
        self.local.lock().insert((node.id, index), rows.clone());
        if node.cache {
            self.published
                .lock()
                .push((node.id, index, rows.clone(), node.schema.clone()));
        }
    }

    fn whole_dataset(&self, id: DatasetId) -> Option<Arc<RowBatch>> {
        self.broadcasts.get(&id).cloned()
    }
}

struct ExecOutcome {
    rows: Arc<RowBatch>,
    map_output: Option<MapOutput>,
    published: Vec<(DatasetId, usize, Arc<RowBatch>, Schema)>,
}

fn execute_item(r: &Running) -> Result<ExecOutcome, EngineError> {
    let registry = r.view.registry.clone();
    let ctx = EvalContext::new(&registry, r.view.as_ref());

    let rows = evaluate_partition(&ctx, &r.exec_root, r.part).map_err(EngineError::Lineage)?;

    let map_output = match &r.exec_exchange {
        Some(ex) => {
            let OperatorSpec::ShuffleExchange { keys, reducers } = &ex.op else {
                unreachable!("map stage exchange")
            };
            let cfg = ShuffleWriteConfig {
                reducers: *reducers,
                keys,
                spill_threshold_bytes: r.view.spill_threshold,
                scratch_dir: &r.view.scratch_dir,
                file_tag: format!("j{}-e{}-m{}-a{}", r.view.job_id, ex.id, r.part, r.attempt),
                hh_k: r.view.hh_k,
                histogram_buckets: r.view.histogram_buckets,
            };
            Some(shuffle_write(&rows, &cfg)?)
        }
        None => None,
    };

    Ok(ExecOutcome {
        rows,
        map_output,
        published: r.view.published.lock().drain(..).collect(),
    })
}
