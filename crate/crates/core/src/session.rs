//! The session: catalog + simulated cluster + planner behind one entry
//! point. The CLI, the batch runner and the test suites all drive this.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::plan::{ExecKind, ExecPlan, ScanInfo, SuffixStep};
use crate::engine::report::JobReport;
use crate::engine::{run_job, Cluster, EngineConfig, FaultEvent, PdeOptions};
use crate::error::{Error, SqlError, StorageError};
use crate::lineage::{DatasetNode, FunctionRegistry, NodeBuilder};
use crate::ml::{self, IterationJobs};
use crate::par::ExecMode;
use crate::sql::ast::{SelectStmt, Statement};
use crate::sql::physical::{ForceJoin, PhysicalQuery, PlannerOptions};
use crate::sql::reference::order_rows;
use crate::sql::{explain_physical, optimize, parse, physical_plan, plan_select};
use crate::storage::{
    encode_partition, file_fingerprint, read_rows, Catalog, FileFormat, Manifest, ManifestTable,
    StorageOptions, TableEntry,
};
use crate::value::{Row, RowBatch, Schema, Value};

/// Session-wide configuration; all keys have sensible defaults and load from
/// a TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub worker_count: usize,
    pub speculation_on: bool,
    pub spill_threshold_bytes: usize,
    pub scheduler_seed: u64,
    pub broadcast_threshold_bytes: u64,
    pub target_bytes_per_reducer: u64,
    pub reducer_min: usize,
    /// 0 means 4x worker_count (many fine reduce tasks by default).
    pub reducer_max: usize,
    pub binpack_enabled: bool,
    pub hh_k: usize,
    pub histogram_buckets: usize,
    pub pruning_on: bool,
    pub target_partition_rows: usize,
    pub dictionary_threshold: usize,
    pub enum_threshold: usize,
    pub max_run_savings: f64,
    /// Partition count for DISTRIBUTE BY when no co-partition peer fixes it.
    pub distribute_partitions: usize,
    /// auto | shuffle | broadcast_left | broadcast_right
    pub force_join: String,
    pub parallel: bool,
    pub catalog: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub scratch_dir: Option<PathBuf>,
    /// Applied to the next job, then cleared.
    pub fault_schedule: Vec<FaultEvent>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            worker_count: 4,
            speculation_on: true,
            spill_threshold_bytes: 1 << 20,
            scheduler_seed: 0,
            broadcast_threshold_bytes: 1 << 20,
            target_bytes_per_reducer: 64 << 10,
            reducer_min: 1,
            reducer_max: 0,
            binpack_enabled: false,
            hh_k: 16,
            histogram_buckets: 32,
            pruning_on: true,
            target_partition_rows: 1024,
            dictionary_threshold: 256,
            enum_threshold: 32,
            max_run_savings: 0.5,
            distribute_partitions: 8,
            force_join: "auto".into(),
            parallel: true,
            catalog: None,
            report_dir: None,
            scratch_dir: None,
            fault_schedule: Vec::new(),
        }
    }
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<SessionConfig, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn reducer_max_effective(&self) -> usize {
        if self.reducer_max == 0 {
            4 * self.worker_count.max(1)
        } else {
            self.reducer_max
        }
    }

    fn storage_options(&self) -> StorageOptions {
        StorageOptions {
            target_partition_rows: self.target_partition_rows,
            enum_threshold: self.enum_threshold,
            encode: crate::storage::EncodeOptions {
                dictionary_threshold: self.dictionary_threshold,
                max_run_savings: self.max_run_savings,
            },
            exec_mode: ExecMode::from_flag(self.parallel),
        }
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            worker_count: self.worker_count.max(1),
            speculation_on: self.speculation_on,
            spill_threshold_bytes: self.spill_threshold_bytes,
            scheduler_seed: self.scheduler_seed,
            retry_limit: 4,
            locality_queue_limit: 2,
            speculation_ratio: 2.0,
            exec_mode: ExecMode::from_flag(self.parallel),
            scratch_dir: self
                .scratch_dir
                .clone()
                .unwrap_or_else(|| std::env::temp_dir().join("skiff-scratch")),
            storage: self.storage_options(),
            pde: PdeOptions {
                broadcast_threshold_bytes: self.broadcast_threshold_bytes,
                target_bytes_per_reducer: self.target_bytes_per_reducer,
                reducer_min: self.reducer_min,
                reducer_max: self.reducer_max_effective(),
                binpack_enabled: self.binpack_enabled,
                hh_k: self.hh_k,
                histogram_buckets: self.histogram_buckets,
            },
        }
    }

    fn planner_options(&self) -> Result<PlannerOptions, Error> {
        Ok(PlannerOptions {
            pruning_on: self.pruning_on,
            force_join: ForceJoin::parse(&self.force_join)
                .ok_or_else(|| Error::Config(format!("bad force_join `{}`", self.force_join)))?,
            reducers: self.reducer_max_effective(),
        })
    }
}

/// What one statement produced.
#[derive(Debug)]
pub enum StatementOutput {
    Rows { schema: Schema, rows: RowBatch },
    Created { table: String, partitions: usize, rows: usize },
    Dropped { table: String },
    Explained(String),
    Ml(String),
}

pub struct Session {
    pub cfg: SessionConfig,
    registry: Arc<FunctionRegistry>,
    builder: NodeBuilder,
    pub catalog: Catalog,
    pub cluster: Cluster,
    pending_faults: Vec<FaultEvent>,
    reports: Vec<JobReport>,
    /// Last run-time decisions per normalized statement text, for EXPLAIN
    /// after execution.
    decisions: HashMap<String, Vec<String>>,
}

impl Session {
    pub fn new(cfg: SessionConfig) -> Result<Session, Error> {
        let registry = Arc::new(FunctionRegistry::new());
        ml::register_builtins(&registry);
        let builder = NodeBuilder::new(registry.clone());
        let cluster = Cluster::new(cfg.engine_config());
        let pending_faults = cfg.fault_schedule.clone();
        let mut session = Session {
            cfg,
            registry,
            builder,
            catalog: Catalog::new(),
            cluster,
            pending_faults,
            reports: Vec::new(),
            decisions: HashMap::new(),
        };
        if let Some(path) = session.cfg.catalog.clone() {
            session.open_manifest(&path)?;
        }
        Ok(session)
    }

    pub fn registry(&self) -> &Arc<FunctionRegistry> {
        &self.registry
    }

    pub fn builder(&self) -> &NodeBuilder {
        &self.builder
    }

    pub fn reports(&self) -> &[JobReport] {
        &self.reports
    }

    pub fn last_report(&self) -> Option<&JobReport> {
        self.reports.last()
    }

    pub fn schedule_fault(&mut self, event: FaultEvent) {
        self.pending_faults.push(event);
    }

    fn take_faults(&mut self) -> Vec<FaultEvent> {
        std::mem::take(&mut self.pending_faults)
    }

    // --- statements -------------------------------------------------------

    /// Executes one statement (SQL or an `ML ...` verb).
    pub fn execute(&mut self, text: &str) -> Result<StatementOutput, Error> {
        let trimmed = text.trim().trim_end_matches(';').trim();
        if trimmed.to_ascii_uppercase().starts_with("ML ") {
            return self.execute_ml(trimmed);
        }
        match parse(text).map_err(Error::Sql)? {
            Statement::Select(stmt) => {
                let (schema, rows) = self.run_select(&stmt, trimmed)?;
                Ok(StatementOutput::Rows { schema, rows })
            }
            Statement::Explain(stmt) => Ok(StatementOutput::Explained(
                self.explain_select(&stmt, trimmed)?,
            )),
            Statement::DropTable { name } => {
                let entry = self.catalog.drop_table(&name).map_err(Error::Storage)?;
                self.cluster.drop_dataset(entry.defining.id);
                Ok(StatementOutput::Dropped { table: name })
            }
            Statement::CreateTableAs {
                name,
                properties,
                query,
            } => self.create_table_as(&name, &properties, &query, trimmed),
        }
    }

    fn plan_physical(&mut self, stmt: &SelectStmt) -> Result<PhysicalQuery, Error> {
        let logical = plan_select(stmt, &self.catalog).map_err(Error::Sql)?;
        let logical = optimize(logical);
        physical_plan(&logical, &self.builder, &self.cfg.planner_options()?).map_err(Error::Sql)
    }

    /// Runs a SELECT end to end: plan, execute, collect (sort + limit).
    pub fn run_select(
        &mut self,
        stmt: &SelectStmt,
        statement_text: &str,
    ) -> Result<(Schema, RowBatch), Error> {
        if stmt.distribute_by.is_some() {
            return Err(Error::Sql(SqlError::PlanError(
                "DISTRIBUTE BY requires CREATE TABLE ... AS".into(),
            )));
        }
        let pq = self.plan_physical(stmt)?;
        let (rows, _parts, _root) = self.run_physical(&pq, statement_text)?;
        Ok((pq.output_schema, rows))
    }

    /// Executes a physical query; returns collected rows (ordered/limited),
    /// raw result partitions, and the resolved root.
    fn run_physical(
        &mut self,
        pq: &PhysicalQuery,
        statement_text: &str,
    ) -> Result<(RowBatch, Vec<Option<Arc<RowBatch>>>, Arc<DatasetNode>), Error> {
        let faults = self.take_faults();
        let job_id = self.cluster.next_job_id();
        let (out, mut report) = run_job(
            &mut self.cluster,
            &self.builder,
            &pq.exec,
            &faults,
            job_id,
            statement_text,
        )
        .map_err(Error::Engine)?;
        let mut decisions = pq.notes.clone();
        decisions.extend(report.pde_decisions.clone());
        report.pde_decisions = decisions.clone();
        self.decisions
            .insert(normalize(statement_text), decisions);

        let mut rows = out.rows;
        if !pq.order_by.is_empty() {
            rows.sort_by(|a, b| order_rows(a, b, &pq.order_by));
        }
        if let Some(n) = pq.limit {
            rows.truncate(n);
        }
        report.result_rows = rows.len();
        report.result_digest = JobReport::digest_rows(&rows);
        self.write_report(&report)?;
        self.reports.push(report);
        Ok((rows, out.partitions, out.root))
    }

    fn explain_select(&mut self, stmt: &SelectStmt, text: &str) -> Result<String, Error> {
        let pq = self.plan_physical(stmt)?;
        let mut s = explain_physical(&pq);
        if let Some(decisions) = self.decisions.get(&normalize(text)) {
            s.push_str("== pde decisions (last execution) ==\n");
            for d in decisions {
                s.push_str(&format!("{d}\n"));
            }
        }
        Ok(s)
    }

    /// `\explain` meta-command and EXPLAIN statement entry point.
    pub fn explain_text(&mut self, query: &str) -> Result<String, Error> {
        let stmt = match parse(query).map_err(Error::Sql)? {
            Statement::Select(s) | Statement::Explain(s) => s,
            _ => {
                return Err(Error::Sql(SqlError::PlanError(
                    "EXPLAIN expects a SELECT".into(),
                )))
            }
        };
        self.explain_select(&stmt, query.trim().trim_end_matches(';').trim())
    }

    // --- tables -------------------------------------------------------------

    fn create_table_as(
        &mut self,
        name: &str,
        properties: &[(String, String)],
        query: &SelectStmt,
        statement_text: &str,
    ) -> Result<StatementOutput, Error> {
        if self.catalog.contains(name) {
            return Err(Error::Storage(StorageError::TableExists(name.into())));
        }
        if !query.order_by.is_empty() {
            return Err(Error::Sql(SqlError::PlanError(
                "ORDER BY is not allowed in CREATE TABLE ... AS".into(),
            )));
        }

        let mut cached = false;
        let mut copartition: Option<String> = None;
        let mut warnings = Vec::new();
        for (k, v) in properties {
            match k.to_ascii_lowercase().as_str() {
                "shark.cache" => cached = v.eq_ignore_ascii_case("true"),
                "copartition" => copartition = Some(v.clone()),
                other => warnings.push(format!("ignoring unknown table property `{other}`")),
            }
        }

        let mut pq = self.plan_physical(query)?;
        // Global LIMIT must live in the lineage graph for derived tables.
        if let Some(n) = pq.limit.take() {
            match &mut pq.exec.kind {
                ExecKind::Static { root } => {
                    let fine = root.partition_count;
                    let gathered = self.builder.coalesce(root.clone(), vec![0; fine], 1);
                    *root = self.builder.limit(gathered, n);
                }
                ExecKind::AdaptiveJoin(aj) => aj.suffix.push(SuffixStep::CollectLimit(n)),
            }
        }

        // DISTRIBUTE BY: hash-exchange the result; a co-partition peer pins
        // the partition count.
        let mut distribute_key = None;
        if let Some(key) = &query.distribute_by {
            let key_idx = pq
                .output_schema
                .index_of(key)
                .ok_or_else(|| Error::Sql(SqlError::FieldNotFound(key.clone())))?;
            let count = match &copartition {
                Some(peer) => {
                    let peer_entry = self.catalog.get(peer).map_err(Error::Storage)?;
                    peer_entry.partition_count()
                }
                None => self.cfg.distribute_partitions.max(1),
            };
            distribute_key = Some((key.clone(), key_idx, count));
            match &mut pq.exec.kind {
                ExecKind::Static { root } => {
                    *root = self.builder.exchange(root.clone(), vec![key_idx], count);
                }
                ExecKind::AdaptiveJoin(aj) => aj.suffix.push(SuffixStep::Exchange {
                    keys: vec![key_idx],
                    count,
                }),
            }
        } else if copartition.is_some() {
            return Err(Error::Sql(SqlError::PlanError(
                "copartition requires DISTRIBUTE BY on the same key".into(),
            )));
        }

        let (_rows, partitions, root) = self.run_physical(&pq, statement_text)?;
        let defining = if cached {
            self.builder.cached(root)
        } else {
            root
        };

        let row_count = self.publish_table_entry(
            name,
            &pq.output_schema,
            defining,
            partitions,
            cached,
            None,
            Some(statement_text.to_string()),
            distribute_key.map(|(k, _, _)| k),
            copartition,
        )?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        Ok(StatementOutput::Created {
            table: name.to_string(),
            partitions: self.catalog.get(name).map_err(Error::Storage)?.partition_count(),
            rows: row_count,
        })
    }

    /// Encodes partitions, collects stats, publishes payloads (if cached) and
    /// the catalog entry. Returns total row count.
    #[allow(clippy::too_many_arguments)]
    fn publish_table_entry(
        &mut self,
        name: &str,
        schema: &Schema,
        defining: Arc<DatasetNode>,
        partitions: Vec<Option<Arc<RowBatch>>>,
        cached: bool,
        source_path: Option<PathBuf>,
        defining_query: Option<String>,
        distribute_key: Option<String>,
        copartition_of: Option<String>,
    ) -> Result<usize, Error> {
        let opts = self.cfg.storage_options();
        let empty: RowBatch = Vec::new();
        let encoded = crate::par::par_map(
            opts.exec_mode,
            partitions,
            |p| -> Result<crate::storage::TablePartition, StorageError> {
                let rows: &RowBatch = p.as_deref().unwrap_or(&empty);
                encode_partition(rows, schema, &opts)
            },
        )
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(Error::Storage)?;

        let stats: Vec<_> = encoded.iter().map(|tp| tp.stats.clone()).collect();
        let row_count = stats.iter().map(|s| s.row_count).sum();
        if cached {
            self.cluster.publish_table(
                defining.id,
                encoded.into_iter().map(|tp| tp.columns).collect(),
            );
        }
        self.catalog
            .publish(TableEntry {
                name: name.to_string(),
                schema: schema.clone(),
                cached,
                source_path,
                defining_query,
                distribute_key,
                copartition_of,
                defining,
                stats,
            })
            .map_err(Error::Storage)?;
        Ok(row_count)
    }

    /// Registers a table from in-memory rows (tests, benches, generators).
    pub fn register_table_from_rows(
        &mut self,
        name: &str,
        schema: Schema,
        rows: RowBatch,
        cached: bool,
        distribute_key: Option<&str>,
    ) -> Result<(), Error> {
        schema_validate_all(&schema, &rows)?;
        let source = self.builder.source_inline(
            Arc::new(rows),
            schema.clone(),
            self.cfg.target_partition_rows,
        );
        self.register_source_table(name, schema, source, cached, distribute_key, None, None)
    }

    /// Registers a file-backed table: snapshot, optional distribute, stats,
    /// optional residency.
    pub fn register_file_table(&mut self, spec: &ManifestTable) -> Result<(), Error> {
        let schema = spec.schema().map_err(Error::Storage)?;
        let path = PathBuf::from(spec.source.as_ref().ok_or_else(|| {
            Error::Storage(StorageError::Manifest(format!(
                "table `{}` has neither source nor query",
                spec.name
            )))
        })?);
        let format = FileFormat::from_path(&path).map_err(Error::Storage)?;
        let (byte_len, digest) = file_fingerprint(&path).map_err(Error::Storage)?;
        let rows = read_rows(&path, format, &schema).map_err(Error::Storage)?;
        let snapshot = crate::lineage::FileSnapshot {
            path: path.clone(),
            format,
            schema: schema.clone(),
            byte_len,
            digest,
            row_count: rows.len(),
            target_rows: self.cfg.target_partition_rows,
        };
        let _ = rows;
        let source = self.builder.source_file(snapshot);
        self.register_source_table(
            &spec.name,
            schema,
            source,
            spec.cache,
            spec.distribute_key.as_deref(),
            Some(path),
            spec.partitions,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn register_source_table(
        &mut self,
        name: &str,
        schema: Schema,
        source: Arc<DatasetNode>,
        cached: bool,
        distribute_key: Option<&str>,
        source_path: Option<PathBuf>,
        partitions_override: Option<usize>,
    ) -> Result<(), Error> {
        if self.catalog.contains(name) {
            return Err(Error::Storage(StorageError::TableExists(name.into())));
        }
        let mut root = source;
        let mut dist_name = None;
        if let Some(key) = distribute_key {
            let idx = schema
                .index_of(key)
                .ok_or_else(|| Error::Sql(SqlError::FieldNotFound(key.to_string())))?;
            let count = partitions_override.unwrap_or(self.cfg.distribute_partitions).max(1);
            root = self.builder.exchange(root, vec![idx], count);
            dist_name = Some(key.to_string());
        }
        // Materialize partitions through the engine (the normal load path).
        let plan = ExecPlan {
            kind: ExecKind::Static { root: root.clone() },
            scans: HashMap::new(),
        };
        let job_id = self.cluster.next_job_id();
        let (out, report) = run_job(
            &mut self.cluster,
            &self.builder,
            &plan,
            &[],
            job_id,
            &format!("LOAD {name}"),
        )
        .map_err(Error::Engine)?;
        self.write_report(&report)?;
        self.reports.push(report);

        let defining = if cached {
            self.builder.cached(out.root)
        } else {
            out.root
        };
        self.publish_table_entry(
            name,
            &schema,
            defining,
            out.partitions,
            cached,
            source_path,
            None,
            dist_name,
            None,
        )?;
        Ok(())
    }

    pub fn open_manifest(&mut self, path: &Path) -> Result<Vec<String>, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let manifest = Manifest::parse(&text).map_err(Error::Storage)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut loaded = Vec::new();
        for t in &manifest.table {
            if let Some(query) = &t.query {
                self.execute(query)?;
                loaded.push(t.name.clone());
                continue;
            }
            // Source paths resolve relative to the manifest.
            let mut spec = t.clone();
            if let Some(src) = &t.source {
                let p = PathBuf::from(src);
                if p.is_relative() {
                    spec.source = Some(base.join(p).display().to_string());
                }
            }
            self.register_file_table(&spec)?;
            loaded.push(t.name.clone());
        }
        Ok(loaded)
    }

    pub fn save_manifest(&self, path: &Path) -> Result<(), Error> {
        let manifest = Manifest::from_catalog(&self.catalog);
        std::fs::write(path, manifest.to_toml())
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    /// Per-partition statistics display for `\stats`.
    pub fn table_stats_text(&self, name: &str) -> Result<String, Error> {
        let entry = self.catalog.get(name).map_err(Error::Storage)?;
        let mut s = format!(
            "table {} partitions={} rows={} cached={}\n",
            entry.name,
            entry.partition_count(),
            entry.row_count(),
            entry.cached
        );
        if let Some(k) = &entry.distribute_key {
            s.push_str(&format!("distributed by {k}\n"));
        }
        for (i, p) in entry.stats.iter().enumerate() {
            s.push_str(&format!("partition {i}: rows={} bytes={}\n", p.row_count, p.byte_size));
            for (c, col) in p.columns.iter().enumerate() {
                let field = entry.schema.field(c);
                let fmt = |v: &Option<Value>| match v {
                    Some(v) => v.to_string(),
                    None => "-".into(),
                };
                let distinct = col
                    .distinct
                    .as_ref()
                    .map(|d| format!(" distinct={}", d.len()))
                    .unwrap_or_default();
                s.push_str(&format!(
                    "  {}: min={} max={}{distinct}\n",
                    field.name,
                    fmt(&col.min),
                    fmt(&col.max)
                ));
            }
        }
        Ok(s)
    }

    /// Manual eviction of a resident table partition.
    pub fn evict(&mut self, table: &str, partition: usize) -> Result<bool, Error> {
        let entry = self.catalog.get(table).map_err(Error::Storage)?;
        Ok(self.cluster.evict(entry.defining.id, partition))
    }

    pub fn set_option(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let bad = |k: &str, v: &str| Error::Config(format!("bad value `{v}` for `{k}`"));
        match key {
            "worker_count" => {
                return Err(Error::Config(
                    "worker_count is fixed at session start".into(),
                ))
            }
            "speculation_on" => {
                self.cfg.speculation_on = value.parse().map_err(|_| bad(key, value))?
            }
            "spill_threshold_bytes" => {
                self.cfg.spill_threshold_bytes = value.parse().map_err(|_| bad(key, value))?
            }
            "broadcast_threshold_bytes" => {
                self.cfg.broadcast_threshold_bytes = value.parse().map_err(|_| bad(key, value))?
            }
            "target_bytes_per_reducer" => {
                self.cfg.target_bytes_per_reducer = value.parse().map_err(|_| bad(key, value))?
            }
            "reducer_min" => self.cfg.reducer_min = value.parse().map_err(|_| bad(key, value))?,
            "reducer_max" => self.cfg.reducer_max = value.parse().map_err(|_| bad(key, value))?,
            "binpack_enabled" => {
                self.cfg.binpack_enabled = value.parse().map_err(|_| bad(key, value))?
            }
            "pruning_on" => self.cfg.pruning_on = value.parse().map_err(|_| bad(key, value))?,
            "target_partition_rows" => {
                self.cfg.target_partition_rows = value.parse().map_err(|_| bad(key, value))?
            }
            "distribute_partitions" => {
                self.cfg.distribute_partitions = value.parse().map_err(|_| bad(key, value))?
            }
            "force_join" => {
                ForceJoin::parse(value).ok_or_else(|| bad(key, value))?;
                self.cfg.force_join = value.to_string();
            }
            "scheduler_seed" => {
                self.cfg.scheduler_seed = value.parse().map_err(|_| bad(key, value))?
            }
            other => return Err(Error::Config(format!("unknown option `{other}`"))),
        }
        self.cluster.cfg = self.cfg.engine_config();
        Ok(())
    }

    fn write_report(&self, report: &JobReport) -> Result<(), Error> {
        if let Some(dir) = &self.cfg.report_dir {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
            let path = dir.join(format!("job-{:04}.report", report.job));
            std::fs::write(&path, report.render())
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }

    // --- ML verbs -------------------------------------------------------------

    /// `ML LOGREG <query> FEATURES <fn> LABEL <col> ITER <n> SEED <s>` and
    /// `ML KMEANS <query> FEATURES <fn> K <k> ITER <n> SEED <s>`.
    fn execute_ml(&mut self, text: &str) -> Result<StatementOutput, Error> {
        let rest = &text[3..];
        let upper = rest.to_ascii_uppercase();
        if upper.starts_with("LOGREG ") {
            let spec = MlVerb::parse(&rest[7..], &["FEATURES", "LABEL", "ITER", "SEED"])?;
            let out = self.ml_logreg(
                &spec.query,
                &spec.get("FEATURES")?,
                &spec.get("LABEL")?,
                spec.get_num("ITER")?,
                spec.get_num("SEED")? as u64,
            )?;
            let weights: Vec<String> = out.weights.iter().map(|w| format!("{w:?}")).collect();
            Ok(StatementOutput::Ml(format!(
                "logreg converged-by-iterations weights=[{}]",
                weights.join(", ")
            )))
        } else if upper.starts_with("KMEANS ") {
            let spec = MlVerb::parse(&rest[7..], &["FEATURES", "K", "ITER", "SEED"])?;
            let out = self.ml_kmeans(
                &spec.query,
                &spec.get("FEATURES")?,
                spec.get_num("K")?,
                spec.get_num("ITER")?,
                spec.get_num("SEED")? as u64,
            )?;
            let cents: Vec<String> = out
                .centroids
                .iter()
                .map(|c| {
                    let dims: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
                    format!("({})", dims.join(", "))
                })
                .collect();
            Ok(StatementOutput::Ml(format!(
                "kmeans sse={:?} centroids=[{}]",
                out.sse.last().copied().unwrap_or(0.0),
                cents.join(", ")
            )))
        } else {
            Err(Error::Other(
                "expected ML LOGREG ... or ML KMEANS ...".into(),
            ))
        }
    }

    /// Returns the query's dataset root without collecting it, sharing one
    /// lineage graph with everything built on top.
    pub fn sql_to_dataset(
        &mut self,
        query: &str,
    ) -> Result<(Arc<DatasetNode>, HashMap<u64, ScanInfo>), Error> {
        let stmt = match parse(query).map_err(Error::Sql)? {
            Statement::Select(s) => s,
            _ => {
                return Err(Error::Sql(SqlError::PlanError(
                    "expected a SELECT query".into(),
                )))
            }
        };
        let pq = self.plan_physical(&stmt)?;
        match pq.exec.kind {
            ExecKind::Static { root } => Ok((root, pq.exec.scans)),
            ExecKind::AdaptiveJoin(aj) => {
                // Resolve deterministically without run-time stats: local
                // shuffle join at the configured width.
                let r = self.cfg.reducer_max_effective();
                let ex_l = self.builder.exchange(aj.left.chain, aj.left.keys.clone(), r);
                let ex_r = self
                    .builder
                    .exchange(aj.right.chain, aj.right.keys.clone(), r);
                let join = self
                    .builder
                    .hash_join_local(ex_l, ex_r, aj.left.keys, aj.right.keys)
                    .map_err(Error::Lineage)?;
                let root = crate::engine::plan::apply_suffix(&self.builder, join, &aj.suffix, r)
                    .map_err(Error::Engine)?;
                Ok((root, pq.exec.scans))
            }
        }
    }

    pub fn ml_logreg(
        &mut self,
        query: &str,
        features_fn: &str,
        label: &str,
        iterations: usize,
        seed: u64,
    ) -> Result<ml::LrOutcome, Error> {
        let (root, scans) = self.sql_to_dataset(query)?;
        let (fn_name, params, dims) = self.points_params(&root.schema, features_fn, Some(label))?;
        let points = ml::map_rows(&self.builder, root, &fn_name, params).map_err(Error::Ml)?;
        let faults = self.take_faults();
        let mut ctx = IterationJobs {
            cluster: &mut self.cluster,
            builder: &self.builder,
            scans,
            first_iteration_faults: faults,
            job_label: "ML LOGREG".into(),
        };
        let out = ml::logistic_regression(&mut ctx, points, dims, iterations, seed, 1.0)
            .map_err(Error::Ml)?;
        self.finish_ml_reports(&out.reports, &{
            let mut extra = std::collections::BTreeMap::new();
            for (it, norm) in &out.metrics {
                extra.insert(format!("iter.{it}.grad_norm"), format!("{norm:?}"));
            }
            let ws: Vec<String> = out.weights.iter().map(|w| format!("{w:?}")).collect();
            extra.insert("weights".into(), ws.join(","));
            extra
        })?;
        Ok(out)
    }

    pub fn ml_kmeans(
        &mut self,
        query: &str,
        features_fn: &str,
        k: usize,
        iterations: usize,
        seed: u64,
    ) -> Result<ml::KmeansOutcome, Error> {
        let (root, scans) = self.sql_to_dataset(query)?;
        let (fn_name, params, _dims) = self.points_params(&root.schema, features_fn, None)?;
        let points = ml::map_rows(&self.builder, root, &fn_name, params).map_err(Error::Ml)?;
        let faults = self.take_faults();
        let mut ctx = IterationJobs {
            cluster: &mut self.cluster,
            builder: &self.builder,
            scans,
            first_iteration_faults: faults,
            job_label: "ML KMEANS".into(),
        };
        let out = ml::kmeans(&mut ctx, points, k, iterations, seed).map_err(Error::Ml)?;
        self.finish_ml_reports(&out.reports, &{
            let mut extra = std::collections::BTreeMap::new();
            for (i, sse) in out.sse.iter().enumerate() {
                extra.insert(format!("iter.{}.sse", i + 1), format!("{sse:?}"));
            }
            extra
        })?;
        Ok(out)
    }

    /// Resolves the feature function: `auto` maps numeric columns (minus the
    /// label) positionally; anything else must be registered and is passed
    /// no parameters.
    fn points_params(
        &self,
        schema: &Schema,
        features_fn: &str,
        label: Option<&str>,
    ) -> Result<(String, Vec<Value>, usize), Error> {
        if !features_fn.eq_ignore_ascii_case("auto") {
            self.registry.get(features_fn).map_err(Error::Lineage)?;
            let probe = self
                .registry
                .get(features_fn)
                .map_err(Error::Lineage)?
                .output_schema(schema, &[])
                .map_err(Error::Lineage)?;
            let dims = probe.len() - label.is_some() as usize;
            return Ok((features_fn.to_string(), vec![], dims));
        }
        match label {
            Some(label) => {
                let label_idx = schema
                    .index_of(label)
                    .ok_or_else(|| Error::Sql(SqlError::FieldNotFound(label.to_string())))?;
                let mut params = vec![Value::Int64(label_idx as i64)];
                let mut dims = 0;
                for (i, f) in schema.fields().iter().enumerate() {
                    if i != label_idx && f.dtype.is_numeric() {
                        params.push(Value::Int64(i as i64));
                        dims += 1;
                    }
                }
                if dims == 0 {
                    return Err(Error::Ml(crate::error::MlError::DimensionMismatch(
                        "no numeric feature columns".into(),
                    )));
                }
                Ok(("select_as_points".into(), params, dims))
            }
            None => {
                let mut params = Vec::new();
                for (i, f) in schema.fields().iter().enumerate() {
                    if f.dtype.is_numeric() {
                        params.push(Value::Int64(i as i64));
                    }
                }
                if params.is_empty() {
                    return Err(Error::Ml(crate::error::MlError::DimensionMismatch(
                        "no numeric feature columns".into(),
                    )));
                }
                let dims = params.len();
                Ok(("features_only".into(), params, dims))
            }
        }
    }

    fn finish_ml_reports(
        &mut self,
        reports: &[JobReport],
        extra: &std::collections::BTreeMap<String, String>,
    ) -> Result<(), Error> {
        for r in reports {
            self.write_report(r)?;
            self.reports.push(r.clone());
        }
        if let Some(last) = self.reports.last_mut() {
            last.extra.extend(extra.clone());
        }
        // Re-write the last report with the attached metrics.
        if let Some(last) = self.reports.last() {
            let last = last.clone();
            self.write_report(&last)?;
        }
        Ok(())
    }
}

struct MlVerb {
    query: String,
    args: Vec<(String, String)>,
}

impl MlVerb {
    /// Splits `<query> KW1 v1 KW2 v2 ...` scanning keywords right to left.
    fn parse(text: &str, keywords: &[&str]) -> Result<MlVerb, Error> {
        let mut rest = text.trim().to_string();
        let mut args = Vec::new();
        for kw in keywords.iter().rev() {
            let upper = rest.to_ascii_uppercase();
            let probe = format!(" {kw} ");
            let at = upper
                .rfind(&probe)
                .ok_or_else(|| Error::Other(format!("ML verb is missing {kw}")))?;
            let value = rest[at + probe.len()..].trim().to_string();
            args.push(((*kw).to_string(), value));
            rest.truncate(at);
        }
        Ok(MlVerb {
            query: rest.trim().to_string(),
            args,
        })
    }

    fn get(&self, kw: &str) -> Result<String, Error> {
        self.args
            .iter()
            .find(|(k, _)| k == kw)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Other(format!("missing {kw}")))
    }

    fn get_num(&self, kw: &str) -> Result<usize, Error> {
        self.get(kw)?
            .parse()
            .map_err(|_| Error::Other(format!("bad number for {kw}")))
    }
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_lowercase()
}

fn schema_validate_all(schema: &Schema, rows: &[Row]) -> Result<(), Error> {
    for (i, row) in rows.iter().enumerate() {
        schema
            .validate_row(row)
            .map_err(|e| Error::Storage(StorageError::SchemaViolation(format!("row {i}: {e}"))))?;
    }
    Ok(())
}
