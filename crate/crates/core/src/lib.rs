//! Skiff: a miniature fault-tolerant analytical query engine.
//!
//! A SQL subset compiles into DAGs of deterministic operators over immutable,
//! lineage-tracked partitioned datasets. Jobs run on a simulated multi-worker
//! cluster with stage-based scheduling, memory-backed shuffle, fault
//! injection, speculative execution, and mid-query re-optimization driven by
//! runtime statistics. Tables cache in a compressed columnar memory store
//! with zone-map partition pruning, and iterative ML algorithms (logistic
//! regression, k-means) run over query results inside the same lineage graph.
//!
//! Layers, bottom up:
//!
//! * [`value`] / [`expr`]  — relational data model and predicates
//! * [`storage`]           — columnar encodings, partition stats, loading, catalog
//! * [`lineage`]           — dataset DAG, deterministic evaluation, recomputation
//! * [`pde`]               — runtime statistics and the mid-query optimizer
//! * [`engine`]            — simulated cluster: stages, tasks, shuffle, recovery
//! * [`sql`]               — parser, logical planning, pruning, physical planning
//! * [`ml`]                — logistic regression and k-means over datasets
//! * [`session`]           — ties the pieces together behind one entry point

pub mod error;
pub mod expr;
pub mod par;
pub mod value;

pub mod storage;

pub mod lineage;

pub mod pde;

pub mod engine;

pub mod sql;

pub mod ml;

pub mod session;

pub use error::Error;
pub use session::{Session, SessionConfig, StatementOutput};
