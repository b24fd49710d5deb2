//! SQL subset: parser, logical planning with rule-based optimization,
//! zone-map partition pruning, and physical planning onto the lineage DAG.
//! Also houses the independent reference evaluator used as the test oracle.

pub mod ast;
pub mod explain;
pub mod optimize;
pub mod parse;
pub mod physical;
pub mod plan;
pub mod prune;
pub mod reference;

pub use ast::{SelectStmt, Statement};
pub use explain::explain_physical;
pub use optimize::optimize;
pub use parse::parse;
pub use physical::{physical_plan, ForceJoin, PhysicalQuery, PlannerOptions};
pub use plan::{plan_select, LogicalPlan};
pub use prune::prune_partitions;
pub use reference::{order_rows, reference_eval, RawTables};
