//! Error types, one enum per subsystem, converging in [`Error`] at the
//! session boundary.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("corrupt chunk: {0}")]
    CorruptChunk(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("table `{0}` already exists")]
    TableExists(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(String),
}

#[derive(Debug, Error)]
pub enum LineageError {
    #[error("source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("cycle detected in dataset graph at node {0}")]
    CycleDetected(u64),
    #[error("unknown row function `{0}`")]
    UnknownFunction(String),
    #[error("row function `{fn_name}` failed: {msg}")]
    FunctionFailed { fn_name: String, msg: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unrecoverable: {0}")]
    Unrecoverable(String),
    #[error("no alive workers remain")]
    NoAliveWorkers,
    #[error("task {stage}/{partition} exceeded retry limit ({attempts} attempts)")]
    RetriesExceeded {
        stage: usize,
        partition: usize,
        attempts: usize,
    },
    #[error("scratch io error: {0}")]
    ScratchIo(String),
    #[error(transparent)]
    Lineage(#[from] LineageError),
}

#[derive(Debug, Error)]
pub enum SqlError {
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("unknown column `{0}`")]
    FieldNotFound(String),
    #[error("ambiguous column `{0}`")]
    AmbiguousColumn(String),
    #[error("type error: {0}")]
    TypeError(String),
    #[error("plan error: {0}")]
    PlanError(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Error)]
pub enum MlError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid k: {0}")]
    InvalidK(String),
    #[error("iterations must be >= 1")]
    InvalidIterations,
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Session-level error: anything a statement can fail with.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Lineage(#[from] LineageError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Other(String),
}
