//! Analytical island: columnar operators over pinned snapshots, split into
//! per-chunk tasks that are placed on vault-local cores.

mod exec;
mod plan;
mod schedule;

pub use exec::{
    execute, hash_join, ChunkSource, ChunkTask, ColumnSource, QueryExecution, QueryResult, ReduceBill, RowSource,
    ScanCost, TaskPhase,
};
pub use plan::{parse_literal, AggOp, Aggregate, CmpOp, JoinSpec, Predicate, QueryPlan};
pub use schedule::{cpu_cores, pim_cores, schedule, simulate_schedule, solo_time, Schedule, SchedulerMode};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("plan syntax: {0}")]
    Parse(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

/// Round-robin chunk to vault placement.
pub fn place_chunks(chunk_count: usize, vault_count: usize) -> Vec<usize> {
    (0..chunk_count).map(|c| c % vault_count.max(1)).collect()
}
