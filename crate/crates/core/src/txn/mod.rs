//! Transactional island: snapshot-isolated transactions over the row
//! replica, emitting one ordered [`DeltaRecord`] per read-write commit.

mod engine;
mod history;
mod interleave;

pub use engine::{
    replay_to, CommitOutcome, DeltaOp, DeltaRecord, DeltaSink, OpKind, TxnCostModel, TxnEngine, TxnHandle, TxnState,
};
pub use history::{validate_history, HistoryEvent, ValidationReport, Violation};
pub use interleave::{run_interleaved, synth_values, InterleaveSpec, InterleaveStats};

use thiserror::Error;

use crate::storage::{StorageError, TxnId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TxnError {
    #[error("transaction {0} is not active")]
    TxnNotActive(TxnId),
    #[error("transaction {txn} aborted: write-write conflict on key {key}")]
    WriteWriteConflict { txn: TxnId, key: i64 },
    #[error("delta sink rejected commit: {0}")]
    Sink(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistoryError {
    #[error("malformed history: {0}")]
    Malformed(String),
}
