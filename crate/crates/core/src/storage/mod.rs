//! Replicas: a multi-versioned row store for the transactional island and a
//! copy-on-write, chunked column store for the analytical island.

mod column;
mod row;
mod types;

pub use column::{
    build_chunks, chunk_for_key, ChunkVersionSet, ColumnChunk, ColumnData, ColumnStore, ColumnStoreOptions,
    SnapshotHandle, DEFAULT_CHUNK_CAPACITY, DEFAULT_CHUNK_COUNT,
};
pub use row::{RowScan, RowStore, RowVersion};
pub use types::{ColumnDef, ColumnType, TableSchema, Timestamp, TxnId, Value};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StorageError {
    #[error("install of key {key} at {commit_ts} is not after open version begun at {open_begin}")]
    OutOfOrderInstall { key: i64, commit_ts: Timestamp, open_begin: Timestamp },
    #[error("snapshot at {0} has been garbage-collected")]
    SnapshotTooOld(Timestamp),
    #[error("version {proposed} does not advance past newest {newest}")]
    NonMonotonicVersion { newest: Timestamp, proposed: Timestamp },
    #[error("chunk {chunk_id} is full (capacity {capacity})")]
    ChunkFull { chunk_id: usize, capacity: usize },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("duplicate key {0}")]
    DuplicateKey(i64),
    #[error("store is not empty")]
    NotEmpty,
    #[error("invalid column store options: {0}")]
    InvalidOptions(String),
}
