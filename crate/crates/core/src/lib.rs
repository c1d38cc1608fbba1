//! An HTAP engine split into a transactional island and an analytical
//! island, each with its own replica and its own modeled hardware.
//!
//! - [`storage`]: MVCC row store and copy-on-write column store.
//! - [`txn`]: snapshot-isolated transactions over the row store.
//! - [`propagation`]: ordered delta shipping into the column store.
//! - [`analytics`]: query execution, chunk placement, task scheduling.
//! - [`hw`]: fair-sharing timing and energy model.
//! - [`harness`]: workloads, execution modes, metrics, CLI plumbing.

pub mod analytics;
pub mod harness;
pub mod hw;
pub mod propagation;
pub mod storage;
pub mod txn;
