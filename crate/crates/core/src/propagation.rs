//! Ships committed deltas to the columnar replica in commit order. Each
//! applied batch produces one new copy-on-write version set; only chunks the
//! batch touches are rewritten.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::hw::TaskDemand;
use crate::storage::{ChunkVersionSet, ColumnChunk, ColumnStore, StorageError, Timestamp};
use crate::txn::{DeltaRecord, DeltaSink, OpKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("delta at {proposed} enqueued after {last}")]
    OutOfOrderDelta { last: Timestamp, proposed: Timestamp },
    #[error("gap in delta stream: expected commit {expected}, found {found}")]
    GapInDeltaStream { expected: Timestamp, found: Timestamp },
    #[error("a batch ending at {0} is already in flight")]
    BatchInFlight(Timestamp),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Bounds batch size and the commit-timestamp lag that forces a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BatchingPolicy {
    pub max_records: usize,
    pub max_lag: u64,
}

impl Default for BatchingPolicy {
    fn default() -> Self {
        BatchingPolicy { max_records: 64, max_lag: 100 }
    }
}

/// Modeled compute per row copied during a chunk rewrite and per delta op.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApplyCost {
    pub ops_per_row_copied: f64,
    pub ops_per_delta_op: f64,
}

impl Default for ApplyCost {
    fn default() -> Self {
        ApplyCost { ops_per_row_copied: 1.0, ops_per_delta_op: 16.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaBatch {
    pub deltas: Vec<DeltaRecord>,
    pub min_ts: Timestamp,
    pub max_ts: Timestamp,
}

impl DeltaBatch {
    pub fn new(deltas: Vec<DeltaRecord>) -> Option<Self> {
        let min_ts = deltas.first()?.commit_ts;
        let max_ts = deltas.last()?.commit_ts;
        Some(DeltaBatch { deltas, min_ts, max_ts })
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn op_count(&self) -> usize {
        self.deltas.iter().map(|d| d.ops.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FreshnessState {
    pub applied_ts: Timestamp,
    pub queue_depth: usize,
}

/// Distance of the analytical replica behind the commit log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FreshnessLag {
    pub timestamps: u64,
    pub records: usize,
}

/// Resource bill of applying one batch, split by the vault that owns each
/// rewritten chunk.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ApplyBill {
    pub per_vault: BTreeMap<usize, TaskDemand>,
    pub chunks_touched: usize,
    pub rows_read: usize,
    pub rows_written: usize,
    pub ops_applied: usize,
}

impl ApplyBill {
    pub fn total(&self) -> TaskDemand {
        let mut d = TaskDemand::default();
        for v in self.per_vault.values() {
            d.add(v);
        }
        d
    }
}

/// A batch applied off to the side, not yet visible to readers.
#[derive(Debug)]
pub struct PreparedBatch {
    pub set: ChunkVersionSet,
    pub bill: ApplyBill,
    pub min_ts: Timestamp,
    pub max_ts: Timestamp,
    pub records: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PropagationStats {
    pub batches_applied: usize,
    pub records_applied: usize,
    pub ops_applied: usize,
    /// Largest `max_ts - min_ts` over published batches.
    pub max_batch_span: u64,
}

#[derive(Debug, Default)]
struct State {
    queue: VecDeque<DeltaRecord>,
    last_enqueued: Timestamp,
    applied_ts: Timestamp,
    in_flight: Option<(Timestamp, usize)>,
    stats: PropagationStats,
}

/// Single-applier propagation pipeline. `enqueue` may be called from any
/// committing thread.
#[derive(Debug)]
pub struct Propagator {
    state: Mutex<State>,
    cost: ApplyCost,
}

impl Propagator {
    /// Starts behind a replica whose newest version is `applied_ts`.
    pub fn new(applied_ts: Timestamp) -> Self {
        Propagator {
            state: Mutex::new(State { last_enqueued: applied_ts, applied_ts, ..Default::default() }),
            cost: ApplyCost::default(),
        }
    }

    pub fn with_cost(mut self, cost: ApplyCost) -> Self {
        self.cost = cost;
        self
    }

    pub fn enqueue(&self, delta: DeltaRecord) -> Result<(), PropagationError> {
        let mut s = self.state.lock().unwrap();
        if delta.commit_ts <= s.last_enqueued {
            return Err(PropagationError::OutOfOrderDelta { last: s.last_enqueued, proposed: delta.commit_ts });
        }
        s.last_enqueued = delta.commit_ts;
        s.queue.push_back(delta);
        Ok(())
    }

    /// Takes up to `max_records` queued deltas once a full batch is available
    /// or the replica lags by at least `max_lag` timestamps. Returns `None`
    /// when the queue is empty, the batch is not yet due, or another batch is
    /// still in flight.
    pub fn form_batch(&self, policy: BatchingPolicy) -> Option<DeltaBatch> {
        let mut s = self.state.lock().unwrap();
        if s.in_flight.is_some() || s.queue.is_empty() {
            return None;
        }
        let lag = s.last_enqueued.0 - s.applied_ts.0;
        if s.queue.len() < policy.max_records && lag < policy.max_lag {
            return None;
        }
        Self::take(&mut s, policy.max_records)
    }

    /// Takes up to `max_records` queued deltas regardless of the policy.
    pub fn flush_batch(&self, max_records: usize) -> Option<DeltaBatch> {
        let mut s = self.state.lock().unwrap();
        if s.in_flight.is_some() {
            return None;
        }
        Self::take(&mut s, max_records)
    }

    fn take(s: &mut State, max_records: usize) -> Option<DeltaBatch> {
        let n = s.queue.len().min(max_records.max(1));
        let batch = DeltaBatch::new(s.queue.drain(..n).collect())?;
        s.in_flight = Some((batch.max_ts, batch.len()));
        Some(batch)
    }

    /// Builds the next version set for `batch` without publishing it.
    pub fn prepare(&self, batch: &DeltaBatch, store: &ColumnStore) -> Result<PreparedBatch, PropagationError> {
        let applied_ts = self.state.lock().unwrap().applied_ts;
        let mut expected = applied_ts.next();
        for d in &batch.deltas {
            if d.commit_ts != expected {
                return Err(PropagationError::GapInDeltaStream { expected, found: d.commit_ts });
            }
            expected = expected.next();
        }
        let newest = store.newest();
        if newest.version_ts != applied_ts {
            return Err(PropagationError::GapInDeltaStream { expected: applied_ts, found: newest.version_ts });
        }

        let mut by_chunk: BTreeMap<usize, Vec<_>> = BTreeMap::new();
        for d in &batch.deltas {
            for op in &d.ops {
                by_chunk.entry(store.chunk_for_key(op.key)).or_default().push(op);
            }
        }

        let row_bytes = store.schema().row_bytes() as f64;
        let mut chunks = newest.chunks.clone();
        let mut bill = ApplyBill { chunks_touched: by_chunk.len(), ..Default::default() };
        for (chunk_id, ops) in by_chunk {
            let old = &newest.chunks[chunk_id];
            let mut chunk: ColumnChunk = old.as_ref().clone();
            let mut slots: HashMap<i64, usize> = chunk.rows_slots().collect();
            for op in &ops {
                match (op.kind, &op.values) {
                    (OpKind::Delete, _) | (_, None) => {
                        if let Some(slot) = slots.remove(&op.key) {
                            chunk.invalidate(slot);
                        }
                    }
                    (_, Some(values)) => match slots.get(&op.key) {
                        Some(&slot) => chunk.overwrite(slot, values),
                        None => {
                            if chunk.slots() >= chunk.capacity {
                                chunk.compact();
                                slots = chunk.rows_slots().collect();
                            }
                            chunk.push_row(op.key, values)?;
                            slots.insert(op.key, chunk.slots() - 1);
                        }
                    },
                }
            }
            if chunk.live_rows() * 2 < chunk.slots() {
                chunk.compact();
            }
            bill.rows_read += old.slots();
            bill.rows_written += chunk.slots();
            bill.ops_applied += ops.len();
            let bytes = (old.slots() + chunk.slots() + ops.len()) as f64 * row_bytes;
            let compute = chunk.slots() as f64 * self.cost.ops_per_row_copied
                + ops.len() as f64 * self.cost.ops_per_delta_op;
            bill.per_vault
                .entry(chunk.vault_id)
                .or_default()
                .add(&TaskDemand::vault(compute, chunk.vault_id, bytes));
            chunks[chunk_id] = Arc::new(chunk);
        }

        Ok(PreparedBatch {
            set: ChunkVersionSet::new(batch.max_ts, chunks, Some(newest.version_ts)),
            bill,
            min_ts: batch.min_ts,
            max_ts: batch.max_ts,
            records: batch.len(),
        })
    }

    /// Makes a prepared batch visible and advances `applied_ts`.
    pub fn publish(
        &self,
        prepared: PreparedBatch,
        store: &ColumnStore,
    ) -> Result<Arc<ChunkVersionSet>, PropagationError> {
        let set = store.publish(prepared.set)?;
        let mut s = self.state.lock().unwrap();
        s.applied_ts = prepared.max_ts;
        if s.in_flight.is_some_and(|(ts, _)| ts <= prepared.max_ts) {
            s.in_flight = None;
        }
        s.stats.batches_applied += 1;
        s.stats.records_applied += prepared.records;
        s.stats.ops_applied += prepared.bill.ops_applied;
        s.stats.max_batch_span = s.stats.max_batch_span.max(prepared.max_ts.0 - prepared.min_ts.0);
        Ok(set)
    }

    /// Applies and publishes `batch` in one step.
    pub fn apply_batch(
        &self,
        batch: &DeltaBatch,
        store: &ColumnStore,
    ) -> Result<(Arc<ChunkVersionSet>, ApplyBill), PropagationError> {
        let prepared = self.prepare(batch, store)?;
        let bill = prepared.bill.clone();
        Ok((self.publish(prepared, store)?, bill))
    }

    /// Applies everything queued, in batches of at most `max_records`.
    pub fn drain(&self, store: &ColumnStore, max_records: usize) -> Result<ApplyBill, PropagationError> {
        let mut total = ApplyBill::default();
        while let Some(batch) = self.flush_batch(max_records) {
            let (_, bill) = self.apply_batch(&batch, store)?;
            total.chunks_touched += bill.chunks_touched;
            total.rows_read += bill.rows_read;
            total.rows_written += bill.rows_written;
            total.ops_applied += bill.ops_applied;
            for (v, d) in bill.per_vault {
                total.per_vault.entry(v).or_default().add(&d);
            }
        }
        Ok(total)
    }

    pub fn state(&self) -> FreshnessState {
        let s = self.state.lock().unwrap();
        FreshnessState {
            applied_ts: s.applied_ts,
            queue_depth: s.queue.len() + s.in_flight.map_or(0, |(_, n)| n),
        }
    }

    pub fn applied_ts(&self) -> Timestamp {
        self.state.lock().unwrap().applied_ts
    }

    /// `(latest enqueued commit − applied_ts, records not yet applied)`.
    pub fn freshness_lag(&self) -> FreshnessLag {
        let s = self.state.lock().unwrap();
        FreshnessLag {
            timestamps: s.last_enqueued.0 - s.applied_ts.0,
            records: s.queue.len() + s.in_flight.map_or(0, |(_, n)| n),
        }
    }

    pub fn stats(&self) -> PropagationStats {
        self.state.lock().unwrap().stats
    }
}

impl DeltaSink for Propagator {
    fn accept(&self, delta: &DeltaRecord) -> Result<(), String> {
        self.enqueue(delta.clone()).map_err(|e| e.to_string())
    }
}
