use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::{HistoryEvent, TxnError};
use crate::hw::TaskDemand;
use crate::storage::{RowStore, Timestamp, TxnId, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Insert,
    Update,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaOp {
    pub kind: OpKind,
    pub key: i64,
    pub values: Option<Vec<Value>>,
}

/// The committed effects of one read-write transaction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRecord {
    pub commit_ts: Timestamp,
    pub txn_id: TxnId,
    pub ops: Vec<DeltaOp>,
}

/// Receives each delta inside the commit critical section, so the stream it
/// sees is gap-free and in commit order.
pub trait DeltaSink: Send + Sync {
    fn accept(&self, delta: &DeltaRecord) -> Result<(), String>;
}

/// Per-access cost of transactional work on the host. Only cache misses
/// reach the off-chip link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TxnCostModel {
    pub ops_per_access: f64,
    pub bytes_per_access: f64,
    pub cache_hit_rate: f64,
}

impl Default for TxnCostModel {
    fn default() -> Self {
        TxnCostModel { ops_per_access: 500.0, bytes_per_access: 1024.0, cache_hit_rate: 0.9 }
    }
}

impl TxnCostModel {
    pub fn access(&self) -> TaskDemand {
        TaskDemand::offchip(self.ops_per_access, self.bytes_per_access * (1.0 - self.cache_hit_rate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnState {
    Active,
    Committed,
    Aborted,
}

#[derive(Debug, Clone)]
pub struct TxnHandle {
    pub txn_id: TxnId,
    pub snapshot_ts: Timestamp,
    pub read_set: BTreeSet<i64>,
    /// `None` buffers a delete.
    pub write_buffer: BTreeMap<i64, Option<Vec<Value>>>,
    state: TxnState,
    demand: TaskDemand,
}

impl TxnHandle {
    pub fn state(&self) -> TxnState {
        self.state
    }

    pub fn is_read_only(&self) -> bool {
        self.write_buffer.is_empty()
    }

    /// Modeled resource bill accumulated by this transaction's accesses.
    pub fn demand(&self) -> &TaskDemand {
        &self.demand
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    ReadOnly,
    Committed(Timestamp),
}

impl CommitOutcome {
    pub fn commit_ts(self) -> Option<Timestamp> {
        match self {
            CommitOutcome::ReadOnly => None,
            CommitOutcome::Committed(ts) => Some(ts),
        }
    }
}

#[derive(Default)]
struct Sequencer {
    last_ts: Timestamp,
    log: Vec<DeltaRecord>,
}

/// Snapshot-isolated transactions over a [`RowStore`], validated
/// optimistically at commit (first committer wins).
pub struct TxnEngine {
    store: Arc<RowStore>,
    cost: TxnCostModel,
    next_txn: AtomicU64,
    latest: AtomicU64,
    sequencer: Mutex<Sequencer>,
    active: Mutex<BTreeMap<TxnId, Timestamp>>,
    sink: Option<Arc<dyn DeltaSink>>,
    history: Option<Mutex<Vec<HistoryEvent>>>,
}

impl std::fmt::Debug for TxnEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TxnEngine")
            .field("latest_commit_ts", &self.latest_commit_ts())
            .field("recording", &self.history.is_some())
            .finish()
    }
}

impl TxnEngine {
    pub fn new(store: Arc<RowStore>) -> Self {
        let latest = store.latest_commit_ts();
        TxnEngine {
            store,
            cost: TxnCostModel::default(),
            next_txn: AtomicU64::new(1),
            latest: AtomicU64::new(latest.0),
            sequencer: Mutex::new(Sequencer { last_ts: latest, log: Vec::new() }),
            active: Mutex::new(BTreeMap::new()),
            sink: None,
            history: None,
        }
    }

    pub fn with_cost_model(mut self, cost: TxnCostModel) -> Self {
        self.cost = cost;
        self
    }

    pub fn with_sink(mut self, sink: Arc<dyn DeltaSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    /// Records every begin/read/write/commit/abort for later validation.
    pub fn with_history(mut self) -> Self {
        self.history = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn store(&self) -> &Arc<RowStore> {
        &self.store
    }

    pub fn cost_model(&self) -> TxnCostModel {
        self.cost
    }

    pub fn latest_commit_ts(&self) -> Timestamp {
        Timestamp(self.latest.load(Ordering::Acquire))
    }

    /// Oldest snapshot still held by an active transaction.
    pub fn oldest_active_snapshot(&self) -> Option<Timestamp> {
        self.active.lock().unwrap().values().min().copied()
    }

    fn record(&self, event: HistoryEvent) {
        if let Some(h) = &self.history {
            h.lock().unwrap().push(event);
        }
    }

    pub fn history(&self) -> Vec<HistoryEvent> {
        self.history.as_ref().map(|h| h.lock().unwrap().clone()).unwrap_or_default()
    }

    pub fn begin(&self) -> TxnHandle {
        let txn_id = self.next_txn.fetch_add(1, Ordering::AcqRel);
        // registering under the lock keeps the snapshot from racing a GC watermark
        let mut active = self.active.lock().unwrap();
        let snapshot_ts = self.latest_commit_ts();
        active.insert(txn_id, snapshot_ts);
        drop(active);
        self.record(HistoryEvent::Begin { txn: txn_id, snapshot_ts });
        TxnHandle {
            txn_id,
            snapshot_ts,
            read_set: BTreeSet::new(),
            write_buffer: BTreeMap::new(),
            state: TxnState::Active,
            demand: TaskDemand::default(),
        }
    }

    pub fn txn_read(&self, txn: &mut TxnHandle, key: i64) -> Result<Option<Vec<Value>>, TxnError> {
        if txn.state != TxnState::Active {
            return Err(TxnError::TxnNotActive(txn.txn_id));
        }
        let observed = match txn.write_buffer.get(&key) {
            Some(buffered) => buffered.clone(),
            None => self.store.row_read(key, txn.snapshot_ts),
        };
        txn.read_set.insert(key);
        txn.demand.add(&self.cost.access());
        self.record(HistoryEvent::Read { txn: txn.txn_id, key, observed: observed.clone() });
        Ok(observed)
    }

    /// Buffers a write; `None` deletes the key.
    pub fn txn_write(&self, txn: &mut TxnHandle, key: i64, values: Option<Vec<Value>>) -> Result<(), TxnError> {
        if txn.state != TxnState::Active {
            return Err(TxnError::TxnNotActive(txn.txn_id));
        }
        if let Some(v) = &values {
            self.store.schema().check_values(v)?;
        }
        txn.demand.add(&self.cost.access());
        self.record(HistoryEvent::Write { txn: txn.txn_id, key, values: values.clone() });
        txn.write_buffer.insert(key, values);
        Ok(())
    }

    pub fn abort(&self, txn: &mut TxnHandle) -> Result<(), TxnError> {
        if txn.state != TxnState::Active {
            return Err(TxnError::TxnNotActive(txn.txn_id));
        }
        txn.state = TxnState::Aborted;
        self.active.lock().unwrap().remove(&txn.txn_id);
        self.record(HistoryEvent::Abort { txn: txn.txn_id });
        Ok(())
    }

    pub fn commit(&self, txn: &mut TxnHandle) -> Result<CommitOutcome, TxnError> {
        if txn.state != TxnState::Active {
            return Err(TxnError::TxnNotActive(txn.txn_id));
        }
        if txn.write_buffer.is_empty() {
            txn.state = TxnState::Committed;
            self.active.lock().unwrap().remove(&txn.txn_id);
            self.record(HistoryEvent::Commit { txn: txn.txn_id, commit_ts: None });
            return Ok(CommitOutcome::ReadOnly);
        }

        // validate + install + enqueue form one critical section
        let mut seq = self.sequencer.lock().unwrap();
        for &key in txn.write_buffer.keys() {
            if self.store.newest_begin_ts(key).is_some_and(|b| b > txn.snapshot_ts) {
                txn.state = TxnState::Aborted;
                self.active.lock().unwrap().remove(&txn.txn_id);
                self.record(HistoryEvent::Abort { txn: txn.txn_id });
                return Err(TxnError::WriteWriteConflict { txn: txn.txn_id, key });
            }
        }
        let commit_ts = seq.last_ts.next();
        let ops: Vec<DeltaOp> = txn
            .write_buffer
            .iter()
            .map(|(&key, values)| {
                let kind = match values {
                    None => OpKind::Delete,
                    Some(_) if self.store.is_live(key) => OpKind::Update,
                    Some(_) => OpKind::Insert,
                };
                DeltaOp { kind, key, values: values.clone() }
            })
            .collect();
        let delta = DeltaRecord { commit_ts, txn_id: txn.txn_id, ops };
        if let Some(sink) = &self.sink {
            sink.accept(&delta).map_err(TxnError::Sink)?;
        }
        for op in &delta.ops {
            self.store.row_install(op.key, op.values.clone(), commit_ts, txn.txn_id)?;
        }
        seq.last_ts = commit_ts;
        seq.log.push(delta);
        self.latest.store(commit_ts.0, Ordering::Release);
        txn.state = TxnState::Committed;
        self.active.lock().unwrap().remove(&txn.txn_id);
        self.record(HistoryEvent::Commit { txn: txn.txn_id, commit_ts: Some(commit_ts) });
        Ok(CommitOutcome::Committed(commit_ts))
    }

    pub fn commit_log(&self) -> Vec<DeltaRecord> {
        self.sequencer.lock().unwrap().log.clone()
    }

    pub fn commit_count(&self) -> usize {
        self.sequencer.lock().unwrap().log.len()
    }

    /// One JSON object per committed delta: `commit_ts`, `txn_id`, `ops`.
    pub fn export_commit_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let seq = self.sequencer.lock().unwrap();
        for d in &seq.log {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Replays `log` over `initial` up to and including `ts`.
pub fn replay_to(
    initial: &BTreeMap<i64, Vec<Value>>,
    log: &[DeltaRecord],
    ts: Timestamp,
) -> BTreeMap<i64, Vec<Value>> {
    let mut state = initial.clone();
    for d in log.iter().take_while(|d| d.commit_ts <= ts) {
        for op in &d.ops {
            match &op.values {
                Some(v) => {
                    state.insert(op.key, v.clone());
                }
                None => {
                    state.remove(&op.key);
                }
            }
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{ColumnDef, ColumnType, TableSchema};

    fn engine() -> TxnEngine {
        let schema = TableSchema::new(
            "t",
            vec![
                ColumnDef { name: "k".into(), ty: ColumnType::Int },
                ColumnDef { name: "v".into(), ty: ColumnType::Int },
            ],
            0,
        )
        .unwrap();
        TxnEngine::new(Arc::new(RowStore::new(schema))).with_history()
    }

    fn v(x: i64) -> Option<Vec<Value>> {
        Some(vec![Value::Int(x)])
    }

    #[test]
    fn begin_snapshots_latest_commit() {
        let e = engine();
        assert_eq!(e.begin().snapshot_ts, Timestamp(0));
        let mut t = e.begin();
        e.txn_write(&mut t, 1, v(1)).unwrap();
        assert_eq!(e.commit(&mut t).unwrap(), CommitOutcome::Committed(Timestamp(1)));
        let a = e.begin();
        let b = e.begin();
        assert_eq!(a.snapshot_ts, Timestamp(1));
        assert_eq!(a.snapshot_ts, b.snapshot_ts);
    }

    #[test]
    fn read_your_writes_and_last_write_wins() {
        let e = engine();
        let mut t = e.begin();
        e.txn_write(&mut t, 1, v(99)).unwrap();
        assert_eq!(e.txn_read(&mut t, 1).unwrap(), v(99));
        e.txn_write(&mut t, 1, v(100)).unwrap();
        e.commit(&mut t).unwrap();
        assert_eq!(e.store().row_read(1, Timestamp(1)), v(100));
    }

    #[test]
    fn later_commit_is_invisible_to_older_snapshot() {
        let e = engine();
        let mut w = e.begin();
        e.txn_write(&mut w, 1, v(10)).unwrap();
        e.commit(&mut w).unwrap();
        let mut reader = e.begin();
        let mut w2 = e.begin();
        e.txn_write(&mut w2, 1, v(20)).unwrap();
        e.commit(&mut w2).unwrap();
        assert_eq!(e.txn_read(&mut reader, 1).unwrap(), v(10));
        // oracle: replay the log to the reader's snapshot
        let state = replay_to(&BTreeMap::new(), &e.commit_log(), reader.snapshot_ts);
        assert_eq!(state.get(&1).cloned(), v(10));
    }

    #[test]
    fn abort_leaves_store_unchanged() {
        let e = engine();
        let mut t = e.begin();
        e.txn_write(&mut t, 1, v(1)).unwrap();
        e.abort(&mut t).unwrap();
        assert_eq!(e.store().version_count(), 0);
        assert!(matches!(e.txn_read(&mut t, 1), Err(TxnError::TxnNotActive(_))));
        assert!(matches!(e.txn_write(&mut t, 1, v(2)), Err(TxnError::TxnNotActive(_))));
        assert!(matches!(e.commit(&mut t), Err(TxnError::TxnNotActive(_))));
    }

    #[test]
    fn first_committer_wins() {
        let e = engine();
        let mut t1 = e.begin();
        let mut t2 = e.begin();
        e.txn_write(&mut t1, 5, v(1)).unwrap();
        e.txn_write(&mut t2, 5, v(2)).unwrap();
        assert_eq!(e.commit(&mut t1).unwrap(), CommitOutcome::Committed(Timestamp(1)));
        assert!(matches!(e.commit(&mut t2), Err(TxnError::WriteWriteConflict { key: 5, .. })));
        assert_eq!(t2.state(), TxnState::Aborted);
        assert_eq!(e.store().row_read(5, Timestamp(1)), v(1));
        assert_eq!(e.commit_count(), 1);
    }

    #[test]
    fn disjoint_writers_both_commit() {
        let e = engine();
        let mut t1 = e.begin();
        let mut t2 = e.begin();
        e.txn_write(&mut t1, 1, v(1)).unwrap();
        e.txn_write(&mut t2, 2, v(2)).unwrap();
        assert!(e.commit(&mut t1).is_ok());
        assert!(e.commit(&mut t2).is_ok());
    }

    #[test]
    fn read_only_emits_no_delta() {
        let e = engine();
        let mut t = e.begin();
        e.txn_read(&mut t, 1).unwrap();
        assert_eq!(e.commit(&mut t).unwrap(), CommitOutcome::ReadOnly);
        assert_eq!(e.commit_count(), 0);
        assert_eq!(e.latest_commit_ts(), Timestamp(0));
    }

    #[test]
    fn op_kinds_follow_liveness() {
        let e = engine();
        let mut t = e.begin();
        e.txn_write(&mut t, 1, v(1)).unwrap();
        e.commit(&mut t).unwrap();
        let mut t = e.begin();
        e.txn_write(&mut t, 1, v(2)).unwrap();
        e.txn_write(&mut t, 2, None).unwrap();
        e.commit(&mut t).unwrap();
        let log = e.commit_log();
        assert_eq!(log[0].ops[0].kind, OpKind::Insert);
        assert_eq!(log[1].ops[0].kind, OpKind::Update);
        assert_eq!(log[1].ops[1].kind, OpKind::Delete);
    }

    #[test]
    fn accesses_accumulate_demand() {
        let e = engine();
        let mut t = e.begin();
        e.txn_read(&mut t, 1).unwrap();
        e.txn_write(&mut t, 1, v(1)).unwrap();
        let c = e.cost_model();
        assert_eq!(t.demand().compute_ops, 2.0 * c.ops_per_access);
        let expected = 2.0 * c.bytes_per_access * (1.0 - c.cache_hit_rate);
        assert!((t.demand().offchip_bytes - expected).abs() < 1e-9);
    }

    #[test]
    fn commit_log_exports_jsonl() {
        let e = engine();
        let mut t = e.begin();
        e.txn_write(&mut t, 3, v(7)).unwrap();
        e.commit(&mut t).unwrap();
        let mut buf = Vec::new();
        e.export_commit_log(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(
            line.trim(),
            r#"{"commit_ts":1,"txn_id":1,"ops":[{"kind":"insert","key":3,"values":[7]}]}"#
        );
    }

    #[test]
    fn type_mismatch_rejected_at_write() {
        let e = engine();
        let mut t = e.begin();
        let err = e.txn_write(&mut t, 1, Some(vec![Value::Float(1.0)])).unwrap_err();
        assert!(matches!(err, TxnError::Storage(_)));
    }
}
