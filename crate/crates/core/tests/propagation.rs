use std::collections::BTreeMap;
use std::sync::Arc;

use islands::propagation::{BatchingPolicy, FreshnessLag, PropagationError, Propagator};
use islands::storage::{ColumnDef, ColumnStore, ColumnStoreOptions, ColumnType, RowStore, TableSchema, Timestamp, Value};
use islands::txn::{replay_to, run_interleaved, DeltaOp, DeltaRecord, InterleaveSpec, OpKind, TxnEngine};
use proptest::prelude::*;

fn schema() -> TableSchema {
    let col = |name: &str, ty| ColumnDef { name: name.into(), ty };
    TableSchema::new("t", vec![col("id", ColumnType::Int), col("v", ColumnType::Int)], 0).unwrap()
}

fn ts(t: u64) -> Timestamp {
    Timestamp(t)
}

fn put(key: i64, v: i64) -> DeltaOp {
    DeltaOp { kind: OpKind::Update, key, values: Some(vec![Value::Int(v)]) }
}

fn delta(t: u64, ops: Vec<DeltaOp>) -> DeltaRecord {
    DeltaRecord { commit_ts: ts(t), txn_id: t, ops }
}

fn store(chunks: usize) -> ColumnStore {
    ColumnStore::new(schema(), ColumnStoreOptions { chunk_count: chunks, chunk_capacity: 256, vault_count: 4 }).unwrap()
}

fn commit_ts_of(b: &islands::propagation::DeltaBatch) -> Vec<u64> {
    b.deltas.iter().map(|d| d.commit_ts.0).collect()
}

#[test]
fn enqueue_examples() {
    let p = Propagator::new(ts(0));
    p.enqueue(delta(1, vec![put(1, 1)])).unwrap();
    p.enqueue(delta(2, vec![put(2, 2)])).unwrap();
    assert_eq!(p.state().queue_depth, 2);

    let q = Propagator::new(ts(0));
    q.enqueue(delta(2, vec![])).unwrap();
    assert_eq!(
        q.enqueue(delta(1, vec![])),
        Err(PropagationError::OutOfOrderDelta { last: ts(2), proposed: ts(1) })
    );

    p.drain(&store(4), 8).unwrap();
    assert_eq!(p.state().queue_depth, 0);
}

#[test]
fn form_batch_examples() {
    let p = Propagator::new(ts(0));
    let policy = BatchingPolicy { max_records: 2, max_lag: 100 };
    assert!(p.form_batch(policy).is_none());
    for t in 1..=3 {
        p.enqueue(delta(t, vec![put(t as i64, 0)])).unwrap();
    }
    let b = p.form_batch(policy).unwrap();
    assert_eq!(commit_ts_of(&b), vec![1, 2]);
    assert_eq!((b.min_ts, b.max_ts), (ts(1), ts(2)));
    // one batch in flight at a time
    assert!(p.form_batch(policy).is_none());

    let s = store(4);
    p.apply_batch(&b, &s).unwrap();
    // a lone record waits until it is due
    assert!(p.form_batch(policy).is_none());

    let lagging = Propagator::new(ts(0));
    lagging.enqueue(delta(1, vec![put(1, 1)])).unwrap();
    assert!(lagging.form_batch(BatchingPolicy { max_records: 64, max_lag: 2 }).is_none());
    let b = lagging.form_batch(BatchingPolicy { max_records: 64, max_lag: 1 }).unwrap();
    assert_eq!(commit_ts_of(&b), vec![1]);
}

#[test]
fn apply_examples() {
    let s = store(4);
    let p = Propagator::new(ts(0));
    let b = |t, ops| islands::propagation::DeltaBatch::new(vec![delta(t, ops)]).unwrap();

    let (set, bill) = p.apply_batch(&b(1, vec![put(5, 10)]), &s).unwrap();
    assert_eq!(set.version_ts, ts(1));
    assert_eq!(s.snapshot_at(ts(1)).unwrap().rows().collect::<Vec<_>>(), vec![(5, vec![Value::Int(10)])]);
    assert_eq!(bill.chunks_touched, 1);
    assert_eq!(bill.ops_applied, 1);
    assert!(bill.total().total_internal_bytes() > 0.0);
    assert_eq!(bill.total().offchip_bytes, 0.0);

    p.apply_batch(&b(2, vec![put(3, 3)]), &s).unwrap();
    p.apply_batch(&b(3, vec![put(3, 7)]), &s).unwrap();
    let at = |t| s.snapshot_at(ts(t)).unwrap().rows().collect::<BTreeMap<_, _>>();
    assert_eq!(at(2)[&3], vec![Value::Int(3)]);
    assert_eq!(at(3)[&3], vec![Value::Int(7)]);

    p.apply_batch(&b(4, vec![DeltaOp { kind: OpKind::Delete, key: 3, values: None }]), &s).unwrap();
    assert!(!at(4).contains_key(&3));
    assert!(at(3).contains_key(&3));

    // untouched chunks are shared with the predecessor
    let v3 = s.snapshot_at(ts(3)).unwrap();
    let v4 = s.snapshot_at(ts(4)).unwrap();
    let touched = s.chunk_for_key(3);
    for c in 0..4 {
        let same = Arc::ptr_eq(&v3.version_set().chunks[c], &v4.version_set().chunks[c]);
        assert_eq!(same, c != touched, "chunk {c}");
    }

    let err = p.apply_batch(&b(6, vec![put(1, 1)]), &s).unwrap_err();
    assert_eq!(err, PropagationError::GapInDeltaStream { expected: ts(5), found: ts(6) });
}

#[test]
fn freshness_examples() {
    let s = store(4);
    let p = Propagator::new(ts(0));
    assert_eq!(p.freshness_lag(), FreshnessLag { timestamps: 0, records: 0 });
    for t in 1..=3 {
        p.enqueue(delta(t, vec![put(1, t as i64)])).unwrap();
    }
    assert_eq!(p.freshness_lag(), FreshnessLag { timestamps: 3, records: 3 });
    let b = p.flush_batch(16).unwrap();
    // in-flight records still count
    assert_eq!(p.freshness_lag().records, 3);
    p.apply_batch(&b, &s).unwrap();
    assert_eq!(p.freshness_lag(), FreshnessLag { timestamps: 0, records: 0 });
    assert_eq!(p.applied_ts(), ts(3));
}

#[test]
fn concurrent_commits_propagate_in_order() {
    let rows = Arc::new(RowStore::new(schema()));
    let p = Arc::new(Propagator::new(ts(0)));
    let engine = Arc::new(TxnEngine::new(rows.clone()).with_sink(p.clone()));
    std::thread::scope(|scope| {
        for w in 0..4i64 {
            let engine = engine.clone();
            scope.spawn(move || {
                for i in 0..250 {
                    let mut t = engine.begin();
                    let key = (w * 7 + i) % 40;
                    engine.txn_write(&mut t, key, Some(vec![Value::Int(w * 1000 + i)])).unwrap();
                    let _ = engine.commit(&mut t);
                }
            });
        }
    });
    let s = store(8);
    p.drain(&s, 64).unwrap();
    let latest = rows.latest_commit_ts();
    assert_eq!(p.applied_ts(), latest);
    let col: BTreeMap<_, _> = s.snapshot_latest().rows().collect();
    let row: BTreeMap<_, _> = rows.scan_at(latest).rows.into_iter().collect();
    assert_eq!(col, row);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn snapshots_are_prefix_consistent(
        seed in any::<u64>(),
        keys in 5i64..200,
        chunks in 1usize..17,
        max_records in 1usize..100,
        max_lag in 1u64..150,
    ) {
        let rows = Arc::new(RowStore::new(schema()));
        let engine = TxnEngine::new(rows.clone());
        // hot key sets abort often, so keep going until the log is long enough
        let mut round = 0;
        while engine.commit_log().len() < 1000 {
            let spec = InterleaveSpec { seed: seed.wrapping_add(round), transactions: 1000, keys, ..Default::default() };
            run_interleaved(&engine, &spec).unwrap();
            round += 1;
        }
        let log = engine.commit_log();
        prop_assert!(log.len() >= 1000, "only {} deltas", log.len());

        let s = store(chunks);
        let p = Propagator::new(ts(0));
        let policy = BatchingPolicy { max_records, max_lag };
        let mut applied_ops = 0;
        let mut last_applied = ts(0);
        for d in &log {
            p.enqueue(d.clone()).unwrap();
            while let Some(b) = p.form_batch(policy) {
                prop_assert_eq!(b.min_ts, last_applied.next());
                prop_assert!(b.len() <= max_records);
                let (_, bill) = p.apply_batch(&b, &s).unwrap();
                applied_ops += bill.ops_applied;
                prop_assert!(p.applied_ts() > last_applied);
                last_applied = p.applied_ts();
            }
            prop_assert!(p.freshness_lag().timestamps < max_lag);
        }
        applied_ops += p.drain(&s, max_records).unwrap().ops_applied;
        prop_assert_eq!(p.freshness_lag(), FreshnessLag { timestamps: 0, records: 0 });

        // exactly once: each op applied in one transition
        let total_ops: usize = log.iter().map(|d| d.ops.len()).sum();
        prop_assert_eq!(applied_ops, total_ops);
        prop_assert_eq!(p.stats().records_applied, log.len());
        prop_assert_eq!(p.stats().ops_applied, total_ops);

        s.check_invariants().map_err(TestCaseError::fail)?;
        let versions = s.live_versions();
        let last = log.last().unwrap().commit_ts.0;
        for t in (0..=last).step_by(((last / 40) as usize).max(1)).chain([last]) {
            let h = s.snapshot_at(ts(t)).unwrap();
            let floor = *versions.iter().filter(|v| v.0 <= t).max().unwrap();
            prop_assert_eq!(h.snapshot_ts(), floor);
            let expect = replay_to(&BTreeMap::new(), &log, floor);
            let got: BTreeMap<_, _> = h.rows().collect();
            prop_assert_eq!(got, expect, "snapshot at {}", t);
        }
    }
}
