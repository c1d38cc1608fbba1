use std::collections::BTreeMap;
use std::sync::Arc;

use islands::propagation::Propagator;
use islands::storage::{
    ChunkVersionSet, ColumnChunk, ColumnData, ColumnDef, ColumnStore, ColumnStoreOptions, ColumnType, RowStore,
    SnapshotHandle, StorageError, TableSchema, Timestamp, Value,
};
use islands::txn::{replay_to, DeltaOp, DeltaRecord, OpKind};
use proptest::prelude::*;

fn schema() -> TableSchema {
    let col = |name: &str, ty| ColumnDef { name: name.into(), ty };
    TableSchema::new(
        "t",
        vec![col("id", ColumnType::Int), col("a", ColumnType::Int), col("f", ColumnType::Float), col("b", ColumnType::Bytes(4))],
        0,
    )
    .unwrap()
}

fn vals(x: i64) -> Vec<Value> {
    vec![Value::Int(x), Value::Float(x as f64 / 4.0), Value::Bytes(vec![x as u8; 4].into())]
}

fn ts(t: u64) -> Timestamp {
    Timestamp(t)
}

fn opts(chunk_count: usize) -> ColumnStoreOptions {
    ColumnStoreOptions { chunk_count, chunk_capacity: 1024, vault_count: 4 }
}

#[test]
fn row_read_examples() {
    let s = RowStore::new(schema());
    assert_eq!(s.row_read(7, ts(5)), None);
    s.row_install(1, Some(vals(10)), ts(5), 1).unwrap();
    s.row_install(1, Some(vals(20)), ts(15), 2).unwrap();
    assert_eq!(s.row_read(1, ts(10)), Some(vals(10)));
    assert_eq!(s.row_read(1, ts(15)), Some(vals(20)));
    assert_eq!(s.row_read(1, ts(4)), None);

    let chain: Vec<_> = s.versions().into_iter().filter(|v| v.key == 1).map(|v| (v.begin_ts, v.end_ts)).collect();
    assert_eq!(chain, vec![(ts(5), ts(15)), (ts(15), Timestamp::INFINITY)]);

    let err = s.row_install(1, Some(vals(30)), ts(3), 3).unwrap_err();
    assert!(matches!(err, StorageError::OutOfOrderInstall { key: 1, .. }));
}

#[test]
fn snapshot_at_floor_rule_and_gc() {
    let store = ColumnStore::new(schema(), opts(4)).unwrap();
    let fresh = store.snapshot_at(ts(0)).unwrap();
    assert_eq!(fresh.snapshot_ts(), ts(0));
    assert_eq!(fresh.rows().count(), 0);
    drop(fresh);

    for t in [10, 20] {
        let prev = store.newest();
        store.publish(ChunkVersionSet::new(ts(t), prev.chunks.clone(), Some(prev.version_ts))).unwrap();
    }
    assert_eq!(store.live_versions(), vec![ts(0), ts(10), ts(20)]);
    assert_eq!(store.snapshot_at(ts(15)).unwrap().snapshot_ts(), ts(10));

    assert_eq!(store.gc(ts(0)), 0);
    let pinned = store.snapshot_at(ts(10)).unwrap();
    assert_eq!(store.gc(ts(20)), 1);
    assert_eq!(store.live_versions(), vec![ts(10), ts(20)]);
    assert!(matches!(store.snapshot_at(ts(5)), Err(StorageError::SnapshotTooOld(_))));
    assert_eq!(pinned.snapshot_ts(), ts(10));
    drop(pinned);
    assert_eq!(store.gc(ts(20)), 1);
    assert_eq!(store.live_versions(), vec![ts(20)]);
    assert_eq!(store.live_pins(), 0);
}

#[test]
fn chunk_scan_respects_valid_bits() {
    let s = schema();
    let chunk = |valid: Vec<bool>| {
        let mut c = ColumnChunk::empty(&s, 0, 0, 8);
        c.keys = vec![3, 5];
        c.valid = valid;
        c.columns = vec![
            ColumnData::Int(vec![30, 50]),
            ColumnData::Float(vec![0.5, 1.5]),
            ColumnData::Bytes { width: 4, data: vec![0; 8] },
        ];
        SnapshotHandle::detached(ChunkVersionSet::new(ts(1), vec![Arc::new(c)], None))
    };
    let both = chunk(vec![true, true]);
    let keys: Vec<i64> = both.chunk_scan(0).map(|(k, _)| k).collect();
    assert_eq!(keys, vec![3, 5]);
    let one = chunk(vec![true, false]);
    let rows: Vec<_> = one.chunk_scan(0).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].0, 3);
    assert_eq!(rows[0].1[0], Value::Int(30));
    let empty = SnapshotHandle::detached(ChunkVersionSet::new(ts(1), vec![Arc::new(ColumnChunk::empty(&s, 0, 0, 8))], None));
    assert_eq!(empty.chunk_scan(0).count(), 0);
    assert_eq!(empty.chunk_scan(9).count(), 0);
}

/// `(key, value-or-delete)` writes grouped into commits at timestamps
/// 1, 2, 3, ...
fn arb_commits() -> impl Strategy<Value = Vec<(u64, Vec<(i64, Option<i64>)>)>> {
    proptest::collection::vec(
        proptest::collection::vec((0i64..24, proptest::option::weighted(0.8, 0i64..1000)), 1..5),
        1..60,
    )
    .prop_map(|cs| {
        let mut t = 0;
        cs.into_iter()
            .map(|ops| {
                t += 1;
                let mut seen = BTreeMap::new();
                for (k, v) in ops {
                    seen.insert(k, v);
                }
                (t, seen.into_iter().collect())
            })
            .collect()
    })
}

fn to_deltas(commits: &[(u64, Vec<(i64, Option<i64>)>)]) -> Vec<DeltaRecord> {
    let mut live = std::collections::BTreeSet::new();
    commits
        .iter()
        .map(|(t, ops)| DeltaRecord {
            commit_ts: ts(*t),
            txn_id: *t,
            ops: ops
                .iter()
                .map(|&(k, v)| {
                    let kind = match (v, live.contains(&k)) {
                        (None, _) => OpKind::Delete,
                        (Some(_), true) => OpKind::Update,
                        (Some(_), false) => OpKind::Insert,
                    };
                    if v.is_some() {
                        live.insert(k);
                    } else {
                        live.remove(&k);
                    }
                    DeltaOp { kind, key: k, values: v.map(vals) }
                })
                .collect(),
        })
        .collect()
}

fn row_store_with(deltas: &[DeltaRecord]) -> RowStore {
    let s = RowStore::new(schema());
    for d in deltas {
        for op in &d.ops {
            s.row_install(op.key, op.values.clone(), d.commit_ts, d.txn_id).unwrap();
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn intervals_partition_each_chain(commits in arb_commits()) {
        let deltas = to_deltas(&commits);
        let s = row_store_with(&deltas);
        s.check_invariants().map_err(TestCaseError::fail)?;
        let mut chains: BTreeMap<i64, Vec<_>> = BTreeMap::new();
        for v in s.versions() {
            chains.entry(v.key).or_default().push(v);
        }
        let last = commits.last().unwrap().0;
        for (key, chain) in &chains {
            for w in chain.windows(2) {
                prop_assert!(w[0].begin_ts < w[1].begin_ts, "key {key} not increasing");
                prop_assert_eq!(w[0].end_ts, w[1].begin_ts);
            }
            prop_assert!(chain.last().unwrap().end_ts.is_infinite());
            for t in 0..=last + 1 {
                let visible = chain.iter().filter(|v| v.visible_at(ts(t))).count();
                prop_assert!(visible <= 1, "key {key} has {visible} versions at {t}");
            }
        }
    }

    #[test]
    fn row_reads_match_replay(commits in arb_commits(), gc_at in 0u64..200) {
        let deltas = to_deltas(&commits);
        let s = row_store_with(&deltas);
        let last = commits.last().unwrap().0;
        let watermark = ts(gc_at.min(last));
        s.gc(watermark);
        s.check_invariants().map_err(TestCaseError::fail)?;
        for t in watermark.0..=last {
            let expect = replay_to(&BTreeMap::new(), &deltas, ts(t));
            let got: BTreeMap<_, _> = s.scan_at(ts(t)).rows.into_iter().collect();
            prop_assert_eq!(&got, &expect, "scan at {}", t);
            for k in 0..24 {
                prop_assert_eq!(s.row_read(k, ts(t)), expect.get(&k).cloned());
            }
        }
    }

    #[test]
    fn pinned_sets_survive_gc(
        commits in arb_commits(),
        pins in proptest::collection::vec(0u64..200, 0..6),
        watermark in 0u64..200,
        batch in 1usize..8,
    ) {
        let deltas = to_deltas(&commits);
        let store = ColumnStore::new(schema(), opts(4)).unwrap();
        let p = Propagator::new(ts(0));
        for d in &deltas {
            p.enqueue(d.clone()).unwrap();
        }
        p.drain(&store, batch).unwrap();
        store.check_invariants().map_err(TestCaseError::fail)?;

        let handles: Vec<SnapshotHandle> = pins.iter().map(|&t| store.snapshot_at(ts(t)).unwrap()).collect();
        store.gc(ts(watermark));
        let live = store.live_versions();
        for h in &handles {
            prop_assert!(live.contains(&h.snapshot_ts()), "pinned set {} reclaimed", h.snapshot_ts());
            let expect = replay_to(&BTreeMap::new(), &deltas, h.snapshot_ts());
            let got: BTreeMap<_, _> = h.rows().collect();
            prop_assert_eq!(got, expect);
        }
        prop_assert_eq!(store.live_pins(), handles.len());
        drop(handles);
        prop_assert_eq!(store.live_pins(), 0);
        store.check_invariants().map_err(TestCaseError::fail)?;
    }

    #[test]
    fn replicas_converge(commits in arb_commits(), chunks in 1usize..9, batch in 1usize..16) {
        let deltas = to_deltas(&commits);
        let rows = row_store_with(&deltas);
        let store = ColumnStore::new(schema(), opts(chunks)).unwrap();
        let p = Propagator::new(ts(0));
        for d in &deltas {
            p.enqueue(d.clone()).unwrap();
        }
        p.drain(&store, batch).unwrap();
        let latest = rows.latest_commit_ts();
        let col: BTreeMap<_, _> = store.snapshot_at(latest).unwrap().rows().collect();
        let row: BTreeMap<_, _> = rows.scan_at(latest).rows.into_iter().collect();
        prop_assert_eq!(col, row);
    }
}
