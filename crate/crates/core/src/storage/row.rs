use std::collections::BTreeMap;
use std::io::Write;
use std::sync::RwLock;

use serde::Serialize;

use super::{chunk_for_key, StorageError, TableSchema, Timestamp, TxnId, Value};

/// One interval `[begin_ts, end_ts)` of a key's history. `values == None`
/// is a tombstone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowVersion {
    pub key: i64,
    pub values: Option<Vec<Value>>,
    pub begin_ts: Timestamp,
    pub end_ts: Timestamp,
    pub writer_txn: TxnId,
}

impl RowVersion {
    pub fn visible_at(&self, ts: Timestamp) -> bool {
        self.begin_ts <= ts && ts < self.end_ts
    }

    pub fn is_tombstone(&self) -> bool {
        self.values.is_none()
    }
}

#[derive(Debug, Default)]
struct Chains {
    chains: BTreeMap<i64, Vec<RowVersion>>,
    latest_commit_ts: Timestamp,
}

/// Multi-versioned row replica. Readers share a lock; installs are expected
/// to arrive in commit order from a single sequencer.
#[derive(Debug)]
pub struct RowStore {
    schema: TableSchema,
    inner: RwLock<Chains>,
}

/// Visible rows plus the number of versions walked to find them.
#[derive(Debug, Clone, Default)]
pub struct RowScan {
    pub rows: Vec<(i64, Vec<Value>)>,
    pub versions_visited: usize,
}

impl RowStore {
    pub fn new(schema: TableSchema) -> Self {
        RowStore {
            schema,
            inner: RwLock::new(Chains::default()),
        }
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn latest_commit_ts(&self) -> Timestamp {
        self.inner.read().unwrap().latest_commit_ts
    }

    /// Bulk-loads rows as the timestamp-0 state. Only valid on an empty store.
    pub fn load_initial(
        &self,
        rows: impl IntoIterator<Item = (i64, Vec<Value>)>,
    ) -> Result<(), StorageError> {
        let mut inner = self.inner.write().unwrap();
        if !inner.chains.is_empty() || inner.latest_commit_ts != Timestamp::ZERO {
            return Err(StorageError::NotEmpty);
        }
        for (key, values) in rows {
            self.schema.check_values(&values)?;
            let version = RowVersion {
                key,
                values: Some(values),
                begin_ts: Timestamp::ZERO,
                end_ts: Timestamp::INFINITY,
                writer_txn: 0,
            };
            if inner.chains.insert(key, vec![version]).is_some() {
                return Err(StorageError::DuplicateKey(key));
            }
        }
        Ok(())
    }

    /// Values of the version of `key` visible at `ts`, or `None`.
    pub fn row_read(&self, key: i64, ts: Timestamp) -> Option<Vec<Value>> {
        let inner = self.inner.read().unwrap();
        let chain = inner.chains.get(&key)?;
        // chains are sorted by begin_ts
        let idx = chain.partition_point(|v| v.begin_ts <= ts);
        let version = chain[..idx].last()?;
        if version.visible_at(ts) {
            version.values.clone()
        } else {
            None
        }
    }

    /// Begin timestamp of the newest installed version of `key`, tombstones
    /// included.
    pub fn newest_begin_ts(&self, key: i64) -> Option<Timestamp> {
        let inner = self.inner.read().unwrap();
        inner.chains.get(&key).and_then(|c| c.last()).map(|v| v.begin_ts)
    }

    /// Whether `key` has a live (non-tombstone) open version.
    pub fn is_live(&self, key: i64) -> bool {
        let inner = self.inner.read().unwrap();
        inner
            .chains
            .get(&key)
            .and_then(|c| c.last())
            .is_some_and(|v| v.end_ts.is_infinite() && !v.is_tombstone())
    }

    /// Closes the open version of `key` at `commit_ts` and appends a new one.
    /// `values == None` installs a tombstone.
    pub fn row_install(
        &self,
        key: i64,
        values: Option<Vec<Value>>,
        commit_ts: Timestamp,
        writer_txn: TxnId,
    ) -> Result<(), StorageError> {
        if let Some(v) = &values {
            self.schema.check_values(v)?;
        }
        if commit_ts == Timestamp::ZERO || commit_ts.is_infinite() {
            return Err(StorageError::OutOfOrderInstall { key, commit_ts, open_begin: Timestamp::ZERO });
        }
        let mut inner = self.inner.write().unwrap();
        let chain = inner.chains.entry(key).or_default();
        if let Some(open) = chain.last_mut() {
            if commit_ts <= open.begin_ts {
                return Err(StorageError::OutOfOrderInstall {
                    key,
                    commit_ts,
                    open_begin: open.begin_ts,
                });
            }
            if open.end_ts.is_infinite() {
                open.end_ts = commit_ts;
            }
        }
        chain.push(RowVersion {
            key,
            values,
            begin_ts: commit_ts,
            end_ts: Timestamp::INFINITY,
            writer_txn,
        });
        if commit_ts > inner.latest_commit_ts {
            inner.latest_commit_ts = commit_ts;
        }
        Ok(())
    }

    /// All rows visible at `ts`, ascending by key.
    pub fn scan_at(&self, ts: Timestamp) -> RowScan {
        self.scan_chunks_at(ts, 1).pop().unwrap_or_default()
    }

    /// Like [`RowStore::scan_at`], with rows and walked versions split by
    /// hash chunk.
    pub fn scan_chunks_at(&self, ts: Timestamp, chunk_count: usize) -> Vec<RowScan> {
        let inner = self.inner.read().unwrap();
        let mut scans = vec![RowScan::default(); chunk_count.max(1)];
        for (&key, chain) in &inner.chains {
            let scan = &mut scans[chunk_for_key(key, chunk_count.max(1))];
            let idx = chain.partition_point(|v| v.begin_ts <= ts);
            // a snapshot scan walks from the newest version back to the visible one
            scan.versions_visited += chain.len() - idx.saturating_sub(1);
            if let Some(v) = chain[..idx].last() {
                if v.visible_at(ts) {
                    if let Some(values) = &v.values {
                        scan.rows.push((key, values.clone()));
                    }
                }
            }
        }
        scans
    }

    /// Drops versions with `end_ts <= watermark`, and chains that are reduced
    /// to a lone tombstone at or below the watermark. Returns the number of
    /// versions removed.
    pub fn gc(&self, watermark: Timestamp) -> usize {
        let mut inner = self.inner.write().unwrap();
        let mut removed = 0;
        inner.chains.retain(|_, chain| {
            let dead = chain.partition_point(|v| v.end_ts <= watermark);
            removed += dead;
            chain.drain(..dead);
            if chain.len() == 1 && chain[0].is_tombstone() && chain[0].begin_ts <= watermark {
                removed += 1;
                return false;
            }
            !chain.is_empty()
        });
        removed
    }

    pub fn version_count(&self) -> usize {
        self.inner.read().unwrap().chains.values().map(Vec::len).sum()
    }

    /// Every installed version, in key then begin order.
    pub fn versions(&self) -> Vec<RowVersion> {
        let inner = self.inner.read().unwrap();
        inner.chains.values().flatten().cloned().collect()
    }

    /// Verifies visibility partitioning and chain linearity.
    pub fn check_invariants(&self) -> Result<(), String> {
        let inner = self.inner.read().unwrap();
        for (key, chain) in &inner.chains {
            let mut open = 0;
            for (i, v) in chain.iter().enumerate() {
                if v.key != *key {
                    return Err(format!("version of key {} filed under {key}", v.key));
                }
                if v.begin_ts >= v.end_ts {
                    return Err(format!("key {key}: empty interval [{}, {})", v.begin_ts, v.end_ts));
                }
                if v.begin_ts > inner.latest_commit_ts {
                    return Err(format!("key {key}: begin_ts {} beyond latest commit", v.begin_ts));
                }
                if v.end_ts.is_infinite() {
                    open += 1;
                }
                if let Some(next) = chain.get(i + 1) {
                    if v.end_ts != next.begin_ts {
                        return Err(format!(
                            "key {key}: version ending at {} followed by one beginning at {}",
                            v.end_ts, next.begin_ts
                        ));
                    }
                }
            }
            if open > 1 {
                return Err(format!("key {key}: {open} open versions"));
            }
        }
        Ok(())
    }

    /// Debug dump, one JSON object per version.
    pub fn dump_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in self.versions() {
            serde_json::to_writer(&mut out, &v)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{ColumnDef, ColumnType};

    fn store() -> RowStore {
        let schema = TableSchema::new(
            "t",
            vec![
                ColumnDef { name: "k".into(), ty: ColumnType::Int },
                ColumnDef { name: "v".into(), ty: ColumnType::Int },
            ],
            0,
        )
        .unwrap();
        RowStore::new(schema)
    }

    fn v(x: i64) -> Option<Vec<Value>> {
        Some(vec![Value::Int(x)])
    }

    #[test]
    fn read_empty_store() {
        assert_eq!(store().row_read(7, Timestamp(5)), None);
    }

    #[test]
    fn read_respects_intervals() {
        let s = store();
        s.row_install(1, v(10), Timestamp(5), 1).unwrap();
        s.row_install(1, v(20), Timestamp(15), 2).unwrap();
        assert_eq!(s.row_read(1, Timestamp(10)), v(10));
        assert_eq!(s.row_read(1, Timestamp(15)), v(20));
        assert_eq!(s.row_read(1, Timestamp(4)), None);
        let chain = s.versions();
        assert_eq!(chain[0].end_ts, Timestamp(15));
        assert!(chain[1].end_ts.is_infinite());
    }

    #[test]
    fn install_out_of_order_is_rejected() {
        let s = store();
        s.row_install(1, v(10), Timestamp(5), 1).unwrap();
        let err = s.row_install(1, v(11), Timestamp(3), 2).unwrap_err();
        assert!(matches!(err, StorageError::OutOfOrderInstall { .. }));
        assert_eq!(s.row_read(1, Timestamp(100)), v(10));
    }

    #[test]
    fn tombstone_hides_row() {
        let s = store();
        s.row_install(1, v(10), Timestamp(1), 1).unwrap();
        s.row_install(1, None, Timestamp(2), 2).unwrap();
        assert_eq!(s.row_read(1, Timestamp(1)), v(10));
        assert_eq!(s.row_read(1, Timestamp(2)), None);
        assert!(!s.is_live(1));
        assert_eq!(s.scan_at(Timestamp(2)).rows.len(), 0);
        s.check_invariants().unwrap();
    }

    #[test]
    fn gc_drops_closed_versions() {
        let s = store();
        s.row_install(1, v(10), Timestamp(1), 1).unwrap();
        s.row_install(1, v(20), Timestamp(5), 2).unwrap();
        s.row_install(2, v(1), Timestamp(6), 3).unwrap();
        s.row_install(2, None, Timestamp(7), 4).unwrap();
        assert_eq!(s.gc(Timestamp(0)), 0);
        assert_eq!(s.gc(Timestamp(8)), 3);
        assert_eq!(s.version_count(), 1);
        assert_eq!(s.row_read(1, Timestamp(8)), v(20));
    }

    #[test]
    fn initial_load_requires_empty() {
        let s = store();
        s.load_initial([(1, vec![Value::Int(1)])]).unwrap();
        assert_eq!(s.row_read(1, Timestamp::ZERO), v(1));
        assert!(matches!(s.load_initial([]), Err(StorageError::NotEmpty)));
    }

    #[test]
    fn dump_is_one_line_per_version() {
        let s = store();
        s.row_install(3, v(1), Timestamp(1), 1).unwrap();
        s.row_install(3, v(2), Timestamp(2), 1).unwrap();
        let mut buf = Vec::new();
        s.dump_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].contains("\"end_ts\":null"));
    }
}
