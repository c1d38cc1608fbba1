//! Brute-force snapshot-isolation checker over recorded histories.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use super::HistoryError;
use crate::storage::{Timestamp, TxnId, Value};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum HistoryEvent {
    Begin { txn: TxnId, snapshot_ts: Timestamp },
    Read { txn: TxnId, key: i64, observed: Option<Vec<Value>> },
    /// `values == None` is a delete.
    Write { txn: TxnId, key: i64, values: Option<Vec<Value>> },
    /// `commit_ts == None` for read-only commits.
    Commit { txn: TxnId, commit_ts: Option<Timestamp> },
    Abort { txn: TxnId },
}

impl HistoryEvent {
    pub fn txn(&self) -> TxnId {
        match self {
            HistoryEvent::Begin { txn, .. }
            | HistoryEvent::Read { txn, .. }
            | HistoryEvent::Write { txn, .. }
            | HistoryEvent::Commit { txn, .. }
            | HistoryEvent::Abort { txn } => *txn,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A read returned something other than the snapshot (or own-write) value.
    BadRead { txn: TxnId, key: i64, observed: Row, expected: Row },
    /// Two committed transactions with overlapping lifetimes wrote one key.
    ConcurrentWriters { first: TxnId, second: TxnId, key: i64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: &Row| match v {
            None => "absent".to_string(),
            Some(v) => format!("{v:?}"),
        };
        match self {
            Violation::BadRead { txn, key, observed, expected } => write!(
                f,
                "txn {txn} read key {key} as {} but its snapshot holds {}",
                show(observed),
                show(expected)
            ),
            Violation::ConcurrentWriters { first, second, key } => {
                write!(f, "concurrent txns {first} and {second} both committed writes to key {key}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub transactions: usize,
    pub committed_writers: usize,
    pub reads_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A key's contents as seen by a read; `None` when absent or deleted.
type Row = Option<Vec<Value>>;

#[derive(Debug, Clone, Copy)]
enum Outcome {
    Committed(Option<Timestamp>),
    Aborted,
}

struct ReadTrace {
    key: i64,
    observed: Row,
    /// The transaction's own buffered write to `key` at read time.
    own: Option<Row>,
}

#[derive(Default)]
struct TxnTrace {
    snapshot_ts: Timestamp,
    reads: Vec<ReadTrace>,
    writes: BTreeMap<i64, Row>,
    outcome: Option<Outcome>,
}

/// Checks a complete history against snapshot isolation:
/// every read must equal the transaction's own latest write to the key, or
/// otherwise the state obtained by replaying committed writes up to the
/// reader's snapshot over `initial`; no two committed transactions whose
/// `[snapshot_ts, commit_ts]` intervals overlap may write the same key.
pub fn validate_history(
    history: &[HistoryEvent],
    initial: &BTreeMap<i64, Vec<Value>>,
) -> Result<ValidationReport, HistoryError> {
    let mut traces: HashMap<TxnId, TxnTrace> = HashMap::new();
    let mut order: Vec<TxnId> = Vec::new();
    for (pos, event) in history.iter().enumerate() {
        let txn = event.txn();
        if let HistoryEvent::Begin { snapshot_ts, .. } = event {
            if traces.contains_key(&txn) {
                return Err(HistoryError::Malformed(format!("event {pos}: txn {txn} begins twice")));
            }
            traces.insert(txn, TxnTrace { snapshot_ts: *snapshot_ts, ..Default::default() });
            order.push(txn);
            continue;
        }
        let trace = traces
            .get_mut(&txn)
            .ok_or_else(|| HistoryError::Malformed(format!("event {pos}: txn {txn} used before begin")))?;
        if trace.outcome.is_some() {
            return Err(HistoryError::Malformed(format!("event {pos}: txn {txn} used after it terminated")));
        }
        match event {
            HistoryEvent::Begin { .. } => unreachable!(),
            HistoryEvent::Read { key, observed, .. } => {
                let own = trace.writes.get(key).cloned();
                trace.reads.push(ReadTrace { key: *key, observed: observed.clone(), own });
            }
            HistoryEvent::Write { key, values, .. } => {
                trace.writes.insert(*key, values.clone());
            }
            HistoryEvent::Commit { commit_ts, .. } => {
                match commit_ts {
                    Some(ts) if *ts <= trace.snapshot_ts => {
                        return Err(HistoryError::Malformed(format!(
                            "event {pos}: txn {txn} commits at {ts}, not after its snapshot {}",
                            trace.snapshot_ts
                        )))
                    }
                    None if !trace.writes.is_empty() => {
                        return Err(HistoryError::Malformed(format!(
                            "event {pos}: txn {txn} wrote but committed without a timestamp"
                        )))
                    }
                    _ => {}
                }
                trace.outcome = Some(Outcome::Committed(*commit_ts));
            }
            HistoryEvent::Abort { .. } => trace.outcome = Some(Outcome::Aborted),
        }
    }

    // committed write log, per key, ordered by commit_ts
    let mut commit_owner: BTreeMap<Timestamp, TxnId> = BTreeMap::new();
    let mut per_key: BTreeMap<i64, Vec<(Timestamp, Row)>> = BTreeMap::new();
    for txn in &order {
        let trace = &traces[txn];
        let Some(outcome) = trace.outcome else {
            return Err(HistoryError::Malformed(format!("txn {txn} never terminated")));
        };
        if let Outcome::Committed(Some(ts)) = outcome {
            if let Some(other) = commit_owner.insert(ts, *txn) {
                return Err(HistoryError::Malformed(format!("txns {other} and {txn} share commit_ts {ts}")));
            }
            for (key, values) in &trace.writes {
                per_key.entry(*key).or_default().push((ts, values.clone()));
            }
        }
    }
    for versions in per_key.values_mut() {
        versions.sort_by_key(|(ts, _)| *ts);
    }

    let mut report = ValidationReport {
        transactions: order.len(),
        committed_writers: commit_owner.len(),
        ..Default::default()
    };

    for txn in &order {
        let trace = &traces[txn];
        for read in &trace.reads {
            let expected = match &read.own {
                Some(buffered) => buffered.clone(),
                None => snapshot_value(initial, read.key, per_key.get(&read.key), trace.snapshot_ts),
            };
            report.reads_checked += 1;
            if read.observed != expected {
                report.violations.push(Violation::BadRead {
                    txn: *txn,
                    key: read.key,
                    observed: read.observed.clone(),
                    expected,
                });
            }
        }
    }

    // the later committer of an overlapping pair sees the earlier commit in
    // (its snapshot, its commit)
    for (key, versions) in &per_key {
        let commits: Vec<Timestamp> = versions.iter().map(|(ts, _)| *ts).collect();
        for (ts, _) in versions {
            let second = commit_owner[ts];
            let snapshot = traces[&second].snapshot_ts;
            let lo = commits.partition_point(|c| *c <= snapshot);
            let hi = commits.partition_point(|c| c < ts);
            if lo < hi {
                report.violations.push(Violation::ConcurrentWriters {
                    first: commit_owner[&commits[lo]],
                    second,
                    key: *key,
                });
            }
        }
    }
    Ok(report)
}

fn snapshot_value(
    initial: &BTreeMap<i64, Vec<Value>>,
    key: i64,
    versions: Option<&Vec<(Timestamp, Row)>>,
    snapshot: Timestamp,
) -> Row {
    let versions = versions.map(Vec::as_slice).unwrap_or_default();
    match versions.partition_point(|(ts, _)| *ts <= snapshot) {
        0 => initial.get(&key).cloned(),
        idx => versions[idx - 1].1.clone(),
    }
}
