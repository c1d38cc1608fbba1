//! Deterministic scheduler mode: a seeded schedule picks which in-flight
//! transaction takes its next step, so a given seed always yields the same
//! interleaving and the same commit log.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TxnEngine, TxnError, TxnHandle};
use crate::storage::{ColumnType, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct InterleaveSpec {
    pub seed: u64,
    pub transactions: usize,
    pub keys: i64,
    /// Transactions in flight at once.
    pub concurrency: usize,
    pub ops_per_txn: usize,
    /// Probability that a step is a read-modify-write rather than a read.
    pub write_fraction: f64,
    /// Probability that a write step deletes instead.
    pub delete_fraction: f64,
}

impl Default for InterleaveSpec {
    fn default() -> Self {
        InterleaveSpec {
            seed: 0,
            transactions: 1000,
            keys: 10,
            concurrency: 8,
            ops_per_txn: 4,
            write_fraction: 0.5,
            delete_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InterleaveStats {
    pub committed: usize,
    pub read_only: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone)]
enum Step {
    Read(i64),
    Write(i64, Option<Vec<Value>>),
    Commit,
}

struct Script {
    handle: TxnHandle,
    steps: std::vec::IntoIter<Step>,
}

/// Values of the given column types derived from one integer.
pub fn synth_values(types: &[ColumnType], x: i64) -> Vec<Value> {
    types
        .iter()
        .enumerate()
        .map(|(i, ty)| match ty {
            ColumnType::Int => Value::Int(x + i as i64),
            ColumnType::Float => Value::Float(x as f64 * 0.25),
            ColumnType::Bytes(w) => Value::Bytes(x.to_le_bytes().iter().copied().cycle().take(*w).collect()),
        })
        .collect()
}

/// Runs `spec.transactions` transactions against `engine`, one step at a time.
pub fn run_interleaved(engine: &TxnEngine, spec: &InterleaveSpec) -> Result<InterleaveStats, TxnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let types = engine.store().schema().value_types();
    let mut live: Vec<Script> = Vec::new();
    let mut started = 0;
    let mut stats = InterleaveStats::default();
    let mut serial = 0i64;

    loop {
        while live.len() < spec.concurrency.max(1) && started < spec.transactions {
            let mut steps = Vec::with_capacity(spec.ops_per_txn + 1);
            for _ in 0..spec.ops_per_txn {
                let key = rng.random_range(0..spec.keys.max(1));
                if rng.random_bool(spec.write_fraction) {
                    steps.push(Step::Read(key));
                    serial += 1;
                    let values = if rng.random_bool(spec.delete_fraction) {
                        None
                    } else {
                        Some(synth_values(&types, serial))
                    };
                    steps.push(Step::Write(key, values));
                } else {
                    steps.push(Step::Read(key));
                }
            }
            steps.push(Step::Commit);
            live.push(Script { handle: engine.begin(), steps: steps.into_iter() });
            started += 1;
        }
        if live.is_empty() {
            break;
        }
        let pick = rng.random_range(0..live.len());
        let script = &mut live[pick];
        match script.steps.next().unwrap_or(Step::Commit) {
            Step::Read(key) => {
                engine.txn_read(&mut script.handle, key)?;
            }
            Step::Write(key, values) => engine.txn_write(&mut script.handle, key, values)?,
            Step::Commit => {
                let read_only = script.handle.is_read_only();
                match engine.commit(&mut script.handle) {
                    Ok(_) if read_only => stats.read_only += 1,
                    Ok(_) => stats.committed += 1,
                    Err(TxnError::WriteWriteConflict { .. }) => stats.aborted += 1,
                    Err(e) => return Err(e),
                }
                live.swap_remove(pick);
            }
        }
    }
    Ok(stats)
}
