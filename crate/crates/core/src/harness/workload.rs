//! Seeded transaction streams. Each client draws from its own ChaCha stream,
//! so a client's actions do not depend on how the loop interleaves clients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::Serialize;

use super::{Config, KeyDist};
use crate::storage::{ColumnType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TxnKind {
    ReadOnly,
    ReadModifyWrite,
    Insert,
    Delete,
}

/// One transaction. `writes` pairs keys with new values (`None` deletes);
/// `reads` are performed first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TxnAction {
    pub kind: TxnKind,
    pub reads: Vec<i64>,
    pub writes: Vec<(i64, Option<Vec<Value>>)>,
}

enum KeySampler {
    Uniform(i64),
    Zipf(Zipf<f64>),
}

impl KeySampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> i64 {
        match self {
            KeySampler::Uniform(n) => rng.random_range(0..*n),
            // ranks are 1-based; rank 1 is the hottest key
            KeySampler::Zipf(z) => z.sample(rng) as i64 - 1,
        }
    }
}

/// Value columns drawn for a fresh or rewritten row.
pub fn random_values(cfg: &Config, rng: &mut impl Rng) -> Vec<Value> {
    cfg.table
        .value_specs()
        .iter()
        .map(|c| match c.ty {
            ColumnType::Int => Value::Int(rng.random_range(0..c.domain)),
            // quarter steps keep float sums exact
            ColumnType::Float => Value::Float(rng.random_range(0..4 * c.domain) as f64 * 0.25),
            ColumnType::Bytes(w) => Value::Bytes((0..w).map(|_| rng.random::<u8>()).collect()),
        })
        .collect()
}

/// Initial table contents: keys `0..rows`.
pub fn initial_rows(cfg: &Config) -> Vec<(i64, Vec<Value>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.workload.seed ^ 0x5eed_7ab1e);
    (0..cfg.table.rows as i64).map(|k| (k, random_values(cfg, &mut rng))).collect()
}

/// Transaction stream of one client.
pub struct WorkloadGen {
    cfg: Config,
    rng: ChaCha8Rng,
    keys: KeySampler,
    stream: usize,
    streams: usize,
    inserted: i64,
}

impl WorkloadGen {
    pub fn new(cfg: &Config, stream: usize) -> Self {
        let rows = cfg.table.rows.max(1);
        let keys = match cfg.workload.key_dist {
            KeyDist::Uniform => KeySampler::Uniform(rows as i64),
            KeyDist::Zipfian(theta) => KeySampler::Zipf(Zipf::new(rows as f64, theta).expect("validated exponent")),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.workload.seed);
        rng.set_stream(stream as u64 + 1);
        WorkloadGen { cfg: cfg.clone(), rng, keys, stream, streams: cfg.workload.txn_clients.max(1), inserted: 0 }
    }

    pub fn sample_key(&mut self) -> i64 {
        self.keys.sample(&mut self.rng)
    }

    pub fn next_action(&mut self) -> TxnAction {
        let m = self.cfg.workload.mix;
        let n = self.cfg.workload.ops_per_txn;
        let u: f64 = self.rng.random();
        let kind = if u < m.read_only {
            TxnKind::ReadOnly
        } else if u < m.read_only + m.read_modify_write {
            TxnKind::ReadModifyWrite
        } else if u < m.read_only + m.read_modify_write + m.insert {
            TxnKind::Insert
        } else {
            TxnKind::Delete
        };
        let mut reads: Vec<i64> = (0..n).map(|_| self.sample_key()).collect();
        let writes = match kind {
            TxnKind::ReadOnly => Vec::new(),
            TxnKind::ReadModifyWrite => {
                reads.iter().map(|&k| (k, Some(random_values(&self.cfg, &mut self.rng)))).collect()
            }
            TxnKind::Insert => {
                // fresh keys above the initial range, disjoint across clients
                let key = self.cfg.table.rows as i64 + self.stream as i64 + self.inserted * self.streams as i64;
                self.inserted += 1;
                reads.pop();
                vec![(key, Some(random_values(&self.cfg, &mut self.rng)))]
            }
            TxnKind::Delete => {
                let key = reads.pop().unwrap_or(0);
                vec![(key, None)]
            }
        };
        TxnAction { kind, reads, writes }
    }
}

impl Iterator for WorkloadGen {
    type Item = TxnAction;

    fn next(&mut self) -> Option<TxnAction> {
        Some(self.next_action())
    }
}

/// The action stream of client 0.
pub fn generate_workload(cfg: &Config) -> WorkloadGen {
    WorkloadGen::new(cfg, 0)
}
