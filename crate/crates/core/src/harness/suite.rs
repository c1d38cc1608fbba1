use std::collections::BTreeMap;

use serde::Serialize;

use super::run::{run, run_with, HarnessError, RunOptions};
use super::{Config, MetricsReport, Mode};
use crate::analytics::{execute, RowSource};
use crate::storage::{RowStore, Timestamp};
use crate::txn::replay_to;

/// Throughput of each side alone and together, for one mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsolationRow {
    pub mode: Mode,
    pub txn_alone: f64,
    pub txn_together: f64,
    pub txn_retention: f64,
    pub analytics_alone: f64,
    pub analytics_together: f64,
    pub analytics_retention: f64,
}

fn retention(together: f64, alone: f64) -> f64 {
    if alone > 0.0 {
        together / alone
    } else {
        0.0
    }
}

/// Runs txn-only, analytics-only and combined cells for one mode.
pub fn isolation_row(cfg: &Config, mode: Mode) -> Result<IsolationRow, HarnessError> {
    let mut base = cfg.clone();
    base.workload.mode = mode;
    let mut txn_only = base.clone();
    txn_only.workload.analytical_clients = 0;
    let mut an_only = base.clone();
    an_only.workload.txn_clients = 0;
    let t = run(&txn_only)?.metrics;
    let a = run(&an_only)?.metrics;
    let both = run(&base)?.metrics;
    Ok(IsolationRow {
        mode,
        txn_alone: t.txn_throughput,
        txn_together: both.txn_throughput,
        txn_retention: retention(both.txn_throughput, t.txn_throughput),
        analytics_alone: a.analytical_throughput,
        analytics_together: both.analytical_throughput,
        analytics_retention: retention(both.analytical_throughput, a.analytical_throughput),
    })
}

/// One [`IsolationRow`] per mode.
pub fn run_isolation_suite(cfg: &Config) -> Result<Vec<IsolationRow>, HarnessError> {
    Mode::ALL.iter().map(|&m| isolation_row(cfg, m)).collect()
}

pub fn isolation_csv(rows: &[IsolationRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "mode",
        "txn_alone",
        "txn_together",
        "txn_retention",
        "analytics_alone",
        "analytics_together",
        "analytics_retention",
    ])
    .expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// One run per value of `param`.
pub fn sweep(cfg: &Config, param: &str, values: &[String]) -> Result<Vec<MetricsReport>, HarnessError> {
    Config::resolve_key(param)?;
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        let mut c = cfg.clone();
        c.set(param, v)?;
        c.validate()?;
        out.push(run(&c)?.metrics);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub mode: Mode,
    pub commits: u64,
    pub queries_checked: usize,
}

/// Runs `cfg` in every mode with end-of-run checks on, and re-evaluates each
/// query against the state rebuilt from the commit log at its snapshot.
pub fn validate_config(cfg: &Config) -> Result<Vec<ValidationSummary>, HarnessError> {
    let mut out = Vec::new();
    for mode in Mode::ALL {
        let mut c = cfg.clone();
        c.workload.mode = mode;
        let opts = RunOptions { check_invariants: true, record_queries: true };
        let result = run_with(&c, opts)?;
        let initial: BTreeMap<_, _> = result.initial.iter().cloned().collect();
        let schema = c.table.schema()?;
        for q in &result.queries {
            let state = replay_to(&initial, &result.commit_log, q.result.snapshot_ts);
            let store = RowStore::new(schema.clone());
            store.load_initial(state).map_err(|e| HarnessError::Engine(e.to_string()))?;
            let src = RowSource::new(&store, Timestamp::ZERO, vec![0]);
            let plan = &c.workload.plans[q.plan];
            let build = plan.join.as_ref().map(|_| &src as &dyn crate::analytics::ChunkSource);
            let expect = execute(plan, &src, build, &c.cost.scan).map_err(|e| HarnessError::Engine(e.to_string()))?;
            if expect.result.rows != q.result.rows {
                return Err(HarnessError::Invariant(format!(
                    "{mode}: query {} at snapshot {} disagrees with the replayed state",
                    q.plan, q.result.snapshot_ts
                )));
            }
        }
        out.push(ValidationSummary { mode, commits: result.metrics.txn_commits, queries_checked: result.queries.len() });
    }
    Ok(out)
}
