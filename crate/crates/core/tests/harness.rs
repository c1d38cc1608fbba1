use std::collections::BTreeMap;

use islands::analytics::{execute, ChunkSource, RowSource};
use islands::harness::{
    csv_header, generate_workload, isolation_row, run, run_isolation_suite, run_with, sweep, to_csv_string, Config,
    ConfigError, HarnessError, KeyDist, MetricsReport, Mode, RunOptions, TxnKind, WorkloadGen,
};
use islands::storage::{RowStore, Timestamp};
use islands::txn::replay_to;

fn small(mode: Mode) -> Config {
    let mut c = Config::default();
    c.workload.mode = mode;
    c.workload.duration = 0.002;
    c.table.rows = 1024;
    c.table.chunk_count = 16;
    c
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn workload_streams_are_deterministic() {
    let cfg = Config::default();
    let a: Vec<_> = generate_workload(&cfg).take(100).collect();
    let b: Vec<_> = generate_workload(&cfg).take(100).collect();
    assert_eq!(a, b);
    let other: Vec<_> = WorkloadGen::new(&cfg, 1).take(100).collect();
    assert_ne!(a, other);
}

#[test]
fn rmw_only_mix() {
    let mut cfg = Config::default();
    cfg.set("read_only", "0").unwrap();
    cfg.set("read_modify_write", "1").unwrap();
    cfg.set("insert", "0").unwrap();
    cfg.validate().unwrap();
    for a in generate_workload(&cfg).take(500) {
        assert_eq!(a.kind, TxnKind::ReadModifyWrite);
        assert_eq!(a.reads.len(), cfg.workload.ops_per_txn);
        assert_eq!(a.writes.len(), a.reads.len());
    }
}

#[test]
fn zipf_top_key_mass() {
    let mut cfg = Config::default();
    cfg.table.rows = 1000;
    cfg.workload.key_dist = KeyDist::Zipfian(0.99);
    let mut g = generate_workload(&cfg);
    let draws = 10_000;
    let mut counts = BTreeMap::new();
    for _ in 0..draws {
        let k = g.sample_key();
        assert!((0..1000).contains(&k));
        *counts.entry(k).or_insert(0usize) += 1;
    }
    let h: f64 = (1..=1000).map(|r| (r as f64).powf(-0.99)).sum();
    let expect = 1.0 / h;
    let got = counts[&0] as f64 / draws as f64;
    assert!((got - expect).abs() <= 0.2 * expect, "top-1 {got} vs {expect}");
    let hottest = counts.iter().max_by_key(|(k, c)| (**c, std::cmp::Reverse(**k))).unwrap().0;
    assert_eq!(*hottest, 0);
}

#[test]
fn config_errors_name_the_field() {
    let err = Config::parse("[workload]\nread_only = 0.5\n").unwrap_err();
    assert!(matches!(&err, ConfigError::Field { field, .. } if field == "workload.mix"), "{err}");
    let err = Config::parse("[workload]\nduration = 0\n").unwrap_err();
    assert!(matches!(&err, ConfigError::Field { field, .. } if field == "workload.duration"), "{err}");
    let err = Config::parse("bogus line\n").unwrap_err();
    assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
    assert!(Config::parse("[workload]\nnope = 1\n").is_err());
    let text = Config::default().to_text();
    assert_eq!(Config::parse(&text).unwrap(), Config::default());
    let shipped = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.conf")).unwrap();
    assert_eq!(Config::parse(&shipped).unwrap(), Config::default());
}

fn check_queries(cfg: &Config) -> (MetricsReport, usize) {
    let out = run_with(cfg, RunOptions { check_invariants: true, record_queries: true }).unwrap();
    let initial: BTreeMap<_, _> = out.initial.iter().cloned().collect();
    let schema = cfg.table.schema().unwrap();
    for q in &out.queries {
        let state = replay_to(&initial, &out.commit_log, q.result.snapshot_ts);
        let store = RowStore::new(schema.clone());
        store.load_initial(state).unwrap();
        let src = RowSource::new(&store, Timestamp(0), vec![0]);
        let plan = &cfg.workload.plans[q.plan];
        let build = plan.join.as_ref().map(|_| &src as &dyn ChunkSource);
        let expect = execute(plan, &src, build, &cfg.cost.scan).unwrap().result;
        assert_eq!(expect.rows, q.result.rows, "plan {} at {}", q.plan, q.result.snapshot_ts);
    }
    (out.metrics, out.queries.len())
}

#[test]
fn analytics_without_transactions() {
    for mode in Mode::ALL {
        let mut cfg = small(mode);
        cfg.workload.txn_clients = 0;
        let (m, n) = check_queries(&cfg);
        assert_eq!(m.txn_throughput, 0.0);
        assert_eq!(m.txn_commits, 0);
        assert!(n > 0 && m.queries_completed as usize == n, "{mode}");
    }
}

#[test]
fn queries_match_replay_under_load() {
    for mode in Mode::ALL {
        let mut cfg = small(mode);
        cfg.workload.plans.push("scan table=orders where amount<50 join=orders:region=region agg=count()".parse().unwrap());
        let (m, n) = check_queries(&cfg);
        assert!(m.txn_commits > 0 && n > 0, "{mode}");
    }
}

#[test]
fn idle_analytics_spend_nothing() {
    let mut cfg = small(Mode::Islands);
    cfg.workload.analytical_clients = 0;
    let m = run(&cfg).unwrap().metrics;
    assert_eq!(m.queries_completed, 0);
    assert_eq!(m.analytics_offchip_bytes, 0.0);
    assert_eq!(m.analytics_internal_bytes, 0.0);
    assert_eq!(m.analytics_link_bytes, 0.0);
    assert!(m.txn_commits > 0);
}

#[test]
fn runs_are_deterministic() {
    for mode in Mode::ALL {
        let cfg = small(mode);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.commit_log, b.commit_log);
        assert_eq!(to_csv_string(&[a.metrics]), to_csv_string(&[b.metrics]));
    }
}

#[test]
fn fixed_work_runs_issue_exactly_the_budget() {
    let mut cfg = small(Mode::Shared);
    cfg.workload.max_txns = 300;
    cfg.workload.max_queries = 3;
    let m = run(&cfg).unwrap().metrics;
    assert_eq!(m.txn_commits + m.txn_aborts, 300);
    assert_eq!(m.queries_completed, 3);
    assert_eq!(m.lag_final_ts, 0);

    cfg.workload.max_queries = 0;
    let m = run(&cfg).unwrap().metrics;
    assert_eq!(m.queries_completed, 0);
    assert_eq!(m.txn_commits + m.txn_aborts, 300);
}

#[test]
fn sweep_examples() {
    let cfg = small(Mode::Islands);
    let vals: Vec<String> = ["1", "2", "4"].iter().map(|s| s.to_string()).collect();
    let rows = sweep(&cfg, "analytical_clients", &vals).unwrap();
    assert_eq!(rows.iter().map(|r| r.analytical_clients).collect::<Vec<_>>(), vec![1, 2, 4]);
    let text = to_csv_string(&rows);
    assert_eq!(text.lines().count(), 4);

    let empty = sweep(&cfg, "analytical_clients", &[]).unwrap();
    assert_eq!(to_csv_string(&empty), format!("{}\n", csv_header().join(",")));

    assert!(matches!(sweep(&cfg, "no_such_key", &[]), Err(HarnessError::Config(_))));
    assert!(matches!(sweep(&cfg, "txn_clients", &["x".into()]), Err(HarnessError::Config(_))));

}

#[test]
fn lower_offchip_bandwidth_never_raises_shared_txn_throughput() {
    let shared = small(Mode::Shared);
    let bws: Vec<String> = ["64e9", "32e9", "16e9", "8e9", "4e9"].iter().map(|s| s.to_string()).collect();
    let rows = sweep(&shared, "offchip_bw", &bws).unwrap();
    let tput: Vec<f64> = rows.iter().map(|r| r.txn_throughput).collect();
    assert!(tput.windows(2).all(|w| w[1] <= w[0]), "txn throughput by bandwidth {bws:?}: {tput:?}");
}

#[test]
fn isolation_suite() {
    let cfg = Config::default();
    let rows = run_isolation_suite(&cfg).unwrap();
    assert_eq!(rows.iter().map(|r| r.mode).collect::<Vec<_>>(), Mode::ALL.to_vec());
    let by: BTreeMap<_, _> = rows.iter().map(|r| (r.mode, r)).collect();
    let (shared, islands) = (by[&Mode::Shared], by[&Mode::Islands]);
    assert!(islands.txn_retention >= 0.95, "{}", islands.txn_retention);
    assert!(shared.txn_retention < islands.txn_retention);
    assert!(shared.analytics_retention < islands.analytics_retention);

    // txn alone against itself
    let mut alone = cfg.clone();
    alone.workload.analytical_clients = 0;
    let r = isolation_row(&alone, Mode::Shared).unwrap();
    assert_eq!(r.txn_retention, 1.0);
}

#[test]
fn csv_header_matches_fields() {
    let m = run(&small(Mode::Islands)).unwrap().metrics;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(&m).unwrap();
    let auto = String::from_utf8(w.into_inner().unwrap()).unwrap();
    assert_eq!(auto.lines().next().unwrap(), csv_header().join(","));
    assert_eq!(to_csv_string(&[m]), auto);
}

#[test]
fn report_arithmetic_from_csv() {
    let cfg = small(Mode::DualShared);
    let hw = &cfg.hardware;
    let text = to_csv_string(&[run(&cfg).unwrap().metrics]);
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().unwrap().clone();
    let rec = rd.records().next().unwrap().unwrap();
    let get = |name: &str| -> f64 {
        let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("{name}"));
        rec[i].parse().unwrap()
    };
    let d = get("duration_s");
    assert!(d >= cfg.workload.duration);
    assert!(close(get("txn_throughput"), get("txn_commits") / d));
    assert!(close(get("analytical_throughput"), get("queries_completed") / d));
    assert!(close(get("energy_cpu_pj"), get("energy_cpu_ops") * hw.energy_cpu_op));
    assert!(close(get("energy_pim_pj"), get("energy_pim_ops") * hw.energy_pim_op));
    assert!(close(get("energy_offchip_pj"), get("energy_offchip_bytes") * hw.energy_offchip));
    assert!(close(get("energy_internal_pj"), get("energy_internal_bytes") * hw.energy_internal));
    let parts = ["energy_cpu_pj", "energy_pim_pj", "energy_offchip_pj", "energy_internal_pj"];
    assert!(close(get("energy_total_pj"), parts.iter().map(|p| get(p)).sum()));
    assert!(close(get("util_cpu"), get("served_cpu_ops") / (hw.n_cpu_cores as f64 * hw.cpu_rate * d)));
    assert!(close(get("util_offchip"), get("served_offchip_bytes") / (hw.offchip_bw * d)));
    assert!(close(get("util_vault"), get("served_vault_bytes") / (hw.n_vaults as f64 * hw.vault_bw * d)));
    for u in ["util_cpu", "util_pim", "util_vault", "util_link", "util_offchip"] {
        assert!((0.0..=1.0 + 1e-9).contains(&get(u)), "{u} = {}", get(u));
    }
    assert!(get("lag_max_ts") <= (cfg.workload.propagation.max_lag + get("max_batch_span_ts") as u64) as f64);
}
