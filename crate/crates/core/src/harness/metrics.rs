use std::io::Write;

use serde::Serialize;

use super::Mode;

/// One run's results. Field order is the CSV column order. Raw counts sit
/// next to the derived rates so every rate can be recomputed from the row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub seed: u64,
    pub duration_s: f64,
    pub txn_clients: usize,
    pub analytical_clients: usize,
    pub txn_commits: u64,
    pub txn_read_only: u64,
    pub txn_aborts: u64,
    pub txn_throughput: f64,
    pub queries_completed: u64,
    pub analytical_throughput: f64,
    pub lag_mean_ts: f64,
    pub lag_max_ts: u64,
    pub lag_mean_records: f64,
    pub lag_max_records: usize,
    pub lag_final_ts: u64,
    pub batches_applied: usize,
    pub records_applied: usize,
    pub max_batch_span_ts: u64,
    pub steals: usize,
    pub served_cpu_ops: f64,
    pub served_pim_ops: f64,
    pub served_vault_bytes: f64,
    pub served_link_bytes: f64,
    pub served_offchip_bytes: f64,
    pub txn_offchip_bytes: f64,
    pub analytics_offchip_bytes: f64,
    pub analytics_internal_bytes: f64,
    pub analytics_link_bytes: f64,
    pub propagation_offchip_bytes: f64,
    pub propagation_internal_bytes: f64,
    pub energy_cpu_ops: f64,
    pub energy_pim_ops: f64,
    pub energy_offchip_bytes: f64,
    pub energy_internal_bytes: f64,
    pub energy_cpu_pj: f64,
    pub energy_pim_pj: f64,
    pub energy_offchip_pj: f64,
    pub energy_internal_pj: f64,
    pub energy_total_pj: f64,
    pub util_cpu: f64,
    pub util_pim: f64,
    pub util_vault: f64,
    pub util_link: f64,
    pub util_offchip: f64,
}

/// Header line of `metrics.csv`.
pub fn csv_header() -> Vec<&'static str> {
    vec![
        "mode",
        "seed",
        "duration_s",
        "txn_clients",
        "analytical_clients",
        "txn_commits",
        "txn_read_only",
        "txn_aborts",
        "txn_throughput",
        "queries_completed",
        "analytical_throughput",
        "lag_mean_ts",
        "lag_max_ts",
        "lag_mean_records",
        "lag_max_records",
        "lag_final_ts",
        "batches_applied",
        "records_applied",
        "max_batch_span_ts",
        "steals",
        "served_cpu_ops",
        "served_pim_ops",
        "served_vault_bytes",
        "served_link_bytes",
        "served_offchip_bytes",
        "txn_offchip_bytes",
        "analytics_offchip_bytes",
        "analytics_internal_bytes",
        "analytics_link_bytes",
        "propagation_offchip_bytes",
        "propagation_internal_bytes",
        "energy_cpu_ops",
        "energy_pim_ops",
        "energy_offchip_bytes",
        "energy_internal_bytes",
        "energy_cpu_pj",
        "energy_pim_pj",
        "energy_offchip_pj",
        "energy_internal_pj",
        "energy_total_pj",
        "util_cpu",
        "util_pim",
        "util_vault",
        "util_link",
        "util_offchip",
    ]
}

/// Writes a header and one row per report. An empty slice yields the header
/// alone.
pub fn write_csv<W: Write>(out: W, reports: &[MetricsReport]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(csv_header())?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(reports: &[MetricsReport]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, reports).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}
