//! Workloads, execution modes, metrics and the experiment suites behind the
//! command line.

mod config;
mod metrics;
mod run;
mod suite;
mod workload;

pub use config::{parse_columns, ColumnSpec, Config, ConfigError, CostConfig, KeyDist, Mode, TableSpec, TxnMix, WorkloadConfig};
pub use metrics::{csv_header, to_csv_string, write_csv, MetricsReport};
pub use run::{run, run_with, HarnessError, QueryRecord, RunOptions, RunOutput};
pub use suite::{isolation_csv, isolation_row, run_isolation_suite, sweep, validate_config, IsolationRow, ValidationSummary};
pub use workload::{generate_workload, initial_rows, random_values, TxnAction, TxnKind, WorkloadGen};
