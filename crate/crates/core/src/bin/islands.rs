use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use islands::harness::{
    isolation_csv, run, run_isolation_suite, sweep, to_csv_string, validate_config, Config, ConfigError, HarnessError,
    MetricsReport,
};

#[derive(Parser)]
#[command(name = "islands", version, about = "HTAP island engine on modeled hardware")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write metrics.csv and commitlog.jsonl.
    Run(Common),
    /// Txn-only, analytics-only and combined runs for every mode.
    Isolation(Common),
    /// One run per value of a config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Config key, `section.key` or an unambiguous bare key.
        #[arg(long)]
        param: String,
        /// Comma-separated values; empty for a header-only CSV.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Run the invariant checks only.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Config file.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// shared, dual_shared or islands.
    #[arg(long)]
    mode: Option<String>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Common {
    fn load(&self) -> Result<Config, HarnessError> {
        let mut cfg = Config::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.workload.seed = seed;
        }
        if let Some(mode) = &self.mode {
            cfg.set("workload.mode", mode)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Field {
                field: kv.clone(),
                message: "expected KEY=VALUE".into(),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, name: &str, body: &str) -> Result<(), HarnessError> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| HarnessError::Engine(format!("{}: {e}", dir.display())))?;
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| HarnessError::Engine(format!("{}: {e}", path.display())))
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn metrics_body(reports: &[MetricsReport], format: Format) -> (String, &'static str) {
    match format {
        Format::Csv => (to_csv_string(reports), "metrics.csv"),
        Format::Json => (serde_json::to_string_pretty(reports).expect("metrics serialize") + "\n", "metrics.json"),
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.load()?;
            let output = run(&cfg)?;
            let (body, name) = metrics_body(std::slice::from_ref(&output.metrics), c.format);
            emit(c.out.as_deref(), name, &body)?;
            if let Some(dir) = &c.out {
                emit(Some(dir), "commitlog.jsonl", &output.commit_log_jsonl())?;
            }
        }
        Command::Isolation(c) => {
            let rows = run_isolation_suite(&c.load()?)?;
            let body = match c.format {
                Format::Csv => isolation_csv(&rows),
                Format::Json => serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n",
            };
            let name = if c.format == Format::Csv { "isolation.csv" } else { "isolation.json" };
            emit(c.out.as_deref(), name, &body)?;
        }
        Command::Sweep { common, param, values } => {
            let reports = sweep(&common.load()?, &param, &values)?;
            let (body, name) = metrics_body(&reports, common.format);
            emit(common.out.as_deref(), name, &body)?;
        }
        Command::Validate(c) => {
            for s in validate_config(&c.load()?)? {
                eprintln!("{}: ok ({} commits, {} queries checked)", s.mode, s.commits, s.queries_checked);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
