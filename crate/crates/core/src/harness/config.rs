//! Flat `key = value` config with `[section]` headers. Every key has a
//! default; `#` starts a comment. `plan = ...` may repeat.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::analytics::{QueryPlan, ScanCost, SchedulerMode};
use crate::hw::HardwareConfig;
use crate::propagation::{ApplyCost, BatchingPolicy};
use crate::storage::{ColumnDef, ColumnType, TableSchema};
use crate::txn::TxnCostModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Shared,
    DualShared,
    Islands,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Shared, Mode::DualShared, Mode::Islands];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Shared => "shared",
            Mode::DualShared => "dual_shared",
            Mode::Islands => "islands",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shared" => Ok(Mode::Shared),
            "dual_shared" => Ok(Mode::DualShared),
            "islands" => Ok(Mode::Islands),
            other => Err(format!("unknown mode {other:?} (shared, dual_shared, islands)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum KeyDist {
    Uniform,
    Zipfian(f64),
}

impl fmt::Display for KeyDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyDist::Uniform => f.write_str("uniform"),
            KeyDist::Zipfian(t) => write!(f, "zipfian({t})"),
        }
    }
}

impl FromStr for KeyDist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "uniform" {
            return Ok(KeyDist::Uniform);
        }
        let theta = s
            .strip_prefix("zipfian(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("expected uniform or zipfian(theta), got {s:?}"))?;
        let t: f64 = theta.parse().map_err(|_| format!("bad zipf exponent {theta:?}"))?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(format!("zipf exponent must be positive, got {t}"));
        }
        Ok(KeyDist::Zipfian(t))
    }
}

/// Fractions of each transaction kind. Must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TxnMix {
    pub read_only: f64,
    pub read_modify_write: f64,
    pub insert: f64,
    pub delete: f64,
}

impl Default for TxnMix {
    fn default() -> Self {
        TxnMix { read_only: 0.2, read_modify_write: 0.7, insert: 0.1, delete: 0.0 }
    }
}

/// One column of the generated table. `domain` bounds generated integers
/// to `0..domain`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSpec {
    pub name: String,
    pub ty: ColumnType,
    pub domain: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableSpec {
    pub name: String,
    pub key: String,
    pub columns: Vec<ColumnSpec>,
    pub rows: usize,
    /// 0 derives one chunk per vault.
    pub chunk_count: usize,
    pub chunk_capacity: usize,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec {
            name: "orders".into(),
            key: "id".into(),
            columns: parse_columns("id:int, region:int:16, amount:int:1000, price:float, payload:bytes(32)").unwrap(),
            rows: 8192,
            chunk_count: 64,
            chunk_capacity: 1024,
        }
    }
}

impl TableSpec {
    pub fn schema(&self) -> Result<TableSchema, ConfigError> {
        let key = self
            .columns
            .iter()
            .position(|c| c.name == self.key)
            .ok_or_else(|| field_err("table.key", format!("no column named {:?}", self.key)))?;
        let cols = self.columns.iter().map(|c| ColumnDef { name: c.name.clone(), ty: c.ty }).collect();
        TableSchema::new(self.name.clone(), cols, key).map_err(|e| field_err("table.columns", e.to_string()))
    }

    /// Value columns in schema order (key excluded).
    pub fn value_specs(&self) -> Vec<&ColumnSpec> {
        self.columns.iter().filter(|c| c.name != self.key).collect()
    }

    fn columns_text(&self) -> String {
        let parts: Vec<String> = self
            .columns
            .iter()
            .map(|c| match c.ty {
                ColumnType::Int if c.domain != DEFAULT_DOMAIN => format!("{}:int:{}", c.name, c.domain),
                ColumnType::Int => format!("{}:int", c.name),
                ColumnType::Float => format!("{}:float", c.name),
                ColumnType::Bytes(w) => format!("{}:bytes({w})", c.name),
            })
            .collect();
        parts.join(", ")
    }
}

const DEFAULT_DOMAIN: i64 = 1000;

/// `name:int[:domain]`, `name:float`, `name:bytes(width)`, comma separated.
pub fn parse_columns(s: &str) -> Result<Vec<ColumnSpec>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let mut it = part.splitn(3, ':');
        let name = it.next().unwrap_or_default().to_string();
        let ty = it.next().ok_or_else(|| format!("column {part:?} has no type"))?;
        let extra = it.next();
        let (ty, domain) = match ty {
            "int" => {
                let d = match extra {
                    Some(d) => d.parse::<i64>().map_err(|_| format!("bad domain in {part:?}"))?,
                    None => DEFAULT_DOMAIN,
                };
                if d <= 0 {
                    return Err(format!("domain must be positive in {part:?}"));
                }
                (ColumnType::Int, d)
            }
            "float" => (ColumnType::Float, DEFAULT_DOMAIN),
            t => {
                let w = t
                    .strip_prefix("bytes(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|w| w.parse::<usize>().ok())
                    .ok_or_else(|| format!("unknown column type in {part:?}"))?;
                (ColumnType::Bytes(w), DEFAULT_DOMAIN)
            }
        };
        if extra.is_some() && ty != ColumnType::Int {
            return Err(format!("only int columns take a domain: {part:?}"));
        }
        out.push(ColumnSpec { name, ty, domain });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Modeled seconds.
    pub duration: f64,
    pub txn_clients: usize,
    pub analytical_clients: usize,
    pub key_dist: KeyDist,
    pub mix: TxnMix,
    pub ops_per_txn: usize,
    /// Stop issuing transactions after this many; 0 is unlimited.
    pub max_txns: usize,
    /// Stop issuing queries after this many; 0 is unlimited.
    pub max_queries: usize,
    pub plans: Vec<QueryPlan>,
    pub scheduler: SchedulerMode,
    pub propagation: BatchingPolicy,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            seed: 42,
            mode: Mode::Islands,
            duration: 0.01,
            txn_clients: 8,
            analytical_clients: 4,
            key_dist: KeyDist::Zipfian(0.99),
            mix: TxnMix::default(),
            ops_per_txn: 4,
            max_txns: 0,
            max_queries: 0,
            plans: vec![
                "scan table=orders where amount>500 group_by=region agg=sum(amount),count()".parse().unwrap(),
                "scan table=orders where region<4 agg=avg(price),max(amount)".parse().unwrap(),
            ],
            scheduler: SchedulerMode::LocalityFirst,
            propagation: BatchingPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostConfig {
    pub txn: TxnCostModel,
    pub scan: ScanCost,
    pub apply: ApplyCost,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            txn: TxnCostModel::default(),
            scan: ScanCost { data_scale: 64.0, ..ScanCost::default() },
            apply: ApplyCost::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Config {
    pub workload: WorkloadConfig,
    pub table: TableSpec,
    pub hardware: HardwareConfig,
    pub cost: CostConfig,
}

// section, key
const KEYS: &[(&str, &str)] = &[
    ("workload", "seed"),
    ("workload", "mode"),
    ("workload", "duration"),
    ("workload", "txn_clients"),
    ("workload", "analytical_clients"),
    ("workload", "key_dist"),
    ("workload", "read_only"),
    ("workload", "read_modify_write"),
    ("workload", "insert"),
    ("workload", "delete"),
    ("workload", "ops_per_txn"),
    ("workload", "max_txns"),
    ("workload", "max_queries"),
    ("workload", "plan"),
    ("workload", "scheduler"),
    ("table", "name"),
    ("table", "key"),
    ("table", "columns"),
    ("table", "rows"),
    ("table", "chunk_count"),
    ("table", "chunk_capacity"),
    ("propagation", "max_records"),
    ("propagation", "max_lag"),
    ("hardware", "n_cpu_cores"),
    ("hardware", "n_vaults"),
    ("hardware", "pim_cores_per_vault"),
    ("hardware", "vault_bw"),
    ("hardware", "internal_link_bw"),
    ("hardware", "offchip_bw"),
    ("hardware", "cpu_rate"),
    ("hardware", "pim_rate"),
    ("hardware", "energy_offchip"),
    ("hardware", "energy_internal"),
    ("hardware", "energy_cpu_op"),
    ("hardware", "energy_pim_op"),
    ("hardware", "txn_cache_hit_rate"),
    ("hardware", "epoch"),
    ("cost", "txn_ops_per_access"),
    ("cost", "txn_bytes_per_access"),
    ("cost", "scan_ops_per_row"),
    ("cost", "mvcc_check_ops"),
    ("cost", "version_header_bytes"),
    ("cost", "hash_ops_per_row"),
    ("cost", "data_scale"),
    ("cost", "apply_ops_per_row"),
    ("cost", "apply_ops_per_delta_op"),
];

fn num<T: FromStr>(field: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| field_err(field, format!("cannot parse {v:?}")))
}

impl Config {
    /// Every recognized key as `section.key`.
    pub fn keys() -> impl Iterator<Item = String> {
        KEYS.iter().map(|(s, k)| format!("{s}.{k}"))
    }

    /// Resolves `section.key` or an unambiguous bare `key`.
    pub fn resolve_key(key: &str) -> Result<(&'static str, &'static str), ConfigError> {
        let found: Vec<_> = match key.split_once('.') {
            Some((s, k)) => KEYS.iter().filter(|(ks, kk)| *ks == s && *kk == k).collect(),
            None => KEYS.iter().filter(|(_, kk)| *kk == key).collect(),
        };
        match found.as_slice() {
            [one] => Ok(**one),
            [] => Err(field_err(key, "unknown config key")),
            _ => Err(field_err(key, "ambiguous key; qualify it with its section")),
        }
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        let mut section = String::new();
        let mut plans = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, message: format!("expected key = value, got {line:?}") })?;
            let (k, v) = (k.trim(), v.trim());
            let full = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            if Config::resolve_key(&full)? == ("workload", "plan") {
                plans.push(v.parse::<QueryPlan>().map_err(|e| field_err("workload.plan", e.to_string()))?);
            } else {
                cfg.set(&full, v)?;
            }
        }
        if !plans.is_empty() {
            cfg.workload.plans = plans;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Sets one key. `workload.plan` replaces the plan list with one plan.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let (section, k) = Config::resolve_key(key)?;
        let f = &format!("{section}.{k}");
        let w = &mut self.workload;
        let t = &mut self.table;
        let h = &mut self.hardware;
        let c = &mut self.cost;
        match (section, k) {
            ("workload", "seed") => w.seed = num(f, v)?,
            ("workload", "mode") => w.mode = v.parse().map_err(|e: String| field_err(f, e))?,
            ("workload", "duration") => w.duration = num(f, v)?,
            ("workload", "txn_clients") => w.txn_clients = num(f, v)?,
            ("workload", "analytical_clients") => w.analytical_clients = num(f, v)?,
            ("workload", "key_dist") => w.key_dist = v.parse().map_err(|e: String| field_err(f, e))?,
            ("workload", "read_only") => w.mix.read_only = num(f, v)?,
            ("workload", "read_modify_write") => w.mix.read_modify_write = num(f, v)?,
            ("workload", "insert") => w.mix.insert = num(f, v)?,
            ("workload", "delete") => w.mix.delete = num(f, v)?,
            ("workload", "ops_per_txn") => w.ops_per_txn = num(f, v)?,
            ("workload", "max_txns") => w.max_txns = num(f, v)?,
            ("workload", "max_queries") => w.max_queries = num(f, v)?,
            ("workload", "plan") => w.plans = vec![v.parse().map_err(|e: crate::analytics::PlanError| field_err(f, e.to_string()))?],
            ("workload", "scheduler") => w.scheduler = v.parse().map_err(|e: String| field_err(f, e))?,
            ("table", "name") => t.name = v.to_string(),
            ("table", "key") => t.key = v.to_string(),
            ("table", "columns") => t.columns = parse_columns(v).map_err(|e| field_err(f, e))?,
            ("table", "rows") => t.rows = num(f, v)?,
            ("table", "chunk_count") => t.chunk_count = num(f, v)?,
            ("table", "chunk_capacity") => t.chunk_capacity = num(f, v)?,
            ("propagation", "max_records") => w.propagation.max_records = num(f, v)?,
            ("propagation", "max_lag") => w.propagation.max_lag = num(f, v)?,
            ("hardware", "n_cpu_cores") => h.n_cpu_cores = num(f, v)?,
            ("hardware", "n_vaults") => h.n_vaults = num(f, v)?,
            ("hardware", "pim_cores_per_vault") => h.pim_cores_per_vault = num(f, v)?,
            ("hardware", "vault_bw") => h.vault_bw = num(f, v)?,
            ("hardware", "internal_link_bw") => h.internal_link_bw = num(f, v)?,
            ("hardware", "offchip_bw") => h.offchip_bw = num(f, v)?,
            ("hardware", "cpu_rate") => h.cpu_rate = num(f, v)?,
            ("hardware", "pim_rate") => h.pim_rate = num(f, v)?,
            ("hardware", "energy_offchip") => h.energy_offchip = num(f, v)?,
            ("hardware", "energy_internal") => h.energy_internal = num(f, v)?,
            ("hardware", "energy_cpu_op") => h.energy_cpu_op = num(f, v)?,
            ("hardware", "energy_pim_op") => h.energy_pim_op = num(f, v)?,
            ("hardware", "txn_cache_hit_rate") => h.txn_cache_hit_rate = num(f, v)?,
            ("hardware", "epoch") => h.epoch = num(f, v)?,
            ("cost", "txn_ops_per_access") => c.txn.ops_per_access = num(f, v)?,
            ("cost", "txn_bytes_per_access") => c.txn.bytes_per_access = num(f, v)?,
            ("cost", "scan_ops_per_row") => c.scan.ops_per_row = num(f, v)?,
            ("cost", "mvcc_check_ops") => c.scan.mvcc_check_ops = num(f, v)?,
            ("cost", "version_header_bytes") => c.scan.version_header_bytes = num(f, v)?,
            ("cost", "hash_ops_per_row") => c.scan.hash_ops_per_row = num(f, v)?,
            ("cost", "data_scale") => c.scan.data_scale = num(f, v)?,
            ("cost", "apply_ops_per_row") => c.apply.ops_per_row_copied = num(f, v)?,
            ("cost", "apply_ops_per_delta_op") => c.apply.ops_per_delta_op = num(f, v)?,
            _ => unreachable!("key table and setter disagree on {f}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = &self.workload;
        if !(w.duration > 0.0 && w.duration.is_finite()) {
            return Err(field_err("workload.duration", "must be positive"));
        }
        let m = w.mix;
        let parts = [m.read_only, m.read_modify_write, m.insert, m.delete];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(field_err("workload.mix", "fractions must lie in [0, 1]"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(field_err("workload.mix", "read_only + read_modify_write + insert + delete must sum to 1"));
        }
        if w.ops_per_txn == 0 {
            return Err(field_err("workload.ops_per_txn", "must be positive"));
        }
        if w.analytical_clients > 0 && w.plans.is_empty() {
            return Err(field_err("workload.plan", "analytical clients need at least one plan"));
        }
        if w.propagation.max_records == 0 {
            return Err(field_err("propagation.max_records", "must be positive"));
        }
        if self.table.rows == 0 {
            return Err(field_err("table.rows", "must be positive"));
        }
        if self.table.chunk_capacity == 0 {
            return Err(field_err("table.chunk_capacity", "must be positive"));
        }
        let schema = self.table.schema()?;
        if schema.columns[schema.key_column].ty != ColumnType::Int {
            return Err(field_err("table.key", "key column must be int"));
        }
        for plan in &w.plans {
            if plan.table != schema.table_name {
                return Err(field_err("workload.plan", format!("unknown table {:?}", plan.table)));
            }
            if let Some(j) = &plan.join {
                if j.build_table != schema.table_name {
                    return Err(field_err("workload.plan", format!("joins must be self-joins, got {:?}", j.build_table)));
                }
            }
        }
        self.hardware.validate().map_err(|e| field_err("hardware", e.to_string()))?;
        let c = &self.cost;
        let costs = [
            ("cost.txn_ops_per_access", c.txn.ops_per_access),
            ("cost.txn_bytes_per_access", c.txn.bytes_per_access),
            ("cost.scan_ops_per_row", c.scan.ops_per_row),
            ("cost.mvcc_check_ops", c.scan.mvcc_check_ops),
            ("cost.version_header_bytes", c.scan.version_header_bytes),
            ("cost.hash_ops_per_row", c.scan.hash_ops_per_row),
            ("cost.data_scale", c.scan.data_scale),
            ("cost.apply_ops_per_row", c.apply.ops_per_row_copied),
            ("cost.apply_ops_per_delta_op", c.apply.ops_per_delta_op),
        ];
        for (name, v) in costs {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(field_err(name, "must be a non-negative number"));
            }
        }
        Ok(())
    }

    pub fn chunk_count(&self) -> usize {
        if self.table.chunk_count == 0 {
            self.hardware.n_vaults
        } else {
            self.table.chunk_count
        }
    }

    /// The config as parseable text, every key spelled out.
    pub fn to_text(&self) -> String {
        let w = &self.workload;
        let t = &self.table;
        let h = &self.hardware;
        let c = &self.cost;
        let mut out = String::new();
        let mut put = |s: &str| {
            out.push_str(s);
            out.push('\n');
        };
        put("[workload]");
        put(&format!("seed = {}", w.seed));
        put(&format!("mode = {}", w.mode));
        put(&format!("duration = {}", w.duration));
        put(&format!("txn_clients = {}", w.txn_clients));
        put(&format!("analytical_clients = {}", w.analytical_clients));
        put(&format!("key_dist = {}", w.key_dist));
        put(&format!("read_only = {}", w.mix.read_only));
        put(&format!("read_modify_write = {}", w.mix.read_modify_write));
        put(&format!("insert = {}", w.mix.insert));
        put(&format!("delete = {}", w.mix.delete));
        put(&format!("ops_per_txn = {}", w.ops_per_txn));
        put(&format!("max_txns = {}", w.max_txns));
        put(&format!("max_queries = {}", w.max_queries));
        for p in &w.plans {
            put(&format!("plan = {p}"));
        }
        put(&format!(
            "scheduler = {}",
            match w.scheduler {
                SchedulerMode::LocalityFirst => "locality_first",
                SchedulerMode::NoSteal => "no_steal",
                SchedulerMode::Cpu => "cpu",
            }
        ));
        put("\n[table]");
        put(&format!("name = {}", t.name));
        put(&format!("key = {}", t.key));
        put(&format!("columns = {}", t.columns_text()));
        put(&format!("rows = {}", t.rows));
        put(&format!("chunk_count = {}", t.chunk_count));
        put(&format!("chunk_capacity = {}", t.chunk_capacity));
        put("\n[propagation]");
        put(&format!("max_records = {}", w.propagation.max_records));
        put(&format!("max_lag = {}", w.propagation.max_lag));
        put("\n[hardware]");
        put(&format!("n_cpu_cores = {}", h.n_cpu_cores));
        put(&format!("n_vaults = {}", h.n_vaults));
        put(&format!("pim_cores_per_vault = {}", h.pim_cores_per_vault));
        put(&format!("vault_bw = {:e}", h.vault_bw));
        put(&format!("internal_link_bw = {:e}", h.internal_link_bw));
        put(&format!("offchip_bw = {:e}", h.offchip_bw));
        put(&format!("cpu_rate = {:e}", h.cpu_rate));
        put(&format!("pim_rate = {:e}", h.pim_rate));
        put(&format!("energy_offchip = {}", h.energy_offchip));
        put(&format!("energy_internal = {}", h.energy_internal));
        put(&format!("energy_cpu_op = {}", h.energy_cpu_op));
        put(&format!("energy_pim_op = {}", h.energy_pim_op));
        put(&format!("txn_cache_hit_rate = {}", h.txn_cache_hit_rate));
        put(&format!("epoch = {:e}", h.epoch));
        put("\n[cost]");
        put(&format!("txn_ops_per_access = {}", c.txn.ops_per_access));
        put(&format!("txn_bytes_per_access = {}", c.txn.bytes_per_access));
        put(&format!("scan_ops_per_row = {}", c.scan.ops_per_row));
        put(&format!("mvcc_check_ops = {}", c.scan.mvcc_check_ops));
        put(&format!("version_header_bytes = {}", c.scan.version_header_bytes));
        put(&format!("hash_ops_per_row = {}", c.scan.hash_ops_per_row));
        put(&format!("data_scale = {}", c.scan.data_scale));
        put(&format!("apply_ops_per_row = {}", c.apply.ops_per_row_copied));
        put(&format!("apply_ops_per_delta_op = {}", c.apply.ops_per_delta_op));
        out
    }
}
