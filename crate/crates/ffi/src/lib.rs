//! C ABI over the `islands` engine.
//!
//! Every function returns an [`IslandsStatus`]. On failure the message is
//! available from [`islands_last_error`] on the same thread until the next
//! failing call. Handles are opaque and must be released with their `_free`
//! function; strings returned through `char **` are released with
//! [`islands_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use islands::analytics::{execute, QueryPlan, RowSource, ScanCost};
use islands::harness::{self, Config, ConfigError, HarnessError, MetricsReport};
use islands::storage::{ColumnType, RowStore, TableSchema, Value};
use islands::txn::{CommitOutcome, TxnEngine, TxnError, TxnHandle, TxnState};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IslandsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Plan = 4,
    Conflict = 5,
    TxnNotActive = 6,
    TypeMismatch = 7,
    NotFound = 8,
    Invariant = 9,
    Engine = 10,
    Panic = 11,
}

/// Headline numbers of one run. The full report is available as CSV from
/// [`islands_run_csv`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IslandsMetrics {
    pub duration_s: f64,
    pub txn_commits: u64,
    pub txn_aborts: u64,
    pub txn_throughput: f64,
    pub queries_completed: u64,
    pub analytical_throughput: f64,
    pub lag_mean_ts: f64,
    pub lag_max_ts: u64,
    pub analytics_offchip_bytes: f64,
    pub energy_total_pj: f64,
}

impl From<&MetricsReport> for IslandsMetrics {
    fn from(m: &MetricsReport) -> Self {
        IslandsMetrics {
            duration_s: m.duration_s,
            txn_commits: m.txn_commits,
            txn_aborts: m.txn_aborts,
            txn_throughput: m.txn_throughput,
            queries_completed: m.queries_completed,
            analytical_throughput: m.analytical_throughput,
            lag_mean_ts: m.lag_mean_ts,
            lag_max_ts: m.lag_max_ts,
            analytics_offchip_bytes: m.analytics_offchip_bytes,
            energy_total_pj: m.energy_total_pj,
        }
    }
}

/// Opaque run configuration.
pub struct IslandsConfig {
    inner: Config,
}

/// Opaque row store plus transaction engine, loaded with a config's initial
/// table.
pub struct IslandsDb {
    engine: Arc<TxnEngine>,
}

/// Opaque transaction. Keeps its database alive.
pub struct IslandsTxn {
    engine: Arc<TxnEngine>,
    handle: TxnHandle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(IslandsStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: IslandsStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure(IslandsStatus::Config, e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let status = match e {
            HarnessError::Config(_) => IslandsStatus::Config,
            HarnessError::Invariant(_) => IslandsStatus::Invariant,
            _ => IslandsStatus::Engine,
        };
        Failure(status, e.to_string())
    }
}

impl From<TxnError> for Failure {
    fn from(e: TxnError) -> Self {
        let status = match e {
            TxnError::WriteWriteConflict { .. } => IslandsStatus::Conflict,
            TxnError::TxnNotActive(_) => IslandsStatus::TxnNotActive,
            TxnError::Storage(islands::storage::StorageError::TypeMismatch(_)) => IslandsStatus::TypeMismatch,
            _ => IslandsStatus::Engine,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> IslandsStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Failure(IslandsStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => IslandsStatus::Ok,
        Err(Failure(status, msg)) => {
            let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
            LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
            status
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(IslandsStatus::NullArgument, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(IslandsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().map_or_else(|| fail(IslandsStatus::NullArgument, format!("{what} is null")), Ok)
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().map_or_else(|| fail(IslandsStatus::NullArgument, format!("{what} is null")), Ok)
}

fn out_string(out: &mut *mut c_char, s: String) {
    *out = CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw();
}

/// Message of the last failure on this thread, or null. Owned by the library;
/// valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn islands_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn islands_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_config_default(out: *mut *mut IslandsConfig) -> IslandsStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        *out = Box::into_raw(Box::new(IslandsConfig { inner: Config::default() }));
        Ok(())
    })
}

/// Parses config file text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_config_parse(text: *const c_char, out: *mut *mut IslandsConfig) -> IslandsStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = mut_arg(out, "out")?;
        let inner = Config::parse(text)?;
        *out = Box::into_raw(Box::new(IslandsConfig { inner }));
        Ok(())
    })
}

/// Sets one key (`section.key` or an unambiguous bare key). The config is
/// left unchanged on failure.
///
/// # Safety
/// `cfg` must be a live config handle; `key` and `value` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn islands_config_set(
    cfg: *mut IslandsConfig,
    key: *const c_char,
    value: *const c_char,
) -> IslandsStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        let (key, value) = (str_arg(key, "key")?, str_arg(value, "value")?);
        let mut next = cfg.inner.clone();
        next.set(key, value)?;
        next.validate()?;
        cfg.inner = next;
        Ok(())
    })
}

/// Config as file text.
///
/// # Safety
/// `cfg` must be a live config handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_config_to_text(cfg: *const IslandsConfig, out: *mut *mut c_char) -> IslandsStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        out_string(mut_arg(out, "out")?, cfg.inner.to_text());
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a config handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn islands_config_free(cfg: *mut IslandsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured workload and fills `out`.
///
/// # Safety
/// `cfg` must be a live config handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_run(cfg: *const IslandsConfig, out: *mut IslandsMetrics) -> IslandsStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let out = mut_arg(out, "out")?;
        *out = IslandsMetrics::from(&harness::run(&cfg.inner)?.metrics);
        Ok(())
    })
}

/// Runs the configured workload; `out` receives `metrics.csv` contents.
///
/// # Safety
/// `cfg` must be a live config handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_run_csv(cfg: *const IslandsConfig, out: *mut *mut c_char) -> IslandsStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let out = mut_arg(out, "out")?;
        let report = harness::run(&cfg.inner)?.metrics;
        out_string(out, harness::to_csv_string(&[report]));
        Ok(())
    })
}

/// Opens a database holding the config's initial table.
///
/// # Safety
/// `cfg` must be a live config handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_db_open(cfg: *const IslandsConfig, out: *mut *mut IslandsDb) -> IslandsStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let out = mut_arg(out, "out")?;
        let store = RowStore::new(cfg.inner.table.schema()?);
        store
            .load_initial(harness::initial_rows(&cfg.inner))
            .or_else(|e| fail(IslandsStatus::Engine, e.to_string()))?;
        let engine = TxnEngine::new(Arc::new(store)).with_cost_model(cfg.inner.cost.txn);
        *out = Box::into_raw(Box::new(IslandsDb { engine: Arc::new(engine) }));
        Ok(())
    })
}

/// # Safety
/// `db` must be null or a database handle not yet freed. Open transactions
/// stay usable.
#[no_mangle]
pub unsafe extern "C" fn islands_db_free(db: *mut IslandsDb) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}

/// Newest commit timestamp.
///
/// # Safety
/// `db` must be a live database handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_db_latest_ts(db: *const IslandsDb, out: *mut u64) -> IslandsStatus {
    guard(|| {
        let db = ref_arg(db, "db")?;
        *mut_arg(out, "out")? = db.engine.latest_commit_ts().0;
        Ok(())
    })
}

/// Evaluates a textual plan against the latest committed state; `out`
/// receives CSV with a header row.
///
/// # Safety
/// `db` must be a live database handle; `plan` NUL-terminated; `out` valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_db_query(
    db: *const IslandsDb,
    plan: *const c_char,
    out: *mut *mut c_char,
) -> IslandsStatus {
    guard(|| {
        let db = ref_arg(db, "db")?;
        let plan: QueryPlan = str_arg(plan, "plan")?.parse().or_else(|e: islands::analytics::PlanError| {
            fail(IslandsStatus::Plan, e.to_string())
        })?;
        let out = mut_arg(out, "out")?;
        let src = RowSource::new(db.engine.store(), db.engine.latest_commit_ts(), vec![0]);
        let build = plan.join.as_ref().map(|_| &src as &dyn islands::analytics::ChunkSource);
        let exec = execute(&plan, &src, build, &ScanCost::default())
            .or_else(|e| fail(IslandsStatus::Plan, e.to_string()))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let write = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
            w.write_record(&exec.result.columns)?;
            for row in &exec.result.rows {
                w.write_record(row.iter().map(Value::to_string))?;
            }
            w.flush()?;
            Ok(())
        };
        write(&mut w).or_else(|e| fail(IslandsStatus::Engine, e.to_string()))?;
        let bytes = w.into_inner().or_else(|e| fail(IslandsStatus::Engine, e.to_string()))?;
        out_string(out, String::from_utf8_lossy(&bytes).into_owned());
        Ok(())
    })
}

/// Starts a snapshot-isolated transaction.
///
/// # Safety
/// `db` must be a live database handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_txn_begin(db: *const IslandsDb, out: *mut *mut IslandsTxn) -> IslandsStatus {
    guard(|| {
        let db = ref_arg(db, "db")?;
        let out = mut_arg(out, "out")?;
        let handle = db.engine.begin();
        *out = Box::into_raw(Box::new(IslandsTxn { engine: db.engine.clone(), handle }));
        Ok(())
    })
}

fn value_slot(schema: &TableSchema, column: &str, ty: ColumnType) -> FfiResult<usize> {
    let idx = schema
        .column_index(column)
        .map_or_else(|| fail(IslandsStatus::NotFound, format!("no column {column:?}")), Ok)?;
    let slot = schema
        .value_slot(idx)
        .map_or_else(|| fail(IslandsStatus::TypeMismatch, format!("{column:?} is the key column")), Ok)?;
    if schema.columns[idx].ty != ty {
        return fail(IslandsStatus::TypeMismatch, format!("{column:?} is {:?}", schema.columns[idx].ty));
    }
    Ok(slot)
}

fn read_value(txn: &mut IslandsTxn, key: i64, column: &str, ty: ColumnType) -> FfiResult<Value> {
    let slot = value_slot(txn.engine.store().schema(), column, ty)?;
    match txn.engine.txn_read(&mut txn.handle, key)? {
        Some(values) => Ok(values[slot].clone()),
        None => fail(IslandsStatus::NotFound, format!("key {key} not visible")),
    }
}

// Absent rows start from zero values so single-column puts can insert.
fn write_value(txn: &mut IslandsTxn, key: i64, column: &str, v: Value) -> FfiResult<()> {
    let schema = txn.engine.store().schema().clone();
    let slot = value_slot(&schema, column, v.column_type())?;
    let mut values = match txn.engine.txn_read(&mut txn.handle, key)? {
        Some(values) => values,
        None => schema
            .value_types()
            .into_iter()
            .map(|t| match t {
                ColumnType::Int => Value::Int(0),
                ColumnType::Float => Value::Float(0.0),
                ColumnType::Bytes(w) => Value::Bytes(vec![0; w].into()),
            })
            .collect(),
    };
    values[slot] = v;
    txn.engine.txn_write(&mut txn.handle, key, Some(values))?;
    Ok(())
}

/// # Safety
/// `txn` must be a live transaction; `column` NUL-terminated; `out` valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_txn_get_int(
    txn: *mut IslandsTxn,
    key: i64,
    column: *const c_char,
    out: *mut i64,
) -> IslandsStatus {
    guard(|| {
        let txn = mut_arg(txn, "txn")?;
        let column = str_arg(column, "column")?;
        let out = mut_arg(out, "out")?;
        *out = read_value(txn, key, column, ColumnType::Int)?.as_int().unwrap_or_default();
        Ok(())
    })
}

/// # Safety
/// As [`islands_txn_get_int`].
#[no_mangle]
pub unsafe extern "C" fn islands_txn_get_float(
    txn: *mut IslandsTxn,
    key: i64,
    column: *const c_char,
    out: *mut f64,
) -> IslandsStatus {
    guard(|| {
        let txn = mut_arg(txn, "txn")?;
        let column = str_arg(column, "column")?;
        let out = mut_arg(out, "out")?;
        *out = read_value(txn, key, column, ColumnType::Float)?.as_f64().unwrap_or_default();
        Ok(())
    })
}

/// Buffers a write of one int column. An absent key is inserted with zeroed
/// values.
///
/// # Safety
/// `txn` must be a live transaction; `column` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn islands_txn_put_int(
    txn: *mut IslandsTxn,
    key: i64,
    column: *const c_char,
    value: i64,
) -> IslandsStatus {
    guard(|| {
        let txn = mut_arg(txn, "txn")?;
        write_value(txn, key, str_arg(column, "column")?, Value::Int(value))
    })
}

/// # Safety
/// As [`islands_txn_put_int`].
#[no_mangle]
pub unsafe extern "C" fn islands_txn_put_float(
    txn: *mut IslandsTxn,
    key: i64,
    column: *const c_char,
    value: f64,
) -> IslandsStatus {
    guard(|| {
        let txn = mut_arg(txn, "txn")?;
        write_value(txn, key, str_arg(column, "column")?, Value::Float(value))
    })
}

/// # Safety
/// `txn` must be a live transaction.
#[no_mangle]
pub unsafe extern "C" fn islands_txn_delete(txn: *mut IslandsTxn, key: i64) -> IslandsStatus {
    guard(|| {
        let txn = mut_arg(txn, "txn")?;
        txn.engine.txn_write(&mut txn.handle, key, None)?;
        Ok(())
    })
}

/// Commits. `commit_ts` receives the commit timestamp, or 0 for a read-only
/// transaction. On [`IslandsStatus::Conflict`] the transaction is aborted.
/// The handle must still be freed.
///
/// # Safety
/// `txn` must be a live transaction; `commit_ts` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn islands_txn_commit(txn: *mut IslandsTxn, commit_ts: *mut u64) -> IslandsStatus {
    guard(|| {
        let txn = mut_arg(txn, "txn")?;
        let ts = match txn.engine.commit(&mut txn.handle)? {
            CommitOutcome::ReadOnly => 0,
            CommitOutcome::Committed(ts) => ts.0,
        };
        if let Some(out) = commit_ts.as_mut() {
            *out = ts;
        }
        Ok(())
    })
}

/// # Safety
/// `txn` must be a live transaction.
#[no_mangle]
pub unsafe extern "C" fn islands_txn_abort(txn: *mut IslandsTxn) -> IslandsStatus {
    guard(|| {
        let txn = mut_arg(txn, "txn")?;
        txn.engine.abort(&mut txn.handle)?;
        Ok(())
    })
}

/// Releases a transaction; an active one is aborted first.
///
/// # Safety
/// `txn` must be null or a transaction handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn islands_txn_free(txn: *mut IslandsTxn) {
    if txn.is_null() {
        return;
    }
    let mut txn = Box::from_raw(txn);
    if txn.handle.state() == TxnState::Active {
        let _ = txn.engine.abort(&mut txn.handle);
    }
}
