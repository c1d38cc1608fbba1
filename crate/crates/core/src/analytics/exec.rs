use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::plan::coerce_constant;
use super::{AggOp, CmpOp, PlanError, QueryPlan};
use crate::hw::{CoreId, TaskDemand};
use crate::storage::{ColumnType, RowScan, RowStore, SnapshotHandle, TableSchema, Timestamp, Value};

/// Modeled cost of scanning. Columnar scans read only the referenced columns;
/// row-store scans read whole versions and pay a visibility check on each.
/// Every stored row is billed as `data_scale` modeled rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanCost {
    pub ops_per_row: f64,
    pub mvcc_check_ops: f64,
    pub version_header_bytes: f64,
    pub hash_ops_per_row: f64,
    pub data_scale: f64,
}

impl Default for ScanCost {
    fn default() -> Self {
        ScanCost {
            ops_per_row: 1.0,
            mvcc_check_ops: 12.0,
            version_header_bytes: 16.0,
            hash_ops_per_row: 4.0,
            data_scale: 1.0,
        }
    }
}

/// A snapshot of one table, split into chunks with a home vault each.
pub trait ChunkSource {
    fn schema(&self) -> &TableSchema;
    fn snapshot_ts(&self) -> Timestamp;
    fn chunk_count(&self) -> usize;
    fn home_vault(&self, chunk: usize) -> usize;
    /// Visible `(key, value columns)` of one chunk, in scan order.
    fn chunk_rows(&self, chunk: usize) -> Vec<(i64, Vec<Value>)>;
    /// `(compute_ops, bytes)` to scan one chunk reading `columns`
    /// (indices into the full schema).
    fn scan_cost(&self, chunk: usize, columns: &[usize], cost: &ScanCost) -> (f64, f64);
}

/// Pinned column-store snapshot.
pub struct ColumnSource<'a> {
    schema: &'a TableSchema,
    handle: SnapshotHandle,
}

impl<'a> ColumnSource<'a> {
    pub fn new(schema: &'a TableSchema, handle: SnapshotHandle) -> Self {
        ColumnSource { schema, handle }
    }

    pub fn handle(&self) -> &SnapshotHandle {
        &self.handle
    }
}

impl ChunkSource for ColumnSource<'_> {
    fn schema(&self) -> &TableSchema {
        self.schema
    }

    fn snapshot_ts(&self) -> Timestamp {
        self.handle.snapshot_ts()
    }

    fn chunk_count(&self) -> usize {
        self.handle.chunk_count()
    }

    fn home_vault(&self, chunk: usize) -> usize {
        self.handle.chunk(chunk).map_or(0, |c| c.vault_id)
    }

    fn chunk_rows(&self, chunk: usize) -> Vec<(i64, Vec<Value>)> {
        self.handle.chunk_scan(chunk).collect()
    }

    fn scan_cost(&self, chunk: usize, columns: &[usize], cost: &ScanCost) -> (f64, f64) {
        let slots = self.handle.chunk(chunk).map_or(0, |c| c.slots()) as f64 * cost.data_scale;
        let width: usize = columns.iter().map(|&c| self.schema.columns[c].ty.width()).sum();
        (slots * cost.ops_per_row, slots * width.max(1) as f64)
    }
}

/// Row-store snapshot split by the same hash placement as the column store.
pub struct RowSource {
    schema: TableSchema,
    snapshot_ts: Timestamp,
    chunks: Vec<RowScan>,
    placement: Vec<usize>,
}

impl RowSource {
    pub fn new(store: &RowStore, ts: Timestamp, placement: Vec<usize>) -> Self {
        RowSource {
            schema: store.schema().clone(),
            snapshot_ts: ts,
            chunks: store.scan_chunks_at(ts, placement.len()),
            placement,
        }
    }

    pub fn versions_visited(&self) -> usize {
        self.chunks.iter().map(|c| c.versions_visited).sum()
    }
}

impl ChunkSource for RowSource {
    fn schema(&self) -> &TableSchema {
        &self.schema
    }

    fn snapshot_ts(&self) -> Timestamp {
        self.snapshot_ts
    }

    fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    fn home_vault(&self, chunk: usize) -> usize {
        self.placement.get(chunk).copied().unwrap_or(0)
    }

    fn chunk_rows(&self, chunk: usize) -> Vec<(i64, Vec<Value>)> {
        self.chunks[chunk].rows.clone()
    }

    fn scan_cost(&self, chunk: usize, _columns: &[usize], cost: &ScanCost) -> (f64, f64) {
        let versions = self.chunks[chunk].versions_visited as f64 * cost.data_scale;
        let bytes = versions * (self.schema.row_bytes() as f64 + cost.version_header_bytes);
        (versions * (cost.ops_per_row + cost.mvcc_check_ops), bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TaskPhase {
    Build,
    Probe,
}

/// Work for one chunk of one query. Bytes are placement-neutral until the
/// task is bound to a core with [`ChunkTask::demand_on`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkTask {
    pub chunk_id: usize,
    pub vault_id: usize,
    pub phase: TaskPhase,
    pub compute_ops: f64,
    pub bytes: f64,
}

impl ChunkTask {
    /// Home PIM core: bytes on the home vault. Other PIM core: home vault
    /// plus the shared link. CPU core: off-chip.
    pub fn demand_on(&self, core: CoreId) -> TaskDemand {
        match core {
            CoreId::Cpu(_) => TaskDemand::offchip(self.compute_ops, self.bytes),
            CoreId::Pim { vault, .. } => {
                let mut d = TaskDemand::vault(self.compute_ops, self.vault_id, self.bytes);
                if vault != self.vault_id {
                    d.link_bytes = self.bytes;
                }
                d
            }
        }
    }
}

/// Merging partials after the chunk tasks, plus any join broadcast.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ReduceBill {
    pub compute_ops: f64,
    pub bytes: f64,
}

/// Rows sorted ascending; for aggregates, one row per group (group key
/// columns first).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub snapshot_ts: Timestamp,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryExecution {
    pub result: QueryResult,
    pub tasks: Vec<ChunkTask>,
    pub reduce: ReduceBill,
}

// Output name, full-row index, type.
struct Layout {
    names: Vec<(String, usize)>,
    display: Vec<String>,
    types: Vec<ColumnType>,
    probe_width: usize,
}

impl Layout {
    fn new(probe: &TableSchema, build: Option<&TableSchema>) -> Self {
        let mut names = Vec::new();
        let mut display = Vec::new();
        let mut types = Vec::new();
        for (i, c) in probe.columns.iter().enumerate() {
            names.push((c.name.clone(), i));
            names.push((format!("{}.{}", probe.table_name, c.name), i));
            display.push(c.name.clone());
            types.push(c.ty);
        }
        let probe_width = probe.columns.len();
        if let Some(b) = build {
            for (i, c) in b.columns.iter().enumerate() {
                let qualified = format!("{}.{}", b.table_name, c.name);
                if probe.column_index(&c.name).is_none() {
                    names.push((c.name.clone(), probe_width + i));
                }
                names.push((qualified.clone(), probe_width + i));
                display.push(qualified);
                types.push(c.ty);
            }
        }
        Layout { names, display, types, probe_width }
    }

    fn resolve(&self, name: &str) -> Result<usize, PlanError> {
        self.names
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, i)| i)
            .ok_or_else(|| PlanError::UnknownColumn(name.to_string()))
    }
}

#[derive(Debug, Clone)]
enum AggState {
    SumInt(i64),
    SumFloat(f64),
    Count(i64),
    Min(Option<Value>),
    Max(Option<Value>),
    Avg(f64, i64),
}

impl AggState {
    fn new(op: AggOp, ty: ColumnType) -> Self {
        match (op, ty) {
            (AggOp::Sum, ColumnType::Int) => AggState::SumInt(0),
            (AggOp::Sum, _) => AggState::SumFloat(0.0),
            (AggOp::Count, _) => AggState::Count(0),
            (AggOp::Min, _) => AggState::Min(None),
            (AggOp::Max, _) => AggState::Max(None),
            (AggOp::Avg, _) => AggState::Avg(0.0, 0),
        }
    }

    fn update(&mut self, v: Option<&Value>) {
        match self {
            AggState::SumInt(s) => *s = s.wrapping_add(v.and_then(Value::as_int).unwrap_or(0)),
            AggState::SumFloat(s) => *s += v.and_then(Value::as_f64).unwrap_or(0.0),
            AggState::Count(n) => *n += 1,
            AggState::Min(m) => {
                if let Some(v) = v {
                    if m.as_ref().is_none_or(|cur| v < cur) {
                        *m = Some(v.clone());
                    }
                }
            }
            AggState::Max(m) => {
                if let Some(v) = v {
                    if m.as_ref().is_none_or(|cur| v > cur) {
                        *m = Some(v.clone());
                    }
                }
            }
            AggState::Avg(s, n) => {
                *s += v.and_then(Value::as_f64).unwrap_or(0.0);
                *n += 1;
            }
        }
    }

    fn merge(&mut self, other: &AggState) {
        match (self, other) {
            (AggState::SumInt(a), AggState::SumInt(b)) => *a = a.wrapping_add(*b),
            (AggState::SumFloat(a), AggState::SumFloat(b)) => *a += b,
            (AggState::Count(a), AggState::Count(b)) => *a += b,
            (AggState::Min(a), AggState::Min(Some(b))) => {
                if a.as_ref().is_none_or(|cur| b < cur) {
                    *a = Some(b.clone());
                }
            }
            (AggState::Max(a), AggState::Max(Some(b))) => {
                if a.as_ref().is_none_or(|cur| b > cur) {
                    *a = Some(b.clone());
                }
            }
            (AggState::Avg(s, n), AggState::Avg(t, m)) => {
                *s += t;
                *n += m;
            }
            _ => {}
        }
    }

    fn finish(&self) -> Value {
        match self {
            AggState::SumInt(s) => Value::Int(*s),
            AggState::SumFloat(s) => Value::Float(*s),
            AggState::Count(n) => Value::Int(*n),
            AggState::Min(m) | AggState::Max(m) => m.clone().unwrap_or(Value::Int(0)),
            AggState::Avg(s, n) => Value::Float(*s / *n as f64),
        }
    }
}

struct Compiled {
    layout: Layout,
    preds: Vec<(usize, CmpOp, Value)>,
    groups: Vec<usize>,
    aggs: Vec<(AggOp, Option<usize>, ColumnType)>,
    join: Option<(usize, usize)>,
    probe_cols: Vec<usize>,
    build_cols: Vec<usize>,
}

fn compile(plan: &QueryPlan, probe: &TableSchema, build: Option<&TableSchema>) -> Result<Compiled, PlanError> {
    if plan.table != probe.table_name {
        return Err(PlanError::UnknownTable(plan.table.clone()));
    }
    let build = match (&plan.join, build) {
        (Some(j), Some(b)) if b.table_name == j.build_table => Some(b),
        (Some(j), _) => return Err(PlanError::UnknownTable(j.build_table.clone())),
        (None, _) => None,
    };
    let layout = Layout::new(probe, build);
    let mut used = Vec::new();

    let mut preds = Vec::new();
    for p in &plan.predicates {
        let idx = layout.resolve(&p.column)?;
        let ty = layout.types[idx];
        let value = coerce_constant(&p.value, ty)
            .ok_or_else(|| PlanError::TypeMismatch(format!("{} is {ty}, constant {}", p.column, p.value)))?;
        preds.push((idx, p.op, value));
        used.push(idx);
    }
    let mut groups = Vec::new();
    for g in &plan.group_by {
        let idx = layout.resolve(g)?;
        groups.push(idx);
        used.push(idx);
    }
    let mut aggs = Vec::new();
    for a in &plan.aggregates {
        let (idx, ty) = match &a.column {
            Some(c) => {
                let idx = layout.resolve(c)?;
                used.push(idx);
                (Some(idx), layout.types[idx])
            }
            None if a.op == AggOp::Count => (None, ColumnType::Int),
            None => return Err(PlanError::TypeMismatch(format!("{a} needs a column"))),
        };
        if matches!(a.op, AggOp::Sum | AggOp::Avg) && matches!(ty, ColumnType::Bytes(_)) {
            return Err(PlanError::TypeMismatch(format!("{a} over {ty}")));
        }
        aggs.push((a.op, idx, ty));
    }
    let join = match (&plan.join, build) {
        (Some(j), Some(b)) => {
            let p = probe.column_index(&j.probe_column).ok_or_else(|| PlanError::UnknownColumn(j.probe_column.clone()))?;
            let bi = b.column_index(&j.build_column).ok_or_else(|| PlanError::UnknownColumn(j.build_column.clone()))?;
            let (pt, bt) = (probe.columns[p].ty, b.columns[bi].ty);
            if pt != bt {
                return Err(PlanError::TypeMismatch(format!("join {pt} with {bt}")));
            }
            used.push(p);
            used.push(layout.probe_width + bi);
            Some((p, bi))
        }
        _ => None,
    };
    if !plan.is_aggregate() {
        used.extend(0..layout.types.len());
    }
    used.sort_unstable();
    used.dedup();
    let (probe_cols, build_cols): (Vec<usize>, Vec<usize>) = used.iter().partition(|&&i| i < layout.probe_width);
    let build_cols = build_cols.into_iter().map(|i| i - layout.probe_width).collect();
    Ok(Compiled { layout, preds, groups, aggs, join, probe_cols, build_cols })
}

fn row_width(types: &[ColumnType], cols: impl IntoIterator<Item = usize>) -> usize {
    cols.into_iter().map(|c| types[c].width()).sum()
}

/// Runs `plan` against pinned snapshots, chunk by chunk. Partials are
/// reduced in ascending chunk order; within a chunk, rows are visited in
/// scan order. `build` is required when the plan joins.
pub fn execute(
    plan: &QueryPlan,
    probe: &dyn ChunkSource,
    build: Option<&dyn ChunkSource>,
    cost: &ScanCost,
) -> Result<QueryExecution, PlanError> {
    let c = compile(plan, probe.schema(), build.map(|b| b.schema()))?;
    let mut tasks = Vec::new();
    let mut reduce = ReduceBill::default();

    let mut table: HashMap<Value, Vec<Vec<Value>>> = HashMap::new();
    if let (Some((_, bcol)), Some(b)) = (c.join, build) {
        let schema = b.schema();
        let mut built = 0usize;
        for chunk in 0..b.chunk_count() {
            let rows = b.chunk_rows(chunk);
            let (ops, bytes) = b.scan_cost(chunk, &c.build_cols, cost);
            tasks.push(ChunkTask {
                chunk_id: chunk,
                vault_id: b.home_vault(chunk),
                phase: TaskPhase::Build,
                compute_ops: ops + rows.len() as f64 * cost.hash_ops_per_row * cost.data_scale,
                bytes,
            });
            for (key, values) in rows {
                let full = schema.full_row(key, &values);
                table.entry(full[bcol].clone()).or_default().push(full);
                built += 1;
            }
        }
        let bt: Vec<ColumnType> = schema.columns.iter().map(|c| c.ty).collect();
        reduce.bytes += (built * row_width(&bt, c.build_cols.iter().copied())) as f64;
    }

    let schema = probe.schema();
    let mut plain: Vec<Vec<Value>> = Vec::new();
    let mut groups: BTreeMap<Vec<Value>, Vec<AggState>> = BTreeMap::new();
    let mut partials = 0usize;
    for chunk in 0..probe.chunk_count() {
        let rows = probe.chunk_rows(chunk);
        let (mut ops, bytes) = probe.scan_cost(chunk, &c.probe_cols, cost);
        if c.join.is_some() {
            ops += rows.len() as f64 * cost.hash_ops_per_row * cost.data_scale;
        }
        tasks.push(ChunkTask { chunk_id: chunk, vault_id: probe.home_vault(chunk), phase: TaskPhase::Probe, compute_ops: ops, bytes });

        let mut local: BTreeMap<Vec<Value>, Vec<AggState>> = BTreeMap::new();
        let mut visit = |row: Vec<Value>| {
            if !c.preds.iter().all(|(i, op, v)| op.eval(&row[*i], v)) {
                return;
            }
            if !plan.is_aggregate() {
                plain.push(row);
                return;
            }
            let key: Vec<Value> = c.groups.iter().map(|&i| row[i].clone()).collect();
            let states = local
                .entry(key)
                .or_insert_with(|| c.aggs.iter().map(|&(op, _, ty)| AggState::new(op, ty)).collect());
            for (state, &(_, idx, _)) in states.iter_mut().zip(&c.aggs) {
                state.update(idx.map(|i| &row[i]));
            }
        };
        for (key, values) in rows {
            let full = schema.full_row(key, &values);
            match c.join {
                Some((pcol, _)) => {
                    if let Some(matches) = table.get(&full[pcol]) {
                        for b in matches {
                            let mut joined = full.clone();
                            joined.extend(b.iter().cloned());
                            visit(joined);
                        }
                    }
                }
                None => visit(full),
            }
        }
        partials += local.len();
        for (key, states) in local {
            match groups.get_mut(&key) {
                Some(acc) => acc.iter_mut().zip(&states).for_each(|(a, s)| a.merge(s)),
                None => {
                    groups.insert(key, states);
                }
            }
        }
    }

    let result = if plan.is_aggregate() {
        let partial_width = row_width(&c.layout.types, c.groups.iter().copied()) + 8 * c.aggs.len();
        reduce.compute_ops += (partials * c.aggs.len().max(1)) as f64;
        reduce.bytes += (partials * partial_width) as f64;
        let mut columns: Vec<String> = plan.group_by.clone();
        columns.extend(plan.aggregates.iter().map(|a| a.to_string()));
        let rows = groups
            .into_iter()
            .map(|(mut key, states)| {
                key.extend(states.iter().map(AggState::finish));
                key
            })
            .collect();
        QueryResult { snapshot_ts: probe.snapshot_ts(), columns, rows }
    } else {
        reduce.compute_ops += plain.len() as f64;
        reduce.bytes += (plain.len() * row_width(&c.layout.types, 0..c.layout.types.len())) as f64;
        plain.sort();
        QueryResult { snapshot_ts: probe.snapshot_ts(), columns: c.layout.display.clone(), rows: plain }
    };
    Ok(QueryExecution { result, tasks, reduce })
}

/// Inner equi-join of `probe.probe_col = build.build_col`, all columns.
pub fn hash_join(
    build: &dyn ChunkSource,
    build_col: &str,
    probe: &dyn ChunkSource,
    probe_col: &str,
) -> Result<QueryResult, PlanError> {
    let plan = QueryPlan::scan(probe.schema().table_name.clone()).join(
        &build.schema().table_name,
        probe_col,
        build_col,
    );
    Ok(execute(&plan, probe, Some(build), &ScanCost::default())?.result)
}
