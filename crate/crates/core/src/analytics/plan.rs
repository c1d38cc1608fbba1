//! Query plans and their one-line textual form:
//!
//! ```text
//! scan table=orders where amount>100,region!=3 group_by=region agg=sum(amount),count() join=items:item=id
//! ```

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::PlanError;
use crate::storage::{ColumnType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
    Ne,
}

impl CmpOp {
    pub fn eval(self, lhs: &Value, rhs: &Value) -> bool {
        let ord = lhs.cmp(rhs);
        match self {
            CmpOp::Lt => ord.is_lt(),
            CmpOp::Le => ord.is_le(),
            CmpOp::Eq => ord.is_eq(),
            CmpOp::Ge => ord.is_ge(),
            CmpOp::Gt => ord.is_gt(),
            CmpOp::Ne => ord.is_ne(),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predicate {
    pub column: String,
    pub op: CmpOp,
    pub value: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AggOp {
    Sum,
    Count,
    Min,
    Max,
    Avg,
}

impl AggOp {
    fn name(self) -> &'static str {
        match self {
            AggOp::Sum => "sum",
            AggOp::Count => "count",
            AggOp::Min => "min",
            AggOp::Max => "max",
            AggOp::Avg => "avg",
        }
    }
}

/// `count` takes an optional column; every other op needs one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub op: AggOp,
    pub column: Option<String>,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.op.name(), self.column.as_deref().unwrap_or(""))
    }
}

/// Inner equi-join of the plan's table (probe side) with `build_table`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinSpec {
    pub build_table: String,
    pub probe_column: String,
    pub build_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryPlan {
    pub table: String,
    pub predicates: Vec<Predicate>,
    pub group_by: Vec<String>,
    pub aggregates: Vec<Aggregate>,
    pub join: Option<JoinSpec>,
}

impl QueryPlan {
    pub fn scan(table: impl Into<String>) -> Self {
        QueryPlan { table: table.into(), predicates: Vec::new(), group_by: Vec::new(), aggregates: Vec::new(), join: None }
    }

    pub fn filter(mut self, column: &str, op: CmpOp, value: Value) -> Self {
        self.predicates.push(Predicate { column: column.into(), op, value });
        self
    }

    pub fn group_by(mut self, column: &str) -> Self {
        self.group_by.push(column.into());
        self
    }

    pub fn agg(mut self, op: AggOp, column: Option<&str>) -> Self {
        self.aggregates.push(Aggregate { op, column: column.map(Into::into) });
        self
    }

    pub fn join(mut self, build_table: &str, probe_column: &str, build_column: &str) -> Self {
        self.join = Some(JoinSpec {
            build_table: build_table.into(),
            probe_column: probe_column.into(),
            build_column: build_column.into(),
        });
        self
    }

    pub fn is_aggregate(&self) -> bool {
        !self.group_by.is_empty() || !self.aggregates.is_empty()
    }
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scan table={}", self.table)?;
        if !self.predicates.is_empty() {
            let preds: Vec<String> = self
                .predicates
                .iter()
                .map(|p| format!("{}{}{}", p.column, p.op.symbol(), p.value))
                .collect();
            write!(f, " where {}", preds.join(","))?;
        }
        if !self.group_by.is_empty() {
            write!(f, " group_by={}", self.group_by.join(","))?;
        }
        if !self.aggregates.is_empty() {
            let aggs: Vec<String> = self.aggregates.iter().map(|a| a.to_string()).collect();
            write!(f, " agg={}", aggs.join(","))?;
        }
        if let Some(j) = &self.join {
            write!(f, " join={}:{}={}", j.build_table, j.probe_column, j.build_column)?;
        }
        Ok(())
    }
}

fn parse_err(msg: impl Into<String>) -> PlanError {
    PlanError::Parse(msg.into())
}

fn ident(s: &str) -> Result<String, PlanError> {
    let ok = !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    if ok {
        Ok(s.to_string())
    } else {
        Err(parse_err(format!("bad identifier {s:?}")))
    }
}

/// Integer, float, or `0x`-prefixed hex bytes.
pub fn parse_literal(s: &str) -> Result<Value, PlanError> {
    if let Some(hex) = s.strip_prefix("0x") {
        if hex.len() % 2 != 0 {
            return Err(parse_err(format!("odd-length hex literal {s:?}")));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<Result<Vec<u8>, _>>()
            .map_err(|_| parse_err(format!("bad hex literal {s:?}")))?;
        return Ok(Value::Bytes(bytes.into()));
    }
    if let Ok(i) = s.parse::<i64>() {
        return Ok(Value::Int(i));
    }
    s.parse::<f64>().map(Value::Float).map_err(|_| parse_err(format!("bad literal {s:?}")))
}

fn parse_predicate(s: &str) -> Result<Predicate, PlanError> {
    const OPS: [(&str, CmpOp); 9] = [
        ("<=", CmpOp::Le),
        (">=", CmpOp::Ge),
        ("!=", CmpOp::Ne),
        ("≤", CmpOp::Le),
        ("≥", CmpOp::Ge),
        ("≠", CmpOp::Ne),
        ("<", CmpOp::Lt),
        (">", CmpOp::Gt),
        ("=", CmpOp::Eq),
    ];
    let (pos, sym, op) = OPS
        .iter()
        .filter_map(|&(sym, op)| s.find(sym).map(|p| (p, sym, op)))
        .min_by_key(|&(p, sym, _)| (p, usize::MAX - sym.len()))
        .ok_or_else(|| parse_err(format!("no comparator in {s:?}")))?;
    Ok(Predicate {
        column: ident(&s[..pos])?,
        op,
        value: parse_literal(&s[pos + sym.len()..])?,
    })
}

fn parse_aggregate(s: &str) -> Result<Aggregate, PlanError> {
    let open = s.find('(').ok_or_else(|| parse_err(format!("bad aggregate {s:?}")))?;
    let inner = s[open + 1..].strip_suffix(')').ok_or_else(|| parse_err(format!("bad aggregate {s:?}")))?;
    let op = match &s[..open] {
        "sum" => AggOp::Sum,
        "count" => AggOp::Count,
        "min" => AggOp::Min,
        "max" => AggOp::Max,
        "avg" => AggOp::Avg,
        other => return Err(parse_err(format!("unknown aggregate {other:?}"))),
    };
    let column = if inner.is_empty() { None } else { Some(ident(inner)?) };
    if column.is_none() && op != AggOp::Count {
        return Err(parse_err(format!("{}() needs a column", op.name())));
    }
    Ok(Aggregate { op, column })
}

// Splits on commas outside parentheses.
fn split_list(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

impl FromStr for QueryPlan {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, PlanError> {
        let mut tokens = s.split_whitespace();
        if tokens.next() != Some("scan") {
            return Err(parse_err("plan must start with `scan`"));
        }
        let mut plan = QueryPlan::scan("");
        while let Some(tok) = tokens.next() {
            if tok == "where" {
                let list = tokens.next().ok_or_else(|| parse_err("`where` without predicates"))?;
                for p in split_list(list) {
                    plan.predicates.push(parse_predicate(p)?);
                }
                continue;
            }
            let (key, val) = tok.split_once('=').ok_or_else(|| parse_err(format!("unexpected token {tok:?}")))?;
            match key {
                "table" => plan.table = ident(val)?,
                "group_by" => {
                    for c in split_list(val) {
                        plan.group_by.push(ident(c)?);
                    }
                }
                "agg" => {
                    for a in split_list(val) {
                        plan.aggregates.push(parse_aggregate(a)?);
                    }
                }
                "join" => {
                    let (table, cols) =
                        val.split_once(':').ok_or_else(|| parse_err(format!("bad join {val:?}")))?;
                    let (probe, build) =
                        cols.split_once('=').ok_or_else(|| parse_err(format!("bad join {val:?}")))?;
                    plan.join = Some(JoinSpec {
                        build_table: ident(table)?,
                        probe_column: ident(probe)?,
                        build_column: ident(build)?,
                    });
                }
                other => return Err(parse_err(format!("unknown clause {other:?}"))),
            }
        }
        if plan.table.is_empty() {
            return Err(parse_err("missing table="));
        }
        Ok(plan)
    }
}

/// Whether a constant may be compared against a column of type `ty`, after
/// widening integers to floats for float columns.
pub(crate) fn coerce_constant(value: &Value, ty: ColumnType) -> Option<Value> {
    match (value, ty) {
        (Value::Int(i), ColumnType::Int) => Some(Value::Int(*i)),
        (Value::Int(i), ColumnType::Float) => Some(Value::Float(*i as f64)),
        (Value::Float(x), ColumnType::Float) => Some(Value::Float(*x)),
        (Value::Bytes(b), ColumnType::Bytes(w)) if b.len() == w => Some(Value::Bytes(b.clone())),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_example() {
        let p: QueryPlan = "scan table=orders where amount>100 group_by=region agg=sum(amount),count()"
            .parse()
            .unwrap();
        assert_eq!(
            p,
            QueryPlan::scan("orders")
                .filter("amount", CmpOp::Gt, Value::Int(100))
                .group_by("region")
                .agg(AggOp::Sum, Some("amount"))
                .agg(AggOp::Count, None)
        );
    }

    #[test]
    fn comparators() {
        for (s, op) in [
            ("a<1", CmpOp::Lt),
            ("a<=1", CmpOp::Le),
            ("a=1", CmpOp::Eq),
            ("a>=1", CmpOp::Ge),
            ("a>1", CmpOp::Gt),
            ("a!=1", CmpOp::Ne),
            ("a≤1", CmpOp::Le),
            ("a≠1", CmpOp::Ne),
        ] {
            assert_eq!(parse_predicate(s).unwrap().op, op, "{s}");
        }
        assert_eq!(parse_predicate("a>-2.5").unwrap().value, Value::Float(-2.5));
    }

    #[test]
    fn join_and_round_trip() {
        let text = "scan table=orders where a<=3,b!=0x0aff join=items:item=id";
        let p: QueryPlan = text.parse().unwrap();
        assert_eq!(p.join.as_ref().unwrap().build_column, "id");
        assert_eq!(p.to_string(), text);
        let q = QueryPlan::scan("t").filter("x", CmpOp::Eq, Value::Float(2.0));
        assert_eq!(q.to_string().parse::<QueryPlan>().unwrap(), q);
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "select *", "scan", "scan table=t agg=sum()", "scan table=t where", "scan table=t foo=1", "scan table=t agg=median(x)"] {
            assert!(bad.parse::<QueryPlan>().is_err(), "{bad}");
        }
    }
}
