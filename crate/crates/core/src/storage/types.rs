use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Serialize, Serializer};

use super::StorageError;

/// Logical commit time. `0` is the initial load; [`Timestamp::INFINITY`]
/// marks an open version interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);
    pub const INFINITY: Timestamp = Timestamp(u64::MAX);

    pub fn next(self) -> Timestamp {
        Timestamp(self.0 + 1)
    }

    pub fn is_infinite(self) -> bool {
        self == Self::INFINITY
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_u64(self.0)
        }
    }
}

pub type TxnId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Int,
    Float,
    /// Fixed-width byte string.
    Bytes(usize),
}

impl ColumnType {
    pub fn width(self) -> usize {
        match self {
            ColumnType::Int | ColumnType::Float => 8,
            ColumnType::Bytes(w) => w,
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Int => f.write_str("int"),
            ColumnType::Float => f.write_str("float"),
            ColumnType::Bytes(w) => write!(f, "bytes({w})"),
        }
    }
}

/// A single cell. Floats compare and hash by total order so values can be
/// used as group keys.
#[derive(Debug, Clone)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bytes(Box<[u8]>),
}

impl Value {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Value::Int(_) => ColumnType::Int,
            Value::Float(_) => ColumnType::Float,
            Value::Bytes(b) => ColumnType::Bytes(b.len()),
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Bytes(_) => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Int(_) => 0,
            Value::Float(_) => 1,
            Value::Bytes(_) => 2,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Bytes(a), Value::Bytes(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Int(v) => v.hash(state),
            Value::Float(v) => v.to_bits().hash(state),
            Value::Bytes(b) => b.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Bytes(b) => {
                f.write_str("0x")?;
                for byte in b.iter() {
                    write!(f, "{byte:02x}")?;
                }
                Ok(())
            }
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Int(v) => s.serialize_i64(*v),
            Value::Float(v) => s.serialize_f64(*v),
            Value::Bytes(_) => s.collect_str(self),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
}

/// Table layout shared by both replicas. Stored rows carry only the
/// non-key columns, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSchema {
    pub table_name: String,
    pub columns: Vec<ColumnDef>,
    pub key_column: usize,
}

impl TableSchema {
    pub fn new(
        table_name: impl Into<String>,
        columns: Vec<ColumnDef>,
        key_column: usize,
    ) -> Result<Self, StorageError> {
        let schema = TableSchema {
            table_name: table_name.into(),
            columns,
            key_column,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), StorageError> {
        if self.table_name.is_empty() {
            return Err(StorageError::InvalidSchema("empty table name".into()));
        }
        let Some(key) = self.columns.get(self.key_column) else {
            return Err(StorageError::InvalidSchema(format!(
                "key column index {} out of range",
                self.key_column
            )));
        };
        if key.ty != ColumnType::Int {
            return Err(StorageError::InvalidSchema(format!(
                "key column `{}` must be int",
                key.name
            )));
        }
        for (i, c) in self.columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(StorageError::InvalidSchema("empty column name".into()));
            }
            if self.columns[..i].iter().any(|o| o.name == c.name) {
                return Err(StorageError::InvalidSchema(format!(
                    "duplicate column `{}`",
                    c.name
                )));
            }
            if c.ty == ColumnType::Bytes(0) {
                return Err(StorageError::InvalidSchema(format!(
                    "column `{}` has zero width",
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn key_name(&self) -> &str {
        &self.columns[self.key_column].name
    }

    /// Schema positions of the stored (non-key) columns.
    pub fn value_columns(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.columns.len()).filter(move |&i| i != self.key_column)
    }

    pub fn value_types(&self) -> Vec<ColumnType> {
        self.value_columns().map(|i| self.columns[i].ty).collect()
    }

    /// Maps a schema position to its slot in a stored value tuple.
    pub fn value_slot(&self, column: usize) -> Option<usize> {
        match column.cmp(&self.key_column) {
            Ordering::Less => Some(column),
            Ordering::Equal => None,
            Ordering::Greater => Some(column - 1),
        }
    }

    /// Bytes occupied by one full row, key included.
    pub fn row_bytes(&self) -> usize {
        self.columns.iter().map(|c| c.ty.width()).sum()
    }

    pub fn check_values(&self, values: &[Value]) -> Result<(), StorageError> {
        let types = self.value_types();
        if values.len() != types.len() {
            return Err(StorageError::TypeMismatch(format!(
                "expected {} values, got {}",
                types.len(),
                values.len()
            )));
        }
        for (v, t) in values.iter().zip(types) {
            if v.column_type() != t {
                return Err(StorageError::TypeMismatch(format!(
                    "value {v} does not match column type {t}"
                )));
            }
        }
        Ok(())
    }

    /// Full row (key at its schema position) from a key and stored values.
    pub fn full_row(&self, key: i64, values: &[Value]) -> Vec<Value> {
        let mut row = Vec::with_capacity(values.len() + 1);
        row.extend_from_slice(&values[..self.key_column]);
        row.push(Value::Int(key));
        row.extend_from_slice(&values[self.key_column..]);
        row
    }
}
