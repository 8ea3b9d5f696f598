//! Query execution against named databases.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use rusqlite::functions::FunctionFlags;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::fixtures;

/// One result cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    /// Comparison key used for result equality: integers widen to reals,
    /// text and blobs compare exactly.
    pub fn key(&self) -> CellKey {
        match self {
            Cell::Null => CellKey::Null,
            Cell::Int(i) => CellKey::Num((*i as f64).to_bits()),
            Cell::Real(r) => CellKey::Num(canonical_bits(*r)),
            Cell::Text(s) => CellKey::Text(s.clone()),
            Cell::Blob(b) => CellKey::Blob(b.clone()),
        }
    }
}

fn canonical_bits(r: f64) -> u64 {
    if r == 0.0 {
        0.0f64.to_bits()
    } else if r.is_nan() {
        f64::NAN.to_bits()
    } else {
        r.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellKey {
    Null,
    Num(u64),
    Text(String),
    Blob(Vec<u8>),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => f.write_str("NULL"),
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Real(r) => write!(f, "{r}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Blob(b) => write!(f, "x'{}'", hex::encode(b)),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Null => s.serialize_none(),
            Cell::Int(i) => s.serialize_i64(*i),
            Cell::Real(r) if r.is_finite() => s.serialize_f64(*r),
            Cell::Real(r) => s.serialize_str(&r.to_string()),
            Cell::Text(t) => s.serialize_str(t),
            Cell::Blob(b) => s.serialize_str(&format!("x'{}'", hex::encode(b))),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        Ok(match value {
            serde_json::Value::Null => Cell::Null,
            serde_json::Value::Bool(b) => Cell::Int(b as i64),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) => Cell::Int(i),
                None => Cell::Real(n.as_f64().unwrap_or(f64::NAN)),
            },
            serde_json::Value::String(s) => Cell::Text(s),
            other => Cell::Text(other.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultSet {
    pub fn row_keys(&self) -> Vec<Vec<CellKey>> {
        self.rows.iter().map(|r| r.iter().map(Cell::key).collect()).collect()
    }

    /// Rows as a sorted multiset of comparison keys.
    pub fn multiset_key(&self) -> Vec<Vec<CellKey>> {
        let mut keys = self.row_keys();
        keys.sort();
        keys
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("unknown database `{0}`")]
    UnknownDatabase(String),
    #[error("{0}")]
    Sql(String),
    #[error("refusing to run a statement that modifies the database")]
    NotReadOnly,
    #[error("cannot open database: {0}")]
    Open(String),
}

/// Something that runs read-only SQL against named databases.
pub trait SqlExecutor: Send + Sync {
    fn execute(&self, db_id: &str, sql: &str) -> Result<ResultSet, ExecError>;
    fn databases(&self) -> Vec<String>;

    /// Exposes the underlying connection for schema introspection.
    fn with_connection(
        &self,
        db_id: &str,
        f: &mut dyn FnMut(&Connection) -> Result<(), ExecError>,
    ) -> Result<(), ExecError>;
}

/// SQLite-backed executor. Each database is one connection behind a mutex.
pub struct SqliteExecutor {
    dbs: BTreeMap<String, Mutex<Connection>>,
}

impl SqliteExecutor {
    pub fn new() -> Self {
        SqliteExecutor { dbs: BTreeMap::new() }
    }

    /// Executor holding the seeded `sports` and `retail` fixture databases.
    pub fn with_fixtures() -> Self {
        let mut exec = SqliteExecutor::new();
        exec.add_seeded("sports", &fixtures::sports_seed_sql())
            .expect("sports fixture seeds");
        exec.add_seeded("retail", &fixtures::retail_seed_sql())
            .expect("retail fixture seeds");
        exec
    }

    /// Adds an in-memory database initialized by `seed_sql`.
    pub fn add_seeded(&mut self, db_id: &str, seed_sql: &str) -> Result<(), ExecError> {
        let conn = Connection::open_in_memory().map_err(|e| ExecError::Open(e.to_string()))?;
        register_functions(&conn)?;
        conn.execute_batch(seed_sql)
            .map_err(|e| ExecError::Sql(e.to_string()))?;
        self.dbs.insert(db_id.to_string(), Mutex::new(conn));
        Ok(())
    }

    /// Adds a database file, opened read-only.
    pub fn add_file(&mut self, db_id: &str, path: &Path) -> Result<(), ExecError> {
        if !path.exists() {
            return Err(ExecError::Open(format!("{} does not exist", path.display())));
        }
        let conn = Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(|e| ExecError::Open(format!("{}: {e}", path.display())))?;
        register_functions(&conn)?;
        self.dbs.insert(db_id.to_string(), Mutex::new(conn));
        Ok(())
    }

    /// Adds a database by spec: `fixture:<name>` or a file path.
    pub fn add_spec(&mut self, db_id: &str, spec: &str) -> Result<(), ExecError> {
        match spec.strip_prefix("fixture:") {
            Some("sports") => self.add_seeded(db_id, &fixtures::sports_seed_sql()),
            Some("retail") => self.add_seeded(db_id, &fixtures::retail_seed_sql()),
            Some(other) => Err(ExecError::Open(format!("no fixture named `{other}`"))),
            None => self.add_file(db_id, Path::new(spec)),
        }
    }
}

impl Default for SqliteExecutor {
    fn default() -> Self {
        Self::new()
    }
}

impl SqlExecutor for SqliteExecutor {
    fn execute(&self, db_id: &str, sql: &str) -> Result<ResultSet, ExecError> {
        let conn = self
            .dbs
            .get(db_id)
            .ok_or_else(|| ExecError::UnknownDatabase(db_id.to_string()))?
            .lock()
            .unwrap_or_else(|p| p.into_inner());
        let mut stmt = conn.prepare(sql).map_err(|e| ExecError::Sql(sqlite_message(e)))?;
        if !stmt.readonly() {
            return Err(ExecError::NotReadOnly);
        }
        let columns: Vec<String> = stmt.column_names().iter().map(|c| c.to_string()).collect();
        let width = columns.len();
        let mut rows = Vec::new();
        let mut cursor = stmt.query([]).map_err(|e| ExecError::Sql(sqlite_message(e)))?;
        while let Some(row) = cursor.next().map_err(|e| ExecError::Sql(sqlite_message(e)))? {
            let mut cells = Vec::with_capacity(width);
            for i in 0..width {
                let value = row.get_ref(i).map_err(|e| ExecError::Sql(sqlite_message(e)))?;
                cells.push(match value {
                    ValueRef::Null => Cell::Null,
                    ValueRef::Integer(v) => Cell::Int(v),
                    ValueRef::Real(v) => Cell::Real(v),
                    ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                    ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
                });
            }
            rows.push(cells);
        }
        Ok(ResultSet { columns, rows })
    }

    fn databases(&self) -> Vec<String> {
        self.dbs.keys().cloned().collect()
    }

    fn with_connection(
        &self,
        db_id: &str,
        f: &mut dyn FnMut(&Connection) -> Result<(), ExecError>,
    ) -> Result<(), ExecError> {
        let conn = self
            .dbs
            .get(db_id)
            .ok_or_else(|| ExecError::UnknownDatabase(db_id.to_string()))?
            .lock()
            .unwrap_or_else(|p| p.into_inner());
        f(&conn)
    }
}

fn sqlite_message(e: rusqlite::Error) -> String {
    match e {
        rusqlite::Error::SqliteFailure(_, Some(msg)) => msg,
        rusqlite::Error::SqlInputError { msg, .. } => msg,
        other => other.to_string(),
    }
}

fn register_functions(conn: &Connection) -> Result<(), ExecError> {
    conn.create_scalar_function(
        "TO_CHAR",
        2,
        FunctionFlags::SQLITE_UTF8 | FunctionFlags::SQLITE_DETERMINISTIC,
        |ctx| {
            let date: Option<String> = ctx.get(0)?;
            let format: String = ctx.get(1)?;
            Ok(date.and_then(|d| to_char(&d, &format)))
        },
    )
    .map_err(|e| ExecError::Open(e.to_string()))
}

/// Formats a `YYYY-MM-DD...` date text. Supports `YYYY`, `MM`, `DD`, `Q`
/// and double-quoted literals; other characters are copied.
pub fn to_char(date: &str, format: &str) -> Option<String> {
    let year = date.get(0..4)?;
    let month: u32 = date.get(5..7)?.parse().ok()?;
    let day = date.get(8..10).unwrap_or("01");
    if !(1..=12).contains(&month) {
        return None;
    }
    let mut out = String::new();
    let mut rest = format;
    while let Some(c) = rest.chars().next() {
        if c == '"' {
            let body = &rest[1..];
            let end = body.find('"').unwrap_or(body.len());
            out.push_str(&body[..end]);
            rest = body.get(end + 1..).unwrap_or("");
        } else if let Some(r) = rest.strip_prefix("YYYY") {
            out.push_str(year);
            rest = r;
        } else if let Some(r) = rest.strip_prefix("MM") {
            out.push_str(&format!("{month:02}"));
            rest = r;
        } else if let Some(r) = rest.strip_prefix("DD") {
            out.push_str(day);
            rest = r;
        } else if let Some(r) = rest.strip_prefix('Q') {
            out.push_str(&((month - 1) / 3 + 1).to_string());
            rest = r;
        } else {
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    Some(out)
}
