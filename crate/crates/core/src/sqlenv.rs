//! Sandboxed SQLite execution.
//!
//! Agent-issued SQL runs against read-only database handles behind a
//! statement guard (top-level `SELECT` / `WITH … SELECT` only, one statement
//! at a time), a wall-clock timeout enforced through SQLite's progress
//! handler, and a cap on fetched rows. Execution never panics on bad SQL:
//! every failure is folded into an [`ExecOutcome`] so the rollout loop can
//! feed it back to the agent as an observation.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use thiserror::Error;

use crate::taskdata::{ForeignKeyRef, SchemaCatalog, SchemaColumn, SchemaTable};

/// Errors raised while opening or introspecting a database (execution errors
/// are data, not `Err`s — see [`ExecOutcome`]).
#[derive(Debug, Error)]
pub enum EnvError {
    #[error("cannot open database {path}: {message}")]
    Open { path: PathBuf, message: String },
    #[error("sqlite error: {0}")]
    Sqlite(#[from] rusqlite::Error),
}

/// One SQLite cell value.
#[derive(Clone, Debug, PartialEq)]
pub enum SqlValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl SqlValue {
    fn from_ref(v: ValueRef<'_>) -> SqlValue {
        match v {
            ValueRef::Null => SqlValue::Null,
            ValueRef::Integer(i) => SqlValue::Integer(i),
            ValueRef::Real(x) => SqlValue::Real(x),
            ValueRef::Text(t) => SqlValue::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => SqlValue::Blob(b.to_vec()),
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            SqlValue::Integer(i) => Some(*i as f64),
            SqlValue::Real(x) => Some(*x),
            _ => None,
        }
    }
}

/// Outcome of executing one statement. Failures are represented, not raised.
#[derive(Clone, Debug)]
pub struct ExecOutcome {
    /// `None` on success, the engine/guard message on failure.
    pub error_message: Option<String>,
    /// Result column names (empty on failure or column-less statements).
    pub columns: Vec<String>,
    /// Fetched rows, capped at [`ExecLimits::max_rows_fetched`].
    pub rows: Vec<Vec<SqlValue>>,
    /// Total rows the statement produced, including rows beyond the cap.
    pub row_count_total: usize,
    /// Wall-clock execution time.
    pub elapsed: Duration,
}

impl ExecOutcome {
    pub fn ok(columns: Vec<String>, rows: Vec<Vec<SqlValue>>, row_count_total: usize, elapsed: Duration) -> Self {
        debug_assert!(row_count_total >= rows.len());
        ExecOutcome { error_message: None, columns, rows, row_count_total, elapsed }
    }

    pub fn error(message: impl Into<String>, elapsed: Duration) -> Self {
        ExecOutcome {
            error_message: Some(message.into()),
            columns: Vec::new(),
            rows: Vec::new(),
            row_count_total: 0,
            elapsed,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error_message.is_none()
    }
}

/// Execution limits applied to every statement.
#[derive(Clone, Debug)]
pub struct ExecLimits {
    /// Wall-clock budget; exceeding it aborts the statement with an error
    /// outcome. Must be strictly positive.
    pub timeout: Duration,
    /// Maximum rows materialized into the outcome (the total row count keeps
    /// counting past the cap). Must be at least 1.
    pub max_rows_fetched: usize,
    /// When false, statements run under `PRAGMA query_only` even on handles
    /// that were not opened read-only.
    pub allow_writes: bool,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits { timeout: Duration::from_secs(30), max_rows_fetched: 10_000, allow_writes: false }
    }
}

/// A database handle plus the mode it was opened in.
#[derive(Debug)]
pub struct SqlEnv {
    conn: Connection,
    read_only: bool,
}

impl SqlEnv {
    pub fn is_read_only(&self) -> bool {
        self.read_only
    }

    /// Run raw setup SQL (schema + data) on a writable handle. Intended for
    /// fixtures and tests; agent SQL goes through [`execute_sql`].
    pub fn execute_batch(&self, sql: &str) -> Result<(), EnvError> {
        self.conn.execute_batch(sql)?;
        Ok(())
    }
}

/// Open a database file. With `read_only` the handle is opened with SQLite's
/// read-only flag *and* `PRAGMA query_only`, and opening a missing or corrupt
/// file is an error (the header is probed eagerly).
pub fn open_database(path: &Path, read_only: bool) -> Result<SqlEnv, EnvError> {
    let open_err = |message: String| EnvError::Open { path: path.to_path_buf(), message };
    let conn = if read_only {
        Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
        )
    } else {
        Connection::open(path)
    }
    .map_err(|e| open_err(e.to_string()))?;
    // Force a header read so corrupt files fail here, not mid-rollout.
    conn.query_row("PRAGMA schema_version", [], |_| Ok(()))
        .map_err(|e| open_err(e.to_string()))?;
    if read_only {
        conn.pragma_update(None, "query_only", true).map_err(|e| open_err(e.to_string()))?;
    }
    Ok(SqlEnv { conn, read_only })
}

/// Open a writable in-memory database (fixtures, toy training).
pub fn open_in_memory() -> Result<SqlEnv, EnvError> {
    let conn = Connection::open_in_memory()?;
    Ok(SqlEnv { conn, read_only: false })
}

/// What agent SQL is allowed to do.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuardPolicy {
    /// Single top-level `SELECT` (or `WITH … SELECT`) statements only.
    SelectOnly,
    /// No statement filtering (setup/scoring paths).
    Unrestricted,
}

/// Why the guard rejected a statement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    Empty,
    MultiStatement,
    NonSelect,
}

impl RejectReason {
    /// Fixed message rendered into the agent's observation.
    pub fn message(self) -> &'static str {
        match self {
            RejectReason::Empty => "rejected: empty statement",
            RejectReason::MultiStatement => "rejected: multiple SQL statements in one action",
            RejectReason::NonSelect => "rejected: only read-only SELECT statements are allowed",
        }
    }
}

/// Guard verdict for one action's SQL.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuardVerdict {
    Ok,
    Rejected(RejectReason),
}

/// A token-level scan of one statement: words at parenthesis depth zero
/// (lowercased, with function-call position marked) computed outside strings
/// and comments.
struct Depth0Scan {
    words: Vec<(String, bool)>,
    has_content: bool,
}

fn scan_depth0(stmt: &str) -> Depth0Scan {
    let bytes = stmt.as_bytes();
    let mut words: Vec<(String, usize)> = Vec::new();
    let mut has_content = false;
    let mut depth: i32 = 0;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            '-' if bytes.get(i + 1) == Some(&b'-') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            '/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i = (i + 2).min(bytes.len());
            }
            '\'' | '"' | '`' => {
                has_content = true;
                let quote = bytes[i];
                i += 1;
                while i < bytes.len() {
                    if bytes[i] == quote {
                        // Doubled quote chars escape themselves.
                        if bytes.get(i + 1) == Some(&quote) {
                            i += 2;
                            continue;
                        }
                        i += 1;
                        break;
                    }
                    i += 1;
                }
            }
            '[' => {
                has_content = true;
                while i < bytes.len() && bytes[i] != b']' {
                    i += 1;
                }
                i = (i + 1).min(bytes.len());
            }
            '(' => {
                has_content = true;
                depth += 1;
                i += 1;
            }
            ')' => {
                has_content = true;
                depth -= 1;
                i += 1;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                has_content = true;
                let start = i;
                while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                if depth == 0 {
                    words.push((stmt[start..i].to_ascii_lowercase(), i));
                }
            }
            c if c.is_whitespace() => {
                i += 1;
            }
            _ => {
                has_content = true;
                i += 1;
            }
        }
    }
    // Mark words immediately followed by '(' (function-call position).
    let marked = words
        .into_iter()
        .map(|(w, end)| {
            let rest = stmt[end..].trim_start();
            (w, rest.starts_with('('))
        })
        .collect();
    Depth0Scan { words: marked, has_content }
}

/// Split on top-level semicolons (outside strings, comments, parentheses),
/// keeping only segments with real content.
fn split_statements(sql: &str) -> Vec<&str> {
    let bytes = sql.as_bytes();
    let mut parts = Vec::new();
    let mut start = 0;
    let mut depth: i32 = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'-' if bytes.get(i + 1) == Some(&b'-') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i = (i + 2).min(bytes.len());
            }
            q @ (b'\'' | b'"' | b'`') => {
                i += 1;
                while i < bytes.len() {
                    if bytes[i] == q {
                        if bytes.get(i + 1) == Some(&q) {
                            i += 2;
                            continue;
                        }
                        i += 1;
                        break;
                    }
                    i += 1;
                }
            }
            b'[' => {
                while i < bytes.len() && bytes[i] != b']' {
                    i += 1;
                }
                i = (i + 1).min(bytes.len());
            }
            b'(' => {
                depth += 1;
                i += 1;
            }
            b')' => {
                depth -= 1;
                i += 1;
            }
            b';' if depth == 0 => {
                parts.push(&sql[start..i]);
                start = i + 1;
                i += 1;
            }
            _ => i += 1,
        }
    }
    parts.push(&sql[start..]);
    parts.into_iter().filter(|p| scan_depth0(p).has_content).collect()
}

/// Statement verbs that mutate state or escape the sandbox. `replace` doubles
/// as a builtin scalar function, so function-call position exempts it.
const FORBIDDEN_VERBS: &[&str] = &[
    "insert", "update", "delete", "drop", "create", "alter", "replace", "attach", "detach", "pragma", "vacuum",
    "reindex", "analyze", "begin", "commit", "rollback", "savepoint", "release",
];

/// Check one action's SQL against the guard policy. The check is purely
/// lexical — execution still happens on a read-only handle, so the guard is a
/// first fence, not the only one.
pub fn guard_sql(sql: &str, policy: GuardPolicy) -> GuardVerdict {
    if policy == GuardPolicy::Unrestricted {
        return GuardVerdict::Ok;
    }
    let statements = split_statements(sql);
    match statements.len() {
        0 => return GuardVerdict::Rejected(RejectReason::Empty),
        1 => {}
        _ => return GuardVerdict::Rejected(RejectReason::MultiStatement),
    }
    let scan = scan_depth0(statements[0]);
    let Some((first, _)) = scan.words.first() else {
        return GuardVerdict::Rejected(RejectReason::NonSelect);
    };
    if first != "select" && first != "with" {
        return GuardVerdict::Rejected(RejectReason::NonSelect);
    }
    for (word, is_call) in &scan.words {
        if FORBIDDEN_VERBS.contains(&word.as_str()) && !is_call {
            return GuardVerdict::Rejected(RejectReason::NonSelect);
        }
    }
    GuardVerdict::Ok
}

/// How many virtual-machine steps between timeout checks.
const PROGRESS_OPS: i32 = 100;

fn run_statement(
    env: &SqlEnv,
    sql: &str,
    limits: &ExecLimits,
) -> Result<(Vec<String>, Vec<Vec<SqlValue>>, usize), rusqlite::Error> {
    let mut stmt = env.conn.prepare(sql)?;
    let columns: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let ncols = columns.len();
    let mut fetched: Vec<Vec<SqlValue>> = Vec::new();
    let mut total = 0usize;
    let mut rows = stmt.query([])?;
    while let Some(row) = rows.next()? {
        total += 1;
        if fetched.len() < limits.max_rows_fetched {
            let mut vals = Vec::with_capacity(ncols);
            for j in 0..ncols {
                vals.push(SqlValue::from_ref(row.get_ref(j)?));
            }
            fetched.push(vals);
        }
    }
    Ok((columns, fetched, total))
}

/// Execute one statement under the given limits. Failures (syntax errors,
/// write attempts on read-only handles, timeouts) come back as error
/// outcomes; only the first statement of the input is ever compiled.
pub fn execute_sql(env: &SqlEnv, sql: &str, limits: &ExecLimits) -> ExecOutcome {
    debug_assert!(limits.timeout > Duration::ZERO, "timeout must be strictly positive");
    debug_assert!(limits.max_rows_fetched >= 1, "max_rows_fetched must be at least 1");
    let started = Instant::now();
    let deadline = started + limits.timeout;
    let lock_writes = !limits.allow_writes && !env.read_only;
    if lock_writes {
        if let Err(e) = env.conn.pragma_update(None, "query_only", true) {
            return ExecOutcome::error(e.to_string(), started.elapsed());
        }
    }
    if let Err(e) = env.conn.progress_handler(PROGRESS_OPS, Some(move || Instant::now() > deadline)) {
        // Without the handler the timeout would be unenforceable; refuse to run.
        return ExecOutcome::error(format!("cannot install timeout guard: {e}"), started.elapsed());
    }
    let result = run_statement(env, sql, limits);
    let _ = env.conn.progress_handler(0, None::<fn() -> bool>);
    if lock_writes {
        let _ = env.conn.pragma_update(None, "query_only", false);
    }
    let elapsed = started.elapsed();
    match result {
        Ok((columns, rows, total)) => ExecOutcome::ok(columns, rows, total, elapsed),
        Err(e) => {
            if Instant::now() > deadline {
                ExecOutcome::error(format!("query timed out after {:.1}s", limits.timeout.as_secs_f64()), elapsed)
            } else {
                ExecOutcome::error(e.to_string(), elapsed)
            }
        }
    }
}

/// Syntax reward: 1 when the SQL executes without error, else 0.
pub fn is_executable(env: &SqlEnv, sql: &str, limits: &ExecLimits) -> u8 {
    u8::from(execute_sql(env, sql, limits).is_ok())
}

/// Tolerant scalar equality: integers and reals unify, numeric comparison
/// uses `|a − b| ≤ 1e-6 · max(1, |a|, |b|)`, text and blobs are byte-exact.
pub fn values_equal(a: &SqlValue, b: &SqlValue) -> bool {
    match (a, b) {
        (SqlValue::Null, SqlValue::Null) => true,
        (SqlValue::Integer(x), SqlValue::Integer(y)) => x == y,
        (SqlValue::Text(x), SqlValue::Text(y)) => x == y,
        (SqlValue::Blob(x), SqlValue::Blob(y)) => x == y,
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-6 * x.abs().max(y.abs()).max(1.0),
            _ => false,
        },
    }
}

/// Exact ordering used to canonicalize row order before comparison.
fn cmp_values(a: &SqlValue, b: &SqlValue) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    fn rank(v: &SqlValue) -> u8 {
        match v {
            SqlValue::Null => 0,
            SqlValue::Integer(_) | SqlValue::Real(_) => 1,
            SqlValue::Text(_) => 2,
            SqlValue::Blob(_) => 3,
        }
    }
    match rank(a).cmp(&rank(b)) {
        Ordering::Equal => match (a, b) {
            (SqlValue::Null, SqlValue::Null) => Ordering::Equal,
            (SqlValue::Text(x), SqlValue::Text(y)) => x.cmp(y),
            (SqlValue::Blob(x), SqlValue::Blob(y)) => x.cmp(y),
            _ => {
                let (x, y) = (a.as_f64().unwrap_or(f64::NAN), b.as_f64().unwrap_or(f64::NAN));
                x.total_cmp(&y).then_with(|| {
                    // Exact tiebreak so sorting is deterministic across
                    // integer/real representations of the same number.
                    let tag = |v: &SqlValue| matches!(v, SqlValue::Real(_));
                    tag(a).cmp(&tag(b))
                })
            }
        },
        other => other,
    }
}

fn cmp_rows(a: &[SqlValue], b: &[SqlValue]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let ord = cmp_values(x, y);
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    a.len().cmp(&b.len())
}

/// Execution-result equality: multiset of rows, row order ignored, column
/// order significant, scalars compared via [`values_equal`]. Two failed
/// executions are never equal.
pub fn results_equal(a: &ExecOutcome, b: &ExecOutcome) -> bool {
    if !a.is_ok() || !b.is_ok() {
        return false;
    }
    if a.row_count_total != b.row_count_total || a.rows.len() != b.rows.len() {
        return false;
    }
    let mut left: Vec<&Vec<SqlValue>> = a.rows.iter().collect();
    let mut right: Vec<&Vec<SqlValue>> = b.rows.iter().collect();
    left.sort_by(|x, y| cmp_rows(x, y));
    right.sort_by(|x, y| cmp_rows(x, y));
    left.iter().zip(right.iter()).all(|(x, y)| {
        x.len() == y.len() && x.iter().zip(y.iter()).all(|(u, v)| values_equal(u, v))
    })
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Read the schema catalog out of a live database: tables in creation order,
/// columns with declared types and primary-key flags, and resolvable foreign
/// keys (entries pointing at missing tables/columns are dropped).
pub fn introspect_schema(env: &SqlEnv) -> Result<SchemaCatalog, EnvError> {
    let conn = &env.conn;
    let mut names_stmt =
        conn.prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid")?;
    let names: Vec<String> = names_stmt
        .query_map([], |row| row.get::<_, String>(0))?
        .collect::<Result<_, _>>()?;

    let mut tables = Vec::with_capacity(names.len());
    for name in &names {
        let mut info = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(name)))?;
        let columns: Vec<SchemaColumn> = info
            .query_map([], |row| {
                let decl: String = row.get(2)?;
                Ok(SchemaColumn {
                    name: row.get(1)?,
                    decl_type: if decl.is_empty() { "ANY".to_string() } else { decl },
                    is_primary_key: row.get::<_, i64>(5)? > 0,
                })
            })?
            .collect::<Result<_, _>>()?;
        tables.push(SchemaTable { name: name.clone(), columns });
    }

    let mut foreign_keys = Vec::new();
    for table in &names {
        let mut fk = conn.prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(table)))?;
        let entries: Vec<(String, String, Option<String>)> = fk
            .query_map([], |row| Ok((row.get::<_, String>(2)?, row.get::<_, String>(3)?, row.get::<_, Option<String>>(4)?)))?
            .collect::<Result<_, _>>()?;
        for (to_table, from_column, to_column) in entries {
            let Some(target) = tables.iter().find(|t| t.name.eq_ignore_ascii_case(&to_table)) else {
                continue;
            };
            // An absent target column means "the referenced table's primary
            // key"; only single-column keys are resolvable here.
            let resolved = match to_column {
                Some(c) => c,
                None => {
                    let pks: Vec<&SchemaColumn> = target.columns.iter().filter(|c| c.is_primary_key).collect();
                    match pks.as_slice() {
                        [only] => only.name.clone(),
                        _ => continue,
                    }
                }
            };
            if !target.columns.iter().any(|c| c.name.eq_ignore_ascii_case(&resolved)) {
                continue;
            }
            foreign_keys.push(ForeignKeyRef {
                from_table: table.clone(),
                from_column,
                to_table: target.name.clone(),
                to_column: resolved,
            });
        }
    }

    Ok(SchemaCatalog { tables, foreign_keys })
}
