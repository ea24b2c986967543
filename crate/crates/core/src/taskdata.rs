//! Task instances and dataset plumbing.
//!
//! A task binds a natural-language question to a SQLite database file, the
//! gold SQL that answers it, and a difficulty bucket. Datasets arrive either
//! in the two common research-benchmark JSON layouts (`spider-json`,
//! `bird-json`, where the schema is introspected from the database files) or
//! in this harness's own self-contained JSONL (`jsonl`, schema embedded).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::policy::{ChatMessage, Role};
use crate::sqlenv::{introspect_schema, open_database};

/// Default engine tag substituted into prompts.
pub const DEFAULT_ENGINE: &str = "SQLite";

#[derive(Debug, Error)]
pub enum TaskDataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path} at record {index}: {message}")]
    Json { path: PathBuf, index: usize, message: String },
    #[error("record {index}: missing or invalid field `{field}`")]
    MalformedRecord { index: usize, field: &'static str },
    #[error("record {index}: unrecognized difficulty label `{label}`")]
    UnknownDifficulty { index: usize, label: String },
    #[error("task {id}: database file {path} does not exist")]
    MissingDatabase { id: String, path: PathBuf },
    #[error("duplicate task id `{0}`")]
    DuplicateTaskId(String),
    #[error("dataset {0} contains no tasks")]
    EmptyDataset(PathBuf),
    #[error("spider-json and bird-json need a database root directory")]
    MissingDbRoot,
    #[error("invalid schema catalog: {0}")]
    InvalidCatalog(String),
    #[error("prompt template is missing placeholders: {0:?}")]
    MissingPlaceholders(Vec<String>),
    #[error("substituted prompt still contains placeholder marker `{0}`")]
    ResidualPlaceholder(String),
    #[error(transparent)]
    Env(#[from] crate::sqlenv::EnvError),
}

/// Difficulty buckets, unified across source datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Medium,
    Hard,
    Extra,
}

impl Difficulty {
    /// Map a source-dataset label onto the unified buckets:
    /// `easy`→simple, `moderate`→medium, `challenging`→hard,
    /// `extra`/`extra-hard`→extra; the unified names map to themselves.
    pub fn from_source_label(label: &str) -> Option<Difficulty> {
        match label.to_ascii_lowercase().as_str() {
            "easy" | "simple" => Some(Difficulty::Simple),
            "medium" | "moderate" => Some(Difficulty::Medium),
            "hard" | "challenging" => Some(Difficulty::Hard),
            "extra" | "extra-hard" | "extra hard" => Some(Difficulty::Extra),
            _ => None,
        }
    }

    pub const ALL: [Difficulty; 4] = [Difficulty::Simple, Difficulty::Medium, Difficulty::Hard, Difficulty::Extra];
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Difficulty::Simple => "simple",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Extra => "extra",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaColumn {
    pub name: String,
    pub decl_type: String,
    pub is_primary_key: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaTable {
    pub name: String,
    pub columns: Vec<SchemaColumn>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKeyRef {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

/// The schema of one database: tables with typed columns plus foreign keys.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaCatalog {
    pub tables: Vec<SchemaTable>,
    pub foreign_keys: Vec<ForeignKeyRef>,
}

impl SchemaCatalog {
    /// Structural validation: unique table names, unique column names per
    /// table, and foreign keys whose endpoints exist (case-insensitive).
    pub fn validate(&self) -> Result<(), TaskDataError> {
        let mut seen_tables = BTreeSet::new();
        for table in &self.tables {
            if !seen_tables.insert(table.name.to_ascii_lowercase()) {
                return Err(TaskDataError::InvalidCatalog(format!("duplicate table `{}`", table.name)));
            }
            let mut seen_cols = BTreeSet::new();
            for col in &table.columns {
                if !seen_cols.insert(col.name.to_ascii_lowercase()) {
                    return Err(TaskDataError::InvalidCatalog(format!(
                        "duplicate column `{}` in table `{}`",
                        col.name, table.name
                    )));
                }
            }
        }
        for fk in &self.foreign_keys {
            for (table, column) in [(&fk.from_table, &fk.from_column), (&fk.to_table, &fk.to_column)] {
                let Some(t) = self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(table)) else {
                    return Err(TaskDataError::InvalidCatalog(format!("foreign key references missing table `{table}`")));
                };
                if !t.columns.iter().any(|c| c.name.eq_ignore_ascii_case(column)) {
                    return Err(TaskDataError::InvalidCatalog(format!(
                        "foreign key references missing column `{table}.{column}`"
                    )));
                }
            }
        }
        Ok(())
    }

    /// All table and column names, lowercased — the identifier vocabulary
    /// used by schema linking.
    pub fn identifier_set(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for table in &self.tables {
            out.insert(table.name.to_ascii_lowercase());
            for col in &table.columns {
                out.insert(col.name.to_ascii_lowercase());
            }
        }
        out
    }

    /// Lowercased table names only.
    pub fn table_names(&self) -> BTreeSet<String> {
        self.tables.iter().map(|t| t.name.to_ascii_lowercase()).collect()
    }
}

/// One text-to-SQL task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub question: String,
    pub database_id: String,
    pub db_path: PathBuf,
    pub schema: SchemaCatalog,
    pub gold_sql: String,
    pub difficulty: Difficulty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_knowledge: Option<String>,
    #[serde(default = "default_engine")]
    pub engine: String,
}

fn default_engine() -> String {
    DEFAULT_ENGINE.to_string()
}

/// Supported dataset layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskFormat {
    /// JSON array with `db_id` / `question` / `query` fields.
    SpiderJson,
    /// JSON array with `question_id` / `db_id` / `question` / `evidence` /
    /// `SQL` / `difficulty` fields.
    BirdJson,
    /// This harness's own self-contained JSON-lines layout.
    Jsonl,
}

impl FromStr for TaskFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spider-json" => Ok(TaskFormat::SpiderJson),
            "bird-json" => Ok(TaskFormat::BirdJson),
            "jsonl" => Ok(TaskFormat::Jsonl),
            other => Err(format!("unknown task format `{other}` (expected spider-json, bird-json, or jsonl)")),
        }
    }
}

impl fmt::Display for TaskFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskFormat::SpiderJson => "spider-json",
            TaskFormat::BirdJson => "bird-json",
            TaskFormat::Jsonl => "jsonl",
        })
    }
}

fn str_field(record: &Value, key: &'static str, index: usize) -> Result<String, TaskDataError> {
    record
        .get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or(TaskDataError::MalformedRecord { index, field: key })
}

fn difficulty_field(record: &Value, keys: &[&str], index: usize) -> Result<Difficulty, TaskDataError> {
    for key in keys {
        if let Some(v) = record.get(*key) {
            let label = v.as_str().ok_or(TaskDataError::MalformedRecord { index, field: "difficulty" })?;
            return Difficulty::from_source_label(label)
                .ok_or_else(|| TaskDataError::UnknownDifficulty { index, label: label.to_string() });
        }
    }
    Ok(Difficulty::Medium)
}

/// Conventional benchmark layout: `<db_root>/<db_id>/<db_id>.sqlite`.
fn benchmark_db_path(db_root: &Path, db_id: &str) -> PathBuf {
    db_root.join(db_id).join(format!("{db_id}.sqlite"))
}

/// Load a dataset. `db_root` is required for the benchmark layouts (schemas
/// are introspected from the database files, one open per distinct database)
/// and ignored for `jsonl`. Every task's database file must exist, ids must
/// be unique, and the resulting list must be non-empty.
pub fn load_tasks(path: &Path, format: TaskFormat, db_root: Option<&Path>) -> Result<Vec<TaskInstance>, TaskDataError> {
    let text = fs::read_to_string(path).map_err(|source| TaskDataError::Io { path: path.to_path_buf(), source })?;
    let mut tasks = match format {
        TaskFormat::Jsonl => {
            let mut out = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let task: TaskInstance = serde_json::from_str(line).map_err(|e| TaskDataError::Json {
                    path: path.to_path_buf(),
                    index: lineno + 1,
                    message: e.to_string(),
                })?;
                out.push(task);
            }
            out
        }
        TaskFormat::SpiderJson | TaskFormat::BirdJson => {
            let root = db_root.ok_or(TaskDataError::MissingDbRoot)?;
            let records: Vec<Value> = serde_json::from_str(&text).map_err(|e| TaskDataError::Json {
                path: path.to_path_buf(),
                index: 0,
                message: e.to_string(),
            })?;
            let mut schema_cache: BTreeMap<String, SchemaCatalog> = BTreeMap::new();
            let mut out = Vec::with_capacity(records.len());
            for (index, record) in records.iter().enumerate() {
                let database_id = str_field(record, "db_id", index)?;
                let question = str_field(record, "question", index)?;
                let (id, gold_sql, external_knowledge, difficulty) = match format {
                    TaskFormat::SpiderJson => (
                        format!("spider-{index}"),
                        str_field(record, "query", index)?,
                        None,
                        difficulty_field(record, &["difficulty", "hardness"], index)?,
                    ),
                    TaskFormat::BirdJson => {
                        let id = match record.get("question_id") {
                            Some(Value::Number(n)) => format!("bird-{n}"),
                            Some(Value::String(s)) => format!("bird-{s}"),
                            _ => return Err(TaskDataError::MalformedRecord { index, field: "question_id" }),
                        };
                        let evidence = record
                            .get("evidence")
                            .and_then(Value::as_str)
                            .map(str::to_string)
                            .filter(|s| !s.trim().is_empty());
                        (id, str_field(record, "SQL", index)?, evidence, difficulty_field(record, &["difficulty"], index)?)
                    }
                    TaskFormat::Jsonl => unreachable!(),
                };
                let db_path = benchmark_db_path(root, &database_id);
                if !db_path.exists() {
                    return Err(TaskDataError::MissingDatabase { id, path: db_path });
                }
                let schema = match schema_cache.get(&database_id) {
                    Some(s) => s.clone(),
                    None => {
                        let env = open_database(&db_path, true)?;
                        let s = introspect_schema(&env)?;
                        schema_cache.insert(database_id.clone(), s.clone());
                        s
                    }
                };
                out.push(TaskInstance {
                    id,
                    question,
                    database_id,
                    db_path,
                    schema,
                    gold_sql,
                    difficulty,
                    external_knowledge,
                    engine: DEFAULT_ENGINE.to_string(),
                });
            }
            out
        }
    };

    if tasks.is_empty() {
        return Err(TaskDataError::EmptyDataset(path.to_path_buf()));
    }
    let mut seen = BTreeSet::new();
    for task in &tasks {
        if !seen.insert(task.id.clone()) {
            return Err(TaskDataError::DuplicateTaskId(task.id.clone()));
        }
        if !task.db_path.exists() {
            return Err(TaskDataError::MissingDatabase { id: task.id.clone(), path: task.db_path.clone() });
        }
        task.schema.validate()?;
    }
    // Deterministic order for jsonl is file order; benchmark formats are
    // record order. Nothing to sort, but keep ids stable for downstream ties.
    tasks.shrink_to_fit();
    Ok(tasks)
}

/// Write tasks in the self-contained JSONL layout (inverse of
/// [`load_tasks`] with [`TaskFormat::Jsonl`]).
pub fn save_tasks(tasks: &[TaskInstance], path: &Path) -> Result<(), TaskDataError> {
    let mut out = String::new();
    for task in tasks {
        out.push_str(&serde_json::to_string(task).expect("task serialization is infallible"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| TaskDataError::Io { path: path.to_path_buf(), source })
}

/// Render a catalog as the prompt's schema block:
///
/// ```text
/// Table: products
/// - id (INTEGER, PRIMARY KEY)
/// - name (TEXT)
///
/// Table: orders
/// - id (INTEGER, PRIMARY KEY)
/// - product_id (INTEGER)
///
/// Foreign keys: orders.product_id = products.id
/// ```
pub fn render_schema(catalog: &SchemaCatalog) -> String {
    let mut blocks: Vec<String> = Vec::with_capacity(catalog.tables.len() + 1);
    for table in &catalog.tables {
        let mut block = format!("Table: {}", table.name);
        for col in &table.columns {
            if col.is_primary_key {
                block.push_str(&format!("\n- {} ({}, PRIMARY KEY)", col.name, col.decl_type));
            } else {
                block.push_str(&format!("\n- {} ({})", col.name, col.decl_type));
            }
        }
        blocks.push(block);
    }
    if !catalog.foreign_keys.is_empty() {
        let fk_lines: Vec<String> = catalog
            .foreign_keys
            .iter()
            .map(|fk| format!("Foreign keys: {}.{} = {}.{}", fk.from_table, fk.from_column, fk.to_table, fk.to_column))
            .collect();
        blocks.push(fk_lines.join("\n"));
    }
    blocks.join("\n\n")
}

/// The four placeholder markers every prompt template must carry.
pub const TEMPLATE_PLACEHOLDERS: [&str; 4] = ["{engine}", "{schema}", "{external_knowledge}", "{question}"];

/// Default system-prompt template: task framing, the four placeholders, tag
/// protocol rules, and a worked example.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "Task Overview:
You are a SQL expert working against a live database. Answer the question below by exploring the database and writing SQL, within a limited number of turns.

Database Engine:
{engine}

Database Schema:
{schema}
The schema lists every table with its columns, declared types, primary keys, and foreign-key relationships.

External Knowledge:
{external_knowledge}

Question:
{question}

Instructions:
- Return exactly the information the question asks for: no extra columns, no missing columns.
- Work stepwise: read the schema, probe the data where helpful, check intermediate results, and refine your query until you are confident.

Response format:
- Think inside <reasoning>...</reasoning> tags at every turn, including after each new observation.
- To probe the database, write one SQL statement inside <sql>...</sql> tags. The result arrives inside <observation>...</observation> tags, truncated to the first 50 rows.
- If an action is invalid or the SQL fails, the observation says so; revise and try again.
- When you are confident, commit your final answer as a single SQL query inside <solution>...</solution> tags. This ends the task.

Example:
<reasoning>I need the average product price; the products table has a price column.</reasoning>
<sql>SELECT AVG(price) FROM products;</sql>
<observation>
   AVG(price)
0       24.75
You have 9 turns left to complete the task.
</observation>
<reasoning>The average is 24.75, and the query already answers the question.</reasoning>
<solution>SELECT AVG(price) FROM products;</solution>";

/// Substitute markers in a single left-to-right pass, so substituted content
/// is never itself rescanned for markers.
fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    loop {
        let next = vars
            .iter()
            .filter_map(|(marker, value)| rest.find(marker).map(|at| (at, *marker, *value)))
            .min_by_key(|(at, ..)| *at);
        match next {
            Some((at, marker, value)) => {
                out.push_str(&rest[..at]);
                out.push_str(value);
                rest = &rest[at + marker.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

/// Render the opening dialogue for a task: the substituted template as the
/// system message and the bare question as the first user message. Absent
/// external knowledge substitutes as `None`. Errors if the template lacks any
/// of the four placeholders or if a marker survives substitution.
pub fn build_prompt(task: &TaskInstance, template: &str) -> Result<Vec<ChatMessage>, TaskDataError> {
    let missing: Vec<String> =
        TEMPLATE_PLACEHOLDERS.iter().filter(|m| !template.contains(**m)).map(|m| m.to_string()).collect();
    if !missing.is_empty() {
        return Err(TaskDataError::MissingPlaceholders(missing));
    }
    let schema_text = render_schema(&task.schema);
    let knowledge = task.external_knowledge.as_deref().unwrap_or("None");
    let system = substitute(
        template,
        &[
            ("{engine}", task.engine.as_str()),
            ("{schema}", schema_text.as_str()),
            ("{external_knowledge}", knowledge),
            ("{question}", task.question.as_str()),
        ],
    );
    for marker in TEMPLATE_PLACEHOLDERS {
        if system.contains(marker) {
            return Err(TaskDataError::ResidualPlaceholder(marker.to_string()));
        }
    }
    Ok(vec![
        ChatMessage { role: Role::System, content: system },
        ChatMessage { role: Role::User, content: task.question.clone() },
    ])
}
