//! The six-term reward panel.
//!
//! A finished trajectory is scored on six components:
//!
//! - `r_exec` (binary): the final SQL's execution result equals the gold
//!   SQL's result.
//! - `r_turns` (binary): the trajectory finished within the difficulty's turn
//!   allowance (hard/extra additionally require execution correctness).
//! - `r_schema` (0–1): Jaccard similarity between the schema items the final
//!   and gold SQL reference; hallucinated identifiers enlarge the union.
//! - `r_bigram` (0–1): Jaccard similarity between the token-bigram sets of
//!   the final and gold SQL.
//! - `r_syntax` (binary): the final SQL executes without error.
//! - `r_format` (binary): every assistant turn is well-formed and the last
//!   one carries a solution block.
//!
//! The total is the weighted sum; at the default weights (5, 2, 1, 1, 1, 1)
//! it lives in [0, 11].

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{Expr, ObjectName, Query, TableFactor, Visit, Visitor};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;
use thiserror::Error;

use crate::protocol::check_format;
use crate::rollout::{Termination, Trajectory};
use crate::sqlenv::{execute_sql, results_equal, ExecLimits, SqlEnv};
use crate::taskdata::{Difficulty, SchemaCatalog, TaskInstance};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("gold SQL failed to execute: {message}")]
    GoldNotExecutable { message: String },
}

/// Per-component weights for the total reward.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub exec: f64,
    pub turns: f64,
    pub schema: f64,
    pub bigram: f64,
    pub syntax: f64,
    pub format: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { exec: 5.0, turns: 2.0, schema: 1.0, bigram: 1.0, syntax: 1.0, format: 1.0 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [
            ("exec", self.exec),
            ("turns", self.turns),
            ("schema", self.schema),
            ("bigram", self.bigram),
            ("syntax", self.syntax),
            ("format", self.format),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(format!("weight `{name}` must be a finite non-negative number, got {w}"));
            }
        }
        Ok(())
    }
}

/// The six reward components before weighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardComponents {
    pub r_exec: u8,
    pub r_turns: u8,
    pub r_schema: f64,
    pub r_bigram: f64,
    pub r_syntax: u8,
    pub r_format: u8,
}

/// Components plus the weighted total, as persisted with trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_exec: u8,
    pub r_turns: u8,
    pub r_schema: f64,
    pub r_bigram: f64,
    pub r_syntax: u8,
    pub r_format: u8,
    pub total: f64,
}

/// Weighted sum of the components. With binary components at 1 and the
/// similarity terms at 1.0, the default weights give exactly 11.
pub fn total_reward(components: &RewardComponents, weights: &RewardWeights) -> RewardBreakdown {
    let total = weights.exec * f64::from(components.r_exec)
        + weights.turns * f64::from(components.r_turns)
        + weights.schema * components.r_schema
        + weights.bigram * components.r_bigram
        + weights.syntax * f64::from(components.r_syntax)
        + weights.format * f64::from(components.r_format);
    RewardBreakdown {
        r_exec: components.r_exec,
        r_turns: components.r_turns,
        r_schema: components.r_schema,
        r_bigram: components.r_bigram,
        r_syntax: components.r_syntax,
        r_format: components.r_format,
        total,
    }
}

/// Execution-match reward: 1 iff the prediction runs cleanly and its result
/// equals the gold result (untruncated comparison). A gold that fails to
/// execute is a dataset error, not a zero.
pub fn exec_reward(pred_sql: &str, gold_sql: &str, env: &SqlEnv, limits: &ExecLimits) -> Result<u8, RewardError> {
    let scoring_limits = untruncated(limits);
    let gold = execute_sql(env, gold_sql, &scoring_limits);
    if let Some(message) = gold.error_message {
        return Err(RewardError::GoldNotExecutable { message });
    }
    let pred = execute_sql(env, pred_sql, &scoring_limits);
    Ok(u8::from(pred.is_ok() && results_equal(&pred, &gold)))
}

/// Result comparison must see complete result sets; the row cap only guards
/// observations shown to the agent.
fn untruncated(limits: &ExecLimits) -> ExecLimits {
    ExecLimits { max_rows_fetched: usize::MAX, ..limits.clone() }
}

/// Turn-efficiency reward for a trajectory that finished at turn `t` under
/// budget `turn_budget`:
///
/// - simple: 1 iff `t ≤ 2`
/// - medium: 1 iff `t ≤ 3`
/// - hard/extra: 1 iff the final SQL was execution-correct and `t < budget`
pub fn turn_reward(difficulty: Difficulty, t: usize, turn_budget: usize, exec_correct: u8) -> u8 {
    let hit = match difficulty {
        Difficulty::Simple => t <= 2,
        Difficulty::Medium => t <= 3,
        Difficulty::Hard | Difficulty::Extra => exec_correct == 1 && t < turn_budget,
    };
    u8::from(hit)
}

/// Lowercasing SQL tokenizer: maximal alphanumeric/underscore runs are one
/// token each, quoted literals and identifiers (`'…'`, `"…"`, `` `…` ``) are
/// one token each including their quotes, and every other non-space
/// character stands alone — so `a.b=c` yields `[a, ., b, =, c]`.
pub fn tokenize_sql(sql: &str) -> Vec<String> {
    let chars: Vec<char> = sql.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect::<String>().to_lowercase());
        } else if c == '\'' || c == '"' || c == '`' {
            let quote = c;
            let start = i;
            i += 1;
            while i < chars.len() {
                if chars[i] == quote {
                    if chars.get(i + 1) == Some(&quote) {
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect::<String>().to_lowercase());
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    tokens
}

fn bigram_set(tokens: &[String]) -> BTreeSet<(String, String)> {
    tokens.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect()
}

/// Jaccard similarity of the two queries' token-bigram sets. Two queries with
/// no bigrams at all count as identical (1); one empty side scores 0.
pub fn bigram_reward(pred_sql: &str, gold_sql: &str) -> f64 {
    let pred = bigram_set(&tokenize_sql(pred_sql));
    let gold = bigram_set(&tokenize_sql(gold_sql));
    jaccard(&pred, &gold)
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let intersection = a.intersection(b).count();
    let union = a.union(b).count();
    intersection as f64 / union as f64
}

/// The schema identifiers one query references, split into catalog matches
/// (`known`, canonical lowercase) and hallucinations (`unknown`). Aliases and
/// CTE names resolve away and are never items themselves.
#[derive(Clone, Debug, Default, PartialEq)]
struct IdentifierProfile {
    known: BTreeSet<String>,
    unknown: BTreeSet<String>,
}

/// AST walk collecting relations, aliases, CTE names, and expression
/// identifiers. Resolution happens after the walk, since projections are
/// visited before FROM clauses.
#[derive(Default)]
struct IdentCollector {
    relations: Vec<String>,
    aliases: BTreeSet<String>,
    cte_names: BTreeSet<String>,
    /// (qualifier, name) pairs from expression identifiers.
    idents: Vec<(Option<String>, String)>,
}

impl Visitor for IdentCollector {
    type Break = Infallible;

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<Self::Break> {
        if let Some(with) = &query.with {
            for cte in &with.cte_tables {
                self.cte_names.insert(cte.alias.name.value.to_lowercase());
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_relation(&mut self, relation: &ObjectName) -> ControlFlow<Self::Break> {
        if let Some(last) = relation.0.last() {
            if let Some(ident) = last.as_ident() {
                self.relations.push(ident.value.to_lowercase());
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_table_factor(&mut self, table_factor: &TableFactor) -> ControlFlow<Self::Break> {
        let alias = match table_factor {
            TableFactor::Table { alias, .. } => alias,
            TableFactor::Derived { alias, .. } => alias,
            _ => &None,
        };
        if let Some(alias) = alias {
            self.aliases.insert(alias.name.value.to_lowercase());
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<Self::Break> {
        match expr {
            Expr::Identifier(ident) => self.idents.push((None, ident.value.to_lowercase())),
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let qualifier = parts[parts.len() - 2].value.to_lowercase();
                let name = parts[parts.len() - 1].value.to_lowercase();
                self.idents.push((Some(qualifier), name));
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

fn parsed_profile(sql: &str, catalog: &SchemaCatalog) -> Option<IdentifierProfile> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql).ok()?;
    let mut collector = IdentCollector::default();
    let _ = statements.visit(&mut collector);

    let vocabulary = catalog.identifier_set();
    let mut profile = IdentifierProfile::default();
    let mut classify = |name: &str| {
        if collector.aliases.contains(name) || collector.cte_names.contains(name) {
            return;
        }
        if vocabulary.contains(name) {
            profile.known.insert(name.to_string());
        } else {
            profile.unknown.insert(name.to_string());
        }
    };
    for relation in &collector.relations {
        classify(relation);
    }
    for (qualifier, name) in &collector.idents {
        if let Some(q) = qualifier {
            classify(q);
        }
        classify(name);
    }
    Some(profile)
}

/// Structural words skipped by the token-level fallback.
const SQL_KEYWORDS: &[&str] = &[
    "select", "from", "where", "join", "on", "group", "by", "order", "having", "limit", "offset", "as", "and",
    "or", "not", "in", "exists", "distinct", "like", "glob", "between", "union", "intersect", "except", "all",
    "case", "when", "then", "else", "end", "inner", "left", "right", "full", "outer", "cross", "natural", "is",
    "null", "asc", "desc", "with", "recursive", "using", "values", "cast", "collate", "escape", "if",
    "true", "false",
];

fn is_number(token: &str) -> bool {
    token.chars().next().is_some_and(|c| c.is_ascii_digit())
}

/// Token-level fallback for SQL the parser rejects: catalog-vocabulary hits
/// count as known items; unknown words count only in column position —
/// table-position words (right after FROM/JOIN) and their aliases are
/// excluded, as are function names and numbers.
fn token_profile(sql: &str, catalog: &SchemaCatalog) -> IdentifierProfile {
    let tokens = tokenize_sql(sql);
    let vocabulary = catalog.identifier_set();
    let is_word = |t: &str| t.chars().next().is_some_and(|c| c.is_alphanumeric() || c == '_');

    // First pass: spot aliases introduced after table-position words.
    let mut aliases: BTreeSet<String> = BTreeSet::new();
    for (i, token) in tokens.iter().enumerate() {
        if !(token == "from" || token == "join") {
            continue;
        }
        let Some(table_tok) = tokens.get(i + 1).filter(|t| is_word(t) && !SQL_KEYWORDS.contains(&t.as_str())) else {
            continue;
        };
        if is_number(table_tok) {
            continue;
        }
        let mut j = i + 2;
        if tokens.get(j).map(String::as_str) == Some("as") {
            j += 1;
        }
        if let Some(alias_tok) = tokens.get(j) {
            if is_word(alias_tok)
                && !SQL_KEYWORDS.contains(&alias_tok.as_str())
                && !vocabulary.contains(alias_tok.as_str())
                && !is_number(alias_tok)
            {
                aliases.insert(alias_tok.clone());
            }
        }
    }

    let mut profile = IdentifierProfile::default();
    for (i, token) in tokens.iter().enumerate() {
        if !is_word(token) || SQL_KEYWORDS.contains(&token.as_str()) || is_number(token) || aliases.contains(token) {
            continue;
        }
        let table_position = i > 0 && (tokens[i - 1] == "from" || tokens[i - 1] == "join");
        if vocabulary.contains(token.as_str()) {
            profile.known.insert(token.clone());
        } else if !table_position && tokens.get(i + 1).map(String::as_str) != Some("(") {
            profile.unknown.insert(token.clone());
        }
    }
    profile
}

fn identifier_profile(sql: &str, catalog: &SchemaCatalog) -> IdentifierProfile {
    parsed_profile(sql, catalog).unwrap_or_else(|| token_profile(sql, catalog))
}

/// The catalog items (tables and columns, canonical lowercase) the SQL
/// references, with aliases resolved and case folded. Hallucinated
/// identifiers are not included — they only show up in [`schema_reward`]'s
/// union.
pub fn extract_schema_items(sql: &str, catalog: &SchemaCatalog) -> BTreeSet<String> {
    identifier_profile(sql, catalog).known
}

/// Schema-linking reward: Jaccard similarity over referenced schema items,
/// where identifiers that match nothing in the catalog still enlarge the
/// union. Symmetric in its two arguments; 1 when neither query references
/// any identifier.
pub fn schema_reward(pred_sql: &str, gold_sql: &str, catalog: &SchemaCatalog) -> f64 {
    let pred = identifier_profile(pred_sql, catalog);
    let gold = identifier_profile(gold_sql, catalog);
    let pred_items: BTreeSet<String> = pred.known.union(&pred.unknown).cloned().collect();
    let gold_items: BTreeSet<String> = gold.known.union(&gold.unknown).cloned().collect();
    jaccard(&pred_items, &gold_items)
}

/// Score a finished trajectory against gold SQL, schema, and difficulty.
///
/// The finishing turn `t` is the solution turn's index for solution
/// terminations and the full budget for budget-forced and policy-error
/// trajectories (a forced or aborted trajectory never counts as finishing
/// early). `r_exec = 1` implies `r_syntax = 1` by construction: both come
/// from the same execution.
pub fn score_trajectory_parts(
    trajectory: &Trajectory,
    gold_sql: &str,
    catalog: &SchemaCatalog,
    difficulty: Difficulty,
    env: &SqlEnv,
    limits: &ExecLimits,
    weights: &RewardWeights,
) -> Result<RewardBreakdown, RewardError> {
    let scoring_limits = untruncated(limits);
    let gold = execute_sql(env, gold_sql, &scoring_limits);
    if let Some(message) = gold.error_message {
        return Err(RewardError::GoldNotExecutable { message });
    }
    let (r_exec, r_syntax) = match trajectory.final_sql.as_deref() {
        Some(sql) => {
            let pred = execute_sql(env, sql, &scoring_limits);
            (u8::from(pred.is_ok() && results_equal(&pred, &gold)), u8::from(pred.is_ok()))
        }
        None => (0, 0),
    };
    let final_sql = trajectory.final_sql.as_deref().unwrap_or("");
    let raw_turns: Vec<&str> = trajectory.turns.iter().map(|turn| turn.raw.as_str()).collect();
    let t = match trajectory.termination {
        Termination::Solution => trajectory.turns.last().map(|turn| turn.index).unwrap_or(trajectory.turn_budget),
        Termination::BudgetForced | Termination::PolicyError => trajectory.turn_budget,
    };
    let components = RewardComponents {
        r_exec,
        r_turns: turn_reward(difficulty, t, trajectory.turn_budget, r_exec),
        r_schema: schema_reward(final_sql, gold_sql, catalog),
        r_bigram: bigram_reward(final_sql, gold_sql),
        r_syntax,
        r_format: check_format(&raw_turns),
    };
    Ok(total_reward(&components, weights))
}

/// [`score_trajectory_parts`] with the gold/schema/difficulty taken from a
/// task instance.
pub fn score_trajectory(
    trajectory: &Trajectory,
    task: &TaskInstance,
    env: &SqlEnv,
    limits: &ExecLimits,
    weights: &RewardWeights,
) -> Result<RewardBreakdown, RewardError> {
    score_trajectory_parts(trajectory, &task.gold_sql, &task.schema, task.difficulty, env, limits, weights)
}
