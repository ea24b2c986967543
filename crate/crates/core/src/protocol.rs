//! Tagged wire protocol between the agent and the environment.
//!
//! Assistant turns carry `<reasoning>…</reasoning>` followed by exactly one
//! action: `<sql>…</sql>` to probe the database or `<solution>…</solution>`
//! to commit a final answer. The environment replies with
//! `<observation>…</observation>` blocks containing a rendered result table,
//! an engine error, or a fixed invalid-action notice, always followed by a
//! turn-countdown sentence. The strings in this module are a byte-exact wire
//! contract: serialized trajectories and recorded transcripts depend on them,
//! so they must not be reworded.

use serde::{Deserialize, Serialize};

use crate::sqlenv::{ExecOutcome, SqlValue};

/// Opening tag for the reasoning block.
pub const REASONING_OPEN: &str = "<reasoning>";
/// Closing tag for the reasoning block.
pub const REASONING_CLOSE: &str = "</reasoning>";
/// Opening tag for an exploratory SQL action.
pub const SQL_OPEN: &str = "<sql>";
/// Closing tag for an exploratory SQL action.
pub const SQL_CLOSE: &str = "</sql>";
/// Opening tag for the terminal solution action.
pub const SOLUTION_OPEN: &str = "<solution>";
/// Closing tag for the terminal solution action.
pub const SOLUTION_CLOSE: &str = "</solution>";
/// Opening tag for environment feedback injected into the dialogue.
pub const OBSERVATION_OPEN: &str = "<observation>";
/// Closing tag for environment feedback.
pub const OBSERVATION_CLOSE: &str = "</observation>";

/// Verbatim feedback for a turn that parsed to no usable action.
pub const INVALID_ACTION_TEXT: &str = "Your previous action is invalid. Think and try again.";

/// Maximum number of data rows rendered into an observation.
pub const MAX_OBSERVATION_ROWS: usize = 50;

/// The turn-countdown sentence appended to every observation.
pub fn turns_left_sentence(turns_left: usize) -> String {
    format!("You have {turns_left} turns left to complete the task.")
}

/// Structural problems found while parsing an assistant turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defect {
    /// No matched `<reasoning>` block.
    MissingReasoning,
    /// An opening tag with no matching closing tag.
    UnclosedTag,
    /// Neither a `<sql>` nor a `<solution>` block.
    NoAction,
    /// Non-whitespace content after the last closing tag.
    TrailingGarbage,
}

/// Result of parsing one raw assistant turn.
///
/// Parsing never fails: malformed turns come back with `well_formed == false`
/// and a sorted, deduplicated defect list. When several blocks of the same
/// kind are matched, the last one wins. When both `sql` and `solution` are
/// present, the solution is the action of record (see [`ParsedAction::action_sql`]).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedAction {
    pub reasoning: Option<String>,
    pub sql: Option<String>,
    pub solution: Option<String>,
    pub well_formed: bool,
    pub defects: Vec<Defect>,
}

impl ParsedAction {
    /// True when the turn carries a terminal `<solution>` block.
    pub fn is_terminal(&self) -> bool {
        self.solution.is_some()
    }

    /// The SQL this turn acts on: the solution if present, else the probe.
    pub fn action_sql(&self) -> Option<&str> {
        self.solution.as_deref().or(self.sql.as_deref())
    }
}

/// What one `scan_blocks` pass over a single tag kind found.
struct BlockScan {
    /// Content of the last matched block, trimmed.
    last: Option<String>,
    /// An opening tag was seen with no matching close after it.
    dangling: bool,
    /// Byte offset just past the last matched closing tag.
    last_close_end: Option<usize>,
}

/// Scan `raw` left to right for matched `open…close` pairs of one tag kind.
/// Nesting is not supported: the first close after an open ends the block.
fn scan_blocks(raw: &str, open: &str, close: &str) -> BlockScan {
    let mut out = BlockScan { last: None, dangling: false, last_close_end: None };
    let mut pos = 0;
    while let Some(rel) = raw[pos..].find(open) {
        let content_start = pos + rel + open.len();
        match raw[content_start..].find(close) {
            Some(crel) => {
                let close_start = content_start + crel;
                out.last = Some(raw[content_start..close_start].trim().to_string());
                out.last_close_end = Some(close_start + close.len());
                pos = close_start + close.len();
            }
            None => {
                out.dangling = true;
                break;
            }
        }
    }
    out
}

/// Parse one raw assistant turn into its blocks and defects.
///
/// Total and idempotent: any input yields a `ParsedAction`, and parsing the
/// same bytes twice yields identical results.
pub fn parse_action(raw: &str) -> ParsedAction {
    let reasoning = scan_blocks(raw, REASONING_OPEN, REASONING_CLOSE);
    let sql = scan_blocks(raw, SQL_OPEN, SQL_CLOSE);
    let solution = scan_blocks(raw, SOLUTION_OPEN, SOLUTION_CLOSE);

    let mut defects = Vec::new();
    if reasoning.last.is_none() {
        defects.push(Defect::MissingReasoning);
    }
    let any_dangling = reasoning.dangling || sql.dangling || solution.dangling;
    if any_dangling {
        defects.push(Defect::UnclosedTag);
    }
    let has_action = sql.last.is_some() || solution.last.is_some();
    if !has_action {
        defects.push(Defect::NoAction);
    }
    if has_action && !any_dangling {
        let last_end = [reasoning.last_close_end, sql.last_close_end, solution.last_close_end]
            .into_iter()
            .flatten()
            .max()
            .expect("an action block was matched");
        if !raw[last_end..].trim().is_empty() {
            defects.push(Defect::TrailingGarbage);
        }
    }
    defects.sort_unstable();
    defects.dedup();

    ParsedAction {
        well_formed: defects.is_empty(),
        reasoning: reasoning.last,
        sql: sql.last,
        solution: solution.last,
        defects,
    }
}

/// The three kinds of environment feedback.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    /// A rendered result table.
    Result,
    /// An engine or guard error message.
    Error,
    /// The fixed invalid-action notice.
    InvalidAction,
}

/// One observation as injected into the dialogue (sans the wrapping tags).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: ObservationKind,
    pub text: String,
    pub turns_left: usize,
}

/// Render a numeric cell the way a dataframe would: floats keep a decimal
/// point even when whole, everything else prints minimally.
fn format_real(x: f64) -> String {
    if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

fn display_value(v: &SqlValue) -> String {
    match v {
        SqlValue::Null => "None".to_string(),
        SqlValue::Integer(i) => i.to_string(),
        SqlValue::Real(x) => format_real(*x),
        SqlValue::Text(s) => s.clone(),
        SqlValue::Blob(b) => {
            let hex: String = b.iter().map(|byte| format!("{byte:02x}")).collect();
            format!("x'{hex}'")
        }
    }
}

fn pad_left(s: &str, width: usize) -> String {
    let len = s.chars().count();
    if len >= width {
        s.to_string()
    } else {
        format!("{}{s}", " ".repeat(width - len))
    }
}

/// Render a result set as a fixed-width table with a leading row-index
/// column, right-aligned cells, and two-space column separators:
///
/// ```text
///    AVG(price)
/// 0       24.75
/// ```
///
/// At most [`MAX_OBSERVATION_ROWS`] data rows are rendered; when `total_rows`
/// exceeds the rendered count a truncation notice line is appended.
pub fn render_table(columns: &[String], rows: &[Vec<SqlValue>], total_rows: usize) -> String {
    if columns.is_empty() {
        return String::new();
    }
    let shown = rows.len().min(MAX_OBSERVATION_ROWS);
    let cells: Vec<Vec<String>> = rows[..shown]
        .iter()
        .map(|row| row.iter().map(display_value).collect())
        .collect();

    let mut widths: Vec<usize> = columns.iter().map(|c| c.chars().count()).collect();
    for row in &cells {
        for (j, cell) in row.iter().enumerate() {
            if j < widths.len() {
                widths[j] = widths[j].max(cell.chars().count());
            }
        }
    }
    let idx_width = if shown == 0 { 1 } else { (shown - 1).to_string().len() };

    let mut lines = Vec::with_capacity(shown + 2);
    let mut header = " ".repeat(idx_width);
    for (j, col) in columns.iter().enumerate() {
        header.push_str("  ");
        header.push_str(&pad_left(col, widths[j]));
    }
    lines.push(header);
    for (i, row) in cells.iter().enumerate() {
        let mut line = pad_left(&i.to_string(), idx_width);
        for (j, cell) in row.iter().enumerate() {
            line.push_str("  ");
            line.push_str(&pad_left(cell, widths.get(j).copied().unwrap_or(0)));
        }
        lines.push(line);
    }
    if total_rows > shown {
        lines.push(format!("[Showing first {shown} of {total_rows} rows]"));
    }
    lines.join("\n")
}

/// Render an execution outcome into an observation: a table for success, the
/// engine message for failure. The turn-countdown sentence is always the last
/// line of the text.
pub fn render_observation(outcome: &ExecOutcome, turns_left: usize) -> Observation {
    let (kind, body) = match &outcome.error_message {
        None => (ObservationKind::Result, render_table(&outcome.columns, &outcome.rows, outcome.row_count_total)),
        Some(message) => (ObservationKind::Error, message.clone()),
    };
    let text = if body.is_empty() {
        turns_left_sentence(turns_left)
    } else {
        format!("{body}\n{}", turns_left_sentence(turns_left))
    };
    Observation { kind, text, turns_left }
}

/// The observation for a turn that parsed to no usable action.
pub fn invalid_action_observation(turns_left: usize) -> Observation {
    Observation {
        kind: ObservationKind::InvalidAction,
        text: format!("{INVALID_ACTION_TEXT}\n{}", turns_left_sentence(turns_left)),
        turns_left,
    }
}

/// Wrap observation text in its dialogue tags.
pub fn wrap_observation(obs: &Observation) -> String {
    format!("{OBSERVATION_OPEN}\n{}\n{OBSERVATION_CLOSE}", obs.text)
}

/// Format reward over a whole trajectory's raw assistant turns: 1 when every
/// turn is well-formed and the final turn carries a solution block, else 0.
pub fn check_format<S: AsRef<str>>(turn_texts: &[S]) -> u8 {
    let Some(last) = turn_texts.last() else {
        return 0;
    };
    let all_well_formed = turn_texts.iter().all(|t| parse_action(t.as_ref()).well_formed);
    let terminal = parse_action(last.as_ref()).is_terminal();
    u8::from(all_well_formed && terminal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(reasoning: &str, action_open: &str, action: &str, action_close: &str) -> String {
        format!("{REASONING_OPEN}{reasoning}{REASONING_CLOSE}\n{action_open}{action}{action_close}")
    }

    #[test]
    fn well_formed_sql_turn_parses() {
        let raw = turn("look at the table", SQL_OPEN, "SELECT 1", SQL_CLOSE);
        let parsed = parse_action(&raw);
        assert!(parsed.well_formed);
        assert_eq!(parsed.reasoning.as_deref(), Some("look at the table"));
        assert_eq!(parsed.sql.as_deref(), Some("SELECT 1"));
        assert_eq!(parsed.solution, None);
        assert!(parsed.defects.is_empty());
        assert!(!parsed.is_terminal());
    }

    #[test]
    fn solution_turn_is_terminal() {
        let raw = turn("done", SOLUTION_OPEN, "SELECT x FROM t", SOLUTION_CLOSE);
        let parsed = parse_action(&raw);
        assert!(parsed.well_formed);
        assert!(parsed.is_terminal());
        assert_eq!(parsed.action_sql(), Some("SELECT x FROM t"));
    }

    #[test]
    fn unclosed_sql_without_reasoning_has_both_defects() {
        let parsed = parse_action("<sql>SELECT 1");
        assert!(!parsed.well_formed);
        assert_eq!(
            parsed.defects,
            vec![Defect::MissingReasoning, Defect::UnclosedTag, Defect::NoAction]
        );
        assert_eq!(parsed.sql, None);
    }

    #[test]
    fn tagless_text_has_no_action_and_missing_reasoning() {
        let parsed = parse_action("I think the answer is 42.");
        assert!(!parsed.well_formed);
        assert_eq!(parsed.defects, vec![Defect::MissingReasoning, Defect::NoAction]);
    }

    #[test]
    fn last_block_of_a_kind_wins() {
        let raw = format!(
            "{REASONING_OPEN}first{REASONING_CLOSE}{REASONING_OPEN}second{REASONING_CLOSE}\
             {SQL_OPEN}SELECT 1{SQL_CLOSE}{SQL_OPEN}SELECT 2{SQL_CLOSE}"
        );
        let parsed = parse_action(&raw);
        assert_eq!(parsed.reasoning.as_deref(), Some("second"));
        assert_eq!(parsed.sql.as_deref(), Some("SELECT 2"));
        assert!(parsed.well_formed);
    }

    #[test]
    fn solution_wins_over_sql_when_both_present() {
        let raw = format!(
            "{REASONING_OPEN}r{REASONING_CLOSE}{SQL_OPEN}SELECT 1{SQL_CLOSE}{SOLUTION_OPEN}SELECT 2{SOLUTION_CLOSE}"
        );
        let parsed = parse_action(&raw);
        assert!(parsed.is_terminal());
        assert_eq!(parsed.action_sql(), Some("SELECT 2"));
        assert!(parsed.well_formed);
    }

    #[test]
    fn trailing_garbage_is_flagged() {
        let raw = format!("{}\nand that is my answer", turn("r", SQL_OPEN, "SELECT 1", SQL_CLOSE));
        let parsed = parse_action(&raw);
        assert!(!parsed.well_formed);
        assert_eq!(parsed.defects, vec![Defect::TrailingGarbage]);
        assert_eq!(parsed.sql.as_deref(), Some("SELECT 1"));
    }

    #[test]
    fn trailing_whitespace_is_fine() {
        let raw = format!("{}\n  \n", turn("r", SQL_OPEN, "SELECT 1", SQL_CLOSE));
        assert!(parse_action(&raw).well_formed);
    }

    #[test]
    fn parse_is_idempotent() {
        for raw in ["", "<sql>", "<reasoning>a</reasoning>", "junk <solution>x</solution>"] {
            assert_eq!(parse_action(raw), parse_action(raw));
        }
    }

    #[test]
    fn golden_single_cell_table() {
        let rendered = render_table(&["AVG(price)".to_string()], &[vec![SqlValue::Real(24.75)]], 1);
        assert_eq!(rendered, "   AVG(price)\n0       24.75");
    }

    #[test]
    fn null_renders_as_none() {
        let rendered = render_table(&["v".to_string()], &[vec![SqlValue::Null]], 1);
        assert_eq!(rendered, "      v\n0  None");
    }

    #[test]
    fn whole_floats_keep_a_decimal() {
        assert_eq!(format_real(5.0), "5.0");
        assert_eq!(format_real(24.75), "24.75");
        assert_eq!(format_real(-0.5), "-0.5");
    }

    #[test]
    fn index_column_right_aligns_past_ten_rows() {
        let rows: Vec<Vec<SqlValue>> = (0..12).map(|i| vec![SqlValue::Integer(i)]).collect();
        let rendered = render_table(&["n".to_string()], &rows, 12);
        let lines: Vec<&str> = rendered.lines().collect();
        assert_eq!(lines[1], " 0   0");
        assert_eq!(lines[11], "10  10");
    }

    #[test]
    fn truncation_caps_at_fifty_rows_with_notice() {
        let rows: Vec<Vec<SqlValue>> = (0..120).map(|i| vec![SqlValue::Integer(i)]).collect();
        let rendered = render_table(&["n".to_string()], &rows, 120);
        let lines: Vec<&str> = rendered.lines().collect();
        assert_eq!(lines.len(), 1 + 50 + 1);
        assert_eq!(*lines.last().unwrap(), "[Showing first 50 of 120 rows]");
    }

    #[test]
    fn zero_row_table_is_header_only() {
        let rendered = render_table(&["AVG(price)".to_string()], &[], 0);
        assert_eq!(rendered, "   AVG(price)");
    }

    #[test]
    fn invalid_action_text_is_verbatim() {
        let obs = invalid_action_observation(7);
        assert_eq!(
            obs.text,
            "Your previous action is invalid. Think and try again.\nYou have 7 turns left to complete the task."
        );
        assert_eq!(obs.kind, ObservationKind::InvalidAction);
    }

    #[test]
    fn wrapped_observation_has_tag_lines() {
        let obs = invalid_action_observation(1);
        let wrapped = wrap_observation(&obs);
        assert!(wrapped.starts_with("<observation>\n"));
        assert!(wrapped.ends_with("\n</observation>"));
    }

    #[test]
    fn format_reward_requires_terminal_solution() {
        let probe = turn("r", SQL_OPEN, "SELECT 1", SQL_CLOSE);
        let solution = turn("r", SOLUTION_OPEN, "SELECT 2", SOLUTION_CLOSE);
        assert_eq!(check_format(&[probe.as_str(), solution.as_str()]), 1);
        assert_eq!(check_format(&[solution.as_str(), probe.as_str()]), 0);
        assert_eq!(check_format(&[probe.as_str()]), 0);
        assert_eq!(check_format::<&str>(&[]), 0);
    }

    #[test]
    fn format_reward_rejects_any_malformed_turn() {
        let solution = turn("r", SOLUTION_OPEN, "SELECT 2", SOLUTION_CLOSE);
        assert_eq!(check_format(&["free text", solution.as_str()]), 0);
    }
}
