//! Training-data curation.
//!
//! Each candidate question is attempted several times by a reference agent;
//! the per-attempt success flags give a pass rate `p = pass@G`. A question
//! is most useful for RL when it is neither trivial nor hopeless, so its
//! difficulty score is `p` itself inside (0, 1) and 1 at the extremes —
//! smaller is better. Balanced selection keeps the `n` lowest-scoring
//! questions; a separate exploration set concatenates zero-pass questions
//! from several sources. SFT curation filters finished trajectories down to
//! execution-correct ones with a hardest-first quota.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rollout::Trajectory;
use crate::taskdata::Difficulty;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("quota {requested} exceeds pool of {available} eligible records")]
    QuotaExceedsPool { requested: usize, available: usize },
    #[error("exploration sources overlap on task ids: {0:?}")]
    OverlappingIds(Vec<String>),
}

/// Where a record landed after curation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Balanced,
    Exploration,
    Rejected,
}

/// One question's curation state: its per-attempt success flags and the
/// derived statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub task_id: String,
    #[serde(rename = "flags")]
    pub outcome_flags: Vec<bool>,
    pub pass_at_g: f64,
    pub score: f64,
    pub bucket: Bucket,
}

impl CurationRecord {
    /// Build a record from raw attempt flags; it starts out rejected until a
    /// selection pass claims it.
    pub fn from_flags(task_id: impl Into<String>, outcome_flags: Vec<bool>) -> Self {
        let pass_at_g = pass_at_g(&outcome_flags);
        CurationRecord {
            task_id: task_id.into(),
            outcome_flags,
            pass_at_g,
            score: difficulty_score(pass_at_g),
            bucket: Bucket::Rejected,
        }
    }
}

/// Fraction of attempts that succeeded.
pub fn pass_at_g(flags: &[bool]) -> f64 {
    assert!(!flags.is_empty(), "pass@G requires at least one attempt");
    flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
}

/// Difficulty score: the pass rate itself strictly inside (0, 1), and 1 at
/// both extremes — always-solved and never-solved questions are equally
/// uninformative for group-relative training (their groups have zero reward
/// variance). Lower scores are better.
pub fn difficulty_score(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "pass rate must be in [0, 1], got {p}");
    if p > 0.0 && p < 1.0 {
        p
    } else {
        1.0
    }
}

/// Keep the `n` lowest-scoring records (ties broken by task id for
/// determinism), marking them [`Bucket::Balanced`].
pub fn select_balanced(records: &[CurationRecord], n: usize) -> Result<Vec<CurationRecord>, CurationError> {
    if n > records.len() {
        return Err(CurationError::QuotaExceedsPool { requested: n, available: records.len() });
    }
    let mut sorted: Vec<&CurationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.task_id.cmp(&b.task_id)));
    Ok(sorted[..n]
        .iter()
        .map(|r| CurationRecord { bucket: Bucket::Balanced, ..(*r).clone() })
        .collect())
}

/// The zero-pass exploration set and where its pieces came from.
#[derive(Clone, Debug, Serialize)]
pub struct ExplorationSet {
    pub records: Vec<CurationRecord>,
    pub from_post_sft: usize,
    pub from_synsql_zero: usize,
    pub from_spider_zero: usize,
}

/// Concatenate three sources of hard (zero-pass) questions into one
/// exploration set. Sources must be disjoint by task id.
pub fn assemble_exploration(
    post_sft: &[CurationRecord],
    synsql_zero: &[CurationRecord],
    spider_zero: &[CurationRecord],
) -> Result<ExplorationSet, CurationError> {
    let mut seen = std::collections::BTreeMap::new();
    let mut overlaps = Vec::new();
    for record in post_sft.iter().chain(synsql_zero).chain(spider_zero) {
        if seen.insert(record.task_id.clone(), ()).is_some() {
            overlaps.push(record.task_id.clone());
        }
    }
    if !overlaps.is_empty() {
        overlaps.sort();
        overlaps.dedup();
        return Err(CurationError::OverlappingIds(overlaps));
    }
    let records: Vec<CurationRecord> = post_sft
        .iter()
        .chain(synsql_zero)
        .chain(spider_zero)
        .map(|r| CurationRecord { bucket: Bucket::Exploration, ..r.clone() })
        .collect();
    Ok(ExplorationSet {
        records,
        from_post_sft: post_sft.len(),
        from_synsql_zero: synsql_zero.len(),
        from_spider_zero: spider_zero.len(),
    })
}

/// A finished trajectory paired with its question's difficulty, as SFT
/// curation consumes them.
#[derive(Clone, Debug)]
pub struct SftCandidate {
    pub trajectory: Trajectory,
    pub difficulty: Difficulty,
}

/// Outcome of SFT filtering.
#[derive(Debug)]
pub struct SftSelection {
    pub selected: Vec<SftCandidate>,
    /// True when fewer execution-correct trajectories existed than the quota
    /// asked for.
    pub shortfall: bool,
    pub requested: usize,
}

/// Hardest-first priority used when no explicit order is given.
pub const DEFAULT_SFT_PRIORITY: [Difficulty; 4] =
    [Difficulty::Extra, Difficulty::Hard, Difficulty::Medium, Difficulty::Simple];

/// Keep only execution-correct trajectories, order them by difficulty
/// priority (then task id), and truncate to the quota. A pool smaller than
/// the quota is not an error — the selection just flags the shortfall.
pub fn filter_sft_trajectories(
    candidates: Vec<SftCandidate>,
    quota: usize,
    priority: &[Difficulty],
) -> SftSelection {
    let mut correct: Vec<SftCandidate> = candidates
        .into_iter()
        .filter(|c| c.trajectory.reward.as_ref().is_some_and(|r| r.r_exec == 1))
        .collect();
    let rank = |d: Difficulty| priority.iter().position(|&p| p == d).unwrap_or(priority.len());
    correct.sort_by(|a, b| {
        rank(a.difficulty).cmp(&rank(b.difficulty)).then_with(|| a.trajectory.task_id.cmp(&b.trajectory.task_id))
    });
    let shortfall = correct.len() < quota;
    correct.truncate(quota);
    SftSelection { selected: correct, shortfall, requested: quota }
}
