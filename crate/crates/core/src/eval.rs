//! Evaluation: execution accuracy, majority voting, pass@k, data
//! efficiency, and reasoning statistics.
//!
//! Execution accuracy (EX) is the percentage of tasks whose predicted SQL
//! returns the same result as the gold SQL. Majority voting samples several
//! candidates per task and submits the one whose execution result the most
//! candidates agree on. pass@k asks whether any of the first `k` candidates
//! was correct.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Policy, SamplingConfig};
use crate::rollout::{run_trajectory, split_seed, RolloutError, RolloutOptions, Trajectory};
use crate::sqlenv::{execute_sql, open_database, results_equal, EnvError, ExecLimits, ExecOutcome, SqlEnv};
use crate::taskdata::TaskInstance;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("task {task_id}: gold SQL failed to execute: {message}")]
    Gold { task_id: String, message: String },
    #[error("pass@{k} needs {k} candidates per task but a task has only {available}")]
    NotEnoughCandidates { k: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no tasks to evaluate")]
    Empty,
}

/// Per-task evaluation record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: String,
    /// Per-candidate correctness, in candidate order (empty in greedy-only
    /// runs).
    pub candidates: Vec<bool>,
    /// SQL actually submitted (majority-voted when candidates exist).
    pub chosen_sql: Option<String>,
    pub correct: bool,
    /// Policy turns the greedy trajectory took (candidate 0's when greedy
    /// was off).
    pub turns: usize,
    pub reasoning_chars: usize,
}

/// Accuracy-per-example summary: what `delta_pp` points of EX cost in
/// training examples, scaled to points per 1000 examples.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Efficiency {
    pub delta_pp: f64,
    pub n: usize,
    pub value: f64,
}

/// Aggregates for one difficulty label.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct DifficultySlice {
    pub count: usize,
    pub avg_reasoning_chars: f64,
    pub avg_turns: f64,
}

/// How much the agent deliberates: reasoning-block length and turn-count
/// statistics, overall and per difficulty.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReasoningStats {
    pub avg_reasoning_chars: f64,
    pub avg_turns: f64,
    pub std_turns: f64,
    pub per_difficulty: BTreeMap<String, DifficultySlice>,
}

/// The full evaluation report, as serialized to `report.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ex_greedy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ex_majority: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pass_at_k: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<Efficiency>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<ReasoningStats>,
    pub per_task: Vec<TaskEval>,
}

/// Execution accuracy as a percentage.
pub fn execution_accuracy(correct: &[bool]) -> f64 {
    assert!(!correct.is_empty(), "execution accuracy over zero tasks");
    100.0 * correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64
}

/// Index of the candidate whose execution result the most candidates share.
/// Errors never join a consensus group; ties go to the group seen first;
/// when every candidate errored the first candidate stands.
pub fn consensus_index(outcomes: &[ExecOutcome]) -> usize {
    assert!(!outcomes.is_empty(), "consensus over zero candidates");
    // groups: (first index, member count)
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for (i, outcome) in outcomes.iter().enumerate() {
        if !outcome.is_ok() {
            continue;
        }
        match groups.iter_mut().find(|(first, _)| results_equal(&outcomes[*first], outcome)) {
            Some((_, count)) => *count += 1,
            None => groups.push((i, 1)),
        }
    }
    groups.iter().max_by_key(|(first, count)| (*count, Reverse(*first))).map(|(first, _)| *first).unwrap_or(0)
}

/// Execute every candidate and return the majority-choice SQL.
pub fn majority_vote(candidates: &[String], env: &SqlEnv, limits: &ExecLimits) -> String {
    let outcomes: Vec<ExecOutcome> = candidates.iter().map(|sql| execute_sql(env, sql, limits)).collect();
    candidates[consensus_index(&outcomes)].clone()
}

/// pass@k over a per-task candidate-correctness matrix: the percentage of
/// tasks where any of the first `k` candidates was correct. Every row must
/// hold at least `k` entries.
pub fn pass_at_k(candidate_correct: &[Vec<bool>], k: usize) -> Result<f64, EvalError> {
    assert!(k > 0, "pass@0 is meaningless");
    if candidate_correct.is_empty() {
        return Err(EvalError::Empty);
    }
    for row in candidate_correct {
        if row.len() < k {
            return Err(EvalError::NotEnoughCandidates { k, available: row.len() });
        }
    }
    let hits = candidate_correct.iter().filter(|row| row[..k].iter().any(|&c| c)).count();
    Ok(100.0 * hits as f64 / candidate_correct.len() as f64)
}

/// Accuracy gained per 1000 training examples: `delta_pp / n × 1000`.
pub fn data_efficiency(delta_pp: f64, n: usize) -> Efficiency {
    assert!(n > 0, "data efficiency needs a positive example count");
    Efficiency { delta_pp, n, value: delta_pp / n as f64 * 1000.0 }
}

/// Reasoning/turn statistics over a set of trajectories. `difficulty_of`
/// maps a task id to its difficulty label (unknown ids are skipped in the
/// per-difficulty table but still count overall).
pub fn reasoning_stats<F>(trajectories: &[Trajectory], difficulty_of: F) -> ReasoningStats
where
    F: Fn(&str) -> Option<String>,
{
    assert!(!trajectories.is_empty(), "reasoning stats over zero trajectories");
    let n = trajectories.len() as f64;
    let chars: Vec<f64> = trajectories.iter().map(|t| t.reasoning_char_count() as f64).collect();
    let turns: Vec<f64> = trajectories.iter().map(|t| t.policy_turn_count() as f64).collect();
    let avg_chars = chars.iter().sum::<f64>() / n;
    let avg_turns = turns.iter().sum::<f64>() / n;
    let var_turns = turns.iter().map(|t| (t - avg_turns).powi(2)).sum::<f64>() / n;

    let mut per_difficulty: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for trajectory in trajectories {
        let Some(label) = difficulty_of(&trajectory.task_id) else { continue };
        let entry = per_difficulty.entry(label).or_insert((0, 0.0, 0.0));
        entry.0 += 1;
        entry.1 += trajectory.reasoning_char_count() as f64;
        entry.2 += trajectory.policy_turn_count() as f64;
    }
    ReasoningStats {
        avg_reasoning_chars: avg_chars,
        avg_turns,
        std_turns: var_turns.sqrt(),
        per_difficulty: per_difficulty
            .into_iter()
            .map(|(label, (count, chars, turns))| {
                (label, DifficultySlice {
                    count,
                    avg_reasoning_chars: chars / count as f64,
                    avg_turns: turns / count as f64,
                })
            })
            .collect(),
    }
}

/// What to run per task during evaluation.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Run a temperature-0 trajectory and report its EX.
    pub greedy: bool,
    /// Sampled candidates per task for majority voting / pass@k (0 for
    /// none).
    pub candidates: usize,
    pub rollout: RolloutOptions,
    pub sampling: SamplingConfig,
    pub root_seed: u64,
    /// Optional (delta_pp, n) pair to fold a data-efficiency figure into
    /// the report.
    pub efficiency: Option<(f64, usize)>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            greedy: true,
            candidates: 0,
            rollout: RolloutOptions::default(),
            sampling: SamplingConfig::default(),
            root_seed: 0,
            efficiency: None,
        }
    }
}

struct TaskResult {
    eval: TaskEval,
    greedy_correct: Option<bool>,
    majority_correct: Option<bool>,
    stats_trajectory: Option<Trajectory>,
}

fn evaluate_one(task: &TaskInstance, policy: &dyn Policy, options: &EvalOptions) -> Result<TaskResult, EvalError> {
    let env = open_database(Path::new(&task.db_path), true)?;
    let untruncated = ExecLimits { max_rows_fetched: usize::MAX, ..options.rollout.limits.clone() };
    let gold = execute_sql(&env, &task.gold_sql, &untruncated);
    if let Some(message) = gold.error_message {
        return Err(EvalError::Gold { task_id: task.id.clone(), message });
    }
    let is_correct = |sql: &str| {
        let outcome = execute_sql(&env, sql, &untruncated);
        outcome.is_ok() && results_equal(&outcome, &gold)
    };

    let mut greedy_correct = None;
    let mut stats_trajectory = None;
    let mut chosen_sql = None;
    if options.greedy {
        let sampling = SamplingConfig {
            temperature: 0.0,
            seed: Some(split_seed(options.root_seed, &task.id, u64::MAX)),
            ..options.sampling.clone()
        };
        let run = run_trajectory(task, policy, &env, &options.rollout, &sampling)?;
        let sql = run.trajectory.final_sql.clone().unwrap_or_default();
        greedy_correct = Some(!sql.is_empty() && is_correct(&sql));
        chosen_sql = Some(sql);
        stats_trajectory = Some(run.trajectory);
    }

    let mut candidate_flags = Vec::with_capacity(options.candidates);
    let mut majority_correct = None;
    if options.candidates > 0 {
        let mut sqls = Vec::with_capacity(options.candidates);
        for j in 0..options.candidates {
            let sampling = SamplingConfig {
                seed: Some(split_seed(options.root_seed, &task.id, j as u64)),
                ..options.sampling.clone()
            };
            let run = run_trajectory(task, policy, &env, &options.rollout, &sampling)?;
            let sql = run.trajectory.final_sql.clone().unwrap_or_default();
            candidate_flags.push(!sql.is_empty() && is_correct(&sql));
            if stats_trajectory.is_none() {
                stats_trajectory = Some(run.trajectory.clone());
            }
            sqls.push(sql);
        }
        let voted = majority_vote(&sqls, &env, &untruncated);
        majority_correct = Some(!voted.is_empty() && is_correct(&voted));
        chosen_sql = Some(voted);
    }

    let correct = majority_correct.or(greedy_correct).unwrap_or(false);
    let (turns, reasoning_chars) = stats_trajectory
        .as_ref()
        .map(|t| (t.policy_turn_count(), t.reasoning_char_count()))
        .unwrap_or((0, 0));
    Ok(TaskResult {
        eval: TaskEval {
            task_id: task.id.clone(),
            candidates: candidate_flags,
            chosen_sql,
            correct,
            turns,
            reasoning_chars,
        },
        greedy_correct,
        majority_correct,
        stats_trajectory,
    })
}

/// Evaluate a policy over a task set. Greedy EX, majority EX, pass@k for
/// every k up to the candidate count, and reasoning statistics are computed
/// from the same runs.
pub fn evaluate_tasks(
    tasks: &[TaskInstance],
    policy: &dyn Policy,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::Empty);
    }
    let results: Vec<TaskResult> = if options.rollout.parallelism > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.rollout.parallelism)
            .build()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        pool.install(|| {
            use rayon::prelude::*;
            tasks.par_iter().map(|task| evaluate_one(task, policy, options)).collect::<Result<Vec<_>, _>>()
        })?
    } else {
        tasks.iter().map(|task| evaluate_one(task, policy, options)).collect::<Result<Vec<_>, _>>()?
    };

    let ex_greedy = options
        .greedy
        .then(|| execution_accuracy(&results.iter().map(|r| r.greedy_correct.unwrap_or(false)).collect::<Vec<_>>()));
    let ex_majority = (options.candidates > 0)
        .then(|| execution_accuracy(&results.iter().map(|r| r.majority_correct.unwrap_or(false)).collect::<Vec<_>>()));

    let mut pass = BTreeMap::new();
    if options.candidates > 0 {
        let matrix: Vec<Vec<bool>> = results.iter().map(|r| r.eval.candidates.clone()).collect();
        for k in 1..=options.candidates {
            pass.insert(k, pass_at_k(&matrix, k)?);
        }
    }

    let difficulty_by_id: BTreeMap<&str, String> =
        tasks.iter().map(|t| (t.id.as_str(), t.difficulty.to_string())).collect();
    let stats_trajectories: Vec<Trajectory> =
        results.iter().filter_map(|r| r.stats_trajectory.clone()).collect();
    let reasoning = (!stats_trajectories.is_empty())
        .then(|| reasoning_stats(&stats_trajectories, |id| difficulty_by_id.get(id).cloned()));

    Ok(EvalReport {
        version: crate::HARNESS_VERSION.to_string(),
        ex_greedy,
        ex_majority,
        pass_at_k: pass,
        efficiency: options.efficiency.map(|(delta_pp, n)| data_efficiency(delta_pp, n)),
        reasoning,
        per_task: results.into_iter().map(|r| r.eval).collect(),
    })
}

/// Write the report as pretty JSON (with a trailing newline).
pub fn emit_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut writer, report)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<EvalReport, EvalError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// One-line-per-metric CSV summary for spreadsheet import.
pub fn write_summary_csv(report: &EvalReport, benchmark_name: &str, path: &Path) -> Result<(), EvalError> {
    let mut writer = BufWriter::new(File::create(path)?);
    writeln!(writer, "benchmark,metric,value")?;
    if let Some(ex) = report.ex_greedy {
        writeln!(writer, "{benchmark_name},ex_greedy,{ex}")?;
    }
    if let Some(ex) = report.ex_majority {
        writeln!(writer, "{benchmark_name},ex_majority,{ex}")?;
    }
    for (k, value) in &report.pass_at_k {
        writeln!(writer, "{benchmark_name},pass_at_{k},{value}")?;
    }
    if let Some(eff) = &report.efficiency {
        writeln!(writer, "{benchmark_name},data_efficiency,{}", eff.value)?;
    }
    writer.flush()?;
    Ok(())
}
