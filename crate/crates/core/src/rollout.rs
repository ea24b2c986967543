//! Multi-turn rollout loop.
//!
//! A rollout drives one policy against one task: the policy sees the system
//! prompt and question, emits tagged actions, and receives rendered
//! observations until it commits to a `<solution>` block or the turn budget
//! runs out. When the budget is exhausted without a solution, one extra
//! forced generation asks for the final answer; that forced turn is recorded
//! past the budget and the trajectory is marked budget-forced.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{ChatMessage, Policy, PolicyError, SamplingConfig};
use crate::protocol::{
    invalid_action_observation, parse_action, render_observation, wrap_observation, Observation, ObservationKind,
    turns_left_sentence,
};
use crate::rewards::RewardBreakdown;
use crate::sqlenv::{execute_sql, guard_sql, EnvError, ExecLimits, GuardPolicy, GuardVerdict, SqlEnv};
use crate::taskdata::{build_prompt, TaskDataError, TaskInstance, DEFAULT_PROMPT_TEMPLATE};

/// Message appended when the budget is spent without a solution: one last
/// generation, answer only.
pub const FORCED_FINAL_PROMPT: &str =
    "You have used all of your turns. Provide your final answer now as a single SQL query inside <solution>...</solution> tags.";

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Task(#[from] TaskDataError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{path} line {line}: {message}")]
    Jsonl { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a trajectory ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The policy committed to a `<solution>` block within budget.
    Solution,
    /// The budget ran out; the final SQL (if any) came from the forced extra
    /// generation.
    BudgetForced,
    /// The policy endpoint failed permanently mid-rollout.
    PolicyError,
}

/// One assistant turn and the environment's reaction to it. The parse
/// results are stored flat so a JSONL round-trip reproduces the record
/// exactly; well-formedness is recomputable by re-parsing `raw`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based; a forced final turn gets index `turn_budget + 1`.
    pub index: usize,
    /// Full assistant text, byte-for-byte.
    pub raw: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<String>,
    /// What the agent was shown in response; `None` for terminal turns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
}

/// A complete interaction record for one task attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    #[serde(rename = "T")]
    pub turn_budget: usize,
    pub termination: Termination,
    /// The SQL that gets scored: the solution block's content, or `None`
    /// when even the forced generation produced no solution.
    pub final_sql: Option<String>,
    pub turns: Vec<Turn>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
    pub seed: u64,
}

impl Trajectory {
    /// Raw assistant texts in turn order, as the format reward consumes them.
    pub fn raw_turn_texts(&self) -> Vec<&str> {
        self.turns.iter().map(|turn| turn.raw.as_str()).collect()
    }

    /// Total characters inside `<reasoning>` blocks across all turns.
    pub fn reasoning_char_count(&self) -> usize {
        self.turns.iter().filter_map(|turn| turn.reasoning.as_deref()).map(|r| r.chars().count()).sum()
    }

    /// Turns the policy took within budget (the forced extra turn, indexed
    /// past the budget, is not a policy decision and does not count).
    pub fn policy_turn_count(&self) -> usize {
        self.turns.iter().filter(|turn| turn.index <= self.turn_budget).count()
    }
}

/// Retry schedule for transient policy-endpoint failures.
#[derive(Clone, Debug)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

/// Knobs for a rollout run.
#[derive(Clone, Debug)]
pub struct RolloutOptions {
    pub turn_budget: usize,
    pub limits: ExecLimits,
    pub guard: GuardPolicy,
    pub retry: RetryPolicy,
    pub template: String,
    /// Worker threads for group rollouts; 1 means fully sequential.
    pub parallelism: usize,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            turn_budget: 10,
            limits: ExecLimits::default(),
            guard: GuardPolicy::SelectOnly,
            retry: RetryPolicy::default(),
            template: DEFAULT_PROMPT_TEMPLATE.to_string(),
            parallelism: 1,
        }
    }
}

/// A trajectory plus the summed policy log-probability of its turns, when
/// the policy reported one for every turn.
#[derive(Clone, Debug)]
pub struct TrajectoryRun {
    pub trajectory: Trajectory,
    pub logprob: Option<f64>,
}

fn complete_with_retry(
    policy: &dyn Policy,
    messages: &[ChatMessage],
    sampling: &SamplingConfig,
    retry: &RetryPolicy,
) -> Result<crate::policy::PolicyReply, PolicyError> {
    let attempts = retry.attempts.max(1);
    let mut last_err = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            thread::sleep(retry.base_delay * 2u32.pow(attempt - 1));
        }
        match policy.complete(messages, sampling) {
            Ok(reply) => return Ok(reply),
            Err(err) if err.is_retryable() && attempt + 1 < attempts => last_err = Some(err),
            Err(err) => return Err(err),
        }
    }
    Err(last_err.expect("retry loop always records an error before falling through"))
}

/// Run one task attempt to completion.
///
/// Per policy turn `t` (1-based, `t ≤ turn_budget`):
/// - a `<solution>` block terminates the rollout immediately;
/// - otherwise a `<sql>` block is guarded and executed, and the rendered
///   result (or error text) comes back in an `<observation>` that also
///   states the `turn_budget − t` turns remaining;
/// - a turn with neither block gets the invalid-action observation.
///
/// If no solution arrived within budget, a forced final prompt asks for one
/// more generation; only a `<solution>` block in that reply is accepted.
pub fn run_trajectory(
    task: &TaskInstance,
    policy: &dyn Policy,
    env: &SqlEnv,
    options: &RolloutOptions,
    sampling: &SamplingConfig,
) -> Result<TrajectoryRun, RolloutError> {
    let seed = sampling.seed.unwrap_or(0);
    let mut messages = build_prompt(task, &options.template)?;
    let mut turns: Vec<Turn> = Vec::new();
    let mut logprobs: Vec<Option<f64>> = Vec::new();

    let finish = |turns: Vec<Turn>, termination, final_sql, logprobs: Vec<Option<f64>>| {
        let logprob = logprobs
            .iter()
            .copied()
            .collect::<Option<Vec<f64>>>()
            .map(|values| values.iter().sum());
        Ok(TrajectoryRun {
            trajectory: Trajectory {
                task_id: task.id.clone(),
                turn_budget: options.turn_budget,
                termination,
                final_sql,
                turns,
                reward: None,
                seed,
            },
            logprob,
        })
    };

    for t in 1..=options.turn_budget {
        let reply = match complete_with_retry(policy, &messages, sampling, &options.retry) {
            Ok(reply) => reply,
            Err(_) => return finish(turns, Termination::PolicyError, None, logprobs),
        };
        logprobs.push(reply.logprob);
        let parsed = parse_action(&reply.text);
        messages.push(ChatMessage::assistant(&reply.text));
        let mut turn = Turn {
            index: t,
            raw: reply.text.clone(),
            reasoning: parsed.reasoning.clone(),
            sql: parsed.sql.clone(),
            solution: parsed.solution.clone(),
            observation: None,
        };

        if parsed.is_terminal() {
            let final_sql = parsed.solution.clone();
            turns.push(turn);
            return finish(turns, Termination::Solution, final_sql, logprobs);
        }

        let turns_left = options.turn_budget - t;
        let observation = match parsed.sql.as_deref() {
            Some(sql) => match guard_sql(sql, options.guard) {
                GuardVerdict::Ok => {
                    let outcome = execute_sql(env, sql, &options.limits);
                    render_observation(&outcome, turns_left)
                }
                GuardVerdict::Rejected(reason) => Observation {
                    kind: ObservationKind::Error,
                    text: format!("{}\n{}", reason.message(), turns_left_sentence(turns_left)),
                    turns_left,
                },
            },
            None => invalid_action_observation(turns_left),
        };
        messages.push(ChatMessage::user(&wrap_observation(&observation)));
        turn.observation = Some(observation);
        turns.push(turn);
    }

    // Budget exhausted: one forced generation, answer only.
    messages.push(ChatMessage::user(FORCED_FINAL_PROMPT));
    let forced_index = options.turn_budget + 1;
    match complete_with_retry(policy, &messages, sampling, &options.retry) {
        Ok(reply) => {
            logprobs.push(reply.logprob);
            let parsed = parse_action(&reply.text);
            let final_sql = parsed.solution.clone();
            turns.push(Turn {
                index: forced_index,
                raw: reply.text,
                reasoning: parsed.reasoning,
                sql: parsed.sql,
                solution: parsed.solution,
                observation: None,
            });
            finish(turns, Termination::BudgetForced, final_sql, logprobs)
        }
        Err(_) => finish(turns, Termination::PolicyError, None, logprobs),
    }
}

/// Deterministic per-member seed: FNV-1a over the root seed, task id, and
/// member index, so each (task, member) pair gets an independent stream that
/// is stable across runs and platforms.
pub fn split_seed(root_seed: u64, task_id: &str, member: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(PRIME);
        }
    };
    eat(&root_seed.to_le_bytes());
    eat(task_id.as_bytes());
    eat(&member.to_le_bytes());
    hash
}

/// Roll out `group_size` independent attempts on one task. Each member gets
/// its own database handle (via `open_env`) and its own derived seed.
/// Results come back in member order regardless of parallelism.
pub fn run_group<F>(
    task: &TaskInstance,
    policy: &dyn Policy,
    open_env: F,
    group_size: usize,
    options: &RolloutOptions,
    sampling: &SamplingConfig,
    root_seed: u64,
) -> Result<Vec<TrajectoryRun>, RolloutError>
where
    F: Fn() -> Result<SqlEnv, EnvError> + Sync,
{
    let run_member = |member: u64| -> Result<TrajectoryRun, RolloutError> {
        let env = open_env()?;
        let member_sampling = SamplingConfig { seed: Some(split_seed(root_seed, &task.id, member)), ..sampling.clone() };
        run_trajectory(task, policy, &env, options, &member_sampling)
    };

    if options.parallelism > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallelism)
            .build()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        pool.install(|| {
            use rayon::prelude::*;
            (0..group_size as u64).into_par_iter().map(run_member).collect()
        })
    } else {
        (0..group_size as u64).map(run_member).collect()
    }
}

/// Append-free JSONL write: one trajectory per line.
pub fn save_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<(), RolloutError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for trajectory in trajectories {
        let line = serde_json::to_string(trajectory)
            .map_err(|e| RolloutError::Jsonl { path: path.display().to_string(), line: 0, message: e.to_string() })?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a JSONL trajectory file; parse failures carry 1-based line numbers.
pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>, RolloutError> {
    let reader = BufReader::new(File::open(path)?);
    let mut trajectories = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trajectory = serde_json::from_str(&line).map_err(|e| RolloutError::Jsonl {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        trajectories.push(trajectory);
    }
    Ok(trajectories)
}
