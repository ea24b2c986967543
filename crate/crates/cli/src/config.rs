//! Harness configuration: a JSON file of defaults that individual command
//! flags override (flags > file > built-in defaults).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sqlturn_core::grpo::ClipConfig;
use sqlturn_core::policy::{PolicyConfig, SamplingConfig};
use sqlturn_core::rewards::RewardWeights;
use sqlturn_core::rollout::{RetryPolicy, RolloutOptions};
use sqlturn_core::sqlenv::{ExecLimits, GuardPolicy};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// Everything the commands need, with serde defaults so a partial file is
/// fine and an empty `{}` is the built-in configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Task dataset path.
    pub tasks: Option<PathBuf>,
    /// Dataset layout: "jsonl", "spider", or "bird".
    pub format: String,
    /// Root directory holding `<db_id>/<db_id>.sqlite` for benchmark layouts.
    pub db_root: Option<PathBuf>,
    pub policy: PolicyConfig,
    pub sampling: SamplingConfig,
    /// Turn budget per trajectory.
    pub turns: usize,
    /// Trajectories per task in `rollout`.
    pub group: usize,
    /// Sampled candidates per task in `eval` (0 = greedy only).
    pub candidates: usize,
    pub weights: RewardWeights,
    pub clip: ClipConfig,
    /// Per-statement execution timeout.
    pub timeout_ms: u64,
    pub max_rows_fetched: usize,
    /// Allow non-SELECT statements (setup tooling only; rollouts should
    /// leave this off).
    pub allow_writes: bool,
    pub out_dir: PathBuf,
    pub parallelism: usize,
    pub seed: u64,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            tasks: None,
            format: "jsonl".into(),
            db_root: None,
            policy: PolicyConfig::default(),
            sampling: SamplingConfig::default(),
            turns: 10,
            group: 6,
            candidates: 0,
            weights: RewardWeights::default(),
            clip: ClipConfig::default(),
            timeout_ms: 30_000,
            max_rows_fetched: 10_000,
            allow_writes: false,
            out_dir: PathBuf::from("out"),
            parallelism: 1,
            seed: 0,
            retry_attempts: 3,
            retry_base_delay_ms: 500,
        }
    }
}

impl HarnessConfig {
    /// Load from a JSON file, or start from defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else { return Ok(HarnessConfig::default()) };
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Check every field and report all problems at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.turns == 0 {
            problems.push("turns must be at least 1".to_string());
        }
        if self.group == 0 {
            problems.push("group must be at least 1".to_string());
        }
        if self.timeout_ms == 0 {
            problems.push("timeout_ms must be at least 1".to_string());
        }
        if self.max_rows_fetched == 0 {
            problems.push("max_rows_fetched must be at least 1".to_string());
        }
        if self.parallelism == 0 {
            problems.push("parallelism must be at least 1".to_string());
        }
        if self.retry_attempts == 0 {
            problems.push("retry_attempts must be at least 1".to_string());
        }
        if let Err(e) = self.weights.validate() {
            problems.push(e);
        }
        if let Err(e) = self.clip.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.sampling.validate() {
            problems.push(e);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    pub fn exec_limits(&self) -> ExecLimits {
        ExecLimits {
            timeout: Duration::from_millis(self.timeout_ms),
            max_rows_fetched: self.max_rows_fetched,
            allow_writes: self.allow_writes,
        }
    }

    pub fn rollout_options(&self) -> RolloutOptions {
        RolloutOptions {
            turn_budget: self.turns,
            limits: self.exec_limits(),
            guard: if self.allow_writes { GuardPolicy::Unrestricted } else { GuardPolicy::SelectOnly },
            retry: RetryPolicy {
                attempts: self.retry_attempts,
                base_delay: Duration::from_millis(self.retry_base_delay_ms),
            },
            parallelism: self.parallelism,
            ..RolloutOptions::default()
        }
    }
}
