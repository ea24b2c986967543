//! Group-relative policy optimization with an asymmetric (clip-higher)
//! ratio clamp, verified end-to-end on a trainable softmax toy policy.
//!
//! For a group of sampled candidates with rewards `R_1..R_G`, each member's
//! advantage is its group-normalized reward. The surrogate objective for one
//! member is
//!
//! ```text
//! min(ρ·A, clamp(ρ, 1 − ε_low, 1 + ε_high)·A),   ρ = π_new(a)/π_old(a)
//! ```
//!
//! with `ε_high > ε_low` so that raising the probability of an
//! above-average candidate is cut off later than the symmetric rule would
//! allow, while the guard against crushing below-average candidates stays
//! tight. The toy policy is a categorical softmax over a fixed candidate
//! list, small enough that the analytic gradient can be checked against
//! finite differences and training can be watched converging.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{sample_from, TemplatePolicy};
use crate::rewards::{score_trajectory_parts, RewardWeights};
use crate::rollout::{Termination, Trajectory, Turn};
use crate::sqlenv::{introspect_schema, open_in_memory, EnvError, ExecLimits};
use crate::taskdata::Difficulty;

/// Floor added to the advantage denominator so a zero-variance group yields
/// zero advantages instead of NaN.
pub const DEFAULT_EPS_STD: f64 = 1e-8;

/// Asymmetric clipping thresholds. `eps_high > eps_low` is the point: the
/// upper bound lets winners grow further before the gradient cuts off.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipConfig {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig { eps_low: 0.2, eps_high: 0.28 }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.eps_low > 0.0 && self.eps_low < 1.0) || !self.eps_low.is_finite() {
            return Err(GrpoError::InvalidHyper(format!("eps_low must be in (0, 1), got {}", self.eps_low)));
        }
        if !(self.eps_high > 0.0) || !self.eps_high.is_finite() {
            return Err(GrpoError::InvalidHyper(format!("eps_high must be positive, got {}", self.eps_high)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("member {member}: stored old_logprob {got} does not match snapshot log-prob {want}")]
    SnapshotMismatch { member: usize, got: f64, want: f64 },
    #[error("sample index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("training diverged at step {step}: |theta| reached {magnitude}")]
    Diverged { step: usize, magnitude: f64 },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("fixture parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("fixture gold SQL failed: {0}")]
    Fixture(String),
}

/// One sampled candidate in a group: which candidate was drawn, its reward,
/// and the sampling policy's log-probability of the draw.
#[derive(Clone, Copy, Debug)]
pub struct GroupMember {
    pub sample_index: usize,
    pub reward: f64,
    pub old_logprob: f64,
}

/// A group of candidates sampled from the same prompt under the same old
/// policy.
#[derive(Clone, Debug)]
pub struct RolloutGroup {
    pub members: Vec<GroupMember>,
}

/// Group-normalized advantages: `(R_i − mean) / (popstd + eps_std)`.
/// Population (not sample) standard deviation; a uniform group gets exactly
/// zero advantages thanks to the epsilon floor.
pub fn group_advantages(rewards: &[f64], eps_std: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = variance.sqrt() + eps_std;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// One member's clipped surrogate term.
pub fn clipped_term(rho: f64, advantage: f64, clip: &ClipConfig) -> f64 {
    let clamped = rho.clamp(1.0 - clip.eps_low, 1.0 + clip.eps_high);
    (rho * advantage).min(clamped * advantage)
}

/// Whether the member contributes zero gradient: `min` has selected the
/// constant (clamped) branch.
fn clipped_off(rho: f64, advantage: f64, clip: &ClipConfig) -> bool {
    (advantage > 0.0 && rho > 1.0 + clip.eps_high) || (advantage < 0.0 && rho < 1.0 - clip.eps_low)
}

/// The old policy's logits and log-probabilities, frozen at the moment the
/// group was sampled.
#[derive(Clone, Debug)]
pub struct LogitsSnapshot {
    pub logits: Vec<f64>,
    log_probs: Vec<f64>,
}

impl LogitsSnapshot {
    pub fn of(policy: &TemplatePolicy) -> Self {
        LogitsSnapshot { logits: policy.logits().to_vec(), log_probs: policy.log_probabilities() }
    }

    pub fn log_prob(&self, index: usize) -> f64 {
        self.log_probs[index]
    }
}

fn check_groups(groups: &[RolloutGroup], snapshot: &LogitsSnapshot, n_candidates: usize) -> Result<(), GrpoError> {
    for group in groups {
        for (m, member) in group.members.iter().enumerate() {
            if member.sample_index >= n_candidates {
                return Err(GrpoError::IndexOutOfRange { index: member.sample_index, len: n_candidates });
            }
            let want = snapshot.log_prob(member.sample_index);
            if (member.old_logprob - want).abs() > 1e-9 {
                return Err(GrpoError::SnapshotMismatch { member: m, got: member.old_logprob, want });
            }
        }
    }
    Ok(())
}

/// The surrogate objective for the toy policy: mean over groups of the mean
/// over members of the clipped term. `policy` holds the *new* parameters;
/// each member's `old_logprob` must match `snapshot`.
pub fn toy_objective(
    policy: &TemplatePolicy,
    groups: &[RolloutGroup],
    snapshot: &LogitsSnapshot,
    clip: &ClipConfig,
    eps_std: f64,
) -> Result<f64, GrpoError> {
    clip.validate()?;
    check_groups(groups, snapshot, policy.candidates().len())?;
    let new_log_probs = policy.log_probabilities();
    let mut total = 0.0;
    for group in groups {
        let rewards: Vec<f64> = group.members.iter().map(|m| m.reward).collect();
        let advantages = group_advantages(&rewards, eps_std);
        let mut group_sum = 0.0;
        for (member, advantage) in group.members.iter().zip(&advantages) {
            let rho = (new_log_probs[member.sample_index] - member.old_logprob).exp();
            group_sum += clipped_term(rho, *advantage, clip);
        }
        total += group_sum / group.members.len() as f64;
    }
    Ok(total / groups.len() as f64)
}

/// Analytic gradient of [`toy_objective`] with respect to the logits.
///
/// For a softmax policy, `∂ log π(a) / ∂θ_k = δ_{k,a} − p_k`, so an active
/// (unclipped) member contributes `A·ρ · (δ_{k,a} − p_k)` scaled by the
/// group/member averaging; a clipped-off member contributes nothing.
pub fn objective_gradient(
    policy: &TemplatePolicy,
    groups: &[RolloutGroup],
    snapshot: &LogitsSnapshot,
    clip: &ClipConfig,
    eps_std: f64,
) -> Result<Vec<f64>, GrpoError> {
    clip.validate()?;
    check_groups(groups, snapshot, policy.candidates().len())?;
    let new_log_probs = policy.log_probabilities();
    let p_new = policy.probabilities();
    let mut grad = vec![0.0; policy.logits().len()];
    for group in groups {
        let rewards: Vec<f64> = group.members.iter().map(|m| m.reward).collect();
        let advantages = group_advantages(&rewards, eps_std);
        let scale = 1.0 / (groups.len() as f64 * group.members.len() as f64);
        for (member, advantage) in group.members.iter().zip(&advantages) {
            let rho = (new_log_probs[member.sample_index] - member.old_logprob).exp();
            if clipped_off(rho, *advantage, clip) {
                continue;
            }
            let coef = advantage * rho * scale;
            for (k, g) in grad.iter_mut().enumerate() {
                *g -= coef * p_new[k];
            }
            grad[member.sample_index] += coef;
        }
    }
    Ok(grad)
}

/// Compare the analytic gradient against central finite differences of the
/// objective. Returns the worst relative error across coordinates,
/// normalized by `max(1, |analytic|, |numeric|)`.
pub fn grad_check(
    policy: &TemplatePolicy,
    groups: &[RolloutGroup],
    snapshot: &LogitsSnapshot,
    clip: &ClipConfig,
    eps_std: f64,
    h: f64,
) -> Result<f64, GrpoError> {
    let analytic = objective_gradient(policy, groups, snapshot, clip, eps_std)?;
    let mut worst = 0.0_f64;
    for k in 0..analytic.len() {
        let mut plus = policy.clone();
        plus.logits_mut()[k] += h;
        let mut minus = policy.clone();
        minus.logits_mut()[k] -= h;
        let numeric = (toy_objective(&plus, groups, snapshot, clip, eps_std)?
            - toy_objective(&minus, groups, snapshot, clip, eps_std)?)
            / (2.0 * h);
        let denom = 1.0_f64.max(analytic[k].abs()).max(numeric.abs());
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Hyperparameters for the toy training loop.
#[derive(Clone, Debug)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub group_size: usize,
    /// Gradient-ascent updates per sampled group (the ratio moves off 1
    /// after the first inner update, which is what exercises the clip).
    pub inner_epochs: usize,
    pub clip: ClipConfig,
    pub eps_std: f64,
    pub seed: u64,
    /// Abort when any |logit| exceeds this.
    pub divergence_bound: f64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            steps: 500,
            lr: 0.1,
            group_size: 6,
            inner_epochs: 2,
            clip: ClipConfig::default(),
            eps_std: DEFAULT_EPS_STD,
            seed: 0,
            divergence_bound: 50.0,
        }
    }
}

/// Per-step training diagnostics, measured after the step's updates.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub objective: f64,
    pub mean_reward: f64,
    /// New-policy probability of the highest-reward candidate.
    pub p_best: f64,
    /// Largest importance ratio seen in the step's final inner epoch.
    pub max_ratio: f64,
    /// Fraction of members whose gradient was clipped off in the final
    /// inner epoch.
    pub clip_fraction: f64,
}

/// Train the toy softmax policy in place by sampled-group gradient ascent
/// on the clipped objective. `candidate_rewards[i]` is the (deterministic)
/// reward for sampling candidate `i`.
pub fn toy_train(
    policy: &mut TemplatePolicy,
    candidate_rewards: &[f64],
    config: &ToyTrainConfig,
) -> Result<Vec<StepMetrics>, GrpoError> {
    config.clip.validate()?;
    if candidate_rewards.len() != policy.candidates().len() {
        return Err(GrpoError::InvalidHyper(format!(
            "candidate_rewards has {} entries for {} candidates",
            candidate_rewards.len(),
            policy.candidates().len()
        )));
    }
    if !(config.lr > 0.0) {
        return Err(GrpoError::InvalidHyper(format!("lr must be positive, got {}", config.lr)));
    }
    if config.group_size < 2 {
        return Err(GrpoError::InvalidHyper("group_size must be at least 2".into()));
    }
    if config.inner_epochs == 0 {
        return Err(GrpoError::InvalidHyper("inner_epochs must be at least 1".into()));
    }

    let best = candidate_rewards
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("candidate_rewards is non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let snapshot = LogitsSnapshot::of(policy);
        let probabilities = policy.probabilities();
        let members: Vec<GroupMember> = (0..config.group_size)
            .map(|_| {
                let index = sample_from(&probabilities, rng.random::<f64>());
                GroupMember {
                    sample_index: index,
                    reward: candidate_rewards[index],
                    old_logprob: snapshot.log_prob(index),
                }
            })
            .collect();
        let groups = [RolloutGroup { members }];

        for _ in 0..config.inner_epochs {
            let grad = objective_gradient(policy, &groups, &snapshot, &config.clip, config.eps_std)?;
            for (theta, g) in policy.logits_mut().iter_mut().zip(&grad) {
                *theta += config.lr * g;
            }
            let magnitude = policy.logits().iter().fold(0.0_f64, |m, t| m.max(t.abs()));
            if magnitude > config.divergence_bound {
                return Err(GrpoError::Diverged { step, magnitude });
            }
        }

        let objective = toy_objective(policy, &groups, &snapshot, &config.clip, config.eps_std)?;
        let new_log_probs = policy.log_probabilities();
        let rewards: Vec<f64> = groups[0].members.iter().map(|m| m.reward).collect();
        let advantages = group_advantages(&rewards, config.eps_std);
        let mut max_ratio = 0.0_f64;
        let mut clipped = 0usize;
        for (member, advantage) in groups[0].members.iter().zip(&advantages) {
            let rho = (new_log_probs[member.sample_index] - member.old_logprob).exp();
            max_ratio = max_ratio.max(rho);
            if clipped_off(rho, *advantage, &config.clip) {
                clipped += 1;
            }
        }
        history.push(StepMetrics {
            step,
            objective,
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            p_best: policy.probabilities()[best],
            max_ratio,
            clip_fraction: clipped as f64 / groups[0].members.len() as f64,
        });
    }
    Ok(history)
}

/// A self-contained toy training problem: a tiny database, a gold query,
/// and a fixed list of candidate agent replies whose rewards the panel
/// scores once up front.
#[derive(Clone, Debug, Deserialize)]
pub struct ToyFixture {
    pub question: String,
    pub difficulty: Difficulty,
    pub setup_sql: Vec<String>,
    pub gold_sql: String,
    /// Each candidate is one complete assistant reply (tagged text).
    pub candidates: Vec<String>,
    #[serde(default)]
    pub init_logits: Option<Vec<f64>>,
    #[serde(default = "default_turn_budget")]
    pub turn_budget: usize,
}

fn default_turn_budget() -> usize {
    10
}

impl ToyFixture {
    pub fn load(path: &Path) -> Result<Self, GrpoError> {
        let fixture: ToyFixture = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if fixture.candidates.is_empty() {
            return Err(GrpoError::InvalidHyper("fixture has no candidates".into()));
        }
        if let Some(logits) = &fixture.init_logits {
            if logits.len() != fixture.candidates.len() {
                return Err(GrpoError::InvalidHyper(format!(
                    "init_logits has {} entries for {} candidates",
                    logits.len(),
                    fixture.candidates.len()
                )));
            }
        }
        Ok(fixture)
    }

    /// The trainable policy over this fixture's candidates.
    pub fn policy(&self) -> Result<TemplatePolicy, GrpoError> {
        let logits = self.init_logits.clone().unwrap_or_else(|| vec![0.0; self.candidates.len()]);
        TemplatePolicy::new(self.candidates.clone(), logits).map_err(|e| GrpoError::InvalidHyper(e.to_string()))
    }

    /// Score every candidate once: each is treated as a single-turn
    /// trajectory (solution present → solution termination, else
    /// budget-forced with no final SQL).
    pub fn candidate_rewards(&self, weights: &RewardWeights) -> Result<Vec<f64>, GrpoError> {
        let env = open_in_memory()?;
        for statement in &self.setup_sql {
            env.execute_batch(statement)?;
        }
        let catalog = introspect_schema(&env).map_err(|e| GrpoError::Fixture(e.to_string()))?;
        let limits = ExecLimits::default();
        let mut rewards = Vec::with_capacity(self.candidates.len());
        for candidate in &self.candidates {
            let parsed = crate::protocol::parse_action(candidate);
            let termination = if parsed.solution.is_some() { Termination::Solution } else { Termination::BudgetForced };
            let trajectory = Trajectory {
                task_id: "toy".into(),
                turn_budget: self.turn_budget,
                termination,
                final_sql: parsed.solution.clone(),
                turns: vec![Turn {
                    index: 1,
                    raw: candidate.clone(),
                    reasoning: parsed.reasoning,
                    sql: parsed.sql,
                    solution: parsed.solution,
                    observation: None,
                }],
                reward: None,
                seed: 0,
            };
            let breakdown =
                score_trajectory_parts(&trajectory, &self.gold_sql, &catalog, self.difficulty, &env, &limits, weights)
                    .map_err(|e| GrpoError::Fixture(e.to_string()))?;
            rewards.push(breakdown.total);
        }
        Ok(rewards)
    }
}
