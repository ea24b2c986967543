//! Completion back ends behind a common trait.
//!
//! Every way of producing an assistant turn — a remote chat-completions
//! endpoint, a canned script, a toy softmax over candidate turns — implements
//! [`Policy`]. Implementations are registered by name in [`registry`] and
//! instantiated from a [`PolicyConfig`], so the rollout, evaluation, and
//! training layers select a back end purely through configuration.

mod http;
mod scripted;
mod template;

pub use http::{HttpPolicy, DEFAULT_RESPONSE_PATH};
pub use scripted::{scripted_next, ScriptedPolicy};
pub use template::{template_sample, TemplatePolicy};
pub(crate) use template::sample_from;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable consulted when the endpoint is not configured.
pub const ENDPOINT_ENV: &str = "SQLTURN_ENDPOINT";
/// Environment variable consulted when the API key is not configured.
pub const API_KEY_ENV: &str = "SQLTURN_API_KEY";
/// Environment variable consulted when the model name is not configured.
pub const MODEL_ENV: &str = "SQLTURN_MODEL";

/// Chat roles in the rollout dialogue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One dialogue message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// Decoding parameters passed to every completion call.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    /// Per-call seed; rollout layers derive one per trajectory from the root
    /// seed so groups are reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { temperature: 1.0, top_p: 0.99, max_tokens: 1024, seed: None }
    }
}

impl SamplingConfig {
    /// Temperature zero requests deterministic decoding.
    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature must be ≥ 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be ≥ 1".to_string());
        }
        Ok(())
    }
}

/// A completion plus, when the back end can provide it, the log-probability
/// of the returned text under the policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyReply {
    pub text: String,
    pub logprob: Option<f64>,
}

/// Policy failures. Only transport failures are worth retrying.
#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("policy configuration error: {0}")]
    Config(String),
}

impl PolicyError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, PolicyError::Transport(_))
    }
}

/// A completion back end. Implementations must be shareable across rollout
/// threads.
pub trait Policy: Send + Sync {
    /// The registry name this policy was built under.
    fn name(&self) -> &'static str;

    /// Produce the next assistant turn for the dialogue so far.
    fn complete(&self, messages: &[ChatMessage], sampling: &SamplingConfig) -> Result<PolicyReply, PolicyError>;
}

/// Declarative policy selection, deserializable from the config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Registry name: `http`, `scripted`, or `template`.
    pub kind: String,
    /// Chat-completions URL (`http`); falls back to `SQLTURN_ENDPOINT`.
    pub endpoint: Option<String>,
    /// Model name sent in requests (`http`); falls back to `SQLTURN_MODEL`.
    pub model: Option<String>,
    /// Bearer token (`http`); falls back to `SQLTURN_API_KEY`.
    pub api_key: Option<String>,
    /// Slash-separated path extracting the completion text from the response
    /// JSON (`http`). Defaults to [`DEFAULT_RESPONSE_PATH`].
    pub response_path: Option<String>,
    /// Optional slash-separated path extracting a total log-probability.
    pub logprob_path: Option<String>,
    /// Request timeout for one completion call (`http`).
    pub request_timeout_ms: u64,
    /// Turn script JSON (`scripted`): a list of turn texts, or a list of such
    /// lists selected by sampling seed.
    pub script_path: Option<PathBuf>,
    /// Candidate-turn fixture JSON (`template`): `{candidates, logits?}`,
    /// `init_logits` accepted as an alias.
    pub fixture_path: Option<PathBuf>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: "http".to_string(),
            endpoint: None,
            model: None,
            api_key: None,
            response_path: None,
            logprob_path: None,
            request_timeout_ms: 60_000,
            script_path: None,
            fixture_path: None,
        }
    }
}

type PolicyBuilder = fn(&PolicyConfig) -> Result<Box<dyn Policy>, PolicyError>;

fn build_http(config: &PolicyConfig) -> Result<Box<dyn Policy>, PolicyError> {
    let from_env = |var: &str| std::env::var(var).ok().filter(|v| !v.is_empty());
    let endpoint = config
        .endpoint
        .clone()
        .or_else(|| from_env(ENDPOINT_ENV))
        .ok_or_else(|| PolicyError::Config(format!("http policy needs an endpoint (config or ${ENDPOINT_ENV})")))?;
    let model = config
        .model
        .clone()
        .or_else(|| from_env(MODEL_ENV))
        .ok_or_else(|| PolicyError::Config(format!("http policy needs a model name (config or ${MODEL_ENV})")))?;
    let api_key = config.api_key.clone().or_else(|| from_env(API_KEY_ENV));
    let policy = HttpPolicy::new(
        endpoint,
        model,
        api_key,
        config.response_path.as_deref(),
        config.logprob_path.as_deref(),
        Duration::from_millis(config.request_timeout_ms),
    )?;
    Ok(Box::new(policy))
}

fn build_scripted(config: &PolicyConfig) -> Result<Box<dyn Policy>, PolicyError> {
    let path = config
        .script_path
        .as_ref()
        .ok_or_else(|| PolicyError::Config("scripted policy needs script_path".to_string()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| PolicyError::Config(format!("cannot read script {}: {e}", path.display())))?;
    // Either one script or several (selected by sampling seed).
    if let Ok(scripts) = serde_json::from_str::<Vec<Vec<String>>>(&text) {
        return Ok(Box::new(ScriptedPolicy::multi(scripts)?));
    }
    let script: Vec<String> = serde_json::from_str(&text)
        .map_err(|e| PolicyError::Config(format!("script {} is not a JSON list of turns: {e}", path.display())))?;
    Ok(Box::new(ScriptedPolicy::new(script)?))
}

fn build_template(config: &PolicyConfig) -> Result<Box<dyn Policy>, PolicyError> {
    let path = config
        .fixture_path
        .as_ref()
        .ok_or_else(|| PolicyError::Config("template policy needs fixture_path".to_string()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| PolicyError::Config(format!("cannot read fixture {}: {e}", path.display())))?;
    Ok(Box::new(TemplatePolicy::from_spec_json(&text)?))
}

/// The registered back ends, in registration order.
pub fn registry() -> &'static [(&'static str, PolicyBuilder)] {
    &[("http", build_http), ("scripted", build_scripted), ("template", build_template)]
}

/// Names of all registered back ends.
pub fn registered_kinds() -> Vec<&'static str> {
    registry().iter().map(|(name, _)| *name).collect()
}

/// Instantiate the back end named by `config.kind`.
pub fn create_policy(config: &PolicyConfig) -> Result<Box<dyn Policy>, PolicyError> {
    match registry().iter().find(|(name, _)| *name == config.kind) {
        Some((_, build)) => build(config),
        None => Err(PolicyError::Config(format!(
            "unknown policy kind `{}` (registered: {})",
            config.kind,
            registered_kinds().join(", ")
        ))),
    }
}
