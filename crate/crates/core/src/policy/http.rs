//! Chat-completions HTTP back end.
//!
//! Speaks the common chat-completions JSON shape: the request carries
//! `model`, `messages`, and decoding parameters; the completion text is
//! pulled out of the response with a configurable slash-separated path
//! (default `choices/0/message/content`) so mildly divergent servers still
//! work without code changes.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatMessage, Policy, PolicyError, PolicyReply, Role, SamplingConfig};

/// Default extraction path for the completion text.
pub const DEFAULT_RESPONSE_PATH: &str = "choices/0/message/content";

/// Remote-endpoint policy.
pub struct HttpPolicy {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    response_path: Vec<String>,
    logprob_path: Option<Vec<String>>,
    client: reqwest::blocking::Client,
}

impl HttpPolicy {
    pub fn new(
        endpoint: String,
        model: String,
        api_key: Option<String>,
        response_path: Option<&str>,
        logprob_path: Option<&str>,
        timeout: Duration,
    ) -> Result<Self, PolicyError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| PolicyError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpPolicy {
            endpoint,
            model,
            api_key,
            response_path: parse_path(response_path.unwrap_or(DEFAULT_RESPONSE_PATH)),
            logprob_path: logprob_path.map(parse_path),
            client,
        })
    }
}

fn parse_path(path: &str) -> Vec<String> {
    path.split('/').filter(|s| !s.is_empty()).map(str::to_string).collect()
}

/// Walk a JSON value by path segments; numeric segments index arrays.
fn extract<'a>(value: &'a Value, path: &[String]) -> Option<&'a Value> {
    let mut current = value;
    for segment in path {
        current = match current {
            Value::Array(items) => items.get(segment.parse::<usize>().ok()?)?,
            Value::Object(map) => map.get(segment)?,
            _ => return None,
        };
    }
    Some(current)
}

/// Stable request tag over (messages, seed): retries of the same completion
/// call carry the same key, so idempotent servers can dedupe.
fn idempotency_key(messages: &[ChatMessage], seed: Option<u64>) -> String {
    let mut hasher = DefaultHasher::new();
    for message in messages {
        let role_tag: u8 = match message.role {
            Role::System => 0,
            Role::User => 1,
            Role::Assistant => 2,
        };
        role_tag.hash(&mut hasher);
        message.content.hash(&mut hasher);
    }
    seed.hash(&mut hasher);
    format!("{:016x}", hasher.finish())
}

impl Policy for HttpPolicy {
    fn name(&self) -> &'static str {
        "http"
    }

    fn complete(&self, messages: &[ChatMessage], sampling: &SamplingConfig) -> Result<PolicyReply, PolicyError> {
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_tokens,
        });
        if let Some(seed) = sampling.seed {
            body["seed"] = json!(seed);
        }
        let mut request = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .header("Idempotency-Key", idempotency_key(messages, sampling.seed));
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| PolicyError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| PolicyError::Transport(e.to_string()))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(PolicyError::Transport(format!("endpoint returned {status}: {snippet}")));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| PolicyError::Protocol(format!("response is not JSON: {e}")))?;
        let completion = extract(&value, &self.response_path).and_then(Value::as_str).ok_or_else(|| {
            PolicyError::Protocol(format!("response lacks completion text at `{}`", self.response_path.join("/")))
        })?;
        let logprob = self.logprob_path.as_ref().and_then(|path| extract(&value, path)).and_then(Value::as_f64);
        Ok(PolicyReply { text: completion.to_string(), logprob })
    }
}
