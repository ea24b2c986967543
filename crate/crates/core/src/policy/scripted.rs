//! Canned-turn policy for tests and offline pipeline checks.

use super::{ChatMessage, Policy, PolicyError, PolicyReply, Role, SamplingConfig};

/// Replays fixed turn scripts. The turn to emit is derived from the dialogue
/// itself — the number of assistant messages already present — so the policy
/// is stateless and safe to share across threads. With several scripts, the
/// sampling seed picks one (`seed % script_count`), which lets a single
/// policy instance produce distinct trajectories across a rollout group.
#[derive(Clone, Debug)]
pub struct ScriptedPolicy {
    scripts: Vec<Vec<String>>,
}

impl ScriptedPolicy {
    /// Single-script policy. The script must be non-empty.
    pub fn new(script: Vec<String>) -> Result<Self, PolicyError> {
        ScriptedPolicy::multi(vec![script])
    }

    /// Multi-script policy; every script must be non-empty.
    pub fn multi(scripts: Vec<Vec<String>>) -> Result<Self, PolicyError> {
        if scripts.is_empty() {
            return Err(PolicyError::Config("scripted policy needs at least one script".to_string()));
        }
        if scripts.iter().any(Vec::is_empty) {
            return Err(PolicyError::Config("scripted policy scripts must be non-empty".to_string()));
        }
        Ok(ScriptedPolicy { scripts })
    }
}

/// The scripted turn for a given call index; past the end, the last turn
/// repeats (so budget-forcing always has something to say).
pub fn scripted_next(script: &[String], call_index: usize) -> &str {
    debug_assert!(!script.is_empty());
    &script[call_index.min(script.len() - 1)]
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn complete(&self, messages: &[ChatMessage], sampling: &SamplingConfig) -> Result<PolicyReply, PolicyError> {
        let call_index = messages.iter().filter(|m| m.role == Role::Assistant).count();
        let which = sampling.seed.unwrap_or(0) as usize % self.scripts.len();
        Ok(PolicyReply { text: scripted_next(&self.scripts[which], call_index).to_string(), logprob: None })
    }
}
