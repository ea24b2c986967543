//! Toy softmax policy over a fixed candidate set.
//!
//! This is the trainable stand-in for a language model: each candidate is a
//! complete assistant-turn text, the policy is a categorical softmax over
//! learnable logits, and sampling is fully determined by the seed. The
//! group-relative training loop optimizes exactly these logits.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{ChatMessage, Policy, PolicyError, PolicyReply, SamplingConfig};

/// Softmax policy over candidate turn texts.
#[derive(Clone, Debug)]
pub struct TemplatePolicy {
    candidates: Vec<String>,
    logits: Vec<f64>,
}

impl TemplatePolicy {
    pub fn new(candidates: Vec<String>, logits: Vec<f64>) -> Result<Self, PolicyError> {
        if candidates.is_empty() {
            return Err(PolicyError::Config("template policy needs at least one candidate".to_string()));
        }
        if candidates.len() != logits.len() {
            return Err(PolicyError::Config(format!(
                "candidate/logit length mismatch: {} vs {}",
                candidates.len(),
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(PolicyError::Config("logits must be finite".to_string()));
        }
        Ok(TemplatePolicy { candidates, logits })
    }

    /// Uniform policy: all logits zero.
    pub fn uniform(candidates: Vec<String>) -> Result<Self, PolicyError> {
        let n = candidates.len();
        TemplatePolicy::new(candidates, vec![0.0; n])
    }

    /// Parse `{candidates, logits?}` JSON; `init_logits` is accepted as an
    /// alias so training fixtures double as policy specs. Unknown fields are
    /// ignored.
    pub fn from_spec_json(text: &str) -> Result<Self, PolicyError> {
        #[derive(Deserialize)]
        struct Spec {
            candidates: Vec<String>,
            #[serde(default, alias = "init_logits")]
            logits: Option<Vec<f64>>,
        }
        let spec: Spec =
            serde_json::from_str(text).map_err(|e| PolicyError::Config(format!("bad template policy spec: {e}")))?;
        match spec.logits {
            Some(logits) => TemplatePolicy::new(spec.candidates, logits),
            None => TemplatePolicy::uniform(spec.candidates),
        }
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Mutable access for the training loop. Invariants (finiteness) are the
    /// caller's to maintain; the trainer's divergence guard backstops them.
    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Softmax probabilities, computed stably (max-shifted).
    pub fn probabilities(&self) -> Vec<f64> {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|e| e / sum).collect()
    }

    /// Log-softmax, computed stably.
    pub fn log_probabilities(&self) -> Vec<f64> {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = self.logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        self.logits.iter().map(|l| l - max - log_sum).collect()
    }

    /// Index of the highest-logit candidate (lowest index wins ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, l) in self.logits.iter().enumerate() {
            if *l > self.logits[best] {
                best = i;
            }
        }
        best
    }
}

/// Pick an index from a probability vector given a uniform draw in [0, 1).
pub(crate) fn sample_from(probabilities: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, p) in probabilities.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    probabilities.len() - 1
}

/// Draw one candidate with a seeded generator; returns the index and its
/// log-probability under the current logits. The same seed always yields the
/// same draw.
pub fn template_sample(policy: &TemplatePolicy, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.random();
    let index = sample_from(&policy.probabilities(), u);
    (index, policy.log_probabilities()[index])
}

impl Policy for TemplatePolicy {
    fn name(&self) -> &'static str {
        "template"
    }

    fn complete(&self, _messages: &[ChatMessage], sampling: &SamplingConfig) -> Result<PolicyReply, PolicyError> {
        let (index, logprob) = if sampling.is_greedy() {
            let index = self.argmax();
            (index, self.log_probabilities()[index])
        } else {
            template_sample(self, sampling.seed.unwrap_or(0))
        };
        Ok(PolicyReply { text: self.candidates[index].clone(), logprob: Some(logprob) })
    }
}
