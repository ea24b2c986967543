//! Wire-level tests for the HTTP chat-completions policy against a local
//! canned-response server: extraction paths, auth and idempotency headers,
//! error classification, and transport retries through the rollout layer.

mod common;

use std::time::Duration;

use common::{completion_body, products_env_memory, products_task, MockServer};
use sqlturn_core::policy::{ChatMessage, HttpPolicy, Policy, PolicyError, SamplingConfig};
use sqlturn_core::rollout::{RetryPolicy, RolloutOptions, Termination};

fn policy_for(server: &MockServer) -> HttpPolicy {
    HttpPolicy::new(server.url.clone(), "test-model".into(), None, None, None, Duration::from_secs(5))
        .expect("build http policy")
}

fn probe_messages() -> Vec<ChatMessage> {
    vec![ChatMessage::system("You answer with SQL."), ChatMessage::user("How many rows?")]
}

#[test]
fn extracts_text_from_default_response_path() {
    let server = MockServer::start(vec![(200, completion_body("<solution>SELECT 1</solution>"))]);
    let policy = policy_for(&server);
    let sampling = SamplingConfig { seed: Some(7), ..SamplingConfig::default() };

    let reply = policy.complete(&probe_messages(), &sampling).expect("completion succeeds");
    assert_eq!(reply.text, "<solution>SELECT 1</solution>");
    assert_eq!(reply.logprob, None);

    let requests = server.requests();
    assert_eq!(requests.len(), 1);
    let request = &requests[0];
    assert!(request.starts_with("POST "), "expected a POST, got: {}", &request[..20.min(request.len())]);
    assert!(request.to_ascii_lowercase().contains("idempotency-key:"), "missing idempotency header");
    let body_start = request.find("\r\n\r\n").expect("request has a body") + 4;
    let body: serde_json::Value = serde_json::from_str(&request[body_start..]).expect("JSON body");
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["seed"], 7);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "How many rows?");
}

#[test]
fn extracts_text_and_logprob_from_custom_paths() {
    let body = r#"{"out": {"text": "hello", "lp": -1.25}}"#.to_string();
    let server = MockServer::start(vec![(200, body)]);
    let policy = HttpPolicy::new(
        server.url.clone(),
        "test-model".into(),
        None,
        Some("out/text"),
        Some("out/lp"),
        Duration::from_secs(5),
    )
    .expect("build http policy");

    let reply = policy.complete(&probe_messages(), &SamplingConfig::default()).expect("completion succeeds");
    assert_eq!(reply.text, "hello");
    assert_eq!(reply.logprob, Some(-1.25));
}

#[test]
fn sends_bearer_auth_when_key_is_set() {
    let server = MockServer::start(vec![(200, completion_body("ok"))]);
    let policy = HttpPolicy::new(
        server.url.clone(),
        "test-model".into(),
        Some("sk-test".into()),
        None,
        None,
        Duration::from_secs(5),
    )
    .expect("build http policy");

    policy.complete(&probe_messages(), &SamplingConfig::default()).expect("completion succeeds");
    let request = server.requests().remove(0).to_ascii_lowercase();
    assert!(request.contains("authorization: bearer sk-test"), "missing bearer header:\n{request}");
}

#[test]
fn classifies_server_errors_as_transport() {
    let server = MockServer::start(vec![(500, r#"{"error": "overloaded"}"#.to_string())]);
    let policy = policy_for(&server);

    let err = policy.complete(&probe_messages(), &SamplingConfig::default()).err().unwrap();
    match err {
        PolicyError::Transport(message) => {
            assert!(message.contains("500"), "status missing from: {message}");
            assert!(message.contains("overloaded"), "body snippet missing from: {message}");
        }
        other => panic!("expected Transport, got {other:?}"),
    }
}

#[test]
fn classifies_non_json_bodies_as_protocol() {
    let server = MockServer::start(vec![(200, "definitely not json".to_string())]);
    let policy = policy_for(&server);

    let err = policy.complete(&probe_messages(), &SamplingConfig::default()).err().unwrap();
    match err {
        PolicyError::Protocol(message) => assert!(message.contains("not JSON"), "got: {message}"),
        other => panic!("expected Protocol, got {other:?}"),
    }
}

#[test]
fn classifies_missing_response_path_as_protocol() {
    let server = MockServer::start(vec![(200, r#"{"choices": []}"#.to_string())]);
    let policy = policy_for(&server);

    let err = policy.complete(&probe_messages(), &SamplingConfig::default()).err().unwrap();
    match err {
        PolicyError::Protocol(message) => {
            assert!(message.contains("choices"), "path missing from: {message}");
        }
        other => panic!("expected Protocol, got {other:?}"),
    }
}

#[test]
fn rollout_retries_transport_failures_until_success() {
    // First call fails with a 500 (retryable Transport), the retry succeeds
    // with a direct solution; the trajectory must come out clean.
    let server = MockServer::start(vec![
        (500, r#"{"error": "try again"}"#.to_string()),
        (200, completion_body("<reasoning>one shot</reasoning>\n<solution>SELECT AVG(price) FROM products</solution>")),
    ]);
    let policy = policy_for(&server);
    let env = products_env_memory();
    let task = products_task(std::path::Path::new(":memory:"));
    let options = RolloutOptions {
        retry: RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) },
        ..RolloutOptions::default()
    };

    let run = sqlturn_core::rollout::run_trajectory(&task, &policy, &env, &options, &SamplingConfig::default())
        .expect("rollout succeeds after retry");
    assert_eq!(run.trajectory.termination, Termination::Solution);
    assert_eq!(run.trajectory.final_sql.as_deref(), Some("SELECT AVG(price) FROM products"));
    assert_eq!(server.requests().len(), 2, "exactly one retry expected");
}

#[test]
fn rollout_gives_up_after_exhausting_attempts() {
    let server = MockServer::start(vec![
        (500, "{}".to_string()),
        (500, "{}".to_string()),
    ]);
    let policy = policy_for(&server);
    let env = products_env_memory();
    let task = products_task(std::path::Path::new(":memory:"));
    let options = RolloutOptions {
        retry: RetryPolicy { attempts: 2, base_delay: Duration::from_millis(1) },
        ..RolloutOptions::default()
    };

    // Exhausting the attempts is not a crash: the trajectory records the
    // permanent failure so the rest of a batch can keep going.
    let run = sqlturn_core::rollout::run_trajectory(&task, &policy, &env, &options, &SamplingConfig::default())
        .expect("policy failure is recorded, not raised");
    assert_eq!(run.trajectory.termination, Termination::PolicyError);
    assert_eq!(run.trajectory.final_sql, None);
    assert!(run.trajectory.turns.is_empty());
    assert_eq!(server.requests().len(), 2);
}
