//! Acceptance gate for the harness: eleven numbered criteria, one test (and
//! one pass/fail line) each. Every tolerance and time budget is pinned as a
//! constant here; anything not listed is asserted exactly.
//!
//! The criteria verify, in order: reward golden values, the turn-reward
//! truth table, total-reward bounds, protocol transcript byte contracts,
//! objective gradient math, asymmetric-clip separation, toy-policy training
//! convergence, curation selection arithmetic, data-efficiency figures, a
//! planted-accuracy end-to-end benchmark, and the documented reproducibility
//! boundary.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{products_env_memory, products_task};
use sqlturn_core::curation::{
    assemble_exploration, difficulty_score, select_balanced, Bucket, CurationRecord,
};
use sqlturn_core::eval::{data_efficiency, evaluate_tasks, EvalOptions};
use sqlturn_core::grpo::{
    clipped_term, grad_check, group_advantages, objective_gradient, toy_train, ClipConfig,
    GroupMember, LogitsSnapshot, RolloutGroup, ToyFixture, ToyTrainConfig, DEFAULT_EPS_STD,
};
use sqlturn_core::policy::{
    ChatMessage, Policy, PolicyError, PolicyReply, SamplingConfig, ScriptedPolicy, TemplatePolicy,
};
use sqlturn_core::protocol::{wrap_observation, ObservationKind, INVALID_ACTION_TEXT};
use sqlturn_core::rewards::{
    bigram_reward, schema_reward, total_reward, turn_reward, RewardComponents, RewardWeights,
};
use sqlturn_core::rollout::{
    run_trajectory, split_seed, RolloutOptions, Termination, FORCED_FINAL_PROMPT,
};
use sqlturn_core::sqlenv::open_database;
use sqlturn_core::taskdata::{
    Difficulty, SchemaCatalog, SchemaColumn, SchemaTable, TaskInstance,
};
use sqlturn_core::REPRODUCIBILITY_NOTE;

/// Worst allowed relative error of the analytic gradient against central
/// finite differences.
const GRAD_TOLERANCE: f64 = 1e-4;
/// Finite-difference step for the gradient check.
const GRAD_STEP: f64 = 1e-5;
/// "Match to 2 decimals": half a unit in the second decimal place.
const TWO_DECIMALS: f64 = 0.005;
/// Random component vectors drawn for the total-reward bound property.
const BOUND_PROPERTY_CASES: usize = 10_000;
/// Training-probability bar the toy policy must clear on its best candidate.
const CONVERGENCE_P_BEST: f64 = 0.9;

fn budget(seconds: u64) -> Duration {
    Duration::from_secs(seconds)
}

fn assert_within(start: Instant, limit: Duration, criterion: &str) {
    let elapsed = start.elapsed();
    assert!(elapsed <= limit, "{criterion} blew its {limit:?} budget: took {elapsed:?}");
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("argmax of a non-empty slice")
}

// --- 1. Reward golden values -------------------------------------------------

#[test]
fn criterion_01_reward_golden_values() {
    let start = Instant::now();

    // Token bigrams: {select·name, name·from, from·teacher} vs
    // {select·name, name·from, from·student} → |∩|=2, |∪|=4.
    let bigram = bigram_reward("SELECT name FROM teacher", "SELECT name FROM student");
    assert_eq!(bigram, 0.5, "bigram Jaccard must be exactly 2/4");

    // Gold touches {Employees, Salary}; the prediction touches Employees plus
    // the hallucinated Wages column, which enlarges the union: 1/3.
    let catalog = SchemaCatalog {
        tables: vec![SchemaTable {
            name: "Employees".into(),
            columns: vec![
                SchemaColumn { name: "EmployeeID".into(), decl_type: "INTEGER".into(), is_primary_key: true },
                SchemaColumn { name: "Salary".into(), decl_type: "REAL".into(), is_primary_key: false },
            ],
        }],
        foreign_keys: vec![],
    };
    let schema = schema_reward("SELECT e.Wages FROM Employees e", "SELECT Salary FROM Employees", &catalog);
    assert_eq!(schema, 1.0 / 3.0, "schema Jaccard must be exactly 1/3");

    assert_within(start, budget(1), "criterion 1");
}

// --- 2. Turn-reward truth table ----------------------------------------------

#[test]
fn criterion_02_turn_reward_truth_table() {
    let start = Instant::now();

    // Expected values written out literally, indexed by t-1, at budget T=10.
    // Simple and medium thresholds ignore execution; hard and extra pay only
    // for an execution-correct finish strictly inside the budget.
    const SIMPLE: [u8; 10] = [1, 1, 0, 0, 0, 0, 0, 0, 0, 0];
    const MEDIUM: [u8; 10] = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
    const HARD_EXEC0: [u8; 10] = [0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
    const HARD_EXEC1: [u8; 10] = [1, 1, 1, 1, 1, 1, 1, 1, 1, 0];

    let mut cases = 0;
    for difficulty in [Difficulty::Simple, Difficulty::Medium, Difficulty::Hard, Difficulty::Extra] {
        for exec in [0u8, 1u8] {
            for t in 1..=10usize {
                let expected = match (difficulty, exec) {
                    (Difficulty::Simple, _) => SIMPLE[t - 1],
                    (Difficulty::Medium, _) => MEDIUM[t - 1],
                    (Difficulty::Hard | Difficulty::Extra, 0) => HARD_EXEC0[t - 1],
                    (Difficulty::Hard | Difficulty::Extra, _) => HARD_EXEC1[t - 1],
                };
                assert_eq!(
                    turn_reward(difficulty, t, 10, exec),
                    expected,
                    "difficulty {difficulty:?}, t={t}, exec={exec}"
                );
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 80);

    assert_within(start, budget(1), "criterion 2");
}

// --- 3. Total-reward bounds --------------------------------------------------

#[test]
fn criterion_03_total_reward_bounds() {
    let start = Instant::now();
    let weights = RewardWeights::default();

    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    for _ in 0..BOUND_PROPERTY_CASES {
        let components = RewardComponents {
            r_exec: u8::from(rng.random::<bool>()),
            r_turns: u8::from(rng.random::<bool>()),
            r_schema: rng.random::<f64>(),
            r_bigram: rng.random::<f64>(),
            r_syntax: u8::from(rng.random::<bool>()),
            r_format: u8::from(rng.random::<bool>()),
        };
        let total = total_reward(&components, &weights).total;
        assert!((0.0..=11.0).contains(&total), "total {total} out of [0, 11] for {components:?}");
    }

    let all_ones = RewardComponents { r_exec: 1, r_turns: 1, r_schema: 1.0, r_bigram: 1.0, r_syntax: 1, r_format: 1 };
    assert_eq!(total_reward(&all_ones, &weights).total, 11.0);

    assert_within(start, budget(5), "criterion 3");
}

// --- 4. Protocol transcript byte contracts -----------------------------------

#[test]
fn criterion_04_protocol_transcripts() {
    let start = Instant::now();
    let env = products_env_memory();
    let task = products_task(Path::new(":memory:"));
    let options = RolloutOptions::default();
    let sampling = SamplingConfig::default();

    // (a) Probe-then-commit: the first observation renders the AVG(price)
    // table byte-for-byte, countdown included.
    let policy = ScriptedPolicy::new(vec![
        "<reasoning>Peek at the average price.</reasoning>\n<sql>SELECT AVG(price) FROM products</sql>".into(),
        "<reasoning>The average is 24.75.</reasoning>\n<solution>SELECT AVG(price) FROM products</solution>".into(),
    ])
    .unwrap();
    let run = run_trajectory(&task, &policy, &env, &options, &sampling).unwrap();
    assert_eq!(run.trajectory.turns.len(), 2);
    assert_eq!(run.trajectory.termination, Termination::Solution);
    assert_eq!(run.trajectory.final_sql.as_deref(), Some("SELECT AVG(price) FROM products"));
    let observation = run.trajectory.turns[0].observation.as_ref().unwrap();
    assert_eq!(observation.kind, ObservationKind::Result);
    assert_eq!(
        observation.text,
        "   AVG(price)\n0       24.75\nYou have 9 turns left to complete the task."
    );
    assert_eq!(
        wrap_observation(observation),
        "<observation>\n   AVG(price)\n0       24.75\nYou have 9 turns left to complete the task.\n</observation>"
    );

    // (b) A tagless turn earns the verbatim invalid-action sentence.
    let policy = ScriptedPolicy::new(vec![
        "Let me think about this out loud first.".into(),
        "<reasoning>ok</reasoning>\n<solution>SELECT AVG(price) FROM products</solution>".into(),
    ])
    .unwrap();
    let run = run_trajectory(&task, &policy, &env, &options, &sampling).unwrap();
    let observation = run.trajectory.turns[0].observation.as_ref().unwrap();
    assert_eq!(observation.kind, ObservationKind::InvalidAction);
    assert_eq!(INVALID_ACTION_TEXT, "Your previous action is invalid. Think and try again.");
    assert_eq!(
        observation.text,
        "Your previous action is invalid. Think and try again.\nYou have 9 turns left to complete the task."
    );

    // (c) A 120-row result is cut to 50 rendered rows plus the notice line.
    let wide_env = sqlturn_core::sqlenv::open_in_memory().unwrap();
    wide_env
        .execute_batch(
            "CREATE TABLE nums (n INTEGER);
             WITH RECURSIVE seq(n) AS (SELECT 1 UNION ALL SELECT n + 1 FROM seq WHERE n < 120)
             INSERT INTO nums SELECT n FROM seq;",
        )
        .unwrap();
    let policy = ScriptedPolicy::new(vec![
        "<reasoning>scan</reasoning>\n<sql>SELECT n FROM nums ORDER BY n</sql>".into(),
        "<reasoning>done</reasoning>\n<solution>SELECT COUNT(*) FROM nums</solution>".into(),
    ])
    .unwrap();
    let run = run_trajectory(&task, &policy, &wide_env, &options, &sampling).unwrap();
    let observation = run.trajectory.turns[0].observation.as_ref().unwrap();
    let lines: Vec<&str> = observation.text.lines().collect();
    // header + 50 data rows + truncation notice + countdown
    assert_eq!(lines.len(), 1 + 50 + 1 + 1);
    assert_eq!(lines[51], "[Showing first 50 of 120 rows]");
    assert_eq!(lines[52], "You have 9 turns left to complete the task.");

    // (d) Exhausting a 3-turn budget forces one extra answer-only generation.
    assert_eq!(
        FORCED_FINAL_PROMPT,
        "You have used all of your turns. Provide your final answer now as a single SQL query inside <solution>...</solution> tags."
    );
    let probe = "<reasoning>probe</reasoning>\n<sql>SELECT price FROM products</sql>".to_string();
    let policy = ScriptedPolicy::new(vec![
        probe.clone(),
        probe.clone(),
        probe,
        "<reasoning>forced</reasoning>\n<solution>SELECT AVG(price) FROM products</solution>".into(),
    ])
    .unwrap();
    let short = RolloutOptions { turn_budget: 3, ..RolloutOptions::default() };
    let run = run_trajectory(&task, &policy, &env, &short, &sampling).unwrap();
    assert_eq!(run.trajectory.termination, Termination::BudgetForced);
    assert_eq!(run.trajectory.turns.len(), 4);
    assert_eq!(run.trajectory.turns[3].index, 4);
    assert_eq!(run.trajectory.turns[2].observation.as_ref().unwrap().turns_left, 0);
    assert_eq!(run.trajectory.final_sql.as_deref(), Some("SELECT AVG(price) FROM products"));

    assert_within(start, budget(10), "criterion 4");
}

// --- 5. Objective gradient math ----------------------------------------------

fn four_candidates() -> Vec<String> {
    vec!["a".into(), "b".into(), "c".into(), "d".into()]
}

fn member(snapshot: &LogitsSnapshot, sample_index: usize, reward: f64) -> GroupMember {
    GroupMember { sample_index, reward, old_logprob: snapshot.log_prob(sample_index) }
}

#[test]
fn criterion_05_objective_math() {
    let start = Instant::now();
    let clip = ClipConfig::default();

    // Analytic gradient vs central differences at a kink-free point (all
    // ratios well inside the clip interval).
    let old = TemplatePolicy::new(four_candidates(), vec![0.0; 4]).unwrap();
    let snapshot = LogitsSnapshot::of(&old);
    let new_policy = TemplatePolicy::new(four_candidates(), vec![0.05, -0.03, 0.02, -0.01]).unwrap();
    let groups = vec![
        RolloutGroup {
            members: vec![member(&snapshot, 0, 11.0), member(&snapshot, 1, 2.0), member(&snapshot, 2, 0.5)],
        },
        RolloutGroup {
            members: vec![member(&snapshot, 1, 3.0), member(&snapshot, 2, 3.0), member(&snapshot, 3, 7.0)],
        },
    ];
    let worst = grad_check(&new_policy, &groups, &snapshot, &clip, DEFAULT_EPS_STD, GRAD_STEP).unwrap();
    assert!(worst < GRAD_TOLERANCE, "gradient check failed: worst relative error {worst}");

    // Clipped-term goldens: the upper clamp caps a positive-advantage ratio
    // at 1.28; the min() keeps the pessimistic branch at -0.8 below.
    assert_eq!(clipped_term(1.5, 1.0, &clip), 1.28);
    assert_eq!(clipped_term(0.5, -1.0, &clip), -0.8);

    // A group with identical rewards has zero-variance advantages and must
    // contribute an exactly-zero gradient.
    let degenerate = vec![RolloutGroup {
        members: vec![member(&snapshot, 0, 4.0), member(&snapshot, 1, 4.0), member(&snapshot, 2, 4.0)],
    }];
    let advantages = group_advantages(&[4.0, 4.0, 4.0], DEFAULT_EPS_STD);
    assert_eq!(advantages, vec![0.0, 0.0, 0.0]);
    let grad = objective_gradient(&new_policy, &degenerate, &snapshot, &clip, DEFAULT_EPS_STD).unwrap();
    assert_eq!(grad, vec![0.0, 0.0, 0.0, 0.0]);

    assert_within(start, budget(10), "criterion 5");
}

// --- 6. Asymmetric-clip separation -------------------------------------------

#[test]
fn criterion_06_asymmetric_clip_separation() {
    let start = Instant::now();

    // Old policy: uniform over two candidates. New policy: p = (0.62, 0.38),
    // so the ratios are (1.24, 0.76). The positive-advantage member sits in
    // (1 + 0.2, 1 + 0.28]: alive under the widened upper clip, dead under the
    // symmetric one. The negative-advantage member is below 1 - 0.2 and dead
    // under both.
    let candidates = vec!["a".to_string(), "b".to_string()];
    let old = TemplatePolicy::new(candidates.clone(), vec![0.0, 0.0]).unwrap();
    let snapshot = LogitsSnapshot::of(&old);
    let new_policy = TemplatePolicy::new(candidates, vec![0.489_548_225_318_705_8, 0.0]).unwrap();
    let groups = vec![RolloutGroup {
        members: vec![member(&snapshot, 0, 1.0), member(&snapshot, 1, 0.0)],
    }];

    let rho = (new_policy.log_probabilities()[0] - snapshot.log_prob(0)).exp();
    assert!(rho > 1.2 && rho <= 1.28, "fixture ratio {rho} must land inside (1.2, 1.28]");

    let higher = ClipConfig { eps_low: 0.2, eps_high: 0.28 };
    let grad = objective_gradient(&new_policy, &groups, &snapshot, &higher, DEFAULT_EPS_STD).unwrap();
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm > 0.0, "widened upper clip must keep the gradient alive, got {grad:?}");

    let symmetric = ClipConfig { eps_low: 0.2, eps_high: 0.2 };
    let grad = objective_gradient(&new_policy, &groups, &snapshot, &symmetric, DEFAULT_EPS_STD).unwrap();
    assert_eq!(grad, vec![0.0, 0.0], "symmetric clip must kill the gradient exactly");

    assert_within(start, budget(5), "criterion 6");
}

// --- 7. Toy training convergence ----------------------------------------------

/// Plain REINFORCE with a mean baseline: an independent check that the best
/// candidate really is the training target, free of clipping and ratios.
fn reinforce_argmax(rewards: &[f64], steps: usize, lr: f64, group_size: usize, seed: u64) -> usize {
    let mut theta = vec![0.0; rewards.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..steps {
        let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = theta.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();

        let samples: Vec<usize> = (0..group_size)
            .map(|_| {
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i;
                    }
                }
                probs.len() - 1
            })
            .collect();
        let baseline: f64 = samples.iter().map(|&i| rewards[i]).sum::<f64>() / group_size as f64;

        let mut grad = vec![0.0; theta.len()];
        for &i in &samples {
            let advantage = rewards[i] - baseline;
            for (k, g) in grad.iter_mut().enumerate() {
                let indicator = if k == i { 1.0 } else { 0.0 };
                *g += advantage * (indicator - probs[k]) / group_size as f64;
            }
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t += lr * g;
        }
    }
    argmax(&theta)
}

#[test]
fn criterion_07_toy_training_convergence() {
    let start = Instant::now();
    let fixture_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy_policy.json");
    let fixture = ToyFixture::load(&fixture_path).unwrap();
    let rewards = fixture.candidate_rewards(&RewardWeights::default()).unwrap();
    let best = argmax(&rewards);

    let config = ToyTrainConfig::default();
    assert_eq!(config.steps, 500);
    let mut policy = fixture.policy().unwrap();
    let metrics = toy_train(&mut policy, &rewards, &config).unwrap();
    let final_p_best = metrics.last().unwrap().p_best;
    assert!(
        final_p_best > CONVERGENCE_P_BEST,
        "P(best) only reached {final_p_best} after {} steps",
        config.steps
    );
    assert_eq!(argmax(&policy.probabilities()), best);

    // Same seed, same run: training is deterministic.
    let mut rerun = fixture.policy().unwrap();
    let rerun_metrics = toy_train(&mut rerun, &rewards, &config).unwrap();
    assert_eq!(policy.logits(), rerun.logits());
    assert_eq!(final_p_best.to_bits(), rerun_metrics.last().unwrap().p_best.to_bits());

    // The independent oracle agrees on which candidate wins.
    assert_eq!(reinforce_argmax(&rewards, 500, 0.05, 6, 1_234_567), best);

    assert_within(start, budget(60), "criterion 7");
}

// --- 8. Curation selection arithmetic ----------------------------------------

#[test]
fn criterion_08_curation_selection() {
    let start = Instant::now();

    // Score goldens: the extremes collapse to 1 (uninformative), interior
    // pass rates score as themselves.
    assert_eq!(difficulty_score(0.0), 1.0);
    assert_eq!(difficulty_score(1.0 / 6.0), 1.0 / 6.0);
    assert_eq!(difficulty_score(0.5), 0.5);
    assert_eq!(difficulty_score(1.0), 1.0);

    // 2,800 synthetic records cycling through 0..=6 passes out of 6; the 700
    // selected must dominate every unselected record on score.
    let records: Vec<CurationRecord> = (0..2_800)
        .map(|i| {
            let passes = i % 7;
            let flags: Vec<bool> = (0..6).map(|j| j < passes).collect();
            CurationRecord::from_flags(format!("syn-{i:04}"), flags)
        })
        .collect();
    let selected = select_balanced(&records, 700).unwrap();
    assert_eq!(selected.len(), 700);
    assert!(selected.iter().all(|r| r.bucket == Bucket::Balanced));

    let chosen: BTreeSet<&str> = selected.iter().map(|r| r.task_id.as_str()).collect();
    let max_selected = selected.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
    let min_unselected = records
        .iter()
        .filter(|r| !chosen.contains(r.task_id.as_str()))
        .map(|r| r.score)
        .fold(f64::INFINITY, f64::min);
    assert!(
        max_selected <= min_unselected,
        "selection not score-dominant: max selected {max_selected} > min unselected {min_unselected}"
    );

    // Exploration assembly is pure disjoint concatenation: 127 + 100 + 100.
    let zero_pass = |prefix: &str, count: usize| -> Vec<CurationRecord> {
        (0..count).map(|i| CurationRecord::from_flags(format!("{prefix}-{i:03}"), vec![false; 6])).collect()
    };
    let set = assemble_exploration(&zero_pass("post", 127), &zero_pass("syn", 100), &zero_pass("spider", 100))
        .unwrap();
    assert_eq!(set.records.len(), 327);
    assert_eq!((set.from_post_sft, set.from_synsql_zero, set.from_spider_zero), (127, 100, 100));
    assert!(set.records.iter().all(|r| r.bucket == Bucket::Exploration));

    assert_within(start, budget(5), "criterion 8");
}

// --- 9. Data-efficiency goldens ----------------------------------------------

#[test]
fn criterion_09_data_efficiency_goldens() {
    let start = Instant::now();

    for (delta_pp, n, want) in [(3.8, 2_000, 1.90), (9.2, 2_000, 4.60), (1.3, 5_000, 0.26), (8.0, 5_000, 1.60)] {
        let efficiency = data_efficiency(delta_pp, n);
        assert!(
            (efficiency.value - want).abs() < TWO_DECIMALS,
            "data_efficiency({delta_pp}, {n}) = {} but wanted {want} to 2 decimals",
            efficiency.value
        );
    }

    assert_within(start, budget(1), "criterion 9");
}

// --- 10. Planted-accuracy end-to-end benchmark --------------------------------

/// A policy that answers purely from the derived sampling seed, so correct
/// and incorrect solutions can be planted per (task, member) ahead of time.
struct PlantedPolicy {
    by_seed: HashMap<u64, String>,
}

impl Policy for PlantedPolicy {
    fn name(&self) -> &'static str {
        "planted"
    }

    fn complete(&self, _messages: &[ChatMessage], sampling: &SamplingConfig) -> Result<PolicyReply, PolicyError> {
        let seed = sampling.seed.expect("evaluation derives a seed for every run");
        let sql = self
            .by_seed
            .get(&seed)
            .unwrap_or_else(|| panic!("no planted answer for seed {seed}"));
        Ok(PolicyReply {
            text: format!("<reasoning>planted</reasoning>\n<solution>{sql}</solution>"),
            logprob: None,
        })
    }
}

#[test]
fn criterion_10_planted_accuracy_benchmark() {
    let start = Instant::now();
    const CORRECT: &str = "SELECT v FROM kv WHERE k = 'answer'";
    const WRONG: &str = "SELECT v + 1 FROM kv WHERE k = 'answer'";
    const ROOT_SEED: u64 = 7;

    let dir = tempfile::tempdir().unwrap();
    let db_path = dir.path().join("bench.sqlite");
    open_database(&db_path, false)
        .unwrap()
        .execute_batch("CREATE TABLE kv (k TEXT PRIMARY KEY, v INTEGER); INSERT INTO kv VALUES ('answer', 42);")
        .unwrap();
    let schema = SchemaCatalog {
        tables: vec![SchemaTable {
            name: "kv".into(),
            columns: vec![
                SchemaColumn { name: "k".into(), decl_type: "TEXT".into(), is_primary_key: true },
                SchemaColumn { name: "v".into(), decl_type: "INTEGER".into(), is_primary_key: false },
            ],
        }],
        foreign_keys: vec![],
    };

    // Greedy: correct on tasks 0..=6 (7 of 10). Candidates: tasks 0..=7 get
    // a 5-correct/3-wrong split (majority right); tasks 8 and 9 get 5 agreeing
    // wrong answers versus 3 correct ones (majority wrong) — 8 of 10.
    let mut by_seed = HashMap::new();
    let mut tasks = Vec::new();
    for i in 0..10usize {
        let id = format!("task-{i:02}");
        let greedy_sql = if i < 7 { CORRECT } else { WRONG };
        by_seed.insert(split_seed(ROOT_SEED, &id, u64::MAX), greedy_sql.to_string());
        for j in 0..8u64 {
            let candidate_sql = match (i < 8, j < 5) {
                (true, true) => CORRECT,
                (true, false) => WRONG,
                (false, true) => WRONG,
                (false, false) => CORRECT,
            };
            by_seed.insert(split_seed(ROOT_SEED, &id, j), candidate_sql.to_string());
        }
        tasks.push(TaskInstance {
            id,
            question: "What value is stored under 'answer'?".into(),
            database_id: "bench".into(),
            db_path: db_path.clone(),
            schema: schema.clone(),
            gold_sql: CORRECT.into(),
            difficulty: Difficulty::Simple,
            external_knowledge: None,
            engine: "SQLite".into(),
        });
    }
    assert_eq!(by_seed.len(), 90, "derived seeds must not collide");

    let policy = PlantedPolicy { by_seed };
    let options = EvalOptions { greedy: true, candidates: 8, root_seed: ROOT_SEED, ..EvalOptions::default() };
    let report = evaluate_tasks(&tasks, &policy, &options).unwrap();

    assert_eq!(report.ex_greedy, Some(70.0));
    assert_eq!(report.ex_majority, Some(80.0));
    assert_eq!(report.per_task.len(), 10);
    // Every task has at least one correct candidate among its eight.
    assert_eq!(report.pass_at_k.get(&8), Some(&100.0));

    assert_within(start, budget(30), "criterion 10");
}

// --- 11. Reproducibility boundary ---------------------------------------------

#[test]
fn criterion_11_reproducibility_statement() {
    let start = Instant::now();

    // The harness must say outright that trained-model accuracy figures are
    // out of reach without full-scale training, and that criteria 1-10 are
    // the stand-in verification bar.
    assert!(REPRODUCIBILITY_NOTE.contains("not reproducible"));
    assert!(REPRODUCIBILITY_NOTE.contains("full-scale LLM training"));
    assert!(REPRODUCIBILITY_NOTE.contains("substitute verification bar"));

    let readme_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let readme = std::fs::read_to_string(&readme_path).expect("README.md at the workspace root");
    assert!(
        readme.contains("not reproducible"),
        "the README must state the reproducibility boundary explicitly"
    );

    assert_within(start, budget(1), "criterion 11");
}
