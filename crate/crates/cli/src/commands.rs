//! Command bodies behind the `sqlturn` subcommands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sqlturn_core::curation::{assemble_exploration, select_balanced, Bucket, CurationRecord};
use sqlturn_core::eval::{emit_report, evaluate_tasks, write_summary_csv, EvalOptions};
use sqlturn_core::grpo::{toy_train, ToyFixture, ToyTrainConfig};
use sqlturn_core::policy::create_policy;
use sqlturn_core::rewards::score_trajectory;
use sqlturn_core::rollout::{load_trajectories, run_group, save_trajectories, Trajectory};
use sqlturn_core::sqlenv::open_database;
use sqlturn_core::taskdata::{load_tasks, TaskFormat, TaskInstance};
use sqlturn_core::REPRODUCIBILITY_NOTE;

use crate::config::HarnessConfig;

fn parse_format(config: &HarnessConfig) -> anyhow::Result<TaskFormat> {
    config.format.parse::<TaskFormat>().map_err(|e| crate::UsageError(e).into())
}

fn load_task_set(config: &HarnessConfig) -> anyhow::Result<Vec<TaskInstance>> {
    let Some(tasks_path) = &config.tasks else {
        bail!(crate::UsageError("no task dataset given (set --tasks or `tasks` in the config)".into()));
    };
    let format = parse_format(config)?;
    load_tasks(tasks_path, format, config.db_root.as_deref())
        .with_context(|| format!("loading tasks from {}", tasks_path.display()))
}

fn ensure_out_dir(config: &HarnessConfig) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating output directory {}", config.out_dir.display()))?;
    Ok(config.out_dir.clone())
}

/// Roll out `group` trajectories per task, score each one, and write
/// `trajectories.jsonl` into the output directory.
pub fn rollout(config: &HarnessConfig) -> anyhow::Result<()> {
    let tasks = load_task_set(config)?;
    let policy = create_policy(&config.policy)?;
    let options = config.rollout_options();
    let limits = config.exec_limits();
    let out_dir = ensure_out_dir(config)?;

    let mut all: Vec<Trajectory> = Vec::with_capacity(tasks.len() * config.group);
    let mut reward_sum = 0.0;
    for task in &tasks {
        let db_path = PathBuf::from(&task.db_path);
        let open_env = || open_database(&db_path, true);
        let runs = run_group(task, policy.as_ref(), open_env, config.group, &options, &config.sampling, config.seed)
            .with_context(|| format!("rolling out task {}", task.id))?;
        let scoring_env = open_database(Path::new(&task.db_path), true)?;
        for run in runs {
            let mut trajectory = run.trajectory;
            let reward = score_trajectory(&trajectory, task, &scoring_env, &limits, &config.weights)
                .with_context(|| format!("scoring task {}", task.id))?;
            reward_sum += reward.total;
            trajectory.reward = Some(reward);
            all.push(trajectory);
        }
    }

    let out_path = out_dir.join("trajectories.jsonl");
    save_trajectories(&out_path, &all)?;
    println!("rolled out {} trajectories over {} tasks -> {}", all.len(), tasks.len(), out_path.display());
    println!("mean reward: {:.4}", reward_sum / all.len() as f64);
    Ok(())
}

/// One scored trajectory, flattened for spreadsheet-friendly JSONL.
#[derive(Serialize)]
struct ScoreRecord<'a> {
    task_id: &'a str,
    #[serde(flatten)]
    reward: sqlturn_core::rewards::RewardBreakdown,
}

/// Re-score a trajectory file against its tasks and write `scores.jsonl`.
pub fn score(config: &HarnessConfig, trajectories_path: &Path) -> anyhow::Result<()> {
    let tasks = load_task_set(config)?;
    let by_id: BTreeMap<&str, &TaskInstance> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let trajectories = load_trajectories(trajectories_path)?;
    if trajectories.is_empty() {
        bail!("no trajectories in {}", trajectories_path.display());
    }
    let limits = config.exec_limits();
    let out_dir = ensure_out_dir(config)?;
    let out_path = out_dir.join("scores.jsonl");
    let mut writer = BufWriter::new(File::create(&out_path)?);
    let mut envs: BTreeMap<&str, sqlturn_core::sqlenv::SqlEnv> = BTreeMap::new();
    let mut total = 0.0;
    for trajectory in &trajectories {
        let Some(task) = by_id.get(trajectory.task_id.as_str()) else {
            bail!("trajectory references unknown task {}", trajectory.task_id);
        };
        if !envs.contains_key(task.id.as_str()) {
            envs.insert(task.id.as_str(), open_database(Path::new(&task.db_path), true)?);
        }
        let env = &envs[task.id.as_str()];
        let reward = score_trajectory(trajectory, task, env, &limits, &config.weights)
            .with_context(|| format!("scoring task {}", task.id))?;
        total += reward.total;
        let record = ScoreRecord { task_id: &trajectory.task_id, reward };
        writeln!(writer, "{}", serde_json::to_string(&record)?)?;
    }
    writer.flush()?;
    println!("scored {} trajectories -> {}", trajectories.len(), out_path.display());
    println!("mean reward: {:.4}", total / trajectories.len() as f64);
    Ok(())
}

/// Evaluate the configured policy and write `report.json` + `summary.csv`.
pub fn eval(
    config: &HarnessConfig,
    greedy: bool,
    efficiency: Option<(f64, usize)>,
    benchmark_name: &str,
) -> anyhow::Result<()> {
    let tasks = load_task_set(config)?;
    let policy = create_policy(&config.policy)?;
    let options = EvalOptions {
        greedy,
        candidates: config.candidates,
        rollout: config.rollout_options(),
        sampling: config.sampling.clone(),
        root_seed: config.seed,
        efficiency,
    };
    let report = evaluate_tasks(&tasks, policy.as_ref(), &options)?;
    let out_dir = ensure_out_dir(config)?;
    let report_path = out_dir.join("report.json");
    emit_report(&report, &report_path)?;
    let csv_path = out_dir.join("summary.csv");
    write_summary_csv(&report, benchmark_name, &csv_path)?;

    if let Some(ex) = report.ex_greedy {
        println!("EX (greedy):   {ex:.2}");
    }
    if let Some(ex) = report.ex_majority {
        println!("EX (majority): {ex:.2}");
    }
    for (k, value) in &report.pass_at_k {
        println!("pass@{k}: {value:.2}");
    }
    if let Some(eff) = &report.efficiency {
        println!("data efficiency: {:.2} pp per 1000 examples", eff.value);
    }
    println!("report: {}", report_path.display());
    println!();
    println!("{REPRODUCIBILITY_NOTE}");
    Ok(())
}

/// Raw attempt record as `curate` reads them: task id plus per-attempt
/// success flags.
#[derive(Deserialize)]
struct AttemptRecord {
    task_id: String,
    flags: Vec<bool>,
}

fn read_attempt_records(path: &Path) -> anyhow::Result<Vec<CurationRecord>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: AttemptRecord = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        if raw.flags.is_empty() {
            bail!("{} line {}: record {} has no attempt flags", path.display(), i + 1, raw.task_id);
        }
        records.push(CurationRecord::from_flags(raw.task_id, raw.flags));
    }
    if records.is_empty() {
        bail!("no records in {}", path.display());
    }
    Ok(records)
}

fn write_records_jsonl(path: &Path, records: &[CurationRecord]) -> anyhow::Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for record in records {
        writeln!(writer, "{}", serde_json::to_string(record)?)?;
    }
    writer.flush()?;
    Ok(())
}

/// Select the balanced training set from attempt records, and optionally
/// assemble the zero-pass exploration set from three sources.
pub fn curate(
    config: &HarnessConfig,
    records_path: &Path,
    balanced_n: usize,
    exploration: Option<(PathBuf, PathBuf, PathBuf)>,
) -> anyhow::Result<()> {
    let mut records = read_attempt_records(records_path)?;
    let selected = select_balanced(&records, balanced_n)?;
    let chosen: std::collections::BTreeSet<&str> = selected.iter().map(|r| r.task_id.as_str()).collect();
    for record in &mut records {
        record.bucket = if chosen.contains(record.task_id.as_str()) { Bucket::Balanced } else { Bucket::Rejected };
    }
    let out_dir = ensure_out_dir(config)?;
    let curation_path = out_dir.join("curation.jsonl");
    write_records_jsonl(&curation_path, &records)?;
    println!("kept {} of {} records in the balanced set -> {}", balanced_n, records.len(), curation_path.display());

    if let Some((post_sft, synsql_zero, spider_zero)) = exploration {
        let a = read_attempt_records(&post_sft)?;
        let b = read_attempt_records(&synsql_zero)?;
        let c = read_attempt_records(&spider_zero)?;
        let set = assemble_exploration(&a, &b, &c)?;
        let exploration_path = out_dir.join("exploration.jsonl");
        write_records_jsonl(&exploration_path, &set.records)?;
        println!(
            "exploration set: {} records ({} + {} + {}) -> {}",
            set.records.len(),
            set.from_post_sft,
            set.from_synsql_zero,
            set.from_spider_zero,
            exploration_path.display()
        );
    }
    Ok(())
}

/// Trained-policy snapshot written by `train-toy`.
#[derive(Serialize)]
struct TrainedPolicy<'a> {
    candidates: &'a [String],
    logits: &'a [f64],
    probabilities: Vec<f64>,
    best_index: usize,
}

/// Train the toy policy on a fixture; write per-step `metrics.csv` and the
/// final `trained_policy.json`.
pub fn train_toy(
    config: &HarnessConfig,
    fixture_path: &Path,
    steps: usize,
    lr: f64,
    inner_epochs: usize,
) -> anyhow::Result<()> {
    let fixture = ToyFixture::load(fixture_path)
        .with_context(|| format!("loading fixture {}", fixture_path.display()))?;
    let mut policy = fixture.policy()?;
    let rewards = fixture.candidate_rewards(&config.weights)?;
    println!("candidate rewards: {rewards:?}");

    let train_config = ToyTrainConfig {
        steps,
        lr,
        group_size: config.group,
        inner_epochs,
        clip: config.clip,
        seed: config.seed,
        ..ToyTrainConfig::default()
    };
    let history = toy_train(&mut policy, &rewards, &train_config)?;

    let out_dir = ensure_out_dir(config)?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut writer = BufWriter::new(File::create(&metrics_path)?);
    writeln!(writer, "step,objective,mean_reward,p_best,max_ratio,clip_fraction")?;
    for m in &history {
        writeln!(
            writer,
            "{},{},{},{},{},{}",
            m.step, m.objective, m.mean_reward, m.p_best, m.max_ratio, m.clip_fraction
        )?;
    }
    writer.flush()?;

    let snapshot = TrainedPolicy {
        candidates: policy.candidates(),
        logits: policy.logits(),
        probabilities: policy.probabilities(),
        best_index: policy.argmax(),
    };
    let policy_path = out_dir.join("trained_policy.json");
    let mut writer = BufWriter::new(File::create(&policy_path)?);
    serde_json::to_writer_pretty(&mut writer, &snapshot)?;
    writer.write_all(b"\n")?;
    writer.flush()?;

    let last = history.last().expect("steps >= 1 produces metrics");
    println!("trained {} steps; p_best = {:.4}; argmax candidate = {}", history.len(), last.p_best, snapshot.best_index);
    println!("metrics: {}", metrics_path.display());
    println!("policy:  {}", policy_path.display());
    Ok(())
}
