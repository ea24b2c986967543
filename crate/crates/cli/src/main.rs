//! `sqlturn` — drive the Text-to-SQL agent harness from the command line.
//!
//! Subcommands cover the full loop: `rollout` collects and scores trajectory
//! groups, `score` re-scores stored trajectories, `eval` measures execution
//! accuracy (greedy, majority-voted, pass@k), `curate` buckets questions by
//! pass rate, and `train-toy` runs the clipped-objective trainer on a
//! self-contained fixture.
//!
//! Exit codes: 0 success, 1 operational failure (I/O, database, endpoint),
//! 2 configuration or usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, HarnessConfig};

#[derive(Parser)]
#[command(name = "sqlturn", version, about = "Multi-turn Text-to-SQL agent harness")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out trajectory groups over a task set and score them.
    Rollout(RolloutArgs),
    /// Score stored trajectories against their tasks.
    Score(ScoreArgs),
    /// Evaluate a policy: execution accuracy, majority voting, pass@k.
    Eval(EvalArgs),
    /// Bucket questions by pass rate into balanced/exploration sets.
    Curate(CurateArgs),
    /// Train the toy softmax policy on a fixture and emit metrics.
    TrainToy(TrainToyArgs),
}

/// Policy selection, shared by the commands that talk to one.
#[derive(Args, Clone, Debug, Default)]
struct PolicyArgs {
    /// Policy kind: http, scripted, or template.
    #[arg(long, value_name = "KIND")]
    policy: Option<String>,
    /// Chat-completions endpoint URL (http policy).
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the endpoint (http policy).
    #[arg(long)]
    model: Option<String>,
    /// Reply script file (scripted policy).
    #[arg(long, value_name = "FILE")]
    script: Option<PathBuf>,
    /// Candidate fixture file (template policy).
    #[arg(long, value_name = "FILE")]
    fixture: Option<PathBuf>,
}

impl PolicyArgs {
    fn apply(&self, config: &mut HarnessConfig) {
        if let Some(kind) = &self.policy {
            config.policy.kind = kind.clone();
        }
        if let Some(endpoint) = &self.endpoint {
            config.policy.endpoint = Some(endpoint.clone());
        }
        if let Some(model) = &self.model {
            config.policy.model = Some(model.clone());
        }
        if let Some(script) = &self.script {
            config.policy.script_path = Some(script.clone());
        }
        if let Some(fixture) = &self.fixture {
            config.policy.fixture_path = Some(fixture.clone());
        }
    }
}

/// Task-set selection, shared by rollout/score/eval.
#[derive(Args, Clone, Debug, Default)]
struct TaskArgs {
    /// Task dataset path.
    #[arg(long, value_name = "FILE")]
    tasks: Option<PathBuf>,
    /// Dataset layout: jsonl, spider-json, or bird-json.
    #[arg(long)]
    format: Option<String>,
    /// Directory holding `<db_id>/<db_id>.sqlite` for benchmark layouts.
    #[arg(long, value_name = "DIR")]
    db_root: Option<PathBuf>,
}

impl TaskArgs {
    fn apply(&self, config: &mut HarnessConfig) {
        if let Some(tasks) = &self.tasks {
            config.tasks = Some(tasks.clone());
        }
        if let Some(format) = &self.format {
            config.format = format.clone();
        }
        if let Some(db_root) = &self.db_root {
            config.db_root = Some(db_root.clone());
        }
    }
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[command(flatten)]
    task_args: TaskArgs,
    #[command(flatten)]
    policy_args: PolicyArgs,
    /// Trajectories per task.
    #[arg(long)]
    group: Option<usize>,
    /// Turn budget per trajectory.
    #[arg(long)]
    turns: Option<usize>,
    /// Root seed for per-member seed derivation.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    task_args: TaskArgs,
    /// Trajectory JSONL produced by `rollout`.
    #[arg(long, value_name = "FILE")]
    trajectories: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    task_args: TaskArgs,
    #[command(flatten)]
    policy_args: PolicyArgs,
    /// Run a temperature-0 trajectory per task.
    #[arg(long, default_value_t = false)]
    greedy: bool,
    /// Sampled candidates per task for majority voting / pass@k.
    #[arg(long)]
    candidates: Option<usize>,
    /// Turn budget per trajectory.
    #[arg(long)]
    turns: Option<usize>,
    /// Root seed for candidate sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Benchmark label used in the CSV summary.
    #[arg(long, default_value = "dev")]
    benchmark_name: String,
    /// Accuracy gain (percentage points) for the data-efficiency figure.
    #[arg(long, requires = "efficiency_n", value_name = "PP")]
    efficiency_delta_pp: Option<f64>,
    /// Training-example count for the data-efficiency figure.
    #[arg(long, requires = "efficiency_delta_pp", value_name = "N")]
    efficiency_n: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CurateArgs {
    /// JSONL of `{"task_id": …, "flags": [true, …]}` attempt records.
    #[arg(long, value_name = "FILE")]
    records: PathBuf,
    /// How many lowest-score questions to keep in the balanced set.
    #[arg(long, value_name = "N")]
    balanced_n: usize,
    /// Zero-pass records re-attempted after SFT (exploration source 1).
    #[arg(long, value_name = "FILE", requires_all = ["synsql_zero", "spider_zero"])]
    post_sft: Option<PathBuf>,
    /// Zero-pass records from the synthetic pool (exploration source 2).
    #[arg(long, value_name = "FILE", requires_all = ["post_sft", "spider_zero"])]
    synsql_zero: Option<PathBuf>,
    /// Zero-pass records from the benchmark train split (exploration source 3).
    #[arg(long, value_name = "FILE", requires_all = ["post_sft", "synsql_zero"])]
    spider_zero: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainToyArgs {
    /// Toy training fixture (database, gold SQL, candidate replies).
    #[arg(long, value_name = "FILE")]
    fixture: PathBuf,
    /// Optimization steps.
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Lower clip threshold ε_low.
    #[arg(long)]
    eps_low: Option<f64>,
    /// Upper clip threshold ε_high.
    #[arg(long)]
    eps_high: Option<f64>,
    /// Samples per group.
    #[arg(long)]
    group: Option<usize>,
    /// Gradient updates per sampled group.
    #[arg(long, default_value_t = 2)]
    inner_epochs: usize,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

/// Marks an error as the caller's fault (exit 2 instead of 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = HarnessConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Rollout(args) => {
            args.task_args.apply(&mut config);
            args.policy_args.apply(&mut config);
            if let Some(group) = args.group {
                config.group = group;
            }
            if let Some(turns) = args.turns {
                config.turns = turns;
            }
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(parallelism) = args.parallelism {
                config.parallelism = parallelism;
            }
            if let Some(out_dir) = args.out_dir {
                config.out_dir = out_dir;
            }
            config.validate()?;
            commands::rollout(&config)
        }
        Command::Score(args) => {
            args.task_args.apply(&mut config);
            if let Some(out_dir) = args.out_dir {
                config.out_dir = out_dir;
            }
            config.validate()?;
            commands::score(&config, &args.trajectories)
        }
        Command::Eval(args) => {
            args.task_args.apply(&mut config);
            args.policy_args.apply(&mut config);
            if let Some(candidates) = args.candidates {
                config.candidates = candidates;
            }
            if let Some(turns) = args.turns {
                config.turns = turns;
            }
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(parallelism) = args.parallelism {
                config.parallelism = parallelism;
            }
            if let Some(out_dir) = args.out_dir {
                config.out_dir = out_dir;
            }
            config.validate()?;
            if !args.greedy && config.candidates == 0 {
                return Err(UsageError(
                    "nothing to evaluate: pass --greedy, --candidates N, or both".into(),
                )
                .into());
            }
            let efficiency = args.efficiency_delta_pp.zip(args.efficiency_n);
            commands::eval(&config, args.greedy, efficiency, &args.benchmark_name)
        }
        Command::Curate(args) => {
            if let Some(out_dir) = args.out_dir {
                config.out_dir = out_dir;
            }
            let exploration = match (args.post_sft, args.synsql_zero, args.spider_zero) {
                (Some(a), Some(b), Some(c)) => Some((a, b, c)),
                _ => None, // clap's requires_all guarantees all-or-none
            };
            commands::curate(&config, &args.records, args.balanced_n, exploration)
        }
        Command::TrainToy(args) => {
            if let Some(out_dir) = args.out_dir {
                config.out_dir = out_dir;
            }
            if let Some(eps_low) = args.eps_low {
                config.clip.eps_low = eps_low;
            }
            if let Some(eps_high) = args.eps_high {
                config.clip.eps_high = eps_high;
            }
            if let Some(group) = args.group {
                config.group = group;
            }
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            config.validate()?;
            commands::train_toy(&config, &args.fixture, args.steps, args.lr, args.inner_epochs)
        }
    }
}

/// Configuration-class failures exit 2; everything else operational exits 1.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    let config_class = err.is::<UsageError>()
        || err.is::<ConfigError>()
        || err
            .downcast_ref::<sqlturn_core::policy::PolicyError>()
            .is_some_and(|e| matches!(e, sqlturn_core::policy::PolicyError::Config(_)));
    if config_class {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
