use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcmann::harness::{
    evaluate_checkpoint, gen_data, inspect_checkpoint, train, HarnessError, RunConfig, Seeds, Task, TrainOptions,
};
use dcmann::model::Variant;
use dcmann::tasks::read_jsonl;

#[derive(Parser)]
#[command(
    name = "dcmann",
    version,
    about = "Memory-augmented sequence-to-sequence training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON). Missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sets the data, init and shuffle seeds at once.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset: JSON Lines splits plus vocab.json.
    GenData {
        #[command(flatten)]
        common: Common,
        /// odd-even, emr-procedure or emr-drug.
        #[arg(long)]
        task: Option<Task>,
    },
    /// Train a model; writes metrics.csv, checkpoints and read-mode logs.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.jsonl, vocab.json and optionally
        /// valid.jsonl and test.jsonl.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Continue from latest.ckpt in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop cleanly after this many training steps.
        #[arg(long)]
        pause_at: Option<usize>,
    },
    /// Greedy-decode a dataset and write eval_report.{json,csv}.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON Lines dataset.
        #[arg(long)]
        data: PathBuf,
        /// Vocabulary to check against; defaults to vocab.json next to the data.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Dump per-step memory addressing and read-mode summaries.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Example index; repeat for several. Defaults to the first ten.
        #[arg(long)]
        example: Vec<usize>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = Seeds::all(seed);
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn out_or(common: &Common, default: &Path) -> PathBuf {
    common.out.clone().unwrap_or_else(|| default.to_path_buf())
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::GenData { common, task } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = task {
                cfg.task = t;
            }
            let default = cfg
                .data
                .dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("data").join(cfg.task.name()));
            let out = out_or(&common, &default);
            print_json(&gen_data(&cfg, &out)?);
        }
        Command::Train {
            common,
            data,
            variant,
            epochs,
            max_steps,
            resume,
            pause_at,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(out) = common.out {
                cfg.out_dir = out;
            }
            if let Some(dir) = data {
                cfg.data.dir = Some(dir);
            }
            if let Some(v) = variant {
                cfg.model.variant = v;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if max_steps.is_some() {
                cfg.max_steps = max_steps;
            }
            print_json(&train(&cfg, TrainOptions { resume, pause_at })?);
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            vocab,
        } => {
            let out = out_or(&common, checkpoint.parent().unwrap_or(Path::new(".")));
            let report = evaluate_checkpoint(&checkpoint, &data, vocab.as_deref(), &out)?;
            print_json(&report.summary);
        }
        Command::Inspect {
            common,
            checkpoint,
            data,
            example,
        } => {
            let out = out_or(&common, &checkpoint.parent().unwrap_or(Path::new(".")).join("inspect"));
            let examples = if example.is_empty() {
                (0..read_jsonl(&data)?.len().min(10)).collect()
            } else {
                example
            };
            print_json(&inspect_checkpoint(&checkpoint, &data, &examples, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DCMANN_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result: anyhow::Result<()> = run(cli.command).map_err(Into::into);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let usage = e.downcast_ref::<HarnessError>().is_some_and(HarnessError::is_usage);
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
