use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use owr_core::store::Split;
use owr_core::ErrorCategory;

mod commands;
mod config;

use config::RunConfig;

/// Open-world superclass recognition from patch appearance clusters.
///
/// Exit codes: 0 ok, 2 data error, 3 protocol error, 4 internal error.
/// Log verbosity follows `RUST_LOG` (default `warn`).
#[derive(Parser, Debug)]
#[command(name = "owr", version)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a dataset directory and report every problem found.
    Validate { dataset_dir: PathBuf },
    /// Train a model into a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory to create or reuse.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on one split of a dataset.
    Eval(EvalArgs),
    /// Compute the SSE-vs-K curve over `k_grid` and pick the knee.
    Elbow {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate over `sweep_k` x `sweep_positional_weight`.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the cluster of every patch as CSV.
    ExportAssignments {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Restrict to one split (default: all images).
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect model files.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
}

#[derive(Subcommand, Debug)]
enum ModelCommand {
    /// Print the header and summary of a model file.
    Info { model: PathBuf },
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "unknown")]
    split: Split,
    /// Permit evaluating on classes seen in training.
    #[arg(long)]
    allow_known: bool,
    /// Ranks to report as top-k accuracy.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    ks: Vec<usize>,
    /// Report directory (default: the model's directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Configuration sources, applied in order: defaults, `--config` file,
/// `--set` pairs, then the dedicated flags.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dataset_dir: Option<String>,
    /// Cluster count, or `elbow` to choose from `k_grid`.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    k_grid: Option<String>,
    #[arg(long)]
    positional_weight: Option<String>,
    #[arg(long)]
    normalization: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for pair in &self.set {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                owr_core::Error::Config(format!("--set expects KEY=VALUE, got {pair:?}"))
            })?;
            cfg.set(key.trim(), value)?;
        }
        let flags = [
            ("dataset_dir", &self.dataset_dir),
            ("k", &self.k),
            ("k_grid", &self.k_grid),
            ("positional_weight", &self.positional_weight),
            ("normalization", &self.normalization),
            ("seed", &self.seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Validate { dataset_dir } => return Ok(commands::validate(&dataset_dir)),
        Command::Train { config, out } => commands::train(&config.resolve()?, &out)?,
        Command::Eval(a) => commands::eval(
            &a.model,
            &a.dataset,
            a.split,
            a.allow_known,
            &a.ks,
            a.out.as_deref(),
        )?,
        Command::Elbow { config, out } => commands::elbow(&config.resolve()?, &out)?,
        Command::Sweep { config, out } => commands::sweep(&config.resolve()?, &out)?,
        Command::ExportAssignments {
            model,
            dataset,
            split,
            out,
        } => commands::export(&model, &dataset, split, &out)?,
        Command::Model {
            command: ModelCommand::Info { model },
        } => commands::model_info(&model)?,
    }
    Ok(ExitCode::SUCCESS)
}

pub(crate) fn exit_code(category: ErrorCategory) -> ExitCode {
    match category {
        ErrorCategory::Data => ExitCode::from(2),
        ErrorCategory::Protocol => ExitCode::from(3),
        ErrorCategory::Internal => ExitCode::from(4),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let category = err
                .chain()
                .find_map(|e| e.downcast_ref::<owr_core::Error>())
                .map_or(ErrorCategory::Internal, owr_core::Error::category);
            exit_code(category)
        }
    }
}
