//! Experiment CLI: generate data, split, train, evaluate, run the full
//! pipeline, and compare finished runs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use imlab_core::config::{parse_config, ExperimentConfig};
use imlab_core::data::write_dataset_csv;
use imlab_core::error::Error;
use imlab_core::experiment::{compare_runs, history_to_csv, load_dataset, run_experiment};
use imlab_core::nn::trainer::{evaluate, train, EvalContext};
use imlab_core::nn::MlpModel;
use imlab_core::splits::split_dataset;

#[derive(Parser)]
#[command(
    name = "imdrug-lab",
    about = "Deep imbalanced learning experiments: balanced metrics, re-balancing losses, split protocols",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset and write it as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the configured split and write the index lists as JSON.
    Split {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json and history.csv into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: load/generate, split, train, evaluate, persist reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate shared metrics of finished runs and correlate two splits.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Two split names to correlate, e.g. --splits standard,random
        #[arg(long, value_delimiter = ',')]
        splits: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_config(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path)?;
    parse_config(&text)
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::GenData { config, out } => {
            let config = read_config(&config)?;
            let dataset = load_dataset(&config)?;
            write_dataset_csv(&dataset, &out)?;
            println!("wrote {} samples to {}", dataset.len(), out.display());
        }
        Command::Split { config, out } => {
            let config = read_config(&config)?;
            let dataset = load_dataset(&config)?;
            let split = split_dataset(&dataset, &config.split_plan()?)?;
            fs::write(&out, split.to_json_string())?;
            println!(
                "split {}: train {}, valid {}, test {} ({} open classes)",
                split.plan.method.name(),
                split.train.len(),
                split.valid.len(),
                split.test.len(),
                split.open_classes.len()
            );
        }
        Command::Train { config, out } => {
            let config = read_config(&config)?;
            let dataset = load_dataset(&config)?;
            let split = split_dataset(&dataset, &config.split_plan()?)?;
            fs::create_dir_all(&out)?;
            let options = config.train_options(Some(&out))?;
            let output = train(&dataset, &split, &options)?;
            fs::write(out.join("checkpoint.json"), output.model.to_checkpoint_json())?;
            fs::write(
                out.join("history.csv"),
                history_to_csv(&output, config.task_kind()?.is_regression()),
            )?;
            match output.best_epoch {
                Some(epoch) => println!("trained; best validation epoch {epoch}"),
                None => println!("trained; no validation selection"),
            }
        }
        Command::Eval { config, model, out } => {
            let config = read_config(&config)?;
            let dataset = load_dataset(&config)?;
            let split = split_dataset(&dataset, &config.split_plan()?)?;
            let checkpoint = fs::read_to_string(&model)?;
            let model = MlpModel::from_checkpoint_json(&checkpoint)?;
            let task = config.task_kind()?;
            // The open-set head is fit from the training split when needed.
            let open_head = match config.train.open.as_ref() {
                Some(open) => Some(imlab_core::nn::trainer::fit_open_head(
                    &model,
                    &dataset,
                    &split,
                    open.percentile,
                )?),
                None => None,
            };
            let ctx = EvalContext {
                split_name: config.split_plan()?.method.name(),
                seed: config.seed,
                regression_bins: config.regression_options()?.bins,
                bin_strategy: config.regression_options()?.strategy,
            };
            let report = evaluate(&model, &dataset, &split, task, open_head.as_ref(), &ctx)?;
            fs::write(&out, report.to_json_string())?;
            println!("wrote {}", out.display());
        }
        Command::Run { config, out } => {
            let config = read_config(&config)?;
            let artifacts = run_experiment(&config, &out)?;
            println!(
                "run complete; report at {}",
                artifacts.report_path.display()
            );
            for key in ["balanced_accuracy", "balanced_f1", "mae"] {
                if let Some(value) = artifacts.report.get(key) {
                    println!("  {key}: {value:.6}");
                }
            }
        }
        Command::Compare {
            reports,
            splits,
            out,
        } => {
            let pair = splits.as_ref().and_then(|names| {
                if names.len() == 2 {
                    Some((names[0].as_str(), names[1].as_str()))
                } else {
                    None
                }
            });
            if splits.as_ref().is_some_and(|names| names.len() != 2) {
                return Err(Error::Config {
                    path: "--splits".into(),
                    message: "expects exactly two comma-separated split names".into(),
                });
            }
            let csv = compare_runs(&reports, pair)?;
            fs::write(&out, csv)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
