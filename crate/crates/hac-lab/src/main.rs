//! `hac-lab` — pretrain, unlearn, evaluate, sweep, export, and gradient-check
//! dual-encoder models from a single JSON run config.
//!
//! Exit codes: 0 success, 1 validation (bad flags or config), 2 numerical
//! failure, 3 I/O failure. Verbs that produce artifacts print their run
//! directory on success.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use hac_lab::commands;
use hac_lab::config::RunConfig;
use hac_lab::LabResult;

#[derive(Parser)]
#[command(
    name = "hac-lab",
    version,
    about = "Desk-scale concept-unlearning lab for dual-encoder contrastive models"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Initialize and contrastively pretrain a model.
    Pretrain {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Unlearn the configured forget classes from a checkpoint.
    Unlearn {
        #[command(flatten)]
        common: ConfigArgs,
        /// Pretrained checkpoint to start from.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint on held-out samples.
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        /// Checkpoint to evaluate.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// One unlearning run per value of one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: ConfigArgs,
        /// Base checkpoint; omit to pretrain once up front.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Hyperparameter to vary (alpha, beta, gamma, epsilon, omega_r,
        /// omega_f, lambda_reg, tau).
        #[arg(long, value_name = "NAME")]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_name = "V1,V2,...", value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Encode the evaluation samples with a checkpoint and write them to CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: ConfigArgs,
        /// Checkpoint to encode with.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Verify every loss gradient against finite differences.
    GradCheck {
        /// Seed for the check points.
        #[arg(long, value_name = "INT", default_value_t = 4242)]
        seed: u64,
    },
}

fn load(common: &ConfigArgs) -> LabResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply_overrides(common.seed, common.out.as_deref());
    cfg.validate()?;
    Ok(cfg)
}

fn run(verb: Verb) -> LabResult<Option<PathBuf>> {
    match verb {
        Verb::Pretrain { common } => Ok(Some(commands::cmd_pretrain(&load(&common)?)?)),
        Verb::Unlearn { common, checkpoint } => {
            Ok(Some(commands::cmd_unlearn(&load(&common)?, &checkpoint)?))
        }
        Verb::Eval { common, checkpoint } => {
            Ok(Some(commands::cmd_eval(&load(&common)?, &checkpoint)?))
        }
        Verb::Sweep { common, checkpoint, axis, values } => Ok(Some(commands::cmd_sweep(
            &load(&common)?,
            &axis,
            &values,
            checkpoint.as_deref(),
        )?)),
        Verb::ExportEmbeddings { common, checkpoint } => {
            Ok(Some(commands::cmd_export_embeddings(&load(&common)?, &checkpoint)?))
        }
        Verb::GradCheck { seed } => {
            commands::cmd_grad_check(seed)?;
            Ok(None)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.verb) {
        Ok(Some(dir)) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
