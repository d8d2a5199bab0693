//! `wdn` command-line tool.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use exit::Failure;

#[derive(Parser, Debug)]
#[command(name = "wdn", version, about = "Divide-and-conquer super-resolution")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bicubic-downsample every PNG of a directory.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scale: usize,
    },
    /// Export the 11 targets and 32 inputs of one HR image as PNGs.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// Train one stage (or run a joint procedure) and write a checkpoint.
    Train {
        /// Stage to train; required for the stage-wise procedure.
        #[arg(long)]
        stage: Option<u8>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set train.max_epochs=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory (defaults to `output.checkpoint`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Super-resolve one image with a trained checkpoint.
    Upsample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM of predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scale analytic gradients by `1 + PERTURB` (detector self-test).
        #[arg(long, hide = true)]
        perturb: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Degrade { input, out, scale } => {
            commands::init_workers(cli.workers.unwrap_or(0))?;
            commands::degrade(&input, &out, scale)
        }
        Command::Decompose { input, out, scale } => commands::decompose(&input, &out, scale),
        Command::Train {
            stage,
            config,
            overrides,
            resume,
            out,
        } => commands::train(commands::TrainArgs {
            stage,
            config,
            overrides,
            resume,
            out,
            workers: cli.workers,
        }),
        Command::Upsample {
            input,
            ckpt,
            scale,
            out,
        } => {
            commands::init_workers(cli.workers.unwrap_or(0))?;
            commands::upsample(&input, &ckpt, scale, &out)
        }
        Command::Eval {
            pred,
            gt,
            scale,
            report,
        } => {
            commands::init_workers(cli.workers.unwrap_or(0))?;
            commands::eval(&pred, &gt, scale, &report)
        }
        Command::Gradcheck { seed, perturb } => commands::gradcheck(seed, perturb),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
