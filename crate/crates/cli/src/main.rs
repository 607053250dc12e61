//! `postcn`: synthetic data, augmentation, training and evaluation from the
//! command line.
//!
//! Numeric results go to stdout as JSON; logs go to stderr and are
//! controlled by `POSTCN_LOG` (e.g. `POSTCN_LOG=info`).
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "postcn",
    version,
    about = "Spatio-temporal 3D human pose estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Overrides the seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic gait corpus as JSONL.
    GenData {
        /// Corpus settings (JSON); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Apply occlusion augmentation to the 2D keypoints of a dataset.
    Augment {
        /// Augmentation settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the per-sequence mask records; defaults to
        /// `<out>.masks.jsonl`.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint.
    Train {
        /// Training settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for the per-sequence passes of a batch.
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Test-time augmentation (JSON), e.g. to measure robustness to
        /// occlusion.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of the embedding, temporal network, full
    /// generator and discriminator built from a training config.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Random points per network.
        #[arg(long, default_value_t = 10)]
        points: usize,
        /// Coordinates sampled per tensor at each point.
        #[arg(long, default_value_t = 4)]
        coords: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Dump per-frame KCS descriptors as JSON lines.
    Describe {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frame gap of the temporal KCS.
        #[arg(long, default_value_t = 1)]
        interval: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("POSTCN_LOG", "warn")).init();
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
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
