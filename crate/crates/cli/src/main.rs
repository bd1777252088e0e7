//! `groundseg`: encode, label, train, infer, evaluate and serve.
//!
//! Every tunable flag may also come from `--config FILE` (`key = value`
//! lines, keys named like the long flags); flags win. Exit status is 0 on
//! success, 1 for unusable input and 2 for internal failures.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use groundseg::{Layout, Topology};

use crate::config::{Config, RangeLimit};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "groundseg", version, about = "Ground segmentation for rotating LiDAR scans")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// `key = value` file supplying defaults for any long flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-frame work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed for weight init, batch order, splits and synthetic scenes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct EncoderFlags {
    /// Point record layout of `.bin` files: xyzi or xyzir.
    #[arg(long)]
    pub layout: Option<Layout>,
    /// Degrees of azimuth per column.
    #[arg(long)]
    pub bin_width: Option<f64>,
    #[arg(long)]
    pub num_rings: Option<usize>,
    /// Height normalization constant (meters).
    #[arg(long)]
    pub height_norm: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode `.bin` scans into normalized `.gsf` network inputs.
    Encode {
        /// A `.bin` file or a directory of them.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        encoder: EncoderFlags,
    },
    /// Label scans with the height-statistics rule, writing `.gsl` files.
    Autolabel {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        layout: Option<Layout>,
        /// Grid cell side (meters).
        #[arg(long)]
        cell_size: Option<f64>,
        #[arg(long)]
        max_height_mean: Option<f64>,
        #[arg(long)]
        max_height_spread: Option<f64>,
        #[arg(long)]
        max_height_stddev: Option<f64>,
    },
    /// Write a train/eval split manifest for a directory of scans.
    Split {
        /// Directory holding `<id>.bin` scans.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Fraction of frames assigned to training.
        #[arg(long)]
        split_ratio: Option<f64>,
    },
    /// Train a network on the TRAIN frames of a manifest.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        topology: Option<Topology>,
        /// Directory holding `<id>.gsl` labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Start from the weights of this model instead of a fresh init.
        #[arg(long)]
        pretrain: Option<PathBuf>,
        /// Output `.gsm` model path.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr_decay: Option<f64>,
        #[arg(long)]
        decay_step: Option<usize>,
        /// Print the loss every this many iterations.
        #[arg(long)]
        log_every: Option<usize>,
        #[command(flatten)]
        encoder: EncoderFlags,
    },
    /// Label scans with a trained model.
    Infer {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Points scoring at least this are labeled ground.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write `<id>.csv` with one ground probability per line.
        #[arg(long)]
        scores: bool,
        #[command(flatten)]
        encoder: EncoderFlags,
    },
    /// Score predictions against ground-truth labels.
    Eval {
        /// Directory of `<id>.csv` scores or `<id>.gsl` labels.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Directory of ground-truth `<id>.gsl` labels.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Directory of `<id>.bin` scans; required for a range limit.
        #[arg(long)]
        clouds: Option<PathBuf>,
        /// Range limit in meters, or `none` (default 60).
        #[arg(long)]
        max_range: Option<RangeLimit>,
        #[arg(long)]
        layout: Option<Layout>,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write `threshold,precision,recall` rows here.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long)]
        target_recall: Option<f64>,
        #[arg(long)]
        target_precision: Option<f64>,
    },
    /// Serve a data directory to the annotation front end.
    Serve {
        /// Directory of `<id>.bin` scans and `<id>.gsl` labels.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        /// 0 picks a free port.
        #[arg(long)]
        port: Option<u16>,
        #[command(flatten)]
        encoder: EncoderFlags,
    },
    /// Generate ray-cast synthetic scans with exact ground truth.
    Synth {
        #[arg(long)]
        output: Option<PathBuf>,
        /// Where truth `.gsl` files go (default: next to the scans).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        /// Horizontal sensor resolution (degrees).
        #[arg(long)]
        azimuth_step: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = Config::load(cli.common.config.as_deref())?;
    let jobs = cfg.pick(cli.common.jobs, "jobs")?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = jobs {
            if j == 0 {
                return Err(CliError::input("--jobs must be at least 1"));
            }
            b = b.num_threads(j);
        }
        b.build().map_err(|e| CliError::internal(e.to_string()))?
    };
    let seed = cfg.pick_or(cli.common.seed, "seed", 0u64)?;
    let ctx = commands::Context { cfg, pool, seed };
    commands::dispatch(&ctx, cli.command)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors are input errors (1), not clap's default of 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
