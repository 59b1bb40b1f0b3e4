//! `terravec`: synthetic data, training, inference and vectorization.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
//! numeric failure.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use terravec_core::dataforge::Grouping;
use terravec_core::gradcheck::DEFAULT_CASES;
use terravec_core::omega::InputMode;
use terravec_core::trainer::ExperimentConfig;
use terravec_core::vem::STEPS;
use terravec_core::Error;

mod commands;
mod config;

/// Failure classes behind the exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parameter(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "terravec",
    version,
    about = "Dual-modal terrace segmentation and vectorization on synthetic tiles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration with [data], [data.synth], [network], [train] and [loss] sections.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    /// Seed for data generation and training (overrides data.seed and train.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration override, e.g. `--set train.steps=200`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Resolution pairing: a (coarse DEM), b (both fine) or c (both coarse).
    #[arg(long, global = true)]
    grouping: Option<Grouping>,
    /// Encoder input: rgb, dem, single4 or dual.
    #[arg(long = "input-mode", global = true)]
    input_mode: Option<InputMode>,
    /// Replace soft-region refinement by a plain pixel classifier.
    #[arg(long = "no-stsro", global = true)]
    no_stsro: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (tiles, truth polygons, manifest) in --out.
    Synth,
    /// Train on a dataset; writes model.ckpt, train_log.csv and val_log.csv.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Score a checkpoint on a dataset split; writes report.csv.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        /// Also evolve contours and report the mean chamfer distance.
        #[arg(long)]
        polygons: bool,
    },
    /// Predict masks (8-bit PGM, 0/255) and probability maps (16-bit PGM).
    Infer {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Tile id; repeatable. Without it every tile of --split is used.
        #[arg(long = "tile", value_name = "ID")]
        tiles: Vec<String>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Polygons from a mask, or from a checkpoint applied to one tile.
    Vectorize {
        /// Binary PGM mask; contours follow a field built from the mask itself.
        #[arg(long, value_name = "FILE", conflicts_with_all = ["checkpoint", "data", "tile"])]
        mask: Option<PathBuf>,
        #[arg(long, value_name = "FILE", requires_all = ["data", "tile"])]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "ID")]
        tile: Option<String>,
        /// Douglas–Peucker tolerance in pixels; 0 keeps every vertex.
        #[arg(long, default_value_t = 0.0)]
        simplify: f64,
        /// Contour field updates.
        #[arg(long, default_value_t = STEPS)]
        steps: usize,
        /// Overlay upscaling factor.
        #[arg(long, default_value_t = 4)]
        scale: u32,
        /// Emit map coordinates (metres, north up) instead of pixel coordinates.
        #[arg(long, requires = "checkpoint")]
        georef: bool,
    },
    /// Train and test cells of the input-mode × refinement × grouping matrix.
    Ablate {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Cell as mode/stsro/grouping, e.g. dual/on/b; repeatable. Default: all 24.
        #[arg(long = "cell", value_name = "CELL")]
        cells: Vec<String>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        /// Random cases per operation.
        #[arg(long, default_value_t = DEFAULT_CASES)]
        cases: usize,
        /// Only operations whose group/op name contains this text.
        #[arg(long)]
        filter: Option<String>,
        /// Add a case with a deliberately wrong gradient.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn parse() -> Result<Cli, clap::Error> {
    let defaults = toml::to_string(&ExperimentConfig::default()).unwrap_or_default();
    let cmd =
        Cli::command().after_long_help(format!("Configuration keys and defaults:\n\n{defaults}"));
    Cli::from_arg_matches(&cmd.try_get_matches()?)
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            match f {
                Failure::Usage(_) => ExitCode::from(1),
                Failure::Runtime(_) => ExitCode::from(2),
            }
        }
    }
}
