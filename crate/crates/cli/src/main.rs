//! Command-line entry point: mask generation, synthetic-corpus creation,
//! training, evaluation and visualization as one binary.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "addnet",
    about = "Attention-based deepfake detection toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate attention masks for a directory of face images.
    Maskgen {
        /// Directory of input .png face images.
        #[arg(long)]
        images: PathBuf,
        /// Directory of landmark sidecars; defaults to the images directory.
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// Output directory for <stem>.mask.png files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Gaussian sigma; defaults to 2% of the short image side.
        #[arg(long)]
        sigma: Option<f64>,
        /// Also write overlay visualizations.
        #[arg(long)]
        overlay: bool,
        /// Overwrite an existing non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Build a labeled synthetic corpus by attention-based face fusion.
    Synth {
        /// Pool directory of <id>.png plus <id>.landmarks.txt files.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_real: usize,
        #[arg(long, default_value_t = 100)]
        n_fake: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest path to write; sample files go beside it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output face size in pixels (square).
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        force: bool,
    },
    /// Train a detector from a config file (flags override file values).
    Train {
        /// JSON run config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mask_cache: Option<PathBuf>,
        #[arg(long)]
        balanced: Option<bool>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint and print a per-dataset accuracy table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Single dataset manifest (named after its directory).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Additional datasets as name=manifest-path (repeatable).
        #[arg(long = "dataset")]
        datasets: Vec<String>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Expected detection level; must match the checkpoint mode.
        #[arg(long)]
        level: Option<String>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Where to write the EvalReport JSON files.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Emit mask and overlay images for inspection.
    Visualize {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Maskgen {
            images,
            landmarks,
            out,
            sigma,
            overlay,
            force,
        } => commands::maskgen::run(&images, landmarks.as_deref(), out, sigma, overlay, force),
        Command::Synth {
            pool,
            n_real,
            n_fake,
            seed,
            out,
            size,
            test_fraction,
            force,
        } => commands::synth::run(&pool, n_real, n_fake, seed, out, size, test_fraction, force),
        Command::Train {
            config,
            manifest,
            out,
            steps,
            lr,
            batch_size,
            seed,
            mask_cache,
            balanced,
            force,
        } => commands::train::run(
            &config,
            config::Overrides {
                manifest,
                out,
                steps,
                lr,
                batch_size,
                seed,
                mask_cache,
                balanced,
            },
            force,
        ),
        Command::Eval {
            checkpoint,
            manifest,
            datasets,
            split,
            level,
            batch_size,
            out,
            force,
        } => commands::eval::run(
            &checkpoint,
            manifest,
            &datasets,
            &split,
            level.as_deref(),
            batch_size,
            out,
            force,
        ),
        Command::Visualize {
            images,
            landmarks,
            out,
            sigma,
            force,
        } => commands::visualize::run(&images, landmarks.as_deref(), out, sigma, force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
