//! Pipeline driver: synthetic data generation, gradient preprocessing,
//! CNN training, fingerprint extraction, statistics, and checkpoint
//! comparison.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 data error
//! (missing or malformed files), 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::FingerprintMethod;
use config::RunConfig;
use eigenprint_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(
    name = "eigenprint",
    about = "Texture classification and feature-map fingerprinting of grayscale images",
    version
)]
struct Cli {
    /// JSON run configuration; flags override config fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Force bit-reproducible runs (on by default).
    #[arg(long, global = true)]
    deterministic: bool,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the four-class synthetic dataset and its manifest.
    GenData,
    /// Transform the raw dataset into gradient-magnitude images.
    Preprocess,
    /// Train the network on the preprocessed dataset.
    Train {
        /// Train the reduced-capacity variant (last conv block removed,
        /// first two layers halved, batch size 32).
        #[arg(long)]
        reduced: bool,
    },
    /// Extract a visual fingerprint of one gradient image.
    Fingerprint {
        /// Gradient-magnitude PGM to fingerprint.
        #[arg(long)]
        image: PathBuf,
        /// alpha | eigen | both
        #[arg(long, default_value = "eigen")]
        method: String,
        /// Checkpoint path (default: <out>/checkpoint.mcnn).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-image and per-class statistics of the raw dataset.
    Stats {
        /// Also report per-class mean activations of this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also project the gradient dataset onto its first two modes.
        #[arg(long)]
        modes: bool,
    },
    /// Pearson correlation between the eigen fingerprints of two
    /// checkpoints on one image.
    Compare {
        ckpt_a: PathBuf,
        ckpt_b: PathBuf,
        /// Gradient-magnitude PGM both checkpoints are probed with.
        #[arg(long)]
        image: PathBuf,
    },
}

fn run(cli: Cli) -> eigenprint_core::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.deterministic {
        config.deterministic = true;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }

    match cli.command {
        Command::GenData => commands::cmd_gen_data(&config),
        Command::Preprocess => commands::cmd_preprocess(&config),
        Command::Train { reduced } => commands::cmd_train(&config, reduced),
        Command::Fingerprint { image, method, checkpoint } => {
            let method: FingerprintMethod = method.parse()?;
            commands::cmd_fingerprint(&config, &image, method, checkpoint.as_deref())
        }
        Command::Stats { checkpoint, modes } => {
            commands::cmd_stats(&config, checkpoint.as_deref(), modes)
        }
        Command::Compare { ckpt_a, ckpt_b, image } => {
            commands::cmd_compare(&config, &ckpt_a, &ckpt_b, &image)
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
