use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use drsn::cli;

#[derive(Parser)]
#[command(
    name = "drsn",
    about = "Deformable residual segmentation network: synthesize data, train, evaluate, infer, and verify gradients"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic speckled-target dataset of PGM pairs
    Synth {
        /// Output directory for NNNN_img.pgm / NNNN_mask.pgm pairs
        #[arg(long)]
        out: PathBuf,
        /// Number of image/mask pairs
        #[arg(long)]
        count: usize,
        /// Generation seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Square image side length
        #[arg(long, default_value_t = 80)]
        size: usize,
    },
    /// Train on a dataset directory and write a checkpoint plus a CSV loss log
    Train {
        /// Dataset directory of NNNN_img.pgm / NNNN_mask.pgm pairs
        #[arg(long)]
        data: PathBuf,
        /// Optional `key = value` config file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
        /// CSV loss log output path
        #[arg(long)]
        log: PathBuf,
        /// Override the `lr` config key
        #[arg(long)]
        lr: Option<f64>,
        /// Override the `batch` config key
        #[arg(long)]
        batch: Option<usize>,
        /// Override the `epochs` config key
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the `seed` config key
        #[arg(long)]
        seed: Option<u64>,
        /// Override the `augment` config key
        #[arg(long)]
        augment: Option<bool>,
        /// Override the `channels` config key
        #[arg(long)]
        channels: Option<usize>,
        /// Override the `blocks` config key
        #[arg(long)]
        blocks: Option<usize>,
        /// Override the `kernel` config key
        #[arg(long)]
        kernel: Option<usize>,
        /// Override the `size` config key
        #[arg(long)]
        size: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset and print the confusion report
    Eval {
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path
        #[arg(long)]
        ckpt: PathBuf,
        /// Binarization threshold
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Segment one PGM image and write the binary mask
    Infer {
        /// Input image (PGM, P5)
        #[arg(long)]
        image: PathBuf,
        /// Checkpoint path
        #[arg(long)]
        ckpt: PathBuf,
        /// Output mask path (PGM, values 0/255)
        #[arg(long)]
        out: PathBuf,
        /// Binarization threshold
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Expected square input side length
        #[arg(long, default_value_t = 80)]
        size: usize,
    },
    /// Run the finite-difference gradient verification suite
    Gradcheck {
        /// Fixture seed
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn run(args: Args) -> drsn::Result<()> {
    match args.command {
        Command::Synth {
            out,
            count,
            seed,
            size,
        } => cli::cmd_synth(&out, count, seed, size),
        Command::Train {
            data,
            config,
            out,
            log,
            lr,
            batch,
            epochs,
            seed,
            augment,
            channels,
            blocks,
            kernel,
            size,
        } => {
            let mut overrides: Vec<(&'static str, String)> = Vec::new();
            let mut push = |key: &'static str, v: Option<String>| {
                if let Some(v) = v {
                    overrides.push((key, v));
                }
            };
            push("lr", lr.map(|v| v.to_string()));
            push("batch", batch.map(|v| v.to_string()));
            push("epochs", epochs.map(|v| v.to_string()));
            push("seed", seed.map(|v| v.to_string()));
            push("augment", augment.map(|v| v.to_string()));
            push("channels", channels.map(|v| v.to_string()));
            push("blocks", blocks.map(|v| v.to_string()));
            push("kernel", kernel.map(|v| v.to_string()));
            push("size", size.map(|v| v.to_string()));
            cli::cmd_train(&data, config.as_deref(), &out, &log, &overrides).map(|_| ())
        }
        Command::Eval {
            data,
            ckpt,
            threshold,
        } => cli::cmd_eval(&data, &ckpt, threshold).map(|_| ()),
        Command::Infer {
            image,
            ckpt,
            out,
            threshold,
            size,
        } => cli::cmd_infer(&image, &ckpt, &out, threshold, size),
        Command::Gradcheck { seed } => cli::cmd_gradcheck(seed),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
