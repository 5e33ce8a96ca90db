//! Command-line surface for the self-supervised HDR fusion pipeline.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hdrfuse",
    about = "Self-supervised HDR reconstruction from multi-exposure LDR triplets",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene directories with ground truth and motion
    /// sidecars.
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes to generate.
        #[arg(long, default_value_t = 16)]
        scenes: usize,
        /// Square scene size in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Motion model: none | shift | rect | mixed.
        #[arg(long, default_value = "mixed")]
        motion: String,
        /// Master seed; scene i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// LDR quantization depth (8 or 16).
        #[arg(long, default_value_t = 8)]
        bit_depth: u8,
    },
    /// Construct supervision artifacts (color component, masks, aligned
    /// stacks; optionally the structure component from a checkpoint).
    BuildSupervision {
        /// Dataset directory of scene subdirectories.
        #[arg(long)]
        data: PathBuf,
        /// Output supervision directory.
        #[arg(long)]
        out: PathBuf,
        /// Pipeline configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Structure-network checkpoint; adds Y_stru and M_color.
        #[arg(long)]
        with_structure: Option<PathBuf>,
        /// Also export 8-bit grayscale PNG visualizations of the masks.
        #[arg(long)]
        viz: bool,
    },
    /// Train one network phase.
    Train {
        /// Which phase: structure | recon.
        #[arg(long)]
        phase: String,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Supervision directory produced by build-supervision.
        #[arg(long)]
        supervision: PathBuf,
        /// Pipeline configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output checkpoint path; the phase report lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Optional held-out dataset for validation PSNR.
        #[arg(long)]
        val_data: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruct HDR images from scene directories with a trained
    /// checkpoint (no flow at test time).
    Infer {
        /// Reconstruction checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory (all scenes) ...
        #[arg(long)]
        data: Option<PathBuf>,
        /// ... or a single scene directory.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Output directory for .shdr results and tone-mapped previews.
        #[arg(long)]
        out: PathBuf,
        /// Pipeline configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare predictions against ground truth and write a metric report.
    Eval {
        /// Dataset directory holding the ground truths.
        #[arg(long)]
        data: PathBuf,
        /// Directory of <scene_id>.shdr predictions.
        #[arg(long)]
        pred: PathBuf,
        /// Where to write the JSON report.
        #[arg(long)]
        out: PathBuf,
        /// Pipeline configuration file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Label for the printed table row.
        #[arg(long, default_value = "hdrfuse")]
        label: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Synth { out, scenes, size, motion, seed, bit_depth } => {
            commands::synth::run(&out, scenes, size, &motion, seed, bit_depth)
        }
        Command::BuildSupervision { data, out, config, with_structure, viz } => {
            commands::supervision::run(&data, &out, &config, with_structure.as_deref(), viz)
        }
        Command::Train { phase, data, supervision, config, out, val_data, seed } => {
            commands::train::run(&phase, &data, &supervision, &config, &out, val_data.as_deref(), seed)
        }
        Command::Infer { ckpt, data, scene, out, config } => {
            commands::infer::run(&ckpt, data.as_deref(), scene.as_deref(), &out, &config)
        }
        Command::Eval { data, pred, out, config, label } => {
            commands::eval::run(&data, &pred, &out, &config, &label)
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
