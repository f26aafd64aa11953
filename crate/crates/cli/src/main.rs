//! `uniedit`: one binary exposing the whole workflow.
//!
//! Subcommands: `gen-data`, `pretrain`, `train`, `sample`, `eval`,
//! `experiment`, `inspect-ckpt`. Exit codes: 0 success, 1 contract/config
//! error, 2 I/O error. Every run writes its fully resolved `config.snapshot`
//! into the run directory, and `--seed` is the single source of randomness.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "uniedit",
    version,
    about = "Unified instruction-driven image/video editing at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired-editing dataset or benchmark manifest.
    GenData {
        /// Number of samples (fixed at 140 with --vie-proportions).
        #[arg(long, default_value_t = 140)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Emit the benchmark category mix (30/30/25/10/10/5/10/10/10).
        #[arg(long)]
        vie_proportions: bool,
        /// Media kind: image or video.
        #[arg(long, default_value = "video")]
        kind: String,
        /// Allow writing into an existing run directory.
        #[arg(long)]
        force: bool,
    },
    /// Pretrain the generator (text encoder + DiT, caption-to-media).
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run one training stage (1, 2 or 3).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        stage: u8,
        /// Checkpoint to start from (required for stages 2 and 3).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Sample an edited image/video from a trained checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Source media: .tns, .ppm, or a video directory.
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        instruction: String,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Classifier-free guidance scale (1 = off).
        #[arg(long, default_value_t = 1.0)]
        guidance: f32,
        /// Output path stem (media written as <out>.tns plus ppm frames).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a benchmark manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Run a named comparative experiment.
    Experiment {
        /// alignment-race | transfer | query-ablation | frame-ablation | mllm-gap
        kind: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds (default: seed, seed+1, seed+2).
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Pretrained generator checkpoint; pretrains in place when absent.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        stage1_steps: Option<u64>,
        #[arg(long)]
        stage2_steps: Option<u64>,
        #[arg(long)]
        pretrain_steps: Option<u64>,
        #[arg(long)]
        eval_n: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Print checkpoint metadata and tensor shapes.
    InspectCkpt { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            n,
            seed,
            out,
            vie_proportions,
            kind,
            force,
        } => commands::gen_data(n, seed, &out, vie_proportions, &kind, force),
        Command::Pretrain {
            config,
            seed,
            out,
            force,
        } => commands::pretrain(config.as_deref(), seed, &out, force),
        Command::Train {
            config,
            stage,
            init,
            seed,
            out,
            force,
        } => commands::train(config.as_deref(), stage, init.as_deref(), seed, &out, force),
        Command::Sample {
            ckpt,
            source,
            instruction,
            reference,
            steps,
            seed,
            guidance,
            out,
        } => commands::sample(
            &ckpt,
            &source,
            &instruction,
            reference.as_deref(),
            steps,
            seed,
            guidance,
            &out,
        ),
        Command::Eval {
            ckpt,
            manifest,
            out,
            seed,
            force,
        } => commands::eval(&ckpt, &manifest, &out, seed, force),
        Command::Experiment {
            kind,
            config,
            out,
            seeds,
            seed,
            init,
            stage1_steps,
            stage2_steps,
            pretrain_steps,
            eval_n,
            force,
        } => commands::experiment(
            &kind,
            config.as_deref(),
            &out,
            seeds.as_deref(),
            seed,
            init.as_deref(),
            commands::BudgetOverrides {
                stage1_steps,
                stage2_steps,
                pretrain_steps,
                eval_n,
            },
            force,
        ),
        Command::InspectCkpt { path } => commands::inspect_ckpt(&path),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
