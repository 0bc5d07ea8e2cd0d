//! `mdgan`: ingest frames, train both stages, generate and evaluate.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "mdgan", version, about = "Two-stage video generation from a single frame")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by the training commands. Precedence: built-in defaults,
/// then `--config`, then `--set`, then the dedicated flags.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resolution: Option<usize>,
    /// Channel width multiplier, e.g. `1/8` or `0.25`.
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from a checkpoint of the same stage; its stored config wins
    /// except for the iteration target.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut per-source frame directories into a split clip store.
    Ingest {
        #[arg(long)]
        frames_root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render synthetic moving-pattern sources and ingest them.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// Where the rendered PPM frames go; defaults to `<out>/frames`.
        #[arg(long)]
        frames_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        sources: usize,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        frame_width: usize,
        #[arg(long, default_value_t = 64)]
        frame_height: usize,
        #[arg(long, default_value_t = 1.0)]
        velocity: f64,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train G1 and D1.
    TrainStage1(RunArgs),
    /// Train G2 and D2 on top of a frozen G1.
    TrainStage2 {
        #[command(flatten)]
        run: RunArgs,
        /// Stage-1 checkpoint providing G1.
        #[arg(long)]
        g1_checkpoint: Option<PathBuf>,
    },
    /// Predict 32 frames from one input frame.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// PPM frame at the checkpoint's resolution.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on test clips and write a CSV report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Number of test clips; 0 means all.
        #[arg(long, default_value_t = 0)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe a network layout, a clip store or a checkpoint.
    Inspect {
        #[command(subcommand)]
        target: InspectTarget,
    },
}

#[derive(Subcommand, Debug)]
enum InspectTarget {
    Spec {
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 1)]
        stage: u32,
        #[arg(long, default_value = "1")]
        width: String,
        /// Show the discriminator instead of the generator.
        #[arg(long)]
        discriminator: bool,
    },
    Store { dir: PathBuf },
    Checkpoint { file: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
