//! Command-line driver for the reconstruction pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hoirecon::cli::{
    cmd_align, cmd_eval, cmd_gen_data, cmd_pose, cmd_report, cmd_sample, cmd_train, CliResult,
};
use hoirecon::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "hoirecon",
    about = "Hand-object scene generation, joint 2D/3D completion, pose estimation, and evaluation",
    version
)]
struct Args {
    /// key=value configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the `seed` config key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `run`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = auto); overrides the `threads` config key.
    /// Execution is deterministic regardless.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hand-object dataset.
    GenData,
    /// Train the dual-branch completion model on a dataset's train split.
    Train {
        /// Dataset directory; overrides `paths.data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sample completed masks and voxels from a trained checkpoint.
    Sample {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint file; overrides `paths.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sequence id; overrides `paths.sequence` (default: all sequences).
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Estimate the object trajectory of a sequence against a mesh.
    Pose {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Object mesh PLY (e.g. a sampled reconstruction); overrides `paths.mesh`.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Align the dataset hand to a mesh along a trajectory.
    Align {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Trajectory (TUM format); overrides `paths.trajectory`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Compare a predicted mesh and trajectory against ground truth.
    Eval {
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        gt_mesh: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        gt_trajectory: Option<PathBuf>,
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Merge per-sequence report CSVs and recompute the mean row.
    Report {
        /// Input report CSVs.
        inputs: Vec<PathBuf>,
    },
}

fn run(args: Args) -> CliResult {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.set("seed", &seed.to_string())?;
    }
    if let Some(threads) = args.threads {
        config.set("threads", &threads.to_string())?;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("run"));

    let set_path = |config: &mut RunConfig, key: &str, value: &Option<PathBuf>| -> CliResult {
        if let Some(v) = value {
            config.set(key, &v.display().to_string())?;
        }
        Ok(())
    };

    match &args.command {
        Command::GenData => cmd_gen_data(&config, &out),
        Command::Train { data } => {
            set_path(&mut config, "paths.data", data)?;
            cmd_train(&config, &out)
        }
        Command::Sample {
            data,
            checkpoint,
            sequence,
        } => {
            set_path(&mut config, "paths.data", data)?;
            set_path(&mut config, "paths.checkpoint", checkpoint)?;
            if let Some(s) = sequence {
                config.set("paths.sequence", s)?;
            }
            cmd_sample(&config, &out)
        }
        Command::Pose {
            data,
            mesh,
            sequence,
        } => {
            set_path(&mut config, "paths.data", data)?;
            set_path(&mut config, "paths.mesh", mesh)?;
            if let Some(s) = sequence {
                config.set("paths.sequence", s)?;
            }
            cmd_pose(&config, &out)
        }
        Command::Align {
            data,
            mesh,
            trajectory,
            sequence,
        } => {
            set_path(&mut config, "paths.data", data)?;
            set_path(&mut config, "paths.mesh", mesh)?;
            set_path(&mut config, "paths.trajectory", trajectory)?;
            if let Some(s) = sequence {
                config.set("paths.sequence", s)?;
            }
            cmd_align(&config, &out)
        }
        Command::Eval {
            mesh,
            gt_mesh,
            trajectory,
            gt_trajectory,
            sequence,
        } => {
            set_path(&mut config, "paths.mesh", mesh)?;
            set_path(&mut config, "paths.gt_mesh", gt_mesh)?;
            set_path(&mut config, "paths.trajectory", trajectory)?;
            set_path(&mut config, "paths.gt_trajectory", gt_trajectory)?;
            if let Some(s) = sequence {
                config.set("paths.sequence", s)?;
            }
            cmd_eval(&config, &out)
        }
        Command::Report { inputs } => cmd_report(inputs, &out),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code.clamp(0, 255) as u8)
        }
    }
}
