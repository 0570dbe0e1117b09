//! `lgrnet`: synthetic-scene object detection on point clouds via local
//! grid rendering. Subcommands: gen, train, eval, inspect, bench.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lgr_cli::commands::{bench, eval, gen, inspect, train};
use lgr_cli::fail::Failure;

#[derive(Parser)]
#[command(
    name = "lgrnet",
    version,
    about = "Point-cloud object detection built on local grid rendering",
    long_about = None
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset.
    Gen {
        /// Run configuration file; scene.* keys drive generation.
        #[arg(long)]
        spec: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes to generate.
        #[arg(long)]
        count: usize,
        /// Base seed (overrides the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Override a config key, e.g. --set scene.points=2048 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train a detector and write a checkpoint plus a JSONL loss log.
    Train {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (from `gen`).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training log path (default: checkpoint path with .log.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Base seed (overrides the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Override a config key, e.g. --set train.epochs=20 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint and print metrics JSON.
    Eval {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to evaluate.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory (from `gen`).
        #[arg(long)]
        data: PathBuf,
        /// Also write the metrics JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include mean per-scan wall time in the metrics (off by
        /// default to keep metrics byte-identical across runs).
        #[arg(long)]
        timing: bool,
        /// Base seed (overrides the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Override a config key (KEY=VALUE, repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Dump one first-stage rendered grid; optionally export a seed trace.
    Inspect {
        /// Point-cloud file (.lgrpc).
        #[arg(long)]
        points: PathBuf,
        /// Which sampled centroid to render.
        #[arg(long, default_value_t = 0)]
        centroid_index: usize,
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint for the seed trace (fresh weights when omitted).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Write the grid dump to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a JSON seed trace (per-seed vote and proposal
        /// membership) to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Base seed (overrides the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Override a config key (KEY=VALUE, repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Time the pipeline stages on one point cloud.
    Bench {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Point-cloud file (.lgrpc).
        #[arg(long)]
        points: PathBuf,
        /// Number of repetitions to average over.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        /// Base seed (overrides the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Override a config key (KEY=VALUE, repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// Folds an explicit `--seed` into the override list; pushed last so it
/// beats both the config file and any `--set seed=`.
fn with_seed(mut set: Vec<String>, seed: Option<u64>) -> Vec<String> {
    if let Some(s) = seed {
        set.push(format!("seed={s}"));
    }
    set
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen { spec, out, count, seed, set } => {
            gen::run(&spec, &out, count, &with_seed(set, seed))
        }
        Command::Train { config, data, out, log, seed, set } => train::run(&train::TrainArgs {
            config: &config,
            data: &data,
            out: &out,
            log: log.as_deref(),
            overrides: &with_seed(set, seed),
        }),
        Command::Eval { config, ckpt, data, out, timing, seed, set } => {
            eval::run(&eval::EvalArgs {
                config: &config,
                ckpt: &ckpt,
                data: &data,
                out: out.as_deref(),
                timing,
                overrides: &with_seed(set, seed),
            })
        }
        Command::Inspect { points, centroid_index, config, ckpt, out, trace, seed, set } => {
            inspect::run(&inspect::InspectArgs {
                points: &points,
                centroid_index,
                config: &config,
                ckpt: ckpt.as_deref(),
                out: out.as_deref(),
                trace: trace.as_deref(),
                overrides: &with_seed(set, seed),
            })
        }
        Command::Bench { config, points, repeat, seed, set } => bench::run(&bench::BenchArgs {
            config: &config,
            points: &points,
            repeat,
            overrides: &with_seed(set, seed),
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
