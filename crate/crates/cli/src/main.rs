//! `crackmap`: train, predict, evaluate, measure, sweep, gradcheck.
//!
//! Exit codes: 0 success, 2 configuration, 3 I/O or file format, 4 shape,
//! 5 numeric, 6 dataset, 8 gradient check failed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crackmap::{Error, ErrorClass, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "crackmap", version, about = "Pavement crack segmentation and measurement")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    /// cfd, aiglern or custom.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Dataset root holding images/ and masks/.
    #[arg(long, global = true)]
    root: Option<String>,
    /// Split file (JSON) instead of a seeded split.
    #[arg(long, global = true)]
    split: Option<String>,
    /// Ensemble manifest (defaults to <out>/models/ensemble.json).
    #[arg(long, global = true)]
    manifest: Option<String>,
    /// Base seed; member i uses seed + i. For gradcheck, the audit seed.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Ensemble members to train or fuse.
    #[arg(long, short = 'n', global = true)]
    n: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    threshold: Option<String>,
    /// Sliding-window step: 1 (dense) or 5 (tiled).
    #[arg(long, global = true)]
    stride: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble on the training split.
    Train,
    /// Probability maps, masks and overlays for images (default: the test split).
    Predict { inputs: Vec<PathBuf> },
    /// Score predictions on the test split.
    Evaluate {
        /// Directory of `<stem>.png` masks to score instead of predicting.
        #[arg(long)]
        predictions: Option<String>,
    },
    /// Crack length and width per component.
    Measure {
        inputs: Vec<PathBuf>,
        /// Inputs are photographs to segment first, not masks.
        #[arg(long)]
        from_images: bool,
        /// Length units per pixel.
        #[arg(long)]
        calibration: Option<String>,
    },
    /// Score every (members, threshold) pair of the grids.
    Sweep {
        /// Comma-separated member counts.
        #[arg(long)]
        n_grid: Option<String>,
        /// Comma-separated thresholds.
        #[arg(long)]
        t_grid: Option<String>,
    },
    /// Finite-difference check of the backward pass.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

const GRADCHECK_FAILED: u8 = 8;

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Io => 3,
        ErrorClass::Shape => 4,
        ErrorClass::Numeric => 5,
        ErrorClass::Dataset => 6,
    }
}

fn flag_pairs(cli: &Cli) -> Result<Vec<(String, String)>> {
    let c = &cli.common;
    let mut pairs = Vec::new();
    let mut push = |k: &str, v: &Option<String>| {
        if let Some(v) = v {
            pairs.push((k.to_string(), v.clone()));
        }
    };
    push("out", &c.out);
    push("dataset", &c.dataset);
    push("root", &c.root);
    push("split", &c.split);
    push("manifest", &c.manifest);
    // The audit has its own seed so training seeds do not leak into it.
    let seed_key = match cli.command {
        Command::Gradcheck { .. } => "gradcheck_seed",
        _ => "seed",
    };
    push(seed_key, &c.seed);
    push("members", &c.n);
    push("epochs", &c.epochs);
    push("threshold", &c.threshold);
    push("stride", &c.stride);
    match &cli.command {
        Command::Evaluate { predictions } => push("predictions", predictions),
        Command::Measure { calibration, .. } => push("calibration", calibration),
        Command::Sweep { n_grid, t_grid } => {
            push("n_grid", n_grid);
            push("t_grid", t_grid);
        }
        _ => {}
    }
    for s in &c.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn init_workers() -> Result<()> {
    let Ok(v) = std::env::var("CRACK_WORKERS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CRACK_WORKERS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn batch_code(outcome: &commands::BatchOutcome) -> u8 {
    outcome
        .failures
        .first()
        .map(|(_, e)| exit_code(e.class()))
        .unwrap_or(0)
}

fn run(cli: &Cli) -> Result<u8> {
    init_workers()?;
    let cfg = RunConfig::resolve(cli.common.config.as_deref(), &flag_pairs(cli)?)?;
    commands::prepare_out(&cfg)?;
    Ok(match &cli.command {
        Command::Train => {
            commands::train(&cfg)?;
            0
        }
        Command::Predict { inputs } => batch_code(&commands::predict(&cfg, inputs)?),
        Command::Evaluate { .. } => {
            commands::evaluate(&cfg)?;
            0
        }
        Command::Measure {
            inputs, from_images, ..
        } => batch_code(&commands::measure(&cfg, inputs, *from_images)?),
        Command::Sweep { .. } => {
            commands::sweep_cmd(&cfg)?;
            0
        }
        Command::Gradcheck { corrupt_gradient } => {
            if commands::gradcheck(&cfg, *corrupt_gradient)? {
                0
            } else {
                GRADCHECK_FAILED
            }
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(e.class()))
        }
    }
}
