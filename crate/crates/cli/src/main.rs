//! `xband`: scene generation, simulation, sampling, training, prediction,
//! evaluation and rendering from one configuration file.

mod config;
mod error;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, PipelineConfig};
use error::CliError;
use pipeline::Ctx;

#[derive(Parser)]
#[command(name = "xband", version, about = "Cross-band radio map pipeline")]
struct Cli {
    /// JSON configuration file; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets every seed (scene, split, model, training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives the reproducible path.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config entry, e.g. `--set train.lr=0.01`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// train:val:test ratios, e.g. 7:2:1.
    #[arg(long, global = true)]
    split: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Subcommand)]
enum Command {
    /// Generate parent scenes and crops.
    Gen,
    /// Masks, coverage and directional maps.
    Simulate,
    /// Sparse maps and validation; writes the dataset.
    Sample,
    /// Parent-grouped train/val/test split.
    Split,
    /// Train the model; keeps the best validation epoch.
    Train,
    /// Predict the test split.
    Predict,
    /// Metrics, category breakdown and the IDW baseline.
    Eval,
    /// PNGs of truth, prediction and error maps.
    Render,
    /// Every stage in order.
    All,
    /// Print the effective configuration.
    Config,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let ov = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        split: cli.split.clone(),
        sets: cli.sets.clone(),
    };
    let cfg = PipelineConfig::load(cli.config.as_deref(), &ov)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config(vec!["--threads must be at least 1".into()]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.into()))?;
    }
    let ctx = Ctx::new(&cfg);
    match cli.command {
        Command::Gen => pipeline::gen(&ctx),
        Command::Simulate => pipeline::simulate(&ctx),
        Command::Sample => pipeline::sample(&ctx),
        Command::Split => pipeline::split_stage(&ctx),
        Command::Train => pipeline::train_stage(&ctx),
        Command::Predict => pipeline::predict_stage(&ctx),
        Command::Eval => pipeline::eval_stage(&ctx),
        Command::Render => pipeline::render_stage(&ctx),
        Command::All => pipeline::all(&ctx),
        Command::Config => {
            let mut v = serde_json::to_value(&cfg)?;
            v["config_hash"] = ctx.hash.clone().into();
            println!("{}", serde_json::to_string_pretty(&v)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
