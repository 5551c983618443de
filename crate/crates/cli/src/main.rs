//! `predfuse`: runs fusion experiments from a TOML config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use predfuse::experiment::{run, Command, CompareAxis, ExperimentConfig};

const DEFAULT_OUT_DIR: &str = "predfuse-out";

#[derive(Parser, Debug)]
#[command(
    name = "predfuse",
    version,
    about = "Predictive dynamic fusion experiments"
)]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; falls back to the config's `output_dir`, then `predfuse-out`.
    #[arg(long, global = true, env = "PREDFUSE_OUT_DIR")]
    out: Option<PathBuf>,

    /// Worker threads for training runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Comma-separated seeds replacing the config's run and ensemble seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train one model per seed; write checkpoints, the epoch log and the data splits.
    Train,
    /// Accuracy under test-time noise against late fusion and unimodal heads.
    Sweep,
    /// Aggregate covariance and GDP of a model ensemble per strategy.
    Gdp,
    /// Accuracy of every fusion-component subset.
    Ablate,
    /// Vary the confidence-predictor target or the uncertainty measure.
    Compare {
        #[arg(long, value_parser = parse_axis)]
        axis: CompareAxis,
    },
}

fn parse_axis(s: &str) -> Result<CompareAxis, String> {
    s.parse().map_err(|e: predfuse::Error| e.to_string())
}

fn execute(cli: Cli) -> predfuse::Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = &cli.seed_override {
        config.override_seeds(seeds)?;
    }
    let command = match cli.command {
        Cmd::Train => Command::Train,
        Cmd::Sweep => Command::Sweep,
        Cmd::Gdp => Command::Gdp,
        Cmd::Ablate => Command::Ablate,
        Cmd::Compare { axis } => Command::Compare(axis),
    };
    let out = cli
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let manifest = run(command, &config, &out, cli.jobs)?;
    for f in &manifest.files {
        println!("{}  {}", f.sha256, out.join(&f.path).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
