use std::path::PathBuf;

use anyhow::Context;
use attnspk::config::{Config, SoftVadMode};
use attnspk::{Pipeline, Stage};
use clap::{Parser, Subcommand};

/// Attention-weighted speaker embedding experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// TOML configuration; built-in desk defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated subset of the configured systems.
    #[arg(long, global = true, value_delimiter = ',')]
    systems: Option<Vec<String>>,
    #[arg(long = "soft-vad", global = true, value_name = "on|off|both")]
    soft_vad: Option<SoftVadMode>,
    /// Output directory for artifacts and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Suppress per-unit progress lines.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus, or import the WAV list.
    Synth,
    /// Post-process frames and compute voice posteriors.
    Features,
    /// Train the embedding networks.
    TrainEmbed,
    /// Train the universal background model.
    TrainUbm,
    /// Train the total variability matrix.
    TrainTvm,
    /// Export attention weights and extract vectors for every system.
    Extract,
    /// Fit whitening and PLDA per system.
    Backend,
    /// Score the trial list.
    Score,
    /// Compute metrics and write the report.
    Report,
    /// Run every stage, reusing cached artifacts.
    RunAll,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(ids) = &cli.systems {
        cfg.select_systems(ids)?;
    }
    if let Some(mode) = cli.soft_vad {
        cfg.soft_vad = mode;
    }
    let stage = match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        Command::RunAll => None,
        Command::Synth => Some(Stage::Synth),
        Command::Features => Some(Stage::Features),
        Command::TrainEmbed => Some(Stage::TrainEmbed),
        Command::TrainUbm => Some(Stage::TrainUbm),
        Command::TrainTvm => Some(Stage::TrainTvm),
        Command::Extract => Some(Stage::Extract),
        Command::Backend => Some(Stage::Backend),
        Command::Score => Some(Stage::Score),
        Command::Report => Some(Stage::Report),
    };
    let pipeline = Pipeline::new(cfg, &cli.out)?.with_progress(!cli.quiet);
    match stage {
        Some(s) => {
            pipeline.run_stage(s, true).with_context(|| format!("stage {}", s.name()))?;
            if s == Stage::Report {
                print!("{}", pipeline.report()?.to_text());
            }
        }
        None => {
            let report = pipeline.run_all()?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}
