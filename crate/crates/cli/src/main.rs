mod commands;
mod config;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "morphprobe", version, about = "Probe transformer representations for morphological features")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample probe and agree datasets and list the sentences to embed.
    BuildDatasets,
    /// Ambiguity and feature-length statistics of the built datasets.
    Stats,
    /// Train probes on every (feature, task, layer) cell.
    Probe,
    /// Agree and out scores for every attention head.
    Agree,
    /// Correlations and the random-baseline comparison.
    Analyze,
    /// Tables and layer curves from earlier stages.
    Report,
    /// Write a synthetic bundle with a planted signal.
    SynthBundle(synth::SynthArgs),
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().context("--config is required for this command")?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global()?;
    }
    if let Command::SynthBundle(args) = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
        return synth::synth_bundle(args, cli.seed.unwrap_or(0), &out);
    }
    let config = load_config(&cli)?;
    match cli.command {
        Command::BuildDatasets => commands::build_datasets(&config),
        Command::Stats => commands::stats(&config),
        Command::Probe => commands::probe(&config),
        Command::Agree => commands::agree(&config),
        Command::Analyze => commands::analyze(&config),
        Command::Report => commands::report(&config),
        Command::SynthBundle(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
