use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use memstdp::harness::config::default_provenance;
use memstdp::harness::{run, ExperimentConfig, ExperimentKind};

/// Memristive STDP synapse experiments.
#[derive(Parser)]
#[command(name = "memstdp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Program one device with random spike pairs and log the changes.
    StdpCurve(RunArgs),
    /// Sweep the energy of a spike pair against its timing.
    Energy(RunArgs),
    /// Train an output neuron to fire at given times.
    Supervised(RunArgs),
    /// Learn to predict the next letter of a sequence.
    Sequence(RunArgs),
    /// Unsupervised winner-take-all learning on MNIST.
    Mnist(RunArgs),
    /// Extract model constants from STDP records.
    Fit(RunArgs),
    /// Print the default configuration with the origin of each value.
    Defaults,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: results/<experiment>).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(kind: ExperimentKind, args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from("results").join(kind.name()));
    let summary = run(kind, &cfg, &out, &mut |line| eprintln!("{line}"))
        .with_context(|| format!("{} experiment failed", kind.name()))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("results written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let kind = match cli.command {
        Command::StdpCurve(a) => (ExperimentKind::StdpCurve, a),
        Command::Energy(a) => (ExperimentKind::Energy, a),
        Command::Supervised(a) => (ExperimentKind::Supervised, a),
        Command::Sequence(a) => (ExperimentKind::Sequence, a),
        Command::Mnist(a) => (ExperimentKind::Mnist, a),
        Command::Fit(a) => (ExperimentKind::Fit, a),
        Command::Defaults => {
            for (key, origin) in default_provenance() {
                println!("# {key}: {origin}");
            }
            print!("{}", ExperimentConfig::default().to_toml());
            return ExitCode::SUCCESS;
        }
    };
    match execute(kind.0, kind.1) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
