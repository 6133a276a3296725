use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iterfilt_cli::{configure_threads, run, CliError, Command, Overrides, Registry, RunConfig};
use iterfilt_core::Resampler;

/// Likelihood-based inference for partially observed Markov models by
/// particle filtering and iterated filtering.
#[derive(Parser)]
#[command(name = "iterfilt", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate states and observations at the configured parameters.
    Simulate(Flags),
    /// Particle-filter log-likelihood estimate.
    Pfilter(Flags),
    /// Iterated filtering towards the maximum likelihood estimate.
    Mif(Flags),
    /// One score (log-likelihood gradient) estimate.
    Score(Flags),
    /// Log-likelihood slice along one parameter.
    Profile(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Observation CSV (`time,y1,...`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also report exact linear-Gaussian results where the model allows.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    resampler: Option<Resampler>,
}

fn execute(command: Command, flags: Flags) -> Result<(), CliError> {
    configure_threads()?;
    let mut config = RunConfig::load(&flags.config)?;
    config.apply(&Overrides {
        data: flags.data,
        seed: flags.seed,
        particles: flags.particles,
        replicates: flags.replicates,
        output: flags.output,
        resampler: flags.resampler,
    });
    let outcome = run(&Registry::builtin(), command, &config, flags.exact)?;
    for f in outcome.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Pfilter(f) => (Command::Pfilter, f),
        Sub::Mif(f) => (Command::Mif, f),
        Sub::Score(f) => (Command::Score, f),
        Sub::Profile(f) => (Command::Profile, f),
    };
    match execute(command, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("iterfilt {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
