use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qopen::config::ExperimentConfig;

mod output;
mod runner;

use output::{config_hash, Artifacts};
use runner::{RunError, Setup};

#[derive(Parser, Debug)]
#[command(name = "qopen", version, about = "Quenched open random interval maps: experiment runner")]
struct Cli {
    /// JSON experiment configuration (optional for `selftest`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the `output` field of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the master seed (and the driving seed of IID driving).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Closed multipliers and the fiber density at the origin.
    ClosedSpectrum,
    /// Escape rate by survivor decay and by multiplier pressure.
    EscapeRate,
    /// Return ratios and the extremal index down the ε schedule.
    ExtremalIndex,
    /// Threshold schedule and survivor-probability curve against the Gumbel limit.
    Gumbel,
    /// Monte Carlo first hitting times against the exponential law.
    HittingTimes,
    /// Expected pressure curve and the dimension of the survivor set.
    Bowen,
    /// Conditionally invariant densities and their identities.
    Raccim,
    /// Correlation gaps and the fitted decay rate.
    Decay,
    /// Structural hypotheses of the configuration only.
    Validate,
    /// The built-in invariant suite on the shipped presets.
    Selftest,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, RunError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| qopen::Error::InvalidConfig("--config is required for this subcommand".into()))?;
    let text = std::fs::read_to_string(path)?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), RunError> {
    if cli.command == Command::Selftest && cli.config.is_none() {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        let mut art = Artifacts::create(&out, config_hash("selftest"))?;
        return runner::selftest(&mut art);
    }
    let config = load_config(cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .ok_or_else(|| qopen::Error::InvalidConfig("no output directory: pass --out or set `output`".into()))?;
    let mut art = Artifacts::create(&out, config_hash(&config.to_json()))?;
    match cli.command {
        Command::Selftest => return runner::selftest(&mut art),
        Command::Validate => return runner::validate_config(&config, &mut art),
        _ => {}
    }
    let setup = Setup::new(config)?;
    match cli.command {
        Command::ClosedSpectrum => runner::closed_spectrum(&setup, &mut art),
        Command::EscapeRate => runner::escape(&setup, &mut art),
        Command::ExtremalIndex => runner::extremal_index(&setup, &mut art),
        Command::Gumbel => runner::gumbel(&setup, &mut art),
        Command::HittingTimes => runner::hitting_times(&setup, &mut art),
        Command::Bowen => runner::bowen(&setup, &mut art),
        Command::Raccim => runner::raccim(&setup, &mut art),
        Command::Decay => runner::decay(&setup, &mut art),
        Command::Validate | Command::Selftest => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
