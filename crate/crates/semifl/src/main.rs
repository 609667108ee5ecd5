//! Thin command-line front end over the experiment drivers in
//! [`semifl::harness`]. Every command loads one TOML configuration (or the
//! built-in reference deployment), applies the flag overrides, runs the
//! experiment, and prints the artifact paths it wrote. Any solver failure or
//! invalid configuration exits nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semifl::harness::{
    run_bounds, run_cdf_sumrate, run_optimize, run_sweep_antennas, run_train, ExperimentConfig,
    HarnessError,
};

#[derive(Debug, Parser)]
#[command(
    name = "semifl",
    about = "Hybrid over-the-air/uplink learning experiments: transceiver design, \
             rate statistics, training runs, and closed-form gap bounds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// TOML experiment configuration; defaults to the built-in reference
    /// deployment when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of independent channel draws.
    #[arg(long)]
    trials: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print the resolved configuration before running.
    #[arg(long)]
    show_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the two-stage transceiver design over independent channel draws
    /// and record iteration traces plus a summary against reference
    /// allocations.
    Optimize(Common),
    /// Empirical CDF of the uplink sum rate: joint design vs maximum-ratio
    /// and equal-gain receivers.
    CdfSumrate(Common),
    /// Mean aggregation error and sum rate as the antenna count grows.
    SweepAntennas {
        #[command(flatten)]
        common: Common,
        /// Comma-separated antenna counts to sweep.
        #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
        antennas: Vec<usize>,
    },
    /// Train through the simulated uplink (synthetic quadratic task or image
    /// classification) for every configured mode and seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override the number of training rounds.
        #[arg(long)]
        rounds: Option<u64>,
        /// Override the training modes (comma separated:
        /// semifl,semifl-error-free,fl,cl).
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
    },
    /// Evaluate the closed-form optimality-gap recursions for one concrete
    /// design and write the bound table plus calibrated constants.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Override the bound horizon (rounds).
        #[arg(long)]
        rounds: Option<u64>,
    },
}

fn resolve_config(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(trials) = common.trials {
        config.trials = trials;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (common, artifacts) = match &cli.command {
        Command::Optimize(common) => {
            let config = resolve_config(common)?;
            maybe_show(common, &config);
            (common, run_optimize(&config, &common.out)?)
        }
        Command::CdfSumrate(common) => {
            let config = resolve_config(common)?;
            maybe_show(common, &config);
            (common, run_cdf_sumrate(&config, &common.out)?)
        }
        Command::SweepAntennas { common, antennas } => {
            let config = resolve_config(common)?;
            maybe_show(common, &config);
            (common, run_sweep_antennas(&config, antennas, &common.out)?)
        }
        Command::Train { common, rounds, modes } => {
            let mut config = resolve_config(common)?;
            if let Some(rounds) = rounds {
                config.learning.rounds = *rounds;
            }
            if let Some(modes) = modes {
                config.learning.modes = modes.clone();
            }
            maybe_show(common, &config);
            (common, run_train(&config, &common.out)?)
        }
        Command::Bounds { common, rounds } => {
            let mut config = resolve_config(common)?;
            if let Some(rounds) = rounds {
                config.learning.rounds = *rounds;
            }
            maybe_show(common, &config);
            (common, run_bounds(&config, &common.out)?)
        }
    };
    let _ = common;
    for path in artifacts {
        println!("{}", path.display());
    }
    Ok(())
}

fn maybe_show(common: &Common, config: &ExperimentConfig) {
    if common.show_config {
        eprintln!("# resolved configuration (fnv1a 0x{:016x})", config.config_hash());
        eprint!("{}", config.to_toml_string());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
