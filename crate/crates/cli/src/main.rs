use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use solwave_cli::config::RunConfig;
use solwave_cli::orchestrate;

#[derive(Parser)]
#[command(name = "solwave", about = "Scalar-field charge dynamics driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated eps override, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Seed override for any randomized selection.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the zeroth-order comparison dynamics.
    SimulateEffective(RunArgs),
    /// Integrate the first-order comparison dynamics with energy decay.
    SimulateManifold(RunArgs),
    /// Integrate the extended second-order system off the chart.
    SimulateThirdOrder(RunArgs),
    /// Integrate the coupled field-particle dynamics at each eps.
    SimulateFull(RunArgs),
    /// Full sweep: match, compare, fit orders, emit the report files.
    Converge(RunArgs),
    /// Evaluate limit and finite-eps fields at the configured points.
    Fields(RunArgs),
    /// Tabulate radiated power against the sphere-flux quadrature.
    Radiation(RunArgs),
    /// Fast internal consistency checks.
    Selftest,
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(eps) = &args.eps {
        config.eps_list = eps.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config
        .validate()
        .context("validating the configuration after command-line overrides")?;
    Ok(config)
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::SimulateEffective(args) => {
            let config = load(args)?;
            let out = orchestrate::resolve_out_dir(&config, args.out.as_deref());
            orchestrate::simulate_effective(&config, &out)
        }
        Command::SimulateManifold(args) => {
            let config = load(args)?;
            let out = orchestrate::resolve_out_dir(&config, args.out.as_deref());
            orchestrate::simulate_manifold(&config, &out)
        }
        Command::SimulateThirdOrder(args) => {
            let config = load(args)?;
            let out = orchestrate::resolve_out_dir(&config, args.out.as_deref());
            orchestrate::simulate_third_order(&config, &out)
        }
        Command::SimulateFull(args) => {
            let config = load(args)?;
            let out = orchestrate::resolve_out_dir(&config, args.out.as_deref());
            orchestrate::simulate_full(&config, &out)
        }
        Command::Converge(args) => {
            let config = load(args)?;
            let out = orchestrate::resolve_out_dir(&config, args.out.as_deref());
            orchestrate::converge(&config, &out)
        }
        Command::Fields(args) => {
            let config = load(args)?;
            let out = orchestrate::resolve_out_dir(&config, args.out.as_deref());
            orchestrate::fields_grids(&config, &out)
        }
        Command::Radiation(args) => {
            let config = load(args)?;
            let out = orchestrate::resolve_out_dir(&config, args.out.as_deref());
            orchestrate::radiation_table(&config, &out)
        }
        Command::Selftest => orchestrate::selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
