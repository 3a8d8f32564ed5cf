//! Command-line front end: runs experiments and validates configurations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wetbeam_core::harness::{
    apply_scale, load_config, preset, resolve, run_experiment, write_results, ExperimentConfig,
    ExperimentError, PRESET_NAMES,
};

#[derive(Parser)]
#[command(name = "wetbeam", version, about = "Power-beacon transmitter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its result files.
    Run(RunArgs),
    /// Check a configuration without running it.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Start from a named preset instead of the built-in defaults.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    preset: Option<String>,
    /// TOML configuration file layered over the preset or defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` overrides applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the result files.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Shrink surface size and realization count by this factor.
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// TOML configuration file to check.
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("WETBEAM_LOG")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate(args) => validate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            match error {
                ExperimentError::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn build_config(
    preset_name: Option<&str>,
    config_path: Option<&PathBuf>,
    overrides: &[String],
) -> Result<ExperimentConfig, ExperimentError> {
    let base = match preset_name {
        Some(name) => preset(name)?,
        None => ExperimentConfig::default(),
    };
    Ok(load_config(&base, config_path.map(PathBuf::as_path), overrides)?)
}

fn run(args: RunArgs) -> Result<(), ExperimentError> {
    let mut config = build_config(args.preset.as_deref(), args.config.as_ref(), &args.set)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(scale) = args.scale {
        apply_scale(&mut config, scale)?;
    }
    let set = run_experiment(&config)?;
    let written = write_results(&set, &args.out)?;
    for path in &written {
        println!("{}", path.display());
    }
    for a in &set.aggregates {
        log::info!(
            "{} @ {}: {:.2} dBW over {} runs",
            a.architecture,
            a.sweep_value,
            a.mean_total_power_dbw,
            a.realizations
        );
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), ExperimentError> {
    let config = load_config(&ExperimentConfig::default(), Some(&args.config), &[])?;
    let resolved = resolve(&config)?;
    println!(
        "ok: {} ({} elements, {} chains, {} devices, {} realizations)",
        config.experiment, config.m, config.n, config.k, config.realizations
    );
    println!(
        "wavelength {:.4} m, element pitch {:.4} m, feeder distance {:.3} m",
        resolved.wavelength, resolved.spacing, resolved.feeder_distance
    );
    Ok(())
}
