use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pgrad_core::experiments::{run_experiment, ExperimentConfig, ExperimentKind};

/// Seeded experiments for P-gradient methods on quadratics.
#[derive(Debug, Parser)]
#[command(name = "pgrad", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the method from random or given starts and check invariants.
    Trajectory(Common),
    /// Iterate the measure transformation on a discrete or discretized measure.
    Orbit(Common),
    /// Empirical density of attractor parameters.
    Density(Common),
    /// Asymptotic rate r(p) for several condition numbers.
    RateCurves(Common),
    /// Range of attainable asymptotic rates against 1/rho.
    RateRange(Common),
    /// Perturbation probe of two-point fixed points.
    Stability(Common),
    /// Orbit of a discretized uniform density.
    Hilbert(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory [default: pgrad-out/<experiment>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; does not affect results.
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Step-length rule: steepest_descent, minimal_residues or power:q.
    #[arg(long)]
    pspec: Option<String>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    gradient_stop: Option<f64>,
    #[arg(long)]
    relaxation: Option<f64>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Trajectory(c) => (ExperimentKind::Trajectory, c),
            Command::Orbit(c) => (ExperimentKind::MeasureOrbit, c),
            Command::Density(c) => (ExperimentKind::Density, c),
            Command::RateCurves(c) => (ExperimentKind::RateCurves, c),
            Command::RateRange(c) => (ExperimentKind::RateRange, c),
            Command::Stability(c) => (ExperimentKind::StabilityProbe, c),
            Command::Hilbert(c) => (ExperimentKind::Hilbert, c),
        }
    }
}

fn build_config(kind: ExperimentKind, args: &Common) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    match config.experiment {
        Some(k) if k != kind => bail!("config is for experiment '{k}', not '{kind}'"),
        _ => config.experiment = Some(kind),
    }
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    if args.trials.is_some() {
        config.trials = args.trials;
    }
    if args.pspec.is_some() {
        config.pspec = args.pspec.clone();
    }
    if args.max_iters.is_some() {
        config.max_iters = args.max_iters;
    }
    if args.gradient_stop.is_some() {
        config.gradient_stop = args.gradient_stop;
    }
    if args.relaxation.is_some() {
        config.relaxation = args.relaxation;
    }
    Ok(config.resolve()?)
}

fn run(cli: Cli) -> Result<()> {
    let (kind, args) = cli.command.split();
    let config = build_config(kind, &args).context("invalid configuration")?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("pgrad-out").join(kind.name()));
    let summary = run_experiment(&config, args.workers, Some(&out))
        .with_context(|| format!("{kind} experiment failed"))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
