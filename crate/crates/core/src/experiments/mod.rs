//! Seeded experiment runners and their file outputs.
//!
//! Each runner computes a result value that can be inspected directly and
//! written as headered CSV files plus a `run.json` sidecar. Trials are
//! independent tasks on a worker pool, each with its own random substream
//! keyed by `(seed, trial)`, so results do not depend on the worker count.

pub mod config;
mod curves;
mod density;
pub mod io;
mod orbit;
mod stability;
pub mod trajectory;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pgradient::PSpec;
use crate::quadratic::QuadraticProblem;

pub use config::{ExperimentConfig, ExperimentKind};
pub use curves::{
    run_rate_curves, run_rate_range, CurvePeak, RateCurvesRun, RateCurvesSummary, RateRangeRun, RateRangeSummary,
};
pub use density::{density_trial, run_density, DensityRun, DensitySummary, Histogram, TrialOutcome, TrialStatus};
pub use orbit::{run_hilbert, run_measure_orbit, HilbertRow, HilbertRun, HilbertSummary, OrbitRun};
pub use stability::{run_stability_probe, ProbeRow, StabilityRun, StabilitySummary};
pub use trajectory::{
    check_trajectory, run_trajectory, trajectory_attractor, AttractorEstimateBrief, TrajectoryChecks, TrajectoryRun,
    TrajectorySummary,
};

/// Random stream for one trial.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// A point drawn uniformly from the unit sphere in `R^d`.
pub fn sample_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::quadratic::norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A starting point whose renormalized gradient is `z`:
/// `g_i = z_i / √(P(λ_i) λ_i)` and `x_0 = x* + A^{-1} g`.
pub fn x0_from_z(problem: &QuadraticProblem, pspec: &PSpec, z: &[f64]) -> Result<Vec<f64>> {
    problem.spectrum().check_dim(z.len())?;
    Ok(problem
        .eigenvalues()
        .iter()
        .zip(z)
        .zip(problem.x_star())
        .map(|((&l, &zi), &s)| s + zi / (pspec.eval(l) * l).sqrt() / l)
        .collect())
}

/// Runs `f(trial)` for every trial on `workers` threads, keeping trial order.
pub fn map_trials<T, F>(trials: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    pool.install(|| (0..trials).into_par_iter().map(&f).collect())
}

/// Resolves `config`, runs the named experiment and, when `out` is given,
/// writes its files and `run.json` there. Returns the summary as JSON.
pub fn run_experiment(config: &ExperimentConfig, workers: usize, out: Option<&Path>) -> Result<serde_json::Value> {
    let config = config.resolve()?;
    fn finish<S: Serialize>(
        config: &ExperimentConfig,
        out: Option<&Path>,
        summary: &S,
        write: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<serde_json::Value> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
            write(dir)?;
            io::write_sidecar(dir, config, summary)?;
        }
        Ok(serde_json::to_value(summary)?)
    }
    match config.kind()? {
        ExperimentKind::Density => {
            let run = run_density(&config, workers)?;
            finish(&config, out, &run.summary, |d| run.write(d))
        }
        ExperimentKind::RateCurves => {
            let run = run_rate_curves(&config)?;
            finish(&config, out, &run.summary(), |d| run.write(d))
        }
        ExperimentKind::RateRange => {
            let run = run_rate_range(&config)?;
            finish(&config, out, &run.summary, |d| run.write(d))
        }
        ExperimentKind::Trajectory => {
            let run = run_trajectory(&config, workers)?;
            finish(&config, out, &run.summaries, |d| run.write(d))
        }
        ExperimentKind::MeasureOrbit => {
            let run = run_measure_orbit(&config)?;
            finish(&config, out, &run.attractor, |d| run.write(d))
        }
        ExperimentKind::StabilityProbe => {
            let run = run_stability_probe(&config, workers)?;
            finish(&config, out, &run.summary, |d| run.write(d))
        }
        ExperimentKind::Hilbert => {
            let run = run_hilbert(&config)?;
            finish(&config, out, &run.summary, |d| run.write(d))
        }
    }
}
