use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attractor::{self, Interval, PhiDensity};
use crate::error::{Error, Result};
use crate::pgradient::PSpec;
use crate::quadratic::QuadraticProblem;
use crate::renorm;

use super::config::ExperimentConfig;
use super::io::{fmt_f64, CsvOut};
use super::{map_trials, sample_sphere, trial_rng, x0_from_z};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Converged,
    /// The orbit reached a point mass, i.e. the iterate hit `x*` exactly.
    FiniteConvergence,
    NotConverged,
}

impl TrialStatus {
    fn name(self) -> &'static str {
        match self {
            TrialStatus::Converged => "converged",
            TrialStatus::FiniteConvergence => "finite_convergence",
            TrialStatus::NotConverged => "not_converged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub status: TrialStatus,
    /// Best estimate of `p`; absent on finite convergence.
    pub p: Option<f64>,
    pub transforms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
}

impl Histogram {
    /// Equal-width bins over `(0, 1)`.
    pub fn unit(bins: usize, values: impl IntoIterator<Item = f64>) -> Self {
        let edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        let mut total = 0u64;
        for v in values {
            if (0.0..=1.0).contains(&v) {
                let i = ((v * bins as f64) as usize).min(bins - 1);
                counts[i] += 1;
                total += 1;
            }
        }
        let width = 1.0 / bins as f64;
        let density = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / (total as f64 * width) })
            .collect();
        Self { edges, counts, density }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub trials: usize,
    pub converged: usize,
    pub finite_convergence: usize,
    pub not_converged: usize,
    pub stable_interval: Interval,
    /// Converged `p` strictly inside the stability interval.
    pub inside_stable: usize,
    /// Converged `p` inside the stability interval widened by 0.01.
    pub inside_widened: usize,
    pub fraction_inside_widened: f64,
    /// `φ` at the two ends of the stability interval (three-point spectra).
    pub phi_at_edges: Option<(f64, f64)>,
    /// Largest `φ` sampled outside the stability interval.
    pub phi_max_unstable: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DensityRun {
    pub outcomes: Vec<TrialOutcome>,
    pub histogram: Histogram,
    /// `(p, H(ν_p*, λ), φ(p))` on the sample grid, for three-point spectra.
    pub phi: Vec<(f64, f64, f64)>,
    pub summary: DensitySummary,
}

/// Runs one orbit from the renormalized gradient `z`.
pub fn density_trial(
    problem: &QuadraticProblem,
    pspec: &PSpec,
    z: &[f64],
    max_transforms: usize,
    threshold: f64,
) -> Result<TrialOutcome> {
    let x0 = x0_from_z(problem, pspec, z)?;
    let finite = |transforms| TrialOutcome {
        trial: 0,
        status: TrialStatus::FiniteConvergence,
        p: None,
        transforms,
    };
    let nu = match renorm::renormalize(problem, pspec, &x0) {
        Ok(nu) => nu.without_amplitudes(),
        Err(Error::ZeroGradient) => return Ok(finite(0)),
        Err(e) => return Err(e),
    };
    if nu.is_point_mass() {
        return Ok(finite(0));
    }
    match attractor::follow_orbit(&nu, max_transforms, threshold) {
        Ok(est) => Ok(TrialOutcome {
            trial: 0,
            status: if est.converged {
                TrialStatus::Converged
            } else {
                TrialStatus::NotConverged
            },
            p: Some(est.p),
            transforms: est.projections.len() - 1,
        }),
        Err(Error::DegenerateMeasure) => Ok(finite(0)),
        Err(e) => Err(e),
    }
}

/// Empirical density of attractor parameters over random starts.
pub fn run_density(config: &ExperimentConfig, workers: usize) -> Result<DensityRun> {
    let problem = config.problem()?;
    let pspec = config.pspec()?;
    let d = problem.dim();
    let seed = config.seed();
    let max_transforms = config.n_steps.unwrap_or(100_000);
    let threshold = config.threshold.unwrap_or(attractor::DEFAULT_THRESHOLD);
    let outcomes = map_trials(config.trials(), workers, |trial| {
        let z = sample_sphere(&mut trial_rng(seed, trial), d);
        let mut out = density_trial(&problem, &pspec, &z, max_transforms, threshold)?;
        out.trial = trial;
        Ok(out)
    })?;

    let converged_p: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.status == TrialStatus::Converged)
        .filter_map(|o| o.p)
        .collect();
    let histogram = Histogram::unit(config.bins.unwrap_or(100), converged_p.iter().copied());

    let eig = problem.eigenvalues();
    let (m, big_m) = (problem.spectrum().lower(), problem.spectrum().upper());
    let report = attractor::stability_intervals(eig, m, big_m, None)?;
    let stable = report.i_s;
    let widened = stable.widened(0.01);

    let mut phi = Vec::new();
    let mut phi_at_edges = None;
    let mut phi_max_unstable = None;
    if d == 3 && eig[0] < eig[1] && eig[1] < eig[2] {
        let density = PhiDensity::new(m, eig[1], big_m)?;
        let n = config.p_points.unwrap_or(1001);
        let mut grid: Vec<f64> = (1..n - 1).map(|i| i as f64 / (n - 1) as f64).collect();
        grid.extend([stable.lo, stable.hi]);
        grid.sort_by(f64::total_cmp);
        let mut worst = 0.0_f64;
        for p in grid {
            let h = attractor::h_fixed_point(p, eig[1], m, big_m)?;
            let value = density.eval(p);
            if !stable.contains(p) {
                worst = worst.max(value);
            }
            phi.push((p, h, value));
        }
        phi_at_edges = Some((density.eval(stable.lo), density.eval(stable.hi)));
        phi_max_unstable = Some(worst);
    }

    let count = |s| outcomes.iter().filter(|o| o.status == s).count();
    let inside_widened = converged_p.iter().filter(|p| widened.contains(**p)).count();
    let summary = DensitySummary {
        trials: outcomes.len(),
        converged: count(TrialStatus::Converged),
        finite_convergence: count(TrialStatus::FiniteConvergence),
        not_converged: count(TrialStatus::NotConverged),
        stable_interval: stable,
        inside_stable: converged_p.iter().filter(|p| stable.contains(**p)).count(),
        inside_widened,
        fraction_inside_widened: if converged_p.is_empty() {
            0.0
        } else {
            inside_widened as f64 / converged_p.len() as f64
        },
        phi_at_edges,
        phi_max_unstable,
    };
    if summary.not_converged > 0 {
        log::warn!(
            "{} of {} density trials did not settle within {max_transforms} transforms",
            summary.not_converged,
            summary.trials
        );
    }
    Ok(DensityRun {
        outcomes,
        histogram,
        phi,
        summary,
    })
}

impl DensityRun {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut hist = CsvOut::create(&dir.join("density_histogram.csv"), &["bin_lo", "bin_hi", "count", "density"])?;
        for (i, (&c, &dens)) in self.histogram.counts.iter().zip(&self.histogram.density).enumerate() {
            hist.row(&[
                fmt_f64(self.histogram.edges[i]),
                fmt_f64(self.histogram.edges[i + 1]),
                c.to_string(),
                fmt_f64(dens),
            ])?;
        }
        hist.finish()?;

        let mut trials = CsvOut::create(&dir.join("density_trials.csv"), &["trial", "status", "p", "transforms"])?;
        for o in &self.outcomes {
            trials.row(&[
                o.trial.to_string(),
                o.status.name().to_string(),
                o.p.map(fmt_f64).unwrap_or_default(),
                o.transforms.to_string(),
            ])?;
        }
        trials.finish()?;

        if !self.phi.is_empty() {
            let mut phi = CsvOut::create(&dir.join("density_phi.csv"), &["p", "H", "phi"])?;
            for &(p, h, v) in &self.phi {
                phi.floats(&[p, h, v])?;
            }
            phi.finish()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ExperimentKind;

    #[test]
    fn single_direction_is_finite_convergence() {
        let p = QuadraticProblem::from_eigenvalues(vec![1.0, 4.0, 10.0], vec![0.0; 3]).unwrap();
        let out = density_trial(&p, &PSpec::steepest_descent(), &[1.0, 0.0, 0.0], 100, 1e-10).unwrap();
        assert_eq!(out.status, TrialStatus::FiniteConvergence);
        assert_eq!(out.p, None);
    }

    #[test]
    fn small_ensemble_accounts_for_every_trial() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Density);
        cfg.trials = Some(200);
        cfg.seed = Some(3);
        let run = run_density(&cfg.resolve().unwrap(), 2).unwrap();
        let s = &run.summary;
        assert_eq!(s.converged + s.finite_convergence + s.not_converged, 200);
        assert_eq!(run.histogram.total() as usize, s.converged);
        let integral: f64 = run.histogram.density.iter().sum::<f64>() / 100.0;
        assert!((integral - 1.0).abs() < 1e-12);
        let (lo, hi) = s.phi_at_edges.unwrap();
        assert!(lo < 1e-9 && hi < 1e-9);
        assert!(s.phi_max_unstable.unwrap() < 1e-12);
    }

    #[test]
    fn histogram_binning() {
        let h = Histogram::unit(4, [0.0, 0.3, 0.3, 0.99, 1.0, 1.5]);
        assert_eq!(h.counts, vec![1, 2, 0, 2]);
        assert_eq!(h.total(), 5);
    }
}
