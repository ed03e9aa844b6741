use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attractor::{self, AttractorEstimate, AttractorTracker, PPair};
use crate::error::Result;
use crate::pgradient::{iterate, Termination, TrajectoryRecord};
use crate::quadratic::Spectrum;
use crate::rates::RateSummary;
use crate::renorm::SpectralMeasure;

use super::config::ExperimentConfig;
use super::io::{fmt_f64, CsvOut};
use super::{map_trials, sample_sphere, trial_rng, x0_from_z};

pub const IDENTITY_MIN_INCREMENT: f64 = 1e-4;

/// Invariant checks over one recorded trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryChecks {
    /// Largest relative excursion of `γ_k` outside `[1/M, 1/m]`.
    pub gamma_violation: f64,
    /// Largest relative decrease of `L_k`, `D_k` and `r_k` between steps.
    pub l_decrease: f64,
    pub d_decrease: f64,
    pub r_decrease: f64,
    /// Smallest `det M_k`, `det N_k` relative to their moment scale.
    pub min_det_m: f64,
    pub min_det_n: f64,
    /// Largest relative residual of `det M_k = (L_{k+1} − L_k) D_k² / μ_1`
    /// over steps where `L` grows by at least `IDENTITY_MIN_INCREMENT`
    /// relative, so the difference is resolvable in double precision.
    pub det_identity_residual: f64,
    pub det_identity_checked: usize,
}

impl TrajectoryChecks {
    pub fn passes(&self, tol: f64) -> bool {
        self.gamma_violation <= tol
            && self.l_decrease <= tol
            && self.d_decrease <= tol
            && self.r_decrease <= tol
            && self.min_det_m >= -tol
            && self.min_det_n >= -tol
            && self.det_identity_residual <= tol.max(1e-10)
    }
}

pub fn check_trajectory(record: &TrajectoryRecord, spectrum: &Spectrum) -> TrajectoryChecks {
    let (lo, hi) = (1.0 / spectrum.upper(), 1.0 / spectrum.lower());
    let mut c = TrajectoryChecks {
        gamma_violation: 0.0,
        l_decrease: 0.0,
        d_decrease: 0.0,
        r_decrease: 0.0,
        min_det_m: f64::INFINITY,
        min_det_n: f64::INFINITY,
        det_identity_residual: 0.0,
        det_identity_checked: 0,
    };
    let drop = |a: f64, b: f64| ((a - b) / a.abs().max(f64::MIN_POSITIVE)).max(0.0);
    for (i, s) in record.steps.iter().enumerate() {
        let g = s.gamma;
        c.gamma_violation = c.gamma_violation.max((lo - g) / lo).max((g - hi) / hi);
        let mu = &s.moments;
        let scale_m = mu.get(3) * mu.get(1) * mu.get(-1);
        let scale_n = mu.get(4) * mu.get(2);
        c.min_det_m = c.min_det_m.min(s.diagnostics.det_m / scale_m);
        c.min_det_n = c.min_det_n.min(s.diagnostics.det_n / scale_n);
        if let Some(next) = record.steps.get(i + 1) {
            let (a, b) = (&s.diagnostics, &next.diagnostics);
            c.l_decrease = c.l_decrease.max(drop(a.l, b.l));
            c.d_decrease = c.d_decrease.max(drop(a.d, b.d));
            c.r_decrease = c.r_decrease.max(drop(a.r, b.r));
            let rhs = (b.l - a.l) * a.d * a.d / mu.get(1);
            if b.l - a.l >= IDENTITY_MIN_INCREMENT * a.l {
                c.det_identity_checked += 1;
                let res = (a.det_m - rhs).abs() / a.det_m.abs();
                c.det_identity_residual = c.det_identity_residual.max(res);
            }
        }
    }
    if record.steps.is_empty() {
        c.min_det_m = 0.0;
        c.min_det_n = 0.0;
    }
    c
}

/// Attractor estimate from the renormalized gradients of a trajectory.
pub fn trajectory_attractor(record: &TrajectoryRecord, lambdas: &[f64], threshold: f64) -> Result<Option<AttractorEstimate>> {
    let mut tracker: Option<AttractorTracker> = None;
    for s in &record.steps {
        let nu = SpectralMeasure::from_amplitudes(lambdas, &s.z)?.without_amplitudes();
        match tracker.as_mut() {
            Some(t) => t.push(&nu),
            None => {
                if nu.is_point_mass() {
                    return Ok(None);
                }
                tracker = Some(AttractorTracker::new(&nu, threshold)?);
            }
        }
    }
    Ok(tracker.map(|t| t.estimate()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub trial: usize,
    pub termination: Termination,
    pub steps: usize,
    pub relaxation_flagged: bool,
    pub checks: TrajectoryChecks,
    pub attractor: Option<AttractorEstimateBrief>,
    pub rates: RateSummary,
}

/// Attractor estimate without the per-iterate projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorEstimateBrief {
    pub p: f64,
    pub l_limit: f64,
    pub interior_residual: f64,
    pub converged: bool,
    pub converged_at: Option<usize>,
    /// Both roots `p∓` consistent with `l_limit`.
    pub p_from_l: Option<PPair>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRun {
    /// Full record of trial 0.
    pub first: TrajectoryRecord,
    pub summaries: Vec<TrajectorySummary>,
}

/// Runs the method from configured or random starts and checks invariants.
pub fn run_trajectory(config: &ExperimentConfig, workers: usize) -> Result<TrajectoryRun> {
    let problem = config.problem()?;
    let pspec = config.pspec()?;
    let rc = config.run_config()?;
    let threshold = config.threshold.unwrap_or(attractor::DEFAULT_THRESHOLD);
    let seed = config.seed();
    let spectrum = problem.spectrum();
    let rho = spectrum.condition_number();
    let results = map_trials(config.trials(), workers, |trial| {
        let x0 = match &config.x0 {
            Some(x0) => x0.clone(),
            None => {
                let z = sample_sphere(&mut trial_rng(seed, trial), problem.dim());
                x0_from_z(&problem, &pspec, &z)?
            }
        };
        let record = iterate(&problem, &pspec, &x0, &rc)?;
        let checks = check_trajectory(&record, spectrum);
        let est = trajectory_attractor(&record, problem.eigenvalues(), threshold)?;
        let p = est.as_ref().filter(|e| e.converged).map(|e| e.p);
        let rates = RateSummary::from_trajectory(&record, spectrum, &pspec, p)?;
        let summary = TrajectorySummary {
            trial,
            termination: record.termination,
            steps: record.len(),
            relaxation_flagged: record.relaxation_flagged,
            checks,
            attractor: est.map(|e| AttractorEstimateBrief {
                p: e.p,
                l_limit: e.l_limit,
                interior_residual: e.interior_residual,
                converged: e.converged,
                converged_at: e.converged_at,
                p_from_l: attractor::p_from_l(e.l_limit, rho).ok(),
            }),
            rates,
        };
        Ok(((trial == 0).then_some(record), summary))
    })?;
    let mut first = None;
    let mut summaries = Vec::with_capacity(results.len());
    for (rec, s) in results {
        if rec.is_some() {
            first = rec;
        }
        summaries.push(s);
    }
    Ok(TrajectoryRun {
        first: first.expect("at least one trial"),
        summaries,
    })
}

impl TrajectoryRun {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut out = CsvOut::create(
            &dir.join("trajectory.csv"),
            &["k", "gamma", "objective", "log_grad_norm", "L", "D", "r", "detM", "detN"],
        )?;
        for s in &self.first.steps {
            let d = &s.diagnostics;
            let mut row = vec![s.k.to_string()];
            row.extend([s.gamma, s.objective, s.log_grad_norm, d.l, d.d, d.r, d.det_m, d.det_n].map(fmt_f64));
            out.row(&row)?;
        }
        out.finish()?;

        let mut out = CsvOut::create(
            &dir.join("trajectories.csv"),
            &["trial", "termination", "steps", "p", "converged", "L_limit", "V_n", "r_of_p"],
        )?;
        for s in &self.summaries {
            let term = match s.termination {
                Termination::MaxIterations => "max_iterations".to_string(),
                Termination::GradientTolerance => "gradient_tolerance".to_string(),
                Termination::FiniteConvergence => "finite_convergence".to_string(),
                Termination::Diverged { step } => format!("diverged@{step}"),
            };
            let a = s.attractor.as_ref();
            out.row(&[
                s.trial.to_string(),
                term,
                s.steps.to_string(),
                a.map(|a| fmt_f64(a.p)).unwrap_or_default(),
                a.map(|a| a.converged.to_string()).unwrap_or_default(),
                a.map(|a| fmt_f64(a.l_limit)).unwrap_or_default(),
                fmt_f64(s.rates.v_n),
                s.rates.r_of_p.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        out.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ExperimentKind;

    #[test]
    fn default_run_satisfies_invariants() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Trajectory);
        cfg.trials = Some(4);
        cfg.seed = Some(11);
        let run = run_trajectory(&cfg.resolve().unwrap(), 2).unwrap();
        assert_eq!(run.summaries.len(), 4);
        for s in &run.summaries {
            assert!(s.checks.passes(1e-10), "{:?}", s.checks);
            let a = s.attractor.as_ref().unwrap();
            assert!(a.p > 0.0 && a.p < 1.0);
        }
        assert_eq!(run.first.len(), run.summaries[0].steps);
    }

    #[test]
    fn explicit_start_is_used() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Trajectory);
        cfg.eigenvalues = Some(vec![1.0, 2.0]);
        cfg.x0 = Some(vec![1.0, 1.0]);
        cfg.max_iters = Some(1);
        let run = run_trajectory(&cfg.resolve().unwrap(), 1).unwrap();
        assert!((run.first.steps[0].gamma - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn files_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(ExperimentKind::Trajectory);
        cfg.max_iters = Some(20);
        let run = run_trajectory(&cfg.resolve().unwrap(), 1).unwrap();
        run.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert_eq!(text.lines().count(), 21);
        assert!(text.starts_with("k,gamma,"));
    }
}
