use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attractor::{self, Interval, PhiDensity, ProbeTrace, Stability, StabilityReport};
use crate::error::{Error, Result};
use crate::renorm::SpectralMeasure;

use super::config::ExperimentConfig;
use super::io::{fmt_f64, CsvOut};
use super::map_trials;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub p: f64,
    pub predicted: Stability,
    pub growing: bool,
    pub multiplier: Option<f64>,
    /// Largest `H(ν_p*, λ)` over the interior atoms.
    pub h: f64,
    /// `|multiplier − H| / H`.
    pub multiplier_rel_error: Option<f64>,
    /// Lévy distance of the perturbed start from `ν_p*`.
    pub levy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub stable_interval: Interval,
    pub lambda_star: f64,
    pub s_star: f64,
    /// Midpoints between neighbouring probes whose growth flips.
    pub flips: Vec<f64>,
    /// Probes whose growth disagrees with the `H < 1` prediction.
    pub mismatches: usize,
}

#[derive(Debug, Clone)]
pub struct StabilityRun {
    pub report: StabilityReport,
    pub rows: Vec<ProbeRow>,
    pub traces: Vec<ProbeTrace>,
    pub phi: Option<PhiDensity>,
    pub summary: StabilitySummary,
}

fn p_grid(config: &ExperimentConfig) -> Vec<f64> {
    if let Some(ps) = &config.p_values {
        return ps.clone();
    }
    let step = config.p_step.unwrap_or(0.01);
    let n = (1.0 / step).round() as usize;
    (1..n).map(|i| i as f64 * step).filter(|p| *p < 1.0).collect()
}

/// Perturbs two-point fixed points with interior mass and measures the
/// double-step multiplier.
pub fn run_stability_probe(config: &ExperimentConfig, workers: usize) -> Result<StabilityRun> {
    let problem = config.problem()?;
    let (m, big_m) = (problem.spectrum().lower(), problem.spectrum().upper());
    let eig = problem.eigenvalues();
    let interior: Vec<f64> = match &config.interior {
        Some(v) => v.clone(),
        None => eig.iter().copied().filter(|&l| l > m && l < big_m).collect(),
    };
    if interior.is_empty() {
        return Err(Error::Config("no interior atoms to perturb".into()));
    }
    let alpha = config.alpha.unwrap_or(1e-8);
    let n_steps = config.n_steps.unwrap_or(50);
    let report = attractor::stability_intervals(eig, m, big_m, None)?;
    let ps = p_grid(config);

    let results = map_trials(ps.len(), workers, |i| {
        let p = ps[i];
        let trace = attractor::stability_probe(p, m, big_m, &interior, alpha, n_steps)?;
        let mut h = 0.0_f64;
        for &l in &interior {
            h = h.max(attractor::h_fixed_point(p, l, m, big_m)?);
        }
        let share = alpha / interior.len() as f64;
        let mut pairs = vec![(m, p), (big_m, 1.0 - p - alpha)];
        pairs.extend(interior.iter().map(|&l| (l, share)));
        let levy = attractor::levy_distance_to_two_point(&SpectralMeasure::from_pairs(&pairs)?, p, m, big_m);
        let row = ProbeRow {
            p,
            predicted: report.classify(p),
            growing: trace.growing,
            multiplier: trace.initial_multiplier,
            h,
            multiplier_rel_error: trace.initial_multiplier.map(|x| (x - h).abs() / h),
            levy,
        };
        Ok((row, trace))
    })?;
    let (rows, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let flips = rows
        .windows(2)
        .filter(|w| w[0].growing != w[1].growing)
        .map(|w| 0.5 * (w[0].p + w[1].p))
        .collect();
    let mismatches = rows
        .iter()
        .filter(|r| r.h != 1.0 && r.growing != (r.h > 1.0))
        .count();
    let phi = if interior.len() == 1 {
        Some(PhiDensity::new(m, interior[0], big_m)?)
    } else {
        None
    };
    let summary = StabilitySummary {
        stable_interval: report.i_s,
        lambda_star: report.lambda_star,
        s_star: report.s_star,
        flips,
        mismatches,
    };
    Ok(StabilityRun {
        report,
        rows,
        traces,
        phi,
        summary,
    })
}

impl StabilityRun {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut out = CsvOut::create(
            &dir.join("probe_summary.csv"),
            &["p", "classification", "growing", "multiplier", "H", "levy"],
        )?;
        for r in &self.rows {
            let class = match r.predicted {
                Stability::Stable => "stable",
                Stability::Unstable => "unstable",
                Stability::Boundary => "boundary",
            };
            out.row(&[
                fmt_f64(r.p),
                class.into(),
                r.growing.to_string(),
                r.multiplier.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.h),
                fmt_f64(r.levy),
            ])?;
        }
        out.finish()?;

        for t in &self.traces {
            let mut out = CsvOut::create(
                &dir.join("traces").join(format!("probe_p{:.4}.csv", t.p)),
                &["step", "interior_mass"],
            )?;
            for (k, v) in t.interior_mass.iter().enumerate() {
                out.row(&[k.to_string(), fmt_f64(*v)])?;
            }
            out.finish()?;
        }

        let mut out = CsvOut::create(&dir.join("stability_s.csv"), &["lambda", "s"])?;
        for &(l, s) in &self.report.s_values {
            out.floats(&[l, s])?;
        }
        out.finish()?;

        match &self.phi {
            Some(phi) => {
                let mut out = CsvOut::create(&dir.join("stability_h.csv"), &["p", "H", "phi"])?;
                for r in &self.rows {
                    out.floats(&[r.p, r.h, phi.eval(r.p)])?;
                }
                out.finish()
            }
            None => {
                let mut out = CsvOut::create(&dir.join("stability_h.csv"), &["p", "H"])?;
                for r in &self.rows {
                    out.floats(&[r.p, r.h])?;
                }
                out.finish()
            }
        }
    }
}
