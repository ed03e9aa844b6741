use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attractor::{self, AttractorEstimate, AttractorTracker};
use crate::error::{Error, Result};
use crate::renorm::{self, Diagnostics, MomentVector, SpectralMeasure};

use super::config::ExperimentConfig;
use super::io::{fmt_f64, write_measure, CsvOut};
use super::{sample_sphere, trial_rng};

/// Starting measure: a discretized density, the configured masses, or a
/// random direction on the eigenvalues.
fn initial_measure(config: &ExperimentConfig) -> Result<SpectralMeasure> {
    if config.density.is_some() {
        return renorm::discretize_continuous(&config.density_spec()?, config.n_atoms.unwrap_or(1000));
    }
    let eig = config
        .eigenvalues
        .as_ref()
        .ok_or_else(|| Error::Config("eigenvalues are required".into()))?;
    match &config.masses {
        Some(w) => {
            let pairs: Vec<(f64, f64)> = eig.iter().copied().zip(w.iter().copied()).collect();
            SpectralMeasure::from_pairs(&pairs)
        }
        None => {
            let z = sample_sphere(&mut trial_rng(config.seed(), 0), eig.len());
            Ok(SpectralMeasure::from_amplitudes(eig, &z)?.without_amplitudes())
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrbitRun {
    /// `(k, moments, diagnostics)` per iterate.
    pub rows: Vec<(usize, MomentVector, Diagnostics)>,
    pub final_measure: SpectralMeasure,
    /// Absent when the orbit starts on a point mass.
    pub attractor: Option<AttractorEstimate>,
}

/// Iterates `T` on a measure and records moments and diagnostics.
pub fn run_measure_orbit(config: &ExperimentConfig) -> Result<OrbitRun> {
    let n_steps = config.n_steps.unwrap_or(500);
    let threshold = config.threshold.unwrap_or(attractor::DEFAULT_THRESHOLD);
    let mut nu = initial_measure(config)?;
    let mut tracker = if nu.is_point_mass() {
        None
    } else {
        Some(AttractorTracker::new(&nu, threshold)?)
    };
    let mut rows = vec![(0, nu.moments(), renorm::diagnostics(&nu))];
    for k in 1..=n_steps {
        if nu.is_point_mass() {
            break;
        }
        nu = renorm::transform(&nu)?;
        rows.push((k, nu.moments(), renorm::diagnostics(&nu)));
        if let Some(t) = tracker.as_mut() {
            t.push(&nu);
        }
    }
    Ok(OrbitRun {
        rows,
        final_measure: nu,
        attractor: tracker.map(|t| t.estimate()),
    })
}

impl OrbitRun {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut out = CsvOut::create(
            &dir.join("orbit.csv"),
            &["k", "mu_m1", "mu_1", "mu_2", "L", "D", "r", "detM", "detN"],
        )?;
        for (k, mu, d) in &self.rows {
            let mut row = vec![k.to_string()];
            row.extend([mu.get(-1), mu.get(1), mu.get(2), d.l, d.d, d.r, d.det_m, d.det_n].map(fmt_f64));
            out.row(&row)?;
        }
        out.finish()?;
        write_measure(&dir.join("measure_final.csv"), &self.final_measure)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HilbertRow {
    pub k: usize,
    pub mass_below_mid: f64,
    pub l: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HilbertSummary {
    pub n_atoms: usize,
    pub midpoint: f64,
    /// Mass below the midpoint at the last even and odd iterates.
    pub p_even: f64,
    pub p_odd: f64,
    /// `|p_even + p_odd − 1|`.
    pub defect: f64,
    /// `|p_K − p_{K−2}|` at the last even iterate `K`.
    pub even_step_diff: f64,
    /// First even `k` from which `|p_k − p_{k−2}| ≤ 1e-6` holds to the end.
    pub settled_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct HilbertRun {
    pub rows: Vec<HilbertRow>,
    pub summary: HilbertSummary,
}

/// Orbit of a discretized continuous measure, tracking the mass below the
/// midpoint of its support.
pub fn run_hilbert(config: &ExperimentConfig) -> Result<HilbertRun> {
    let n_steps = config.n_steps.unwrap_or(300);
    let mut nu = initial_measure(config)?;
    let (lo, hi) = nu.support_extremes().ok_or(Error::DegenerateMeasure)?;
    let midpoint = 0.5 * (nu.atoms()[lo].lambda + nu.atoms()[hi].lambda);
    let row = |k, nu: &SpectralMeasure| {
        let d = renorm::diagnostics(nu);
        HilbertRow {
            k,
            mass_below_mid: nu.mass_below(midpoint),
            l: d.l,
            d: d.d,
        }
    };
    let mut rows = vec![row(0, &nu)];
    for k in 1..=n_steps {
        nu = renorm::transform(&nu)?;
        rows.push(row(k, &nu));
    }
    let last = rows.len() - 1;
    let even = last - last % 2;
    let odd = if last % 2 == 1 { last } else { last.saturating_sub(1) };
    let p = |k: usize| rows[k].mass_below_mid;
    let mut settled_at = None;
    for k in (1..=even / 2).rev().map(|j| 2 * j) {
        if (p(k) - p(k - 2)).abs() <= 1e-6 {
            settled_at = Some(k);
        } else {
            break;
        }
    }
    let summary = HilbertSummary {
        n_atoms: nu.len(),
        midpoint,
        p_even: p(even),
        p_odd: p(odd),
        defect: (p(even) + p(odd) - 1.0).abs(),
        even_step_diff: if even >= 2 { (p(even) - p(even - 2)).abs() } else { f64::NAN },
        settled_at,
    };
    Ok(HilbertRun { rows, summary })
}

impl HilbertRun {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut out = CsvOut::create(&dir.join("hilbert.csv"), &["k", "mass_below_mid", "L", "D"])?;
        for r in &self.rows {
            out.row(&[r.k.to_string(), fmt_f64(r.mass_below_mid), fmt_f64(r.l), fmt_f64(r.d)])?;
        }
        out.finish()
    }
}
