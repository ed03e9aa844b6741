use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rates::{max_range_rho, max_range_width, r_of_p, rate_bounds};

use super::config::ExperimentConfig;
use super::io::CsvOut;

#[derive(Debug, Clone)]
pub struct RateCurvesRun {
    /// `(ρ, [(p, r(p))])` per condition number.
    pub curves: Vec<(f64, Vec<(f64, f64)>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePeak {
    pub rho: f64,
    pub peak: f64,
    pub r_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurvesSummary {
    pub peaks: Vec<CurvePeak>,
    /// Curves with larger `ρ` lie pointwise on or above smaller ones.
    pub ordered: bool,
}

/// `r(p)` on a uniform `p` grid for each configured `ρ`.
pub fn run_rate_curves(config: &ExperimentConfig) -> Result<RateCurvesRun> {
    let n = config.p_points.unwrap_or(1001);
    let mut rhos = config.rho.clone().unwrap_or_else(|| vec![2.0, 4.0, 8.0, 16.0]);
    rhos.sort_by(f64::total_cmp);
    let curves = rhos
        .into_iter()
        .map(|rho| {
            let pts = (0..n)
                .map(|i| {
                    let p = i as f64 / (n - 1) as f64;
                    (p, r_of_p(p, rho))
                })
                .collect();
            (rho, pts)
        })
        .collect();
    Ok(RateCurvesRun { curves })
}

impl RateCurvesRun {
    pub fn summary(&self) -> RateCurvesSummary {
        let peaks = self
            .curves
            .iter()
            .map(|(rho, pts)| CurvePeak {
                rho: *rho,
                peak: pts.iter().map(|x| x.1).fold(0.0, f64::max),
                r_max: rate_bounds(*rho).map(|b| b.0).unwrap_or(f64::NAN),
            })
            .collect();
        let ordered = self.curves.windows(2).all(|w| {
            w[0].1.iter().zip(&w[1].1).all(|(a, b)| a.1 <= b.1)
        });
        RateCurvesSummary { peaks, ordered }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (rho, pts) in &self.curves {
            let mut out = CsvOut::create(&dir.join(format!("rate_curve_rho{rho}.csv")), &["p", "r"])?;
            for &(p, r) in pts {
                out.floats(&[p, r])?;
            }
            out.finish()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRangeSummary {
    /// Largest `R_max − R_min*` on the grid and where it occurs.
    pub grid_max_gap: f64,
    pub grid_argmax_rho: f64,
    pub max_gap: f64,
    pub argmax_rho: f64,
}

#[derive(Debug, Clone)]
pub struct RateRangeRun {
    /// `(1/ρ, R_min*, R_max)`.
    pub rows: Vec<(f64, f64, f64)>,
    pub summary: RateRangeSummary,
}

/// `[R_min*, R_max]` over a uniform grid of `1/ρ` in `(0, 1)`.
pub fn run_rate_range(config: &ExperimentConfig) -> Result<RateRangeRun> {
    let n = config.inv_rho_points.unwrap_or(999);
    let mut rows = Vec::with_capacity(n);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for i in 1..=n {
        let inv = i as f64 / (n + 1) as f64;
        let (r_max, r_min) = rate_bounds(1.0 / inv)?;
        if r_max - r_min > best.0 {
            best = (r_max - r_min, 1.0 / inv);
        }
        rows.push((inv, r_min, r_max));
    }
    let rho = max_range_rho();
    let (r_max, r_min) = rate_bounds(rho)?;
    debug_assert!((r_max - r_min - max_range_width()).abs() < 1e-12);
    Ok(RateRangeRun {
        rows,
        summary: RateRangeSummary {
            grid_max_gap: best.0,
            grid_argmax_rho: best.1,
            max_gap: r_max - r_min,
            argmax_rho: rho,
        },
    })
}

impl RateRangeRun {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut out = CsvOut::create(&dir.join("rate_range.csv"), &["inv_rho", "R_min_star", "R_max"])?;
        for &(a, b, c) in &self.rows {
            out.floats(&[a, b, c])?;
        }
        out.finish()
    }
}
