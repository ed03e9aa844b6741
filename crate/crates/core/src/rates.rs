//! Convergence rates.
//!
//! On a two-point attractor with mass `p` at `m` the per-step rate is
//!
//! ```text
//! r(p) = p(1 − p)(ρ − 1)² / ([p + ρ(1 − p)] [(1 − p) + ρ p])
//! ```
//!
//! whose maximum `R_max = ((ρ − 1)/(ρ + 1))²` at `p = ½` is the Kantorovich
//! worst case. Restricting `p` to the widest possible stability interval
//! gives the smaller bound `R_min* = (ρ − 1)² / ((ρ + 1)² + 4ρ)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pgradient::{PSpec, TrajectoryRecord};
use crate::quadratic::Spectrum;
use crate::renorm::MomentVector;

/// `log ‖g‖` and `g / ‖g‖`; `log_norm = −∞` marks an exactly zero gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSample {
    pub log_norm: f64,
    pub direction: Vec<f64>,
}

impl GradientSample {
    pub fn new(log_norm: f64, direction: Vec<f64>) -> Self {
        Self { log_norm, direction }
    }

    /// Splits a raw gradient into norm and direction.
    pub fn from_gradient(g: &[f64]) -> Self {
        let n = crate::quadratic::norm(g);
        if n == 0.0 {
            return Self::new(f64::NEG_INFINITY, vec![0.0; g.len()]);
        }
        Self::new(n.ln(), g.iter().map(|v| v / n).collect())
    }

    /// `log (W g, g)`.
    fn log_weighted(&self, lambdas: &[f64], w: &PSpec) -> f64 {
        let q: f64 = lambdas
            .iter()
            .zip(&self.direction)
            .map(|(l, v)| w.eval(*l) * v * v)
            .sum();
        2.0 * self.log_norm + q.ln()
    }
}

/// `r = 1 − 1/L`.
pub fn per_step_rate(mu: &MomentVector) -> f64 {
    (1.0 - 1.0 / mu.l()).max(0.0)
}

/// `V_n = [(W g_n, g_n) / (W g_0, g_0)]^{1/n}` over the whole sequence.
pub fn geometric_mean_rate(w: &PSpec, lambdas: &[f64], gradients: &[GradientSample]) -> Result<f64> {
    geometric_mean_rates(w, lambdas, gradients).map(|v| *v.last().unwrap())
}

/// `[V_1, …, V_n]`, evaluated in log space.
///
/// Once a gradient is exactly zero the rate is `0` from then on.
pub fn geometric_mean_rates(w: &PSpec, lambdas: &[f64], gradients: &[GradientSample]) -> Result<Vec<f64>> {
    if gradients.len() < 2 {
        return Err(invalid("need at least two gradients to form a rate"));
    }
    let first = &gradients[0];
    if first.log_norm == f64::NEG_INFINITY {
        return Err(invalid("initial gradient is zero"));
    }
    if let Some(bad) = gradients.iter().find(|g| g.direction.len() != lambdas.len()) {
        return Err(crate::error::Error::DimensionMismatch {
            expected: lambdas.len(),
            got: bad.direction.len(),
        });
    }
    let base = first.log_weighted(lambdas, w);
    let mut out = Vec::with_capacity(gradients.len() - 1);
    let mut reached = false;
    for (n, g) in gradients.iter().enumerate().skip(1) {
        reached |= g.log_norm == f64::NEG_INFINITY;
        if reached {
            out.push(0.0);
        } else {
            out.push(((g.log_weighted(lambdas, w) - base) / n as f64).exp());
        }
    }
    Ok(out)
}

/// Asymptotic rate on the attractor with mass `p` at the lower end.
pub fn r_of_p(p: f64, rho: f64) -> f64 {
    // evaluate on the pair (1 − hi, hi) with hi ≥ ½, where 1 − hi is exact,
    // so r(p) and r(1 − p) round identically
    let hi = if p >= 0.5 { p } else { 1.0 - p };
    let (p, q) = (1.0 - hi, hi);
    p * q * (rho - 1.0).powi(2) / ((p + rho * q) * (q + rho * p))
}

/// `(R_max, R_min*)`.
pub fn rate_bounds(rho: f64) -> Result<(f64, f64)> {
    if !(rho > 1.0 && rho.is_finite()) {
        return Err(invalid(format!("condition number must exceed 1, got {rho}")));
    }
    let r_max = ((rho - 1.0) / (rho + 1.0)).powi(2);
    let r_min_star = (rho - 1.0).powi(2) / ((rho + 1.0).powi(2) + 4.0 * rho);
    Ok((r_max, r_min_star))
}

/// `Δ_N = log(R_max/R_min) / (log R_max · log R_min)`.
pub fn delta_n(r_max: f64, r_min: f64) -> Result<f64> {
    if !(0.0 < r_min && r_min <= r_max && r_max < 1.0) {
        return Err(invalid(format!(
            "need 0 < R_min <= R_max < 1, got R_min = {r_min}, R_max = {r_max}"
        )));
    }
    Ok((r_max / r_min).ln() / (r_max.ln() * r_min.ln()))
}

/// `D(p) = p(1 − p)(M − m)²`.
pub fn d_of_p(p: f64, m: f64, big_m: f64) -> f64 {
    p * (1.0 - p) * (big_m - m).powi(2)
}

/// Condition number at which `R_max − R_min*` is largest.
pub fn max_range_rho() -> f64 {
    1.0 + 2.0 * 2.0_f64.sqrt() + 2.0 * (2.0 + 2.0_f64.sqrt()).sqrt()
}

/// The largest value of `R_max − R_min*`, `3 − 2√2`.
pub fn max_range_width() -> f64 {
    3.0 - 2.0 * 2.0_f64.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub r_sequence: Vec<f64>,
    pub v_n: f64,
    /// `r(p)` for the attractor parameter, when one was supplied.
    pub r_of_p: Option<f64>,
    pub r_max: f64,
    pub r_min_star: f64,
    pub delta_n: f64,
}

impl RateSummary {
    /// Rates of a recorded trajectory, with `V_n` measured under `W = P`.
    pub fn from_trajectory(
        record: &TrajectoryRecord,
        spectrum: &Spectrum,
        pspec: &PSpec,
        p: Option<f64>,
    ) -> Result<Self> {
        let rho = spectrum.condition_number();
        let (r_max, r_min_star) = rate_bounds(rho)?;
        let samples = record.gradient_samples();
        let v_n = if samples.len() >= 2 {
            geometric_mean_rate(pspec, spectrum.eigenvalues(), &samples)?
        } else {
            0.0
        };
        Ok(Self {
            r_sequence: record.steps.iter().map(|s| s.diagnostics.r).collect(),
            v_n,
            r_of_p: p.map(|p| r_of_p(p, rho)),
            r_max,
            r_min_star,
            delta_n: delta_n(r_max, r_min_star)?,
        })
    }
}
