//! Two-point attractors of `T` and their stability.
//!
//! Orbits of `T` converge to a 2-cycle `ν_p* ↔ ν_{1−p}*` on the extreme
//! eigenvalues, where `ν_p*` puts mass `p` at `m` and `1 − p` at `M`. An
//! interior atom at `λ` is multiplied per double step by
//!
//! ```text
//! H(ν_p*, λ) = [M(1−p) + mp − λ]² [Mp + m(1−p) − λ]² / (p²(1−p)²(M−m)⁴)
//! ```
//!
//! so `ν_p*` is a stable fixed point of `T²` exactly when `H < 1` on the
//! interior spectrum, i.e. for `p` in `I_s = (½ − s(λ*), ½ + s(λ*))`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::renorm::{self, SpectralMeasure};

/// Default bound on the mass left off the two extreme atoms.
pub const DEFAULT_THRESHOLD: f64 = 1e-10;
/// Largest change of `L` between consecutive iterates accepted as converged.
pub const L_STEP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorEstimate {
    /// Even-iterate mass at the lower support end.
    pub p: f64,
    pub l_limit: f64,
    /// Mass off the two extreme atoms at the last even iterate.
    pub interior_residual: f64,
    pub converged: bool,
    /// First even iterate whose residual met the threshold.
    pub converged_at: Option<usize>,
    /// Index of the last even iterate used for `p`.
    pub final_index: usize,
    /// Lower and upper end of the support the cycle forms on.
    pub support: (f64, f64),
    /// Per-iterate `(mass at lower end, mass at upper end)`.
    pub projections: Vec<(f64, f64)>,
}

impl AttractorEstimate {
    pub fn rho(&self) -> f64 {
        self.support.1 / self.support.0
    }
}

/// Incremental attractor extraction over an orbit.
#[derive(Debug, Clone)]
pub struct AttractorTracker {
    lo: usize,
    hi: usize,
    threshold: f64,
    support: (f64, f64),
    projections: Vec<(f64, f64)>,
    residuals: Vec<f64>,
    ls: Vec<f64>,
    converged_at: Option<usize>,
}

impl AttractorTracker {
    /// Starts tracking from `initial`, which must have positive mass on at
    /// least two atoms.
    pub fn new(initial: &SpectralMeasure, threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(invalid("threshold must be nonnegative"));
        }
        let (lo, hi) = initial.support_extremes().ok_or(Error::DegenerateMeasure)?;
        if lo == hi {
            return Err(Error::DegenerateMeasure);
        }
        let atoms = initial.atoms();
        let mut t = Self {
            lo,
            hi,
            threshold,
            support: (atoms[lo].lambda, atoms[hi].lambda),
            projections: Vec::new(),
            residuals: Vec::new(),
            ls: Vec::new(),
            converged_at: None,
        };
        t.push(initial);
        Ok(t)
    }

    /// Records the next iterate of the orbit.
    pub fn push(&mut self, nu: &SpectralMeasure) {
        let atoms = nu.atoms();
        let k = self.projections.len();
        self.projections.push((atoms[self.lo].mass, atoms[self.hi].mass));
        let residual: f64 = atoms
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.lo && *i != self.hi)
            .map(|(_, a)| a.mass)
            .sum();
        self.residuals.push(residual);
        self.ls.push(renorm::diagnostics(nu).l);
        if self.converged_at.is_none() && k.is_multiple_of(2) && residual <= self.threshold {
            self.converged_at = Some(k);
        }
    }

    pub fn len(&self) -> usize {
        self.projections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projections.is_empty()
    }

    /// Whether the latest iterate is even, meets the threshold and `L` has
    /// settled.
    pub fn is_settled(&self) -> bool {
        let k = self.len() - 1;
        k.is_multiple_of(2) && self.residuals[k] <= self.threshold && self.l_settled()
    }

    fn l_settled(&self) -> bool {
        match self.ls.len() {
            0 | 1 => true,
            n => (self.ls[n - 1] - self.ls[n - 2]).abs() <= L_STEP_TOLERANCE,
        }
    }

    pub fn estimate(&self) -> AttractorEstimate {
        let last = self.len() - 1;
        let k = last - last % 2;
        let residual = self.residuals[k];
        AttractorEstimate {
            p: self.projections[k].0,
            l_limit: self.ls[last],
            interior_residual: residual,
            converged: residual <= self.threshold && self.l_settled(),
            converged_at: self.converged_at,
            final_index: k,
            support: self.support,
            projections: self.projections.clone(),
        }
    }
}

/// Estimates `p` from an orbit `ν_0, T ν_0, …`.
///
/// `p` is read at the last even iterate; `converged` is `false` when the
/// residual or the change in `L` is still above tolerance.
pub fn extract_p(orbit: &[SpectralMeasure], threshold: f64) -> Result<AttractorEstimate> {
    let first = orbit.first().ok_or_else(|| invalid("empty orbit"))?;
    let mut tracker = AttractorTracker::new(first, threshold)?;
    for nu in &orbit[1..] {
        tracker.push(nu);
    }
    Ok(tracker.estimate())
}

/// Runs `T` from `initial` until the orbit settles on its 2-cycle or
/// `max_transforms` is reached, without storing the orbit.
pub fn follow_orbit(initial: &SpectralMeasure, max_transforms: usize, threshold: f64) -> Result<AttractorEstimate> {
    let mut tracker = AttractorTracker::new(initial, threshold)?;
    let mut nu = initial.clone();
    for _ in 0..max_transforms {
        if tracker.is_settled() {
            break;
        }
        nu = renorm::transform(&nu)?;
        tracker.push(&nu);
    }
    Ok(tracker.estimate())
}

/// The two attractor masses `{p, 1 − p}` compatible with a limit `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PPair {
    pub p_minus: f64,
    pub p_plus: f64,
}

impl PPair {
    /// Both roots lie strictly inside `(0, 1)`.
    pub fn is_interior(&self) -> bool {
        self.p_minus > 0.0 && self.p_plus < 1.0
    }
}

/// `p = ½ ± ((ρ+1)/(ρ−1)) √(¼ − ρL/(ρ+1)²)`.
///
/// Evaluated through `p(1 − p) = (L − 1) ρ / (ρ − 1)²` so the smaller root
/// carries no cancellation.
pub fn p_from_l(l: f64, rho: f64) -> Result<PPair> {
    if !(rho > 1.0 && rho.is_finite()) {
        return Err(invalid(format!("condition number must exceed 1, got {rho}")));
    }
    let l_star = (rho + 1.0).powi(2) / (4.0 * rho);
    if !(l >= 1.0 - 1e-14 && l <= l_star * (1.0 + 1e-14)) {
        return Err(invalid(format!("L = {l} outside [1, {l_star}]")));
    }
    let c = ((l - 1.0).max(0.0) * rho / (rho - 1.0).powi(2)).min(0.25);
    let mut disc = 1.0 - 4.0 * c;
    if disc < 0.0 {
        disc = 0.0;
    }
    let p_minus = 2.0 * c / (1.0 + disc.sqrt());
    Ok(PPair {
        p_minus,
        p_plus: 1.0 - p_minus,
    })
}

/// `s(λ) = √((M − λ)² + (λ − m)²) / (2(M − m))`.
pub fn s_of_lambda(lambda: f64, m: f64, big_m: f64) -> Result<f64> {
    check_range(lambda, m, big_m)?;
    Ok(((big_m - lambda).hypot(lambda - m)) / (2.0 * (big_m - m)))
}

fn check_range(lambda: f64, m: f64, big_m: f64) -> Result<()> {
    if !(m < big_m) {
        return Err(invalid(format!("need m < M, got {m}, {big_m}")));
    }
    if !(lambda >= m && lambda <= big_m) {
        return Err(invalid(format!("lambda = {lambda} outside [{m}, {big_m}]")));
    }
    Ok(())
}

/// Open interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    pub fn widened(&self, by: f64) -> Interval {
        Interval {
            lo: self.lo - by,
            hi: self.hi + by,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub s_values: Vec<(f64, f64)>,
    pub lambda_star: f64,
    pub s_star: f64,
    pub i_s: Interval,
    /// Empty when the spectrum is just `{m, M}`.
    pub i_u: Vec<Interval>,
    pub h_query: Option<f64>,
    pub h_profile: Vec<(f64, f64)>,
}

impl StabilityReport {
    pub fn classify(&self, p: f64) -> Stability {
        if self.i_s.contains(p) {
            Stability::Stable
        } else if self.i_u.iter().any(|i| i.contains(p)) {
            Stability::Unstable
        } else {
            Stability::Boundary
        }
    }
}

/// `s(λ)` over the given spectrum, `λ* = argmin s`, and `I_s`, `I_u`.
///
/// When `p_query` is given the report also carries `H(ν_p*, λ)` at every
/// point.
pub fn stability_intervals(
    spectrum_points: &[f64],
    m: f64,
    big_m: f64,
    p_query: Option<f64>,
) -> Result<StabilityReport> {
    if spectrum_points.is_empty() {
        return Err(invalid("empty spectrum"));
    }
    let mut s_values = Vec::with_capacity(spectrum_points.len());
    for &l in spectrum_points {
        s_values.push((l, s_of_lambda(l, m, big_m)?));
    }
    let &(lambda_star, s_star) = s_values
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let i_s = Interval {
        lo: 0.5 - s_star,
        hi: 0.5 + s_star,
    };
    let i_u = if i_s.lo > 0.0 {
        vec![
            Interval { lo: 0.0, hi: i_s.lo },
            Interval { lo: i_s.hi, hi: 1.0 },
        ]
    } else {
        Vec::new()
    };
    let h_profile = match p_query {
        Some(p) => spectrum_points
            .iter()
            .map(|&l| h_fixed_point(p, l, m, big_m).map(|h| (l, h)))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    Ok(StabilityReport {
        s_values,
        lambda_star,
        s_star,
        i_s,
        i_u,
        h_query: p_query,
        h_profile,
    })
}

/// Double-step multiplier `H(ν_p*, λ)` of interior mass at `λ`.
pub fn h_fixed_point(p: f64, lambda: f64, m: f64, big_m: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("p = {p} must lie in (0, 1)")));
    }
    check_range(lambda, m, big_m)?;
    let q = 1.0 - p;
    let a = big_m * q + m * p - lambda;
    let b = big_m * p + m * q - lambda;
    let w = big_m - m;
    Ok((a * b / (p * q * w * w)).powi(2))
}

/// Limiting density `φ` of attractors for a three-point spectrum `{m, λ, M}`.
///
/// `φ(p) = C |log H(ν_p*, λ)|` where `H < 1` and `0` elsewhere, with `C`
/// normalizing the integral over `(0, 1)` to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiDensity {
    m: f64,
    lambda: f64,
    big_m: f64,
    constant: f64,
    stable: Interval,
}

impl PhiDensity {
    pub fn new(m: f64, lambda: f64, big_m: f64) -> Result<Self> {
        check_range(lambda, m, big_m)?;
        if lambda == m || lambda == big_m {
            return Err(invalid("the interior eigenvalue must lie strictly inside (m, M)"));
        }
        let s = s_of_lambda(lambda, m, big_m)?;
        let stable = Interval {
            lo: 0.5 - s,
            hi: 0.5 + s,
        };
        let mut phi = Self {
            m,
            lambda,
            big_m,
            constant: 1.0,
            stable,
        };
        // log singularities where either bracket of H vanishes
        let w = big_m - m;
        let mut breaks = vec![stable.lo, stable.hi, (big_m - lambda) / w, (lambda - m) / w];
        breaks.retain(|b| stable.lo <= *b && *b <= stable.hi);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let integral: f64 = breaks
            .windows(2)
            .map(|ab| graded_midpoint(|p| phi.unnormalized(p), ab[0], ab[1], 20_000))
            .sum();
        phi.constant = 1.0 / integral;
        Ok(phi)
    }

    /// `|log min(1, H)|`.
    pub fn unnormalized(&self, p: f64) -> f64 {
        if !(p > 0.0 && p < 1.0) {
            return 0.0;
        }
        let h = h_fixed_point(p, self.lambda, self.m, self.big_m).unwrap_or(1.0);
        if h >= 1.0 {
            0.0
        } else {
            -h.ln()
        }
    }

    pub fn eval(&self, p: f64) -> f64 {
        self.constant * self.unnormalized(p)
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn stable_interval(&self) -> Interval {
        self.stable
    }
}

/// Normalized `φ(p)` for the spectrum `{m, λ, M}`.
pub fn phi_density(p: f64, m: f64, interior_lambda: f64, big_m: f64) -> Result<f64> {
    Ok(PhiDensity::new(m, interior_lambda, big_m)?.eval(p))
}

/// Midpoint rule after the substitution `x = a + (b − a)(3u² − 2u³)`, which
/// flattens integrable endpoint singularities.
fn graded_midpoint<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) * h;
            let x = a + (b - a) * u * u * (3.0 - 2.0 * u);
            f(x) * 6.0 * u * (1.0 - u) * (b - a)
        })
        .sum::<f64>()
        * h
}

/// Interior-mass trace of a perturbed two-point fixed point under `T²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrace {
    pub p: f64,
    pub alpha: f64,
    /// Interior mass after `0, 1, …` double steps.
    pub interior_mass: Vec<f64>,
    /// Ratio of the first two entries; `None` when `α = 0`.
    pub initial_multiplier: Option<f64>,
    pub growing: bool,
}

/// Moves mass `α` from `M` onto `interior_atoms` (evenly), then applies `T²`
/// `n_steps` times.
pub fn stability_probe(
    p: f64,
    m: f64,
    big_m: f64,
    interior_atoms: &[f64],
    alpha: f64,
    n_steps: usize,
) -> Result<ProbeTrace> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("p = {p} must lie in (0, 1)")));
    }
    if !(alpha >= 0.0 && alpha < p.min(1.0 - p)) {
        return Err(invalid(format!("alpha = {alpha} must lie in [0, min(p, 1 - p))")));
    }
    if interior_atoms.is_empty() || interior_atoms.iter().any(|&l| !(l > m && l < big_m)) {
        return Err(invalid("interior atoms must lie strictly inside (m, M)"));
    }
    if alpha == 0.0 {
        return Ok(ProbeTrace {
            p,
            alpha,
            interior_mass: vec![0.0; n_steps + 1],
            initial_multiplier: None,
            growing: false,
        });
    }
    let share = alpha / interior_atoms.len() as f64;
    let mut atoms = vec![
        renorm::Atom::new(m, p),
        renorm::Atom::new(big_m, 1.0 - p - alpha),
    ];
    atoms.extend(interior_atoms.iter().map(|&l| renorm::Atom::new(l, share)));
    let mut nu = SpectralMeasure::new(atoms)?;
    let interior = |nu: &SpectralMeasure| -> f64 {
        nu.atoms()
            .iter()
            .filter(|a| a.lambda != m && a.lambda != big_m)
            .map(|a| a.mass)
            .sum()
    };
    let mut trace = vec![interior(&nu)];
    for _ in 0..n_steps {
        nu = renorm::transform(&renorm::transform(&nu)?)?;
        trace.push(interior(&nu));
    }
    let initial_multiplier = trace.get(1).map(|t1| t1 / trace[0]);
    Ok(ProbeTrace {
        p,
        alpha,
        growing: initial_multiplier.is_some_and(|h| h > 1.0),
        initial_multiplier,
        interior_mass: trace,
    })
}

/// Lévy distance from `ν` to `ν_p*` on `[m, M]`: the least `ε` with
/// `F(x) ≤ p + ε` for `x < M − ε` and `p − ε ≤ F(x)` for `x ≥ m + ε`.
pub fn levy_distance_to_two_point(nu: &SpectralMeasure, p: f64, m: f64, big_m: f64) -> f64 {
    let ok = |eps: f64| -> bool {
        let below = nu.mass_below(big_m - eps);
        let at = nu.cdf(m + eps);
        below <= p + eps && at >= p - eps
    };
    if ok(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
