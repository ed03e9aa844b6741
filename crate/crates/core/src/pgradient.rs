//! The P-gradient family of algorithms.
//!
//! Each member is selected by a Laurent polynomial `P(a) = Σ c_k a^k`,
//! positive on the spectrum. The step length `γ_k` minimizes
//! `(P(A) g_{k+1}, g_{k+1})` along `−g_k`:
//!
//! ```text
//! γ_k = (P(A) A g_k, g_k) / (P(A) A² g_k, g_k)
//! ```
//!
//! `P(A) = A^{-1}` is steepest descent and `P(A) = I` is minimal residues.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadratic::{dot, norm, QuadraticProblem, Spectrum};
use crate::renorm::{self, Diagnostics, MomentVector};

/// Number of grid points used to check positivity of `P` on `[m, M]`.
pub const POSITIVITY_GRID: usize = 10_000;

/// Growth of `‖x − x*‖` beyond this factor ends a run as diverged.
const DIVERGENCE_LOG_GROWTH: f64 = 460.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PSpecLabel {
    SteepestDescent,
    MinimalResidues,
    PowerQ(i32),
    Custom,
}

impl fmt::Display for PSpecLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PSpecLabel::SteepestDescent => f.write_str("steepest_descent"),
            PSpecLabel::MinimalResidues => f.write_str("minimal_residues"),
            PSpecLabel::PowerQ(q) => write!(f, "power:{q}"),
            PSpecLabel::Custom => f.write_str("custom"),
        }
    }
}

impl FromStr for PSpecLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "steepest_descent" | "steepest" | "sd" => Ok(PSpecLabel::SteepestDescent),
            "minimal_residues" | "residues" | "mr" => Ok(PSpecLabel::MinimalResidues),
            "custom" => Ok(PSpecLabel::Custom),
            _ => {
                let q = s
                    .strip_prefix("power:")
                    .ok_or_else(|| invalid(format!("unknown P label '{s}'")))?;
                q.trim()
                    .parse::<i32>()
                    .map(PSpecLabel::PowerQ)
                    .map_err(|_| invalid(format!("bad exponent in '{s}'")))
            }
        }
    }
}

/// Finitely supported Laurent polynomial `P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PSpecRepr", into = "PSpecRepr")]
pub struct PSpec {
    coefficients: BTreeMap<i32, f64>,
    label: PSpecLabel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PSpecRepr {
    label: String,
    #[serde(default)]
    coefficients: BTreeMap<String, f64>,
}

impl TryFrom<PSpecRepr> for PSpec {
    type Error = Error;

    fn try_from(repr: PSpecRepr) -> Result<Self> {
        let label: PSpecLabel = repr.label.parse()?;
        let mut coefficients = BTreeMap::new();
        for (k, c) in repr.coefficients {
            let k: i32 = k
                .trim()
                .parse()
                .map_err(|_| invalid(format!("bad exponent key '{k}'")))?;
            coefficients.insert(k, c);
        }
        match label {
            PSpecLabel::Custom => PSpec::custom(coefficients),
            family => {
                let canonical = PSpec::from_label(family)?;
                if !coefficients.is_empty() && coefficients != canonical.coefficients {
                    return Err(invalid(format!(
                        "coefficients do not match label '{family}'"
                    )));
                }
                Ok(canonical)
            }
        }
    }
}

impl From<PSpec> for PSpecRepr {
    fn from(p: PSpec) -> Self {
        PSpecRepr {
            label: p.label.to_string(),
            coefficients: p
                .coefficients
                .iter()
                .map(|(k, c)| (k.to_string(), *c))
                .collect(),
        }
    }
}

impl FromStr for PSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PSpec::from_label(s.parse()?)
    }
}

impl PSpec {
    pub fn steepest_descent() -> Self {
        Self::single(-1, PSpecLabel::SteepestDescent)
    }

    pub fn minimal_residues() -> Self {
        Self::single(0, PSpecLabel::MinimalResidues)
    }

    /// `P(A) = A^q`.
    pub fn power(q: i32) -> Self {
        Self::single(q, PSpecLabel::PowerQ(q))
    }

    fn single(k: i32, label: PSpecLabel) -> Self {
        Self {
            coefficients: BTreeMap::from([(k, 1.0)]),
            label,
        }
    }

    pub fn from_label(label: PSpecLabel) -> Result<Self> {
        match label {
            PSpecLabel::SteepestDescent => Ok(Self::steepest_descent()),
            PSpecLabel::MinimalResidues => Ok(Self::minimal_residues()),
            PSpecLabel::PowerQ(q) => Ok(Self::power(q)),
            PSpecLabel::Custom => Err(invalid("custom P needs explicit coefficients")),
        }
    }

    /// Arbitrary coefficient table; zero entries are dropped.
    pub fn custom(coefficients: BTreeMap<i32, f64>) -> Result<Self> {
        if coefficients.values().any(|c| !c.is_finite()) {
            return Err(invalid("P coefficients must be finite"));
        }
        let coefficients: BTreeMap<i32, f64> =
            coefficients.into_iter().filter(|(_, c)| *c != 0.0).collect();
        if coefficients.is_empty() {
            return Err(invalid("P needs at least one nonzero coefficient"));
        }
        Ok(Self {
            coefficients,
            label: PSpecLabel::Custom,
        })
    }

    pub fn label(&self) -> PSpecLabel {
        self.label
    }

    pub fn coefficients(&self) -> &BTreeMap<i32, f64> {
        &self.coefficients
    }

    pub fn min_exponent(&self) -> i32 {
        *self.coefficients.keys().next().unwrap()
    }

    pub fn max_exponent(&self) -> i32 {
        *self.coefficients.keys().next_back().unwrap()
    }

    pub fn eval(&self, a: f64) -> f64 {
        self.coefficients.iter().map(|(&k, &c)| c * a.powi(k)).sum()
    }

    /// Checks `0 < P(a) < ∞` on a uniform grid of `[m, M]` and at every
    /// eigenvalue.
    pub fn validate_on(&self, spectrum: &Spectrum) -> Result<()> {
        let (m, big_m) = (spectrum.lower(), spectrum.upper());
        let n = POSITIVITY_GRID;
        let grid = (0..n).map(|i| m + (big_m - m) * i as f64 / (n - 1) as f64);
        for a in grid.chain(spectrum.eigenvalues().iter().copied()) {
            let value = self.eval(a);
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositivePolynomial { at: a, value });
            }
        }
        Ok(())
    }

    /// Coefficients divided by the largest magnitude. Every quantity the
    /// iteration uses is invariant under positive scaling of `P`, and this
    /// makes `P` and `αP` evaluate identically for single-term tables.
    pub fn normalized(&self) -> Self {
        let top = self.coefficients.values().fold(0.0_f64, |a, c| a.max(c.abs()));
        Self {
            coefficients: self.coefficients.iter().map(|(&k, &c)| (k, c / top)).collect(),
            label: self.label,
        }
    }

    /// `α P` for `α > 0`; the result is labeled custom unless `α = 1`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("scale factor must be positive, got {alpha}")));
        }
        if alpha == 1.0 {
            return Ok(self.clone());
        }
        Ok(Self {
            coefficients: self.coefficients.iter().map(|(&k, &c)| (k, alpha * c)).collect(),
            label: PSpecLabel::Custom,
        })
    }
}

impl fmt::Display for PSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_iters: usize,
    /// Stop once `‖g_k‖` falls below this; `0` disables the test.
    pub gradient_stop: f64,
    pub relaxation: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            gradient_stop: 0.0,
            relaxation: 1.0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn with_max_iters(max_iters: usize) -> Self {
        Self {
            max_iters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(invalid("max_iters must be at least 1"));
        }
        if !(self.gradient_stop >= 0.0) {
            return Err(invalid("gradient_stop must be nonnegative"));
        }
        if !(self.relaxation > 0.0 && self.relaxation.is_finite()) {
            return Err(invalid("relaxation must be positive and finite"));
        }
        Ok(())
    }

    /// Relaxation of 2 or more can make the iteration diverge.
    pub fn relaxation_flagged(&self) -> bool {
        self.relaxation >= 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    GradientTolerance,
    /// The iterate reached `x*` exactly.
    FiniteConvergence,
    Diverged { step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    /// `g_k / ‖g_k‖`, exact even when `g_k` itself underflows.
    pub grad_direction: Vec<f64>,
    pub log_grad_norm: f64,
    /// Unrelaxed optimal step length.
    pub gamma: f64,
    /// Step actually taken, `relaxation · γ_k`.
    pub step: f64,
    pub objective: f64,
    /// Renormalized gradient coordinates `z_k`.
    pub z: Vec<f64>,
    pub moments: MomentVector,
    pub diagnostics: Diagnostics,
    /// Measured `(P g_{k+1}, g_{k+1}) / (P g_k, g_k)`.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepRecord>,
    pub final_x: Vec<f64>,
    pub final_g: Vec<f64>,
    pub final_grad_direction: Vec<f64>,
    pub final_log_grad_norm: f64,
    pub termination: Termination,
    pub relaxation_flagged: bool,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn gammas(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.gamma)
    }

    /// `(log ‖g_k‖, g_k/‖g_k‖)` for `k = 0..=n`, including the final gradient.
    pub fn gradient_samples(&self) -> Vec<crate::rates::GradientSample> {
        use crate::rates::GradientSample;
        let mut out: Vec<GradientSample> = self
            .steps
            .iter()
            .map(|s| GradientSample::new(s.log_grad_norm, s.grad_direction.clone()))
            .collect();
        if self.final_log_grad_norm.is_finite() || self.termination == Termination::FiniteConvergence {
            out.push(GradientSample::new(
                self.final_log_grad_norm,
                self.final_grad_direction.clone(),
            ));
        }
        out
    }
}

/// `γ = (P(A) A g, g) / (P(A) A² g, g)`.
pub fn step_length(problem: &QuadraticProblem, pspec: &PSpec, g: &[f64]) -> Result<f64> {
    problem.spectrum().check_dim(g.len())?;
    let scale = g.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::ZeroGradient);
    }
    let (num, den) = gamma_sums(problem.eigenvalues(), &pspec.normalized(), g, scale);
    let gamma = num / den;
    if !gamma.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(gamma)
}

fn gamma_sums(lambdas: &[f64], pspec: &PSpec, g: &[f64], scale: f64) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&l, &gi) in lambdas.iter().zip(g) {
        let w = pspec.eval(l) * l * (gi / scale).powi(2);
        num += w;
        den += w * l;
    }
    (num, den)
}

/// Runs `x_{k+1} = x_k − (relaxation · γ_k) g_k` from `x0`.
///
/// Internally the error `x − x*` is carried as a unit-scaled vector times
/// `exp(log_scale)`, so long runs neither underflow nor lose the direction.
pub fn iterate(
    problem: &QuadraticProblem,
    pspec: &PSpec,
    x0: &[f64],
    config: &RunConfig,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    pspec.validate_on(problem.spectrum())?;
    problem.spectrum().check_dim(x0.len())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    let pspec = &pspec.normalized();
    let lambdas = problem.eigenvalues();
    let x_star = problem.x_star();
    let d = lambdas.len();
    let weights: Vec<f64> = lambdas.iter().map(|&l| pspec.eval(l)).collect();

    let mut e: Vec<f64> = x0.iter().zip(x_star).map(|(x, s)| x - s).collect();
    let mut log_scale = 0.0;
    let mut steps = Vec::new();
    let relax = config.relaxation;
    let log_stop = if config.gradient_stop > 0.0 {
        config.gradient_stop.ln()
    } else {
        f64::NEG_INFINITY
    };

    let mut termination = Termination::MaxIterations;
    let mut exact = rescale(&mut e, &mut log_scale);
    if exact {
        termination = Termination::FiniteConvergence;
    }
    let initial_log_scale = log_scale;

    let mut k = 0;
    while !exact && k < config.max_iters {
        let g_dir: Vec<f64> = lambdas.iter().zip(&e).map(|(l, v)| l * v).collect();
        let g_norm = norm(&g_dir);
        let log_grad_norm = log_scale + g_norm.ln();
        if log_grad_norm < log_stop {
            termination = Termination::GradientTolerance;
            break;
        }
        let grad_direction: Vec<f64> = g_dir.iter().map(|v| v / g_norm).collect();

        let nu = renorm::renormalize_gradient(problem.spectrum(), pspec, &grad_direction)?;
        let moments = nu.moments();
        let diagnostics = renorm::diagnostics(&nu);
        let z = amplitudes(lambdas, &weights, &grad_direction);

        let (num, den) = gamma_sums(lambdas, pspec, &grad_direction, 1.0);
        let gamma = num / den;
        let step = relax * gamma;

        let crit_before: f64 = weights.iter().zip(&grad_direction).map(|(w, v)| w * v * v).sum();
        // 1 − γλ_i = (μ_1 − λ_i)/μ_1, with λ_i − μ_1 formed without cancellation
        let u: Vec<f64> = weights
            .iter()
            .zip(lambdas)
            .zip(&grad_direction)
            .map(|((w, l), v)| w * l * v * v)
            .collect();
        let dev = renorm::deviations(lambdas, &u);
        let e_next: Vec<f64> = e
            .iter()
            .zip(&dev)
            .map(|(v, dv)| v * ((1.0 - relax) - relax * gamma * dv))
            .collect();
        let point_mass = relax == 1.0 && nu.is_point_mass();
        let reached = point_mass || e_next.iter().all(|v| *v == 0.0);
        let rate = if reached {
            0.0
        } else {
            let crit_after: f64 = weights
                .iter()
                .zip(lambdas)
                .zip(&e_next)
                .map(|((w, l), v)| w * (l * v / g_norm).powi(2))
                .sum();
            crit_after / crit_before
        };

        let scale = log_scale.exp();
        let record = StepRecord {
            k,
            x: x_star.iter().zip(&e).map(|(s, v)| s + scale * v).collect(),
            g: g_dir.iter().map(|v| scale * v).collect(),
            grad_direction,
            log_grad_norm,
            gamma,
            step,
            objective: problem.optimal_value()
                + 0.5 * lambdas.iter().zip(&e).map(|(l, v)| l * (scale * v).powi(2)).sum::<f64>(),
            z,
            moments,
            diagnostics,
            rate,
        };
        if !(record.gamma.is_finite() && record.rate.is_finite() && record.log_grad_norm.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        steps.push(record);
        k += 1;

        if reached {
            e = vec![0.0; d];
            exact = true;
            termination = Termination::FiniteConvergence;
            break;
        }
        e = e_next;
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        exact = rescale(&mut e, &mut log_scale);
        if exact {
            termination = Termination::FiniteConvergence;
            break;
        }
        if log_scale - initial_log_scale > DIVERGENCE_LOG_GROWTH {
            termination = Termination::Diverged { step: k };
            break;
        }
    }

    let scale = log_scale.exp();
    let g_final: Vec<f64> = lambdas.iter().zip(&e).map(|(l, v)| l * v).collect();
    let g_norm = norm(&g_final);
    let (final_log_grad_norm, final_grad_direction) = if exact || g_norm == 0.0 {
        (f64::NEG_INFINITY, vec![0.0; d])
    } else {
        (log_scale + g_norm.ln(), g_final.iter().map(|v| v / g_norm).collect())
    };
    if let Termination::Diverged { step } = termination {
        log::warn!("P-gradient run diverged at step {step} (relaxation {relax})");
    }
    Ok(TrajectoryRecord {
        steps,
        final_x: x_star.iter().zip(&e).map(|(s, v)| s + scale * v).collect(),
        final_g: g_final.iter().map(|v| scale * v).collect(),
        final_grad_direction,
        final_log_grad_norm,
        termination,
        relaxation_flagged: config.relaxation_flagged(),
    })
}

/// Divides `e` by its largest magnitude and adds the log of that factor to
/// `log_scale`. Returns `true` if `e` is identically zero.
fn rescale(e: &mut [f64], log_scale: &mut f64) -> bool {
    let c = e.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if c == 0.0 {
        return true;
    }
    for v in e.iter_mut() {
        *v /= c;
    }
    *log_scale += c.ln();
    false
}

fn amplitudes(lambdas: &[f64], weights: &[f64], g: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = lambdas
        .iter()
        .zip(weights)
        .zip(g)
        .map(|((l, w), v)| (w * l).sqrt() * v)
        .collect();
    let n = norm(&raw);
    raw.into_iter().map(|v| v / n).collect()
}

/// `(A^n g, g)` for `n = 0..=n_max`, recovered from gradient evaluations only.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProductEstimate {
    pub values: Vec<f64>,
    /// Total oracle calls, including `g(x)`.
    pub oracle_calls: usize,
}

/// Recovers `(A^n g, g)` from the gradients along `x^{(i+1)} = x^{(i)} − β g(x^{(i)})`.
///
/// With `g^{(i)} = (I − βA)^i g`, the products
/// `P_{2j} = (g^{(j)}, g^{(j)})` and `P_{2j+1} = (g^{(j+1)}, g^{(j)})` equal
/// `((I − βA)^n g, g)`, so `P = Q G` with `Q_{ij} = C(i, j) (−β)^j` lower
/// triangular. This needs `⌈n_max/2⌉` gradients beyond `g(x)`.
pub fn estimate_inner_products<F>(mut oracle: F, x: &[f64], n_max: usize, beta: f64) -> Result<InnerProductEstimate>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta must be positive, got {beta}")));
    }
    let extra = n_max.div_ceil(2);
    let mut point = x.to_vec();
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(extra + 1);
    grads.push(oracle(&point));
    for _ in 0..extra {
        let last = grads.last().unwrap();
        if last.len() != point.len() {
            return Err(Error::DimensionMismatch {
                expected: point.len(),
                got: last.len(),
            });
        }
        for (p, gi) in point.iter_mut().zip(last) {
            *p -= beta * gi;
        }
        grads.push(oracle(&point));
    }
    if let Some(bad) = grads.iter().find(|g| g.len() != x.len()) {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: bad.len(),
        });
    }
    let products: Vec<f64> = (0..=n_max)
        .map(|n| {
            let j = n / 2;
            if n % 2 == 0 {
                dot(&grads[j], &grads[j])
            } else {
                dot(&grads[j + 1], &grads[j])
            }
        })
        .collect();

    // forward substitution with Q_{nn} = (−β)^n
    let mut values: Vec<f64> = Vec::with_capacity(n_max + 1);
    for (n, &product) in products.iter().enumerate() {
        let mut acc = product;
        let mut binom = 1.0;
        for (j, g) in values.iter().enumerate() {
            acc -= binom * (-beta).powi(j as i32) * g;
            binom = binom * (n - j) as f64 / (j + 1) as f64;
        }
        let value = acc / (-beta).powi(n as i32);
        if !value.is_finite() {
            return Err(Error::IllConditioned(format!(
                "(A^{n} g, g) overflowed for beta = {beta}"
            )));
        }
        values.push(value);
    }
    Ok(InnerProductEstimate {
        values,
        oracle_calls: extra + 1,
    })
}

/// Step length computed from gradient evaluations only.
///
/// Needs `P` with no exponent below `−1`. Returns `γ` together with the
/// estimate that produced it.
pub fn oracle_step_length<F>(oracle: F, x: &[f64], pspec: &PSpec, beta: f64) -> Result<(f64, InnerProductEstimate)>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if pspec.min_exponent() < -1 {
        return Err(invalid(
            "gradient-only step length needs exponents of P at least -1",
        ));
    }
    let n_max = (pspec.max_exponent() + 2) as usize;
    let est = estimate_inner_products(oracle, x, n_max, beta)?;
    let g = &est.values;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&k, &c) in pspec.coefficients() {
        num += c * g[(k + 1) as usize];
        den += c * g[(k + 2) as usize];
    }
    if num == 0.0 {
        return Err(Error::ZeroGradient);
    }
    Ok((num / den, est))
}

/// Result of [`iterate_with_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub points: Vec<Vec<f64>>,
    pub gammas: Vec<f64>,
    pub oracle_calls: usize,
}

/// P-gradient iteration driven by a gradient oracle, using the previous step
/// length as `β` for the next estimate.
pub fn iterate_with_oracle<F>(
    mut oracle: F,
    x0: &[f64],
    pspec: &PSpec,
    n_steps: usize,
    initial_beta: f64,
) -> Result<OracleRun>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut run = OracleRun {
        points: vec![x0.to_vec()],
        gammas: Vec::new(),
        oracle_calls: 0,
    };
    let mut beta = initial_beta;
    for _ in 0..n_steps {
        let x = run.points.last().unwrap().clone();
        let mut g0 = None;
        let wrapped = |p: &[f64]| {
            let g = oracle(p);
            if g0.is_none() {
                g0 = Some(g.clone());
            }
            g
        };
        let (gamma, est) = match oracle_step_length(wrapped, &x, pspec, beta) {
            Ok(v) => v,
            Err(Error::ZeroGradient) => break,
            Err(e) => return Err(e),
        };
        run.oracle_calls += est.oracle_calls;
        let g = g0.expect("oracle called at least once");
        run.points
            .push(x.iter().zip(&g).map(|(xi, gi)| xi - gamma * gi).collect());
        run.gammas.push(gamma);
        beta = gamma;
    }
    Ok(run)
}

/// Gradient evaluations per iteration for `P(A) = A^q`: `⌈q/2⌉ + 2` for
/// `q ≥ 0`.
///
/// For steepest descent (`q = −1`) one gradient suffices when `(Ag, g)` is
/// taken from an objective evaluation, so `1` is returned; the gradient-only
/// construction of [`oracle_step_length`] needs two.
pub fn gradient_eval_count(q: i32) -> Option<usize> {
    match q {
        q if q < -1 => None,
        -1 => Some(1),
        q => Some((q as usize).div_ceil(2) + 2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag12() -> QuadraticProblem {
        QuadraticProblem::from_eigenvalues(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn step_length_examples() {
        let p = diag12();
        let g = [1.0, 1.0];
        assert!(close(step_length(&p, &PSpec::steepest_descent(), &g).unwrap(), 2.0 / 3.0, 1e-15));
        assert!(close(step_length(&p, &PSpec::minimal_residues(), &g).unwrap(), 0.6, 1e-15));
        for pspec in [PSpec::steepest_descent(), PSpec::minimal_residues(), PSpec::power(3)] {
            assert_eq!(step_length(&p, &pspec, &[0.0, 5.0]).unwrap(), 0.5);
        }
        assert!(matches!(
            step_length(&p, &PSpec::steepest_descent(), &[0.0, 0.0]),
            Err(Error::ZeroGradient)
        ));
        assert!(step_length(&p, &PSpec::steepest_descent(), &[1.0]).is_err());
    }

    #[test]
    fn steepest_descent_hand_iteration() {
        // x0 = (1, 1) gives g0 = (1, 2), so γ0 = 5/9
        let p = diag12();
        let rec = iterate(&p, &PSpec::steepest_descent(), &[1.0, 1.0], &RunConfig::with_max_iters(1)).unwrap();
        let s = &rec.steps[0];
        assert!(close(s.gamma, 5.0 / 9.0, 1e-15));
        assert!(close(rec.final_x[0], 4.0 / 9.0, 1e-15));
        assert!(close(rec.final_x[1], -1.0 / 9.0, 1e-15));
        assert!(close(rec.final_g[0], 4.0 / 9.0, 1e-15));
        assert!(close(rec.final_g[1], -2.0 / 9.0, 1e-15));

        // gradient (1, 1) reproduces γ0 = 2/3 and x1 = (1/3, −1/6)
        let rec = iterate(&p, &PSpec::steepest_descent(), &[1.0, 0.5], &RunConfig::with_max_iters(1)).unwrap();
        assert!(close(rec.steps[0].gamma, 2.0 / 3.0, 1e-15));
        assert!(close(rec.final_x[0], 1.0 / 3.0, 1e-15));
        assert!(close(rec.final_x[1], -1.0 / 6.0, 1e-15));
    }

    #[test]
    fn single_eigendirection_converges_in_one_step() {
        let p = QuadraticProblem::from_eigenvalues(vec![1.0, 4.0, 10.0], vec![1.0, 2.0, 3.0]).unwrap();
        for pspec in [PSpec::steepest_descent(), PSpec::minimal_residues(), PSpec::power(2)] {
            let rec = iterate(&p, &pspec, &[5.0, 2.0, 3.0], &RunConfig::default()).unwrap();
            assert_eq!(rec.termination, Termination::FiniteConvergence);
            assert_eq!(rec.len(), 1);
            assert_eq!(rec.steps[0].gamma, 1.0);
            assert_eq!(rec.steps[0].rate, 0.0);
            assert_eq!(rec.final_x, vec![1.0, 2.0, 3.0]);
            assert_eq!(rec.final_log_grad_norm, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn start_at_minimizer() {
        let p = diag12();
        let rec = iterate(&p, &PSpec::steepest_descent(), &[0.0, 0.0], &RunConfig::default()).unwrap();
        assert!(rec.is_empty());
        assert_eq!(rec.termination, Termination::FiniteConvergence);
    }

    #[test]
    fn gradient_stop_and_config_validation() {
        let p = QuadraticProblem::from_eigenvalues(vec![1.0, 3.0, 7.0], vec![0.0; 3]).unwrap();
        let cfg = RunConfig {
            gradient_stop: 1e-6,
            ..RunConfig::default()
        };
        let rec = iterate(&p, &PSpec::steepest_descent(), &[1.0, 1.0, 1.0], &cfg).unwrap();
        assert_eq!(rec.termination, Termination::GradientTolerance);
        assert!(rec.final_log_grad_norm < 1e-6_f64.ln());

        let bad = RunConfig {
            max_iters: 0,
            ..RunConfig::default()
        };
        assert!(iterate(&p, &PSpec::steepest_descent(), &[1.0; 3], &bad).is_err());
        let bad = RunConfig {
            relaxation: 0.0,
            ..RunConfig::default()
        };
        assert!(iterate(&p, &PSpec::steepest_descent(), &[1.0; 3], &bad).is_err());
    }

    #[test]
    fn large_relaxation_is_flagged_and_can_diverge() {
        let p = QuadraticProblem::from_eigenvalues(vec![1.0, 3.0, 7.0], vec![0.0; 3]).unwrap();
        let cfg = RunConfig {
            relaxation: 3.0,
            max_iters: 10_000,
            ..RunConfig::default()
        };
        let rec = iterate(&p, &PSpec::steepest_descent(), &[1.0, 1.0, 1.0], &cfg).unwrap();
        assert!(rec.relaxation_flagged);
        assert!(matches!(rec.termination, Termination::Diverged { .. }));
    }

    #[test]
    fn non_positive_polynomial_rejected() {
        let p = diag12();
        let bad = PSpec::custom(BTreeMap::from([(0, 1.0), (1, -0.75)])).unwrap();
        assert!(matches!(
            bad.validate_on(p.spectrum()),
            Err(Error::NonPositivePolynomial { .. })
        ));
        assert!(iterate(&p, &bad, &[1.0, 1.0], &RunConfig::default()).is_err());
        assert!(PSpec::custom(BTreeMap::new()).is_err());
        assert!(PSpec::custom(BTreeMap::from([(0, f64::NAN)])).is_err());
    }

    #[test]
    fn pspec_parsing_and_serde() {
        assert_eq!("sd".parse::<PSpec>().unwrap(), PSpec::steepest_descent());
        assert_eq!("minimal_residues".parse::<PSpec>().unwrap(), PSpec::minimal_residues());
        assert_eq!("power:2".parse::<PSpec>().unwrap(), PSpec::power(2));
        assert!("power:x".parse::<PSpec>().is_err());
        assert!("custom".parse::<PSpec>().is_err());

        let mixed = PSpec::custom(BTreeMap::from([(-1, 0.5), (1, 2.0)])).unwrap();
        let json = serde_json::to_string(&mixed).unwrap();
        assert_eq!(json, r#"{"label":"custom","coefficients":{"-1":0.5,"1":2.0}}"#);
        assert_eq!(serde_json::from_str::<PSpec>(&json).unwrap(), mixed);

        let sd: PSpec = serde_json::from_str(r#"{"label":"steepest_descent"}"#).unwrap();
        assert_eq!(sd, PSpec::steepest_descent());
        assert!(serde_json::from_str::<PSpec>(r#"{"label":"power:2","coefficients":{"1":1.0}}"#).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let p = diag12();
        let oracle = |x: &[f64]| p.gradient(x).unwrap();
        // x = (1, 0.5) has gradient (1, 1)
        let est = estimate_inner_products(oracle, &[1.0, 0.5], 2, 1.0).unwrap();
        assert_eq!(est.values, vec![2.0, 3.0, 5.0]);
        assert_eq!(est.oracle_calls, 2);

        let est = estimate_inner_products(oracle, &[1.0, 0.5], 0, 1.0).unwrap();
        assert_eq!(est.values, vec![2.0]);
        assert_eq!(est.oracle_calls, 1);

        let est = estimate_inner_products(oracle, &[1.0, 0.5], 1, 0.5).unwrap();
        assert!(close(est.values[1], 3.0, 1e-15));

        assert!(estimate_inner_products(oracle, &[1.0, 0.5], 2, 0.0).is_err());
        assert!(matches!(
            estimate_inner_products(oracle, &[1.0, 0.5], 60, 1e300),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn oracle_calls_per_power() {
        let p = QuadraticProblem::from_eigenvalues(vec![1.0, 2.5, 4.0, 9.0], vec![0.0; 4]).unwrap();
        let x = [1.0, -0.5, 0.25, 0.1];
        for q in 0..=5 {
            let mut calls = 0;
            let oracle = |v: &[f64]| {
                calls += 1;
                p.gradient(v).unwrap()
            };
            let (gamma, est) = oracle_step_length(oracle, &x, &PSpec::power(q), 0.1).unwrap();
            assert_eq!(calls, est.oracle_calls);
            assert_eq!(Some(calls), gradient_eval_count(q));
            let g = p.gradient(&x).unwrap();
            let direct = step_length(&p, &PSpec::power(q), &g).unwrap();
            assert!(close(gamma, direct, 1e-9), "q={q}");
        }
    }

    #[test]
    fn eval_count_table() {
        assert_eq!(gradient_eval_count(0), Some(2));
        assert_eq!(gradient_eval_count(2), Some(3));
        assert_eq!(gradient_eval_count(5), Some(5));
        assert_eq!(gradient_eval_count(-1), Some(1));
        assert_eq!(gradient_eval_count(-2), None);
    }

    #[test]
    fn oracle_driven_iteration_matches_direct() {
        let p = QuadraticProblem::from_eigenvalues(vec![1.0, 2.0, 5.0], vec![0.3, 0.0, -1.0]).unwrap();
        let x0 = [2.0, 1.0, 1.0];
        let run = iterate_with_oracle(|v| p.gradient(v).unwrap(), &x0, &PSpec::minimal_residues(), 8, 0.2).unwrap();
        let rec = iterate(&p, &PSpec::minimal_residues(), &x0, &RunConfig::with_max_iters(8)).unwrap();
        for (a, b) in run.gammas.iter().zip(rec.gammas()) {
            assert!(close(*a, b, 1e-8));
        }
        assert_eq!(run.oracle_calls, 8 * 2);
    }

    #[test]
    fn d2_rate_constant_and_relaxation_changes_it() {
        let p = QuadraticProblem::from_eigenvalues(vec![1.0, 6.0], vec![0.0, 0.0]).unwrap();
        let rec = iterate(&p, &PSpec::steepest_descent(), &[1.0, 0.7], &RunConfig::with_max_iters(50)).unwrap();
        let r0 = rec.steps[0].diagnostics.r;
        assert!(rec.steps.iter().all(|s| (s.diagnostics.r - r0).abs() <= 1e-12));
        assert!(rec.steps.iter().all(|s| (s.rate - r0).abs() <= 1e-12));

        let cfg = RunConfig {
            relaxation: 0.9,
            max_iters: 50,
            ..RunConfig::default()
        };
        let relaxed = iterate(&p, &PSpec::steepest_descent(), &[1.0, 0.7], &cfg).unwrap();
        assert!((relaxed.steps[10].rate - r0).abs() > 1e-3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn problem(max_d: usize) -> impl Strategy<Value = (QuadraticProblem, Vec<f64>)> {
            (2usize..=max_d, 1.5f64..100.0)
                .prop_flat_map(|(d, rho)| {
                    (
                        proptest::collection::vec(0.0f64..1.0, d - 2),
                        proptest::collection::vec(-1.0f64..1.0, d),
                        proptest::collection::vec(-1.0f64..1.0, d),
                        Just(rho),
                    )
                })
                .prop_map(|(inner, xs, x0, rho)| {
                    let mut eig = vec![1.0, rho];
                    eig.extend(inner.iter().map(|t| 1.0 + t * (rho - 1.0)));
                    eig.sort_by(f64::total_cmp);
                    let p = QuadraticProblem::from_eigenvalues(eig, xs).unwrap();
                    (p, x0)
                })
        }

        fn pspec() -> impl Strategy<Value = PSpec> {
            (-1i32..=2).prop_map(PSpec::power)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn scale_invariance((p, x0) in problem(8), ps in pspec(), alpha in 0.01f64..100.0) {
                let cfg = RunConfig::with_max_iters(40);
                let a = iterate(&p, &ps, &x0, &cfg).unwrap();
                let b = iterate(&p, &ps.scaled(alpha).unwrap(), &x0, &cfg).unwrap();
                prop_assert_eq!(a.len(), b.len());
                for (ga, gb) in a.gammas().zip(b.gammas()) {
                    prop_assert!((ga - gb).abs() <= 1e-14 * ga);
                }
            }

            #[test]
            fn kantorovich_step_and_monotone_criterion((p, x0) in problem(10), ps in pspec()) {
                let rec = iterate(&p, &ps, &x0, &RunConfig::with_max_iters(100)).unwrap();
                let (m, big_m) = (p.spectrum().lower(), p.spectrum().upper());
                for s in &rec.steps {
                    prop_assert!(s.gamma >= 1.0 / big_m - 1e-12 && s.gamma <= 1.0 / m + 1e-12);
                    prop_assert!(s.rate <= 1.0);
                }
                for w in rec.steps.windows(2) {
                    prop_assert!(w[1].diagnostics.r >= w[0].diagnostics.r - 1e-12);
                }
            }

            #[test]
            fn oracle_matches_direct((p, x0) in problem(10)) {
                let g = p.gradient(&x0).unwrap();
                prop_assume!(norm(&g) > 1e-6);
                let beta = 1.0 / p.spectrum().upper();
                let est = estimate_inner_products(|v| p.gradient(v).unwrap(), &x0, 4, beta).unwrap();
                for n in 0..=4 {
                    let direct = p.power_inner(&g, n as i32).unwrap();
                    prop_assert!((est.values[n] - direct).abs() <= 1e-8 * direct, "n={}", n);
                }
            }

            #[test]
            fn measure_dynamics_matches_iteration((p, x0) in problem(8), ps in pspec()) {
                let rec = iterate(&p, &ps, &x0, &RunConfig::with_max_iters(30)).unwrap();
                prop_assume!(!rec.is_empty());
                let nu0 = renorm::renormalize_gradient(p.spectrum(), &ps, &rec.steps[0].grad_direction).unwrap();
                let orbit = renorm::orbit(&nu0, rec.len() - 1);
                for (s, nu) in rec.steps.iter().zip(&orbit) {
                    let mu = nu.moments();
                    for j in -1..=4 {
                        let (a, b) = (s.moments.get(j), mu.get(j));
                        prop_assert!((a - b).abs() <= 1e-10 * b.abs(), "k={} j={}", s.k, j);
                    }
                }
            }

            #[test]
            fn variance_is_x_space_ratio((p, x0) in problem(8), ps in pspec()) {
                let rec = iterate(&p, &ps, &x0, &RunConfig::with_max_iters(20)).unwrap();
                let lambdas = p.eigenvalues();
                let pag = |g: &[f64]| -> f64 {
                    lambdas.iter().zip(g).map(|(l, v)| ps.eval(*l) * l * v * v).sum()
                };
                for w in rec.steps.windows(2) {
                    let (a, b) = (&w[0], &w[1]);
                    // g_{k+1} = ‖g_{k+1}‖/‖g_k‖ · direction, in log space
                    let ratio = (2.0 * (b.log_grad_norm - a.log_grad_norm)).exp()
                        * pag(&b.grad_direction) / (a.gamma * a.gamma * pag(&a.grad_direction));
                    let dk = a.diagnostics.d;
                    prop_assert!((ratio - dk).abs() <= 1e-10 * dk, "k={} {} vs {}", a.k, ratio, dk);
                }
            }
        }
    }
}
