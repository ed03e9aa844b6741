//! Renormalized gradient dynamics on spectral measures.
//!
//! A gradient `g` is mapped to the unit vector `z = B g / ‖B g‖` with
//! `B = [P(A) A]^{1/2}`. The squared coordinates of `z` form a probability
//! measure on the spectrum, and one P-gradient step acts on that measure as
//! the transformation `T`:
//!
//! ```text
//! ν'(dλ) = (λ − μ_1)² / D · ν(dλ),    D = μ_2 − μ_1²
//! ```
//!
//! which no longer depends on `P`. The moment recursion, the monotone
//! sequences `L = μ_1 μ_{-1}` and `D`, and the moment-matrix determinants are
//! computed here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgradient::PSpec;
use crate::quadratic::{QuadraticProblem, Spectrum};

/// Masses below this are treated as having left the support.
pub const MASS_FLOOR: f64 = 1e-300;

/// Above this many supported atoms the O(n²)/O(n³) cancellation-free sums
/// are replaced by their closed moment forms.
const PAIR_SUM_LIMIT: usize = 512;
const TRIPLE_SUM_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub lambda: f64,
    pub mass: f64,
}

impl Atom {
    pub fn new(lambda: f64, mass: f64) -> Self {
        Self { lambda, mass }
    }
}

/// Probability measure with finitely many atoms on `(0, ∞)`.
///
/// Atoms are sorted by `λ` with distinct locations; zero-mass atoms are kept
/// so the measure still remembers the spectrum it lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    atoms: Vec<Atom>,
    amplitudes: Option<Vec<f64>>,
}

impl SpectralMeasure {
    /// Builds a measure from nonnegative weights, merging equal locations and
    /// normalizing the total mass to one.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        Self::build(atoms, None, false)
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(l, w)| Atom::new(l, w)).collect())
    }

    /// Measure with masses `z_i²` that also tracks the signed amplitudes `z_i`.
    ///
    /// When two amplitudes sit on the same eigenvalue they are merged into
    /// one carrying the sign of the first nonzero entry.
    pub fn from_amplitudes(lambdas: &[f64], amplitudes: &[f64]) -> Result<Self> {
        if lambdas.len() != amplitudes.len() {
            return Err(Error::DimensionMismatch {
                expected: lambdas.len(),
                got: amplitudes.len(),
            });
        }
        let atoms = lambdas
            .iter()
            .zip(amplitudes)
            .map(|(&l, &z)| Atom::new(l, z * z))
            .collect();
        Self::build(atoms, Some(amplitudes), false)
    }

    /// The two-point measure `ν_p*`: mass `p` at `m` and `1 − p` at `M`.
    pub fn two_point(p: f64, m: f64, big_m: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(crate::error::invalid(format!("p = {p} outside [0, 1]")));
        }
        if !(m < big_m) {
            return Err(crate::error::invalid(format!("need m < M, got {m}, {big_m}")));
        }
        Self::new(vec![Atom::new(m, p), Atom::new(big_m, 1.0 - p)])
    }

    fn build(mut atoms: Vec<Atom>, amplitudes: Option<&[f64]>, normalized: bool) -> Result<Self> {
        if atoms.is_empty() {
            return Err(crate::error::invalid("measure needs at least one atom"));
        }
        for a in &atoms {
            if !(a.lambda.is_finite() && a.lambda > 0.0) {
                return Err(crate::error::invalid(format!(
                    "atom location {} must be finite and positive",
                    a.lambda
                )));
            }
            if !(a.mass.is_finite() && a.mass >= 0.0) {
                return Err(crate::error::invalid(format!(
                    "atom mass {} must be finite and nonnegative",
                    a.mass
                )));
            }
        }
        let mut amps: Option<Vec<f64>> = amplitudes.map(|a| a.to_vec());
        let mut order: Vec<usize> = (0..atoms.len()).collect();
        order.sort_by(|&i, &j| atoms[i].lambda.total_cmp(&atoms[j].lambda));
        let sorted: Vec<Atom> = order.iter().map(|&i| atoms[i]).collect();
        let sorted_amps: Option<Vec<f64>> = amps.take().map(|a| order.iter().map(|&i| a[i]).collect());

        let mut merged: Vec<Atom> = Vec::with_capacity(sorted.len());
        let mut signs: Vec<f64> = Vec::with_capacity(sorted.len());
        for (idx, atom) in sorted.into_iter().enumerate() {
            let sign = sorted_amps.as_ref().map_or(1.0, |a| a[idx].signum());
            let nonzero = sorted_amps.as_ref().is_some_and(|a| a[idx] != 0.0);
            match merged.last_mut() {
                Some(last) if last.lambda == atom.lambda => {
                    if last.mass == 0.0 && nonzero {
                        *signs.last_mut().unwrap() = sign;
                    }
                    last.mass += atom.mass;
                }
                _ => {
                    merged.push(atom);
                    signs.push(if nonzero { sign } else { 1.0 });
                }
            }
        }
        atoms = merged;
        let total: f64 = atoms.iter().map(|a| a.mass).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(crate::error::invalid("measure has zero total mass"));
        }
        if !(normalized && (total - 1.0).abs() <= 1e-12) {
            for a in &mut atoms {
                a.mass /= total;
            }
        }
        let amplitudes = sorted_amps.map(|_| {
            atoms
                .iter()
                .zip(&signs)
                .map(|(a, s)| s * a.mass.sqrt())
                .collect()
        });
        Ok(Self { atoms, amplitudes })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn lambdas(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.lambda)
    }

    pub fn masses(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.mass)
    }

    fn columns(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lambdas().collect(), self.masses().collect())
    }

    pub fn amplitudes(&self) -> Option<&[f64]> {
        self.amplitudes.as_deref()
    }

    pub fn without_amplitudes(mut self) -> Self {
        self.amplitudes = None;
        self
    }

    /// Number of atoms carrying positive mass.
    pub fn support_len(&self) -> usize {
        self.atoms.iter().filter(|a| a.mass > 0.0).count()
    }

    pub fn is_point_mass(&self) -> bool {
        self.support_len() <= 1
    }

    /// Indices of the smallest and largest atoms with positive mass.
    pub fn support_extremes(&self) -> Option<(usize, usize)> {
        let lo = self.atoms.iter().position(|a| a.mass > 0.0)?;
        let hi = self.atoms.iter().rposition(|a| a.mass > 0.0)?;
        Some((lo, hi))
    }

    /// `ν([λ_min, x))`.
    pub fn mass_below(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .take_while(|a| a.lambda < x)
            .map(|a| a.mass)
            .sum()
    }

    /// Distribution function `F(x) = ν((−∞, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .take_while(|a| a.lambda <= x)
            .map(|a| a.mass)
            .sum()
    }

    /// `μ_j = ∫ λ^j dν`.
    pub fn moment(&self, j: i32) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.mass * a.lambda.powi(j))
            .sum()
    }

    pub fn moments(&self) -> MomentVector {
        moments(self)
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// `D = μ_2 − μ_1²`, evaluated as a centered sum.
    pub fn variance(&self) -> f64 {
        let (lambdas, masses) = self.columns();
        deviations(&lambdas, &masses)
            .iter()
            .zip(&masses)
            .map(|(d, w)| w * d * d)
            .sum()
    }

    /// Total-variation style distance `max_i |w_i − w'_i|` between measures on
    /// the same atoms; `None` if the atom locations differ.
    pub fn max_mass_difference(&self, other: &SpectralMeasure) -> Option<f64> {
        if self.len() != other.len() {
            return None;
        }
        let mut worst = 0.0_f64;
        for (a, b) in self.atoms.iter().zip(&other.atoms) {
            if a.lambda != b.lambda {
                return None;
            }
            worst = worst.max((a.mass - b.mass).abs());
        }
        Some(worst)
    }
}

/// `μ_j` for `j ∈ {−1, …, 4}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    values: [f64; 6],
}

impl MomentVector {
    pub const MIN_ORDER: i32 = -1;
    pub const MAX_ORDER: i32 = 4;

    /// Takes `[μ_{-1}, μ_0, …, μ_4]`.
    pub fn new(values: [f64; 6]) -> Self {
        Self { values }
    }

    pub fn get(&self, j: i32) -> f64 {
        assert!(
            (Self::MIN_ORDER..=Self::MAX_ORDER).contains(&j),
            "moment order {j} not stored"
        );
        self.values[(j + 1) as usize]
    }

    pub fn values(&self) -> &[f64; 6] {
        &self.values
    }

    /// `L = μ_1 μ_{-1}`.
    pub fn l(&self) -> f64 {
        self.get(1) * self.get(-1)
    }

    /// `D = μ_2 − μ_1²` from the stored moments.
    pub fn d(&self) -> f64 {
        self.get(2) - self.get(1).powi(2)
    }
}

/// Per-measure monotone quantities and moment-matrix determinants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `L = μ_1 μ_{-1}`.
    pub l: f64,
    /// `D = μ_2 − μ_1²`.
    pub d: f64,
    /// `det` of the Hankel matrix `[μ_{i+j-1}]_{i,j=0..2}`.
    pub det_m: f64,
    /// `det` of the Hankel matrix `[μ_{i+j}]_{i,j=0..2}`.
    pub det_n: f64,
    /// `r = 1 − 1/L`.
    pub r: f64,
}

/// Kantorovich bound `L* = (M + m)² / (4 m M)`.
pub fn l_star(m: f64, big_m: f64) -> f64 {
    (big_m + m).powi(2) / (4.0 * m * big_m)
}

/// Variance bound `D* = (M − m)² / 4`.
pub fn d_star(m: f64, big_m: f64) -> f64 {
    (big_m - m).powi(2) / 4.0
}

/// `λ_i − μ_1` for weights `w` (not necessarily normalized).
///
/// For small supports this is `Σ_j w_j (λ_i − λ_j) / Σ_j w_j`, which has no
/// cancellation at the extreme atoms even when `μ_1` sits very close to one
/// of them.
pub(crate) fn deviations(lambdas: &[f64], weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if lambdas.len() <= PAIR_SUM_LIMIT {
        lambdas
            .iter()
            .map(|li| {
                lambdas
                    .iter()
                    .zip(weights)
                    .map(|(lj, w)| w * (li - lj))
                    .sum::<f64>()
                    / total
            })
            .collect()
    } else {
        let mu1 = lambdas.iter().zip(weights).map(|(l, w)| l * w).sum::<f64>() / total;
        lambdas.iter().map(|l| l - mu1).collect()
    }
}

/// Renormalized measure `ν(x)` of the gradient at `x`.
pub fn renormalize(problem: &QuadraticProblem, pspec: &PSpec, x: &[f64]) -> Result<SpectralMeasure> {
    let g = problem.gradient(x)?;
    renormalize_gradient(problem.spectrum(), pspec, &g)
}

/// `z = B g / ‖B g‖` for a given gradient, as a measure with amplitudes.
pub fn renormalize_gradient(spectrum: &Spectrum, pspec: &PSpec, g: &[f64]) -> Result<SpectralMeasure> {
    spectrum.check_dim(g.len())?;
    let scale = g.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::ZeroGradient);
    }
    if !scale.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let pspec = pspec.normalized();
    let amps: Vec<f64> = spectrum
        .eigenvalues()
        .iter()
        .zip(g)
        .map(|(&l, &gi)| (pspec.eval(l) * l).sqrt() * (gi / scale))
        .collect();
    let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
    let amps: Vec<f64> = amps.iter().map(|a| a / norm).collect();
    SpectralMeasure::from_amplitudes(spectrum.eigenvalues(), &amps)
}

pub fn moments(measure: &SpectralMeasure) -> MomentVector {
    let mut values = [0.0; 6];
    for (slot, j) in values.iter_mut().zip(MomentVector::MIN_ORDER..=MomentVector::MAX_ORDER) {
        *slot = measure.moment(j);
    }
    MomentVector::new(values)
}

/// One application of `T`.
///
/// Fails with [`Error::DegenerateMeasure`] on a point mass, where the
/// corresponding gradient step lands exactly on the minimizer.
pub fn transform(measure: &SpectralMeasure) -> Result<SpectralMeasure> {
    if measure.is_point_mass() {
        return Err(Error::DegenerateMeasure);
    }
    let (lambdas, masses) = measure.columns();
    let dev = deviations(&lambdas, &masses);
    let mut atoms: Vec<Atom> = measure
        .atoms
        .iter()
        .zip(&dev)
        .map(|(a, d)| Atom::new(a.lambda, a.mass * d * d))
        .collect();
    let d: f64 = atoms.iter().map(|a| a.mass).sum();
    if !(d > 0.0) {
        return Err(Error::DegenerateMeasure);
    }
    for a in &mut atoms {
        a.mass /= d;
        if a.mass < MASS_FLOOR {
            a.mass = 0.0;
        }
    }
    let total: f64 = atoms.iter().map(|a| a.mass).sum();
    for a in &mut atoms {
        a.mass /= total;
    }
    let amplitudes = measure.amplitudes.as_ref().map(|old| {
        atoms
            .iter()
            .zip(old)
            .zip(&dev)
            .map(|((a, z), d)| {
                let sign = -d.signum() * z.signum();
                sign * a.mass.sqrt()
            })
            .collect()
    });
    Ok(SpectralMeasure { atoms, amplitudes })
}

/// Applies `T` up to `n_steps` times, returning `[ν_0, …, ν_n]`.
///
/// The orbit stops early (without error) if it reaches a point mass.
pub fn orbit(initial: &SpectralMeasure, n_steps: usize) -> Vec<SpectralMeasure> {
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(initial.clone());
    for _ in 0..n_steps {
        match transform(out.last().unwrap()) {
            Ok(next) => out.push(next),
            Err(_) => break,
        }
    }
    out
}

/// Moment recursion for one step of `T`:
///
/// `μ_j' = (μ_j − 2 μ_{j+1}/μ_1 + μ_{j+2}/μ_1²) / (μ_2/μ_1² − 1)`.
///
/// `mu5` and `mu6` extend the stored moments so every order up to 4 can be
/// updated.
pub fn moment_update(mu: &MomentVector, mu5: f64, mu6: f64) -> Result<MomentVector> {
    let all = |j: i32| -> f64 {
        match j {
            5 => mu5,
            6 => mu6,
            _ => mu.get(j),
        }
    };
    let mu1 = mu.get(1);
    let denom = mu.get(2) / (mu1 * mu1) - 1.0;
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::DegenerateMeasure);
    }
    let mut values = [0.0; 6];
    for (slot, j) in values.iter_mut().zip(MomentVector::MIN_ORDER..=MomentVector::MAX_ORDER) {
        *slot = (all(j) - 2.0 * all(j + 1) / mu1 + all(j + 2) / (mu1 * mu1)) / denom;
    }
    Ok(MomentVector::new(values))
}

pub fn diagnostics(measure: &SpectralMeasure) -> Diagnostics {
    let support: Vec<Atom> = measure.atoms.iter().copied().filter(|a| a.mass > 0.0).collect();
    let l = if support.len() <= PAIR_SUM_LIMIT {
        l_pairwise(&support)
    } else {
        measure.moment(1) * measure.moment(-1)
    };
    let d = measure.variance();
    let (det_m, det_n) = if support.len() <= TRIPLE_SUM_LIMIT {
        hankel_dets_expansion(&support)
    } else {
        let mu = moments(measure);
        (hankel_det_direct(&mu, -1), hankel_det_direct(&mu, 0))
    };
    Diagnostics {
        l,
        d,
        det_m,
        det_n,
        r: (1.0 - 1.0 / l).max(0.0),
    }
}

/// `L = 1 + Σ_{i<j} w_i w_j (λ_i − λ_j)² / (λ_i λ_j)` (Lagrange identity).
fn l_pairwise(support: &[Atom]) -> f64 {
    let mut acc = 0.0;
    for (i, a) in support.iter().enumerate() {
        for b in &support[i + 1..] {
            acc += a.mass * b.mass * (a.lambda - b.lambda).powi(2) / (a.lambda * b.lambda);
        }
    }
    1.0 + acc
}

/// Cauchy–Binet expansion of the two 3×3 Hankel determinants:
///
/// `det M = Σ_{i<j<l} w_i w_j w_l V²/(λ_i λ_j λ_l)`, `det N = Σ_{i<j<l} w_i w_j w_l V²`
/// with `V = (λ_i − λ_j)(λ_i − λ_l)(λ_j − λ_l)`.
fn hankel_dets_expansion(support: &[Atom]) -> (f64, f64) {
    let (mut det_m, mut det_n) = (0.0, 0.0);
    let n = support.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (support[i], support[j], support[k]);
                let v = (a.lambda - b.lambda) * (a.lambda - c.lambda) * (b.lambda - c.lambda);
                let term = a.mass * b.mass * c.mass * v * v;
                det_n += term;
                det_m += term / (a.lambda * b.lambda * c.lambda);
            }
        }
    }
    (det_m, det_n)
}

/// Determinant of the 3×3 Hankel matrix `[μ_{i+j+offset}]` by cofactor
/// expansion; `offset = -1` gives `M`, `offset = 0` gives `N`.
pub fn hankel_det_direct(mu: &MomentVector, offset: i32) -> f64 {
    let h = |i: i32, j: i32| mu.get(i + j + offset);
    let a = [
        [h(0, 0), h(0, 1), h(0, 2)],
        [h(1, 0), h(1, 1), h(1, 2)],
        [h(2, 0), h(2, 1), h(2, 2)],
    ];
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Shape of the absolutely continuous part of a [`DensitySpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityShape {
    Uniform,
    /// `t^a (1 − t)^b` with `t` the position rescaled to `[0, 1]`.
    Beta { a: f64, b: f64 },
    /// `1 + slope (t − ½)`.
    Linear { slope: f64 },
}

impl DensityShape {
    fn eval(&self, t: f64) -> f64 {
        match *self {
            DensityShape::Uniform => 1.0,
            DensityShape::Beta { a, b } => t.powf(a) * (1.0 - t).powf(b),
            DensityShape::Linear { slope } => 1.0 + slope * (t - 0.5),
        }
    }
}

/// A measure on `[m, M]` made of a continuous density on `[lower, upper]`
/// plus optional point masses.
///
/// Point-mass masses are absolute; the continuous part carries the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub lower: f64,
    pub upper: f64,
    pub shape: DensityShape,
    #[serde(default)]
    pub atoms: Vec<Atom>,
}

impl DensitySpec {
    pub fn uniform(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            shape: DensityShape::Uniform,
            atoms: Vec::new(),
        }
    }
}

/// Midpoint-rule discretization of a [`DensitySpec`] on a uniform grid of
/// `n_atoms` cells; point masses are passed through unchanged.
pub fn discretize_continuous(spec: &DensitySpec, n_atoms: usize) -> Result<SpectralMeasure> {
    if n_atoms < 2 {
        return Err(crate::error::invalid(format!("need n_atoms >= 2, got {n_atoms}")));
    }
    if !(spec.lower > 0.0 && spec.lower < spec.upper && spec.upper.is_finite()) {
        return Err(crate::error::invalid(format!(
            "density interval [{}, {}] must satisfy 0 < lower < upper",
            spec.lower, spec.upper
        )));
    }
    let point_mass: f64 = spec.atoms.iter().map(|a| a.mass).sum();
    if spec.atoms.iter().any(|a| !(a.mass >= 0.0)) || !(point_mass < 1.0) {
        return Err(crate::error::invalid(
            "point masses must be nonnegative and sum to less than 1",
        ));
    }
    let continuous_mass = 1.0 - point_mass;
    let width = (spec.upper - spec.lower) / n_atoms as f64;
    let mut cells = Vec::with_capacity(n_atoms);
    for i in 0..n_atoms {
        let t = (i as f64 + 0.5) / n_atoms as f64;
        let lambda = spec.lower + (i as f64 + 0.5) * width;
        let density = spec.shape.eval(t);
        if !(density > 0.0) || !density.is_finite() {
            return Err(crate::error::invalid(format!(
                "density must be positive on [lower, upper], got {density} at {lambda}"
            )));
        }
        cells.push(Atom::new(lambda, density));
    }
    let total: f64 = cells.iter().map(|a| a.mass).sum();
    let mut atoms: Vec<Atom> = cells
        .into_iter()
        .map(|a| Atom::new(a.lambda, continuous_mass * a.mass / total))
        .collect();
    atoms.extend(spec.atoms.iter().copied());
    // point masses pass through untouched when the total is already 1
    SpectralMeasure::build(atoms, None, true)
}

/// Parses a `lambda,mass` CSV file.
pub fn read_measure_csv<R: std::io::Read>(reader: R) -> Result<SpectralMeasure> {
    #[derive(Deserialize)]
    struct Row {
        lambda: f64,
        mass: f64,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let atoms = rdr
        .deserialize::<Row>()
        .map(|r| r.map(|r| Atom::new(r.lambda, r.mass)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    SpectralMeasure::new(atoms)
}
