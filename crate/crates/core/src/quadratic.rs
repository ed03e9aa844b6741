//! Quadratic problems in canonical (eigenbasis) coordinates.
//!
//! The operator `A` is held only through its eigenvalues, so every vector
//! here is a coordinate vector in the eigenbasis and `A^k v` is a
//! componentwise scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues `0 < λ_1 ≤ … ≤ λ_d` of a positive definite operator with
/// `λ_1 < λ_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.len() < 2 {
            return Err(Error::InvalidSpectrum(format!(
                "need at least 2 eigenvalues, got {}",
                eigenvalues.len()
            )));
        }
        if let Some(bad) = eigenvalues.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidSpectrum(format!(
                "eigenvalues must be finite and positive, found {bad}"
            )));
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidSpectrum(
                "eigenvalues must be sorted ascending".into(),
            ));
        }
        let (m, big_m) = (eigenvalues[0], eigenvalues[eigenvalues.len() - 1]);
        if m >= big_m {
            return Err(Error::InvalidSpectrum(format!(
                "degenerate spectrum: m = M = {m}"
            )));
        }
        Ok(Self { eigenvalues })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Lower spectral bound `m`.
    pub fn lower(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Upper spectral bound `M`.
    pub fn upper(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `ρ = M / m`.
    pub fn condition_number(&self) -> f64 {
        self.upper() / self.lower()
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Spectrum {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Spectrum::new(v)
    }
}

impl From<Spectrum> for Vec<f64> {
    fn from(s: Spectrum) -> Self {
        s.eigenvalues
    }
}

/// `f(x) = ½(Ax, x) − (x, y)` with `y = A x*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    spectrum: Spectrum,
    x_star: Vec<f64>,
}

impl QuadraticProblem {
    pub fn new(spectrum: Spectrum, x_star: Vec<f64>) -> Result<Self> {
        spectrum.check_dim(x_star.len())?;
        if x_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("x_star must be finite".into()));
        }
        Ok(Self { spectrum, x_star })
    }

    /// Problem with minimizer at the origin.
    pub fn centered(spectrum: Spectrum) -> Self {
        let d = spectrum.dim();
        Self {
            spectrum,
            x_star: vec![0.0; d],
        }
    }

    pub fn from_eigenvalues(eigenvalues: Vec<f64>, x_star: Vec<f64>) -> Result<Self> {
        Self::new(Spectrum::new(eigenvalues)?, x_star)
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.spectrum.eigenvalues()
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    pub fn condition_number(&self) -> f64 {
        self.spectrum.condition_number()
    }

    /// `g(x) = A x − y`, i.e. `λ_i (x_i − x*_i)`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.spectrum.check_dim(x.len())?;
        Ok(self
            .eigenvalues()
            .iter()
            .zip(x.iter().zip(&self.x_star))
            .map(|(l, (xi, si))| l * (xi - si))
            .collect())
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        self.spectrum.check_dim(x.len())?;
        let mut quad = 0.0;
        let mut lin = 0.0;
        for ((l, xi), si) in self.eigenvalues().iter().zip(x).zip(&self.x_star) {
            quad += l * xi * xi;
            lin += xi * l * si;
        }
        Ok(0.5 * quad - lin)
    }

    /// `f(x*) = −½(A x*, x*)`.
    pub fn optimal_value(&self) -> f64 {
        -0.5 * self
            .eigenvalues()
            .iter()
            .zip(&self.x_star)
            .map(|(l, s)| l * s * s)
            .sum::<f64>()
    }

    /// `f(x) − f(x*) = ½(A(x − x*), x − x*)`, evaluated without cancellation.
    pub fn excess(&self, x: &[f64]) -> Result<f64> {
        self.spectrum.check_dim(x.len())?;
        Ok(0.5
            * self
                .eigenvalues()
                .iter()
                .zip(x.iter().zip(&self.x_star))
                .map(|(l, (xi, si))| l * (xi - si) * (xi - si))
                .sum::<f64>())
    }

    /// `A^k v` for any integer `k`.
    pub fn apply_power(&self, v: &[f64], k: i32) -> Result<Vec<f64>> {
        self.spectrum.check_dim(v.len())?;
        Ok(self
            .eigenvalues()
            .iter()
            .zip(v)
            .map(|(l, vi)| l.powi(k) * vi)
            .collect())
    }

    /// `(A^k v, v)`.
    pub fn power_inner(&self, v: &[f64], k: i32) -> Result<f64> {
        self.spectrum.check_dim(v.len())?;
        Ok(self
            .eigenvalues()
            .iter()
            .zip(v)
            .map(|(l, vi)| l.powi(k) * vi * vi)
            .sum())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * a.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}
