use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgradient::{PSpec, RunConfig};
use crate::quadratic::QuadraticProblem;
use crate::renorm::{Atom, DensityShape, DensitySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Density,
    RateCurves,
    RateRange,
    Trajectory,
    MeasureOrbit,
    StabilityProbe,
    Hilbert,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Density,
        ExperimentKind::RateCurves,
        ExperimentKind::RateRange,
        ExperimentKind::Trajectory,
        ExperimentKind::MeasureOrbit,
        ExperimentKind::StabilityProbe,
        ExperimentKind::Hilbert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Density => "density",
            ExperimentKind::RateCurves => "rate_curves",
            ExperimentKind::RateRange => "rate_range",
            ExperimentKind::Trajectory => "trajectory",
            ExperimentKind::MeasureOrbit => "measure_orbit",
            ExperimentKind::StabilityProbe => "stability_probe",
            ExperimentKind::Hilbert => "hilbert",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .or(match norm.as_str() {
                "orbit" => Some(ExperimentKind::MeasureOrbit),
                "stability" => Some(ExperimentKind::StabilityProbe),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Flat key-value experiment description.
///
/// Every field is optional; unset fields take per-experiment defaults in
/// [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,

    pub eigenvalues: Option<Vec<f64>>,
    pub x_star: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    /// Initial masses on `eigenvalues` for measure orbits.
    pub masses: Option<Vec<f64>>,

    /// `uniform`, `beta` or `linear`.
    pub density: Option<String>,
    pub density_lower: Option<f64>,
    pub density_upper: Option<f64>,
    pub beta_a: Option<f64>,
    pub beta_b: Option<f64>,
    pub slope: Option<f64>,
    pub atoms_lambda: Option<Vec<f64>>,
    pub atoms_mass: Option<Vec<f64>>,
    pub n_atoms: Option<usize>,

    pub pspec: Option<String>,
    pub coefficients: Option<BTreeMap<String, f64>>,
    pub max_iters: Option<usize>,
    pub gradient_stop: Option<f64>,
    pub relaxation: Option<f64>,

    pub n_steps: Option<usize>,
    pub threshold: Option<f64>,
    pub bins: Option<usize>,
    pub rho: Option<Vec<f64>>,
    pub p_points: Option<usize>,
    pub inv_rho_points: Option<usize>,
    pub p_step: Option<f64>,
    pub p_values: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub interior: Option<Vec<f64>>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            experiment: Some(kind),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.experiment
            .ok_or_else(|| cfg_err("config does not name an experiment"))
    }

    /// Fills every unset field with the default for this experiment and
    /// validates the result.
    pub fn resolve(&self) -> Result<Self> {
        let kind = self.kind()?;
        let mut c = self.clone();
        c.seed.get_or_insert(0);
        c.pspec.get_or_insert_with(|| "steepest_descent".into());
        c.gradient_stop.get_or_insert(0.0);
        c.relaxation.get_or_insert(1.0);
        match kind {
            ExperimentKind::Density => {
                c.eigenvalues.get_or_insert_with(|| vec![1.0, 4.0, 10.0]);
                c.trials.get_or_insert(10_000);
                c.n_steps.get_or_insert(100_000);
                c.threshold.get_or_insert(crate::attractor::DEFAULT_THRESHOLD);
                c.bins.get_or_insert(100);
                c.p_points.get_or_insert(1001);
            }
            ExperimentKind::RateCurves => {
                c.rho.get_or_insert_with(|| vec![2.0, 4.0, 8.0, 16.0]);
                c.p_points.get_or_insert(1001);
            }
            ExperimentKind::RateRange => {
                c.inv_rho_points.get_or_insert(999);
            }
            ExperimentKind::Trajectory => {
                c.eigenvalues.get_or_insert_with(|| (1..=10).map(f64::from).collect());
                c.trials.get_or_insert(1);
                c.max_iters.get_or_insert(1000);
                c.threshold.get_or_insert(crate::attractor::DEFAULT_THRESHOLD);
            }
            ExperimentKind::MeasureOrbit => {
                if c.density.is_none() {
                    c.eigenvalues.get_or_insert_with(|| vec![1.0, 4.0, 10.0]);
                } else {
                    c.n_atoms.get_or_insert(1000);
                }
                c.n_steps.get_or_insert(500);
                c.threshold.get_or_insert(crate::attractor::DEFAULT_THRESHOLD);
            }
            ExperimentKind::StabilityProbe => {
                c.eigenvalues.get_or_insert_with(|| vec![1.0, 4.0, 10.0]);
                c.p_step.get_or_insert(0.01);
                c.alpha.get_or_insert(1e-8);
                c.n_steps.get_or_insert(50);
            }
            ExperimentKind::Hilbert => {
                c.density.get_or_insert_with(|| "uniform".into());
                c.density_lower.get_or_insert(1.0);
                c.density_upper.get_or_insert(10.0);
                c.n_atoms.get_or_insert(10_000);
                c.n_steps.get_or_insert(300);
            }
        }
        if let Some(eig) = &c.eigenvalues {
            if c.x_star.is_none() {
                c.x_star = Some(vec![0.0; eig.len()]);
            }
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if let Some(t) = self.trials {
            if t < 1 {
                return Err(cfg_err("trials must be at least 1"));
            }
        }
        if let Some(eig) = &self.eigenvalues {
            let problem = self.problem()?;
            for (name, v) in [("x0", &self.x0), ("masses", &self.masses)] {
                if let Some(v) = v {
                    if v.len() != eig.len() {
                        return Err(cfg_err(format!(
                            "{name} has length {}, expected {}",
                            v.len(),
                            eig.len()
                        )));
                    }
                }
            }
            self.pspec()?.validate_on(problem.spectrum()).map_err(|e| cfg_err(e.to_string()))?;
        }
        if self.density.is_some() {
            self.density_spec()?;
        }
        if let Some(rho) = &self.rho {
            if rho.is_empty() || rho.iter().any(|r| !(*r > 1.0 && r.is_finite())) {
                return Err(cfg_err("rho values must be finite and exceed 1"));
            }
        }
        for (name, v) in [
            ("p_points", self.p_points),
            ("inv_rho_points", self.inv_rho_points),
            ("bins", self.bins),
        ] {
            if v == Some(0) || (name == "p_points" && v == Some(1)) {
                return Err(cfg_err(format!("{name} is too small")));
            }
        }
        if let Some(step) = self.p_step {
            if !(step > 0.0 && step < 0.5) {
                return Err(cfg_err("p_step must lie in (0, 0.5)"));
            }
        }
        if let Some(t) = self.threshold {
            if !(t >= 0.0) {
                return Err(cfg_err("threshold must be nonnegative"));
            }
        }
        if let Some(a) = self.alpha {
            if !(0.0..0.5).contains(&a) {
                return Err(cfg_err("alpha must lie in [0, 0.5)"));
            }
        }
        self.run_config()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(1)
    }

    pub fn problem(&self) -> Result<QuadraticProblem> {
        let eig = self
            .eigenvalues
            .clone()
            .ok_or_else(|| cfg_err("eigenvalues are required"))?;
        let x_star = self.x_star.clone().unwrap_or_else(|| vec![0.0; eig.len()]);
        QuadraticProblem::from_eigenvalues(eig, x_star).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn pspec(&self) -> Result<PSpec> {
        let label = self.pspec.as_deref().unwrap_or("steepest_descent");
        match &self.coefficients {
            Some(coeffs) => {
                let mut table = BTreeMap::new();
                for (k, c) in coeffs {
                    let k: i32 = k
                        .trim()
                        .parse()
                        .map_err(|_| cfg_err(format!("bad exponent key '{k}'")))?;
                    table.insert(k, *c);
                }
                if label != "custom" {
                    return Err(cfg_err("coefficients require pspec = \"custom\""));
                }
                PSpec::custom(table).map_err(|e| cfg_err(e.to_string()))
            }
            None => label.parse().map_err(|e: Error| cfg_err(e.to_string())),
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let rc = RunConfig {
            max_iters: self.max_iters.unwrap_or(1000),
            gradient_stop: self.gradient_stop.unwrap_or(0.0),
            relaxation: self.relaxation.unwrap_or(1.0),
            seed: self.seed(),
        };
        rc.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(rc)
    }

    pub fn density_spec(&self) -> Result<DensitySpec> {
        let name = self
            .density
            .as_deref()
            .ok_or_else(|| cfg_err("density is required"))?;
        let shape = match name {
            "uniform" => DensityShape::Uniform,
            "beta" => DensityShape::Beta {
                a: self.beta_a.unwrap_or(0.0),
                b: self.beta_b.unwrap_or(0.0),
            },
            "linear" => DensityShape::Linear {
                slope: self.slope.unwrap_or(0.0),
            },
            other => return Err(cfg_err(format!("unknown density '{other}'"))),
        };
        let lower = self.density_lower.ok_or_else(|| cfg_err("density_lower is required"))?;
        let upper = self.density_upper.ok_or_else(|| cfg_err("density_upper is required"))?;
        let lambdas = self.atoms_lambda.clone().unwrap_or_default();
        let masses = self.atoms_mass.clone().unwrap_or_default();
        if lambdas.len() != masses.len() {
            return Err(cfg_err("atoms_lambda and atoms_mass differ in length"));
        }
        let spec = DensitySpec {
            lower,
            upper,
            shape,
            atoms: lambdas.into_iter().zip(masses).map(|(l, w)| Atom::new(l, w)).collect(),
        };
        crate::renorm::discretize_continuous(&spec, 2).map_err(|e| cfg_err(e.to_string()))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_toml() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            experiment = "trajectory"
            eigenvalues = [1.0, 2.0, 5.0]
            x_star = [0.0, 1.0, 0.0]
            pspec = "power:2"
            max_iters = 50
            seed = 7
            "#,
        )
        .unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.kind().unwrap(), ExperimentKind::Trajectory);
        assert_eq!(r.pspec().unwrap(), PSpec::power(2));
        assert_eq!(r.run_config().unwrap().max_iters, 50);
        assert_eq!(r.seed(), 7);
        assert_eq!(r.trials(), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        let bad = [
            "experiment = \"density\"\ntrials = 0",
            "experiment = \"density\"\neigenvalues = [2.0, 2.0]",
            "experiment = \"trajectory\"\neigenvalues = [1.0, 2.0]\nx0 = [1.0]",
            "experiment = \"rate_curves\"\nrho = [0.5]",
            "experiment = \"hilbert\"\ndensity = \"triangle\"",
            "experiment = \"trajectory\"\nrelaxation = -1.0",
            "experiment = \"trajectory\"\npspec = \"power:x\"",
            "experiment = \"trajectory\"\ncoefficients = { \"0\" = 1.0 }",
        ];
        for text in bad {
            let cfg = ExperimentConfig::from_toml_str(text).unwrap();
            assert!(matches!(cfg.resolve(), Err(Error::Config(_))), "{text}");
        }
        assert!(ExperimentConfig::default().resolve().is_err());
    }

    #[test]
    fn custom_polynomial_from_config() {
        let cfg = ExperimentConfig::from_toml_str(
            "experiment = \"trajectory\"\npspec = \"custom\"\ncoefficients = { \"-1\" = 1.0, \"1\" = 0.5 }",
        )
        .unwrap();
        let p = cfg.resolve().unwrap().pspec().unwrap();
        assert_eq!(p.coefficients().len(), 2);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert_eq!("rate-curves".parse::<ExperimentKind>().unwrap(), ExperimentKind::RateCurves);
        assert_eq!("orbit".parse::<ExperimentKind>().unwrap(), ExperimentKind::MeasureOrbit);
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let r = ExperimentConfig::new(ExperimentKind::Hilbert).resolve().unwrap();
        let text = r.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), r);
    }
}
