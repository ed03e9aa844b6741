use pgrad_core::attractor::{self, stability_intervals};
use pgrad_core::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use pgrad_core::rates::{delta_n, max_range_rho, rate_bounds};
use pgrad_core::renorm::{self, SpectralMeasure};
use pgrad_core::{iterate, PSpec, QuadraticProblem, RunConfig};

#[test]
fn midpoint_interior_gives_widest_stable_interval() {
    let r = stability_intervals(&[1.0, 5.5, 10.0], 1.0, 10.0, None).unwrap();
    assert!((r.i_s.lo - 0.14645).abs() < 5e-6);
    assert!((r.i_s.hi - 0.85355).abs() < 5e-6);
    let half_width = 0.5 / 2f64.sqrt();
    assert!((r.s_star - half_width).abs() < 1e-14);
}

#[test]
fn three_point_stable_interval() {
    let r = stability_intervals(&[1.0, 4.0, 10.0], 1.0, 10.0, Some(0.5)).unwrap();
    assert!((r.i_s.lo - 0.12732).abs() < 5e-6);
    assert!((r.i_s.hi - 0.87268).abs() < 5e-6);
    assert_eq!(r.classify(0.5), attractor::Stability::Stable);
    assert_eq!(r.classify(0.05), attractor::Stability::Unstable);
}

#[test]
fn widest_rate_range() {
    let rho = max_range_rho();
    assert!((rho - 7.5239).abs() < 5e-5);
    let (r_max, r_min) = rate_bounds(rho).unwrap();
    assert!((r_max - r_min - (3.0 - 2.0 * 2f64.sqrt())).abs() < 1e-12);
    for drho in [-0.05, 0.05] {
        let (a, b) = rate_bounds(rho + drho).unwrap();
        assert!(a - b < r_max - r_min);
    }
}

#[test]
fn transient_length_grows_like_rho_over_eight() {
    for rho in [1e3, 1e4] {
        let (r_max, r_min) = rate_bounds(rho).unwrap();
        let dn = delta_n(r_max, r_min).unwrap();
        assert!((dn - (rho / 8.0 - 0.25)).abs() < 10.0 / rho, "rho {rho}: {dn}");
    }
}

#[test]
fn two_point_measures_have_singular_moment_matrices() {
    let nu = SpectralMeasure::two_point(0.3, 1.0, 10.0).unwrap();
    let d = renorm::diagnostics(&nu);
    assert_eq!(d.det_m, 0.0);
    assert_eq!(d.det_n, 0.0);
}

#[test]
fn two_dimensional_rate_is_constant() {
    let p = QuadraticProblem::from_eigenvalues(vec![0.5, 20.0], vec![1.0, -1.0]).unwrap();
    for pspec in [PSpec::steepest_descent(), PSpec::minimal_residues(), PSpec::power(2)] {
        let rec = iterate(&p, &pspec, &[3.0, 0.7], &RunConfig::with_max_iters(60)).unwrap();
        let r0 = rec.steps[0].diagnostics.r;
        assert!(rec.steps.iter().all(|s| (s.diagnostics.r - r0).abs() <= 1e-12));
    }
}

#[test]
fn experiment_sidecar_records_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::MeasureOrbit);
    cfg.seed = Some(5);
    cfg.n_steps = Some(10);
    let summary = run_experiment(&cfg, 2, Some(dir.path())).unwrap();
    assert!(summary["p"].as_f64().unwrap() > 0.0);
    let text = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
    let side: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(side["experiment"], "measure_orbit");
    assert_eq!(side["config"]["eigenvalues"], serde_json::json!([1.0, 4.0, 10.0]));
    assert_eq!(side["config"]["n_steps"], 10);
    let back = ExperimentConfig::from_toml_str(&cfg.resolve().unwrap().to_toml_string().unwrap()).unwrap();
    assert_eq!(back, cfg.resolve().unwrap());
}
