mod common;

use common::{poisson_inclusion_max_z, poisson_size_z, rao_sampford_max_z};
use nonprob_pel::sim::{build_design, ScenarioConfig};

#[test]
fn rao_sampford_matches_target_inclusion_probabilities() {
    let z = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let worst = rao_sampford_max_z(&z, 2, 200_000, 2024);
    assert!(worst < 3.0, "max standardised deviation {worst:.3}");
}

#[test]
fn rao_sampford_with_skewed_sizes() {
    let z = [0.5, 1.0, 1.0, 2.0, 4.0, 7.5];
    let worst = rao_sampford_max_z(&z, 2, 100_000, 99);
    assert!(worst < 3.5, "max standardised deviation {worst:.3}");
}

#[test]
fn constant_size_measure_gives_equal_probabilities() {
    let worst = rao_sampford_max_z(&[2.5; 8], 3, 20_000, 5);
    assert!(worst < 3.5, "max standardised deviation {worst:.3}");
}

#[test]
fn poisson_inclusion_frequencies() {
    let pi = [0.05, 0.2, 0.5, 0.7, 0.95];
    let worst = poisson_inclusion_max_z(&pi, 50_000, 17);
    assert!(worst < 3.5, "max standardised deviation {worst:.3}");
}

#[test]
fn poisson_size_on_simulation_design() {
    let cfg = ScenarioConfig::preset("TT").unwrap();
    let design = build_design(&cfg, None).unwrap();
    let total: f64 = design.pi_a.iter().sum();
    assert!((total - cfg.n_a as f64).abs() < 1e-6, "Σπ = {total}");
    let z = poisson_size_z(&design.pi_a, 2000, 3);
    assert!(z.abs() < 3.0, "standardised size deviation {z:.3}");
}
