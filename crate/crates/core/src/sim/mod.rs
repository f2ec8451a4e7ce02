//! Monte Carlo harness: a finite population, Poisson and Rao–Sampford
//! samples drawn from it, and coverage metrics for the interval methods.

pub mod metrics;
pub mod population;
pub mod sampling;
pub mod scenario;

pub use metrics::{aggregate, summarize, MetricsRow, OutputFormat};
pub use population::{generate_population, propensity_scores, size_measure, solve_alpha0, solve_c};
pub use sampling::{poisson_sample, rao_sampford_indices, rao_sampford_sample};
pub use scenario::{
    build_design, draw_samples, mix_seed, run_replications, run_scenario, Design, MethodOutcome, ReplicationRecord,
    ScenarioConfig, ScenarioRun,
};
