//! Scenario configuration and the Monte Carlo replication loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{aggregate, MetricsRow};
use super::population::{generate_population, propensity_scores, size_measure, solve_alpha0, solve_c};
use super::sampling::{poisson_sample, rao_sampford_sample};
use crate::bootstrap::FitSpecs;
use crate::data::{Link, ModelSpec, NonProbSample, PopulationFrame, ProbSample};
use crate::error::{Error, Result};
use crate::inference::{adjusting_factor, Analysis, IntervalMethod, RatioMode};
use crate::models::PsMethod;
use crate::variance::var_pel_plugin;

fn default_methods() -> Vec<IntervalMethod> {
    IntervalMethod::ALL.to_vec()
}

fn default_ps_method() -> PsMethod {
    PsMethod::PseudoMl
}

/// Everything that defines one simulation setting. A model is misspecified by
/// leaving covariate 2 (`x₃`) out of its column list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "N")]
    pub n_pop: usize,
    #[serde(rename = "n_A")]
    pub n_a: usize,
    #[serde(rename = "n_B")]
    pub n_b: usize,
    pub beta: [f64; 4],
    pub alpha_slopes: [f64; 3],
    pub or_spec: ModelSpec,
    pub ps_spec: ModelSpec,
    #[serde(default = "default_ps_method")]
    pub ps_method: PsMethod,
    pub level: f64,
    pub reps: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<IntervalMethod>,
    /// Draw a new population for every replication instead of fixing one.
    #[serde(default)]
    pub fresh_population: bool,
}

impl ScenarioConfig {
    /// One of the three model-specification settings `TT`, `FT`, `TF` (outcome
    /// model first) at `(n_A, n_B) = (200, 200)`.
    pub fn preset(name: &str) -> Result<Self> {
        let (or_ok, ps_ok) = match name.to_ascii_uppercase().as_str() {
            "TT" => (true, true),
            "FT" => (false, true),
            "TF" => (true, false),
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario `{other}` (expected TT, FT, TF or a TOML file)"
                )))
            }
        };
        let cols = |ok: bool| if ok { vec![0, 1, 2] } else { vec![0, 1] };
        Ok(Self {
            n_pop: 10_000,
            n_a: 200,
            n_b: 200,
            beta: [-4.1, 1.0, 1.0, 1.0],
            alpha_slopes: [1.0, 1.0, 1.0],
            or_spec: ModelSpec::new(Link::Logit, cols(or_ok)),
            ps_spec: ModelSpec::new(Link::Logit, cols(ps_ok)),
            ps_method: PsMethod::PseudoMl,
            level: 0.95,
            reps: 2000,
            k: 1000,
            seed: 20_230_501,
            methods: default_methods(),
            fresh_population: false,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if self.n_a == 0 || self.n_b < 2 || self.n_a + self.n_b > self.n_pop {
            return bad(format!(
                "need n_A ≥ 1, n_B ≥ 2 and n_A + n_B ≤ N (got {}, {}, {})",
                self.n_a, self.n_b, self.n_pop
            ));
        }
        self.or_spec.check_columns(3).map_err(|e| Error::Config(e.to_string()))?;
        self.ps_spec.check_columns(3).map_err(|e| Error::Config(e.to_string()))?;
        if self.methods.is_empty() {
            return bad("at least one interval method is required".into());
        }
        if self.ps_method == PsMethod::Supplied {
            return bad("propensity scores must be estimated in a simulation".into());
        }
        let needs_k = self.methods.iter().any(|m| m.uses_bootstrap());
        if needs_k && self.k < 50 {
            return bad(format!("bootstrap methods need K ≥ 50, got {}", self.k));
        }
        Ok(())
    }

    pub fn specs(&self) -> FitSpecs {
        FitSpecs::new(self.ps_spec.clone(), self.ps_method, self.or_spec.clone())
    }
}

/// 64-bit mixing (SplitMix64 finaliser) used to derive independent seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const POPULATION_STREAM: u64 = 0;
const SAMPLING_STREAM: u64 = 1;
const BOOTSTRAP_STREAM: u64 = 2;

/// The fixed pieces of the design for one population.
#[derive(Debug, Clone)]
pub struct Design {
    pub population: PopulationFrame,
    pub mu_y: f64,
    pub pi_a: Vec<f64>,
    pub z: Vec<f64>,
}

impl Design {
    pub fn build(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        let population = generate_population(cfg.n_pop, &cfg.beta, seed)?;
        let alpha0 = solve_alpha0(&population, &cfg.alpha_slopes, cfg.n_a)?;
        let pi_a = propensity_scores(&population, alpha0, &cfg.alpha_slopes);
        let z = size_measure(&population, solve_c(&population)?);
        Ok(Self {
            mu_y: population.mean_y(),
            population,
            pi_a,
            z,
        })
    }
}

/// Population for a configuration (the one shared by all replications unless
/// `fresh_population` is set, in which case replication `r` uses its own).
pub fn build_design(cfg: &ScenarioConfig, rep: Option<usize>) -> Result<Design> {
    let pop_seed = match (cfg.fresh_population, rep) {
        (true, Some(r)) => mix_seed(mix_seed(cfg.seed, POPULATION_STREAM), r as u64 + 1),
        _ => mix_seed(cfg.seed, POPULATION_STREAM),
    };
    Design::build(cfg, pop_seed)
}

/// The pair of samples drawn in replication `rep`.
pub fn draw_samples(cfg: &ScenarioConfig, design: &Design, rep: usize) -> Result<(NonProbSample, ProbSample)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SAMPLING_STREAM));
    rng.set_stream(rep as u64);
    let (a, _) = poisson_sample(&design.population, &design.pi_a, &mut rng)?;
    let b = rao_sampford_sample(&design.population, &design.z, cfg.n_b, &mut rng)?;
    Ok((a, b))
}

/// Outcome of one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MethodOutcome {
    Interval { lower: f64, upper: f64 },
    Failed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub mu_y: f64,
    pub outcomes: Vec<(IntervalMethod, MethodOutcome)>,
    /// Calibrated PEL estimate.
    pub mu_pel: Option<f64>,
    /// `v_PEL` plug-in variance.
    pub v_pel: Option<f64>,
    /// `-2 r⁽²⁾(μ_y) / a₂`.
    pub stat2_at_truth: Option<f64>,
}

fn replicate(cfg: &ScenarioConfig, shared: Option<&Design>, rep: usize) -> ReplicationRecord {
    let fail_all = |mu_y: f64, msg: String| ReplicationRecord {
        rep,
        mu_y,
        outcomes: cfg.methods.iter().map(|&m| (m, MethodOutcome::Failed(msg.clone()))).collect(),
        mu_pel: None,
        v_pel: None,
        stat2_at_truth: None,
    };
    let owned;
    let design = match shared {
        Some(d) => d,
        None => match build_design(cfg, Some(rep)) {
            Ok(d) => {
                owned = d;
                &owned
            }
            Err(e) => return fail_all(f64::NAN, format!("population: {e}")),
        },
    };
    let mu_y = design.mu_y;
    let (a, b) = match draw_samples(cfg, design, rep) {
        Ok(s) => s,
        Err(e) => return fail_all(mu_y, format!("sampling: {e}")),
    };
    let analysis = match Analysis::fit(&a, &b, &cfg.specs()) {
        Ok(an) => an,
        Err(e) => return fail_all(mu_y, format!("model fit: {e}")),
    };
    let boot_seed = mix_seed(mix_seed(cfg.seed, BOOTSTRAP_STREAM), rep as u64);
    let outcomes = match analysis.intervals(&cfg.methods, cfg.level, cfg.k, boot_seed) {
        Ok(list) => list
            .into_iter()
            .map(|(m, r)| {
                let o = match r {
                    Ok(ci) => MethodOutcome::Interval {
                        lower: ci.lower,
                        upper: ci.upper,
                    },
                    Err(e) => MethodOutcome::Failed(e.to_string()),
                };
                (m, o)
            })
            .collect(),
        Err(e) => return fail_all(mu_y, format!("intervals: {e}")),
    };
    let (mu_pel, v_pel, stat2) = match analysis.profile(RatioMode::R2) {
        Ok(p) => {
            let v = var_pel_plugin(&a, &b, &analysis.pf, &analysis.of).ok().map(|v| v.v_total);
            let af = adjusting_factor(RatioMode::R2, &a, &b, &analysis.pf, Some(&analysis.of)).ok();
            let stat = match (af, p.minus_two_log_ratio(mu_y)) {
                (Some(af), Ok(r)) => Some(r / af.a),
                _ => None,
            };
            (Some(p.estimate()), v, stat)
        }
        Err(_) => (None, None, None),
    };
    ReplicationRecord {
        rep,
        mu_y,
        outcomes,
        mu_pel,
        v_pel,
        stat2_at_truth: stat2,
    }
}

/// Per-replication records, in replication order regardless of scheduling.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    /// True mean of the fixed population (`NaN` in fresh-population mode).
    pub mu_y: f64,
    pub records: Vec<ReplicationRecord>,
}

pub fn run_replications(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let shared = if cfg.fresh_population {
        None
    } else {
        Some(build_design(cfg, None)?)
    };
    let records = (0..cfg.reps)
        .into_par_iter()
        .map(|r| replicate(cfg, shared.as_ref(), r))
        .collect();
    Ok(ScenarioRun {
        mu_y: shared.as_ref().map_or(f64::NAN, |d| d.mu_y),
        records,
    })
}

/// Runs all replications and aggregates one row per method.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<MetricsRow>> {
    let run = run_replications(cfg)?;
    Ok(aggregate(&cfg.methods, &run.records))
}
