//! With-replacement bootstrap over the pair of samples.
//!
//! Every replicate resamples `n_A` units from the non-probability sample and
//! `n_B` units (with their design weights) from the reference sample by simple
//! random sampling with replacement, refits both working models, and records
//! the statistics every bootstrap-based interval needs. One run therefore
//! serves the bootstrap-calibrated PEL intervals, the bootstrap variance and
//! the percentile interval at once.
//!
//! Replicate `k` draws from its own ChaCha stream keyed by `(seed, k)`, so the
//! output does not depend on how rayon schedules the work.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ModelSpec, NonProbSample, ProbSample};
use crate::el::ElProfile;
use crate::error::{Error, Result};
use crate::estimators::{calibration_column, dr2, estimate_pel, ipw2, EstimatorKind};
use crate::models::{fit_outcome, fit_propensity, OutcomeFit, PropensityFit, PsMethod};

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.10;

/// Working-model specifications shared by the original fit and every replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpecs {
    pub ps: ModelSpec,
    pub ps_method: PsMethod,
    pub or: ModelSpec,
}

impl FitSpecs {
    pub fn new(ps: ModelSpec, ps_method: PsMethod, or: ModelSpec) -> Self {
        Self { ps, ps_method, or }
    }

    /// Recovers the specifications from existing fits.
    pub fn from_fits(pf: &PropensityFit, of: &OutcomeFit) -> Result<Self> {
        if pf.method == PsMethod::Supplied {
            return Err(Error::Validation("bootstrap needs an estimated propensity model".into()));
        }
        Ok(Self::new(pf.spec.clone(), pf.method, of.spec.clone()))
    }

    pub fn fit(&self, a: &NonProbSample, b: &ProbSample) -> Result<(PropensityFit, OutcomeFit)> {
        let pf = fit_propensity(a, b, &self.ps, self.ps_method)?;
        let of = fit_outcome(a, &self.or, b)?;
        Ok((pf, of))
    }
}

/// Points at which the replicate ratio statistics are evaluated: the original
/// sample's Hájek estimate for the ratio without model calibration and its
/// calibrated PEL estimate for the ratio with it.
#[derive(Debug, Clone, Copy, Default)]
pub struct BootstrapTargets {
    pub mu_r1: Option<f64>,
    pub mu_r2: Option<f64>,
}

/// Statistics from one successfully refitted replicate.
#[derive(Debug, Clone, Copy)]
pub struct ReplicateStats {
    pub ipw2: f64,
    pub dr2: f64,
    /// Calibrated PEL estimate; `None` when the calibration constraint is infeasible.
    pub pel: Option<f64>,
    /// `-2 r⁽¹⁾` at the r1 target (may be `+inf` if the target leaves the hull).
    pub ratio1: Option<f64>,
    /// `-2 r⁽²⁾` at the r2 target; `None` when calibration is infeasible.
    pub ratio2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BootstrapRun {
    /// One entry per replicate; `None` marks a failed model refit.
    pub replicates: Vec<Option<ReplicateStats>>,
}

impl BootstrapRun {
    pub fn k(&self) -> usize {
        self.replicates.len()
    }

    pub fn failed_fits(&self) -> usize {
        self.replicates.iter().filter(|r| r.is_none()).count()
    }

    /// Collects one statistic across replicates, failing when more than
    /// [`MAX_FAILURE_RATE`] of them are unavailable.
    pub fn collect(&self, stat: impl Fn(&ReplicateStats) -> Option<f64>) -> Result<Vec<f64>> {
        let values: Vec<f64> = self.replicates.iter().flatten().filter_map(&stat).collect();
        let failed = self.k() - values.len();
        if failed as f64 > MAX_FAILURE_RATE * self.k() as f64 || values.is_empty() {
            return Err(Error::TooManyFailures {
                failed,
                total: self.k(),
            });
        }
        Ok(values)
    }

    pub fn estimates(&self, kind: EstimatorKind) -> Result<Vec<f64>> {
        match kind {
            EstimatorKind::Ipw2 => self.collect(|r| Some(r.ipw2)),
            EstimatorKind::Dr2 => self.collect(|r| Some(r.dr2)),
            EstimatorKind::Pel => self.collect(|r| r.pel),
            other => Err(Error::Validation(format!(
                "{} needs the population size and is not bootstrapped",
                other.tag()
            ))),
        }
    }
}

/// Random stream for replicate `k` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Indices of a simple random sample of size `n` drawn with replacement from `0..n`.
pub fn resample_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn resample<R: Rng>(a: &NonProbSample, b: &ProbSample, rng: &mut R) -> Result<(NonProbSample, ProbSample)> {
    let ia = resample_indices(a.n(), rng);
    let ib = resample_indices(b.n(), rng);
    Ok((a.select(&ia)?, b.select(&ib)?))
}

fn replicate(
    a: &NonProbSample,
    b: &ProbSample,
    specs: &FitSpecs,
    targets: &BootstrapTargets,
    seed: u64,
    k: u64,
) -> Option<ReplicateStats> {
    let mut rng = replicate_rng(seed, k);
    let (ra, rb) = resample(a, b, &mut rng).ok()?;
    let (pf, of) = specs.fit(&ra, &rb).ok()?;
    let ipw = ipw2(&ra, &pf).ok()?.value;
    let dr = dr2(&ra, &rb, &pf, &of).ok()?.value;
    let pel = estimate_pel(&ra, &pf, Some(&of)).ok().map(|e| e.value);
    let ratio1 = targets
        .mu_r1
        .and_then(|mu| minus_two_log_ratio(&pf, ra.y(), &[], mu));
    let ratio2 = match (targets.mu_r2, pel) {
        (Some(mu), Some(_)) => minus_two_log_ratio(&pf, ra.y(), &[calibration_column(&of)], mu),
        _ => None,
    };
    Some(ReplicateStats {
        ipw2: ipw,
        dr2: dr,
        pel,
        ratio1,
        ratio2,
    })
}

fn minus_two_log_ratio(pf: &PropensityFit, y: &[f64], base: &[Vec<f64>], mu: f64) -> Option<f64> {
    let profile = ElProfile::new(&pf.dtilde, base.to_vec()).ok()?;
    let g: Vec<f64> = y.iter().map(|v| v - mu).collect();
    profile.log_ratio(&g).ok().map(|r| -2.0 * r)
}

/// Runs `k` replicates in parallel. Failed refits are kept as `None` so that
/// callers can apply the failure threshold per statistic.
pub fn run_bootstrap(
    a: &NonProbSample,
    b: &ProbSample,
    specs: &FitSpecs,
    k: usize,
    seed: u64,
    targets: &BootstrapTargets,
) -> Result<BootstrapRun> {
    if k == 0 {
        return Err(Error::Validation("bootstrap needs K ≥ 1".into()));
    }
    let replicates = (0..k as u64)
        .into_par_iter()
        .map(|i| replicate(a, b, specs, targets, seed, i))
        .collect();
    Ok(BootstrapRun { replicates })
}
