//! Confidence intervals for the population mean.
//!
//! The PEL intervals invert the profile ratio `r(μ) = ℓ(p̂(μ)) - ℓ(p̂)`, where
//! `p̂(μ)` additionally satisfies `Σ p_i (y_i - μ) = 0`. Mode r1 uses only the
//! normalisation constraint, mode r2 adds model calibration. The interval is
//! `{μ : -2 r(μ) ≤ c}` with either `c = a · χ²₁(level)` (adjusting factor `a`)
//! or `c = b_α`, a bootstrap quantile of `-2 r` evaluated on resamples.
//!
//! `-2 r` is convex in `μ`, zero at the maximum PEL estimate and infinite
//! outside the feasible range, so each endpoint is found by bisection between
//! the estimate and the range of `y`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_bootstrap, BootstrapRun, BootstrapTargets, FitSpecs};
use crate::data::{NonProbSample, ProbSample};
use crate::el::ElProfile;
use crate::error::{Error, Result};
use crate::estimators::{b_m_hat, calibration_column, dr2, ipw2, EstimatorKind};
use crate::models::{OutcomeFit, PropensityFit};
use crate::special::{chi2_quantile, normal_quantile, quantile};
use crate::variance::{sample_variance, var_ipw_plugin, var_pel_plugin};

/// Absolute width at which endpoint bisection stops.
pub const BISECTION_TOL: f64 = 1e-13;
const MAX_BISECTION: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Pel1Adj,
    Pel1Bts,
    Pel2Adj,
    Pel2Bts,
    Na1,
    Na2,
    Bst,
}

impl IntervalMethod {
    pub const ALL: [IntervalMethod; 7] = [
        IntervalMethod::Pel1Adj,
        IntervalMethod::Pel1Bts,
        IntervalMethod::Pel2Adj,
        IntervalMethod::Pel2Bts,
        IntervalMethod::Na1,
        IntervalMethod::Na2,
        IntervalMethod::Bst,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            IntervalMethod::Pel1Adj => "pel1_adj",
            IntervalMethod::Pel1Bts => "pel1_bts",
            IntervalMethod::Pel2Adj => "pel2_adj",
            IntervalMethod::Pel2Bts => "pel2_bts",
            IntervalMethod::Na1 => "na1",
            IntervalMethod::Na2 => "na2",
            IntervalMethod::Bst => "bst",
        }
    }

    /// Whether the method needs bootstrap replicates.
    pub fn uses_bootstrap(self) -> bool {
        matches!(
            self,
            IntervalMethod::Pel1Bts | IntervalMethod::Pel2Bts | IntervalMethod::Na2 | IntervalMethod::Bst
        )
    }
}

impl std::fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for IntervalMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        IntervalMethod::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::Validation(format!("unknown interval method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioMode {
    /// Normalisation constraint only.
    R1,
    /// Normalisation plus model calibration.
    R2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalResult {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: IntervalMethod,
    pub level: f64,
    /// Calibration constant: `a₁`/`a₂`, `b_α`, or the normal quantile.
    pub calib: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl IntervalResult {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, mu: f64) -> bool {
        self.lower <= mu && mu <= self.upper
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("confidence level must lie in (0, 1), got {level}")))
    }
}

/// Smallest bootstrap size accepted by a method: quantile-based intervals
/// need more replicates than a variance.
fn min_replicates(m: IntervalMethod) -> usize {
    match m {
        IntervalMethod::Pel1Bts | IntervalMethod::Pel2Bts | IntervalMethod::Bst => 200,
        IntervalMethod::Na2 => 50,
        _ => 0,
    }
}

/// The PEL ratio as a function of `μ` for fixed samples and fits.
#[derive(Debug, Clone)]
pub struct RatioProfile {
    profile: ElProfile,
    y: Vec<f64>,
    estimate: f64,
    mode: RatioMode,
}

impl RatioProfile {
    pub fn new(mode: RatioMode, a: &NonProbSample, pf: &PropensityFit, of: Option<&OutcomeFit>) -> Result<Self> {
        if pf.dtilde.len() != a.n() {
            return Err(Error::Validation("propensity scores do not match the sample".into()));
        }
        let base = match (mode, of) {
            (RatioMode::R1, _) => Vec::new(),
            (RatioMode::R2, Some(of)) => {
                if of.fitted_a.len() != a.n() {
                    return Err(Error::Validation("fitted values do not match the sample".into()));
                }
                vec![calibration_column(of)]
            }
            (RatioMode::R2, None) => {
                return Err(Error::Validation("the calibrated ratio needs an outcome fit".into()))
            }
        };
        let profile = ElProfile::new(&pf.dtilde, base)?;
        let estimate = profile.global().p.iter().zip(a.y()).map(|(p, y)| p * y).sum();
        Ok(Self {
            profile,
            y: a.y().to_vec(),
            estimate,
            mode,
        })
    }

    pub fn mode(&self) -> RatioMode {
        self.mode
    }

    /// Maximum PEL estimate under this mode's constraints.
    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    /// `r(μ) ≤ 0`; `-inf` outside the feasible range.
    pub fn log_ratio(&self, mu: f64) -> Result<f64> {
        if !mu.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        let g: Vec<f64> = self.y.iter().map(|v| v - mu).collect();
        self.profile.log_ratio(&g)
    }

    pub fn minus_two_log_ratio(&self, mu: f64) -> Result<f64> {
        Ok(-2.0 * self.log_ratio(mu)?)
    }

    pub fn y_range(&self) -> (f64, f64) {
        let lo = self.y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// `{μ : -2 r(μ) ≤ cutoff}`. Returns the endpoints and whether each one
    /// ran into the feasible range instead of crossing the cutoff.
    pub fn invert(&self, cutoff: f64) -> Result<((f64, f64), (bool, bool))> {
        if !(cutoff > 0.0) {
            return Err(Error::Degenerate(format!("non-positive cutoff {cutoff}")));
        }
        let (ylo, yhi) = self.y_range();
        let (lower, lower_hit) = self.endpoint(cutoff, ylo)?;
        let (upper, upper_hit) = self.endpoint(cutoff, yhi)?;
        Ok(((lower, upper), (lower_hit, upper_hit)))
    }

    // Bisection between the estimate (inside) and the y-range bound (outside).
    // The inside end of the final bracket is returned so that it always
    // satisfies the defining inequality.
    fn endpoint(&self, cutoff: f64, bound: f64) -> Result<(f64, bool)> {
        let mut inside = self.estimate;
        let mut outside = bound;
        if (outside - inside).abs() == 0.0 {
            return Ok((inside, true));
        }
        let mut it = 0;
        while (outside - inside).abs() > BISECTION_TOL * inside.abs().max(1.0) && it < MAX_BISECTION {
            let mid = 0.5 * (inside + outside);
            if mid == inside || mid == outside {
                break;
            }
            if self.minus_two_log_ratio(mid)? <= cutoff {
                inside = mid;
            } else {
                outside = mid;
            }
            it += 1;
        }
        let hit_range = outside == bound;
        Ok((inside, hit_range))
    }
}

/// `r⁽¹⁾(μ)` or `r⁽²⁾(μ)` for the given samples and fits.
pub fn profile_ratio(
    mu: f64,
    mode: RatioMode,
    a: &NonProbSample,
    pf: &PropensityFit,
    of: Option<&OutcomeFit>,
) -> Result<f64> {
    RatioProfile::new(mode, a, pf, of)?.log_ratio(mu)
}

/// Adjusting factor with its two ingredients.
#[derive(Debug, Clone, Copy)]
pub struct AdjustingFactor {
    pub a: f64,
    /// Plug-in variance `v_IPW` or `v_PEL`.
    pub v: f64,
    /// `s₁` or `s₂`.
    pub s: f64,
}

/// `a₁ = v_IPW / s₁` with `s₁ = n_A⁻¹ Σ d̃_i (y_i - μ̂_IPW2)²`, or
/// `a₂ = v_PEL / s₂` with `s₂ = n_A⁻¹ Σ d̃_i (y_i - μ̂_PEL - (m̂_i - m̄^B) B̂_m)²`.
pub fn adjusting_factor(
    mode: RatioMode,
    a: &NonProbSample,
    b: &ProbSample,
    pf: &PropensityFit,
    of: Option<&OutcomeFit>,
) -> Result<AdjustingFactor> {
    let profile = RatioProfile::new(mode, a, pf, of)?;
    adjusting_factor_at(&profile, a, b, pf, of)
}

fn adjusting_factor_at(
    profile: &RatioProfile,
    a: &NonProbSample,
    b: &ProbSample,
    pf: &PropensityFit,
    of: Option<&OutcomeFit>,
) -> Result<AdjustingFactor> {
    let n_a = a.n() as f64;
    let mu = profile.estimate();
    let (v, s) = match (profile.mode(), of) {
        (RatioMode::R1, _) => {
            let s = pf
                .dtilde
                .iter()
                .zip(a.y())
                .map(|(d, y)| d * (y - mu).powi(2))
                .sum::<f64>()
                / n_a;
            (var_ipw_plugin(a, b, pf)?.v_total, s)
        }
        (RatioMode::R2, Some(of)) => {
            let bm = b_m_hat(&pf.dtilde, a.y(), of);
            let s = pf
                .dtilde
                .iter()
                .zip(a.y())
                .zip(&of.fitted_a)
                .map(|((d, y), m)| d * (y - mu - (m - of.mbar_b) * bm).powi(2))
                .sum::<f64>()
                / n_a;
            (var_pel_plugin(a, b, pf, of)?.v_total, s)
        }
        (RatioMode::R2, None) => {
            return Err(Error::Validation("the calibrated ratio needs an outcome fit".into()))
        }
    };
    if !(s > 0.0) {
        return Err(Error::Degenerate("adjusting factor undefined: s = 0 (constant response)".into()));
    }
    if !(v > 0.0) {
        return Err(Error::Degenerate("adjusting factor undefined: zero plug-in variance".into()));
    }
    Ok(AdjustingFactor { a: v / s, v, s })
}

fn pel_method(mode: RatioMode, bootstrap: bool) -> IntervalMethod {
    match (mode, bootstrap) {
        (RatioMode::R1, false) => IntervalMethod::Pel1Adj,
        (RatioMode::R1, true) => IntervalMethod::Pel1Bts,
        (RatioMode::R2, false) => IntervalMethod::Pel2Adj,
        (RatioMode::R2, true) => IntervalMethod::Pel2Bts,
    }
}

fn invert_into(
    profile: &RatioProfile,
    cutoff: f64,
    method: IntervalMethod,
    level: f64,
    calib: f64,
    mut diagnostics: BTreeMap<String, f64>,
) -> Result<IntervalResult> {
    let ((lower, upper), (lo_hit, hi_hit)) = profile.invert(cutoff)?;
    diagnostics.insert("cutoff".into(), cutoff);
    diagnostics.insert("lower_at_range".into(), f64::from(u8::from(lo_hit)));
    diagnostics.insert("upper_at_range".into(), f64::from(u8::from(hi_hit)));
    if !(upper > lower) {
        return Err(Error::Degenerate(format!("{method} interval has zero width")));
    }
    Ok(IntervalResult {
        estimate: profile.estimate(),
        lower,
        upper,
        method,
        level,
        calib,
        diagnostics,
    })
}

fn adjusted_from(
    profile: &RatioProfile,
    level: f64,
    a: &NonProbSample,
    b: &ProbSample,
    pf: &PropensityFit,
    of: Option<&OutcomeFit>,
) -> Result<IntervalResult> {
    check_level(level)?;
    let af = adjusting_factor_at(profile, a, b, pf, of)?;
    let chi2 = chi2_quantile(level, 1.0);
    let diag = BTreeMap::from([
        ("a".to_string(), af.a),
        ("v".to_string(), af.v),
        ("s".to_string(), af.s),
        ("chi2".to_string(), chi2),
    ]);
    invert_into(profile, af.a * chi2, pel_method(profile.mode(), false), level, af.a, diag)
}

/// `{μ : -2 r(μ)/a ≤ χ²₁(level)}`.
pub fn ci_pel_adjusted(
    mode: RatioMode,
    level: f64,
    a: &NonProbSample,
    b: &ProbSample,
    pf: &PropensityFit,
    of: Option<&OutcomeFit>,
) -> Result<IntervalResult> {
    let profile = RatioProfile::new(mode, a, pf, of)?;
    adjusted_from(&profile, level, a, b, pf, of)
}

fn bootstrap_from(profile: &RatioProfile, level: f64, run: &BootstrapRun) -> Result<IntervalResult> {
    check_level(level)?;
    let values = match profile.mode() {
        RatioMode::R1 => run.collect(|r| r.ratio1)?,
        RatioMode::R2 => run.collect(|r| r.ratio2)?,
    };
    let b_alpha = quantile(&values, level);
    let diag = BTreeMap::from([
        ("b_alpha".to_string(), b_alpha),
        ("replicates".to_string(), run.k() as f64),
        ("skipped".to_string(), (run.k() - values.len()) as f64),
    ]);
    invert_into(profile, b_alpha, pel_method(profile.mode(), true), level, b_alpha, diag)
}

fn targets_for(mode: RatioMode, mu: f64) -> BootstrapTargets {
    match mode {
        RatioMode::R1 => BootstrapTargets {
            mu_r1: Some(mu),
            mu_r2: None,
        },
        RatioMode::R2 => BootstrapTargets {
            mu_r1: None,
            mu_r2: Some(mu),
        },
    }
}

/// `{μ : -2 r(μ) ≤ b_α}` with `b_α` the `level` quantile of `-2 r` over
/// `K` bootstrap replicates, each evaluated at the original estimate.
pub fn ci_pel_bootstrap(
    mode: RatioMode,
    level: f64,
    a: &NonProbSample,
    b: &ProbSample,
    specs: &FitSpecs,
    k: usize,
    seed: u64,
) -> Result<IntervalResult> {
    check_level(level)?;
    check_k(k)?;
    let (pf, of) = specs.fit(a, b)?;
    let profile = RatioProfile::new(mode, a, &pf, Some(&of))?;
    let run = run_bootstrap(a, b, specs, k, seed, &targets_for(mode, profile.estimate()))?;
    bootstrap_from(&profile, level, &run)
}

fn check_k(k: usize) -> Result<()> {
    if k < 200 {
        return Err(Error::Validation(format!("bootstrap intervals need K ≥ 200, got {k}")));
    }
    Ok(())
}

fn wald(estimate: f64, variance: f64, level: f64, method: IntervalMethod) -> Result<IntervalResult> {
    check_level(level)?;
    assert!(variance >= 0.0 || variance.is_nan(), "negative variance {variance}");
    if !(variance > 0.0) {
        return Err(Error::Degenerate(format!("{method} interval has zero width")));
    }
    let z = normal_quantile(0.5 + 0.5 * level);
    let half = z * variance.sqrt();
    Ok(IntervalResult {
        estimate,
        lower: estimate - half,
        upper: estimate + half,
        method,
        level,
        calib: z,
        diagnostics: BTreeMap::from([("variance".to_string(), variance)]),
    })
}

/// Normal-approximation interval: Hájek estimate with `v_IPW` (`na1`) or
/// DR2 with its bootstrap variance (`na2`).
#[allow(clippy::too_many_arguments)]
pub fn ci_wald(
    method: IntervalMethod,
    level: f64,
    a: &NonProbSample,
    b: &ProbSample,
    pf: &PropensityFit,
    of: &OutcomeFit,
    k: usize,
    seed: u64,
) -> Result<IntervalResult> {
    match method {
        IntervalMethod::Na1 => wald(ipw2(a, pf)?.value, var_ipw_plugin(a, b, pf)?.v_total, level, method),
        IntervalMethod::Na2 => {
            if k < 50 {
                return Err(Error::Validation(format!("bootstrap variance needs K ≥ 50, got {k}")));
            }
            let specs = FitSpecs::from_fits(pf, of)?;
            let run = run_bootstrap(a, b, &specs, k, seed, &BootstrapTargets::default())?;
            na2_from(dr2(a, b, pf, of)?.value, level, &run)
        }
        other => Err(Error::Validation(format!("{other} is not a Wald interval"))),
    }
}

fn na2_from(estimate: f64, level: f64, run: &BootstrapRun) -> Result<IntervalResult> {
    let reps = run.estimates(EstimatorKind::Dr2)?;
    let mut r = wald(estimate, sample_variance(&reps), level, IntervalMethod::Na2)?;
    r.diagnostics.insert("skipped".into(), (run.k() - reps.len()) as f64);
    Ok(r)
}

fn percentile_from(estimate: f64, level: f64, run: &BootstrapRun) -> Result<IntervalResult> {
    check_level(level)?;
    let mut reps = run.estimates(EstimatorKind::Dr2)?;
    reps.sort_by(f64::total_cmp);
    let lower = crate::special::quantile_sorted(&reps, 0.5 - 0.5 * level);
    let upper = crate::special::quantile_sorted(&reps, 0.5 + 0.5 * level);
    if !(upper > lower) {
        return Err(Error::Degenerate("bst interval has zero width".into()));
    }
    Ok(IntervalResult {
        estimate,
        lower,
        upper,
        method: IntervalMethod::Bst,
        level,
        calib: level,
        diagnostics: BTreeMap::from([("skipped".to_string(), (run.k() - reps.len()) as f64)]),
    })
}

/// Percentile interval from `K` bootstrap replicates of the DR2 estimator.
pub fn ci_percentile(
    level: f64,
    a: &NonProbSample,
    b: &ProbSample,
    specs: &FitSpecs,
    k: usize,
    seed: u64,
) -> Result<IntervalResult> {
    check_level(level)?;
    check_k(k)?;
    let (pf, of) = specs.fit(a, b)?;
    let run = run_bootstrap(a, b, specs, k, seed, &BootstrapTargets::default())?;
    percentile_from(dr2(a, b, &pf, &of)?.value, level, &run)
}

/// Fitted models plus everything needed to produce any subset of the seven
/// intervals from a single shared set of bootstrap replicates.
#[derive(Debug, Clone)]
pub struct Analysis<'a> {
    pub a: &'a NonProbSample,
    pub b: &'a ProbSample,
    pub specs: FitSpecs,
    pub pf: PropensityFit,
    pub of: OutcomeFit,
}

impl<'a> Analysis<'a> {
    pub fn fit(a: &'a NonProbSample, b: &'a ProbSample, specs: &FitSpecs) -> Result<Self> {
        let (pf, of) = specs.fit(a, b)?;
        Ok(Self {
            a,
            b,
            specs: specs.clone(),
            pf,
            of,
        })
    }

    pub fn profile(&self, mode: RatioMode) -> Result<RatioProfile> {
        RatioProfile::new(mode, self.a, &self.pf, Some(&self.of))
    }

    /// Builds the requested intervals. Model-fit and profile failures abort;
    /// failures specific to one interval are returned in its slot.
    pub fn intervals(
        &self,
        methods: &[IntervalMethod],
        level: f64,
        k: usize,
        seed: u64,
    ) -> Result<Vec<(IntervalMethod, Result<IntervalResult>)>> {
        check_level(level)?;
        let need = |m: IntervalMethod| methods.contains(&m);
        let r1 = if need(IntervalMethod::Pel1Adj) || need(IntervalMethod::Pel1Bts) {
            Some(self.profile(RatioMode::R1))
        } else {
            None
        };
        let r2 = if need(IntervalMethod::Pel2Adj) || need(IntervalMethod::Pel2Bts) {
            Some(self.profile(RatioMode::R2))
        } else {
            None
        };
        // Methods whose replicate budget is too small fail individually; the
        // others still run.
        let k_ok = |m: IntervalMethod| k >= min_replicates(m);
        let run = if methods.iter().any(|&m| m.uses_bootstrap() && k_ok(m)) {
            let mu = |p: &Option<Result<RatioProfile>>, m: IntervalMethod| match p {
                Some(Ok(p)) if need(m) => Some(p.estimate()),
                _ => None,
            };
            let targets = BootstrapTargets {
                mu_r1: mu(&r1, IntervalMethod::Pel1Bts),
                mu_r2: mu(&r2, IntervalMethod::Pel2Bts),
            };
            Some(run_bootstrap(self.a, self.b, &self.specs, k, seed, &targets)?)
        } else {
            None
        };
        let with_profile = |p: &Option<Result<RatioProfile>>, f: &dyn Fn(&RatioProfile) -> Result<IntervalResult>, mode| {
            match p {
                Some(Ok(p)) => f(p),
                // rebuild to hand each method its own copy of the error
                _ => self.profile(mode).and_then(|p| f(&p)),
            }
        };
        let of = Some(&self.of);
        let mut out = Vec::with_capacity(methods.len());
        for &m in methods {
            if m.uses_bootstrap() && !k_ok(m) {
                let msg = format!("{m} needs K ≥ {}, got {k}", min_replicates(m));
                out.push((m, Err(Error::Validation(msg))));
                continue;
            }
            let res = match m {
                IntervalMethod::Pel1Adj => with_profile(
                    &r1,
                    &|p| adjusted_from(p, level, self.a, self.b, &self.pf, of),
                    RatioMode::R1,
                ),
                IntervalMethod::Pel2Adj => with_profile(
                    &r2,
                    &|p| adjusted_from(p, level, self.a, self.b, &self.pf, of),
                    RatioMode::R2,
                ),
                IntervalMethod::Pel1Bts => {
                    with_profile(&r1, &|p| bootstrap_from(p, level, run.as_ref().unwrap()), RatioMode::R1)
                }
                IntervalMethod::Pel2Bts => {
                    with_profile(&r2, &|p| bootstrap_from(p, level, run.as_ref().unwrap()), RatioMode::R2)
                }
                IntervalMethod::Na1 => ipw2(self.a, &self.pf).and_then(|e| {
                    wald(e.value, var_ipw_plugin(self.a, self.b, &self.pf)?.v_total, level, m)
                }),
                IntervalMethod::Na2 => {
                    dr2(self.a, self.b, &self.pf, &self.of).and_then(|e| na2_from(e.value, level, run.as_ref().unwrap()))
                }
                IntervalMethod::Bst => dr2(self.a, self.b, &self.pf, &self.of)
                    .and_then(|e| percentile_from(e.value, level, run.as_ref().unwrap())),
            };
            out.push((m, res));
        }
        Ok(out)
    }
}
