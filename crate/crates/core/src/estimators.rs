//! Point estimators of the population mean.

use serde::{Deserialize, Serialize};

use crate::data::{NonProbSample, ProbSample};
use crate::el::{solve_el, ElSolution};
use crate::error::{Error, Result};
use crate::models::{OutcomeFit, PropensityFit};

/// Below this, `Σ d̃_i (m̂_i - m̄^B)²` is treated as zero and `B̂_m := 0`.
pub const BM_DENOM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ipw1,
    Ipw2,
    Dr1,
    Dr2,
    Pel,
}

impl EstimatorKind {
    pub fn tag(self) -> &'static str {
        match self {
            EstimatorKind::Ipw1 => "ipw1",
            EstimatorKind::Ipw2 => "ipw2",
            EstimatorKind::Dr1 => "dr1",
            EstimatorKind::Dr2 => "dr2",
            EstimatorKind::Pel => "pel",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ipw1" => EstimatorKind::Ipw1,
            "ipw2" => EstimatorKind::Ipw2,
            "dr1" => EstimatorKind::Dr1,
            "dr2" => EstimatorKind::Dr2,
            "pel" => EstimatorKind::Pel,
            other => return Err(Error::Validation(format!("unknown estimator `{other}`"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct PointEstimate {
    pub value: f64,
    pub method: EstimatorKind,
    /// `B̂_m`, populated for the PEL estimator with model calibration.
    pub b_m_hat: Option<f64>,
    pub el: Option<ElSolution>,
}

impl PointEstimate {
    fn plain(value: f64, method: EstimatorKind) -> Self {
        Self {
            value,
            method,
            b_m_hat: None,
            el: None,
        }
    }
}

fn check_lengths(a: &NonProbSample, pf: &PropensityFit) -> Result<()> {
    if pf.scores.len() != a.n() {
        return Err(Error::Validation(format!(
            "{} propensity scores for {} units",
            pf.scores.len(),
            a.n()
        )));
    }
    Ok(())
}

fn require_n(n_pop: Option<f64>, what: &str) -> Result<f64> {
    match n_pop {
        Some(n) if n > 0.0 => Ok(n),
        Some(n) => Err(Error::Validation(format!("population size must be positive, got {n}"))),
        None => Err(Error::Validation(format!("{what} requires the population size N"))),
    }
}

fn ipw_sum(y: &[f64], scores: &[f64]) -> f64 {
    y.iter().zip(scores).map(|(y, p)| y / p).sum()
}

/// `Σ_A y_i / π̂_i / N`.
pub fn ipw1(a: &NonProbSample, pf: &PropensityFit, n_pop: f64) -> Result<PointEstimate> {
    check_lengths(a, pf)?;
    let n = require_n(Some(n_pop), "ipw1")?;
    Ok(PointEstimate::plain(ipw_sum(a.y(), &pf.scores) / n, EstimatorKind::Ipw1))
}

/// Hájek form: `Σ_A y_i / π̂_i / N̂^A`.
pub fn ipw2(a: &NonProbSample, pf: &PropensityFit) -> Result<PointEstimate> {
    check_lengths(a, pf)?;
    // Σ d̃_i y_i, summed in the same order as the PEL estimator at p = d̃.
    let value = pf.dtilde.iter().zip(a.y()).map(|(p, y)| p * y).sum();
    Ok(PointEstimate::plain(value, EstimatorKind::Ipw2))
}

/// Both inverse-probability-weighted estimators; `N` is required.
pub fn estimate_ipw(
    a: &NonProbSample,
    pf: &PropensityFit,
    n_pop: Option<f64>,
) -> Result<(PointEstimate, PointEstimate)> {
    let n = require_n(n_pop, "ipw1")?;
    Ok((ipw1(a, pf, n)?, ipw2(a, pf)?))
}

fn check_outcome(a: &NonProbSample, b: &ProbSample, of: &OutcomeFit) -> Result<()> {
    if of.fitted_a.len() != a.n() || of.fitted_b.len() != b.n() {
        return Err(Error::Validation("fitted values do not match the samples".into()));
    }
    Ok(())
}

fn dr_parts(a: &NonProbSample, b: &ProbSample, pf: &PropensityFit, of: &OutcomeFit) -> (f64, f64) {
    let resid: f64 = a
        .y()
        .iter()
        .zip(&of.fitted_a)
        .zip(&pf.scores)
        .map(|((y, m), p)| (y - m) / p)
        .sum();
    let model: f64 = b.d().iter().zip(&of.fitted_b).map(|(d, m)| d * m).sum();
    (resid, model)
}

/// `N⁻¹ Σ_A (y_i - m̂_i)/π̂_i + N⁻¹ Σ_B d_i m̂_i`.
pub fn dr1(a: &NonProbSample, b: &ProbSample, pf: &PropensityFit, of: &OutcomeFit, n_pop: f64) -> Result<PointEstimate> {
    check_lengths(a, pf)?;
    check_outcome(a, b, of)?;
    let n = require_n(Some(n_pop), "dr1")?;
    let (resid, model) = dr_parts(a, b, pf, of);
    Ok(PointEstimate::plain(resid / n + model / n, EstimatorKind::Dr1))
}

/// As [`dr1`] with `N̂^A` and `N̂^B` in the two denominators.
pub fn dr2(a: &NonProbSample, b: &ProbSample, pf: &PropensityFit, of: &OutcomeFit) -> Result<PointEstimate> {
    check_lengths(a, pf)?;
    check_outcome(a, b, of)?;
    let (resid, model) = dr_parts(a, b, pf, of);
    Ok(PointEstimate::plain(resid / pf.n_hat_a + model / b.n_hat(), EstimatorKind::Dr2))
}

pub fn estimate_dr(
    a: &NonProbSample,
    b: &ProbSample,
    pf: &PropensityFit,
    of: &OutcomeFit,
    n_pop: Option<f64>,
) -> Result<(PointEstimate, PointEstimate)> {
    let n = require_n(n_pop, "dr1")?;
    Ok((dr1(a, b, pf, of, n)?, dr2(a, b, pf, of)?))
}

/// Model-calibration constraint column `m̂_i - m̄^B` on the non-probability sample.
pub fn calibration_column(of: &OutcomeFit) -> Vec<f64> {
    of.fitted_a.iter().map(|m| m - of.mbar_b).collect()
}

/// `B̂_m = Σ d̃_i (m̂_i - m̄^B) y_i / Σ d̃_i (m̂_i - m̄^B)²`, zero when the
/// denominator vanishes.
pub fn b_m_hat(dtilde: &[f64], y: &[f64], of: &OutcomeFit) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((d, y), m) in dtilde.iter().zip(y).zip(&of.fitted_a) {
        let c = m - of.mbar_b;
        num += d * c * y;
        den += d * c * c;
    }
    if den < BM_DENOM_TOL {
        0.0
    } else {
        num / den
    }
}

/// Maximum pseudo empirical likelihood estimator `Σ p̂_i y_i`, with the
/// model-calibration constraint when an outcome fit is given.
pub fn estimate_pel(a: &NonProbSample, pf: &PropensityFit, of: Option<&OutcomeFit>) -> Result<PointEstimate> {
    check_lengths(a, pf)?;
    let (el, b_m) = match of {
        None => (solve_el(&pf.dtilde, &[])?, None),
        Some(of) => {
            if of.fitted_a.len() != a.n() {
                return Err(Error::Validation("fitted values do not match the sample".into()));
            }
            let g = calibration_column(of);
            let sol = solve_el(&pf.dtilde, &[&g])?;
            if !sol.feasible {
                return Err(Error::Infeasible(format!(
                    "calibration target m̄^B = {} lies outside the range of fitted values",
                    of.mbar_b
                )));
            }
            (sol, Some(b_m_hat(&pf.dtilde, a.y(), of)))
        }
    };
    let value = el.p.iter().zip(a.y()).map(|(p, y)| p * y).sum();
    Ok(PointEstimate {
        value,
        method: EstimatorKind::Pel,
        b_m_hat: b_m,
        el: Some(el),
    })
}

/// Gap between the PEL estimator and its linear approximation
/// `μ̂_IPW2 + (m̄^B - m̄_IPW2) B̂_m`.
pub fn linearization_check(a: &NonProbSample, pf: &PropensityFit, of: &OutcomeFit) -> Result<f64> {
    let pel = estimate_pel(a, pf, Some(of))?;
    let ipw = ipw2(a, pf)?.value;
    let m_ipw: f64 = pf.dtilde.iter().zip(&of.fitted_a).map(|(d, m)| d * m).sum();
    let bm = pel.b_m_hat.unwrap_or(0.0);
    if pel.el.as_ref().is_some_and(|e| e.lambda.iter().all(|&l| l == 0.0)) {
        // constraint already satisfied at the global maximiser
        return Ok(0.0);
    }
    Ok(pel.value - (ipw + (of.mbar_b - m_ipw) * bm))
}
