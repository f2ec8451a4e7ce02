//! Propensity-score and outcome-regression fits.
//!
//! The propensity model is logistic, `π(x, α) = expit(α'[1, x])`, and can be
//! estimated either by maximising the pseudo log-likelihood in which the
//! population term is replaced by its design-weighted estimate from the
//! reference sample, or by solving the calibration equations
//! `Σ_A x_i / π(x_i, α) = totals`. Both fits run damped Newton on internally
//! standardised covariates and report coefficients on the original scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Link, ModelSpec, NonProbSample, ProbSample};
use crate::error::{Error, Result};
use crate::linalg::{
    add_outer, expit, logit, norm, softplus, solve_spd, symmetrize, Rows, Standardizer,
};

/// Coefficient norm (standardised scale) beyond which a fit is declared separated.
pub const SEPARATION_NORM: f64 = 50.0;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsMethod {
    PseudoMl,
    Calibration,
    /// Scores handed in directly rather than estimated.
    Supplied,
}

#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub alpha: Vec<f64>,
    pub scores: Vec<f64>,
    pub dtilde: Vec<f64>,
    pub n_hat_a: f64,
    pub method: PsMethod,
    pub spec: ModelSpec,
}

impl PropensityFit {
    /// Wraps externally supplied propensity scores for the non-probability units.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Validation("propensity scores must lie in (0, 1]".into()));
        }
        Ok(Self::assemble(Vec::new(), scores, PsMethod::Supplied, ModelSpec::new(Link::Logit, vec![])))
    }

    fn assemble(alpha: Vec<f64>, scores: Vec<f64>, method: PsMethod, spec: ModelSpec) -> Self {
        let n_hat_a: f64 = scores.iter().map(|p| 1.0 / p).sum();
        let dtilde = scores.iter().map(|p| 1.0 / p / n_hat_a).collect();
        Self {
            alpha,
            scores,
            dtilde,
            n_hat_a,
            method,
            spec,
        }
    }

    /// Propensity scores at arbitrary covariate rows under the fitted α.
    pub fn scores_at(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if self.alpha.is_empty() {
            return Err(Error::Validation(
                "supplied propensity scores cannot be evaluated at new covariates".into(),
            ));
        }
        let z = Rows::from_matrix(&self.spec.design(x));
        Ok((0..z.n()).map(|i| expit(z.dot(i, &self.alpha))).collect())
    }
}

#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub beta: Vec<f64>,
    pub fitted_a: Vec<f64>,
    pub fitted_b: Vec<f64>,
    pub mbar_b: f64,
    pub spec: ModelSpec,
}

impl OutcomeFit {
    /// Builds a fit from given fitted values; `m̄^B` is computed from `b`.
    pub fn from_fitted(fitted_a: Vec<f64>, fitted_b: Vec<f64>, b: &ProbSample) -> Result<Self> {
        if fitted_b.len() != b.n() {
            return Err(Error::Validation("fitted values do not match reference sample".into()));
        }
        let mbar_b = weighted_mean(b.d(), &fitted_b);
        Ok(Self {
            beta: Vec::new(),
            fitted_a,
            fitted_b,
            mbar_b,
            spec: ModelSpec::new(Link::Identity, vec![]),
        })
    }
}

pub(crate) fn weighted_mean(w: &[f64], v: &[f64]) -> f64 {
    let num: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
    num / w.iter().sum::<f64>()
}

/// Damped Newton for a concave objective. `derivs` returns the gradient and
/// the negated Hessian (row-major).
fn damped_newton(
    routine: &'static str,
    x0: Vec<f64>,
    tol: f64,
    objective: impl Fn(&[f64]) -> f64,
    derivs: impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>),
) -> Result<Vec<f64>> {
    let mut x = x0;
    let mut f = objective(&x);
    for it in 0..MAX_ITER {
        let (grad, info) = derivs(&x);
        if norm(&grad) <= tol {
            return Ok(x);
        }
        let step = solve_spd(&info, &grad).ok_or(Error::RankDeficient(routine))?;
        let decrement: f64 = step.iter().zip(&grad).map(|(a, b)| a * b).sum();
        if decrement < 1e-24 * (1.0 + f.abs()) {
            return Ok(x);
        }
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let fc = objective(&cand);
            if fc.is_finite() && fc >= f - 1e-13 * (1.0 + f.abs()) {
                x = cand;
                f = fc;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::NonConvergence {
                    routine,
                    iterations: it,
                });
            }
        }
        if norm(&x) > SEPARATION_NORM {
            return Err(Error::Separation(routine));
        }
    }
    Err(Error::NonConvergence {
        routine,
        iterations: MAX_ITER,
    })
}

fn pml_objective_rows(alpha: &[f64], za: &Rows, zb: &Rows, d: &[f64]) -> f64 {
    let sa: f64 = (0..za.n()).map(|i| za.dot(i, alpha)).sum();
    let sb: f64 = (0..zb.n()).map(|i| d[i] * softplus(zb.dot(i, alpha))).sum();
    sa - sb
}

fn pml_derivs_rows(alpha: &[f64], za: &Rows, zb: &Rows, d: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = alpha.len();
    let mut grad = vec![0.0; p];
    for z in za.iter() {
        for (g, v) in grad.iter_mut().zip(z) {
            *g += v;
        }
    }
    let mut info = vec![0.0; p * p];
    for (i, z) in zb.iter().enumerate() {
        let pi = expit(z.iter().zip(alpha).map(|(a, b)| a * b).sum());
        for (g, v) in grad.iter_mut().zip(z) {
            *g -= d[i] * pi * v;
        }
        add_outer(&mut info, z, d[i] * pi * (1.0 - pi));
    }
    symmetrize(&mut info, p);
    (grad, info)
}

/// Pseudo log-likelihood `Σ_A α'z_i + Σ_B d_i log(1 - π_i)` for designs that
/// already contain the intercept column.
pub fn pml_loglik(alpha: &[f64], design_a: &DMatrix<f64>, design_b: &DMatrix<f64>, d: &[f64]) -> f64 {
    pml_objective_rows(alpha, &Rows::from_matrix(design_a), &Rows::from_matrix(design_b), d)
}

/// Analytic score of [`pml_loglik`]: `Σ_A z_i - Σ_B d_i π_i z_i`.
pub fn pml_score(alpha: &[f64], design_a: &DMatrix<f64>, design_b: &DMatrix<f64>, d: &[f64]) -> Vec<f64> {
    pml_derivs_rows(alpha, &Rows::from_matrix(design_a), &Rows::from_matrix(design_b), d).0
}

fn check_ps_spec(spec: &ModelSpec, q: usize) -> Result<()> {
    spec.check_columns(q)?;
    if spec.link != Link::Logit {
        return Err(Error::Validation("propensity model must use the logit link".into()));
    }
    Ok(())
}

fn initial_coef(p: usize, intercept: bool, rate: f64) -> Vec<f64> {
    let mut x = vec![0.0; p];
    if intercept {
        x[0] = logit(rate.clamp(1e-9, 1.0 - 1e-9));
    }
    x
}

/// Propensity fit by maximum pseudo-likelihood.
pub fn fit_propensity_pml(a: &NonProbSample, b: &ProbSample, spec: &ModelSpec) -> Result<PropensityFit> {
    const ROUTINE: &str = "propensity pseudo-likelihood";
    check_ps_spec(spec, a.q())?;
    let xa = spec.design(a.x());
    let xb = spec.design(b.x());
    let st = Standardizer::fit(&[&xa, &xb], spec.include_intercept).ok_or(Error::RankDeficient(ROUTINE))?;
    let za = st.apply(&xa);
    let zb = st.apply(&xb);
    let d = b.d();
    let x0 = initial_coef(spec.n_coef(), spec.include_intercept, a.n() as f64 / b.n_hat());
    let tol = 1e-11 * (a.n() as f64).max(100.0);
    let alpha_std = damped_newton(
        ROUTINE,
        x0,
        tol,
        |al| pml_objective_rows(al, &za, &zb, d),
        |al| pml_derivs_rows(al, &za, &zb, d),
    )?;
    let scores = (0..za.n()).map(|i| expit(za.dot(i, &alpha_std))).collect();
    let alpha = st.unscale(&alpha_std);
    Ok(PropensityFit::assemble(alpha, scores, PsMethod::PseudoMl, spec.clone()))
}

/// Population totals that the calibration equations match.
#[derive(Debug, Clone, Copy)]
pub enum CalibrationTotals<'a> {
    /// Known totals of the design columns (intercept total is `N`).
    Known(&'a [f64]),
    /// Design-weighted totals from the reference sample.
    Sample(&'a ProbSample),
}

/// Propensity fit by solving `Σ_A z_i / π(z_i, α) = totals` over the design
/// columns, the intercept equation included.
pub fn fit_propensity_calibration(
    a: &NonProbSample,
    spec: &ModelSpec,
    totals: CalibrationTotals<'_>,
) -> Result<PropensityFit> {
    const ROUTINE: &str = "propensity calibration";
    check_ps_spec(spec, a.q())?;
    let xa = spec.design(a.x());
    let p = spec.n_coef();
    let (target, st) = match totals {
        CalibrationTotals::Known(t) => {
            if t.len() != p {
                return Err(Error::Validation(format!(
                    "{} calibration totals given for {p} design columns",
                    t.len()
                )));
            }
            let st = Standardizer::fit(&[&xa], spec.include_intercept).ok_or(Error::RankDeficient(ROUTINE))?;
            (t.to_vec(), st)
        }
        CalibrationTotals::Sample(b) => {
            if b.q() != a.q() {
                return Err(Error::DimensionMismatch {
                    nonprob: a.q(),
                    prob: b.q(),
                });
            }
            let xb = spec.design(b.x());
            let t: Vec<f64> = (0..p)
                .map(|j| xb.column(j).iter().zip(b.d()).map(|(x, d)| x * d).sum())
                .collect();
            let st = Standardizer::fit(&[&xa, &xb], spec.include_intercept).ok_or(Error::RankDeficient(ROUTINE))?;
            (t, st)
        }
    };
    let za = st.apply(&xa);
    let target_std = st.totals(&target);
    let rate = if spec.include_intercept { a.n() as f64 / target[0] } else { 0.5 };
    let x0 = initial_coef(p, spec.include_intercept, rate);
    let tol = 1e-10 * norm(&target_std).max(1.0);

    // Concave potential whose gradient is the calibration residual.
    let objective = |al: &[f64]| -> f64 {
        let mut g = 0.0;
        for z in za.iter() {
            let eta: f64 = z.iter().zip(al).map(|(a, b)| a * b).sum();
            g += eta - (-eta).exp();
        }
        g - al.iter().zip(&target_std).map(|(a, t)| a * t).sum::<f64>()
    };
    let derivs = |al: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut grad: Vec<f64> = target_std.iter().map(|t| -t).collect();
        let mut info = vec![0.0; p * p];
        for z in za.iter() {
            let eta: f64 = z.iter().zip(al).map(|(a, b)| a * b).sum();
            let e = (-eta).exp();
            for (g, v) in grad.iter_mut().zip(z) {
                *g += (1.0 + e) * v;
            }
            add_outer(&mut info, z, e);
        }
        symmetrize(&mut info, p);
        (grad, info)
    };
    let alpha_std = damped_newton(ROUTINE, x0, tol, objective, derivs)?;
    let scores: Vec<f64> = (0..za.n()).map(|i| expit(za.dot(i, &alpha_std))).collect();

    // Residual on the original scale.
    let mut resid: Vec<f64> = target.iter().map(|t| -t).collect();
    for (i, s) in scores.iter().enumerate() {
        for (j, r) in resid.iter_mut().enumerate() {
            *r += xa[(i, j)] / s;
        }
    }
    if norm(&resid) > 1e-6 * norm(&target) {
        return Err(Error::NonConvergence {
            routine: ROUTINE,
            iterations: MAX_ITER,
        });
    }
    let alpha = st.unscale(&alpha_std);
    Ok(PropensityFit::assemble(alpha, scores, PsMethod::Calibration, spec.clone()))
}

/// Fits the propensity model by the chosen route, calibrating to the
/// reference-sample totals for [`PsMethod::Calibration`].
pub fn fit_propensity(
    a: &NonProbSample,
    b: &ProbSample,
    spec: &ModelSpec,
    method: PsMethod,
) -> Result<PropensityFit> {
    match method {
        PsMethod::PseudoMl => fit_propensity_pml(a, b, spec),
        PsMethod::Calibration => fit_propensity_calibration(a, spec, CalibrationTotals::Sample(b)),
        PsMethod::Supplied => Err(Error::Validation("supplied scores cannot be fitted".into())),
    }
}

fn logit_loglik_rows(beta: &[f64], z: &Rows, y: &[f64]) -> f64 {
    (0..z.n())
        .map(|i| {
            let eta = z.dot(i, beta);
            y[i] * eta - softplus(eta)
        })
        .sum()
}

fn logit_derivs_rows(beta: &[f64], z: &Rows, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = beta.len();
    let mut grad = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    for (i, zi) in z.iter().enumerate() {
        let mu = expit(zi.iter().zip(beta).map(|(a, b)| a * b).sum());
        for (g, v) in grad.iter_mut().zip(zi) {
            *g += (y[i] - mu) * v;
        }
        add_outer(&mut info, zi, mu * (1.0 - mu));
    }
    symmetrize(&mut info, p);
    (grad, info)
}

/// Bernoulli log-likelihood of a logistic model on a design with intercept column.
pub fn logit_loglik(beta: &[f64], design: &DMatrix<f64>, y: &[f64]) -> f64 {
    logit_loglik_rows(beta, &Rows::from_matrix(design), y)
}

/// Analytic score of [`logit_loglik`]: `Σ (y_i - μ_i) z_i`.
pub fn logit_score(beta: &[f64], design: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    logit_derivs_rows(beta, &Rows::from_matrix(design), y).0
}

/// Outcome regression on the non-probability sample, with fitted values on
/// both samples and the design-weighted mean of the reference fits.
pub fn fit_outcome(a: &NonProbSample, spec: &ModelSpec, b: &ProbSample) -> Result<OutcomeFit> {
    spec.check_columns(a.q())?;
    if b.q() != a.q() {
        return Err(Error::DimensionMismatch {
            nonprob: a.q(),
            prob: b.q(),
        });
    }
    let xa = spec.design(a.x());
    let xb = spec.design(b.x());
    let y = a.y();
    let p = spec.n_coef();
    let beta = match spec.link {
        Link::Identity => {
            const ROUTINE: &str = "outcome least squares";
            let st = Standardizer::fit(&[&xa], spec.include_intercept).ok_or(Error::RankDeficient(ROUTINE))?;
            let za = st.apply(&xa);
            let mut gram = vec![0.0; p * p];
            let mut rhs = vec![0.0; p];
            for (i, z) in za.iter().enumerate() {
                add_outer(&mut gram, z, 1.0);
                for (r, v) in rhs.iter_mut().zip(z) {
                    *r += y[i] * v;
                }
            }
            symmetrize(&mut gram, p);
            let beta_std = solve_spd(&gram, &rhs).ok_or(Error::RankDeficient(ROUTINE))?;
            st.unscale(&beta_std)
        }
        Link::Logit => {
            const ROUTINE: &str = "outcome logistic regression";
            if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation(format!(
                    "logit outcome model needs binary y, found {} at row {}",
                    y[i],
                    i + 1
                )));
            }
            let st = Standardizer::fit(&[&xa], spec.include_intercept).ok_or(Error::RankDeficient(ROUTINE))?;
            let za = st.apply(&xa);
            let ybar = y.iter().sum::<f64>() / y.len() as f64;
            if spec.include_intercept && (ybar == 0.0 || ybar == 1.0) {
                return Err(Error::Separation(ROUTINE));
            }
            let x0 = initial_coef(p, spec.include_intercept, ybar);
            let tol = 1e-11 * (a.n() as f64).max(100.0);
            let beta_std = damped_newton(
                ROUTINE,
                x0,
                tol,
                |be| logit_loglik_rows(be, &za, y),
                |be| logit_derivs_rows(be, &za, y),
            )?;
            st.unscale(&beta_std)
        }
    };
    let predict = |x: &DMatrix<f64>| -> Vec<f64> {
        let z = Rows::from_matrix(x);
        (0..z.n())
            .map(|i| {
                let eta = z.dot(i, &beta);
                match spec.link {
                    Link::Identity => eta,
                    Link::Logit => expit(eta),
                }
            })
            .collect()
    };
    let fitted_a = predict(&xa);
    let fitted_b = predict(&xb);
    let mbar_b = weighted_mean(b.d(), &fitted_b);
    Ok(OutcomeFit {
        beta,
        fitted_a,
        fitted_b,
        mbar_b,
        spec: spec.clone(),
    })
}
