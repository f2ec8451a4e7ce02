//! Plug-in asymptotic variances for the Hájek and pseudo empirical likelihood
//! estimators, and the bootstrap variance used for Wald intervals.
//!
//! The population-level variance of the PEL estimator is
//!
//! ```text
//! V = N⁻² Σ_U (1-π_i)/π_i · (y_i - m_i B* - h - π_i x_i'b)²  +  N⁻² V_p(Σ_B d_i t_i)
//! B* = Σ_U (m_i - m̄) y_i / Σ_U (m_i - m̄)²
//! h  = N⁻¹ Σ_U (y_i - m_i B*)
//! b  = [Σ_U π_i(1-π_i) x_i x_i']⁻¹ Σ_U (1-π_i)(y_i - m_i B* - h) x_i
//! t_i = m_i B* + π_i x_i'b - m̄ B*
//! ```
//!
//! with `x_i` the propensity design row (intercept included). Population sums
//! are replaced by sample sums as follows:
//!
//! * sums involving `y` are estimated over the non-probability sample with
//!   inverse-propensity weights `1/π̂_i`;
//! * sums involving only `x`, `m` and `π` are estimated over the reference
//!   sample with design weights `d_i`, where `π̂_i` is the fitted propensity
//!   evaluated at the reference units;
//! * every sum is divided by its own estimated population size (`N̂^A` or
//!   `N̂^B`) so ratios of sums estimated from different samples stay on the
//!   same scale, and `N̂ = N̂^A` is used for the leading `N⁻²`.
//!
//! With `B* = 0` the formula is the asymptotic variance of the Hájek
//! estimator, which is how [`var_ipw_plugin`] is computed.

use nalgebra::DMatrix;

use crate::bootstrap::{run_bootstrap, BootstrapTargets, FitSpecs};
use crate::data::{NonProbSample, ProbSample};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, BM_DENOM_TOL};
use crate::linalg::{add_outer, solve_spd, symmetrize, Rows};
use crate::models::{OutcomeFit, PropensityFit};

#[derive(Debug, Clone)]
pub struct VarianceComponents {
    /// `v_a + v_b`.
    pub v_total: f64,
    /// Propensity-model component.
    pub v_a: f64,
    /// Design component for the reference sample.
    pub v_b: f64,
    pub b_m_star: f64,
    pub h: f64,
    pub b: Vec<f64>,
    /// `t̂_i` on the reference sample.
    pub t: Vec<f64>,
}

/// With-replacement approximation to the design variance of `Σ_B d_i t_i`:
/// `n/(n-1) Σ (d_i t_i - n⁻¹ Σ_j d_j t_j)²`.
pub fn design_var_b(b: &ProbSample, t: &[f64]) -> Result<f64> {
    let n = b.n();
    if n < 2 {
        return Err(Error::Validation(format!("design variance needs n_B ≥ 2, got {n}")));
    }
    if t.len() != n {
        return Err(Error::Validation(format!("{} values for {n} reference units", t.len())));
    }
    let u: Vec<f64> = b.d().iter().zip(t).map(|(d, t)| d * t).collect();
    let mean = u.iter().sum::<f64>() / n as f64;
    let ss: f64 = u.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(n as f64 / (n as f64 - 1.0) * ss)
}

/// Outcome-model quantities entering the plug-in; `None` means `B* = 0`.
struct ModelPart<'a> {
    m_a: &'a [f64],
    m_b: &'a [f64],
    mbar: f64,
}

fn plugin(a: &NonProbSample, b: &ProbSample, pf: &PropensityFit, model: Option<ModelPart>) -> Result<VarianceComponents> {
    const ROUTINE: &str = "variance plug-in for b";
    if pf.scores.len() != a.n() {
        return Err(Error::Validation("propensity scores do not match the sample".into()));
    }
    let y = a.y();
    let pi_a = &pf.scores;
    let pi_b = pf.scores_at(b.x())?;
    let n_hat_a = pf.n_hat_a;
    let n_hat_b = b.n_hat();

    let b_star = match &model {
        None => 0.0,
        Some(mp) => {
            // B* = Σ_U (m - m̄) y / Σ_U (m - m̄)². Both sums are estimated over
            // S_A with the same 1/π̂ weights, so the ratio stays stable when the
            // weights are off: y tracks m whatever the weighting, whereas mixing
            // an S_A numerator with an S_B denominator does not cancel the bias.
            let (num, den) = mp.m_a.iter().zip(y).zip(pi_a).fold((0.0, 0.0), |(n, d), ((m, y), p)| {
                let c = m - mp.mbar;
                (n + c * y / p, d + c * c / p)
            });
            let (num, den) = (num / n_hat_a, den / n_hat_a);
            if den < BM_DENOM_TOL {
                0.0
            } else {
                num / den
            }
        }
    };
    let m_a = |i: usize| model.as_ref().map_or(0.0, |mp| mp.m_a[i]);
    let m_b = |i: usize| model.as_ref().map_or(0.0, |mp| mp.m_b[i]);
    let mbar = model.as_ref().map_or(0.0, |mp| mp.mbar);

    // h ≈ Σ_A (y - m B*) / π̂ / N̂^A
    let h = (0..a.n()).map(|i| (y[i] - m_a(i) * b_star) / pi_a[i]).sum::<f64>() / n_hat_a;
    let e: Vec<f64> = (0..a.n()).map(|i| y[i] - m_a(i) * b_star - h).collect();

    let xa = Rows::from_matrix(&design_with_intercept(pf, a.x()));
    let xb = Rows::from_matrix(&design_with_intercept(pf, b.x()));
    let p = xa.p;
    let mut gram = vec![0.0; p * p];
    for (i, xi) in xb.iter().enumerate() {
        add_outer(&mut gram, xi, b.d()[i] * pi_b[i] * (1.0 - pi_b[i]) / n_hat_b);
    }
    symmetrize(&mut gram, p);
    let mut rhs = vec![0.0; p];
    for (i, xi) in xa.iter().enumerate() {
        let w = (1.0 - pi_a[i]) / pi_a[i] * e[i] / n_hat_a;
        for (r, v) in rhs.iter_mut().zip(xi) {
            *r += w * v;
        }
    }
    let b_hat = if rhs.iter().all(|&v| v == 0.0) {
        vec![0.0; p]
    } else {
        solve_spd(&gram, &rhs).ok_or(Error::RankDeficient(ROUTINE))?
    };

    let v_a = (0..a.n())
        .map(|i| {
            let r = e[i] - pi_a[i] * xa.dot(i, &b_hat);
            (1.0 - pi_a[i]) / (pi_a[i] * pi_a[i]) * r * r
        })
        .sum::<f64>()
        / (n_hat_a * n_hat_a);
    let t: Vec<f64> = (0..b.n())
        .map(|i| m_b(i) * b_star + pi_b[i] * xb.dot(i, &b_hat) - mbar * b_star)
        .collect();
    let v_b = design_var_b(b, &t)? / (n_hat_a * n_hat_a);
    Ok(VarianceComponents {
        v_total: v_a + v_b,
        v_a,
        v_b,
        b_m_star: b_star,
        h,
        b: b_hat,
        t,
    })
}

// The b-vector regresses on the propensity design, which always carries an
// intercept in the asymptotic expansion.
fn design_with_intercept(pf: &PropensityFit, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut spec = pf.spec.clone();
    spec.include_intercept = true;
    spec.design(x)
}

/// Plug-in estimate `v_PEL` of the variance of the model-calibrated PEL estimator.
pub fn var_pel_plugin(a: &NonProbSample, b: &ProbSample, pf: &PropensityFit, of: &OutcomeFit) -> Result<VarianceComponents> {
    if of.fitted_a.len() != a.n() || of.fitted_b.len() != b.n() {
        return Err(Error::Validation("fitted values do not match the samples".into()));
    }
    plugin(
        a,
        b,
        pf,
        Some(ModelPart {
            m_a: &of.fitted_a,
            m_b: &of.fitted_b,
            mbar: of.mbar_b,
        }),
    )
}

/// Plug-in estimate `v_IPW` of the variance of the Hájek estimator.
pub fn var_ipw_plugin(a: &NonProbSample, b: &ProbSample, pf: &PropensityFit) -> Result<VarianceComponents> {
    plugin(a, b, pf, None)
}

/// Sample variance of `K` bootstrap replicates of a point estimator, each
/// refitting both working models on with-replacement resamples of the two
/// samples.
pub fn bootstrap_variance(
    estimator: EstimatorKind,
    a: &NonProbSample,
    b: &ProbSample,
    specs: &FitSpecs,
    k: usize,
    seed: u64,
) -> Result<f64> {
    if k < 50 {
        return Err(Error::Validation(format!("bootstrap variance needs K ≥ 50, got {k}")));
    }
    let run = run_bootstrap(a, b, specs, k, seed, &BootstrapTargets::default())?;
    let values = run.estimates(estimator)?;
    Ok(sample_variance(&values))
}

pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}
