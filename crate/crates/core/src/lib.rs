//! Pseudo empirical likelihood inference for non-probability survey samples.
//!
//! A non-probability sample carries the study variable `y` and covariates
//! `x`; a reference probability sample carries `x` and design weights. The
//! crate fits a logistic propensity model and an outcome regression, computes
//! inverse-probability-weighted, doubly robust and pseudo empirical
//! likelihood (PEL) estimates of the population mean, and builds PEL ratio
//! confidence intervals calibrated either by an adjusted χ²₁ limit or by the
//! bootstrap. The [`sim`] module reproduces the accompanying Monte Carlo study.
//!
//! ```no_run
//! use nonprob_pel::prelude::*;
//!
//! # fn main() -> nonprob_pel::Result<()> {
//! let a = load_nonprob_sample("nonprob.csv", "y", &["x1", "x2"])?;
//! let b = load_prob_sample("prob.csv", "w", &["x1", "x2"])?;
//! let specs = FitSpecs::new(ModelSpec::logit_all(2), PsMethod::PseudoMl, ModelSpec::logit_all(2));
//! let analysis = Analysis::fit(&a, &b, &specs)?;
//! for (method, ci) in analysis.intervals(&IntervalMethod::ALL, 0.95, 1000, 1)? {
//!     let ci = ci?;
//!     println!("{method}: [{:.4}, {:.4}]", ci.lower, ci.upper);
//! }
//! # Ok(())
//! # }
//! ```

// `!(x > 0.0)`-style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod el;
pub mod error;
pub mod estimators;
pub mod inference;
pub(crate) mod linalg;
pub mod models;
pub mod sim;
pub mod special;
pub mod variance;

pub use error::{Error, Result};

/// Commonly used types and functions.
pub mod prelude {
    pub use crate::bootstrap::{run_bootstrap, BootstrapTargets, FitSpecs};
    pub use crate::data::{
        load_nonprob_sample, load_prob_sample, validate_pair, Link, ModelSpec, NonProbSample, PopulationFrame,
        ProbSample,
    };
    pub use crate::el::{solve_el, ElProfile, ElSolution};
    pub use crate::error::{Error, Result};
    pub use crate::estimators::{
        dr1, dr2, estimate_dr, estimate_ipw, estimate_pel, ipw1, ipw2, EstimatorKind, PointEstimate,
    };
    pub use crate::inference::{
        adjusting_factor, ci_pel_adjusted, ci_pel_bootstrap, ci_percentile, ci_wald, profile_ratio, Analysis,
        IntervalMethod, IntervalResult, RatioMode, RatioProfile,
    };
    pub use crate::models::{fit_outcome, fit_propensity, OutcomeFit, PropensityFit, PsMethod};
    pub use crate::variance::{bootstrap_variance, design_var_b, var_ipw_plugin, var_pel_plugin, VarianceComponents};
}
