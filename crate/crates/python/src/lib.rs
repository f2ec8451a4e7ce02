//! Python bindings for `nonprob_pel`.

use std::collections::BTreeMap;

use nonprob_pel::bootstrap::FitSpecs;
use nonprob_pel::data::{Link, ModelSpec};
use nonprob_pel::estimators;
use nonprob_pel::inference::{Analysis, IntervalMethod, IntervalResult};
use nonprob_pel::models::PsMethod;
use nonprob_pel::sim::{summarize, OutputFormat, ScenarioConfig};
use nonprob_pel::{el, models, special, Error};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(nonprob_pel_py, SolverError, PyException);

fn to_py(e: Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        SolverError::new_err(e.to_string())
    }
}

/// Non-probability sample: covariate rows and the study variable.
#[pyclass(frozen)]
struct NonProbSample(nonprob_pel::data::NonProbSample);

#[pymethods]
impl NonProbSample {
    #[new]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Self> {
        nonprob_pel::data::NonProbSample::from_rows(&x, y).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_csv(path: &str, y: &str, x: Vec<String>) -> PyResult<Self> {
        let x: Vec<&str> = x.iter().map(String::as_str).collect();
        nonprob_pel::data::load_nonprob_sample(path, y, &x).map(Self).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.0.y().to_vec()
    }
}

/// Reference probability sample: covariate rows and design weights.
#[pyclass(frozen)]
struct ProbSample(nonprob_pel::data::ProbSample);

#[pymethods]
impl ProbSample {
    #[new]
    fn new(x: Vec<Vec<f64>>, d: Vec<f64>) -> PyResult<Self> {
        nonprob_pel::data::ProbSample::from_rows(&x, d).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_csv(path: &str, weight: &str, x: Vec<String>) -> PyResult<Self> {
        let x: Vec<&str> = x.iter().map(String::as_str).collect();
        nonprob_pel::data::load_prob_sample(path, weight, &x).map(Self).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn n_hat(&self) -> f64 {
        self.0.n_hat()
    }
}

/// A confidence interval with its calibration constant and solver diagnostics.
#[pyclass(frozen, get_all)]
struct Interval {
    method: String,
    estimate: f64,
    lower: f64,
    upper: f64,
    level: f64,
    calib: f64,
    diagnostics: BTreeMap<String, f64>,
}

impl From<IntervalResult> for Interval {
    fn from(r: IntervalResult) -> Self {
        Self {
            method: r.method.tag().to_string(),
            estimate: r.estimate,
            lower: r.lower,
            upper: r.upper,
            level: r.level,
            calib: r.calib,
            diagnostics: r.diagnostics,
        }
    }
}

#[pymethods]
impl Interval {
    fn __repr__(&self) -> String {
        format!(
            "Interval(method='{}', estimate={:.6}, lower={:.6}, upper={:.6})",
            self.method, self.estimate, self.lower, self.upper
        )
    }
}

fn specs(q: usize, ps_columns: Option<Vec<usize>>, or_columns: Option<Vec<usize>>, or_link: &str, ps_method: &str) -> PyResult<FitSpecs> {
    let link = match or_link {
        "logit" => Link::Logit,
        "identity" => Link::Identity,
        other => return Err(PyValueError::new_err(format!("unknown link `{other}`"))),
    };
    let method = match ps_method {
        "pml" => PsMethod::PseudoMl,
        "calibration" => PsMethod::Calibration,
        other => return Err(PyValueError::new_err(format!("unknown propensity method `{other}`"))),
    };
    let all: Vec<usize> = (0..q).collect();
    Ok(FitSpecs::new(
        ModelSpec::new(Link::Logit, ps_columns.unwrap_or_else(|| all.clone())),
        method,
        ModelSpec::new(link, or_columns.unwrap_or(all)),
    ))
}

/// Point estimates `{"ipw2", "dr2", "pel"}` (plus `ipw1`, `dr1` when `N` is given).
#[pyfunction]
#[pyo3(signature = (a, b, ps_columns=None, or_columns=None, or_link="logit", ps_method="pml", N=None))]
#[allow(non_snake_case)]
fn estimate(
    a: &NonProbSample,
    b: &ProbSample,
    ps_columns: Option<Vec<usize>>,
    or_columns: Option<Vec<usize>>,
    or_link: &str,
    ps_method: &str,
    N: Option<f64>,
) -> PyResult<BTreeMap<String, f64>> {
    let s = specs(a.0.q(), ps_columns, or_columns, or_link, ps_method)?;
    let (pf, of) = s.fit(&a.0, &b.0).map_err(to_py)?;
    let mut out = BTreeMap::new();
    out.insert("ipw2".into(), estimators::ipw2(&a.0, &pf).map_err(to_py)?.value);
    out.insert("dr2".into(), estimators::dr2(&a.0, &b.0, &pf, &of).map_err(to_py)?.value);
    out.insert("pel".into(), estimators::estimate_pel(&a.0, &pf, Some(&of)).map_err(to_py)?.value);
    if let Some(n) = N {
        out.insert("ipw1".into(), estimators::ipw1(&a.0, &pf, n).map_err(to_py)?.value);
        out.insert("dr1".into(), estimators::dr1(&a.0, &b.0, &pf, &of, n).map_err(to_py)?.value);
    }
    Ok(out)
}

/// Confidence intervals for the requested methods (default: all seven).
#[pyfunction]
#[pyo3(signature = (a, b, methods=None, level=0.95, K=1000, seed=1, ps_columns=None, or_columns=None, or_link="logit", ps_method="pml"))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn intervals(
    py: Python<'_>,
    a: &NonProbSample,
    b: &ProbSample,
    methods: Option<Vec<String>>,
    level: f64,
    K: usize,
    seed: u64,
    ps_columns: Option<Vec<usize>>,
    or_columns: Option<Vec<usize>>,
    or_link: &str,
    ps_method: &str,
) -> PyResult<Vec<Interval>> {
    let s = specs(a.0.q(), ps_columns, or_columns, or_link, ps_method)?;
    let methods: Vec<IntervalMethod> = match methods {
        None => IntervalMethod::ALL.to_vec(),
        Some(list) => list
            .iter()
            .map(|m| m.parse::<IntervalMethod>())
            .collect::<Result<_, _>>()
            .map_err(to_py)?,
    };
    py.detach(|| {
        let an = Analysis::fit(&a.0, &b.0, &s)?;
        an.intervals(&methods, level, K, seed)?
            .into_iter()
            .map(|(_, r)| r.map(Interval::from))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(to_py)
}

/// Maximises the pseudo empirical likelihood `Σ d̃ log p` subject to
/// `Σ p g = 0`; returns `(p, lambda, feasible)`.
#[pyfunction]
fn solve_el(dtilde: Vec<f64>, g: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>, bool)> {
    let cols: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
    let s = el::solve_el(&dtilde, &cols).map_err(to_py)?;
    Ok((s.p, s.lambda, s.feasible))
}

/// Fitted propensity scores for the non-probability units.
#[pyfunction]
#[pyo3(signature = (a, b, columns=None, method="pml"))]
fn propensity_scores(a: &NonProbSample, b: &ProbSample, columns: Option<Vec<usize>>, method: &str) -> PyResult<Vec<f64>> {
    let s = specs(a.0.q(), columns, None, "logit", method)?;
    let pf = models::fit_propensity(&a.0, &b.0, &s.ps, s.ps_method).map_err(to_py)?;
    Ok(pf.scores)
}

#[pyfunction]
fn chi2_quantile(p: f64, df: f64) -> f64 {
    special::chi2_quantile(p, df)
}

#[pyfunction]
fn normal_quantile(p: f64) -> f64 {
    special::normal_quantile(p)
}

/// Runs a simulation scenario (`"TT"`, `"FT"`, `"TF"`) and returns the
/// metrics table as CSV text.
#[pyfunction]
#[pyo3(signature = (scenario, reps=None, K=None, seed=None, N=None, n_A=None, n_B=None, methods=None))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    scenario: &str,
    reps: Option<usize>,
    K: Option<usize>,
    seed: Option<u64>,
    N: Option<usize>,
    n_A: Option<usize>,
    n_B: Option<usize>,
    methods: Option<Vec<String>>,
) -> PyResult<String> {
    let mut cfg = ScenarioConfig::preset(scenario).map_err(to_py)?;
    cfg.reps = reps.unwrap_or(cfg.reps);
    cfg.k = K.unwrap_or(cfg.k);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.n_pop = N.unwrap_or(cfg.n_pop);
    cfg.n_a = n_A.unwrap_or(cfg.n_a);
    cfg.n_b = n_B.unwrap_or(cfg.n_b);
    if let Some(list) = methods {
        cfg.methods = list
            .iter()
            .map(|m| m.parse::<IntervalMethod>())
            .collect::<Result<_, _>>()
            .map_err(to_py)?;
    }
    let rows = py.detach(|| nonprob_pel::sim::run_scenario(&cfg)).map_err(to_py)?;
    Ok(summarize(&rows, OutputFormat::Csv))
}

#[pymodule]
fn nonprob_pel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<NonProbSample>()?;
    m.add_class::<ProbSample>()?;
    m.add_class::<Interval>()?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(intervals, m)?)?;
    m.add_function(wrap_pyfunction!(solve_el, m)?)?;
    m.add_function(wrap_pyfunction!(propensity_scores, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
