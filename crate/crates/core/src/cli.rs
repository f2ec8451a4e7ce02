//! Command-line front end.
//!
//! Exit codes: `0` success, `1` invalid input or configuration, `2` a solver
//! or numerical failure. Results go to stdout, diagnostics to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::Serialize;

use crate::bootstrap::FitSpecs;
use crate::data::{load_nonprob_sample, load_prob_sample, validate_pair, Link, ModelSpec, NonProbSample, ProbSample};
use crate::error::{Error, Result};
use crate::estimators::{dr1, dr2, estimate_pel, ipw1, ipw2, EstimatorKind};
use crate::inference::{Analysis, IntervalMethod, IntervalResult};
use crate::models::{fit_outcome, fit_propensity, OutcomeFit, PropensityFit, PsMethod};
use crate::sim::{aggregate, run_replications, summarize, OutputFormat, ScenarioConfig};

pub const EXIT_INPUT: u8 = 1;
pub const EXIT_SOLVER: u8 = 2;
pub const THREADS_ENV: &str = "NONPROB_PEL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Estimate,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PsMethodArg {
    Pml,
    Calibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LinkArg {
    Logit,
    Identity,
}

#[derive(Debug, Parser)]
#[command(
    name = "nonprob-pel",
    version,
    about = "Pseudo empirical likelihood inference for non-probability samples",
    after_help = "Exit codes: 0 success, 1 invalid input or configuration, 2 solver failure."
)]
pub struct CliConfig {
    /// What to run.
    #[arg(long, value_enum)]
    pub command: Command,

    /// CSV file with the non-probability sample (y and covariates).
    #[arg(long)]
    pub nonprob: Option<PathBuf>,
    /// CSV file with the reference probability sample (weights and covariates).
    #[arg(long)]
    pub prob: Option<PathBuf>,
    /// Name of the study-variable column.
    #[arg(long, default_value = "y")]
    pub y: String,
    /// Covariate column names, comma separated, present in both files.
    #[arg(long, value_delimiter = ',')]
    pub x: Vec<String>,
    /// Name of the design-weight column in the probability sample.
    #[arg(long, default_value = "w")]
    pub weight: String,
    /// Column of known propensity scores in the non-probability file; skips
    /// the propensity model fit.
    #[arg(long)]
    pub scores: Option<String>,
    /// Point estimators and/or interval methods, comma separated
    /// (ipw1, ipw2, dr1, dr2, pel, pel1_adj, pel1_bts, pel2_adj, pel2_bts, na1, na2, bst).
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Confidence level.
    #[arg(long)]
    pub level: Option<f64>,
    /// Bootstrap replicates.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Monte Carlo replications (simulate).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Output format.
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Scenario preset (TT, FT, TF) or path to a TOML scenario file (simulate).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Population size; enables ipw1/dr1 for estimate, overrides the scenario for simulate.
    #[arg(long = "N")]
    pub n_pop: Option<usize>,
    /// Expected non-probability sample size (simulate).
    #[arg(long = "n_A")]
    pub n_a: Option<usize>,
    /// Reference sample size (simulate).
    #[arg(long = "n_B")]
    pub n_b: Option<usize>,
    /// Draw a fresh population in every replication (simulate).
    #[arg(long)]
    pub fresh_population: bool,
    /// Propensity-model fitting route (estimate).
    #[arg(long, value_enum, default_value = "pml")]
    pub ps_method: PsMethodArg,
    /// Covariates (subset of --x) in the propensity model; default all.
    #[arg(long, value_delimiter = ',')]
    pub ps_x: Vec<String>,
    /// Covariates (subset of --x) in the outcome model; default all.
    #[arg(long, value_delimiter = ',')]
    pub or_x: Vec<String>,
    /// Outcome-model link; default logit for binary y, identity otherwise.
    #[arg(long, value_enum)]
    pub or_link: Option<LinkArg>,
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let code = run(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    ExitCode::from(code)
}

/// Parses `args`, runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match CliConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_INPUT;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    if let Some(t) = cfg.threads {
        // A second initialisation in the same process (tests) is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let res = match cfg.command {
        Command::Estimate => cmd_estimate(&cfg, out, err),
        Command::Simulate => cmd_simulate(&cfg, out, err),
    };
    match res {
        Ok(code) => code,
        Err((stage, e)) => {
            let _ = writeln!(err, "error [{stage}]: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_SOLVER
    }
}

type Staged<T> = std::result::Result<T, (&'static str, Error)>;

fn stage<T>(name: &'static str, r: Result<T>) -> Staged<T> {
    r.map_err(|e| (name, e))
}

enum Requested {
    Point(EstimatorKind),
    Interval(IntervalMethod),
}

fn parse_methods(list: &[String]) -> Result<Vec<Requested>> {
    list.iter()
        .map(|s| {
            let s = s.trim();
            if let Ok(k) = s.parse::<EstimatorKind>() {
                Ok(Requested::Point(k))
            } else if let Ok(m) = s.parse::<IntervalMethod>() {
                Ok(Requested::Interval(m))
            } else {
                Err(Error::Validation(format!("unknown method `{s}`")))
            }
        })
        .collect()
}

fn column_indices(all: &[String], subset: &[String], what: &str) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Ok((0..all.len()).collect());
    }
    subset
        .iter()
        .map(|name| {
            all.iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Validation(format!("{what} covariate `{name}` is not among --x")))
        })
        .collect()
}

#[derive(Serialize)]
struct PointRecord<'a> {
    kind: &'static str,
    method: &'a str,
    estimate: f64,
}

#[derive(Serialize)]
struct IntervalRecord<'a> {
    kind: &'static str,
    method: &'a str,
    estimate: f64,
    lower: f64,
    upper: f64,
    level: f64,
    calib: f64,
    diagnostics: &'a BTreeMap<String, f64>,
}

struct Inputs {
    a: NonProbSample,
    b: ProbSample,
    supplied: Option<Vec<f64>>,
}

fn load_inputs(cfg: &CliConfig) -> Result<Inputs> {
    let (Some(np), Some(p)) = (&cfg.nonprob, &cfg.prob) else {
        return Err(Error::Validation("estimate requires both --nonprob and --prob".into()));
    };
    if cfg.x.is_empty() {
        return Err(Error::Validation("at least one covariate is required (--x)".into()));
    }
    let x: Vec<&str> = cfg.x.iter().map(String::as_str).collect();
    let a = load_nonprob_sample(np, &cfg.y, &x)?;
    let b = load_prob_sample(p, &cfg.weight, &x)?;
    validate_pair(&a, &b)?;
    let supplied = match &cfg.scores {
        None => None,
        Some(col) => Some(load_nonprob_sample(np, col, &[])?.y().to_vec()),
    };
    Ok(Inputs { a, b, supplied })
}

fn cmd_estimate(cfg: &CliConfig, out: &mut dyn Write, err: &mut dyn Write) -> Staged<u8> {
    let inputs = stage("input", load_inputs(cfg))?;
    let (a, b) = (&inputs.a, &inputs.b);
    let level = cfg.level.unwrap_or(0.95);
    let k = cfg.k.unwrap_or(1000);
    let seed = cfg.seed.unwrap_or(1);
    let methods = if cfg.methods.is_empty() {
        let mut m: Vec<String> = ["ipw2", "dr2", "pel"].map(String::from).to_vec();
        if cfg.n_pop.is_some() {
            m.splice(0..0, ["ipw1".to_string(), "dr1".to_string()]);
        }
        m.extend(IntervalMethod::ALL.iter().map(|m| m.tag().to_string()));
        m
    } else {
        cfg.methods.clone()
    };
    let requested = stage("input", parse_methods(&methods))?;
    let ps_cols = stage("input", column_indices(&cfg.x, &cfg.ps_x, "propensity"))?;
    let or_cols = stage("input", column_indices(&cfg.x, &cfg.or_x, "outcome"))?;
    let binary = a.y().iter().all(|&v| v == 0.0 || v == 1.0);
    let link = match cfg.or_link {
        Some(LinkArg::Logit) => Link::Logit,
        Some(LinkArg::Identity) => Link::Identity,
        None if binary => Link::Logit,
        None => Link::Identity,
    };
    let ps_method = match cfg.ps_method {
        PsMethodArg::Pml => PsMethod::PseudoMl,
        PsMethodArg::Calibration => PsMethod::Calibration,
    };
    let specs = FitSpecs::new(ModelSpec::new(Link::Logit, ps_cols), ps_method, ModelSpec::new(link, or_cols));
    // Every interval goes through the shared analysis, which holds both fits.
    let needs_or = requested
        .iter()
        .any(|r| !matches!(r, Requested::Point(EstimatorKind::Ipw1 | EstimatorKind::Ipw2)));

    let pf: PropensityFit = match &inputs.supplied {
        Some(s) => stage("propensity scores", PropensityFit::from_scores(s.clone()))?,
        None => stage("propensity model", fit_propensity(a, b, &specs.ps, specs.ps_method))?,
    };
    let of: Option<OutcomeFit> = if needs_or {
        Some(stage("outcome model", fit_outcome(a, &specs.or, b))?)
    } else {
        None
    };

    let mut first_failure: Option<u8> = None;
    let mut fail = |err: &mut dyn Write, what: &str, e: Error| {
        let _ = writeln!(err, "error [{what}]: {e}");
        first_failure.get_or_insert(exit_code(&e));
    };
    let n_pop = cfg.n_pop.map(|n| n as f64);
    let mut points = Vec::new();
    let mut intervals: Vec<IntervalMethod> = Vec::new();
    for r in &requested {
        match r {
            Requested::Point(kind) => {
                let of_ref = of.as_ref();
                let res = match kind {
                    EstimatorKind::Ipw1 => n_pop
                        .ok_or_else(|| Error::Validation("ipw1 requires the population size (--N)".into()))
                        .and_then(|n| ipw1(a, &pf, n)),
                    EstimatorKind::Ipw2 => ipw2(a, &pf),
                    EstimatorKind::Dr1 => n_pop
                        .ok_or_else(|| Error::Validation("dr1 requires the population size (--N)".into()))
                        .and_then(|n| dr1(a, b, &pf, of_ref.unwrap(), n)),
                    EstimatorKind::Dr2 => dr2(a, b, &pf, of_ref.unwrap()),
                    EstimatorKind::Pel => estimate_pel(a, &pf, of_ref),
                };
                match res {
                    Ok(e) => points.push((kind.tag(), e.value)),
                    Err(e) => fail(err, kind.tag(), e),
                }
            }
            Requested::Interval(m) => intervals.push(*m),
        }
    }

    let mut results: Vec<IntervalResult> = Vec::new();
    if !intervals.is_empty() {
        match &of {
            Some(of) => {
                let analysis = Analysis {
                    a,
                    b,
                    specs: specs.clone(),
                    pf: pf.clone(),
                    of: of.clone(),
                };
                let bootstrap_needed = intervals.iter().any(|m| m.uses_bootstrap());
                if bootstrap_needed && pf.method == PsMethod::Supplied {
                    for m in intervals.iter().filter(|m| m.uses_bootstrap()) {
                        fail(
                            err,
                            m.tag(),
                            Error::Validation("bootstrap methods need a fitted propensity model".into()),
                        );
                    }
                    intervals.retain(|m| !m.uses_bootstrap());
                }
                match analysis.intervals(&intervals, level, k, seed) {
                    Ok(list) => {
                        for (m, r) in list {
                            match r {
                                Ok(ci) => results.push(ci),
                                Err(e) => fail(err, m.tag(), e),
                            }
                        }
                    }
                    Err(e) => fail(err, "intervals", e),
                }
            }
            None => unreachable!("intervals always request the outcome model"),
        }
    }
    write_estimates(cfg.format, &points, &results, out).map_err(|e| ("output", e))?;
    Ok(first_failure.unwrap_or(0))
}

fn write_estimates(
    format: Format,
    points: &[(&'static str, f64)],
    results: &[IntervalResult],
    out: &mut dyn Write,
) -> Result<()> {
    match format {
        Format::Text => {
            for (m, v) in points {
                writeln!(out, "{m:<9} = {v:.6}")?;
            }
            for r in results {
                let diag: Vec<String> = r.diagnostics.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
                writeln!(
                    out,
                    "{:<9}   estimate {:.6}  {:.0}% CI [{:.6}, {:.6}]  calib {:.6}  {}",
                    r.method.tag(),
                    r.estimate,
                    100.0 * r.level,
                    r.lower,
                    r.upper,
                    r.calib,
                    diag.join(" ")
                )?;
            }
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["method", "estimate", "lower", "upper", "level", "calib"])?;
            for (m, v) in points {
                w.write_record([m.to_string(), v.to_string(), String::new(), String::new(), String::new(), String::new()])?;
            }
            for r in results {
                w.write_record([
                    r.method.tag().to_string(),
                    r.estimate.to_string(),
                    r.lower.to_string(),
                    r.upper.to_string(),
                    r.level.to_string(),
                    r.calib.to_string(),
                ])?;
            }
            out.write_all(&w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        }
        Format::Jsonl => {
            for (m, v) in points {
                let rec = PointRecord {
                    kind: "point",
                    method: m,
                    estimate: *v,
                };
                writeln!(out, "{}", serde_json::to_string(&rec).expect("serialisable"))?;
            }
            for r in results {
                let rec = IntervalRecord {
                    kind: "interval",
                    method: r.method.tag(),
                    estimate: r.estimate,
                    lower: r.lower,
                    upper: r.upper,
                    level: r.level,
                    calib: r.calib,
                    diagnostics: &r.diagnostics,
                };
                writeln!(out, "{}", serde_json::to_string(&rec).expect("serialisable"))?;
            }
        }
    }
    Ok(())
}

fn load_scenario(cfg: &CliConfig) -> Result<ScenarioConfig> {
    let Some(name) = &cfg.scenario else {
        return Err(Error::Config("simulate requires --scenario (TT, FT, TF or a TOML file)".into()));
    };
    let mut sc = if std::path::Path::new(name).is_file() {
        ScenarioConfig::from_toml(&std::fs::read_to_string(name)?)?
    } else {
        ScenarioConfig::preset(name)?
    };
    if let Some(v) = cfg.reps {
        sc.reps = v;
    }
    if let Some(v) = cfg.k {
        sc.k = v;
    }
    if let Some(v) = cfg.seed {
        sc.seed = v;
    }
    if let Some(v) = cfg.level {
        sc.level = v;
    }
    if let Some(v) = cfg.n_pop {
        sc.n_pop = v;
    }
    if let Some(v) = cfg.n_a {
        sc.n_a = v;
    }
    if let Some(v) = cfg.n_b {
        sc.n_b = v;
    }
    if cfg.fresh_population {
        sc.fresh_population = true;
    }
    if !cfg.methods.is_empty() {
        sc.methods = cfg
            .methods
            .iter()
            .map(|m| m.trim().parse::<IntervalMethod>().map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<_>>()?;
    }
    sc.validate()?;
    Ok(sc)
}

fn cmd_simulate(cfg: &CliConfig, out: &mut dyn Write, err: &mut dyn Write) -> Staged<u8> {
    let sc = stage("scenario", load_scenario(cfg))?;
    let _ = writeln!(
        err,
        "simulating N={} n_A={} n_B={} reps={} K={} seed={}",
        sc.n_pop, sc.n_a, sc.n_b, sc.reps, sc.k, sc.seed
    );
    let start = Instant::now();
    let run = stage("simulation", run_replications(&sc))?;
    let rows = aggregate(&sc.methods, &run.records);
    let _ = writeln!(err, "population mean {:.6}; finished in {:.1?}", run.mu_y, start.elapsed());
    for r in rows.iter().filter(|r| r.flagged) {
        let _ = writeln!(err, "warning: {} failed in {} of {} replications", r.method.tag(), r.failed, sc.reps);
    }
    let format = match cfg.format {
        Format::Text => OutputFormat::TextTable,
        Format::Csv => OutputFormat::Csv,
        Format::Jsonl => OutputFormat::Jsonl,
    };
    out.write_all(summarize(&rows, format).as_bytes())
        .map_err(|e| ("output", Error::Io(e)))?;
    Ok(0)
}
