//! Independent oracles shared by the integration tests.
//!
//! The empirical likelihood oracle never touches the Lagrange dual: it
//! parameterises the constraint polytope `{p : Σp = 1, Σ p g_j = 0}` by an
//! orthonormal basis of its null space and maximises `n Σ d̃ log p` by a
//! zooming grid search.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nonprob_pel::data::ModelSpec;
use nonprob_pel::models::{logit_loglik, logit_score, pml_loglik, pml_score};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Grid maximum of `n Σ d̃ log p`; `None` when no grid point is strictly feasible.
#[derive(Debug, Clone)]
pub struct GridOptimum {
    pub value: f64,
    pub p: Vec<f64>,
}

fn objective(dtilde: &[f64], p: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mut s = 0.0;
    for (d, v) in dtilde.iter().zip(p) {
        if *v <= 0.0 {
            return f64::NEG_INFINITY;
        }
        s += d * v.ln();
    }
    n * s
}

pub fn grid_maximize(dtilde: &[f64], g: &[Vec<f64>]) -> Option<GridOptimum> {
    let n = dtilde.len();
    let r = g.len() + 1;
    let mut a = DMatrix::<f64>::zeros(r, n);
    for i in 0..n {
        a[(0, i)] = 1.0;
        for (j, col) in g.iter().enumerate() {
            a[(j + 1, i)] = col[i];
        }
    }
    let mut rhs = DVector::<f64>::zeros(r);
    rhs[0] = 1.0;

    // Minimum-norm particular solution.
    let gram = &a * a.transpose();
    let p0 = a.transpose() * gram.clone().lu().solve(&rhs)?;
    if (&a * &p0 - &rhs).amax() > 1e-9 {
        return None;
    }

    // Null space of A from the zero eigenvalues of A'A.
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let top = eig.eigenvalues.amax().max(1.0);
    let basis: Vec<DVector<f64>> = (0..n)
        .filter(|&k| eig.eigenvalues[k].abs() < 1e-10 * top)
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect();
    let k = basis.len();

    let point = |t: &[f64]| -> Vec<f64> {
        let mut p = p0.clone();
        for (tj, b) in t.iter().zip(&basis) {
            p.axpy(*tj, b, 1.0);
        }
        p.iter().copied().collect()
    };

    if k == 0 {
        let p = point(&[]);
        let v = objective(dtilde, &p);
        return v.is_finite().then_some(GridOptimum { value: v, p });
    }

    // ‖t‖ = ‖p - p0‖ ≤ ‖p‖ + ‖p0‖ ≤ 1 + ‖p0‖ on the simplex.
    let mut centre = vec![0.0; k];
    let mut half = 1.0 + p0.norm();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut first = true;
    while half > 1e-10 {
        let m: usize = if first {
            match k {
                1 => 4001,
                2 => 401,
                3 => 81,
                _ => 31,
            }
        } else {
            11
        };
        let step = 2.0 * half / (m - 1) as f64;
        let mut idx = vec![0usize; k];
        let mut t = vec![0.0; k];
        loop {
            for j in 0..k {
                t[j] = centre[j] - half + step * idx[j] as f64;
            }
            let v = objective(dtilde, &point(&t));
            if v.is_finite() && best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                best = Some((v, t.clone()));
            }
            let mut j = 0;
            while j < k {
                idx[j] += 1;
                if idx[j] < m {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == k {
                break;
            }
        }
        let (_, bt) = best.as_ref()?;
        centre.clone_from(bt);
        half = 3.0 * step;
        first = false;
    }
    let (value, t) = best?;
    Some(GridOptimum { value, p: point(&t) })
}

/// A small weighted EL problem.
#[derive(Debug, Clone)]
pub struct ToyCase {
    pub label: String,
    pub dtilde: Vec<f64>,
    pub y: Vec<f64>,
    pub m: Vec<f64>,
    pub mu: f64,
    /// Include the calibration column `m` as a constraint.
    pub calibrated: bool,
}

impl ToyCase {
    pub fn columns(&self) -> Vec<Vec<f64>> {
        let mut g = Vec::new();
        if self.calibrated {
            g.push(self.m.clone());
        }
        g.push(self.y.iter().map(|v| v - self.mu).collect());
        g
    }

    pub fn scores(&self) -> Vec<f64> {
        // d̃ ∝ 1/π̂, so π̂ = c / d̃ with c chosen to keep every score below 1.
        let c = 0.9 * self.dtilde.iter().copied().fold(f64::INFINITY, f64::min);
        self.dtilde.iter().map(|d| c / d).collect()
    }
}

fn normalise(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// At least twenty toy problems with `n ≤ 6`: single and double constraints,
/// μ inside and outside the feasible range.
pub fn toy_cases() -> Vec<ToyCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ede1);
    let mut cases = Vec::new();
    for (n, calibrated) in [(3, false), (4, false), (5, false), (6, false), (4, true), (5, true), (6, true)] {
        for rep in 0..4 {
            let dtilde = normalise((0..n).map(|_| rng.random_range(0.5..3.0)).collect());
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
            let m_raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            // Centre m at a weighted mean so the calibration constraint is feasible.
            let mbar: f64 = m_raw.iter().zip(&dtilde).map(|(a, b)| a * b).sum::<f64>() * 0.9
                + 0.1 * m_raw.iter().sum::<f64>() / n as f64;
            let m: Vec<f64> = m_raw.iter().map(|v| v - mbar).collect();
            let (ylo, yhi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let mu = match rep {
                0 => y.iter().zip(&dtilde).map(|(a, b)| a * b).sum::<f64>(),
                1 => ylo + 0.3 * (yhi - ylo),
                2 => ylo + 0.75 * (yhi - ylo),
                _ => yhi + 0.25,
            };
            cases.push(ToyCase {
                label: format!("n={n} calibrated={calibrated} rep={rep}"),
                dtilde,
                y,
                m,
                mu,
                calibrated,
            });
        }
    }
    cases
}

/// Central finite-difference gradient.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[j] += h;
            dn[j] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// `‖analytic - numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max)
}

/// One comparison of the library against the grid oracle.
#[derive(Debug)]
pub struct OracleCheck {
    pub label: String,
    pub feasible_agrees: bool,
    /// Largest absolute discrepancy in the log likelihood (or ratio) and in p.
    pub error: f64,
}

impl OracleCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.feasible_agrees && self.error <= tol
    }
}

/// Compares `solve_el` and `profile_ratio` with the grid oracle on every toy case.
pub fn el_oracle_checks() -> Vec<OracleCheck> {
    use nonprob_pel::data::{NonProbSample, ProbSample};
    use nonprob_pel::el::solve_el;
    use nonprob_pel::inference::{profile_ratio, RatioMode};
    use nonprob_pel::models::{OutcomeFit, PropensityFit};

    let mut out = Vec::new();
    for case in toy_cases() {
        let n = case.y.len();
        let cols = case.columns();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let oracle = grid_maximize(&case.dtilde, &cols);

        let sol = solve_el(&case.dtilde, &refs).expect("solve_el runs");
        let (agrees, err) = match (&oracle, sol.feasible) {
            (Some(o), true) => {
                let dp = o.p.iter().zip(&sol.p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                (true, (o.value - sol.log_pel).abs().max(dp))
            }
            (None, false) => (true, 0.0),
            _ => (false, f64::INFINITY),
        };
        out.push(OracleCheck {
            label: format!("solve_el {}", case.label),
            feasible_agrees: agrees,
            error: err,
        });

        // The same problem through the ratio API.
        let x: Vec<Vec<f64>> = case.y.iter().map(|v| vec![*v]).collect();
        let a = NonProbSample::from_rows(&x, case.y.clone()).expect("toy sample");
        let pf = PropensityFit::from_scores(case.scores()).expect("toy scores");
        let b = ProbSample::from_rows(&[vec![0.0], vec![1.0]], vec![1.0, 1.0]).expect("toy reference");
        let of = OutcomeFit::from_fitted(case.m.clone(), vec![0.0, 0.0], &b).expect("toy fit");
        let (mode, global) = if case.calibrated {
            let g = grid_maximize(&case.dtilde, std::slice::from_ref(&case.m)).expect("calibration feasible");
            (RatioMode::R2, g.value)
        } else {
            // Unconstrained maximiser is p = d̃ (Gibbs' inequality).
            let d: Vec<f64> = pf.dtilde.clone();
            (RatioMode::R1, n as f64 * d.iter().map(|v| v * v.ln()).sum::<f64>())
        };
        let r = profile_ratio(case.mu, mode, &a, &pf, Some(&of)).expect("profile_ratio runs");
        let (agrees, err) = match &oracle {
            Some(o) if r.is_finite() => (true, ((o.value - global) - r).abs()),
            None if r == f64::NEG_INFINITY => (true, 0.0),
            _ => (false, f64::INFINITY),
        };
        out.push(OracleCheck {
            label: format!("profile_ratio {}", case.label),
            feasible_agrees: agrees,
            error: err,
        });
    }
    out
}

const POINTS: usize = 10;
pub const GRADIENT_TOL: f64 = 1e-5;

fn covariates(rng: &mut ChaCha8Rng, n: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |_, j| rng.random_range(-1.0..1.0) * (j + 1) as f64)
}

/// Worst relative error of the pseudo-likelihood score over random points.
pub fn pml_worst_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ModelSpec::logit_all(3);
    let za = spec.design(&covariates(&mut rng, 40, 3));
    let zb = spec.design(&covariates(&mut rng, 60, 3));
    let d: Vec<f64> = (0..60).map(|_| rng.random_range(5.0..50.0)).collect();
    (0..POINTS)
        .map(|_| {
            let alpha: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..1.0)).collect();
            let analytic = pml_score(&alpha, &za, &zb, &d);
            let numeric = numeric_gradient(|a| pml_loglik(a, &za, &zb, &d), &alpha, 1e-5);
            max_relative_error(&analytic, &numeric)
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of the logistic score over random points.
pub fn logit_worst_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ModelSpec::logit_all(3);
    let z = spec.design(&covariates(&mut rng, 50, 3));
    let y: Vec<f64> = (0..50).map(|_| f64::from(rng.random_bool(0.3))).collect();
    (0..POINTS)
        .map(|_| {
            let beta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            let analytic = logit_score(&beta, &z, &y);
            let numeric = numeric_gradient(|b| logit_loglik(b, &z, &y), &beta, 1e-5);
            max_relative_error(&analytic, &numeric)
        })
        .fold(0.0, f64::max)
}


/// Largest standardised deviation `|π̂_i - π_i| / sd_i` of Rao–Sampford
/// inclusion frequencies from their targets over `draws` samples of size `n`.
pub fn rao_sampford_max_z(z: &[f64], n: usize, draws: usize, seed: u64) -> f64 {
    let pi = nonprob_pel::sim::sampling::pps_probabilities(z, n).expect("valid design");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0usize; z.len()];
    for _ in 0..draws {
        for i in nonprob_pel::sim::rao_sampford_indices(&pi, n, &mut rng).expect("draw") {
            hits[i] += 1;
        }
    }
    standardised_max(&hits, &pi, draws)
}

/// Largest standardised deviation of Poisson inclusion frequencies.
pub fn poisson_inclusion_max_z(pi: &[f64], draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0usize; pi.len()];
    for _ in 0..draws {
        for i in nonprob_pel::sim::sampling::poisson_indices(pi, &mut rng) {
            hits[i] += 1;
        }
    }
    standardised_max(&hits, pi, draws)
}

fn standardised_max(hits: &[usize], pi: &[f64], draws: usize) -> f64 {
    hits.iter()
        .zip(pi)
        .map(|(&h, &p)| {
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            (h as f64 / draws as f64 - p).abs() / sd
        })
        .fold(0.0, f64::max)
}

/// `(mean realised size - Σπ) / sd(mean)` for Poisson sampling.
pub fn poisson_size_z(pi: &[f64], draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let expected: f64 = pi.iter().sum();
    let var: f64 = pi.iter().map(|p| p * (1.0 - p)).sum();
    let total: usize = (0..draws)
        .map(|_| nonprob_pel::sim::sampling::poisson_indices(pi, &mut rng).len())
        .sum();
    (total as f64 / draws as f64 - expected) / (var / draws as f64).sqrt()
}
