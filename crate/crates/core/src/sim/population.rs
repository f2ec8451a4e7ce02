//! Finite population generator and the constants that tie the sampling
//! designs to it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::data::PopulationFrame;
use crate::error::{Error, Result};
use crate::linalg::expit;

/// Ratio `max z / min z` targeted by the reference-sample size measure.
pub const SIZE_RATIO: f64 = 20.0;

/// Draws `N` units with
/// `x₁ ~ Bernoulli(0.5)`, `x₂ = U(0,1) + 0.1 x₁`, `x₃ = Exp(mean 0.5) + 0.1 x₂`
/// and `y ~ Bernoulli(expit(β'[1, x]))`.
pub fn generate_population(n: usize, beta: &[f64; 4], seed: u64) -> Result<PopulationFrame> {
    if n == 0 {
        return Err(Error::Validation("population size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(2.0).expect("rate 2 is valid");
    let mut x = DMatrix::zeros(n, 3);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let x1 = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let x2 = rng.random::<f64>() + 0.1 * x1;
        let x3 = exp.sample(&mut rng) + 0.1 * x2;
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        x[(i, 2)] = x3;
        let mu = expit(beta[0] + beta[1] * x1 + beta[2] * x2 + beta[3] * x3);
        y.push(if rng.random::<f64>() < mu { 1.0 } else { 0.0 });
    }
    PopulationFrame::new(x, y)
}

fn linear_part(pop: &PopulationFrame, slopes: &[f64; 3]) -> Vec<f64> {
    let x = pop.x();
    (0..pop.size())
        .map(|i| (0..3).map(|j| slopes[j] * x[(i, j)]).sum())
        .collect()
}

fn expected_size(eta: &[f64], alpha0: f64) -> f64 {
    eta.iter().map(|e| expit(alpha0 + e)).sum()
}

/// Intercept `α₀` with `Σ_U expit(α₀ + slopes'x_i) = n_A`, by bisection on
/// the strictly increasing left-hand side.
pub fn solve_alpha0(pop: &PopulationFrame, slopes: &[f64; 3], n_a: usize) -> Result<f64> {
    let n = pop.size();
    if n_a == 0 || n_a >= n {
        return Err(Error::Validation(format!("need 0 < n_A < N, got n_A = {n_a}, N = {n}")));
    }
    let target = n_a as f64;
    let eta = linear_part(pop, slopes);
    if slopes.iter().all(|&s| s == 0.0) {
        return Ok((target / (n as f64 - target)).ln());
    }
    let mut lo = -1.0;
    while expected_size(&eta, lo) > target {
        lo *= 2.0;
    }
    let mut hi = 1.0;
    while expected_size(&eta, hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if expected_size(&eta, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Inclusion probabilities `π_i^A = expit(α₀ + slopes'x_i)`.
pub fn propensity_scores(pop: &PopulationFrame, alpha0: f64, slopes: &[f64; 3]) -> Vec<f64> {
    linear_part(pop, slopes).into_iter().map(|e| expit(alpha0 + e)).collect()
}

/// Base values `a_i = x₃ᵢ + 0.03 y_i` of the size measure.
pub fn size_base(pop: &PopulationFrame) -> Vec<f64> {
    let x = pop.x();
    pop.y().iter().enumerate().map(|(i, y)| x[(i, 2)] + 0.03 * y).collect()
}

/// Shift `c` giving `(c + max a)/(c + min a) = 20` for the given base values.
pub fn solve_c_from(a: &[f64]) -> Result<f64> {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = a.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > min) {
        return Err(Error::Degenerate("size measure is constant; cannot reach the max/min ratio".into()));
    }
    let c = (max - SIZE_RATIO * min) / (SIZE_RATIO - 1.0);
    assert!(c + min > 0.0, "shifted size measure must stay positive");
    Ok(c)
}

pub fn solve_c(pop: &PopulationFrame) -> Result<f64> {
    solve_c_from(&size_base(pop))
}

/// Size measure `z_i = c + x₃ᵢ + 0.03 y_i`.
pub fn size_measure(pop: &PopulationFrame, c: f64) -> Vec<f64> {
    size_base(pop).into_iter().map(|a| c + a).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariate_means() {
        let pop = generate_population(10_000, &[-4.1, 1.0, 1.0, 1.0], 2024).unwrap();
        let m = pop.mean_x();
        assert!((m[0] - 0.5).abs() < 0.02, "{m:?}");
        assert!((m[1] - 0.55).abs() < 0.02, "{m:?}");
        assert!((m[2] - 0.555).abs() < 0.03, "{m:?}");
    }

    #[test]
    fn saturated_link_gives_all_ones() {
        let pop = generate_population(500, &[50.0, 0.0, 0.0, 0.0], 1).unwrap();
        assert!(pop.y().iter().all(|&y| y == 1.0));
    }

    #[test]
    fn same_seed_same_population() {
        let a = generate_population(100, &[-4.1, 1.0, 1.0, 1.0], 9).unwrap();
        let b = generate_population(100, &[-4.1, 1.0, 1.0, 1.0], 9).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.x(), b.x());
    }

    #[test]
    fn alpha0_closed_form_and_residual() {
        let pop = generate_population(2000, &[-4.1, 1.0, 1.0, 1.0], 3).unwrap();
        let a = solve_alpha0(&pop, &[0.0; 3], 100).unwrap();
        assert_eq!(a, (100.0_f64 / 1900.0).ln());
        let slopes = [1.0; 3];
        let a100 = solve_alpha0(&pop, &slopes, 100).unwrap();
        let a200 = solve_alpha0(&pop, &slopes, 200).unwrap();
        assert!(a200 > a100);
        let total: f64 = propensity_scores(&pop, a200, &slopes).iter().sum();
        assert!((total - 200.0).abs() < 1e-6, "{total}");
        assert!(solve_alpha0(&pop, &slopes, 2000).is_err());
    }

    #[test]
    fn c_closed_form() {
        let a: Vec<f64> = (0..20).map(f64::from).collect();
        let c = solve_c_from(&a).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
        assert!(solve_c_from(&[1.0, 1.0]).is_err());
        let pop = generate_population(3000, &[-4.1, 1.0, 1.0, 1.0], 4).unwrap();
        let z = size_measure(&pop, solve_c(&pop).unwrap());
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = z.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((max / min - 20.0).abs() < 1e-9);
    }
}
