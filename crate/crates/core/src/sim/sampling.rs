//! Poisson sampling for the non-probability sample and Rao–Sampford
//! πps sampling for the reference sample.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::data::{NonProbSample, PopulationFrame, ProbSample};
use crate::error::{Error, Result};

/// Rejected Rao–Sampford attempts tolerated before giving up.
pub const MAX_SAMPFORD_ATTEMPTS: usize = 1_000_000;
/// Poisson redraws tolerated when the realised sample is too small to use.
pub const MAX_POISSON_REDRAWS: usize = 1000;

fn rows_of(pop: &PopulationFrame, idx: &[usize]) -> DMatrix<f64> {
    let x = pop.x();
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

/// Independent Bernoulli(π_i) inclusion indicators.
pub fn poisson_indices<R: Rng>(pi: &[f64], rng: &mut R) -> Vec<usize> {
    pi.iter()
        .enumerate()
        .filter_map(|(i, &p)| (rng.random::<f64>() < p).then_some(i))
        .collect()
}

/// Poisson sample with inclusion probabilities `pi`. Realisations with fewer
/// than two units are redrawn from the continuing stream; the number of
/// redraws is returned alongside the sample.
pub fn poisson_sample<R: Rng>(pop: &PopulationFrame, pi: &[f64], rng: &mut R) -> Result<(NonProbSample, usize)> {
    if pi.len() != pop.size() {
        return Err(Error::Validation("one inclusion probability per population unit required".into()));
    }
    if let Some(p) = pi.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Validation(format!("Poisson inclusion probability {p} outside (0, 1)")));
    }
    for redraws in 0..MAX_POISSON_REDRAWS {
        let idx = poisson_indices(pi, rng);
        if idx.len() >= 2 {
            let y = idx.iter().map(|&i| pop.y()[i]).collect();
            return Ok((NonProbSample::new(rows_of(pop, &idx), y)?, redraws));
        }
    }
    Err(Error::Config("Poisson design keeps producing samples with fewer than two units".into()))
}

/// First-order inclusion probabilities `n z_i / Σ z`.
pub fn pps_probabilities(z: &[f64], n: usize) -> Result<Vec<f64>> {
    if z.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Validation("size measures must be positive".into()));
    }
    let total: f64 = z.iter().sum();
    let pi: Vec<f64> = z.iter().map(|v| n as f64 * v / total).collect();
    if let Some(p) = pi.iter().find(|&&p| p >= 1.0) {
        return Err(Error::Config(format!("inclusion probability {p} ≥ 1: sample size too large for the size measure")));
    }
    Ok(pi)
}

/// Sampford's rejective method: one draw with probability ∝ π_i, then `n - 1`
/// draws with replacement with probability ∝ π_i/(1 - π_i); the sample is
/// accepted when all `n` units are distinct. Attempts are abandoned at the
/// first duplicate.
pub fn rao_sampford_indices<R: Rng>(pi: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 || n > pi.len() {
        return Err(Error::Validation(format!("cannot draw {n} units from {}", pi.len())));
    }
    if pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Config("Rao–Sampford needs all inclusion probabilities in (0, 1)".into()));
    }
    let first = WeightedIndex::new(pi).map_err(|e| Error::Validation(e.to_string()))?;
    let odds: Vec<f64> = pi.iter().map(|p| p / (1.0 - p)).collect();
    let rest = WeightedIndex::new(&odds).map_err(|e| Error::Validation(e.to_string()))?;
    let mut taken = vec![false; pi.len()];
    let mut chosen = Vec::with_capacity(n);
    'attempt: for _ in 0..MAX_SAMPFORD_ATTEMPTS {
        for &i in &chosen {
            taken[i] = false;
        }
        chosen.clear();
        let i = first.sample(rng);
        taken[i] = true;
        chosen.push(i);
        while chosen.len() < n {
            let j = rest.sample(rng);
            if taken[j] {
                continue 'attempt;
            }
            taken[j] = true;
            chosen.push(j);
        }
        return Ok(chosen);
    }
    Err(Error::Config(format!(
        "Rao–Sampford rejected {MAX_SAMPFORD_ATTEMPTS} attempts; the design is too extreme"
    )))
}

/// Rao–Sampford sample of size `n_b` with probabilities ∝ `z`, carrying
/// design weights `d_i = 1/π_i`.
pub fn rao_sampford_sample<R: Rng>(pop: &PopulationFrame, z: &[f64], n_b: usize, rng: &mut R) -> Result<ProbSample> {
    if z.len() != pop.size() {
        return Err(Error::Validation("one size measure per population unit required".into()));
    }
    let pi = pps_probabilities(z, n_b)?;
    let idx = rao_sampford_indices(&pi, n_b, rng)?;
    let d = idx.iter().map(|&i| 1.0 / pi[i]).collect();
    ProbSample::new(rows_of(pop, &idx), d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pop(n: usize) -> PopulationFrame {
        let x = DMatrix::from_fn(n, 3, |i, j| (i * (j + 1)) as f64);
        PopulationFrame::new(x, (0..n).map(|i| (i % 2) as f64).collect()).unwrap()
    }

    #[test]
    fn near_certain_poisson_takes_everyone() {
        let p = pop(50);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, redraws) = poisson_sample(&p, &vec![1.0 - 1e-12; 50], &mut rng).unwrap();
        assert_eq!(s.n(), 50);
        assert_eq!(redraws, 0);
    }

    #[test]
    fn poisson_determinism() {
        let p = pop(200);
        let pi = vec![0.1; 200];
        let draw = |seed| poisson_sample(&p, &pi, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().0;
        assert_eq!(draw(5).y(), draw(5).y());
        assert_eq!(draw(5).x(), draw(5).x());
        assert_ne!(draw(5).x(), draw(6).x());
    }

    #[test]
    fn sampford_distinct_fixed_size() {
        let pi = pps_probabilities(&(1..=40).map(f64::from).collect::<Vec<_>>(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut s = rao_sampford_indices(&pi, 8, &mut rng).unwrap();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 8);
        }
    }

    #[test]
    fn pps_rejects_large_probabilities() {
        assert!(pps_probabilities(&[1.0, 1.0, 10.0], 2).is_err());
        assert!(pps_probabilities(&[1.0, 0.0], 1).is_err());
    }

    #[test]
    fn weights_are_inverse_probabilities() {
        let p = pop(30);
        let z: Vec<f64> = (1..=30).map(f64::from).collect();
        let pi = pps_probabilities(&z, 5).unwrap();
        let s = rao_sampford_sample(&p, &z, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(s.n(), 5);
        for (r, d) in s.d().iter().enumerate() {
            let unit = (s.x()[(r, 0)]) as usize;
            assert!((d * pi[unit] - 1.0).abs() < 1e-12);
        }
    }
}
