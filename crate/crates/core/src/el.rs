//! Weighted (pseudo) empirical likelihood under linear moment constraints.
//!
//! Maximises `n · Σ d̃_i log p_i` subject to `Σ p_i = 1` and `Σ p_i g_i = 0`
//! through the Lagrange dual. The maximiser has the form
//! `p_i = d̃_i / (1 + λ'g_i)` where λ minimises the convex dual
//! `φ(λ) = -Σ d̃_i log(1 + λ'g_i)`. With uniform `d̃` this is Owen's
//! empirical likelihood for a mean.
//!
//! At most two non-normalisation constraints are supported, which covers the
//! parameter constraint alone and the parameter constraint together with the
//! model-calibration constraint.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Stationarity tolerance on the dual gradient (scaled by `max(1, max|g|)`).
pub const GRAD_TOL: f64 = 1e-10;
/// Newton iteration budget for the dual solve.
pub const MAX_NEWTON: usize = 50;
/// Columns whose entries are all below this magnitude are treated as
/// identically satisfied constraints.
pub const NULL_COLUMN_TOL: f64 = 1e-12;

const MAX_SCALAR_ITERS: usize = 200;

#[derive(Debug, Clone)]
pub struct ElSolution {
    /// Maximising probabilities; empty when infeasible.
    pub p: Vec<f64>,
    /// One multiplier per constraint column.
    pub lambda: Vec<f64>,
    /// `n · Σ d̃_i log p_i`, or `-inf` when infeasible.
    pub log_pel: f64,
    pub feasible: bool,
    pub iterations: usize,
}

/// `n · Σ d̃_i log p_i`.
pub fn pel_value(p: &[f64], dtilde: &[f64]) -> Result<f64> {
    if p.len() != dtilde.len() {
        return Err(Error::Validation(format!(
            "p has length {} but weights have length {}",
            p.len(),
            dtilde.len()
        )));
    }
    if let Some(i) = p.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Validation(format!(
            "probability p[{i}] = {} is not positive",
            p[i]
        )));
    }
    let n = p.len() as f64;
    Ok(n * p.iter().zip(dtilde).map(|(pi, di)| di * pi.ln()).sum::<f64>())
}

fn check_inputs(dtilde: &[f64], g: &[&[f64]]) -> Result<()> {
    let n = dtilde.len();
    if n == 0 {
        return Err(Error::Validation("empty weight vector".into()));
    }
    if dtilde.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::Validation("weights must be positive and finite".into()));
    }
    let total: f64 = dtilde.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Validation(format!(
            "weights must sum to one, got {total}"
        )));
    }
    if g.len() > 2 {
        return Err(Error::Validation(format!(
            "at most 2 constraint columns are supported, got {}",
            g.len()
        )));
    }
    for (j, col) in g.iter().enumerate() {
        if col.len() != n {
            return Err(Error::Validation(format!(
                "constraint column {j} has length {} (expected {n})",
                col.len()
            )));
        }
        if col.iter().any(|v| v.is_nan()) {
            return Err(Error::Validation(format!("constraint column {j} contains NaN")));
        }
        if col.iter().any(|v| v.is_infinite()) {
            return Err(Error::Validation(format!(
                "constraint column {j} contains infinite values"
            )));
        }
    }
    Ok(())
}

fn max_abs(col: &[f64]) -> f64 {
    col.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// True when the origin lies in the interior of the convex hull of the rows.
pub fn origin_in_hull(g: &[&[f64]]) -> bool {
    match g.len() {
        0 => true,
        1 => {
            let (lo, hi) = g[0]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            lo < 0.0 && hi > 0.0
        }
        2 => origin_in_hull_2d(g[0], g[1]),
        _ => unreachable!("constraint count checked by caller"),
    }
}

fn origin_in_hull_2d(u: &[f64], v: &[f64]) -> bool {
    // Points in all four open quadrants settle it; otherwise look for an
    // angular gap of at least π, i.e. a half-plane through 0 holding every row.
    let mut quad = [false; 4];
    for (&a, &b) in u.iter().zip(v) {
        match (a > 0.0, a < 0.0, b > 0.0, b < 0.0) {
            (true, _, true, _) => quad[0] = true,
            (_, true, true, _) => quad[1] = true,
            (_, true, _, true) => quad[2] = true,
            (true, _, _, true) => quad[3] = true,
            _ => {}
        }
    }
    if quad.iter().all(|&q| q) {
        return true;
    }
    let mut angles: Vec<f64> = u
        .iter()
        .zip(v)
        .filter(|(a, b)| **a != 0.0 || **b != 0.0)
        .map(|(a, b)| b.atan2(*a))
        .collect();
    if angles.len() < 3 {
        return false;
    }
    angles.sort_by(f64::total_cmp);
    let mut max_gap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    max_gap < PI - 1e-12
}

/// Gradient of the dual `φ(λ) = -Σ d̃_i log(1 + λ'g_i)`.
pub fn dual_gradient(dtilde: &[f64], g: &[&[f64]], lambda: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; g.len()];
    for i in 0..dtilde.len() {
        let w = 1.0 + (0..g.len()).map(|j| lambda[j] * g[j][i]).sum::<f64>();
        for (j, gj) in grad.iter_mut().enumerate() {
            *gj -= dtilde[i] * g[j][i] / w;
        }
    }
    grad
}

fn infeasible(r: usize) -> ElSolution {
    ElSolution {
        p: Vec::new(),
        lambda: vec![f64::NAN; r],
        log_pel: f64::NEG_INFINITY,
        feasible: false,
        iterations: 0,
    }
}

/// Maximises the weighted empirical likelihood subject to `Σ p_i g_i = 0`.
///
/// `g` holds the constraint columns, already centred. An infeasible
/// constraint set (origin outside the hull interior) is reported through
/// `feasible = false`, not as an error; failing to converge is an error.
pub fn solve_el(dtilde: &[f64], g: &[&[f64]]) -> Result<ElSolution> {
    check_inputs(dtilde, g)?;
    let n = dtilde.len();
    let r = g.len();

    let active: Vec<usize> = (0..r).filter(|&j| max_abs(g[j]) > NULL_COLUMN_TOL).collect();
    let cols: Vec<&[f64]> = active.iter().map(|&j| g[j]).collect();
    if !origin_in_hull(&cols) {
        return Ok(infeasible(r));
    }

    // Any solution has 1 + λ'g_i = d̃_i / p_i ≥ d̃_i, so this floor never
    // cuts off the optimum.
    let min_d = dtilde.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = (1.0 / (n as f64 * n as f64)).min(0.5 * min_d);
    let scale = cols.iter().map(|c| max_abs(c)).fold(1.0, f64::max);
    let tol = GRAD_TOL * scale;

    let (lam_active, iterations) = match cols.len() {
        0 => (Vec::new(), 0),
        1 => {
            let (l, it) = solve_scalar(dtilde, cols[0], floor, tol)?;
            (vec![l], it)
        }
        _ => {
            let (l, it) = solve_pair(dtilde, cols[0], cols[1], floor, tol)?;
            (l.to_vec(), it)
        }
    };

    let mut lambda = vec![0.0; r];
    for (k, &j) in active.iter().enumerate() {
        lambda[j] = lam_active[k];
    }
    let p: Vec<f64> = (0..n)
        .map(|i| {
            let mut w = 1.0;
            for (c, l) in cols.iter().zip(&lam_active) {
                w += l * c[i];
            }
            dtilde[i] / w
        })
        .collect();
    let log_pel = pel_value(&p, dtilde)?;
    Ok(ElSolution {
        p,
        lambda,
        log_pel,
        feasible: true,
        iterations,
    })
}

/// Root of the decreasing function `Σ d̃_i g_i / (1 + λ g_i)` by Newton steps
/// safeguarded with bisection on the admissible interval.
fn solve_scalar(d: &[f64], g: &[f64], floor: f64, tol: f64) -> Result<(f64, usize)> {
    let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = (floor - 1.0) / gmax;
    let mut hi = (floor - 1.0) / gmin;
    let mut lam = 0.0;
    for it in 0..MAX_SCALAR_ITERS {
        let (mut f, mut fp) = (0.0, 0.0);
        for (di, gi) in d.iter().zip(g) {
            let t = gi / (1.0 + lam * gi);
            f += di * t;
            fp -= di * t * t;
        }
        if f.abs() <= tol {
            let polished = lam - f / fp;
            if lam != 0.0 && fp < 0.0 && polished > lo && polished < hi {
                let f2: f64 = d.iter().zip(g).map(|(di, gi)| di * gi / (1.0 + polished * gi)).sum();
                if f2.abs() < f.abs() {
                    return Ok((polished, it + 1));
                }
            }
            return Ok((lam, it));
        }
        if f > 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
        if hi - lo <= 4.0 * f64::EPSILON * lam.abs().max(1e-300) {
            // Bracket exhausted at machine precision.
            return Ok((lam, it));
        }
        let newton = lam - f / fp;
        lam = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NonConvergence {
        routine: "empirical likelihood dual (scalar)",
        iterations: MAX_SCALAR_ITERS,
    })
}

fn dual_objective(d: &[f64], u: &[f64], v: &[f64], lam: [f64; 2], floor: f64) -> Option<f64> {
    let mut phi = 0.0;
    for i in 0..d.len() {
        let w = 1.0 + lam[0] * u[i] + lam[1] * v[i];
        if w <= floor {
            return None;
        }
        phi -= d[i] * w.ln();
    }
    Some(phi)
}

/// Damped Newton on the two-dimensional convex dual.
fn solve_pair(d: &[f64], u: &[f64], v: &[f64], floor: f64, tol: f64) -> Result<([f64; 2], usize)> {
    let mut lam = [0.0, 0.0];
    let mut phi: f64 = 0.0;
    for it in 0..MAX_NEWTON {
        let (mut g0, mut g1) = (0.0, 0.0);
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
        for i in 0..d.len() {
            let w = 1.0 + lam[0] * u[i] + lam[1] * v[i];
            let a = u[i] / w;
            let b = v[i] / w;
            g0 -= d[i] * a;
            g1 -= d[i] * b;
            h00 += d[i] * a * a;
            h01 += d[i] * a * b;
            h11 += d[i] * b * b;
        }
        let gnorm = g0.hypot(g1);
        let det = h00 * h11 - h01 * h01;
        if gnorm <= tol {
            // One extra full Newton step drives the residual to rounding level,
            // which keeps Σ p_i = 1 - λ'∇ accurate even for large multipliers.
            // At λ = 0 the sum is exact already and λ stays exactly zero.
            if det > 0.0 && lam != [0.0, 0.0] {
                let step = [-(h11 * g0 - h01 * g1) / det, -(h00 * g1 - h01 * g0) / det];
                let cand = [lam[0] + step[0], lam[1] + step[1]];
                if dual_objective(d, u, v, cand, floor).is_some() {
                    let g = dual_gradient(d, &[u, v], &cand);
                    if g[0].hypot(g[1]) < gnorm {
                        return Ok((cand, it + 1));
                    }
                }
            }
            return Ok((lam, it));
        }
        if !(det > 0.0) {
            return Err(Error::NonConvergence {
                routine: "empirical likelihood dual (singular Hessian)",
                iterations: it,
            });
        }
        let step = [-(h11 * g0 - h01 * g1) / det, -(h00 * g1 - h01 * g0) / det];
        let mut t = 1.0;
        loop {
            let cand = [lam[0] + t * step[0], lam[1] + t * step[1]];
            if let Some(val) = dual_objective(d, u, v, cand, floor) {
                if val <= phi + 1e-14 * phi.abs().max(1.0) {
                    lam = cand;
                    phi = val;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-14 {
                return Err(Error::NonConvergence {
                    routine: "empirical likelihood dual (line search)",
                    iterations: it,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        routine: "empirical likelihood dual",
        iterations: MAX_NEWTON,
    })
}

/// Profile of the log likelihood ratio for a family of restricted problems
/// sharing the same base constraints. The global problem is solved once.
#[derive(Debug, Clone)]
pub struct ElProfile {
    dtilde: Vec<f64>,
    base: Vec<Vec<f64>>,
    global: ElSolution,
}

impl ElProfile {
    pub fn new(dtilde: &[f64], base: Vec<Vec<f64>>) -> Result<Self> {
        let refs: Vec<&[f64]> = base.iter().map(Vec::as_slice).collect();
        let global = solve_el(dtilde, &refs)?;
        if !global.feasible {
            return Err(Error::Infeasible(
                "base constraints cannot be met (calibration target outside the hull of fitted values)"
                    .into(),
            ));
        }
        Ok(Self {
            dtilde: dtilde.to_vec(),
            base,
            global,
        })
    }

    pub fn global(&self) -> &ElSolution {
        &self.global
    }

    pub fn dtilde(&self) -> &[f64] {
        &self.dtilde
    }

    /// Restricted solution with one extra constraint column.
    pub fn restricted(&self, extra: &[f64]) -> Result<ElSolution> {
        let mut refs: Vec<&[f64]> = self.base.iter().map(Vec::as_slice).collect();
        refs.push(extra);
        solve_el(&self.dtilde, &refs)
    }

    /// `ℓ(restricted) - ℓ(global)`; `-inf` when the restricted problem is infeasible.
    pub fn log_ratio(&self, extra: &[f64]) -> Result<f64> {
        let sol = self.restricted(extra)?;
        if !sol.feasible {
            return Ok(f64::NEG_INFINITY);
        }
        Ok((sol.log_pel - self.global.log_pel).min(0.0))
    }
}

/// `ℓ_PEL(restricted) - ℓ_PEL(global)` where the restricted problem adds
/// `g_extra` to the shared constraints `g_base`.
pub fn el_log_ratio(dtilde: &[f64], g_base: &[&[f64]], g_extra: &[f64]) -> Result<f64> {
    let base = g_base.iter().map(|c| c.to_vec()).collect();
    ElProfile::new(dtilde, base)?.log_ratio(g_extra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn pel_value_uniform() {
        let d = uniform(4);
        let v = pel_value(&d, &d).unwrap();
        assert_relative_eq!(v, -4.0 * 4.0_f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(v, -5.545177444479562, epsilon = 1e-12);
        assert!(pel_value(&[0.5, 0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn pel_value_matches_direct_sum() {
        let raw = [0.3, 1.7, 0.2, 2.9, 0.9];
        let s: f64 = raw.iter().sum();
        let d: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let mut direct = 0.0;
        for di in &d {
            direct += di * di.ln();
        }
        direct *= d.len() as f64;
        assert_eq!(pel_value(&d, &d).unwrap(), direct);
    }

    #[test]
    fn zero_column_gives_zero_multiplier() {
        let d = vec![0.1, 0.2, 0.3, 0.4];
        let zero = vec![0.0; 4];
        let sol = solve_el(&d, &[&zero]).unwrap();
        assert!(sol.feasible);
        assert_eq!(sol.lambda, vec![0.0]);
        assert_eq!(sol.p, d);
    }

    #[test]
    fn three_point_mean_matches_grid() {
        // p3 is the free coordinate: p2 = 1.5 - 2 p3, p1 = p3 - 0.5.
        let d = uniform(3);
        let g = [-1.5, -0.5, 0.5];
        let sol = solve_el(&d, &[&g]).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut p3 = 0.5;
        while p3 < 0.75 {
            let p = [p3 - 0.5, 1.5 - 2.0 * p3, p3];
            if p.iter().all(|&v| v > 0.0) {
                let val = pel_value(&p, &d).unwrap();
                if val > best.0 {
                    best = (val, p3);
                }
            }
            p3 += 1e-4;
        }
        assert!((sol.p[2] - best.1).abs() < 1e-4);
        assert!((sol.log_pel - best.0).abs() < 1e-4);
        let mean: f64 = sol.p.iter().zip([0.0, 1.0, 2.0]).map(|(p, y)| p * y).sum();
        assert_relative_eq!(mean, 1.5, epsilon = 1e-10);
    }

    #[test]
    fn outside_hull_is_infeasible() {
        let d = uniform(3);
        let g = [-2.5, -1.5, -0.5];
        let sol = solve_el(&d, &[&g]).unwrap();
        assert!(!sol.feasible);
        assert_eq!(sol.log_pel, f64::NEG_INFINITY);
        assert_eq!(el_log_ratio(&d, &[], &g).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(solve_el(&[0.5, 0.6], &[&[1.0, -1.0]]).is_err());
        assert!(solve_el(&[0.5, 0.5], &[&[f64::NAN, -1.0]]).is_err());
        assert!(solve_el(&[0.5, 0.5], &[&[1.0, -1.0], &[1.0, -1.0], &[1.0, -1.0]]).is_err());
    }

    #[test]
    fn hull_test_two_dimensional() {
        // square around the origin
        let u = [1.0, -1.0, -1.0, 1.0];
        let v = [1.0, 1.0, -1.0, -1.0];
        assert!(origin_in_hull(&[&u, &v]));
        // shifted so every row has u > 0
        let u2 = [2.0, 0.5, 0.5, 2.0];
        assert!(!origin_in_hull(&[&u2, &v]));
        // triangle containing the origin without all four quadrants
        let tu = [1.0, -1.0, 0.0];
        let tv = [-1.0, -1.0, 1.0];
        assert!(origin_in_hull(&[&tu, &tv]));
        // collinear through the origin: empty interior
        let lu = [1.0, -1.0, 2.0];
        let lv = [1.0, -1.0, 2.0];
        assert!(!origin_in_hull(&[&lu, &lv]));
    }

    #[test]
    fn ratio_zero_at_maximiser() {
        let raw = [0.2, 0.5, 0.1, 0.9, 0.3];
        let s: f64 = raw.iter().sum();
        let d: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let y = [0.0, 1.0, 3.0, 2.0, 5.0];
        let mu_hat: f64 = d.iter().zip(&y).map(|(a, b)| a * b).sum();
        let g: Vec<f64> = y.iter().map(|v| v - mu_hat).collect();
        let r = el_log_ratio(&d, &[], &g).unwrap();
        assert!(r.abs() < 1e-12, "{r}");
    }

    fn normalised(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn solution_meets_constraints(
            raw in prop::collection::vec(0.05f64..5.0, 6..40),
            ys in prop::collection::vec(-3.0f64..3.0, 40),
            ms in prop::collection::vec(-1.0f64..1.0, 40),
            frac in 0.2f64..0.8,
        ) {
            let n = raw.len();
            let d = normalised(&raw);
            let y = &ys[..n];
            let m = &ms[..n];
            let (ymin, ymax) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let mu = ymin + frac * (ymax - ymin);
            let mbar: f64 = m.iter().sum::<f64>() / n as f64;
            let g1: Vec<f64> = m.iter().map(|v| v - mbar).collect();
            let g2: Vec<f64> = y.iter().map(|v| v - mu).collect();
            let sol = solve_el(&d, &[&g1, &g2]).unwrap();
            if sol.feasible {
                let total: f64 = sol.p.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-10);
                prop_assert!(sol.p.iter().all(|&p| p > 0.0));
                for g in [&g1, &g2] {
                    let c: f64 = sol.p.iter().zip(g.iter()).map(|(p, v)| p * v).sum();
                    prop_assert!(c.abs() < 1e-8, "constraint residual {}", c);
                }
                let grad = dual_gradient(&d, &[&g1, &g2], &sol.lambda);
                let scale = g1.iter().chain(&g2).fold(1.0f64, |m, v| m.max(v.abs()));
                prop_assert!(grad[0].hypot(grad[1]) < 1e-10 * scale);
                for i in 0..n {
                    let w = 1.0 + sol.lambda[0] * g1[i] + sol.lambda[1] * g2[i];
                    prop_assert_eq!(sol.p[i], d[i] / w);
                }
                let ratio = el_log_ratio(&d, &[&g1], &g2).unwrap();
                prop_assert!(ratio <= 0.0);
            }
        }

        #[test]
        fn profile_is_unimodal(raw in prop::collection::vec(0.05f64..5.0, 5..30), ys in prop::collection::vec(0.0f64..10.0, 30)) {
            let n = raw.len();
            let d = normalised(&raw);
            let y = &ys[..n];
            let mu_hat: f64 = d.iter().zip(y).map(|(a, b)| a * b).sum();
            let (ymin, ymax) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            prop_assume!(ymax - ymin > 1e-3);
            let profile = ElProfile::new(&d, vec![]).unwrap();
            let stat = |mu: f64| {
                let g: Vec<f64> = y.iter().map(|v| v - mu).collect();
                -2.0 * profile.log_ratio(&g).unwrap()
            };
            let grid: Vec<f64> = (1..=50).map(|k| ymin + (ymax - ymin) * k as f64 / 51.0).collect();
            let vals: Vec<f64> = grid.iter().map(|&m| stat(m)).collect();
            for k in 1..grid.len() {
                if grid[k] <= mu_hat {
                    prop_assert!(vals[k] <= vals[k - 1] + 1e-9);
                } else if grid[k - 1] >= mu_hat {
                    prop_assert!(vals[k] >= vals[k - 1] - 1e-9);
                }
            }
            prop_assert!(vals.iter().all(|&v| v >= 0.0));
        }
    }
}
