//! Row-major design matrices and small dense solves used by the model fits.

use nalgebra::{DMatrix, DVector};

/// Row-major copy of a design matrix; fits loop over rows.
#[derive(Debug, Clone)]
pub(crate) struct Rows {
    pub p: usize,
    pub data: Vec<f64>,
}

impl Rows {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (n, p) = m.shape();
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                data.push(m[(i, j)]);
            }
        }
        Self { p, data }
    }

    pub fn n(&self) -> usize {
        self.data.len().checked_div(self.p).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.p.max(1))
    }

    pub fn dot(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }
}

/// Centering and scaling of non-intercept columns.
#[derive(Debug, Clone)]
pub(crate) struct Standardizer {
    center: Vec<f64>,
    scale: Vec<f64>,
    intercept: bool,
}

impl Standardizer {
    /// Statistics from the union of the given designs. Returns `None` when a
    /// non-intercept column is constant.
    pub fn fit(designs: &[&DMatrix<f64>], intercept: bool) -> Option<Self> {
        let p = designs[0].ncols();
        let n: usize = designs.iter().map(|d| d.nrows()).sum();
        let nf = n as f64;
        let mut center = vec![0.0; p];
        let mut scale = vec![1.0; p];
        let start = usize::from(intercept);
        for j in start..p {
            let mean = designs.iter().map(|d| d.column(j).sum()).sum::<f64>() / nf;
            let ss: f64 = designs
                .iter()
                .map(|d| d.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>())
                .sum();
            let sd = (ss / nf).sqrt();
            let rms = (designs
                .iter()
                .map(|d| d.column(j).iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                / nf)
                .sqrt();
            if intercept {
                if !(sd > 1e-12 * mean.abs().max(1.0)) {
                    return None;
                }
                center[j] = mean;
                scale[j] = sd;
            } else {
                if !(rms > 0.0) {
                    return None;
                }
                scale[j] = rms;
            }
        }
        Some(Self {
            center,
            scale,
            intercept,
        })
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> Rows {
        let (n, p) = m.shape();
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                data.push((m[(i, j)] - self.center[j]) / self.scale[j]);
            }
        }
        Rows { p, data }
    }

    /// Maps totals of original columns to totals of standardised columns.
    pub fn totals(&self, t: &[f64]) -> Vec<f64> {
        let t0 = if self.intercept { t[0] } else { 0.0 };
        t.iter()
            .enumerate()
            .map(|(j, &tj)| (tj - self.center[j] * t0) / self.scale[j])
            .collect()
    }

    /// Coefficients on the original scale.
    pub fn unscale(&self, beta_std: &[f64]) -> Vec<f64> {
        let mut beta: Vec<f64> = beta_std
            .iter()
            .zip(&self.scale)
            .map(|(b, s)| b / s)
            .collect();
        if self.intercept {
            let shift: f64 = beta
                .iter()
                .zip(&self.center)
                .skip(1)
                .map(|(b, c)| b * c)
                .sum();
            beta[0] -= shift;
        }
        beta
    }
}

/// Solves `A x = b` for a symmetric positive definite `A` given row-major.
pub(crate) fn solve_spd(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let p = b.len();
    let m = DMatrix::from_row_slice(p, p, a);
    let chol = m.cholesky()?;
    let x = chol.solve(&DVector::from_column_slice(b));
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}

/// Accumulates `w · z z'` into a row-major `p × p` buffer (upper triangle),
/// then [`symmetrize`] copies it down.
#[inline]
pub(crate) fn add_outer(h: &mut [f64], z: &[f64], w: f64) {
    let p = z.len();
    for a in 0..p {
        let wa = w * z[a];
        for b in a..p {
            h[a * p + b] += wa * z[b];
        }
    }
}

pub(crate) fn symmetrize(h: &mut [f64], p: usize) {
    for a in 0..p {
        for b in 0..a {
            h[a * p + b] = h[b * p + a];
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + e^eta)` without overflow.
pub(crate) fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}
