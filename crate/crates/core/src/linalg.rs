//! Gaussian posteriors expressed through their precision matrix.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::dist::std_normal;

/// Cholesky factor of a precision matrix, adding diagonal jitter when the
/// matrix is numerically indefinite.
pub fn cholesky(p: &DMatrix<f64>) -> Cholesky<f64, Dyn> {
    if let Some(c) = Cholesky::new(p.clone()) {
        return c;
    }
    let scale = (p.trace().abs() / p.nrows().max(1) as f64).max(1e-300);
    let mut jitter = 1e-12 * scale;
    loop {
        let mut q = p.clone();
        for i in 0..q.nrows() {
            q[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(q) {
            return c;
        }
        jitter *= 10.0;
        assert!(jitter.is_finite(), "precision matrix is not positive definite");
    }
}

/// Mean, covariance and log-determinant of the covariance for the Gaussian
/// with precision `p` and linear term `b` (mean solves `p m = b`).
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_det_cov: f64,
}

pub fn moments_from_precision(p: &DMatrix<f64>, b: &DVector<f64>) -> GaussianMoments {
    let chol = cholesky(p);
    let mean = chol.solve(b);
    let cov = chol.inverse();
    let log_det_cov = -2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    GaussianMoments { mean, cov, log_det_cov }
}

/// Draw from `N(p^{-1} b, p^{-1})`.
pub fn sample_from_precision<R: Rng + ?Sized>(
    rng: &mut R,
    p: &DMatrix<f64>,
    b: &DVector<f64>,
) -> DVector<f64> {
    let chol = cholesky(p);
    let mean = chol.solve(b);
    let z = DVector::from_fn(p.nrows(), |_, _| std_normal(rng));
    let lt = chol.l().transpose();
    let dev = lt.solve_upper_triangular(&z).expect("triangular solve");
    mean + dev
}

/// Draw from `N(mean, cov)`.
pub fn sample_mvn<R: Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    let chol = cholesky(cov);
    let z = DVector::from_fn(mean.len(), |_, _| std_normal(rng));
    mean + chol.l() * z
}

/// `X' diag(w) X` and `X' diag(w) y` accumulated over the listed rows.
pub fn weighted_cross(
    x: &DMatrix<f64>,
    rows: impl Iterator<Item = usize>,
    w: impl Fn(usize) -> f64,
    y: impl Fn(usize) -> f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let k = x.ncols();
    let mut xtx = DMatrix::zeros(k, k);
    let mut xty = DVector::zeros(k);
    for t in rows {
        let wt = w(t);
        let yt = y(t);
        for i in 0..k {
            let xi = x[(t, i)] * wt;
            xty[i] += xi * yt;
            for j in 0..=i {
                xtx[(i, j)] += xi * x[(t, j)];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    (xtx, xty)
}

/// `x' A x` for a symmetric matrix stored densely.
pub fn quad_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let k = x.len();
    let mut s = 0.0;
    for i in 0..k {
        let mut r = 0.0;
        for j in 0..k {
            r += a[(i, j)] * x[j];
        }
        s += x[i] * r;
    }
    s
}
