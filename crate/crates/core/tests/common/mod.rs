//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use mixrisk::dist::{rng_stream, std_normal, RngStream};
use mixrisk::model::{ForecastDensity, LsbpParams, Priors};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn rng(seed: u64) -> RngStream {
    rng_stream(seed, 7)
}

/// Mixture with 1..=max_c components, Dirichlet(1) weights, means in
/// roughly [-6, 6] and standard deviations in [0.05, 3].
pub fn random_mixture<R: Rng + ?Sized>(rng: &mut R, max_c: usize) -> ForecastDensity {
    let c = rng.random_range(1..=max_c);
    let raw: Vec<f64> = (0..c).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    ForecastDensity {
        weights: raw.iter().map(|r| r / total).collect(),
        means: (0..c).map(|_| 2.0 * std_normal(rng) + rng.random_range(-2.0..2.0)).collect(),
        precisions: (0..c)
            .map(|_| {
                let sd: f64 = rng.random_range(0.05..3.0);
                1.0 / (sd * sd)
            })
            .collect(),
    }
}

/// Posterior means of the coefficients and precision of a Gaussian
/// regression with independent priors `beta ~ N(m, v I)` and
/// `tau ~ Gamma(a, b)`, by quadrature over `log tau`.
pub fn semi_conjugate_means(x: &DMatrix<f64>, y: &[f64], priors: &Priors) -> (Vec<f64>, f64) {
    let n = y.len() as f64;
    let k = x.ncols();
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * x;
    let xty = x.transpose() * &yv;
    let yty = yv.dot(&yv);
    let m = DVector::from_element(k, priors.beta_mean);
    let v_inv = 1.0 / priors.beta_var;
    let cond = |tau: f64| {
        let p = &xtx * tau + DMatrix::identity(k, k) * v_inv;
        let b = &xty * tau + &m * v_inv;
        let chol = p.clone().cholesky().expect("positive definite");
        let mean = chol.solve(&b);
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let quad = tau * yty + v_inv * m.dot(&m) - b.dot(&mean);
        let log_post_u = (priors.a_tau + 0.5 * n) * tau.ln() - priors.b_tau * tau - 0.5 * log_det - 0.5 * quad;
        (log_post_u, mean)
    };
    // least-squares residual precision as the grid centre
    let ls = xtx.clone().cholesky().expect("full rank").solve(&xty);
    let rss = (&yv - x * &ls).norm_squared();
    let centre = (n / rss).ln();
    let nodes = 6001;
    let us: Vec<f64> = (0..nodes).map(|i| centre - 3.0 + 6.0 * i as f64 / (nodes - 1) as f64).collect();
    let evals: Vec<(f64, DVector<f64>)> = us.iter().map(|&u| cond(u.exp())).collect();
    let top = evals.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut beta = DVector::zeros(k);
    let mut tau = 0.0;
    for (u, (lp, mean)) in us.iter().zip(&evals) {
        let w = (lp - top).exp();
        z += w;
        beta += mean * w;
        tau += u.exp() * w;
    }
    ((beta / z).as_slice().to_vec(), tau / z)
}

/// Posterior mean and standard deviation of both coefficients of a
/// two-parameter log posterior, by a dense rectangular grid.
pub fn grid_moments_2d<F: Fn(&[f64]) -> f64>(log_post: F, centre: [f64; 2], half_width: [f64; 2], n: usize) -> ([f64; 2], [f64; 2]) {
    let axis = |d: usize| -> Vec<f64> {
        (0..n).map(|i| centre[d] - half_width[d] + 2.0 * half_width[d] * i as f64 / (n - 1) as f64).collect()
    };
    let (a, b) = (axis(0), axis(1));
    let mut lp = Vec::with_capacity(n * n);
    for &u in &a {
        for &v in &b {
            lp.push(log_post(&[u, v]));
        }
    }
    let top = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2, mut s1, mut s2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &u) in a.iter().enumerate() {
        for (j, &v) in b.iter().enumerate() {
            let w = (lp[i * n + j] - top).exp();
            z += w;
            m1 += w * u;
            m2 += w * v;
            s1 += w * u * u;
            s2 += w * v * v;
        }
    }
    let (m1, m2) = (m1 / z, m2 / z);
    ([m1, m2], [(s1 / z - m1 * m1).sqrt(), (s2 / z - m2 * m2).sqrt()])
}

/// Sample mean and batch-means standard error.
pub fn mean_and_se(series: &[f64], batches: usize) -> (f64, f64) {
    let n = series.len();
    let size = n / batches;
    let means: Vec<f64> = (0..batches).map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (series.iter().sum::<f64>() / n as f64, (var / batches as f64).sqrt())
}

/// CRPS from `n` stratified draws: each component gets its share of the
/// draws, placed one per equal-probability stratum of its normal law.
pub fn sampled_crps<R: Rng + ?Sized>(d: &ForecastDensity, y: f64, n: usize, rng: &mut R) -> f64 {
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut counts: Vec<usize> = d.weights.iter().map(|w| (w * n as f64).floor() as usize).collect();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = d.weights[a] * n as f64 - counts[a] as f64;
        let fb = d.weights[b] * n as f64 - counts[b] as f64;
        fb.total_cmp(&fa)
    });
    let short = n - counts.iter().sum::<usize>();
    for &c in order.iter().take(short) {
        counts[c] += 1;
    }
    let mut xs = Vec::with_capacity(n);
    for (c, &m) in counts.iter().enumerate() {
        let sd = d.sd(c);
        for i in 0..m {
            let u = (i as f64 + rng.random::<f64>()) / m as f64;
            xs.push(d.means[c] + sd * std.inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16)));
        }
    }
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let abs_dev = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / nf;
    let pair = xs.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - nf + 1.0) * x).sum::<f64>() * 2.0 / (nf * nf);
    abs_dev - 0.5 * pair
}

/// Density averaged over the given design rows, on a grid.
pub fn average_density(draws: &[LsbpParams], rows: &[Vec<f64>], grid: &[f64]) -> Vec<f64> {
    let scale = 1.0 / (rows.len() * draws.len()) as f64;
    let mut g = vec![0.0; grid.len()];
    for x in rows {
        for p in draws {
            let f = p.density(x);
            for (gi, u) in g.iter_mut().zip(grid) {
                *gi += scale * f.pdf(*u);
            }
        }
    }
    g
}

/// Trapezoid L1 distance of two densities on a uniform grid.
pub fn l1_distance(a: &[f64], b: &[f64], step: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    step * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[d.len() - 1]))
}

/// Mixture weights averaged over rows, largest first.
pub fn sorted_average_weights(p: &LsbpParams, rows: &[Vec<f64>]) -> Vec<f64> {
    let mut w = vec![0.0; p.n_components()];
    for x in rows {
        for (a, b) in w.iter_mut().zip(p.weights(x)) {
            *a += b / rows.len() as f64;
        }
    }
    w.sort_by(|a, b| b.total_cmp(a));
    w
}

pub fn design_rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|t| x.row(t).iter().copied().collect()).collect()
}
