//! Logistic stick-breaking mixture of Gaussian regressions.
//!
//! Component `c < C` is chosen with conditional probability
//! `logistic(x'psi_c)` given that no earlier component was chosen; the last
//! component absorbs the remaining mass. Each component is a Gaussian
//! regression `N(x'beta_c, 1/tau_c)`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{norm_cdf, norm_pdf, std_normal};

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log stick-breaking weights from the `C - 1` stick logits.
pub fn log_stick_weights(logits: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len() + 1);
    let mut log_rest = 0.0;
    for &eta in logits {
        out.push(log_rest - softplus(-eta));
        log_rest -= softplus(eta);
    }
    out.push(log_rest);
    out
}

/// Stick-breaking weights from the `C - 1` stick logits.
pub fn stick_weights(logits: &[f64]) -> Vec<f64> {
    log_stick_weights(logits).into_iter().map(f64::exp).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    (0..m.ncols()).map(|j| m[(i, j)]).collect()
}

pub(crate) fn row_dot(m: &DMatrix<f64>, i: usize, v: &[f64]) -> f64 {
    (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum()
}

/// Hyperparameters shared by both estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// Prior mean and variance of every kernel coefficient.
    pub beta_mean: f64,
    pub beta_var: f64,
    /// Gamma prior (shape, rate) on the kernel precisions.
    pub a_tau: f64,
    pub b_tau: f64,
    /// Scale of the variational horseshoe on the stick coefficients.
    pub b_psi: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self { beta_mean: 0.0, beta_var: 1.0, a_tau: 0.5, b_tau: 0.5, b_psi: 1e-4 }
    }
}

/// Scale parameters of the horseshoe prior on the stick coefficients.
///
/// All matrices are `(C-1) x k`. The sampler uses one global scale per
/// component and stores it replicated across columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Horseshoe {
    pub local: DMatrix<f64>,
    pub local_aux: DMatrix<f64>,
    pub global: DMatrix<f64>,
    pub global_aux: Vec<f64>,
}

impl Horseshoe {
    pub fn ones(sticks: usize, k: usize) -> Self {
        Self {
            local: DMatrix::from_element(sticks, k, 1.0),
            local_aux: DMatrix::from_element(sticks, k, 1.0),
            global: DMatrix::from_element(sticks, k, 1.0),
            global_aux: vec![1.0; sticks],
        }
    }
}

/// One parameter draw (or point estimate) of the mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsbpParams {
    /// `C x k` kernel regression coefficients.
    pub beta: DMatrix<f64>,
    /// Kernel precisions, length `C`.
    pub tau: Vec<f64>,
    /// `(C-1) x k` stick coefficients.
    pub psi: DMatrix<f64>,
    pub horseshoe: Horseshoe,
}

impl LsbpParams {
    pub fn zeros(c: usize, k: usize) -> Self {
        Self {
            beta: DMatrix::zeros(c, k),
            tau: vec![1.0; c],
            psi: DMatrix::zeros(c - 1, k),
            horseshoe: Horseshoe::ones(c - 1, k),
        }
    }

    pub fn n_components(&self) -> usize {
        self.tau.len()
    }

    pub fn dim(&self) -> usize {
        self.beta.ncols()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.psi.nrows()).map(|c| row_dot(&self.psi, c, x)).collect()
    }

    pub fn weights(&self, x: &[f64]) -> Vec<f64> {
        stick_weights(&self.logits(x))
    }

    pub fn density(&self, x: &[f64]) -> ForecastDensity {
        let c = self.n_components();
        ForecastDensity {
            weights: self.weights(x),
            means: (0..c).map(|i| row_dot(&self.beta, i, x)).collect(),
            precisions: self.tau.clone(),
        }
    }
}

/// Anything that maps a covariate row to a Gaussian-mixture forecast.
pub trait DensityModel {
    fn density(&self, x: &[f64]) -> ForecastDensity;
}

impl DensityModel for LsbpParams {
    fn density(&self, x: &[f64]) -> ForecastDensity {
        LsbpParams::density(self, x)
    }
}

/// Finite Gaussian mixture. Averages of mixtures are mixtures, so posterior
/// mean densities use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDensity {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub precisions: Vec<f64>,
}

impl ForecastDensity {
    pub fn normal(mean: f64, var: f64) -> Self {
        Self { weights: vec![1.0], means: vec![mean], precisions: vec![1.0 / var] }
    }

    /// Equal-weight average of several mixtures.
    pub fn average(parts: &[ForecastDensity]) -> Self {
        let m = parts.len() as f64;
        let mut out = ForecastDensity { weights: vec![], means: vec![], precisions: vec![] };
        for p in parts {
            out.weights.extend(p.weights.iter().map(|w| w / m));
            out.means.extend_from_slice(&p.means);
            out.precisions.extend_from_slice(&p.precisions);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sd(&self, c: usize) -> f64 {
        1.0 / self.precisions[c].sqrt()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let mut s = 0.0;
        for c in 0..self.len() {
            let sq = self.precisions[c].sqrt();
            s += self.weights[c] * sq * norm_pdf(sq * (y - self.means[c]));
        }
        s
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let mut s = 0.0;
        for c in 0..self.len() {
            s += self.weights[c] * norm_cdf(self.precisions[c].sqrt() * (y - self.means[c]));
        }
        s.clamp(0.0, 1.0)
    }

    pub fn mean(&self) -> f64 {
        dot(&self.weights, &self.means)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let mut s = 0.0;
        for c in 0..self.len() {
            s += self.weights[c] * (1.0 / self.precisions[c] + (self.means[c] - m).powi(2));
        }
        s
    }

    /// Interval holding essentially all mass: twelve component standard
    /// deviations beyond the extreme means.
    pub fn support(&self) -> (f64, f64) {
        let lo = self.means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_tau = self.precisions.iter().cloned().fold(f64::INFINITY, f64::min);
        let s = 12.0 / min_tau.sqrt();
        (lo - s, hi + s)
    }

    /// Inverse cdf by bisection on the support bracket.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
        let (mut lo, mut hi) = self.support();
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let f = self.cdf(mid);
            if (f - p).abs() <= 1e-12 {
                return mid;
            }
            if f < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn quantiles(&self, levels: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = levels.iter().map(|&p| self.quantile(p)).collect();
        // bisection is monotone in p up to ties; enforce it exactly
        for i in 1..out.len() {
            if levels[i] >= levels[i - 1] && out[i] < out[i - 1] {
                out[i] = out[i - 1];
            }
        }
        out
    }

    /// Probability mass in `(a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        let fa = if a == f64::NEG_INFINITY { 0.0 } else { self.cdf_unclamped(a) };
        let fb = if b == f64::INFINITY { 1.0 } else { self.cdf_unclamped(b) };
        fb - fa
    }

    fn cdf_unclamped(&self, y: f64) -> f64 {
        let mut s = 0.0;
        for c in 0..self.len() {
            s += self.weights[c] * norm_cdf(self.precisions[c].sqrt() * (y - self.means[c]));
        }
        s
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut c = self.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = i;
                break;
            }
        }
        self.means[c] + std_normal(rng) / self.precisions[c].sqrt()
    }
}
