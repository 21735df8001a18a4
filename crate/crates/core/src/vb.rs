//! Mean-field variational Bayes for the stick-breaking mixture.
//!
//! The augmented model carries a Bernoulli indicator `z_tc` and a
//! Pólya-Gamma variable `omega_tc` for every observation and stick. The
//! factors are Bernoulli, Pólya-Gamma, Gaussian (stick and kernel
//! coefficients), Gamma (kernel precisions) and inverse-gamma (horseshoe
//! scales). Each update below is the exact coordinate maximizer of
//! [`VariationalState::elbo`], so the bound never decreases.
//!
//! The horseshoe on stick coefficient `psi_jc` is the four-level hierarchy
//! `psi ~ N(0, u)`, `u | e ~ IG(1/2, 1/e)`, `e | g ~ IG(1/2, 1/(b^2 g))`,
//! `g | xi ~ IG(1/2, 1/xi)`, `xi ~ IG(1/2, 1)` with `b = b_psi`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::dist::{gamma, inv_gamma, pg_mean, rng_stream};
use crate::ensemble::{Estimator, PosteriorEnsemble};
use crate::error::{invalid, Error, Result};
use crate::linalg::{moments_from_precision, quad_form, sample_mvn, weighted_cross};
use crate::model::{logistic, row, Horseshoe, LsbpParams, Priors};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;
const PREC_CEIL: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VbConfig {
    pub components: usize,
    pub max_iters: usize,
    /// Relative ELBO change that stops the iterations.
    pub tol: f64,
    /// Independent initializations; the highest final ELBO wins.
    pub starts: usize,
    pub seed: u64,
    /// Dirichlet noise mixed into the initial responsibilities.
    pub jitter: f64,
    /// Try emptying each component of the winning start and keep the
    /// result when the ELBO improves.
    pub prune: bool,
    pub priors: Priors,
}

impl Default for VbConfig {
    fn default() -> Self {
        Self { components: 5, max_iters: 2000, tol: 1e-8, starts: 5, seed: 0, jitter: 0.1, prune: true, priors: Priors::default() }
    }
}

/// Inverse-gamma factor `IG(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGamma {
    pub shape: f64,
    pub rate: f64,
}

impl InvGamma {
    pub fn mean_inv(&self) -> f64 {
        self.shape / self.rate
    }
    pub fn mean_log(&self) -> f64 {
        self.rate.ln() - digamma(self.shape)
    }
    pub fn entropy(&self) -> f64 {
        self.shape + self.rate.ln() + ln_gamma(self.shape) - (1.0 + self.shape) * digamma(self.shape)
    }
}

/// `E log IG(x | a, r)` when `x` and the rate `r` are independent with the
/// given moments.
fn expected_ln_inv_gamma(a: f64, e_log_rate: f64, e_rate: f64, e_log_x: f64, e_inv_x: f64) -> f64 {
    a * e_log_rate - ln_gamma(a) - (a + 1.0) * e_log_x - e_rate * e_inv_x
}

/// Gamma factor on a precision (shape, rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFactor {
    pub shape: f64,
    pub rate: f64,
}

impl GammaFactor {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
    pub fn mean_log(&self) -> f64 {
        digamma(self.shape) - self.rate.ln()
    }
    pub fn entropy(&self) -> f64 {
        self.shape - self.rate.ln() + ln_gamma(self.shape) + (1.0 - self.shape) * digamma(self.shape)
    }
    /// `E log Gamma(tau | a0, b0)` under this factor.
    pub fn expected_ln_prior(&self, a0: f64, b0: f64) -> f64 {
        a0 * b0.ln() - ln_gamma(a0) + (a0 - 1.0) * self.mean_log() - b0 * self.mean()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFactor {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_det_cov: f64,
}

impl GaussianFactor {
    pub fn entropy(&self) -> f64 {
        0.5 * self.mean.len() as f64 * (1.0 + LN_2PI) + 0.5 * self.log_det_cov
    }
    /// `E[(y - x'b)^2]`.
    pub fn sq_resid(&self, x: &[f64], y: f64) -> f64 {
        let m: f64 = x.iter().zip(self.mean.iter()).map(|(a, b)| a * b).sum();
        (y - m).powi(2) + quad_form(&self.cov, x)
    }
    /// `E[(x'b)^2]`.
    pub fn second_moment(&self, x: &[f64]) -> f64 {
        let m: f64 = x.iter().zip(self.mean.iter()).map(|(a, b)| a * b).sum();
        m * m + quad_form(&self.cov, x)
    }
    pub(crate) fn prior(k: usize, mean: f64, var: f64) -> Self {
        Self {
            mean: DVector::from_element(k, mean),
            cov: DMatrix::from_diagonal_element(k, k, var),
            log_det_cov: k as f64 * var.ln(),
        }
    }
}

/// Variational horseshoe factors for one stick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeFactors {
    pub local: Vec<InvGamma>,
    pub local_aux: Vec<InvGamma>,
    pub global: Vec<InvGamma>,
    pub global_aux: InvGamma,
}

impl HorseshoeFactors {
    pub(crate) fn init(k: usize) -> Self {
        let unit = InvGamma { shape: 1.0, rate: 1.0 };
        let a = 0.5 * (k as f64 + 1.0);
        Self { local: vec![unit; k], local_aux: vec![unit; k], global: vec![unit; k], global_aux: InvGamma { shape: a, rate: a } }
    }

    /// Diagonal prior precision of the stick coefficients.
    pub fn precision(&self) -> Vec<f64> {
        self.local.iter().map(|f| f.mean_inv().min(PREC_CEIL)).collect()
    }

    pub fn update(&mut self, psi: &GaussianFactor, b_psi: f64) {
        self.update_from_moments(&diag_second_moments(psi), b_psi);
    }

    /// Sequential exact updates of the four levels given `E[psi_j^2]`.
    pub fn update_from_moments(&mut self, e_sq: &[f64], b_psi: f64) {
        let b2 = 1.0 / (b_psi * b_psi);
        let k = self.local.len();
        for j in 0..k {
            self.local[j] = InvGamma { shape: 1.0, rate: 0.5 * e_sq[j] + self.local_aux[j].mean_inv() };
            self.local_aux[j] = InvGamma { shape: 1.0, rate: self.local[j].mean_inv() + b2 * self.global[j].mean_inv() };
            self.global[j] = InvGamma { shape: 1.0, rate: b2 * self.local_aux[j].mean_inv() + self.global_aux.mean_inv() };
        }
        let s: f64 = self.global.iter().map(|g| g.mean_inv()).sum();
        self.global_aux = InvGamma { shape: 0.5 * (k as f64 + 1.0), rate: 1.0 + s };
    }

    pub fn elbo(&self, psi: &GaussianFactor, b_psi: f64) -> f64 {
        self.elbo_from_moments(&diag_second_moments(psi), b_psi)
    }

    /// Expected log prior of the coefficients and scales plus the entropy
    /// of the scale factors.
    pub fn elbo_from_moments(&self, e_sq: &[f64], b_psi: f64) -> f64 {
        let b2 = 1.0 / (b_psi * b_psi);
        let mut l = 0.0;
        let xi = &self.global_aux;
        for j in 0..self.local.len() {
            let (u, e, g) = (&self.local[j], &self.local_aux[j], &self.global[j]);
            l += -0.5 * LN_2PI - 0.5 * u.mean_log() - 0.5 * u.mean_inv() * e_sq[j];
            l += expected_ln_inv_gamma(0.5, -e.mean_log(), e.mean_inv(), u.mean_log(), u.mean_inv());
            l += expected_ln_inv_gamma(0.5, b2.ln() - g.mean_log(), b2 * g.mean_inv(), e.mean_log(), e.mean_inv());
            l += expected_ln_inv_gamma(0.5, -xi.mean_log(), xi.mean_inv(), g.mean_log(), g.mean_inv());
            l += u.entropy() + e.entropy() + g.entropy();
        }
        l += expected_ln_inv_gamma(0.5, 0.0, 1.0, xi.mean_log(), xi.mean_inv());
        l + xi.entropy()
    }
}

fn diag_second_moments(f: &GaussianFactor) -> Vec<f64> {
    (0..f.mean.len()).map(|j| f.mean[j].powi(2) + f.cov[(j, j)]).collect()
}

/// Full variational state for `C` components on a `T x k` design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub beta: Vec<GaussianFactor>,
    pub tau: Vec<GammaFactor>,
    pub psi: Vec<GaussianFactor>,
    pub horseshoe: Vec<HorseshoeFactors>,
    /// `T x (C-1)` Bernoulli probabilities of the stick indicators.
    pub rho: DMatrix<f64>,
    /// `T x (C-1)` Pólya-Gamma tilting parameters.
    pub delta: DMatrix<f64>,
}

fn ln_cosh_half(d: f64) -> f64 {
    let a = 0.5 * d.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn bernoulli_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

impl VariationalState {
    pub fn n_components(&self) -> usize {
        self.tau.len()
    }

    /// `T x C` expected allocations `E[zeta_tc]`.
    pub fn responsibilities(&self) -> DMatrix<f64> {
        let t_len = self.rho.nrows();
        let c = self.n_components();
        DMatrix::from_fn(t_len, c, |t, i| {
            let mut rest = 1.0;
            for l in 0..i {
                rest *= 1.0 - self.rho[(t, l)];
            }
            if i + 1 < c {
                rest * self.rho[(t, i)]
            } else {
                rest
            }
        })
    }

    /// Initial state from a soft allocation; kernels, sticks and scales are
    /// then fitted to it by one pass of the coordinate updates.
    pub fn from_allocation(zeta: &DMatrix<f64>, x: &DMatrix<f64>, y: &[f64], priors: &Priors) -> Self {
        let (t_len, c) = (zeta.nrows(), zeta.ncols());
        let k = x.ncols();
        let mut rho = DMatrix::zeros(t_len, c - 1);
        for t in 0..t_len {
            let mut rest = 1.0;
            for i in 0..c - 1 {
                let r = if rest > 1e-12 { zeta[(t, i)] / rest } else { 0.5 };
                rho[(t, i)] = r.clamp(1e-6, 1.0 - 1e-6);
                rest *= 1.0 - rho[(t, i)];
            }
        }
        let mean_y = y.iter().sum::<f64>() / y.len() as f64;
        let var_y = (y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / y.len() as f64).max(1e-8);
        Self {
            beta: vec![GaussianFactor::prior(k, priors.beta_mean, priors.beta_var); c],
            tau: vec![GammaFactor { shape: 1.0, rate: var_y }; c],
            psi: vec![GaussianFactor::prior(k, 0.0, 1.0); c - 1],
            horseshoe: vec![HorseshoeFactors::init(k); c - 1],
            rho,
            delta: DMatrix::zeros(t_len, c - 1),
        }
    }

    /// Stick indicator probabilities, one stick at a time within each row.
    pub fn update_rho(&mut self, x: &DMatrix<f64>, y: &[f64]) {
        let c = self.n_components();
        if c == 1 {
            return;
        }
        let loglik = self.expected_loglik(x, y);
        for t in 0..y.len() {
            let xt = row(x, t);
            // rest[i]: expected log-likelihood given the stick passes i.
            // It only involves later sticks, which this row has not
            // refreshed yet.
            let mut rest = vec![0.0; c - 1];
            rest[c - 2] = loglik[(t, c - 1)];
            for i in (0..c - 2).rev() {
                let r = self.rho[(t, i + 1)];
                rest[i] = r * loglik[(t, i + 1)] + (1.0 - r) * rest[i + 1];
            }
            let mut before = 1.0;
            for i in 0..c - 1 {
                let eta = xt.iter().zip(self.psi[i].mean.iter()).map(|(a, b)| a * b).sum::<f64>();
                let r = logistic(eta + before * (loglik[(t, i)] - rest[i]));
                self.rho[(t, i)] = r;
                before *= 1.0 - r;
            }
        }
    }

    /// `E log N(y_t | x_t'beta_c, 1/tau_c)` without the `2 pi` constant.
    fn expected_loglik(&self, x: &DMatrix<f64>, y: &[f64]) -> DMatrix<f64> {
        let c = self.n_components();
        let half_elog: Vec<f64> = self.tau.iter().map(|f| 0.5 * f.mean_log()).collect();
        let etau: Vec<f64> = self.tau.iter().map(|f| f.mean()).collect();
        DMatrix::from_fn(y.len(), c, |t, i| {
            let xt = row(x, t);
            half_elog[i] - 0.5 * etau[i] * self.beta[i].sq_resid(&xt, y[t])
        })
    }

    /// Stick coefficients, their horseshoe scales and the Pólya-Gamma
    /// factors, stick by stick.
    pub fn update_sticks(&mut self, x: &DMatrix<f64>, priors: &Priors) {
        for i in 0..self.n_components() - 1 {
            let omega: Vec<f64> = (0..x.nrows()).map(|t| pg_mean(self.delta[(t, i)])).collect();
            let rho = self.rho.column(i);
            let (mut prec, b) = weighted_cross(x, 0..x.nrows(), |t| omega[t], |t| (rho[t] - 0.5) / omega[t]);
            for (j, p) in self.horseshoe[i].precision().into_iter().enumerate() {
                prec[(j, j)] += p;
            }
            let m = moments_from_precision(&prec, &b);
            self.psi[i] = GaussianFactor { mean: m.mean, cov: m.cov, log_det_cov: m.log_det_cov };
            self.horseshoe[i].update(&self.psi[i], priors.b_psi);
            for t in 0..x.nrows() {
                self.delta[(t, i)] = self.psi[i].second_moment(&row(x, t)).sqrt();
            }
        }
    }

    /// Kernel coefficients then precisions for every component.
    pub fn update_kernels(&mut self, x: &DMatrix<f64>, y: &[f64], priors: &Priors) {
        let zeta = self.responsibilities();
        let k = x.ncols();
        for c in 0..self.n_components() {
            let etau = self.tau[c].mean();
            let (mut prec, mut b) = weighted_cross(x, 0..y.len(), |t| etau * zeta[(t, c)], |t| y[t]);
            for j in 0..k {
                prec[(j, j)] += 1.0 / priors.beta_var;
                b[j] += priors.beta_mean / priors.beta_var;
            }
            let m = moments_from_precision(&prec, &b);
            self.beta[c] = GaussianFactor { mean: m.mean, cov: m.cov, log_det_cov: m.log_det_cov };
            let mut n = 0.0;
            let mut ss = 0.0;
            for t in 0..y.len() {
                let z = zeta[(t, c)];
                n += z;
                ss += z * self.beta[c].sq_resid(&row(x, t), y[t]);
            }
            self.tau[c] = GammaFactor { shape: priors.a_tau + 0.5 * n, rate: priors.b_tau + 0.5 * ss };
        }
    }

    /// Evidence lower bound of the augmented model.
    pub fn elbo(&self, x: &DMatrix<f64>, y: &[f64], priors: &Priors) -> f64 {
        let c = self.n_components();
        let k = x.ncols();
        let zeta = self.responsibilities();
        let loglik = self.expected_loglik(x, y);
        let mut l = 0.0;
        for t in 0..y.len() {
            for i in 0..c {
                if zeta[(t, i)] > 0.0 {
                    l += zeta[(t, i)] * (loglik[(t, i)] - 0.5 * LN_2PI);
                }
            }
        }
        for i in 0..c - 1 {
            for t in 0..y.len() {
                let xt = row(x, t);
                let r = self.rho[(t, i)];
                let d = self.delta[(t, i)];
                let eta: f64 = xt.iter().zip(self.psi[i].mean.iter()).map(|(a, b)| a * b).sum();
                let m2 = self.psi[i].second_moment(&xt);
                let w = pg_mean(d);
                l += -std::f64::consts::LN_2 + (r - 0.5) * eta - 0.5 * w * m2 - ln_cosh_half(d) + 0.5 * w * d * d;
                l += bernoulli_entropy(r);
            }
            l += self.horseshoe[i].elbo(&self.psi[i], priors.b_psi) + self.psi[i].entropy();
        }
        for i in 0..c {
            let bf = &self.beta[i];
            let mut sq = 0.0;
            for j in 0..k {
                sq += (bf.mean[j] - priors.beta_mean).powi(2) + bf.cov[(j, j)];
            }
            l += -0.5 * k as f64 * (LN_2PI + priors.beta_var.ln()) - 0.5 * sq / priors.beta_var + bf.entropy();
            l += self.tau[i].expected_ln_prior(priors.a_tau, priors.b_tau) + self.tau[i].entropy();
        }
        l
    }

    /// Posterior means as a single parameter set.
    pub fn point_params(&self) -> LsbpParams {
        let c = self.n_components();
        let k = self.beta[0].mean.len();
        let mut p = LsbpParams::zeros(c, k);
        for i in 0..c {
            for j in 0..k {
                p.beta[(i, j)] = self.beta[i].mean[j];
            }
            p.tau[i] = self.tau[i].mean();
        }
        p.horseshoe = Horseshoe::ones(c - 1, k);
        for i in 0..c - 1 {
            let hs = &self.horseshoe[i];
            for j in 0..k {
                p.psi[(i, j)] = self.psi[i].mean[j];
                p.horseshoe.local[(i, j)] = 1.0 / hs.local[j].mean_inv();
                p.horseshoe.local_aux[(i, j)] = 1.0 / hs.local_aux[j].mean_inv();
                p.horseshoe.global[(i, j)] = 1.0 / hs.global[j].mean_inv();
            }
            p.horseshoe.global_aux[i] = 1.0 / hs.global_aux.mean_inv();
        }
        p
    }

    /// Independent draw from the variational posterior.
    pub fn sample_params<R: Rng + ?Sized>(&self, rng: &mut R) -> LsbpParams {
        let mut p = self.point_params();
        let (c, k) = (self.n_components(), p.dim());
        for i in 0..c {
            let b = sample_mvn(rng, &self.beta[i].mean, &self.beta[i].cov);
            for j in 0..k {
                p.beta[(i, j)] = b[j];
            }
            p.tau[i] = gamma(rng, self.tau[i].shape, self.tau[i].rate);
        }
        for i in 0..c - 1 {
            let s = sample_mvn(rng, &self.psi[i].mean, &self.psi[i].cov);
            let hs = &self.horseshoe[i];
            for j in 0..k {
                p.psi[(i, j)] = s[j];
                p.horseshoe.local[(i, j)] = inv_gamma(rng, hs.local[j].shape, hs.local[j].rate);
                p.horseshoe.local_aux[(i, j)] = inv_gamma(rng, hs.local_aux[j].shape, hs.local_aux[j].rate);
                p.horseshoe.global[(i, j)] = inv_gamma(rng, hs.global[j].shape, hs.global[j].rate);
            }
            p.horseshoe.global_aux[i] = inv_gamma(rng, hs.global_aux.shape, hs.global_aux.rate);
        }
        p
    }
}

/// Result of a (multi-start) variational fit.
#[derive(Debug, Clone)]
pub struct VbFit {
    pub state: VariationalState,
    /// ELBO after every sweep of the winning start.
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    /// Final ELBO of every start, in start order.
    pub start_elbos: Vec<f64>,
}

impl VbFit {
    pub fn elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("non-empty trace")
    }

    /// Ensemble holding only the posterior means.
    pub fn point_ensemble(&self) -> PosteriorEnsemble {
        let mut e = PosteriorEnsemble::new(Estimator::Vb, vec![self.state.point_params()]);
        e.elbo_trace = self.elbo_trace.clone();
        e
    }

    /// Ensemble of independent draws from the variational posterior.
    pub fn draw_ensemble(&self, n: usize, seed: u64) -> PosteriorEnsemble {
        let mut rng = rng_stream(seed, 1 << 32);
        let draws = (0..n).map(|_| self.state.sample_params(&mut rng)).collect();
        let mut e = PosteriorEnsemble::new(Estimator::Vb, draws);
        e.elbo_trace = self.elbo_trace.clone();
        e
    }
}

fn quantile_allocation<R: Rng + ?Sized>(rng: &mut R, y: &[f64], c: usize, jitter: f64) -> DMatrix<f64> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut zeta = DMatrix::zeros(n, c);
    let j = if c > 1 { jitter } else { 0.0 };
    for (rank, &t) in order.iter().enumerate() {
        let g = (rank * c / n.max(1)).min(c - 1);
        // flat Dirichlet draw from normalized exponentials
        let e: Vec<f64> = (0..c).map(|_| if j > 0.0 { Exp1.sample(rng) } else { 0.0 }).collect();
        let total: f64 = e.iter().sum::<f64>().max(1e-300);
        for i in 0..c {
            zeta[(t, i)] = (1.0 - j) * f64::from(u8::from(i == g)) + j * e[i] / total;
        }
    }
    zeta
}

fn validate(x: &DMatrix<f64>, y: &[f64], cfg: &VbConfig) -> Result<()> {
    if cfg.components == 0 {
        return Err(invalid("number of components must be positive"));
    }
    if x.nrows() != y.len() || y.is_empty() {
        return Err(invalid("design and response lengths differ or are empty"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite value in design or response"));
    }
    Ok(())
}

/// Runs the coordinate ascent from one initial state.
pub fn run_from(
    mut state: VariationalState,
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &VbConfig,
) -> (VariationalState, Vec<f64>, bool) {
    let mut trace = Vec::new();
    let mut converged = false;
    for it in 0..cfg.max_iters.max(1) {
        if it > 0 {
            state.update_rho(x, y);
        }
        state.update_sticks(x, &cfg.priors);
        state.update_kernels(x, y, &cfg.priors);
        let l = state.elbo(x, y, &cfg.priors);
        let prev = trace.last().copied();
        trace.push(l);
        if let Some(p) = prev {
            if ((l - p) / p.abs().max(1e-300)).abs() < cfg.tol {
                converged = true;
                break;
            }
        }
    }
    (state, trace, converged)
}

/// Initial state for start `s`: quantile bins of the response with
/// Dirichlet noise.
pub fn initial_state(x: &DMatrix<f64>, y: &[f64], cfg: &VbConfig, start: u64) -> VariationalState {
    let mut rng = rng_stream(cfg.seed, start);
    let zeta = quantile_allocation(&mut rng, y, cfg.components, cfg.jitter);
    VariationalState::from_allocation(&zeta, x, y, &cfg.priors)
}

/// Responsibilities with component `c` emptied into the others in
/// proportion, and the emptied column moved to the last stick.
fn without_component(z: &DMatrix<f64>, c: usize) -> DMatrix<f64> {
    let n = z.ncols();
    let order: Vec<usize> = (0..n).filter(|&i| i != c).chain(std::iter::once(c)).collect();
    DMatrix::from_fn(z.nrows(), n, |t, i| {
        let src = order[i];
        if src == c {
            return 0.0;
        }
        let rest = 1.0 - z[(t, c)];
        if rest > 1e-12 {
            z[(t, src)] / rest
        } else {
            1.0 / (n - 1) as f64
        }
    })
}

fn prune(
    mut best: (VariationalState, Vec<f64>, bool),
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &VbConfig,
) -> (VariationalState, Vec<f64>, bool) {
    let c = best.0.n_components();
    if c < 2 {
        return best;
    }
    for _ in 0..c {
        let z = best.0.responsibilities();
        let mass: Vec<f64> = (0..c).map(|i| z.column(i).sum()).collect();
        let mut order: Vec<usize> = (0..c).filter(|&i| mass[i] > 1e-6).collect();
        order.sort_by(|&a, &b| mass[a].total_cmp(&mass[b]));
        let current = *best.1.last().expect("non-empty trace");
        let improved = order.into_iter().find_map(|i| {
            let start = VariationalState::from_allocation(&without_component(&z, i), x, y, &cfg.priors);
            let run = run_from(start, x, y, cfg);
            (*run.1.last()? > current + 1e-9 * current.abs()).then_some(run)
        });
        match improved {
            Some(run) => best = run,
            None => break,
        }
    }
    best
}

pub fn run_vb(x: &DMatrix<f64>, y: &[f64], cfg: &VbConfig) -> Result<VbFit> {
    validate(x, y, cfg)?;
    let starts = cfg.starts.max(1) as u64;
    let runs: Vec<(VariationalState, Vec<f64>, bool)> = (0..starts)
        .into_par_iter()
        .map(|s| run_from(initial_state(x, y, cfg, s), x, y, cfg))
        .collect();
    let start_elbos: Vec<f64> = runs.iter().map(|r| *r.1.last().unwrap()).collect();
    if start_elbos.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("ELBO is not finite".into()));
    }
    let best = (0..runs.len()).fold(0, |b, i| if start_elbos[i] > start_elbos[b] { i } else { b });
    let mut winner = runs.into_iter().nth(best).unwrap();
    if cfg.prune {
        winner = prune(winner, x, y, cfg);
    }
    let (state, elbo_trace, converged) = winner;
    if !elbo_trace.last().is_some_and(|l| l.is_finite()) {
        return Err(Error::Numerical("ELBO is not finite".into()));
    }
    Ok(VbFit { state, elbo_trace, converged, start_elbos })
}

/// Fits `C = 1..=c_max` and returns the ELBO-maximizing truncation with the
/// ELBO of every candidate.
pub fn select_truncation(x: &DMatrix<f64>, y: &[f64], c_max: usize, cfg: &VbConfig) -> Result<(usize, Vec<f64>)> {
    if c_max == 0 {
        return Err(invalid("maximum truncation must be positive"));
    }
    let elbos: Vec<f64> = (1..=c_max)
        .into_par_iter()
        .map(|c| run_vb(x, y, &VbConfig { components: c, ..cfg.clone() }).map(|f| f.elbo()))
        .collect::<Result<_>>()?;
    let best = (0..elbos.len()).fold(0, |b, i| if elbos[i] > elbos[b] { i } else { b });
    Ok((best + 1, elbos))
}
