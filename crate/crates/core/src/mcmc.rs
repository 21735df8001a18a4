//! Pólya-Gamma Gibbs sampler for the stick-breaking mixture.
//!
//! One sweep: allocations, stick coefficients with their horseshoe scales,
//! kernel coefficients, kernel precisions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{categorical_log, gamma, inv_gamma, rng_stream, sample_pg1, std_normal};
use crate::ensemble::{Estimator, PosteriorEnsemble};
use crate::error::{invalid, Result};
use crate::linalg::{sample_from_precision, weighted_cross};
use crate::model::{log_stick_weights, row, row_dot, softplus, LsbpParams, Priors};

const VAR_FLOOR: f64 = 1e-12;
const VAR_CEIL: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub components: usize,
    /// Total sweeps, burn-in included.
    pub n_draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub priors: Priors,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { components: 5, n_draws: 20_000, burn_in: 5_000, thin: 10, chains: 1, seed: 0, priors: Priors::default() }
    }
}

impl McmcConfig {
    pub fn retained(&self) -> usize {
        self.n_draws.saturating_sub(self.burn_in) / self.thin.max(1)
    }
}

#[derive(Debug, Clone)]
pub struct McmcState {
    pub params: LsbpParams,
    /// Component index of each observation.
    pub alloc: Vec<usize>,
}

fn clamp_var(v: f64) -> f64 {
    v.clamp(VAR_FLOOR, VAR_CEIL)
}

/// Allocations from equal-count bins of the sorted response; all
/// coefficients at zero and unit scales.
pub fn init_state(y: &[f64], k: usize, c: usize) -> McmcState {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut alloc = vec![0; n];
    for (rank, &t) in order.iter().enumerate() {
        alloc[t] = (rank * c / n.max(1)).min(c - 1);
    }
    McmcState { params: LsbpParams::zeros(c, k), alloc }
}

/// Redraws every allocation from its full conditional.
pub fn step_allocations<R: Rng + ?Sized>(rng: &mut R, s: &mut McmcState, x: &DMatrix<f64>, y: &[f64]) {
    let p = &s.params;
    let c = p.n_components();
    let half_log_tau: Vec<f64> = p.tau.iter().map(|t| 0.5 * t.ln()).collect();
    let mut lw = vec![0.0; c];
    let mut xt = vec![0.0; x.ncols()];
    for t in 0..y.len() {
        for (j, v) in xt.iter_mut().enumerate() {
            *v = x[(t, j)];
        }
        let logw = log_stick_weights(&p.logits(&xt));
        for i in 0..c {
            let r = y[t] - row_dot(&p.beta, i, &xt);
            lw[i] = logw[i] + half_log_tau[i] - 0.5 * p.tau[i] * r * r;
        }
        s.alloc[t] = categorical_log(rng, &lw);
    }
}

/// Stick coefficients given allocations via Pólya-Gamma augmentation,
/// followed by their horseshoe scales.
pub fn step_logistic<R: Rng + ?Sized>(rng: &mut R, s: &mut McmcState, x: &DMatrix<f64>) {
    let k = x.ncols();
    let sticks = s.params.psi.nrows();
    for c in 0..sticks {
        let hs = &s.params.horseshoe;
        let prior_prec: Vec<f64> = (0..k).map(|j| 1.0 / clamp_var(hs.global[(c, j)] * hs.local[(c, j)])).collect();
        let at_risk: Vec<usize> = (0..s.alloc.len()).filter(|&t| s.alloc[t] >= c).collect();
        let psi_c: Vec<f64> = if at_risk.is_empty() {
            prior_prec.iter().map(|p| std_normal(rng) / p.sqrt()).collect()
        } else {
            let cur = row(&s.params.psi, c);
            let omega: Vec<f64> = at_risk.iter().map(|&t| sample_pg1(rng, row_dot(x, t, &cur))).collect();
            let mut idx = vec![0usize; x.nrows()];
            for (i, &t) in at_risk.iter().enumerate() {
                idx[t] = i;
            }
            let (mut prec, b) = weighted_cross(
                x,
                at_risk.iter().copied(),
                |t| omega[idx[t]],
                |t| {
                    let kappa = if s.alloc[t] == c { 0.5 } else { -0.5 };
                    kappa / omega[idx[t]]
                },
            );
            for j in 0..k {
                prec[(j, j)] += prior_prec[j];
            }
            sample_from_precision(rng, &prec, &b).iter().copied().collect()
        };
        for j in 0..k {
            s.params.psi[(c, j)] = psi_c[j];
        }
        step_horseshoe(rng, s, c);
    }
}

fn step_horseshoe<R: Rng + ?Sized>(rng: &mut R, s: &mut McmcState, c: usize) {
    let k = s.params.psi.ncols();
    let hs = &mut s.params.horseshoe;
    let global = hs.global[(c, 0)];
    for j in 0..k {
        let psi2 = s.params.psi[(c, j)].powi(2);
        let local = clamp_var(inv_gamma(rng, 1.0, 1.0 / hs.local_aux[(c, j)] + psi2 / (2.0 * global)));
        hs.local[(c, j)] = local;
        hs.local_aux[(c, j)] = clamp_var(inv_gamma(rng, 1.0, 1.0 + 1.0 / local));
    }
    let ss: f64 = (0..k).map(|j| s.params.psi[(c, j)].powi(2) / (2.0 * hs.local[(c, j)])).sum();
    let global = clamp_var(inv_gamma(rng, 0.5 * (k as f64 + 1.0), 1.0 / hs.global_aux[c] + ss));
    for j in 0..k {
        hs.global[(c, j)] = global;
    }
    hs.global_aux[c] = clamp_var(inv_gamma(rng, 1.0, 1.0 + 1.0 / global));
}

/// Kernel coefficients then precisions for every component. Empty
/// components are drawn from the prior.
pub fn step_kernels<R: Rng + ?Sized>(
    rng: &mut R,
    s: &mut McmcState,
    x: &DMatrix<f64>,
    y: &[f64],
    priors: &Priors,
) {
    let k = x.ncols();
    for c in 0..s.params.n_components() {
        let members: Vec<usize> = (0..y.len()).filter(|&t| s.alloc[t] == c).collect();
        let tau = s.params.tau[c];
        let (mut prec, mut b) = weighted_cross(x, members.iter().copied(), |_| tau, |t| y[t]);
        for j in 0..k {
            prec[(j, j)] += 1.0 / priors.beta_var;
            b[j] += priors.beta_mean / priors.beta_var;
        }
        let beta: DVector<f64> = sample_from_precision(rng, &prec, &b);
        let beta = beta.as_slice().to_vec();
        for j in 0..k {
            s.params.beta[(c, j)] = beta[j];
        }
        let ssr: f64 = members.iter().map(|&t| (y[t] - row_dot(x, t, &beta)).powi(2)).sum();
        let shape = priors.a_tau + 0.5 * members.len() as f64;
        let rate = priors.b_tau + 0.5 * ssr;
        s.params.tau[c] = gamma(rng, shape, rate).max(1.0 / VAR_CEIL);
    }
}

/// One full sweep.
pub fn sweep<R: Rng + ?Sized>(rng: &mut R, s: &mut McmcState, x: &DMatrix<f64>, y: &[f64], priors: &Priors) {
    step_allocations(rng, s, x, y);
    step_logistic(rng, s, x);
    step_kernels(rng, s, x, y, priors);
}

fn ln_gauss(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}

fn ln_inv_gamma(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - statrs::function::gamma::ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

/// Log joint density of data, allocations and parameters.
pub fn log_joint(s: &McmcState, x: &DMatrix<f64>, y: &[f64], priors: &Priors) -> f64 {
    let p = &s.params;
    let k = x.ncols();
    let mut lj = 0.0;
    for t in 0..y.len() {
        let xt = row(x, t);
        let g = s.alloc[t];
        lj += log_stick_weights(&p.logits(&xt))[g];
        lj += ln_gauss(y[t], row_dot(&p.beta, g, &xt), 1.0 / p.tau[g]);
    }
    for c in 0..p.n_components() {
        for j in 0..k {
            lj += ln_gauss(p.beta[(c, j)], priors.beta_mean, priors.beta_var);
        }
        let tau = p.tau[c];
        lj += priors.a_tau * priors.b_tau.ln() - statrs::function::gamma::ln_gamma(priors.a_tau)
            + (priors.a_tau - 1.0) * tau.ln()
            - priors.b_tau * tau;
    }
    let hs = &p.horseshoe;
    for c in 0..p.psi.nrows() {
        for j in 0..k {
            lj += ln_gauss(p.psi[(c, j)], 0.0, hs.global[(c, j)] * hs.local[(c, j)]);
            lj += ln_inv_gamma(hs.local[(c, j)], 0.5, 1.0 / hs.local_aux[(c, j)]);
            lj += ln_inv_gamma(hs.local_aux[(c, j)], 0.5, 1.0);
        }
        lj += ln_inv_gamma(hs.global[(c, 0)], 0.5, 1.0 / hs.global_aux[c]);
        lj += ln_inv_gamma(hs.global_aux[c], 0.5, 1.0);
    }
    lj
}

/// Runs one chain on stream `chain` of the configured seed.
pub fn run_chain(x: &DMatrix<f64>, y: &[f64], cfg: &McmcConfig, chain: u64) -> (Vec<LsbpParams>, Vec<f64>) {
    let mut rng = rng_stream(cfg.seed, chain);
    let mut s = init_state(y, x.ncols(), cfg.components);
    // the initial allocations carry the information, so start the first
    // sweep after the allocation step
    step_logistic(&mut rng, &mut s, x);
    step_kernels(&mut rng, &mut s, x, y, &cfg.priors);
    let thin = cfg.thin.max(1);
    let mut draws = Vec::with_capacity(cfg.retained());
    let mut lj = Vec::with_capacity(cfg.retained());
    for it in 0..cfg.n_draws {
        sweep(&mut rng, &mut s, x, y, &cfg.priors);
        if it >= cfg.burn_in && (it + 1 - cfg.burn_in).is_multiple_of(thin) {
            draws.push(s.params.clone());
            lj.push(log_joint(&s, x, y, &cfg.priors));
        }
    }
    (draws, lj)
}

pub fn run_mcmc(x: &DMatrix<f64>, y: &[f64], cfg: &McmcConfig) -> Result<PosteriorEnsemble> {
    if cfg.components == 0 {
        return Err(invalid("number of components must be positive"));
    }
    if x.nrows() != y.len() || y.is_empty() {
        return Err(invalid("design and response lengths differ or are empty"));
    }
    if cfg.burn_in >= cfg.n_draws || cfg.thin == 0 {
        return Err(invalid("need n_draws > burn_in and thin >= 1"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite value in design or response"));
    }
    let chains = cfg.chains.max(1) as u64;
    let runs: Vec<(Vec<LsbpParams>, Vec<f64>)> =
        (0..chains).into_par_iter().map(|c| run_chain(x, y, cfg, c)).collect();
    let mut ens = PosteriorEnsemble::new(Estimator::Mcmc, vec![]);
    for (d, l) in runs {
        ens.draws.extend(d);
        ens.log_joint.extend(l);
    }
    Ok(ens)
}

/// Logistic regression `z_t ~ Bernoulli(logistic(x_t'psi))` with a fixed
/// Gaussian prior `N(0, prior_var I)`, sampled by Pólya-Gamma Gibbs.
pub fn logistic_gibbs<R: Rng + ?Sized>(
    rng: &mut R,
    x: &DMatrix<f64>,
    z: &[bool],
    prior_var: f64,
    n_draws: usize,
    burn_in: usize,
) -> Vec<Vec<f64>> {
    let k = x.ncols();
    let mut psi = vec![0.0; k];
    let mut out = Vec::with_capacity(n_draws);
    for it in 0..burn_in + n_draws {
        let omega: Vec<f64> = (0..x.nrows()).map(|t| sample_pg1(rng, row_dot(x, t, &psi))).collect();
        let (mut prec, b) = weighted_cross(
            x,
            0..x.nrows(),
            |t| omega[t],
            |t| if z[t] { 0.5 / omega[t] } else { -0.5 / omega[t] },
        );
        for j in 0..k {
            prec[(j, j)] += 1.0 / prior_var;
        }
        psi = sample_from_precision(rng, &prec, &b).as_slice().to_vec();
        if it >= burn_in {
            out.push(psi.clone());
        }
    }
    out
}

/// Log posterior kernel of the logistic regression above.
pub fn logistic_log_posterior(x: &DMatrix<f64>, z: &[bool], prior_var: f64, psi: &[f64]) -> f64 {
    let mut lp = -0.5 * psi.iter().map(|p| p * p).sum::<f64>() / prior_var;
    for t in 0..x.nrows() {
        let eta = row_dot(x, t, psi);
        lp += if z[t] { -softplus(-eta) } else { -softplus(eta) };
    }
    lp
}
