//! Benchmark regressions fitted by coordinate-ascent VB.
//!
//! One engine covers the linear AR, time-varying coefficients (random-walk
//! paths), stochastic volatility (discounted gamma filter) and Student-t
//! errors (latent gamma scales). Quantile regression runs its own loop on
//! the normal-exponential mixture form of the asymmetric Laplace.
//!
//! Every update maximizes the engine's objective exactly, so the traces are
//! non-decreasing. With stochastic volatility the objective is the
//! discounted likelihood
//! `sum_t c_t [sum_{s<=t} delta^{t-s} E log N(y_s | x_s'b, 1/tau_t)
//!     + E log Gamma(tau_t | delta^t a0, delta^t b0) + H(q(tau_t))]`
//! with `c_t = 1 - delta` before the last period and `c_T = 1`; maximizing it
//! in `q(tau_t)` gives the forward filter and in the coefficients gives
//! weights equal to the backward-smoothed precisions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};

use crate::dist::{gig_log_normalizer, gig_moments, norm_cdf, norm_pdf};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, moments_from_precision, quad_form, weighted_cross};
use crate::model::{row, ForecastDensity, Priors};
use crate::vb::{GammaFactor, GaussianFactor, HorseshoeFactors, InvGamma, LN_2PI};

/// Largest `T * k` accepted by the time-varying coefficient fit.
pub const MAX_TVP_PARAMS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenchmarkKind {
    #[serde(rename = "AR")]
    Ar,
    #[serde(rename = "TVP-AR")]
    TvpAr,
    #[serde(rename = "SV-AR")]
    SvAr,
    #[serde(rename = "TVPSV-AR")]
    TvpSvAr,
    #[serde(rename = "T-AR")]
    TAr,
    #[serde(rename = "QR")]
    Qr,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 6] = [Self::Ar, Self::TvpAr, Self::SvAr, Self::TvpSvAr, Self::TAr, Self::Qr];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ar => "AR",
            Self::TvpAr => "TVP-AR",
            Self::SvAr => "SV-AR",
            Self::TvpSvAr => "TVPSV-AR",
            Self::TAr => "T-AR",
            Self::Qr => "QR",
        }
    }

    fn switches(self, spec: &BenchmarkSpec) -> Switches {
        let sv = Some(spec.sv_delta);
        match self {
            Self::Ar | Self::Qr => Switches::default(),
            Self::TvpAr => Switches { tvp: true, ..Default::default() },
            Self::SvAr => Switches { sv, ..Default::default() },
            Self::TvpSvAr => Switches { tvp: true, sv, ..Default::default() },
            Self::TAr => Switches { student_t: Some(spec.t_priors), ..Default::default() },
        }
    }
}

impl std::str::FromStr for BenchmarkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown benchmark '{s}'")))
    }
}

impl std::fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefPrior {
    Gaussian,
    Horseshoe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub kind: BenchmarkKind,
    pub quantile_levels: Vec<f64>,
    pub sv_delta: f64,
    /// Gamma prior (shape, rate) on the Student-t degrees of freedom.
    pub t_priors: (f64, f64),
    /// Initial filter state of the stochastic-volatility recursion.
    pub sv_init: (f64, f64),
    /// Inverse-gamma prior (shape, scale) on the quantile-regression scale.
    pub qr_sigma_prior: (f64, f64),
    /// `None` picks the horseshoe for time-varying coefficients and the
    /// Gaussian prior otherwise.
    pub coef_prior: Option<CoefPrior>,
    pub priors: Priors,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            kind: BenchmarkKind::Ar,
            quantile_levels: (1..=19).map(|i| i as f64 * 0.05).collect(),
            sv_delta: 0.8,
            t_priors: (0.04, 0.01),
            sv_init: (0.5, 0.5),
            qr_sigma_prior: (0.5, 0.5),
            coef_prior: None,
            priors: Priors::default(),
            max_iters: 2000,
            tol: 1e-8,
        }
    }
}

impl BenchmarkSpec {
    pub fn new(kind: BenchmarkKind) -> Self {
        Self { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sv_delta > 0.0 && self.sv_delta < 1.0) {
            return Err(invalid("volatility discount must lie in (0, 1)"));
        }
        let q = &self.quantile_levels;
        if q.is_empty() || q.iter().any(|v| !(*v > 0.0 && *v < 1.0)) || q.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("quantile levels must be strictly increasing inside (0, 1)"));
        }
        if !(self.t_priors.0 > 0.0 && self.t_priors.1 > 0.0) {
            return Err(invalid("degrees-of-freedom prior must be positive"));
        }
        if !(self.sv_init.0 > 0.0 && self.sv_init.1 > 0.0 && self.qr_sigma_prior.0 > 0.0 && self.qr_sigma_prior.1 > 0.0) {
            return Err(invalid("volatility and scale priors must be positive"));
        }
        Ok(())
    }

    fn coef_prior_for(&self, tvp: bool) -> CoefPrior {
        self.coef_prior.unwrap_or(if tvp { CoefPrior::Horseshoe } else { CoefPrior::Gaussian })
    }
}

/// Special-case switches of the regression engine; all off is the AR.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Switches {
    pub tvp: bool,
    pub sv: Option<f64>,
    pub student_t: Option<(f64, f64)>,
}

/// Predictive distribution of a fitted model at one regressor row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredictiveLaw {
    Mixture(ForecastDensity),
    StudentT { loc: f64, scale: f64, dof: f64 },
    /// Monotone quantile grid with Gaussian tails beyond the extremes.
    QuantileGrid { levels: Vec<f64>, values: Vec<f64> },
}

fn norm_quantile(p: f64) -> f64 {
    use statrs::distribution::Normal;
    Normal::standard().inverse_cdf(p)
}

impl PredictiveLaw {
    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            Self::Mixture(d) => d.cdf(y),
            Self::StudentT { loc, scale, dof } => student(*dof).cdf((y - loc) / scale),
            Self::QuantileGrid { levels, values } => grid_cdf(levels, values, y),
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        match self {
            Self::Mixture(d) => d.pdf(y),
            Self::StudentT { loc, scale, dof } => student(*dof).pdf((y - loc) / scale) / scale,
            Self::QuantileGrid { levels, values } => grid_pdf(levels, values, y),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            Self::Mixture(d) => d.quantile(p),
            Self::StudentT { loc, scale, dof } => loc + scale * student(*dof).inverse_cdf(p),
            Self::QuantileGrid { levels, values } => grid_quantile(levels, values, p),
        }
    }

    /// Mean, or the median for quantile grids.
    pub fn point_forecast(&self) -> f64 {
        match self {
            Self::Mixture(d) => d.mean(),
            Self::StudentT { loc, .. } => *loc,
            Self::QuantileGrid { .. } => self.quantile(0.5),
        }
    }

    /// Continuous ranked probability score; quantile grids are not scored.
    pub fn crps(&self, y: f64) -> Option<f64> {
        match self {
            Self::Mixture(d) => Some(crate::eval::crps_mixture(d, y)),
            Self::StudentT { loc, scale, dof } => crate::eval::crps_student_t(*loc, *scale, *dof, y),
            Self::QuantileGrid { .. } => None,
        }
    }
}

fn student(dof: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom")
}

fn tail_scale(levels: &[f64], values: &[f64], i: usize, j: usize) -> f64 {
    let dz = norm_quantile(levels[j]) - norm_quantile(levels[i]);
    ((values[j] - values[i]) / dz).max(1e-8)
}

fn grid_cdf(levels: &[f64], values: &[f64], y: f64) -> f64 {
    let n = levels.len();
    if n == 1 {
        return norm_cdf(norm_quantile(levels[0]) + (y - values[0]));
    }
    if y < values[0] {
        let s = tail_scale(levels, values, 0, 1);
        return norm_cdf(norm_quantile(levels[0]) + (y - values[0]) / s);
    }
    if y > values[n - 1] {
        let s = tail_scale(levels, values, n - 2, n - 1);
        return norm_cdf(norm_quantile(levels[n - 1]) + (y - values[n - 1]) / s);
    }
    let i = values.partition_point(|v| *v <= y).clamp(1, n - 1);
    let (a, b) = (values[i - 1], values[i]);
    if b <= a {
        return levels[i];
    }
    levels[i - 1] + (levels[i] - levels[i - 1]) * (y - a) / (b - a)
}

fn grid_pdf(levels: &[f64], values: &[f64], y: f64) -> f64 {
    let n = levels.len();
    if n == 1 {
        return norm_pdf(norm_quantile(levels[0]) + (y - values[0]));
    }
    if y < values[0] {
        let s = tail_scale(levels, values, 0, 1);
        return norm_pdf(norm_quantile(levels[0]) + (y - values[0]) / s) / s;
    }
    if y > values[n - 1] {
        let s = tail_scale(levels, values, n - 2, n - 1);
        return norm_pdf(norm_quantile(levels[n - 1]) + (y - values[n - 1]) / s) / s;
    }
    let i = values.partition_point(|v| *v <= y).clamp(1, n - 1);
    let w = values[i] - values[i - 1];
    if w <= 0.0 {
        0.0
    } else {
        (levels[i] - levels[i - 1]) / w
    }
}

fn grid_quantile(levels: &[f64], values: &[f64], p: f64) -> f64 {
    let n = levels.len();
    if n == 1 {
        return values[0] + norm_quantile(p) - norm_quantile(levels[0]);
    }
    if p < levels[0] {
        let s = tail_scale(levels, values, 0, 1);
        return values[0] + s * (norm_quantile(p) - norm_quantile(levels[0]));
    }
    if p > levels[n - 1] {
        let s = tail_scale(levels, values, n - 2, n - 1);
        return values[n - 1] + s * (norm_quantile(p) - norm_quantile(levels[n - 1]));
    }
    let i = levels.partition_point(|l| *l <= p).clamp(1, n - 1);
    let t = (p - levels[i - 1]) / (levels[i] - levels[i - 1]);
    values[i - 1] + t * (values[i] - values[i - 1])
}

/// Pool-adjacent-violators fit of a nondecreasing sequence; returns the
/// repaired values and the largest absolute change.
pub fn isotonic_repair(values: &[f64]) -> (Vec<f64>, f64) {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (m2, n2) = blocks.pop().expect("two blocks");
            let (m1, n1) = blocks.pop().expect("two blocks");
            blocks.push(((m1 * n1 as f64 + m2 * n2 as f64) / (n1 + n2) as f64, n1 + n2));
        }
    }
    let out: Vec<f64> = blocks.iter().flat_map(|&(m, n)| std::iter::repeat_n(m, n)).collect();
    let change = out.iter().zip(values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (out, change)
}

/// Forward pass `a_t = 1/2 + delta a_{t-1}`, `b_t = e_t / 2 + delta b_{t-1}`.
pub fn sv_filter(e2: &[f64], delta: f64, a0: f64, b0: f64) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(e2.len());
    let mut b = Vec::with_capacity(e2.len());
    let (mut pa, mut pb) = (a0, b0);
    for &e in e2 {
        pa = 0.5 + delta * pa;
        pb = 0.5 * e + delta * pb;
        a.push(pa);
        b.push(pb);
    }
    (a, b)
}

/// Backward pass `s_T = v_T`, `s_t = (1 - delta) v_t + delta s_{t+1}`.
pub fn sv_smooth(values: &[f64], delta: f64) -> Vec<f64> {
    let mut out = values.to_vec();
    for t in (0..values.len().saturating_sub(1)).rev() {
        out[t] = (1.0 - delta) * values[t] + delta * out[t + 1];
    }
    out
}

/// Lower block-triangular design whose coefficients are the first-period
/// coefficients followed by the per-period increments.
pub fn expanded_tvp_design(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (t_len, k) = x.shape();
    DMatrix::from_fn(t_len, t_len * k, |t, c| if c / k <= t { x[(t, c % k)] } else { 0.0 })
}

/// Gaussian posterior over a random-walk coefficient path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvpPosterior {
    pub means: Vec<DVector<f64>>,
    /// `Cov(b_t, b_t)`.
    pub cov: Vec<DMatrix<f64>>,
    /// `Cov(b_t, b_{t-1})`; the first entry is zero.
    pub cov_lag: Vec<DMatrix<f64>>,
    pub log_det_cov: f64,
}

impl TvpPosterior {
    /// Solves the block-tridiagonal system for weights `w`, first-period
    /// prior `N(m0, v0 I)` and increment precisions `inc_prec[t - 1]`.
    pub fn solve(x: &DMatrix<f64>, y: &[f64], w: &[f64], m0: f64, v0: f64, inc_prec: &[Vec<f64>]) -> Self {
        let (t_len, k) = x.shape();
        let mut s_inv: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
        let mut rho: Vec<DVector<f64>> = Vec::with_capacity(t_len);
        let mut log_det_p = 0.0;
        for t in 0..t_len {
            let xt = row(x, t);
            let mut d = DMatrix::from_fn(k, k, |i, j| w[t] * xt[i] * xt[j]);
            let mut r = DVector::from_fn(k, |i, _| w[t] * xt[i] * y[t]);
            if t == 0 {
                for i in 0..k {
                    d[(i, i)] += 1.0 / v0;
                    r[i] += m0 / v0;
                }
            } else {
                let p = &inc_prec[t - 1];
                for i in 0..k {
                    d[(i, i)] += p[i];
                }
                // subtract B S^{-1} B' with B = -diag(p)
                let prev = &s_inv[t - 1];
                for i in 0..k {
                    for j in 0..k {
                        d[(i, j)] -= p[i] * prev[(i, j)] * p[j];
                    }
                }
                let carry = prev * &rho[t - 1];
                for i in 0..k {
                    r[i] += p[i] * carry[i];
                }
            }
            if t + 1 < t_len {
                for i in 0..k {
                    d[(i, i)] += inc_prec[t][i];
                }
            }
            let chol = cholesky(&d);
            log_det_p += 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            s_inv.push(chol.inverse());
            rho.push(r);
        }
        let mut means = vec![DVector::zeros(k); t_len];
        let mut cov = vec![DMatrix::zeros(k, k); t_len];
        let mut cov_lag = vec![DMatrix::zeros(k, k); t_len];
        means[t_len - 1] = &s_inv[t_len - 1] * &rho[t_len - 1];
        cov[t_len - 1] = s_inv[t_len - 1].clone();
        for t in (0..t_len - 1).rev() {
            let p = &inc_prec[t];
            // B_{t+1}' mu_{t+1} = -diag(p) mu_{t+1}
            let rhs = &rho[t] + DVector::from_fn(k, |i, _| p[i] * means[t + 1][i]);
            means[t] = &s_inv[t] * rhs;
            // G = S_t^{-1} B_{t+1}' = -S_t^{-1} diag(p)
            let g = DMatrix::from_fn(k, k, |i, j| -s_inv[t][(i, j)] * p[j]);
            cov[t] = &s_inv[t] + &g * &cov[t + 1] * g.transpose();
            cov_lag[t + 1] = -(&cov[t + 1] * g.transpose());
        }
        Self { means, cov, cov_lag, log_det_cov: -log_det_p }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// `E[(b_{t,j} - b_{t-1,j})^2]` for `t >= 1`.
    pub fn increment_second_moments(&self) -> Vec<Vec<f64>> {
        (1..self.len())
            .map(|t| {
                (0..self.means[t].len())
                    .map(|j| {
                        let d = self.means[t][j] - self.means[t - 1][j];
                        d * d + self.cov[t][(j, j)] + self.cov[t - 1][(j, j)] - 2.0 * self.cov_lag[t][(j, j)]
                    })
                    .collect()
            })
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        let n = self.len() * self.means.first().map_or(0, |m| m.len());
        0.5 * n as f64 * (1.0 + LN_2PI) + 0.5 * self.log_det_cov
    }
}

/// Latent scale of the Student-t errors.
fn t_scale_ln_prior(dof: &GammaFactor, lambda: &GammaFactor) -> f64 {
    // Stirling form of (d/2) log(d/2) - log Gamma(d/2)
    let ed = dof.mean();
    let e_log_half_d = dof.mean_log() - std::f64::consts::LN_2;
    0.5 * e_log_half_d + 0.5 * ed - 0.5 * LN_2PI + (0.5 * ed - 1.0) * lambda.mean_log() - 0.5 * ed * lambda.mean()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvPath {
    pub shape: Vec<f64>,
    pub rate: Vec<f64>,
    /// Backward-smoothed `E[tau_t]`.
    pub smoothed: Vec<f64>,
}

impl SvPath {
    pub fn filtered(&self) -> Vec<f64> {
        self.shape.iter().zip(&self.rate).map(|(a, b)| a / b).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub kind: BenchmarkKind,
    /// Static coefficients, or the last-period coefficients of a path.
    pub coef: GaussianFactor,
    /// `T x k` posterior mean path of time-varying coefficients.
    pub coef_path: Option<DMatrix<f64>>,
    /// First-period coefficients followed by the per-period increments.
    pub increments: Option<DMatrix<f64>>,
    pub tau: GammaFactor,
    pub sv: Option<SvPath>,
    pub latent_scale: Option<Vec<GammaFactor>>,
    pub dof: Option<GammaFactor>,
    pub horseshoe: Option<HorseshoeFactors>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

impl RegressionFit {
    /// Precision used for forecasting.
    pub fn forecast_precision(&self) -> f64 {
        match &self.sv {
            Some(sv) => sv.shape[sv.shape.len() - 1] / sv.rate[sv.rate.len() - 1],
            None => self.tau.mean(),
        }
    }

    fn law(&self, x: &[f64], uncertainty: bool) -> PredictiveLaw {
        let loc: f64 = x.iter().zip(self.coef.mean.iter()).map(|(a, b)| a * b).sum();
        let mut var = 1.0 / self.forecast_precision();
        if uncertainty {
            var += quad_form(&self.coef.cov, x);
        }
        match &self.dof {
            Some(d) => PredictiveLaw::StudentT { loc, scale: var.sqrt(), dof: d.mean() },
            None => PredictiveLaw::Mixture(ForecastDensity::normal(loc, var)),
        }
    }

    /// Predictive law including coefficient uncertainty.
    pub fn predictive(&self, x: &[f64]) -> PredictiveLaw {
        self.law(x, true)
    }

    /// Predictive law at the posterior-mean coefficients.
    pub fn plug_in(&self, x: &[f64]) -> PredictiveLaw {
        self.law(x, false)
    }
}

struct Engine<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    spec: &'a BenchmarkSpec,
    sw: Switches,
    prior: CoefPrior,
}

enum Coef {
    Static(GaussianFactor),
    Path(TvpPosterior),
}

struct EngineState {
    coef: Coef,
    tau: GammaFactor,
    sv: Option<SvPath>,
    lambda: Vec<GammaFactor>,
    dof: GammaFactor,
    hs: Option<HorseshoeFactors>,
}

impl Engine<'_> {
    fn t_len(&self) -> usize {
        self.y.len()
    }

    fn resid_sq(&self, coef: &Coef) -> Vec<f64> {
        (0..self.t_len())
            .map(|t| {
                let xt = row(self.x, t);
                match coef {
                    Coef::Static(f) => f.sq_resid(&xt, self.y[t]),
                    Coef::Path(p) => {
                        let m: f64 = xt.iter().zip(p.means[t].iter()).map(|(a, b)| a * b).sum();
                        (self.y[t] - m).powi(2) + quad_form(&p.cov[t], &xt)
                    }
                }
            })
            .collect()
    }

    fn weights(&self, s: &EngineState) -> Vec<f64> {
        match &s.sv {
            Some(sv) => sv.smoothed.clone(),
            None => {
                let et = s.tau.mean();
                (0..self.t_len()).map(|t| if self.sw.student_t.is_some() { et * s.lambda[t].mean() } else { et }).collect()
            }
        }
    }

    fn init(&self) -> EngineState {
        let n = self.t_len() as f64;
        let mean = self.y.iter().sum::<f64>() / n;
        let var_y = (self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-8);
        let k = self.x.ncols();
        let hs_len = if self.sw.tvp { (self.t_len() - 1) * k } else { k };
        let sv = self.sw.sv.map(|_| SvPath {
            shape: vec![1.0; self.t_len()],
            rate: vec![var_y; self.t_len()],
            smoothed: vec![1.0 / var_y; self.t_len()],
        });
        EngineState {
            coef: Coef::Static(GaussianFactor::prior(k, self.spec.priors.beta_mean, self.spec.priors.beta_var)),
            tau: GammaFactor { shape: 1.0, rate: var_y },
            sv,
            lambda: vec![GammaFactor { shape: 1.0, rate: 1.0 }; self.t_len()],
            dof: GammaFactor { shape: self.spec.t_priors.0, rate: self.spec.t_priors.1 },
            hs: (self.prior == CoefPrior::Horseshoe && hs_len > 0).then(|| HorseshoeFactors::init(hs_len)),
        }
    }

    fn update_coef(&self, s: &mut EngineState) {
        let w = self.weights(s);
        let pr = &self.spec.priors;
        let k = self.x.ncols();
        if self.sw.tvp {
            let inc_prec: Vec<Vec<f64>> = match &s.hs {
                Some(h) => h.precision().chunks(k).map(|c| c.to_vec()).collect(),
                None => vec![vec![1.0 / pr.beta_var; k]; self.t_len() - 1],
            };
            s.coef = Coef::Path(TvpPosterior::solve(self.x, self.y, &w, pr.beta_mean, pr.beta_var, &inc_prec));
        } else {
            let (mut prec, mut b) = weighted_cross(self.x, 0..self.t_len(), |t| w[t], |t| self.y[t]);
            match &s.hs {
                Some(h) => {
                    for (j, p) in h.precision().into_iter().enumerate() {
                        prec[(j, j)] += p;
                    }
                }
                None => {
                    for j in 0..k {
                        prec[(j, j)] += 1.0 / pr.beta_var;
                        b[j] += pr.beta_mean / pr.beta_var;
                    }
                }
            }
            let m = moments_from_precision(&prec, &b);
            s.coef = Coef::Static(GaussianFactor { mean: m.mean, cov: m.cov, log_det_cov: m.log_det_cov });
        }
    }

    fn update_noise(&self, s: &mut EngineState) {
        let e2 = self.resid_sq(&s.coef);
        let pr = &self.spec.priors;
        if let Some(delta) = self.sw.sv {
            let (a, b) = sv_filter(&e2, delta, self.spec.sv_init.0, self.spec.sv_init.1);
            let filtered: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a / b).collect();
            let smoothed = sv_smooth(&filtered, delta);
            s.sv = Some(SvPath { shape: a, rate: b, smoothed });
            return;
        }
        let scaled: f64 = (0..self.t_len())
            .map(|t| if self.sw.student_t.is_some() { s.lambda[t].mean() * e2[t] } else { e2[t] })
            .sum();
        s.tau = GammaFactor { shape: pr.a_tau + 0.5 * self.t_len() as f64, rate: pr.b_tau + 0.5 * scaled };
        if let Some((ad, bd)) = self.sw.student_t {
            let ed = s.dof.mean();
            let et = s.tau.mean();
            for t in 0..self.t_len() {
                s.lambda[t] = GammaFactor { shape: 0.5 * ed + 0.5, rate: 0.5 * ed + 0.5 * et * e2[t] };
            }
            let acc: f64 = s.lambda.iter().map(|l| 1.0 + l.mean_log() - l.mean()).sum();
            s.dof = GammaFactor { shape: ad + 0.5 * self.t_len() as f64, rate: bd - 0.5 * acc };
        }
    }

    fn coef_second_moments(&self, s: &EngineState) -> Vec<f64> {
        match &s.coef {
            Coef::Static(f) => (0..f.mean.len()).map(|j| f.mean[j].powi(2) + f.cov[(j, j)]).collect(),
            Coef::Path(p) => p.increment_second_moments().concat(),
        }
    }

    fn update_hyper(&self, s: &mut EngineState) {
        let e_sq = self.coef_second_moments(s);
        let b = self.spec.priors.b_psi;
        if let Some(h) = s.hs.as_mut() {
            h.update_from_moments(&e_sq, b);
        }
    }

    fn objective(&self, s: &EngineState) -> f64 {
        let pr = &self.spec.priors;
        let e2 = self.resid_sq(&s.coef);
        let n = self.t_len();
        let mut l = 0.0;
        if let Some(delta) = self.sw.sv {
            let sv = s.sv.as_ref().expect("volatility path");
            let (a0, b0) = self.spec.sv_init;
            let (mut dsum, mut ssum, mut disc) = (0.0, 0.0, 1.0);
            for t in 0..n {
                dsum = delta * dsum + 1.0;
                ssum = delta * ssum + e2[t];
                disc *= delta;
                let q = GammaFactor { shape: sv.shape[t], rate: sv.rate[t] };
                let c = if t + 1 < n { 1.0 - delta } else { 1.0 };
                let prior = q.expected_ln_prior((disc * a0).max(1e-300), (disc * b0).max(1e-300));
                l += c * (dsum * (0.5 * q.mean_log() - 0.5 * LN_2PI) - 0.5 * q.mean() * ssum + prior + q.entropy());
            }
        } else {
            let (et, elt) = (s.tau.mean(), s.tau.mean_log());
            for t in 0..n {
                let (el, ell) = if self.sw.student_t.is_some() { (s.lambda[t].mean(), s.lambda[t].mean_log()) } else { (1.0, 0.0) };
                l += 0.5 * (elt + ell) - 0.5 * LN_2PI - 0.5 * et * el * e2[t];
            }
            l += s.tau.expected_ln_prior(pr.a_tau, pr.b_tau) + s.tau.entropy();
            if let Some((ad, bd)) = self.sw.student_t {
                for lam in &s.lambda {
                    l += t_scale_ln_prior(&s.dof, lam) + lam.entropy();
                }
                l += s.dof.expected_ln_prior(ad, bd) + s.dof.entropy();
            }
        }
        let gauss = |sq: f64, count: usize| -0.5 * count as f64 * (LN_2PI + pr.beta_var.ln()) - 0.5 * sq / pr.beta_var;
        match &s.coef {
            Coef::Static(f) => {
                l += f.entropy();
                match &s.hs {
                    Some(h) => l += h.elbo_from_moments(&self.coef_second_moments(s), pr.b_psi),
                    None => {
                        let sq: f64 = (0..f.mean.len()).map(|j| (f.mean[j] - pr.beta_mean).powi(2) + f.cov[(j, j)]).sum();
                        l += gauss(sq, f.mean.len());
                    }
                }
            }
            Coef::Path(p) => {
                l += p.entropy();
                let k = p.means[0].len();
                let sq0: f64 = (0..k).map(|j| (p.means[0][j] - pr.beta_mean).powi(2) + p.cov[0][(j, j)]).sum();
                l += gauss(sq0, k);
                let inc = self.coef_second_moments(s);
                match &s.hs {
                    Some(h) => l += h.elbo_from_moments(&inc, pr.b_psi),
                    None => l += gauss(inc.iter().sum(), inc.len()),
                }
            }
        }
        l
    }

    fn run(&self) -> RegressionFit {
        let mut s = self.init();
        let mut trace: Vec<f64> = Vec::new();
        let mut converged = false;
        for _ in 0..self.spec.max_iters.max(1) {
            self.update_coef(&mut s);
            self.update_noise(&mut s);
            self.update_hyper(&mut s);
            let l = self.objective(&s);
            let prev = trace.last().copied();
            trace.push(l);
            if let Some(p) = prev {
                if ((l - p) / p.abs().max(1e-300)).abs() < self.spec.tol {
                    converged = true;
                    break;
                }
            }
        }
        self.finish(s, trace, converged)
    }

    fn finish(&self, s: EngineState, elbo_trace: Vec<f64>, converged: bool) -> RegressionFit {
        let k = self.x.ncols();
        let (coef, coef_path, increments) = match s.coef {
            Coef::Static(f) => (f, None, None),
            Coef::Path(p) => {
                let n = p.len();
                let path = DMatrix::from_fn(n, k, |t, j| p.means[t][j]);
                let inc = DMatrix::from_fn(n, k, |t, j| if t == 0 { p.means[0][j] } else { p.means[t][j] - p.means[t - 1][j] });
                let last = GaussianFactor {
                    mean: p.means[n - 1].clone(),
                    cov: p.cov[n - 1].clone(),
                    log_det_cov: cholesky(&p.cov[n - 1]).l().diagonal().iter().map(|v| 2.0 * v.ln()).sum(),
                };
                (last, Some(path), Some(inc))
            }
        };
        RegressionFit {
            kind: self.spec.kind,
            coef,
            coef_path,
            increments,
            tau: s.tau,
            sv: s.sv,
            latent_scale: self.sw.student_t.map(|_| s.lambda),
            dof: self.sw.student_t.map(|_| s.dof),
            horseshoe: s.hs,
            elbo_trace,
            converged,
        }
    }
}

fn validate_data(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() || y.len() < 2 {
        return Err(invalid("design and response must have the same length of at least two"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite value in design or response"));
    }
    Ok(())
}

/// Regression engine with explicit switches.
pub fn fit_with_switches(x: &DMatrix<f64>, y: &[f64], spec: &BenchmarkSpec, sw: Switches) -> Result<RegressionFit> {
    validate_data(x, y)?;
    spec.validate()?;
    if let Some(d) = sw.sv {
        if !(d > 0.0 && d < 1.0) {
            return Err(invalid("volatility discount must lie in (0, 1)"));
        }
        if sw.student_t.is_some() {
            return Err(invalid("Student-t errors cannot be combined with stochastic volatility"));
        }
    }
    if sw.tvp && x.nrows() * x.ncols() > MAX_TVP_PARAMS {
        return Err(invalid(format!("time-varying fit needs T * k <= {MAX_TVP_PARAMS}")));
    }
    let engine = Engine { x, y, spec, sw, prior: spec.coef_prior_for(sw.tvp) };
    let fit = engine.run();
    if !fit.elbo_trace.last().is_some_and(|l| l.is_finite()) {
        return Err(Error::Numerical(format!("{} objective is not finite", spec.kind)));
    }
    Ok(fit)
}

fn fit_kind(x: &DMatrix<f64>, y: &[f64], spec: &BenchmarkSpec, kind: BenchmarkKind) -> Result<RegressionFit> {
    let spec = BenchmarkSpec { kind, ..spec.clone() };
    fit_with_switches(x, y, &spec, kind.switches(&spec))
}

pub fn fit_ar(x: &DMatrix<f64>, y: &[f64], spec: &BenchmarkSpec) -> Result<RegressionFit> {
    fit_kind(x, y, spec, BenchmarkKind::Ar)
}

pub fn fit_tvp_ar(x: &DMatrix<f64>, y: &[f64], spec: &BenchmarkSpec) -> Result<RegressionFit> {
    fit_kind(x, y, spec, BenchmarkKind::TvpAr)
}

pub fn fit_sv_ar(x: &DMatrix<f64>, y: &[f64], spec: &BenchmarkSpec) -> Result<RegressionFit> {
    fit_kind(x, y, spec, BenchmarkKind::SvAr)
}

pub fn fit_tvpsv_ar(x: &DMatrix<f64>, y: &[f64], spec: &BenchmarkSpec) -> Result<RegressionFit> {
    fit_kind(x, y, spec, BenchmarkKind::TvpSvAr)
}

pub fn fit_t_ar(x: &DMatrix<f64>, y: &[f64], spec: &BenchmarkSpec) -> Result<RegressionFit> {
    fit_kind(x, y, spec, BenchmarkKind::TAr)
}

/// Location and variance factors of the normal-exponential mixture for
/// quantile level `q`.
pub fn qr_kappas(q: f64) -> (f64, f64) {
    ((1.0 - 2.0 * q) / (q * (1.0 - q)), 2.0 / (q * (1.0 - q)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub level: f64,
    pub coef: GaussianFactor,
    pub sigma: InvGamma,
    /// `(E[z_t], E[1/z_t])` of the exponential mixing variables.
    pub latent: Vec<(f64, f64)>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

impl QuantileFit {
    pub fn quantile_at(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.coef.mean.iter()).map(|(a, b)| a * b).sum()
    }
}

/// `y_t = x_t'b + k1 z_t + sqrt(k2 sigma z_t) e_t` with `z_t ~ Exp(mean sigma)`.
pub fn fit_quantile(x: &DMatrix<f64>, y: &[f64], spec: &BenchmarkSpec, q: f64) -> Result<QuantileFit> {
    validate_data(x, y)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid("quantile level must lie in (0, 1)"));
    }
    let (k1, k2) = qr_kappas(q);
    let n = y.len();
    let k = x.ncols();
    let pr = &spec.priors;
    let (a_bar, b_bar) = spec.qr_sigma_prior;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mad = (y.iter().map(|v| (v - mean_y).abs()).sum::<f64>() / n as f64).max(1e-8);
    let mut sigma = InvGamma { shape: 1.0, rate: mad };
    let mut latent = vec![(mad, 1.0 / mad); n];
    let mut coef = GaussianFactor::prior(k, pr.beta_mean, pr.beta_var);
    let mut z_params = vec![(1.0, 1.0); n];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..spec.max_iters.max(1) {
        let eis = sigma.mean_inv();
        let (mut prec, mut b) = weighted_cross(x, 0..n, |t| eis * latent[t].1 / k2, |t| y[t]);
        for t in 0..n {
            for j in 0..k {
                b[j] -= eis * k1 / k2 * x[(t, j)];
            }
        }
        for j in 0..k {
            prec[(j, j)] += 1.0 / pr.beta_var;
            b[j] += pr.beta_mean / pr.beta_var;
        }
        let m = moments_from_precision(&prec, &b);
        coef = GaussianFactor { mean: m.mean, cov: m.cov, log_det_cov: m.log_det_cov };
        let a_z = eis * (2.0 + k1 * k1 / k2);
        let mut rate = b_bar;
        for t in 0..n {
            let xt = row(x, t);
            let r2 = coef.sq_resid(&xt, y[t]).max(1e-300);
            let bz = eis * r2 / k2;
            z_params[t] = (a_z, bz);
            latent[t] = gig_moments(a_z, bz);
        }
        for t in 0..n {
            let xt = row(x, t);
            let r = y[t] - xt.iter().zip(coef.mean.iter()).map(|(a, b)| a * b).sum::<f64>();
            let r2 = coef.sq_resid(&xt, y[t]);
            rate += latent[t].1 * r2 / (2.0 * k2) - k1 * r / k2 + (1.0 + k1 * k1 / (2.0 * k2)) * latent[t].0;
        }
        sigma = InvGamma { shape: a_bar + 1.5 * n as f64, rate };
        let l = qr_objective(x, y, pr, (a_bar, b_bar), (k1, k2), &coef, &sigma, &latent, &z_params);
        let prev = trace.last().copied();
        trace.push(l);
        if let Some(p) = prev {
            if ((l - p) / p.abs().max(1e-300)).abs() < spec.tol {
                converged = true;
                break;
            }
        }
    }
    if !trace.last().is_some_and(|l| l.is_finite()) {
        return Err(Error::Numerical("quantile regression objective is not finite".into()));
    }
    Ok(QuantileFit { level: q, coef, sigma, latent, elbo_trace: trace, converged })
}

#[allow(clippy::too_many_arguments)]
fn qr_objective(
    x: &DMatrix<f64>,
    y: &[f64],
    pr: &Priors,
    sigma_prior: (f64, f64),
    kappa: (f64, f64),
    coef: &GaussianFactor,
    sigma: &InvGamma,
    latent: &[(f64, f64)],
    z_params: &[(f64, f64)],
) -> f64 {
    let (k1, k2) = kappa;
    let (eis, els) = (sigma.mean_inv(), sigma.mean_log());
    let mut l = 0.0;
    // E log z terms of the likelihood and of q(z) cancel
    for t in 0..y.len() {
        let xt = row(x, t);
        let r = y[t] - xt.iter().zip(coef.mean.iter()).map(|(a, b)| a * b).sum::<f64>();
        let r2 = coef.sq_resid(&xt, y[t]);
        let (ez, einv) = latent[t];
        l += -0.5 * (LN_2PI + k2.ln()) - 0.5 * els - eis / (2.0 * k2) * (einv * r2 - 2.0 * k1 * r + k1 * k1 * ez);
        l += -els - eis * ez;
        let (a, b) = z_params[t];
        l += 0.5 * (a * ez + b * einv) + gig_log_normalizer(a, b);
    }
    let (a0, b0) = sigma_prior;
    l += a0 * b0.ln() - statrs::function::gamma::ln_gamma(a0) - (a0 + 1.0) * els - b0 * eis + sigma.entropy();
    let k = coef.mean.len();
    let sq: f64 = (0..k).map(|j| (coef.mean[j] - pr.beta_mean).powi(2) + coef.cov[(j, j)]).sum();
    l += -0.5 * k as f64 * (LN_2PI + pr.beta_var.ln()) - 0.5 * sq / pr.beta_var + coef.entropy();
    l
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrFit {
    pub fits: Vec<QuantileFit>,
}

impl QrFit {
    pub fn levels(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.level).collect()
    }

    /// Fitted quantiles at `x` after isotonic repair, with the repair size.
    pub fn quantiles(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let raw: Vec<f64> = self.fits.iter().map(|f| f.quantile_at(x)).collect();
        isotonic_repair(&raw)
    }

    pub fn predictive(&self, x: &[f64]) -> PredictiveLaw {
        PredictiveLaw::QuantileGrid { levels: self.levels(), values: self.quantiles(x).0 }
    }
}

pub fn fit_qr(x: &DMatrix<f64>, y: &[f64], spec: &BenchmarkSpec) -> Result<QrFit> {
    spec.validate()?;
    let fits = spec.quantile_levels.par_iter().map(|&q| fit_quantile(x, y, spec, q)).collect::<Result<Vec<_>>>()?;
    Ok(QrFit { fits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BenchmarkFit {
    Regression(RegressionFit),
    Quantile(QrFit),
}

impl BenchmarkFit {
    pub fn predictive(&self, x: &[f64]) -> PredictiveLaw {
        match self {
            Self::Regression(f) => f.predictive(x),
            Self::Quantile(f) => f.predictive(x),
        }
    }

    /// Objective traces, one per fitted loop.
    pub fn elbo_traces(&self) -> Vec<&[f64]> {
        match self {
            Self::Regression(f) => vec![&f.elbo_trace],
            Self::Quantile(f) => f.fits.iter().map(|q| q.elbo_trace.as_slice()).collect(),
        }
    }
}

pub fn fit_benchmark(x: &DMatrix<f64>, y: &[f64], spec: &BenchmarkSpec) -> Result<BenchmarkFit> {
    match spec.kind {
        BenchmarkKind::Qr => fit_qr(x, y, spec).map(BenchmarkFit::Quantile),
        kind => fit_kind(x, y, spec, kind).map(BenchmarkFit::Regression),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{rng_stream, std_normal};

    fn ar_data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = rng_stream(seed, 0);
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { std_normal(&mut rng) });
        let y = (0..n).map(|t| 1.0 + 0.5 * x[(t, 1)] + 0.4 * std_normal(&mut rng)).collect();
        (x, y)
    }

    fn monotone(trace: &[f64]) -> bool {
        trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0))
    }

    #[test]
    fn qr_kappas_at_median() {
        assert_eq!(qr_kappas(0.5), (0.0, 8.0));
    }

    #[test]
    fn expanded_design_layout() {
        let x = DMatrix::from_row_slice(2, 1, &[2.0, 3.0]);
        let e = expanded_tvp_design(&x);
        assert_eq!(e, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 3.0, 3.0]));
    }

    #[test]
    fn tridiagonal_solver_matches_expanded_design() {
        let (x, y) = ar_data(6, 3);
        let w: Vec<f64> = (0..6).map(|t| 1.0 + 0.1 * t as f64).collect();
        let inc: Vec<Vec<f64>> = (0..5).map(|t| vec![2.0 + t as f64, 5.0]).collect();
        let post = TvpPosterior::solve(&x, &y, &w, 0.3, 2.0, &inc);
        let e = expanded_tvp_design(&x);
        let n = e.ncols();
        let mut prec = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for t in 0..6 {
            for i in 0..n {
                b[i] += w[t] * e[(t, i)] * y[t];
                for j in 0..n {
                    prec[(i, j)] += w[t] * e[(t, i)] * e[(t, j)];
                }
            }
        }
        for i in 0..2 {
            prec[(i, i)] += 0.5;
            b[i] += 0.3 * 0.5;
        }
        for t in 1..6 {
            for j in 0..2 {
                prec[(2 * t + j, 2 * t + j)] += inc[t - 1][j];
            }
        }
        let m = moments_from_precision(&prec, &b);
        // path = L * (first, increments)
        let l = DMatrix::from_fn(n, n, |r, c| if c % 2 == r % 2 && c / 2 <= r / 2 { 1.0 } else { 0.0 });
        let mean = &l * &m.mean;
        let cov = &l * &m.cov * l.transpose();
        for t in 0..6 {
            for j in 0..2 {
                assert!((post.means[t][j] - mean[2 * t + j]).abs() < 1e-10);
                for i in 0..2 {
                    assert!((post.cov[t][(j, i)] - cov[(2 * t + j, 2 * t + i)]).abs() < 1e-10);
                    if t > 0 {
                        assert!((post.cov_lag[t][(j, i)] - cov[(2 * t + j, 2 * (t - 1) + i)]).abs() < 1e-10);
                    }
                }
            }
        }
        assert!((post.log_det_cov - m.log_det_cov).abs() < 1e-9);
    }

    #[test]
    fn sv_recursion_fixed_point() {
        let (a, b) = sv_filter(&[2.0; 400], 0.8, 0.5, 0.5);
        assert!((a[399] / b[399] - 0.5).abs() < 1e-12);
        let (a, b) = sv_filter(&[4.0, 9.0], 1e-14, 0.5, 0.5);
        assert!((a[1] - 0.5).abs() < 1e-12 && (b[1] - 4.5).abs() < 1e-12);
        let raw = [1.0, 5.0, 2.0, 0.5];
        let s = sv_smooth(&raw, 0.8);
        assert!(s.iter().all(|v| (0.5..=5.0).contains(v)));
    }

    #[test]
    fn every_engine_is_monotone() {
        let (x, y) = ar_data(60, 5);
        for kind in BenchmarkKind::ALL {
            let fit = fit_benchmark(&x, &y, &BenchmarkSpec { max_iters: 300, ..BenchmarkSpec::new(kind) }).unwrap();
            for tr in fit.elbo_traces() {
                assert!(monotone(tr), "{kind}: {tr:?}");
            }
        }
    }

    #[test]
    fn switches_off_is_ar() {
        let (x, y) = ar_data(50, 2);
        let spec = BenchmarkSpec::default();
        let a = fit_ar(&x, &y, &spec).unwrap();
        let b = fit_with_switches(&x, &y, &spec, Switches::default()).unwrap();
        assert_eq!(a.coef, b.coef);
    }

    #[test]
    fn ar_equals_single_component_mixture() {
        let (x, y) = ar_data(80, 4);
        let ar = fit_ar(&x, &y, &BenchmarkSpec::default()).unwrap();
        let mix = crate::vb::run_vb(&x, &y, &crate::vb::VbConfig { components: 1, ..Default::default() }).unwrap();
        let xr = [1.0, 0.7];
        let a = ar.plug_in(&xr);
        let b = mix.state.point_params().density(&xr);
        for v in [-1.0, 0.5, 1.3, 2.0, 4.0] {
            assert!((a.pdf(v) - b.pdf(v)).abs() < 1e-8);
        }
        assert!((ar.elbo_trace.last().unwrap() - mix.elbo()).abs() < 1e-6 * mix.elbo().abs());
    }

    #[test]
    fn student_t_downweights_outliers() {
        let (x, mut y) = ar_data(120, 6);
        y[30] += 15.0;
        let fit = fit_t_ar(&x, &y, &BenchmarkSpec::default()).unwrap();
        let scales = fit.latent_scale.unwrap();
        let others = scales.iter().enumerate().filter(|(t, _)| *t != 30).map(|(_, l)| l.mean()).fold(f64::INFINITY, f64::min);
        assert!(scales[30].mean() < 0.2 * others);
        assert!((fit.coef.mean[1] - 0.5).abs() < 0.15);
    }

    #[test]
    fn tvp_increments_sum_to_path() {
        let (x, y) = ar_data(40, 8);
        let fit = fit_tvp_ar(&x, &y, &BenchmarkSpec { max_iters: 50, ..BenchmarkSpec::new(BenchmarkKind::TvpAr) }).unwrap();
        let (inc, path) = (fit.increments.unwrap(), fit.coef_path.unwrap());
        for j in 0..2 {
            let s: f64 = inc.column(j).iter().sum();
            assert!((s - path[(39, j)]).abs() < 1e-12);
        }
        assert!(fit_with_switches(&x, &y, &BenchmarkSpec::default(), Switches { sv: Some(0.8), student_t: Some((0.04, 0.01)), tvp: false }).is_err());
    }

    #[test]
    fn isotonic_repair_pools() {
        let (v, c) = isotonic_repair(&[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(v, vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(c, 0.5);
    }

    #[test]
    fn quantile_grid_round_trip() {
        let levels = vec![0.1, 0.5, 0.9];
        let law = PredictiveLaw::QuantileGrid { levels: levels.clone(), values: vec![-1.0, 0.0, 2.0] };
        assert_eq!(law.cdf(0.0), 0.5);
        for p in [0.01, 0.1, 0.3, 0.7, 0.95] {
            assert!((law.cdf(law.quantile(p)) - p).abs() < 1e-10);
        }
    }

    #[test]
    fn kind_names_parse() {
        for k in BenchmarkKind::ALL {
            assert_eq!(k.name().parse::<BenchmarkKind>().unwrap(), k);
        }
        assert!("ARMA".parse::<BenchmarkKind>().is_err());
    }
}
