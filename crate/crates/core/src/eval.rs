//! Forecast evaluation and the pseudo-out-of-sample backtest.
//!
//! Test p-values assume i.i.d. PITs; for horizons above one they are
//! reported without any correction for overlapping forecast errors.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::benchmarks::{fit_benchmark, BenchmarkKind, BenchmarkSpec, PredictiveLaw};
use crate::data::{build_design, regressors_at, vintages, DataSet};
use crate::dist::{norm_cdf, norm_pdf};
use crate::ensemble::Estimator;
use crate::error::{invalid, Error, Result};
use crate::mcmc::{run_mcmc, McmcConfig};
use crate::model::ForecastDensity;
use crate::vb::{run_vb, VbConfig};

pub const DEFAULT_LB_LAGS: usize = 4;
const MIN_TEST_LEN: usize = 8;
/// Relative objective change that stops the fits inside a backtest.
pub const BACKTEST_TOL: f64 = 1e-5;

pub const IID_CAVEAT: &str = "p-values assume independent PITs; no multi-step or break-robust adjustment";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model: String,
    pub horizon: usize,
    pub origin: NaiveDate,
    pub target_date: NaiveDate,
    pub law: PredictiveLaw,
    pub realized: f64,
}

impl ForecastRecord {
    pub fn new(model: impl Into<String>, horizon: usize, origin: NaiveDate, target_date: NaiveDate, law: PredictiveLaw, realized: f64) -> Result<Self> {
        if target_date <= origin {
            return Err(invalid("realized value must be observed after the forecast origin"));
        }
        Ok(Self { model: model.into(), horizon, origin, target_date, law, realized })
    }

    pub fn pit(&self) -> f64 {
        pit(&self.law, self.realized)
    }

    pub fn point(&self) -> f64 {
        self.law.point_forecast()
    }

    pub fn crps(&self) -> Option<f64> {
        self.law.crps(self.realized)
    }
}

/// Predictive CDF at the realization.
pub fn pit(law: &PredictiveLaw, y: f64) -> f64 {
    law.cdf(y).clamp(0.0, 1.0)
}

fn check_pits(pits: &[f64]) -> Result<Vec<f64>> {
    if pits.len() < MIN_TEST_LEN {
        return Err(invalid(format!("need at least {MIN_TEST_LEN} PITs, have {}", pits.len())));
    }
    if pits.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(invalid("PITs must lie in [0, 1]"));
    }
    let mut s = pits.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Kolmogorov distance to U(0, 1) with its asymptotic p-value
/// (Stephens small-sample scaling).
pub fn ks_statistic(pits: &[f64]) -> Result<(f64, f64)> {
    let u = check_pits(pits)?;
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    Ok((d, kolmogorov_sf(lambda)))
}

pub fn ks_test(pits: &[f64]) -> Result<f64> {
    ks_statistic(pits).map(|r| r.1)
}

fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Anderson-Darling statistic for U(0, 1) and its asymptotic p-value.
pub fn ad_statistic(pits: &[f64]) -> Result<(f64, f64)> {
    let u = check_pits(pits)?;
    let n = u.len();
    let eps = 1e-300;
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (u[i].max(eps).ln() + (1.0 - u[n - 1 - i]).max(eps).ln()))
        .sum();
    let a2 = -(n as f64) - s / n as f64;
    Ok((a2, 1.0 - ad_limit_cdf(a2)))
}

pub fn ad_test(pits: &[f64]) -> Result<f64> {
    ad_statistic(pits).map(|r| r.1)
}

/// Limiting null CDF of the Anderson-Darling statistic
/// (Marsaglia and Marsaglia, 2004).
fn ad_limit_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    let v = if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012 + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z)
    } else {
        (-(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z).exp()).exp()
    };
    v.clamp(0.0, 1.0)
}

/// Doornik-Hansen omnibus normality statistic on the inverse-normal
/// transformed PITs, with its chi-square(2) p-value. A constant sample
/// gets p = 0.
pub fn dh_statistic(pits: &[f64]) -> Result<(f64, f64)> {
    check_pits(pits)?;
    let std = Normal::standard();
    let z: Vec<f64> = pits.iter().map(|&u| std.inverse_cdf(u.clamp(1e-16, 1.0 - 1e-16))).collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let m = |p: i32| z.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n;
    let m2 = m(2);
    if m2 <= 1e-300 * mean.abs().max(1.0) || !m2.is_finite() {
        return Ok((f64::INFINITY, 0.0));
    }
    let sk = m(3) / m2.powf(1.5);
    let b1 = sk * sk;
    let b2 = m(4) / (m2 * m2);

    let beta = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let y = sk * ((w2 - 1.0) * (n + 1.0) * (n + 3.0) / (12.0 * (n - 2.0))).sqrt();
    let z1 = delta * (y + (y * y + 1.0).sqrt()).ln();

    let dk = (n - 3.0) * (n + 1.0) * (n * n + 15.0 * n - 4.0);
    let a = (n - 2.0) * (n + 5.0) * (n + 7.0) * (n * n + 27.0 * n - 70.0) / (6.0 * dk);
    let c = (n - 7.0) * (n + 5.0) * (n + 7.0) * (n * n + 2.0 * n - 5.0) / (6.0 * dk);
    let k = (n + 5.0) * (n + 7.0) * (n * n * n + 37.0 * n * n + 11.0 * n - 313.0) / (12.0 * dk);
    let alpha = a + b1 * c;
    let chi = (b2 - 1.0 - b1) * 2.0 * k;
    let z2 = ((chi / (2.0 * alpha)).cbrt() - 1.0 + 1.0 / (9.0 * alpha)) * (9.0 * alpha).sqrt();
    let stat = z1 * z1 + z2 * z2;
    Ok((stat, (-0.5 * stat).exp()))
}

pub fn dh_test(pits: &[f64]) -> Result<f64> {
    dh_statistic(pits).map(|r| r.1)
}

/// Ljung-Box test on the demeaned PITs (`moment = 1`) or their squares
/// (`moment = 2`).
pub fn ljung_box(pits: &[f64], moment: u8, lags: usize) -> Result<f64> {
    let n = pits.len();
    if lags == 0 || n <= lags {
        return Err(invalid(format!("Ljung-Box needs more than {lags} observations, have {n}")));
    }
    let mean = pits.iter().sum::<f64>() / n as f64;
    let mut s: Vec<f64> = match moment {
        1 => pits.iter().map(|u| u - mean).collect(),
        2 => pits.iter().map(|u| (u - mean).powi(2)).collect(),
        _ => return Err(invalid("Ljung-Box moment must be 1 or 2")),
    };
    let m = s.iter().sum::<f64>() / n as f64;
    s.iter_mut().for_each(|v| *v -= m);
    let g0: f64 = s.iter().map(|v| v * v).sum();
    if g0 <= 0.0 {
        return Err(invalid("Ljung-Box series is constant"));
    }
    let nf = n as f64;
    let q: f64 = (1..=lags)
        .map(|k| {
            let r = s[k..].iter().zip(&s[..n - k]).map(|(a, b)| a * b).sum::<f64>() / g0;
            r * r / (nf - k as f64)
        })
        .sum::<f64>()
        * nf
        * (nf + 2.0);
    let chi = ChiSquared::new(lags as f64).expect("positive degrees of freedom");
    Ok(chi.sf(q).clamp(0.0, 1.0))
}

/// `E|X - m|` for `X ~ N(0, s2)` shifted by `m`.
fn abs_normal_mean(m: f64, s2: f64) -> f64 {
    let s = s2.sqrt();
    if s == 0.0 {
        return m.abs();
    }
    m * (2.0 * norm_cdf(m / s) - 1.0) + 2.0 * s * norm_pdf(m / s)
}

/// Closed-form CRPS of a Gaussian mixture.
pub fn crps_mixture(d: &ForecastDensity, y: f64) -> f64 {
    let c = d.len();
    let var: Vec<f64> = d.precisions.iter().map(|p| 1.0 / p).collect();
    let mut first = 0.0;
    let mut second = 0.0;
    for i in 0..c {
        first += d.weights[i] * abs_normal_mean(y - d.means[i], var[i]);
        for j in 0..c {
            second += d.weights[i] * d.weights[j] * abs_normal_mean(d.means[i] - d.means[j], var[i] + var[j]);
        }
    }
    (first - 0.5 * second).max(0.0)
}

/// Closed-form CRPS of a location-scale Student-t; `None` when the degrees
/// of freedom do not exceed one.
pub fn crps_student_t(loc: f64, scale: f64, dof: f64, y: f64) -> Option<f64> {
    if !(dof > 1.0) || !(scale > 0.0) {
        return None;
    }
    let t = statrs::distribution::StudentsT::new(0.0, 1.0, dof).ok()?;
    let z = (y - loc) / scale;
    let ln_beta = |a: f64, b: f64| ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    let tail = 2.0 * dof.sqrt() / (dof - 1.0) * (ln_beta(0.5, dof - 0.5) - 2.0 * ln_beta(0.5, 0.5 * dof)).exp();
    let pdf = statrs::distribution::Continuous::pdf(&t, z);
    let v = z * (2.0 * t.cdf(z) - 1.0) + 2.0 * pdf * (dof + z * z) / (dof - 1.0) - tail;
    Some(scale * v)
}

pub fn rmse(records: &[ForecastRecord]) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    (records.iter().map(|r| (r.point() - r.realized).powi(2)).sum::<f64>() / records.len() as f64).sqrt()
}

/// Two-sided Diebold-Mariano p-value with a Bartlett long-run variance
/// over `horizon - 1` lags.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], horizon: usize) -> Result<f64> {
    if loss_a.len() != loss_b.len() {
        return Err(invalid("loss series have different lengths"));
    }
    let n = loss_a.len();
    if n < 2 {
        return Err(invalid("Diebold-Mariano needs at least two losses"));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    if d.iter().all(|v| *v == 0.0) {
        return Ok(1.0);
    }
    let gamma = |j: usize| d[j..].iter().zip(&d[..n - j]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / n as f64;
    let h = horizon.max(1);
    let mut lrv = gamma(0);
    for j in 1..h.min(n) {
        lrv += 2.0 * (1.0 - j as f64 / h as f64) * gamma(j);
    }
    if lrv <= 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let stat = mean / (lrv / n as f64).sqrt();
    Ok((2.0 * (1.0 - norm_cdf(stat.abs()))).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub horizon: usize,
    pub n: usize,
    pub rmse: f64,
    pub mean_crps: Option<f64>,
    pub ks: Option<f64>,
    pub ad: Option<f64>,
    pub dh: Option<f64>,
    pub lb1: Option<f64>,
    pub lb2: Option<f64>,
    /// DM p-value on squared errors against the baseline model.
    pub dm_rmse: Option<f64>,
    /// DM p-value on CRPS against the baseline model.
    pub dm_crps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline: String,
    pub horizons: Vec<usize>,
    pub rows: Vec<ReportRow>,
    pub caveat: String,
}

impl EvalReport {
    pub fn row(&self, model: &str, horizon: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.horizon == horizon)
    }
}

fn sorted_records(records: &[ForecastRecord]) -> Vec<&ForecastRecord> {
    let mut v: Vec<&ForecastRecord> = records.iter().collect();
    v.sort_by(|a, b| (a.model.as_str(), a.horizon, a.origin).cmp(&(b.model.as_str(), b.horizon, b.origin)));
    v
}

/// Evaluates every (model, horizon) block. Records may come in any order.
pub fn evaluate(records: &[ForecastRecord], baseline: &str, lb_lags: usize) -> Result<EvalReport> {
    let sorted = sorted_records(records);
    let mut horizons: Vec<usize> = sorted.iter().map(|r| r.horizon).collect();
    horizons.sort_unstable();
    horizons.dedup();
    let mut models: Vec<&str> = sorted.iter().map(|r| r.model.as_str()).collect();
    models.dedup();
    let block = |m: &str, h: usize| -> Vec<&ForecastRecord> { sorted.iter().copied().filter(|r| r.model == m && r.horizon == h).collect() };
    let mut rows = Vec::new();
    for &h in &horizons {
        let base = block(baseline, h);
        for &m in &models {
            let recs = block(m, h);
            if recs.is_empty() {
                continue;
            }
            let owned: Vec<ForecastRecord> = recs.iter().map(|r| (*r).clone()).collect();
            let pits: Vec<f64> = recs.iter().map(|r| r.pit()).collect();
            let crps: Option<Vec<f64>> = recs.iter().map(|r| r.crps()).collect();
            let sq: Vec<f64> = recs.iter().map(|r| (r.point() - r.realized).powi(2)).collect();
            let aligned = base.len() == recs.len() && base.iter().zip(&recs).all(|(a, b)| a.origin == b.origin);
            let (dm_rmse, dm_crps) = if aligned && m != baseline {
                let bsq: Vec<f64> = base.iter().map(|r| (r.point() - r.realized).powi(2)).collect();
                let bcrps: Option<Vec<f64>> = base.iter().map(|r| r.crps()).collect();
                let dc = match (&crps, &bcrps) {
                    (Some(a), Some(b)) => dm_test(a, b, h).ok(),
                    _ => None,
                };
                (dm_test(&sq, &bsq, h).ok(), dc)
            } else {
                (None, None)
            };
            rows.push(ReportRow {
                model: m.to_string(),
                horizon: h,
                n: recs.len(),
                rmse: rmse(&owned),
                mean_crps: crps.map(|c| c.iter().sum::<f64>() / c.len() as f64),
                ks: ks_test(&pits).ok(),
                ad: ad_test(&pits).ok(),
                dh: dh_test(&pits).ok(),
                lb1: ljung_box(&pits, 1, lb_lags).ok(),
                lb2: ljung_box(&pits, 2, lb_lags).ok(),
                dm_rmse,
                dm_crps,
            });
        }
    }
    Ok(EvalReport { baseline: baseline.to_string(), horizons, rows, caveat: IID_CAVEAT.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelChoice {
    Lsbp { components: usize, estimator: Estimator },
    Benchmark { kind: BenchmarkKind },
}

impl ModelChoice {
    pub fn name(&self) -> String {
        match self {
            Self::Lsbp { components, .. } => format!("LSBP-C{components}"),
            Self::Benchmark { kind } => kind.name().to_string(),
        }
    }

    /// The mixture model followed by the six benchmarks.
    pub fn standard_set(components: usize) -> Vec<ModelChoice> {
        std::iter::once(Self::Lsbp { components, estimator: Estimator::Vb })
            .chain(BenchmarkKind::ALL.into_iter().map(|kind| Self::Benchmark { kind }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub start_fraction: f64,
    pub step: usize,
    pub horizons: Vec<usize>,
    pub lags: usize,
    pub models: Vec<ModelChoice>,
    pub vb: VbConfig,
    pub mcmc: McmcConfig,
    pub bench: BenchmarkSpec,
    pub lb_lags: usize,
    pub baseline: String,
    pub continue_on_error: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            start_fraction: 0.5,
            step: 1,
            horizons: vec![1, 4],
            lags: 2,
            models: ModelChoice::standard_set(5),
            vb: VbConfig { tol: BACKTEST_TOL, ..VbConfig::default() },
            mcmc: McmcConfig::default(),
            bench: BenchmarkSpec { tol: BACKTEST_TOL, ..BenchmarkSpec::default() },
            lb_lags: DEFAULT_LB_LAGS,
            baseline: "AR".into(),
            continue_on_error: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestOutput {
    pub vintages: usize,
    pub records: Vec<ForecastRecord>,
    pub report: EvalReport,
    /// `(model, horizon, origin, message)` of tasks that failed.
    pub failures: Vec<(String, usize, NaiveDate, String)>,
}

/// Predictive law of one model fitted on one vintage. Mixture-model and
/// benchmark forecasts both use posterior-mean parameters.
pub fn forecast_law(vintage: &DataSet, horizon: usize, lags: usize, model: &ModelChoice, cfg: &BacktestConfig) -> Result<PredictiveLaw> {
    let design = build_design(vintage, horizon, lags)?;
    let x_new = regressors_at(vintage, vintage.len() - 1, lags);
    match model {
        ModelChoice::Lsbp { components, estimator: Estimator::Vb } => {
            let fit = run_vb(&design.x, &design.y, &VbConfig { components: *components, ..cfg.vb.clone() })?;
            Ok(PredictiveLaw::Mixture(fit.state.point_params().density(&x_new)))
        }
        ModelChoice::Lsbp { components, estimator: Estimator::Mcmc } => {
            let ens = run_mcmc(&design.x, &design.y, &McmcConfig { components: *components, ..cfg.mcmc.clone() })?;
            Ok(PredictiveLaw::Mixture(ForecastDensity::average(&ens.draw_densities(&x_new))))
        }
        ModelChoice::Benchmark { kind } => {
            let spec = BenchmarkSpec { kind: *kind, ..cfg.bench.clone() };
            Ok(match fit_benchmark(&design.x, &design.y, &spec)? {
                crate::benchmarks::BenchmarkFit::Regression(f) => f.plug_in(&x_new),
                q => q.predictive(&x_new),
            })
        }
    }
}

/// Pseudo-real-time loop over expanding vintages, horizons and models.
/// Each vintage is re-standardized on its own sample.
pub fn backtest(data: &DataSet, cfg: &BacktestConfig) -> Result<BacktestOutput> {
    if cfg.horizons.is_empty() || cfg.models.is_empty() {
        return Err(invalid("backtest needs at least one horizon and one model"));
    }
    let vins = vintages(data, cfg.start_fraction, cfg.step)?;
    let mut tasks = Vec::new();
    for (v, vin) in vins.iter().enumerate() {
        let origin = vin.len() - 1;
        for &h in &cfg.horizons {
            if origin + h >= data.len() {
                continue;
            }
            for (m, model) in cfg.models.iter().enumerate() {
                tasks.push((v, h, m, *model));
            }
        }
    }
    let results: Vec<(usize, usize, usize, Result<ForecastRecord>)> = tasks
        .par_iter()
        .map(|&(v, h, m, model)| {
            let vin = &vins[v];
            let origin = vin.len() - 1;
            let rec = forecast_law(vin, h, cfg.lags, &model, cfg).and_then(|law| {
                ForecastRecord::new(model.name(), h, vin.dates[origin], data.dates[origin + h], law, data.target[origin + h])
            });
            (v, h, m, rec)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (v, h, m, rec) in results {
        match rec {
            Ok(r) => records.push(r),
            Err(e) => {
                let origin = vins[v].dates[vins[v].len() - 1];
                if !cfg.continue_on_error {
                    return Err(match e {
                        Error::Numerical(msg) => Error::Numerical(format!("{} h={h} at {origin}: {msg}", cfg.models[m].name())),
                        other => other,
                    });
                }
                failures.push((cfg.models[m].name(), h, origin, e.to_string()));
            }
        }
    }
    let report = evaluate(&records, &cfg.baseline, cfg.lb_lags)?;
    Ok(BacktestOutput { vintages: vins.len(), records, report, failures })
}
