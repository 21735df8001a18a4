//! Deflation and excess-inflation risk of forecast densities, their balance,
//! and the policy-rate path that minimizes expected risk.
//!
//! For a density `f` and thresholds `lo <= hi`:
//! `DR = -∫_{-∞}^{lo} (lo - y)^alpha f(y) dy` and
//! `EIR = ∫_{hi}^{∞} (y - hi)^beta f(y) dy`.
//! The signed balance is `w DR + (1 - w) EIR` (negative when deflation risk
//! dominates); the expected loss is `-w DR + (1 - w) EIR`.

use serde::{Deserialize, Serialize};

use crate::dist::norm_pdf;
use crate::error::{invalid, Error, Result};
use crate::model::{DensityModel, ForecastDensity};
use crate::quadrature::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskSpec {
    pub alpha: f64,
    pub beta: f64,
    pub pi_lower: f64,
    pub pi_upper: f64,
    /// Weight on deflation risk.
    pub w: f64,
}

impl Default for RiskSpec {
    fn default() -> Self {
        Self { alpha: 0.0, beta: 0.0, pi_lower: 2.0, pi_upper: 2.0, w: 0.5 }
    }
}

impl RiskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(invalid("preference exponents must be nonnegative"));
        }
        if !(self.pi_lower <= self.pi_upper) {
            return Err(invalid("lower threshold must not exceed the upper threshold"));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(invalid("deflation weight must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBands {
    pub level: f64,
    pub dr: Band,
    pub eir: Band,
    pub br: Band,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskResult {
    pub dr: f64,
    pub eir: f64,
    pub br: f64,
    pub expected_loss: f64,
    pub bands: Option<RiskBands>,
}

impl RiskResult {
    fn from_parts(dr: f64, eir: f64, w: f64) -> Self {
        Self { dr, eir, br: w * dr + (1.0 - w) * eir, expected_loss: -w * dr + (1.0 - w) * eir, bands: None }
    }
}

/// `∫_{-∞}^{a} (a - y)^p N(y | mean, sd^2) dy`, substituting `a - y = s^2`
/// so that fractional powers stay smooth at the threshold.
fn lower_partial_moment(rule: &GaussLegendre, a: f64, p: f64, mean: f64, sd: f64) -> f64 {
    if p == 0.0 {
        return crate::dist::norm_cdf((a - mean) / sd);
    }
    let far = mean - 12.0 * sd;
    if far >= a {
        return 0.0;
    }
    let near = (a - (mean + 12.0 * sd)).max(0.0);
    let (s_lo, s_hi) = (near.sqrt(), (a - far).sqrt());
    rule.integrate(
        |s| {
            let y = a - s * s;
            2.0 * s.powf(2.0 * p + 1.0) * norm_pdf((y - mean) / sd) / sd
        },
        s_lo,
        s_hi,
    )
}

pub fn deflation_risk_with(rule: &GaussLegendre, d: &ForecastDensity, spec: &RiskSpec) -> f64 {
    let mut s = 0.0;
    for c in 0..d.len() {
        s += d.weights[c] * lower_partial_moment(rule, spec.pi_lower, spec.alpha, d.means[c], d.sd(c));
    }
    -s.max(0.0)
}

pub fn excess_inflation_risk_with(rule: &GaussLegendre, d: &ForecastDensity, spec: &RiskSpec) -> f64 {
    // mirror: upper partial moment of y is the lower partial moment of -y
    let mut s = 0.0;
    for c in 0..d.len() {
        s += d.weights[c] * lower_partial_moment(rule, -spec.pi_upper, spec.beta, -d.means[c], d.sd(c));
    }
    s.max(0.0)
}

pub fn deflation_risk(d: &ForecastDensity, spec: &RiskSpec) -> f64 {
    deflation_risk_with(GaussLegendre::standard(), d, spec)
}

pub fn excess_inflation_risk(d: &ForecastDensity, spec: &RiskSpec) -> f64 {
    excess_inflation_risk_with(GaussLegendre::standard(), d, spec)
}

pub fn balance_of_risk(d: &ForecastDensity, spec: &RiskSpec) -> RiskResult {
    RiskResult::from_parts(deflation_risk(d, spec), excess_inflation_risk(d, spec), spec.w)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let i = h.floor() as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

fn band(values: &mut [f64], level: f64) -> Band {
    values.sort_by(f64::total_cmp);
    let a = 0.5 * (1.0 - level);
    Band { lower: empirical_quantile(values, a), upper: empirical_quantile(values, 1.0 - a) }
}

/// Risk of every draw's density; the point value is the mean across draws
/// and the bands are central credible intervals at `level`.
pub fn risk_over_draws(draws: &[ForecastDensity], spec: &RiskSpec, level: f64) -> Result<RiskResult> {
    if draws.is_empty() {
        return Err(invalid("empty ensemble"));
    }
    spec.validate()?;
    let per: Vec<RiskResult> = draws.iter().map(|d| balance_of_risk(d, spec)).collect();
    let n = per.len() as f64;
    let dr = per.iter().map(|r| r.dr).sum::<f64>() / n;
    let eir = per.iter().map(|r| r.eir).sum::<f64>() / n;
    let mut out = RiskResult::from_parts(dr, eir, spec.w);
    let mut v: Vec<f64> = per.iter().map(|r| r.dr).collect();
    let dr_b = band(&mut v, level);
    let mut v: Vec<f64> = per.iter().map(|r| r.eir).collect();
    let eir_b = band(&mut v, level);
    let mut v: Vec<f64> = per.iter().map(|r| r.br).collect();
    let br_b = band(&mut v, level);
    out.bands = Some(RiskBands { level, dr: dr_b, eir: eir_b, br: br_b });
    Ok(out)
}

/// Default credible level of the reported bands.
pub const BAND_LEVEL: f64 = 0.86;

pub fn risk_over_ensemble(
    ensemble: &crate::ensemble::PosteriorEnsemble,
    x: &[f64],
    spec: &RiskSpec,
) -> Result<RiskResult> {
    risk_over_draws(&ensemble.draw_densities(x), spec, BAND_LEVEL)
}

/// Policy-rate optimization problem over a sample of periods.
pub struct ShadowRateProblem<'a, M: DensityModel + Sync> {
    /// Fitted model for horizon `h = 1, 2, ...` at index `h - 1`.
    pub models: Vec<&'a M>,
    /// Regressor row of each period (standardized units).
    pub rows: Vec<Vec<f64>>,
    /// Column of the policy rate in the rows.
    pub policy_col: usize,
    pub spec: RiskSpec,
    /// Discount factor across horizons.
    pub delta: f64,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

impl<M: DensityModel + Sync> ShadowRateProblem<'_, M> {
    /// Discounted expected loss across horizons at policy value `i` in
    /// period `t`.
    pub fn risk_term(&self, t: usize, i: f64) -> f64 {
        let mut x = self.rows[t].clone();
        x[self.policy_col] = i;
        let mut s = 0.0;
        let mut disc = 1.0;
        for m in &self.models {
            s += disc * balance_of_risk(&m.density(&x), &self.spec).expected_loss;
            disc *= self.delta;
        }
        s
    }

    pub fn objective(&self, t: usize, i: f64, anchor: f64, w_i: f64) -> f64 {
        w_i * self.risk_term(t, i) + (1.0 - w_i) * (i - anchor).powi(2)
    }

    /// Optimal path for smoothing weight `w_i`. The anchor of the first
    /// period is the observed policy value.
    pub fn solve(&self, w_i: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&w_i) {
            return Err(invalid("smoothing weight must lie in [0, 1]"));
        }
        self.spec.validate()?;
        let mut path = Vec::with_capacity(self.rows.len());
        let mut anchor = self.rows.first().map_or(0.0, |r| r[self.policy_col]);
        for t in 0..self.rows.len() {
            let i = if w_i == 0.0 {
                anchor
            } else {
                let mut best = (anchor, self.objective(t, anchor, anchor, w_i));
                let edges = [-10.0, -6.0, -2.0, 2.0, 6.0, 10.0];
                for win in edges.windows(2) {
                    let (x, fx) = golden_section(|i| self.objective(t, i, anchor, w_i), win[0], win[1], 1e-9);
                    if fx < best.1 {
                        best = (x, fx);
                    }
                }
                if !best.1.is_finite() {
                    return Err(Error::Numerical(format!("non-finite shadow-rate objective in period {t}")));
                }
                best.0
            };
            path.push(i);
            anchor = i;
        }
        Ok(path)
    }
}

pub fn shadow_rate<M: DensityModel + Sync>(problem: &ShadowRateProblem<'_, M>, w_i: f64) -> Result<Vec<f64>> {
    problem.solve(w_i)
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub w_i: f64,
    pub variance: f64,
    /// Set when the grid never crosses the target and a boundary is returned.
    pub warning: Option<String>,
}

/// Smoothing weight whose optimal path has the target variance: evaluate
/// the variance gap on a grid, interpolate inside the first bracketing
/// cell, then refine by bisection on the re-solved path.
pub fn calibrate_smoothing<M: DensityModel + Sync>(
    problem: &ShadowRateProblem<'_, M>,
    target_variance: f64,
    grid_points: usize,
) -> Result<Calibration> {
    if !(target_variance > 0.0) {
        return Err(invalid("target variance must be positive"));
    }
    let n = grid_points.max(2);
    let gap = |w: f64| -> Result<(f64, f64)> {
        let v = sample_variance(&problem.solve(w)?);
        Ok((v - target_variance, v))
    };
    let grid: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
    let vals: Vec<(f64, f64)> = grid.iter().map(|&w| gap(w)).collect::<Result<_>>()?;
    let tol = 1e-4 * target_variance;
    if let Some(k) = (0..n).find(|&k| vals[k].0 == 0.0) {
        return Ok(Calibration { w_i: grid[k], variance: vals[k].1, warning: None });
    }
    let Some(k) = (0..n - 1).find(|&k| vals[k].0.signum() != vals[k + 1].0.signum()) else {
        let k = (0..n).fold(0, |b, k| if vals[k].0.abs() < vals[b].0.abs() { k } else { b });
        return Ok(Calibration {
            w_i: grid[k],
            variance: vals[k].1,
            warning: Some("target variance not bracketed by the grid; returning the closest grid point".into()),
        });
    };
    let (mut lo, mut hi) = (grid[k], grid[k + 1]);
    let (mut f_lo, f_hi) = (vals[k].0, vals[k + 1].0);
    let mut w = lo + (hi - lo) * f_lo / (f_lo - f_hi);
    let mut cur = gap(w)?;
    for _ in 0..60 {
        if cur.0.abs() <= tol {
            break;
        }
        if cur.0.signum() == f_lo.signum() {
            lo = w;
            f_lo = cur.0;
        } else {
            hi = w;
        }
        w = 0.5 * (lo + hi);
        cur = gap(w)?;
    }
    Ok(Calibration { w_i: w, variance: cur.1, warning: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(alpha: f64, beta: f64) -> RiskSpec {
        RiskSpec { alpha, beta, ..Default::default() }
    }

    #[test]
    fn normal_at_threshold() {
        let d = ForecastDensity::normal(2.0, 1.0);
        assert!((deflation_risk(&d, &spec(0.0, 0.0)) + 0.5).abs() < 1e-15);
        assert!((deflation_risk(&d, &spec(2.0, 2.0)) + 0.5).abs() < 1e-12);
        assert!((excess_inflation_risk(&d, &spec(0.0, 0.0)) - 0.5).abs() < 1e-15);
        assert!((excess_inflation_risk(&d, &spec(2.0, 2.0)) - 0.5).abs() < 1e-12);
        // first absolute moment of a half normal
        let e1 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((excess_inflation_risk(&d, &spec(1.0, 1.0)) - e1).abs() < 1e-12);
    }

    #[test]
    fn far_densities_have_no_risk() {
        let up = ForecastDensity::normal(22.0, 1.0);
        assert!(deflation_risk(&up, &spec(1.0, 1.0)).abs() < 1e-10);
        let down = ForecastDensity::normal(-18.0, 1.0);
        assert!(excess_inflation_risk(&down, &spec(2.0, 2.0)).abs() < 1e-10);
    }

    #[test]
    fn symmetric_density_balances() {
        let d = ForecastDensity { weights: vec![0.5, 0.5], means: vec![1.0, 3.0], precisions: vec![2.0, 2.0] };
        for a in [0.0, 1.0, 2.0, 3.0] {
            assert!(balance_of_risk(&d, &spec(a, a)).br.abs() < 1e-12);
        }
    }

    #[test]
    fn golden_section_finds_quadratic_minimum() {
        let (x, _) = golden_section(|v| (v - 1.234).powi(2), -10.0, 10.0, 1e-10);
        assert!((x - 1.234).abs() < 1e-8);
    }

    #[test]
    fn single_draw_bands_collapse() {
        let d = ForecastDensity::normal(1.0, 2.0);
        let r = risk_over_draws(std::slice::from_ref(&d), &spec(2.0, 2.0), 0.86).unwrap();
        let b = r.bands.unwrap();
        assert_eq!(b.br.lower, r.br);
        assert_eq!(b.br.upper, r.br);
        assert!(risk_over_draws(&[], &spec(0.0, 0.0), 0.86).is_err());
    }
}
