//! Synthetic two-component data.

use chrono::{Months, NaiveDate};
use nalgebra::DMatrix;

use crate::data::DataSet;
use crate::dist::{rng_stream, std_normal};
use crate::error::Result;
use crate::model::{logistic, ForecastDensity};

/// Two Gaussian regimes whose mixing weight moves with one covariate.
#[derive(Debug, Clone)]
pub struct TwoComponentDgp {
    /// Logit of the first regime's weight: `a + b s`.
    pub weight_logit: (f64, f64),
    /// Mean of each regime: `m + g s`.
    pub means: [(f64, f64); 2],
    pub sds: [f64; 2],
}

impl Default for TwoComponentDgp {
    fn default() -> Self {
        Self { weight_logit: (0.5, 2.0), means: [(-1.0, 0.5), (2.5, -0.5)], sds: [0.5, 0.7] }
    }
}

impl TwoComponentDgp {
    pub fn density(&self, s: f64) -> ForecastDensity {
        let w = logistic(self.weight_logit.0 + self.weight_logit.1 * s);
        ForecastDensity {
            weights: vec![w, 1.0 - w],
            means: self.means.iter().map(|(m, g)| m + g * s).collect(),
            precisions: self.sds.iter().map(|s| 1.0 / (s * s)).collect(),
        }
    }

    /// Cross-sectional sample: design `[1, s_t]` with `s_t ~ N(0, 1)`.
    pub fn regression_sample(&self, n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = rng_stream(seed, 0);
        let s: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
        let y = s.iter().map(|&si| self.density(si).sample(&mut rng)).collect();
        let x = DMatrix::from_fn(n, 2, |t, j| if j == 0 { 1.0 } else { s[t] });
        (x, y)
    }
}

/// Quarterly macro-style panel: three AR(1) predictors and a target whose
/// next value is drawn from the two-regime mixture driven by the first
/// predictor, shifted by a small effect of the second.
pub fn synthetic_panel(t_len: usize, seed: u64) -> Result<DataSet> {
    let dgp = TwoComponentDgp { weight_logit: (0.5, 1.5), means: [(2.0, 0.3), (6.0, 0.8)], sds: [0.6, 1.2] };
    let mut rng = rng_stream(seed, 0);
    let n = 3;
    let burn = 50;
    let mut p = vec![0.0; n];
    let mut raw = DMatrix::zeros(t_len, n);
    let mut target = vec![0.0; t_len];
    let mut y = 2.0;
    for t in 0..burn + t_len {
        let d = dgp.density(p[0]);
        y = 0.2 * y + 0.8 * d.sample(&mut rng) + 0.3 * p[1];
        for v in p.iter_mut() {
            *v = 0.7 * *v + (1.0 - 0.49f64).sqrt() * std_normal(&mut rng);
        }
        if t >= burn {
            let r = t - burn;
            target[r] = y;
            for j in 0..n {
                raw[(r, j)] = p[j];
            }
        }
    }
    let start = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    let dates = (0..t_len).map(|i| start + Months::new(3 * i as u32)).collect();
    let names = (1..=n).map(|j| format!("X{j}")).collect();
    DataSet::new(dates, "INFL", target, names, raw)
}
