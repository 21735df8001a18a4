//! Loading, transforming and aligning macro series into estimation designs.

use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Stationarity transformation code.
pub const TCODE_LEVEL: u8 = 1;
pub const TCODE_LOG_DIFF: u8 = 4;

#[derive(Debug, Clone)]
pub struct RawSeries {
    pub name: String,
    pub tcode: u8,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Option<f64>>,
}

/// Applies a transformation code. Log differences are scaled by 100 and
/// lose the first observation.
pub fn apply_tcode(values: &[f64], tcode: u8) -> Result<Vec<f64>> {
    match tcode {
        TCODE_LEVEL => Ok(values.to_vec()),
        TCODE_LOG_DIFF => {
            if let Some(v) = values.iter().find(|v| **v <= 0.0 || !v.is_finite()) {
                return Err(Error::Data(format!("log transform of non-positive value {v}")));
            }
            Ok(values.windows(2).map(|w| 100.0 * (w[1].ln() - w[0].ln())).collect())
        }
        other => Err(invalid(format!("unsupported transformation code {other}"))),
    }
}

fn default_target_tcode() -> u8 {
    TCODE_LOG_DIFF
}
fn default_annualize() -> f64 {
    4.0
}
fn default_lags() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub name: String,
    #[serde(default = "one")]
    pub tcode: u8,
    /// Attribution group label; predictors without one form their own group.
    #[serde(default)]
    pub group: Option<String>,
}

fn one() -> u8 {
    TCODE_LEVEL
}

/// Key-value description of a data set (TOML).
///
/// ```toml
/// target = "CPI"
/// target_tcode = 4
/// annualize = 4.0
/// lags = 4
///
/// [[predictors]]
/// name = "EBP"
/// tcode = 1
/// group = "financial"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub target: String,
    #[serde(default = "default_target_tcode")]
    pub target_tcode: u8,
    #[serde(default = "default_annualize")]
    pub annualize: f64,
    #[serde(default = "default_lags")]
    pub lags: usize,
    #[serde(default)]
    pub predictors: Vec<PredictorSpec>,
}

impl DataConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Column means and scales used to standardize the predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    pub fn fit(raw: &DMatrix<f64>) -> Self {
        let t = raw.nrows() as f64;
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for j in 0..raw.ncols() {
            let col = raw.column(j);
            let m = col.sum() / t;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (t - 1.0).max(1.0);
            means.push(m);
            scales.push(if v > 0.0 { v.sqrt() } else { 1.0 });
        }
        Self { means, scales }
    }

    pub fn apply(&self, raw: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| (raw[(i, j)] - self.means[j]) / self.scales[j])
    }

    pub fn apply_value(&self, j: usize, v: f64) -> f64 {
        (v - self.means[j]) / self.scales[j]
    }

    pub fn invert_value(&self, j: usize, z: f64) -> f64 {
        z * self.scales[j] + self.means[j]
    }
}

/// Aligned, transformed sample with standardized predictors.
#[derive(Debug, Clone)]
pub struct DataSet {
    pub dates: Vec<NaiveDate>,
    pub target_name: String,
    pub target: Vec<f64>,
    pub predictor_names: Vec<String>,
    pub predictor_groups: Vec<Option<String>>,
    /// Standardized predictors, `T x n`.
    pub predictors: DMatrix<f64>,
    pub standardization: Standardization,
    raw_predictors: DMatrix<f64>,
}

impl DataSet {
    pub fn new(
        dates: Vec<NaiveDate>,
        target_name: impl Into<String>,
        target: Vec<f64>,
        predictor_names: Vec<String>,
        raw_predictors: DMatrix<f64>,
    ) -> Result<Self> {
        let t = target.len();
        if dates.len() != t || raw_predictors.nrows() != t || predictor_names.len() != raw_predictors.ncols() {
            return Err(invalid("inconsistent data dimensions"));
        }
        if target.iter().chain(raw_predictors.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in aligned sample".into()));
        }
        let standardization = Standardization::fit(&raw_predictors);
        let predictors = standardization.apply(&raw_predictors);
        let groups = vec![None; predictor_names.len()];
        Ok(Self {
            dates,
            target_name: target_name.into(),
            target,
            predictor_names,
            predictor_groups: groups,
            predictors,
            standardization,
            raw_predictors,
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn raw_predictors(&self) -> &DMatrix<f64> {
        &self.raw_predictors
    }

    /// First `len` periods, standardized over that window only.
    pub fn truncate(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(invalid(format!("cannot truncate {} periods to {len}", self.len())));
        }
        let raw = self.raw_predictors.rows(0, len).into_owned();
        let mut out = DataSet::new(
            self.dates[..len].to_vec(),
            self.target_name.clone(),
            self.target[..len].to_vec(),
            self.predictor_names.clone(),
            raw,
        )?;
        out.predictor_groups = self.predictor_groups.clone();
        Ok(out)
    }

    /// Reads a CSV whose first column holds ISO dates and whose header names
    /// the series, then transforms and aligns the columns named in `config`.
    pub fn from_csv(path: &Path, config: &DataConfig) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        Self::from_reader(&mut reader, config)
    }

    pub fn from_csv_str(text: &str, config: &DataConfig) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        Self::from_reader(&mut reader, config)
    }

    fn from_reader<R: std::io::Read>(reader: &mut csv::Reader<R>, config: &DataConfig) -> Result<Self> {
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Data(format!("column {name} not found")))
        };
        let mut wanted = vec![(config.target.clone(), config.target_tcode, col(&config.target)?)];
        for p in &config.predictors {
            wanted.push((p.name.clone(), p.tcode, col(&p.name)?));
        }
        let mut dates = Vec::new();
        let mut series: Vec<RawSeries> = wanted
            .iter()
            .map(|(n, tc, _)| RawSeries { name: n.clone(), tcode: *tc, dates: vec![], values: vec![] })
            .collect();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let d = rec.get(0).unwrap_or("").trim();
            let date = NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|_| Error::Data(format!("row {}: bad date {d:?}", line + 2)))?;
            dates.push(date);
            for (s, (_, _, idx)) in series.iter_mut().zip(&wanted) {
                let cell = rec.get(*idx).unwrap_or("").trim();
                let v = if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|_| {
                        Error::Data(format!("row {}: cannot parse {cell:?} in {}", line + 2, s.name))
                    })?)
                };
                s.values.push(v);
                s.dates.push(date);
            }
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("dates must be strictly increasing".into()));
        }
        let mut ds = align(&dates, &series, config.annualize)?;
        ds.predictor_groups = config.predictors.iter().map(|p| p.group.clone()).collect();
        Ok(ds)
    }
}

/// Transforms every series and keeps the span on which all are observed.
/// Missing values are tolerated only at the ends of the sample.
pub fn align(dates: &[NaiveDate], series: &[RawSeries], annualize: f64) -> Result<DataSet> {
    let n = dates.len();
    let mut cols: Vec<Vec<Option<f64>>> = Vec::new();
    for s in series {
        let mut out = vec![None; n];
        match s.tcode {
            TCODE_LEVEL => out.clone_from(&s.values),
            TCODE_LOG_DIFF => {
                for t in 1..n {
                    if let (Some(a), Some(b)) = (s.values[t - 1], s.values[t]) {
                        out[t] = Some(apply_tcode(&[a, b], TCODE_LOG_DIFF)?[0]);
                    }
                }
            }
            other => return Err(invalid(format!("unsupported transformation code {other}"))),
        }
        cols.push(out);
    }
    let complete = |t: usize| cols.iter().all(|c| c[t].is_some());
    let first = (0..n).find(|&t| complete(t)).ok_or_else(|| Error::Data("no complete rows".into()))?;
    let last = (0..n).rev().find(|&t| complete(t)).unwrap();
    if let Some(t) = (first..=last).find(|&t| !complete(t)) {
        return Err(Error::Data(format!("interior missing value at {}", dates[t])));
    }
    let len = last - first + 1;
    let target: Vec<f64> = (first..=last).map(|t| cols[0][t].unwrap() * annualize).collect();
    let raw = DMatrix::from_fn(len, series.len() - 1, |i, j| cols[j + 1][first + i].unwrap());
    DataSet::new(
        dates[first..=last].to_vec(),
        series[0].name.clone(),
        target,
        series[1..].iter().map(|s| s.name.clone()).collect(),
        raw,
    )
}

/// Direct-forecast regression: row `r` has origin `t = lags + r` with
/// regressors `[1, y_t, ..., y_{t-lags+1}, predictors_t]` and response
/// `y_{t+h}`.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub horizon: usize,
    pub lags: usize,
    pub columns: Vec<String>,
    /// Index into the data set of each row's forecast origin.
    pub origins: Vec<usize>,
    pub origin_dates: Vec<NaiveDate>,
    pub standardization: Standardization,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        crate::model::row(&self.x, r)
    }
}

pub fn design_columns(data: &DataSet, lags: usize) -> Vec<String> {
    let mut cols = vec!["const".to_string()];
    for l in 0..lags {
        cols.push(format!("lag{}", l + 1));
    }
    cols.extend(data.predictor_names.iter().cloned());
    cols
}

/// Regressor row at origin `t`.
pub fn regressors_at(data: &DataSet, t: usize, lags: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(1 + lags + data.predictors.ncols());
    row.push(1.0);
    for l in 0..lags {
        row.push(data.target[t - l]);
    }
    for j in 0..data.predictors.ncols() {
        row.push(data.predictors[(t, j)]);
    }
    row
}

pub fn build_design(data: &DataSet, horizon: usize, lags: usize) -> Result<DesignMatrix> {
    let t_len = data.len();
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if t_len < lags + horizon + 1 {
        return Err(invalid(format!(
            "horizon {horizon} with {lags} lags needs more than {} observations, have {t_len}",
            lags + horizon
        )));
    }
    let origins: Vec<usize> = (lags..t_len - horizon).collect();
    let k = 1 + lags + data.predictors.ncols();
    let mut x = DMatrix::zeros(origins.len(), k);
    let mut y = Vec::with_capacity(origins.len());
    for (r, &t) in origins.iter().enumerate() {
        for (j, v) in regressors_at(data, t, lags).into_iter().enumerate() {
            x[(r, j)] = v;
        }
        y.push(data.target[t + horizon]);
    }
    Ok(DesignMatrix {
        x,
        y,
        horizon,
        lags,
        columns: design_columns(data, lags),
        origin_dates: origins.iter().map(|&t| data.dates[t]).collect(),
        origins,
        standardization: data.standardization.clone(),
    })
}

/// Expanding estimation windows: the first covers `start_fraction` of the
/// sample, each later one adds `step` periods, and the last is the full
/// sample.
pub fn vintages(data: &DataSet, start_fraction: f64, step: usize) -> Result<Vec<DataSet>> {
    if !(start_fraction > 0.0 && start_fraction <= 1.0) {
        return Err(invalid("start fraction must lie in (0, 1]"));
    }
    if step == 0 {
        return Err(invalid("vintage step must be positive"));
    }
    let t = data.len();
    let start = ((start_fraction * t as f64).round() as usize).clamp(1, t);
    let mut lens: Vec<usize> = (start..=t).step_by(step).collect();
    if *lens.last().unwrap() != t {
        lens.push(t);
    }
    lens.into_iter().map(|l| data.truncate(l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dates(n: usize) -> Vec<NaiveDate> {
        (0..n)
            .map(|i| NaiveDate::from_ymd_opt(1990 + (i / 4) as i32, 1 + 3 * (i % 4) as u32, 1).unwrap())
            .collect()
    }

    fn toy(t: usize, n: usize) -> DataSet {
        let target: Vec<f64> = (0..t).map(|i| i as f64).collect();
        let raw = DMatrix::from_fn(t, n, |i, j| ((i * (j + 2)) % 7) as f64 + 0.1 * i as f64);
        DataSet::new(dates(t), "y", target, (0..n).map(|j| format!("p{j}")).collect(), raw).unwrap()
    }

    #[test]
    fn tcode_examples() {
        assert_eq!(apply_tcode(&[1.0, 2.0, 3.0], 1).unwrap(), vec![1.0, 2.0, 3.0]);
        let d = apply_tcode(&[100.0, 101.0, 102.01], 4).unwrap();
        let e = 100.0 * 1.01f64.ln();
        assert!((d[0] - e).abs() < 1e-12 && (d[1] - e).abs() < 1e-12);
        assert!(apply_tcode(&[1.0, -1.0], 4).is_err());
        assert!(apply_tcode(&[1.0], 7).is_err());
    }

    #[test]
    fn design_shapes() {
        let ds = toy(10, 1);
        let d = build_design(&ds, 1, 0).unwrap();
        assert_eq!((d.x.nrows(), d.x.ncols()), (9, 2));
        let d = build_design(&ds, 4, 4).unwrap();
        assert_eq!((d.x.nrows(), d.x.ncols()), (2, 6));
        assert_eq!(d.y.len(), 2);
        // response is exactly h periods after the origin
        for r in 0..d.rows() {
            assert_eq!(d.y[r], ds.target[d.origins[r] + 4]);
            assert_eq!(d.x[(r, 1)], ds.target[d.origins[r]]);
        }
        assert!(build_design(&ds, 6, 4).is_err());
        assert!(build_design(&ds, 5, 4).is_ok());
    }

    #[test]
    fn vintage_counts() {
        let ds = toy(100, 2);
        assert_eq!(vintages(&ds, 0.5, 1).unwrap().len(), 51);
        assert_eq!(vintages(&ds, 1.0, 1).unwrap().len(), 1);
        let v = vintages(&ds, 0.5, 4).unwrap();
        assert_eq!(v.last().unwrap().len(), 100);
        assert_eq!(v[1].len(), 54);
    }

    #[test]
    fn vintages_restandardize() {
        let ds = toy(60, 2);
        for v in vintages(&ds, 0.5, 5).unwrap() {
            for j in 0..2 {
                let col = v.predictors.column(j);
                let m = col.sum() / v.len() as f64;
                let s = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
                assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_alignment_drops_ends_only() {
        let csv = "date,P,X\n2000-01-01,100,\n2000-04-01,101,1.0\n2000-07-01,102,2.0\n2000-10-01,103,3.5\n2001-01-01,104,\n";
        let cfg = DataConfig::from_toml(
            "target = \"P\"\nlags = 1\n[[predictors]]\nname = \"X\"\n",
        )
        .unwrap();
        let ds = DataSet::from_csv_str(csv, &cfg).unwrap();
        assert_eq!(ds.len(), 3);
        assert!((ds.target[0] - 400.0 * (101f64 / 100.0).ln()).abs() < 1e-12);
        let bad = "date,P,X\n2000-01-01,100,1\n2000-04-01,101,1.5\n2000-07-01,102,\n2000-10-01,103,3.5\n2001-01-01,104,4\n";
        assert!(DataSet::from_csv_str(bad, &cfg).is_err());
    }
}
