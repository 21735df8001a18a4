//! Shapley attribution of forecast-density bin mass and of risk measures to
//! groups of predictors.
//!
//! A coalition `S` of groups takes its columns from the current row; every
//! other column comes from a historical row. The coalition value is the
//! valued functional (bin masses or risk measures) averaged over historical
//! rows, so the full coalition gives the forecast and the empty one gives
//! the historical average.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::rng_stream;
use crate::error::{invalid, Result};
use crate::model::{DensityModel, ForecastDensity};
use crate::risk::{balance_of_risk, RiskSpec};

/// Exact enumeration is refused above this many groups.
pub const MAX_EXACT_GROUPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Groups {
    pub names: Vec<String>,
    pub members: Vec<Vec<usize>>,
}

impl Groups {
    pub fn new(names: Vec<String>, members: Vec<Vec<usize>>, n_columns: usize) -> Result<Self> {
        if names.len() != members.len() || names.is_empty() {
            return Err(invalid("each group needs a name and at least one group is required"));
        }
        let mut seen = vec![false; n_columns];
        for cols in &members {
            for &c in cols {
                if c >= n_columns || seen[c] {
                    return Err(invalid(format!("column {c} is out of range or in two groups")));
                }
                seen[c] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("groups must cover every design column"));
        }
        Ok(Self { names, members })
    }

    /// One group per column.
    pub fn singletons(columns: &[String]) -> Self {
        Self { names: columns.to_vec(), members: (0..columns.len()).map(|c| vec![c]).collect() }
    }

    /// Groups from per-column labels, in order of first appearance.
    pub fn from_labels(labels: &[String]) -> Self {
        let mut names: Vec<String> = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (c, l) in labels.iter().enumerate() {
            match names.iter().position(|n| n == l) {
                Some(g) => members[g].push(c),
                None => {
                    names.push(l.clone());
                    members.push(vec![c]);
                }
            }
        }
        Self { names, members }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn column_owner(&self, n_columns: usize) -> Vec<usize> {
        let mut owner = vec![0; n_columns];
        for (g, cols) in self.members.iter().enumerate() {
            for &c in cols {
                owner[c] = g;
            }
        }
        owner
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    /// Monte Carlo samples per group.
    pub samples: usize,
    /// Strictly increasing bin edges.
    pub bins: Vec<f64>,
    pub groups: Groups,
    pub seed: u64,
}

impl AttributionConfig {
    pub fn validate(&self, n_columns: usize) -> Result<()> {
        if self.bins.len() < 2 || self.bins.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("bin edges must be strictly increasing with at least two edges"));
        }
        Groups::new(self.groups.names.clone(), self.groups.members.clone(), n_columns)?;
        Ok(())
    }
}

/// Edges at multiples of `width` from `floor(min y)` to `ceil(max y)`.
pub fn default_bins(y: &[f64], width: f64) -> Vec<f64> {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min).floor();
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil();
    let n = (((hi - lo) / width).ceil() as usize).max(1);
    (0..=n).map(|i| lo + i as f64 * width).collect()
}

/// Mass of each bin; the first and last bins are open-ended so the masses
/// sum to one.
pub fn bin_masses(d: &ForecastDensity, edges: &[f64]) -> Vec<f64> {
    let b = edges.len() - 1;
    let mut cdf: Vec<f64> = edges.iter().map(|&e| d.cdf(e)).collect();
    cdf[0] = 0.0;
    cdf[b] = 1.0;
    (0..b).map(|i| cdf[i + 1] - cdf[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityAttribution {
    pub group_names: Vec<String>,
    pub bins: Vec<f64>,
    /// Groups × bins.
    pub contributions: DMatrix<f64>,
    pub forecast_mass: Vec<f64>,
    pub historical_mass: Vec<f64>,
    /// Forecast minus historical minus summed contributions, per bin.
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskTriple {
    pub dr: f64,
    pub eir: f64,
    pub br: f64,
}

impl RiskTriple {
    fn from_slice(v: &[f64]) -> Self {
        Self { dr: v[0], eir: v[1], br: v[2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAttribution {
    pub group_names: Vec<String>,
    pub contributions: Vec<RiskTriple>,
    pub baseline: RiskTriple,
    pub predicted: RiskTriple,
    pub residual: RiskTriple,
}

/// One marginal-contribution sample: `player` joins `coalition` (bitmask
/// over groups) against historical row `baseline`, weighted by `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoalitionSample {
    pub player: usize,
    pub baseline: usize,
    pub coalition: u64,
    pub weight: f64,
}

/// Valued game over groups of design columns.
struct Game<'a, V> {
    value: V,
    current: Vec<f64>,
    history: Vec<Vec<f64>>,
    owner: Vec<usize>,
    groups: &'a Groups,
}

impl<V: Fn(&[f64]) -> Vec<f64> + Sync> Game<'_, V> {
    fn hybrid(&self, baseline: usize, mask: u64) -> Vec<f64> {
        let base = &self.history[baseline];
        (0..self.current.len())
            .map(|c| if mask >> self.owner[c] & 1 == 1 { self.current[c] } else { base[c] })
            .collect()
    }

    fn mean_over_history(&self, f: impl Fn(usize) -> Vec<f64> + Sync + Send) -> Vec<f64> {
        let parts: Vec<Vec<f64>> = (0..self.history.len()).into_par_iter().map(f).collect();
        let n = parts.len() as f64;
        let mut out = vec![0.0; parts[0].len()];
        for p in &parts {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v / n;
            }
        }
        out
    }

    fn forecast(&self) -> Vec<f64> {
        (self.value)(&self.current)
    }

    fn historical(&self) -> Vec<f64> {
        self.mean_over_history(|s| (self.value)(&self.history[s]))
    }

    fn exact(&self) -> Vec<Vec<f64>> {
        let n = self.groups.len();
        let full = 1u64 << n;
        let v: Vec<Vec<f64>> = (0..full).map(|m| self.mean_over_history(|s| (self.value)(&self.hybrid(s, m)))).collect();
        let fact: Vec<f64> = (0..=n).scan(1.0, |acc, i| {
            if i > 0 {
                *acc *= i as f64;
            }
            Some(*acc)
        }).collect();
        let width = v[0].len();
        (0..n)
            .map(|j| {
                let mut phi = vec![0.0; width];
                for m in 0..full {
                    if m >> j & 1 == 1 {
                        continue;
                    }
                    let k = m.count_ones() as usize;
                    let w = fact[k] * fact[n - k - 1] / fact[n];
                    let with = &v[(m | 1 << j) as usize];
                    for b in 0..width {
                        phi[b] += w * (with[b] - v[m as usize][b]);
                    }
                }
                phi
            })
            .collect()
    }

    fn sampled(&self, samples: &[CoalitionSample]) -> Vec<Vec<f64>> {
        let n = self.groups.len();
        let width = self.forecast().len();
        let parts: Vec<(usize, Vec<f64>)> = samples
            .par_iter()
            .map(|s| {
                let plus = (self.value)(&self.hybrid(s.baseline, s.coalition | 1 << s.player));
                let minus = (self.value)(&self.hybrid(s.baseline, s.coalition & !(1 << s.player)));
                (s.player, plus.iter().zip(&minus).map(|(a, b)| s.weight * (a - b)).collect())
            })
            .collect();
        let mut phi = vec![vec![0.0; width]; n];
        for (j, d) in parts {
            for (p, v) in phi[j].iter_mut().zip(d) {
                *p += v;
            }
        }
        phi
    }
}

/// Uniform subset size, then a uniform subset of that size among the other
/// groups; averaging marginal contributions over these draws is unbiased for
/// the Shapley value.
pub fn sample_coalitions(n_groups: usize, n_history: usize, samples: usize, seed: u64) -> Vec<CoalitionSample> {
    let mut out = Vec::with_capacity(n_groups * samples);
    for j in 0..n_groups {
        let mut rng = rng_stream(seed, j as u64);
        let others: Vec<usize> = (0..n_groups).filter(|&g| g != j).collect();
        for _ in 0..samples {
            let baseline = rng.random_range(0..n_history);
            let size = rng.random_range(0..=others.len());
            let mut pool = others.clone();
            let mut mask = 0u64;
            for i in 0..size {
                let pick = rng.random_range(i..pool.len());
                pool.swap(i, pick);
                mask |= 1 << pool[i];
            }
            out.push(CoalitionSample { player: j, baseline, coalition: mask, weight: 1.0 / samples as f64 });
        }
    }
    out
}

/// Every (baseline, coalition) pair with its exact Shapley weight.
pub fn exhaustive_coalitions(n_groups: usize, n_history: usize) -> Vec<CoalitionSample> {
    let n = n_groups;
    let fact = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    let mut out = Vec::new();
    for j in 0..n {
        for s in 0..n_history {
            for m in 0..(1u64 << n) {
                if m >> j & 1 == 1 {
                    continue;
                }
                let k = m.count_ones() as usize;
                let w = fact(k) * fact(n - k - 1) / fact(n) / n_history as f64;
                out.push(CoalitionSample { player: j, baseline: s, coalition: m, weight: w });
            }
        }
    }
    out
}

fn history_rows(design: &DMatrix<f64>, t: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if t == 0 || t >= design.nrows() {
        return Err(invalid("attribution needs at least one historical row before the target row"));
    }
    let row = |r: usize| (0..design.ncols()).map(|c| design[(r, c)]).collect::<Vec<f64>>();
    Ok((row(t), (0..t).map(row).collect()))
}

enum Method<'a> {
    Exact,
    Samples(&'a [CoalitionSample]),
}

fn density_attribution<M: DensityModel + Sync>(
    model: &M,
    design: &DMatrix<f64>,
    t: usize,
    config: &AttributionConfig,
    method: Method<'_>,
) -> Result<DensityAttribution> {
    config.validate(design.ncols())?;
    let (current, history) = history_rows(design, t)?;
    let bins = &config.bins;
    let game = Game {
        value: |x: &[f64]| bin_masses(&model.density(x), bins),
        current,
        history,
        owner: config.groups.column_owner(design.ncols()),
        groups: &config.groups,
    };
    let phi = match method {
        Method::Exact => {
            if config.groups.len() > MAX_EXACT_GROUPS {
                return Err(invalid(format!("exact attribution supports at most {MAX_EXACT_GROUPS} groups")));
            }
            game.exact()
        }
        Method::Samples(s) => game.sampled(s),
    };
    let forecast_mass = game.forecast();
    let historical_mass = game.historical();
    let nb = forecast_mass.len();
    let contributions = DMatrix::from_fn(phi.len(), nb, |g, b| phi[g][b]);
    let residual = (0..nb)
        .map(|b| forecast_mass[b] - historical_mass[b] - phi.iter().map(|p| p[b]).sum::<f64>())
        .collect();
    Ok(DensityAttribution {
        group_names: config.groups.names.clone(),
        bins: bins.clone(),
        contributions,
        forecast_mass,
        historical_mass,
        residual,
    })
}

/// Mean bin masses of the model evaluated at rows `0..t`.
pub fn historical_average_density<M: DensityModel + Sync>(
    model: &M,
    design: &DMatrix<f64>,
    t: usize,
    bins: &[f64],
) -> Result<Vec<f64>> {
    let (_, history) = history_rows(design, t)?;
    let n = history.len() as f64;
    let mut out = vec![0.0; bins.len() - 1];
    for x in &history {
        for (o, m) in out.iter_mut().zip(bin_masses(&model.density(x), bins)) {
            *o += m / n;
        }
    }
    Ok(out)
}

/// Exact Shapley attribution of the density at row `t` against rows `0..t`.
pub fn decompose_density_exact<M: DensityModel + Sync>(
    model: &M,
    design: &DMatrix<f64>,
    t: usize,
    config: &AttributionConfig,
) -> Result<DensityAttribution> {
    density_attribution(model, design, t, config, Method::Exact)
}

pub fn decompose_density_mc<M: DensityModel + Sync>(
    model: &M,
    design: &DMatrix<f64>,
    t: usize,
    config: &AttributionConfig,
) -> Result<DensityAttribution> {
    if config.samples == 0 {
        return Err(invalid("at least one Monte Carlo sample is required"));
    }
    let samples = sample_coalitions(config.groups.len(), t, config.samples, config.seed);
    density_attribution(model, design, t, config, Method::Samples(&samples))
}

/// Attribution from caller-supplied weighted samples.
pub fn decompose_density_with<M: DensityModel + Sync>(
    model: &M,
    design: &DMatrix<f64>,
    t: usize,
    config: &AttributionConfig,
    samples: &[CoalitionSample],
) -> Result<DensityAttribution> {
    density_attribution(model, design, t, config, Method::Samples(samples))
}

fn risk_attribution<M: DensityModel + Sync>(
    model: &M,
    design: &DMatrix<f64>,
    t: usize,
    spec: &RiskSpec,
    groups: &Groups,
    method: Method<'_>,
) -> Result<RiskAttribution> {
    spec.validate()?;
    Groups::new(groups.names.clone(), groups.members.clone(), design.ncols())?;
    let (current, history) = history_rows(design, t)?;
    let game = Game {
        value: |x: &[f64]| {
            let r = balance_of_risk(&model.density(x), spec);
            vec![r.dr, r.eir, r.br]
        },
        current,
        history,
        owner: groups.column_owner(design.ncols()),
        groups,
    };
    let phi = match method {
        Method::Exact => {
            if groups.len() > MAX_EXACT_GROUPS {
                return Err(invalid(format!("exact attribution supports at most {MAX_EXACT_GROUPS} groups")));
            }
            game.exact()
        }
        Method::Samples(s) => game.sampled(s),
    };
    let predicted = game.forecast();
    let baseline = game.historical();
    let residual: Vec<f64> =
        (0..3).map(|i| predicted[i] - baseline[i] - phi.iter().map(|p| p[i]).sum::<f64>()).collect();
    Ok(RiskAttribution {
        group_names: groups.names.clone(),
        contributions: phi.iter().map(|p| RiskTriple::from_slice(p)).collect(),
        baseline: RiskTriple::from_slice(&baseline),
        predicted: RiskTriple::from_slice(&predicted),
        residual: RiskTriple::from_slice(&residual),
    })
}

pub fn decompose_risk_exact<M: DensityModel + Sync>(
    model: &M,
    design: &DMatrix<f64>,
    t: usize,
    spec: &RiskSpec,
    groups: &Groups,
) -> Result<RiskAttribution> {
    risk_attribution(model, design, t, spec, groups, Method::Exact)
}

pub fn decompose_risk_mc<M: DensityModel + Sync>(
    model: &M,
    design: &DMatrix<f64>,
    t: usize,
    spec: &RiskSpec,
    config: &AttributionConfig,
) -> Result<RiskAttribution> {
    if config.samples == 0 {
        return Err(invalid("at least one Monte Carlo sample is required"));
    }
    let samples = sample_coalitions(config.groups.len(), t, config.samples, config.seed);
    risk_attribution(model, design, t, spec, &config.groups, Method::Samples(&samples))
}

pub fn decompose_risk_with<M: DensityModel + Sync>(
    model: &M,
    design: &DMatrix<f64>,
    t: usize,
    spec: &RiskSpec,
    groups: &Groups,
    samples: &[CoalitionSample],
) -> Result<RiskAttribution> {
    risk_attribution(model, design, t, spec, groups, Method::Samples(samples))
}

/// Distance of the attributed total mass from one.
pub fn total_mass_gap(attribution: &DensityAttribution) -> f64 {
    let total: f64 = attribution.contributions.iter().sum::<f64>() + attribution.historical_mass.iter().sum::<f64>();
    (total - 1.0).abs()
}
