//! Posterior draws and their on-disk format.
//!
//! The file is JSON Lines: the first line is a header object and every
//! following line is one parameter draw
//! (`{"beta": .., "tau": .., "psi": .., "horseshoe": .., "log_joint": ..}`).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DensityModel, ForecastDensity, LsbpParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Mcmc,
    Vb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHeader {
    pub format: String,
    pub version: u32,
    pub estimator: Estimator,
    pub components: usize,
    pub dim: usize,
    pub columns: Vec<String>,
    pub horizon: usize,
    pub draws: usize,
    #[serde(default)]
    pub elbo_trace: Vec<f64>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DrawRecord {
    #[serde(flatten)]
    params: LsbpParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    log_joint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEnsemble {
    pub estimator: Estimator,
    pub draws: Vec<LsbpParams>,
    /// Log joint density at each retained draw (sampler output only).
    pub log_joint: Vec<f64>,
    pub elbo_trace: Vec<f64>,
    pub columns: Vec<String>,
    pub horizon: usize,
    pub metadata: serde_json::Value,
}

impl PosteriorEnsemble {
    pub fn new(estimator: Estimator, draws: Vec<LsbpParams>) -> Self {
        Self {
            estimator,
            draws,
            log_joint: vec![],
            elbo_trace: vec![],
            columns: vec![],
            horizon: 0,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn n_components(&self) -> usize {
        self.draws.first().map_or(0, |d| d.n_components())
    }

    pub fn dim(&self) -> usize {
        self.draws.first().map_or(0, |d| d.dim())
    }

    pub fn draw_densities(&self, x: &[f64]) -> Vec<ForecastDensity> {
        self.draws.iter().map(|d| d.density(x)).collect()
    }

    /// Keeps every `step`-th draw.
    pub fn thinned(&self, max_draws: usize) -> Self {
        if self.draws.len() <= max_draws || max_draws == 0 {
            return self.clone();
        }
        let step = self.draws.len().div_ceil(max_draws);
        let mut out = self.clone();
        out.draws = self.draws.iter().step_by(step).cloned().collect();
        if !self.log_joint.is_empty() {
            out.log_joint = self.log_joint.iter().step_by(step).cloned().collect();
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = EnsembleHeader {
            format: "mixrisk-ensemble".into(),
            version: 1,
            estimator: self.estimator,
            components: self.n_components(),
            dim: self.dim(),
            columns: self.columns.clone(),
            horizon: self.horizon,
            draws: self.draws.len(),
            elbo_trace: self.elbo_trace.clone(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for (i, d) in self.draws.iter().enumerate() {
            let rec = DrawRecord { params: d.clone(), log_joint: self.log_joint.get(i).copied() };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Data("empty ensemble file".into()))??;
        let header: EnsembleHeader = serde_json::from_str(&first)?;
        if header.format != "mixrisk-ensemble" {
            return Err(Error::Data(format!("unknown ensemble format {:?}", header.format)));
        }
        let mut draws = Vec::new();
        let mut log_joint = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DrawRecord = serde_json::from_str(&line)?;
            if rec.params.n_components() != header.components || rec.params.dim() != header.dim {
                return Err(Error::Data("draw dimensions disagree with header".into()));
            }
            if let Some(l) = rec.log_joint {
                log_joint.push(l);
            }
            draws.push(rec.params);
        }
        if draws.len() != header.draws {
            return Err(Error::Data(format!("header lists {} draws, found {}", header.draws, draws.len())));
        }
        Ok(Self {
            estimator: header.estimator,
            draws,
            log_joint,
            elbo_trace: header.elbo_trace,
            columns: header.columns,
            horizon: header.horizon,
            metadata: header.metadata,
        })
    }
}

impl DensityModel for PosteriorEnsemble {
    /// Posterior mean density.
    fn density(&self, x: &[f64]) -> ForecastDensity {
        ForecastDensity::average(&self.draw_densities(x))
    }
}
