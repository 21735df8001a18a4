use std::path::{Path, PathBuf};

use serde_json::json;

use mixrisk::attribution::{self, default_bins, AttributionConfig, Groups};
use mixrisk::benchmarks::BenchmarkKind;
use mixrisk::data::{build_design, design_columns, regressors_at, DataConfig, DataSet};
use mixrisk::ensemble::{Estimator, PosteriorEnsemble};
use mixrisk::eval::{backtest, BacktestConfig, ModelChoice, BACKTEST_TOL};
use mixrisk::mcmc::{run_mcmc, McmcConfig};
use mixrisk::model::DensityModel;
use mixrisk::risk::risk_over_ensemble;
use mixrisk::vb::{run_vb, select_truncation, VbConfig};

use crate::args::*;
use crate::output::{num, opt, Output, Stamp};
use crate::CliError;

const DEFAULT_LAGS: usize = 2;
const FORECAST_LEVELS: [f64; 5] = [0.05, 0.16, 0.5, 0.84, 0.95];

pub fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let out = cli.out.as_path();
    match cli.command {
        Command::Fit(a) => fit(out, &a),
        Command::Forecast(a) => forecast(out, &a),
        Command::Risk(a) => risk(out, &a),
        Command::Decompose(a) => decompose(out, &a),
        Command::Backtest(a) => run_backtest(out, &a),
        Command::SelectComponents(a) => select(out, &a),
        Command::SynthData(a) => synth(out, &a),
    }
}

struct Loaded {
    data: DataSet,
    lags: usize,
    inputs: Vec<PathBuf>,
    /// `name=col,...` groups from the predictor labels of the data config.
    config_groups: Vec<String>,
}

impl Loaded {
    fn input_refs(&self) -> Vec<&Path> {
        self.inputs.iter().map(PathBuf::as_path).collect()
    }
}

fn load_data(a: &DataArgs) -> Result<Loaded, CliError> {
    match (&a.data, &a.data_config) {
        (Some(csv), Some(cfg)) => {
            let text = std::fs::read_to_string(cfg).map_err(|e| CliError::User(format!("{}: {e}", cfg.display())))?;
            let config = DataConfig::from_toml(&text)?;
            let data = DataSet::from_csv(csv, &config)?;
            let mut labels: Vec<(String, Vec<String>)> = Vec::new();
            for p in &config.predictors {
                let Some(g) = &p.group else { continue };
                match labels.iter_mut().find(|(name, _)| name == g) {
                    Some((_, cols)) => cols.push(p.name.clone()),
                    None => labels.push((g.clone(), vec![p.name.clone()])),
                }
            }
            let config_groups = labels.into_iter().map(|(g, cols)| format!("{g}={}", cols.join(","))).collect();
            Ok(Loaded { data, lags: a.lags.unwrap_or(config.lags), inputs: vec![csv.clone(), cfg.clone()], config_groups })
        }
        (None, None) => {
            let data = mixrisk::synth::synthetic_panel(a.synthetic_len, a.data_seed)?;
            Ok(Loaded { data, lags: a.lags.unwrap_or(DEFAULT_LAGS), inputs: vec![], config_groups: vec![] })
        }
        _ => Err(CliError::User("--data and --data-config must be given together".into())),
    }
}

fn load_ensemble(a: &EnsembleArgs) -> Result<(PosteriorEnsemble, Loaded), CliError> {
    let file = std::fs::File::open(&a.ensemble).map_err(|e| CliError::User(format!("{}: {e}", a.ensemble.display())))?;
    let ens = PosteriorEnsemble::read_jsonl(std::io::BufReader::new(file))?;
    let mut loaded = load_data(&a.data)?;
    let lags = ens.metadata.get("lags").and_then(|v| v.as_u64()).map(|v| v as usize).unwrap_or(loaded.lags);
    if a.data.lags.is_some_and(|l| l != lags) {
        return Err(CliError::User(format!("--lags conflicts with the ensemble's {lags} lags")));
    }
    loaded.lags = lags;
    if design_columns(&loaded.data, lags) != ens.columns {
        return Err(CliError::User("ensemble columns do not match the data".into()));
    }
    loaded.inputs.push(a.ensemble.clone());
    Ok((ens, loaded))
}

fn fit(out: &Path, a: &FitArgs) -> Result<PathBuf, CliError> {
    let l = load_data(&a.data)?;
    let design = build_design(&l.data, a.horizon, l.lags)?;
    let stamp = Stamp::new("fit", a, &l.input_refs(), a.seed)?;
    let mut ens = match a.estimator {
        EstimatorArg::Vb => {
            let cfg = VbConfig { components: a.components, starts: a.starts, seed: a.seed, ..VbConfig::default() };
            let fit = run_vb(&design.x, &design.y, &cfg)?;
            if a.vb_draws == 0 {
                fit.point_ensemble()
            } else {
                fit.draw_ensemble(a.vb_draws, a.seed)
            }
        }
        EstimatorArg::Mcmc => {
            let cfg = McmcConfig {
                components: a.components,
                n_draws: a.sweeps,
                burn_in: a.burn_in,
                thin: a.thin,
                chains: a.chains,
                seed: a.seed,
                ..McmcConfig::default()
            };
            run_mcmc(&design.x, &design.y, &cfg)?
        }
    };
    ens.columns = design.columns.clone();
    ens.horizon = a.horizon;
    ens.metadata = json!({ "lags": l.lags, "config_hash": stamp.hash, "seed": a.seed });
    let mut bytes = Vec::new();
    ens.write_jsonl(&mut bytes)?;
    let mut o = Output::new(out, stamp)?;
    o.raw("ensemble.jsonl", &bytes)?;
    o.manifest(json!({
        "draws": ens.draws.len(),
        "components": ens.n_components(),
        "rows": design.rows(),
        "elbo_trace": ens.elbo_trace,
        "log_joint": ens.log_joint,
    }))
}

fn origins(l: &Loaded) -> std::ops::Range<usize> {
    l.lags.saturating_sub(1)..l.data.len()
}

fn forecast(out: &Path, a: &EnsembleArgs) -> Result<PathBuf, CliError> {
    let (ens, l) = load_ensemble(a)?;
    let seed = ens.metadata.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
    let stamp = Stamp::new("forecast", a, &l.input_refs(), seed)?;
    let mut header: Vec<String> = ["origin", "mean", "sd"].map(String::from).to_vec();
    header.extend(FORECAST_LEVELS.iter().map(|p| format!("q{:02}", (p * 100.0).round() as u32)));
    let mut rows = Vec::new();
    for t in origins(&l) {
        let d = ens.density(&regressors_at(&l.data, t, l.lags));
        let mut r = vec![l.data.dates[t].to_string(), num(d.mean()), num(d.variance().sqrt())];
        r.extend(d.quantiles(&FORECAST_LEVELS).into_iter().map(num));
        rows.push(r);
    }
    let mut o = Output::new(out, stamp)?;
    o.csv("forecast.csv", &header, &rows)?;
    o.manifest(json!({ "horizon": ens.horizon, "origins": rows.len() }))
}

fn risk(out: &Path, a: &RiskArgs) -> Result<PathBuf, CliError> {
    let (ens, l) = load_ensemble(&a.input)?;
    let spec = a.risk.spec();
    spec.validate()?;
    let seed = ens.metadata.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
    let stamp = Stamp::new("risk", a, &l.input_refs(), seed)?;
    let header = ["origin", "dr", "eir", "br", "expected_loss", "dr_lo", "dr_hi", "eir_lo", "eir_hi", "br_lo", "br_hi"]
        .map(String::from)
        .to_vec();
    let mut rows = Vec::new();
    for t in origins(&l) {
        let r = risk_over_ensemble(&ens, &regressors_at(&l.data, t, l.lags), &spec)?;
        let b = r.bands.expect("bands from draws");
        rows.push(vec![
            l.data.dates[t].to_string(),
            num(r.dr),
            num(r.eir),
            num(r.br),
            num(r.expected_loss),
            num(b.dr.lower),
            num(b.dr.upper),
            num(b.eir.lower),
            num(b.eir.upper),
            num(b.br.lower),
            num(b.br.upper),
        ]);
    }
    let mut o = Output::new(out, stamp)?;
    o.csv("risk.csv", &header, &rows)?;
    o.manifest(json!({ "horizon": ens.horizon, "band_level": mixrisk::risk::BAND_LEVEL, "origins": rows.len() }))
}

/// Expands `lag1..lag4` into `lag1, lag2, lag3, lag4`.
fn expand_token(tok: &str) -> Result<Vec<String>, CliError> {
    let Some((a, b)) = tok.split_once("..") else {
        return Ok(vec![tok.to_string()]);
    };
    let split = |s: &str| {
        let i = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        (s[..i].to_string(), s[i..].parse::<usize>().ok())
    };
    match (split(a), split(b)) {
        ((pa, Some(x)), (pb, Some(y))) if pa == pb && x <= y => Ok((x..=y).map(|n| format!("{pa}{n}")).collect()),
        _ => Err(CliError::User(format!("cannot expand column range {tok:?}"))),
    }
}

pub fn parse_groups(specs: &[String], columns: &[String]) -> Result<Groups, CliError> {
    let mut names = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for s in specs {
        let (name, cols) = s
            .split_once('=')
            .ok_or_else(|| CliError::User(format!("group {s:?} must look like name=col,col")))?;
        let mut idx = Vec::new();
        for tok in cols.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            for c in expand_token(tok)? {
                let j = columns
                    .iter()
                    .position(|k| *k == c)
                    .ok_or_else(|| CliError::User(format!("unknown column {c:?} in group {name:?}")))?;
                idx.push(j);
            }
        }
        names.push(name.trim().to_string());
        members.push(idx);
    }
    let used: Vec<usize> = members.iter().flatten().copied().collect();
    for (j, c) in columns.iter().enumerate() {
        if !used.contains(&j) {
            names.push(c.clone());
            members.push(vec![j]);
        }
    }
    Ok(Groups::new(names, members, columns.len())?)
}

fn decompose(out: &Path, a: &DecomposeArgs) -> Result<PathBuf, CliError> {
    let (ens, l) = load_ensemble(&a.input)?;
    let spec = a.risk.spec();
    spec.validate()?;
    let ens = ens.thinned(a.max_draws.max(1));
    let design = build_design(&l.data, ens.horizon, l.lags)?;
    let specs = if a.groups.is_empty() { &l.config_groups } else { &a.groups };
    let groups = parse_groups(specs, &design.columns)?;
    let stamp = Stamp::new("decompose", a, &l.input_refs(), a.seed)?;
    let mut header: Vec<String> = ["origin", "measure", "baseline"].map(String::from).to_vec();
    header.extend(groups.names.iter().cloned());
    header.extend(["residual", "predicted"].map(String::from));
    let mut rows = Vec::new();
    let mut max_residual: f64 = 0.0;
    for t in 1..design.rows() {
        let r = if a.samples == 0 {
            attribution::decompose_risk_exact(&ens, &design.x, t, &spec, &groups)?
        } else {
            let cfg = AttributionConfig { samples: a.samples, bins: vec![0.0, 1.0], groups: groups.clone(), seed: a.seed };
            attribution::decompose_risk_mc(&ens, &design.x, t, &spec, &cfg)?
        };
        for (m, pick) in [("dr", 0usize), ("eir", 1), ("br", 2)] {
            let get = |x: &attribution::RiskTriple| [x.dr, x.eir, x.br][pick];
            let mut row = vec![design.origin_dates[t].to_string(), m.to_string(), num(get(&r.baseline))];
            row.extend(r.contributions.iter().map(|c| num(get(c))));
            row.push(num(get(&r.residual)));
            row.push(num(get(&r.predicted)));
            max_residual = max_residual.max(get(&r.residual).abs());
            rows.push(row);
        }
    }
    let mut o = Output::new(out, stamp)?;
    o.csv("attribution.csv", &header, &rows)?;
    let mut extra = json!({ "groups": groups.names, "periods": design.rows().saturating_sub(1), "max_abs_residual": max_residual });
    if let Some(width) = a.bin_width {
        if !(width > 0.0) {
            return Err(CliError::User("--bin-width must be positive".into()));
        }
        let t = design.rows() - 1;
        let cfg = AttributionConfig { samples: a.samples, bins: default_bins(&design.y, width), groups: groups.clone(), seed: a.seed };
        let d = if a.samples == 0 {
            attribution::decompose_density_exact(&ens, &design.x, t, &cfg)?
        } else {
            attribution::decompose_density_mc(&ens, &design.x, t, &cfg)?
        };
        let mut header: Vec<String> = ["bin_lo", "bin_hi", "forecast", "historical"].map(String::from).to_vec();
        header.extend(groups.names.iter().cloned());
        header.push("residual".into());
        let rows: Vec<Vec<String>> = (0..d.bins.len() - 1)
            .map(|b| {
                let mut r = vec![num(d.bins[b]), num(d.bins[b + 1]), num(d.forecast_mass[b]), num(d.historical_mass[b])];
                r.extend((0..groups.len()).map(|g| num(d.contributions[(g, b)])));
                r.push(num(d.residual[b]));
                r
            })
            .collect();
        o.csv("density_attribution.csv", &header, &rows)?;
        extra["density_origin"] = json!(design.origin_dates[t].to_string());
        extra["total_mass_gap"] = json!(attribution::total_mass_gap(&d));
    }
    o.manifest(extra)
}

fn model_choices(a: &BacktestArgs) -> Result<Vec<ModelChoice>, CliError> {
    let estimator = match a.estimator {
        EstimatorArg::Vb => Estimator::Vb,
        EstimatorArg::Mcmc => Estimator::Mcmc,
    };
    a.models
        .iter()
        .map(|m| {
            if m.eq_ignore_ascii_case("LSBP") {
                Ok(ModelChoice::Lsbp { components: a.components, estimator })
            } else {
                Ok(ModelChoice::Benchmark { kind: m.parse::<BenchmarkKind>()? })
            }
        })
        .collect()
}

fn run_backtest(out: &Path, a: &BacktestArgs) -> Result<PathBuf, CliError> {
    let l = load_data(&a.data)?;
    let models = model_choices(a)?;
    let names: Vec<String> = models.iter().map(ModelChoice::name).collect();
    let baseline = names
        .iter()
        .find(|n| n.eq_ignore_ascii_case(&a.baseline))
        .cloned()
        .ok_or_else(|| CliError::User(format!("baseline {} is not among the models", a.baseline)))?;
    let defaults = BacktestConfig::default();
    let cfg = BacktestConfig {
        start_fraction: a.start_fraction,
        step: a.step,
        horizons: a.horizons.clone(),
        lags: l.lags,
        models,
        vb: VbConfig { seed: a.seed, tol: BACKTEST_TOL, ..VbConfig::default() },
        mcmc: McmcConfig { seed: a.seed, ..defaults.mcmc },
        lb_lags: a.lb_lags,
        baseline,
        continue_on_error: a.continue_on_error,
        ..defaults
    };
    let stamp = Stamp::new("backtest", a, &l.input_refs(), a.seed)?;
    let res = backtest(&l.data, &cfg)?;
    let mut o = Output::new(out, stamp)?;
    let header = ["model", "horizon", "origin", "target_date", "realized", "point", "pit", "crps"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = res
        .records
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.horizon.to_string(),
                r.origin.to_string(),
                r.target_date.to_string(),
                num(r.realized),
                num(r.point()),
                num(r.pit()),
                opt(r.crps()),
            ]
        })
        .collect();
    o.csv("records.csv", &header, &rows)?;
    let header = ["model", "horizon", "n", "rmse", "mean_crps", "ks", "ad", "dh", "lb1", "lb2", "dm_rmse", "dm_crps"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = res
        .report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.horizon.to_string(),
                r.n.to_string(),
                num(r.rmse),
                opt(r.mean_crps),
                opt(r.ks),
                opt(r.ad),
                opt(r.dh),
                opt(r.lb1),
                opt(r.lb2),
                opt(r.dm_rmse),
                opt(r.dm_crps),
            ]
        })
        .collect();
    o.csv("report.csv", &header, &rows)?;
    let failures: Vec<_> = res
        .failures
        .iter()
        .map(|(m, h, d, e)| json!({ "model": m, "horizon": h, "origin": d.to_string(), "error": e }))
        .collect();
    o.manifest(json!({
        "vintages": res.vintages,
        "horizons": res.report.horizons,
        "baseline": res.report.baseline,
        "caveat": res.report.caveat,
        "failures": failures,
    }))
}

fn select(out: &Path, a: &SelectArgs) -> Result<PathBuf, CliError> {
    let l = load_data(&a.data)?;
    let design = build_design(&l.data, a.horizon, l.lags)?;
    let stamp = Stamp::new("select-components", a, &l.input_refs(), a.seed)?;
    let (best, elbos) = select_truncation(&design.x, &design.y, a.c_max, &VbConfig { seed: a.seed, ..VbConfig::default() })?;
    let rows: Vec<Vec<String>> = elbos.iter().enumerate().map(|(i, e)| vec![(i + 1).to_string(), num(*e)]).collect();
    let mut o = Output::new(out, stamp)?;
    o.csv("selection.csv", &["components".into(), "elbo".into()], &rows)?;
    o.manifest(json!({ "selected": best, "elbo": elbos }))
}

fn synth(out: &Path, a: &SynthArgs) -> Result<PathBuf, CliError> {
    let data = mixrisk::synth::synthetic_panel(a.len, a.seed)?;
    let stamp = Stamp::new("synth-data", a, &[], a.seed)?;
    let mut header = vec!["date".to_string(), data.target_name.clone()];
    header.extend(data.predictor_names.iter().cloned());
    let raw = data.raw_predictors();
    let rows: Vec<Vec<String>> = (0..data.len())
        .map(|t| {
            let mut r = vec![data.dates[t].to_string(), num(data.target[t])];
            r.extend((0..raw.ncols()).map(|j| num(raw[(t, j)])));
            r
        })
        .collect();
    let mut toml = stamp.header_line();
    toml += &format!("target = \"{}\"\ntarget_tcode = 1\nannualize = 1.0\nlags = {DEFAULT_LAGS}\n", data.target_name);
    for p in &data.predictor_names {
        toml += &format!("\n[[predictors]]\nname = \"{p}\"\ntcode = 1\n");
    }
    let mut o = Output::new(out, stamp)?;
    o.csv("data.csv", &header, &rows)?;
    o.raw("data.toml", toml.as_bytes())?;
    o.manifest(json!({ "periods": data.len() }))
}
