use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "mixrisk", version, about = "Covariate-dependent mixture forecasts of inflation risk")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "MIXRISK_OUT", default_value = "mixrisk-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the mixture model and write a posterior ensemble.
    Fit(FitArgs),
    /// Predictive summaries at every forecast origin.
    Forecast(EnsembleArgs),
    /// Deflation, excess-inflation and balance-of-risk paths with bands.
    Risk(RiskArgs),
    /// Shapley attribution of the risk measures to predictor groups.
    Decompose(DecomposeArgs),
    /// Pseudo-out-of-sample evaluation over expanding vintages.
    Backtest(BacktestArgs),
    /// Pick the number of mixture components by the variational bound.
    SelectComponents(SelectArgs),
    /// Write the bundled synthetic data set and its column description.
    SynthData(SynthArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// CSV with ISO dates in the first column.
    #[arg(long, requires = "data_config")]
    pub data: Option<PathBuf>,
    /// TOML column description for --data.
    #[arg(long)]
    pub data_config: Option<PathBuf>,
    /// Length of the synthetic sample used when --data is absent.
    #[arg(long, default_value_t = 200)]
    pub synthetic_len: usize,
    /// Seed of the synthetic sample.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Autoregressive lags; defaults to the data description, or 2.
    #[arg(long)]
    pub lags: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorArg {
    Vb,
    Mcmc,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Vb)]
    pub estimator: EstimatorArg,
    /// Truncation level (number of mixture components).
    #[arg(long = "C", visible_alias = "components", default_value_t = 5)]
    pub components: usize,
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draws from the variational posterior; 0 keeps only the posterior means.
    #[arg(long, default_value_t = 200)]
    pub vb_draws: usize,
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    /// Sampler sweeps including burn-in.
    #[arg(long, default_value_t = 20_000)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 5_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EnsembleArgs {
    /// Ensemble written by `fit`.
    #[arg(long)]
    pub ensemble: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RiskSpecArgs {
    /// Deflation preference exponent.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Excess-inflation preference exponent.
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub pi_lower: f64,
    #[arg(long, default_value_t = 2.0)]
    pub pi_upper: f64,
    /// Weight on deflation risk.
    #[arg(long, default_value_t = 0.5)]
    pub w: f64,
}

impl RiskSpecArgs {
    pub fn spec(&self) -> mixrisk::risk::RiskSpec {
        mixrisk::risk::RiskSpec { alpha: self.alpha, beta: self.beta, pi_lower: self.pi_lower, pi_upper: self.pi_upper, w: self.w }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RiskArgs {
    #[command(flatten)]
    pub input: EnsembleArgs,
    #[command(flatten)]
    pub risk: RiskSpecArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub input: EnsembleArgs,
    #[command(flatten)]
    pub risk: RiskSpecArgs,
    /// Group definition `name=col,col,...`; ranges like `lag1..lag4` are
    /// expanded. Without this flag the `group` labels of the data config
    /// are used. Columns not named form their own groups.
    #[arg(long)]
    pub groups: Vec<String>,
    /// Monte Carlo samples per group; 0 enumerates coalitions exactly.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Posterior draws kept for the attribution.
    #[arg(long, default_value_t = 20)]
    pub max_draws: usize,
    /// Also attribute the last period's density to bins of this width.
    #[arg(long)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 4])]
    pub horizons: Vec<usize>,
    /// Comma-separated models: LSBP and any of AR, TVP-AR, SV-AR, TVPSV-AR, T-AR, QR.
    #[arg(long, value_delimiter = ',', default_values_t = ["LSBP", "AR", "TVP-AR", "SV-AR", "TVPSV-AR", "T-AR", "QR"].map(String::from))]
    pub models: Vec<String>,
    #[arg(long = "C", visible_alias = "components", default_value_t = 5)]
    pub components: usize,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Vb)]
    pub estimator: EstimatorArg,
    /// Share of the sample in the first estimation window.
    #[arg(long, default_value_t = 0.5)]
    pub start_fraction: f64,
    /// Periods added between vintages.
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    #[arg(long, default_value_t = mixrisk::eval::DEFAULT_LB_LAGS)]
    pub lb_lags: usize,
    #[arg(long, default_value = "AR")]
    pub baseline: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record failed fits and keep going.
    #[arg(long)]
    pub continue_on_error: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    #[arg(long, default_value_t = 6)]
    pub c_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
