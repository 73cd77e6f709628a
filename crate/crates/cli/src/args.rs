use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Seed used whenever `--seed` is omitted.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(name = "margin-audit", version, about = "Decompose and audit disparities of thresholded predictors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a dataset from a built-in or saved model.
    Simulate(SimulateArgs),
    /// Decompose TV(yhat) into pathway contributions.
    Decompose(DecomposeArgs),
    /// Check a business-necessity policy; exit 0 on SUCCESS, 1 on FAIL.
    Audit(AuditArgs),
    /// Export per-row sample influences.
    Influence(InfluenceArgs),
    /// Ground-truth effects of a model.
    Oracle(OracleArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelName {
    HiringBasic,
    HiringExtended,
    RandomDiscrete,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Built-in model.
    #[arg(long, value_enum, conflicts_with = "model_file")]
    pub model: Option<ModelName>,
    /// Model JSON (e.g. the `.model.json` sidecar written by `simulate`).
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.49)]
    pub p0: f64,
    #[arg(long, default_value_t = 0.51)]
    pub p1: f64,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.45)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 3)]
    pub z_levels: u32,
    #[arg(long, default_value_t = 3)]
    pub w_levels: u32,
    /// Generator seed for random-discrete (defaults to --seed).
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// random-discrete without a direct X -> Y mechanism.
    #[arg(long)]
    pub no_direct: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ThresholdArgs {
    /// Fixed threshold t in (0, 1).
    #[arg(long, conflicts_with = "quantile")]
    pub t: Option<f64>,
    /// Threshold at the q-quantile of the score.
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Use s > t instead of s >= t.
    #[arg(long)]
    pub strict_threshold: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreArg {
    /// Keep the model's true score.
    True,
    /// Replace the score with the frequency fit of y (refit per bootstrap replicate).
    OutcomeFit,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, value_enum, default_value_t = ScoreArg::True)]
    pub score: ScoreArg,
    /// Output CSV; `<stem>.schema.json` and `<stem>.model.json` are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Thm1,
    Cor1,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum NuisanceArg {
    Frequency,
    Logistic,
    Auto,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Schema JSON (defaults to `<stem>.schema.json` next to the data).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    /// Exchange the roles of x0 and x1.
    #[arg(long)]
    pub swap_groups: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EstimationArgs {
    #[arg(long, value_enum, default_value_t = NuisanceArg::Auto)]
    pub nuisance: NuisanceArg,
    /// Pseudo-counts toward the global mean for frequency models.
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    /// Equal-frequency bins for numeric covariates (defaults to the schema's).
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct BootstrapArgs {
    /// Bootstrap replicates.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep the full-sample nuisances in every replicate.
    #[arg(long)]
    pub no_refit: bool,
    /// Write the replicate matrix as CSV.
    #[arg(long)]
    pub replicates_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Thm1)]
    pub mode: ModeArg,
    /// Report JSON (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write `<prefix>.svg` and `<prefix>.csv` bar-chart data.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    /// Policy JSON: {"DE": "none|weak|strong", "IE": ..., "SE": ..., "level": 0.95, "epsilon": ...}.
    #[arg(long)]
    pub policy: PathBuf,
    /// Compare CE(s) with CE(yhat) instead of CE(y).
    #[arg(long)]
    pub strict: bool,
    /// Also audit the reversed transitions.
    #[arg(long)]
    pub mirrored: bool,
    /// Report JSON (stdout when omitted; the text summary then goes to stderr).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InfluenceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    /// y, s, yhat or m (defaults to y when present, else s).
    #[arg(long)]
    pub target: Option<String>,
    /// Influence CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-stratum means of the influences as JSON.
    #[arg(long)]
    pub strata_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    /// Monte Carlo units; exact enumeration when omitted.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Include stratum-level direct effects and their influence limits.
    #[arg(long)]
    pub strata: bool,
    /// Oracle JSON (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
