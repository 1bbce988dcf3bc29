use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "lrinfer",
    version,
    about = "Rank-robust confidence intervals for group averages of low-rank panel coefficients"
)]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the estimator and report the fit summary.
    Fit(FitArgs),
    /// Estimate a group average with a confidence interval.
    Infer(InferArgs),
    /// Treatment-effect inference from a treated and a control arm.
    Hte(HteArgs),
    /// Monte Carlo coverage experiment from a JSON config.
    Simulate(SimulateArgs),
    /// Check the inputs against the modelling assumptions.
    Diagnose(DiagnoseArgs),
    /// Write one simulated panel with oracle weights as CSV files.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// `X` is a 0/1 observation mask.
    Binary,
    /// `X` is a general real-valued regressor.
    General,
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    /// Outcome matrix (CSV; empty or NaN cells are missing).
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Regressor or mask matrix (CSV). Derived from missing cells if omitted in binary mode.
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "binary")]
    pub mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    /// Loading-side weights W_β (CSV, N rows).
    #[arg(long)]
    pub weights_beta: Option<PathBuf>,
    /// Factor-side weights W_F (CSV, T rows).
    #[arg(long)]
    pub weights_f: Option<PathBuf>,
    /// Unit characteristics (CSV, N rows), expanded into polynomial weights.
    #[arg(long)]
    pub chars_beta: Option<PathBuf>,
    /// Period characteristics (CSV, T rows), expanded into polynomial weights.
    #[arg(long)]
    pub chars_f: Option<PathBuf>,
    /// Polynomial degree for characteristic weights.
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    /// Add a constant column to characteristic weights.
    #[arg(long)]
    pub constant: bool,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Penalty: a positive number or `auto`.
    #[arg(long, default_value = "auto")]
    pub lambda: String,
    /// Constant of the automatic penalty rule.
    #[arg(long, default_value_t = 1.0)]
    pub lambda_const: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Group: JSON object or inline form such as `block:1-5x10-20`, `serial:3`, `cs:4-6`.
    #[arg(long)]
    pub group: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Skip the second debiasing step in the point estimate.
    #[arg(long = "ablate-B2", alias = "ablate-b2")]
    pub ablate_b2: bool,
    /// Force the noise-variance estimate to zero.
    #[arg(long)]
    pub force_sigma0: bool,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Confidence level in (0.5, 1).
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Null value of the group average.
    #[arg(long = "null", default_value_t = 0.0, allow_negative_numbers = true)]
    pub null_value: f64,
    /// Report the upper-tail p-value (alternative: average exceeds the null).
    #[arg(long)]
    pub one_sided: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,
    /// Also write the estimated matrix as CSV.
    #[arg(long)]
    pub m_hat_out: Option<PathBuf>,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,
    #[command(flatten)]
    pub test: TestArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HteArgs {
    /// Outcome matrix holding both arms (with --treatment).
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// 0/1 treatment indicator matrix (with --y).
    #[arg(long)]
    pub treatment: Option<PathBuf>,
    /// Treated-arm outcomes (missing where untreated).
    #[arg(long)]
    pub y1: Option<PathBuf>,
    /// Treated-arm mask.
    #[arg(long)]
    pub x1: Option<PathBuf>,
    /// Control-arm outcomes (missing where treated).
    #[arg(long)]
    pub y0: Option<PathBuf>,
    /// Control-arm mask.
    #[arg(long)]
    pub x0: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long)]
    pub group: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long = "ablate-B2", alias = "ablate-b2")]
    pub ablate_b2: bool,
    #[arg(long)]
    pub force_sigma0: bool,
    #[command(flatten)]
    pub test: TestArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the replication count in the config.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Write per-replication z statistics as CSV.
    #[arg(long)]
    pub z_csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,
    /// Skip the fit; spectrum-based checks are then left empty.
    #[arg(long)]
    pub no_fit: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Data-generating config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving y.csv, x.csv, truth.csv, weights_beta.csv, weights_f.csv.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
