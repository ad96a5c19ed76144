use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Circle fitting, KCR bounds and statistical efficiency experiments.
///
/// Exit codes: 0 success, 1 invalid input, 2 degenerate configuration,
/// 3 fit did not converge, 4 verification failure.
#[derive(Debug, Parser)]
#[command(name = "effifit", version, args_override_self = true)]
pub struct Cli {
    /// File of `key = value` lines supplying flags of the chosen command; flags on
    /// the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a circle to the points of a CSV file and write the report as JSON.
    Fit(FitArgs),
    /// Compute the KCR lower bound for a true configuration.
    Kcr(KcrArgs),
    /// Measure the efficiency of fitters by Monte Carlo simulation (CSV, one row per method).
    Simulate(SimulateArgs),
    /// Efficiency over a grid of arc lengths and noise levels.
    Sweep(SweepArgs),
    /// Check the matrix bound D >= B^-1 on random instances.
    VerifyLa(VerifyLaArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpacingArg {
    /// Midpoints of n equal pieces of the arc.
    Cells,
    /// Both arc endpoints included.
    Endpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Cartesian,
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamArg {
    /// Circle center (a, b).
    Center,
    /// Algebraic parameter A = 1/(2R).
    #[value(name = "A", alias = "a")]
    A,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write the result here instead of standard output.
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Seed {
    /// Master seed; falls back to EFFIFIT_SEED, then 1.
    #[arg(long, env = "EFFIFIT_SEED", default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV file with an `x,y` header.
    #[arg(long, short, value_name = "FILE")]
    pub input: PathBuf,
    /// One of olsf, af, pratt, taubin, graf.
    #[arg(long, short, default_value = "olsf")]
    pub method: String,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct KcrArgs {
    /// Arc length in degrees of the sampled unit circle.
    #[arg(long, default_value_t = 360.0, conflicts_with = "input")]
    pub arc_deg: f64,
    #[arg(long, default_value_t = 20, conflicts_with = "input")]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = SpacingArg::Cells)]
    pub spacing: SpacingArg,
    /// True points as CSV (`x,y`); requires --circle.
    #[arg(long, value_name = "FILE", requires = "circle")]
    pub input: Option<PathBuf>,
    /// True circle as `a,b,R`.
    #[arg(long, value_name = "A,B,R", allow_hyphen_values = true)]
    pub circle: Option<String>,
    /// Noise level; scales D_min into the covariance bound C_min.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Also report the covariance factor of this weighted fit: af, pratt or graf.
    #[arg(long)]
    pub weight: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Replay a reference table: 1 full circle, 2 half circle, 3 quarter circle.
    /// Without --sigma-rel every noise level of the table is run.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3), conflicts_with = "arc_deg")]
    pub table: Option<u8>,
    /// Arc length in degrees (default 360).
    #[arg(long)]
    pub arc_deg: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Noise level relative to the radius.
    #[arg(long)]
    pub sigma_rel: Option<f64>,
    #[arg(long, default_value_t = effifit_core::mc::DEFAULT_TRIALS)]
    pub trials: usize,
    /// Comma-separated list (default: the four table methods with --table, else all five).
    #[arg(long)]
    pub methods: Option<String>,
    #[command(flatten)]
    pub seed: Seed,
    #[arg(long, value_enum, default_value_t = NoiseArg::Cartesian)]
    pub noise: NoiseArg,
    #[arg(long, value_enum, default_value_t = SpacingArg::Cells)]
    pub spacing: SpacingArg,
    #[arg(long, value_enum, default_value_t = ParamArg::Center)]
    pub param: ParamArg,
    /// Drop this fraction of the largest squared errors before averaging.
    #[arg(long)]
    pub trim: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Smallest arc in degrees; must be positive.
    #[arg(long, default_value_t = 5.0)]
    pub arc_min: f64,
    #[arg(long, default_value_t = 50.0)]
    pub arc_max: f64,
    /// Noise is `sigma = c * h` with `h` the arc height.
    #[arg(long, default_value_t = 0.01)]
    pub c_min: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c_max: f64,
    /// Grid size as `<arcs>x<c values>`.
    #[arg(long, default_value = "10x10")]
    pub grid: String,
    #[arg(long, default_value = "af,pratt")]
    pub methods: String,
    #[arg(long, value_enum, default_value_t = ParamArg::Center)]
    pub param: ParamArg,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = effifit_core::mc::DEFAULT_TRIALS)]
    pub trials: usize,
    #[command(flatten)]
    pub seed: Seed,
    #[arg(long, value_enum, default_value_t = NoiseArg::Cartesian)]
    pub noise: NoiseArg,
    #[arg(long, value_enum, default_value_t = SpacingArg::Endpoints)]
    pub spacing: SpacingArg,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct VerifyLaArgs {
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[command(flatten)]
    pub seed: Seed,
    /// Replace the proper sets by improper ones (self-test of the checks).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
    #[command(flatten)]
    pub output: Output,
}
