//! Command-line front end for the nonparametric AFT model.
//!
//! Every command writes into its own output directory and leaves a
//! `manifest.json` describing the inputs (by SHA-256), the effective
//! configuration and the seed.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "npaft", version, about = "Nonparametric AFT models for treatment-effect heterogeneity")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sampler and store posterior draws.
    Fit(FitArgs),
    /// Effect summaries and plot data from stored draws.
    Summarize(SummarizeArgs),
    /// Posterior survival curves for one covariate profile.
    Survcurve(SurvcurveArgs),
    /// Partial dependence of the treatment effect on one covariate.
    Pdp(PdpArgs),
    /// Simulation benchmark.
    Simulate(SimulateArgs),
    /// Weighted K-fold cross-validation, optionally over a hyperparameter grid.
    Crossval(CrossvalArgs),
    /// Calibrate the residual scale prior without fitting.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV with columns time,status,trt,<covariates>.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML covariate schema.
    #[arg(long)]
    pub schema: PathBuf,
}

/// Sampler settings that can be given as flags; they override the config.
#[derive(Debug, Clone, Default, Args)]
pub struct SamplerFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Number of trees J.
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub calibration_draws: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: SamplerFlags,
    /// Keep every retained forest (needed by `pdp` and new profiles).
    #[arg(long)]
    pub retain_forests: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML summary options.
    #[arg(long)]
    pub options: Option<PathBuf>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Training row whose survival curves are reported.
    #[arg(long)]
    pub profile: Option<usize>,
    /// Comma-separated thresholds for the proportion benefiting.
    #[arg(long, allow_hyphen_values = true)]
    pub epsilons: Option<String>,
    /// Data and schema, to rank covariates by their association with the effect.
    #[arg(long, requires = "schema")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SurvcurveArgs {
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training row to use as the profile.
    #[arg(long, conflicts_with = "covariates")]
    pub row: Option<usize>,
    /// Encoded covariate vector, comma-separated; needs retained forests.
    #[arg(long, allow_hyphen_values = true)]
    pub covariates: Option<String>,
    /// Comma-separated positive times; a log-spaced grid when absent.
    #[arg(long)]
    pub times: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub time_points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PdpArgs {
    #[arg(long)]
    pub draws: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Encoded covariate name.
    #[arg(long)]
    pub covariate: String,
    /// Comma-separated grid; evenly spaced over the observed range when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 25)]
    pub grid_points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// TOML with `seed`, `reps`, a `[fit]` table and `[[scenarios]]`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of folds K.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Sweep q in {0.25,0.5,0.9,0.99}, k in {1,2,3}, J in {50,200,400}.
    #[arg(long)]
    pub full_grid: bool,
    #[command(flatten)]
    pub flags: SamplerFlags,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// Rough residual sd; estimated from the data when absent.
    #[arg(long, conflicts_with_all = ["data", "schema"])]
    pub sigma_w: Option<f64>,
    #[arg(long, requires = "schema")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub calibration_draws: Option<usize>,
}

/// Run one parsed command.
pub fn run(cli: Cli) -> CliResult<PathBuf> {
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Summarize(a) => commands::summarize(&a),
        Command::Survcurve(a) => commands::survcurve(&a),
        Command::Pdp(a) => commands::pdp(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Crossval(a) => commands::crossval(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
    }
}
