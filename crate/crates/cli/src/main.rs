//! Command-line entry point: fit, simulate, elicit and numerical-check
//! workflows with reproducible configuration.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (build ", env!("BUILD_DIGEST"), ")");

#[derive(Debug, Parser)]
#[command(
    name = "bivmeta",
    version = VERSION,
    about = "Bayesian bivariate meta-analysis of binary outcomes",
    disable_help_subcommand = true
)]
struct Cli {
    /// Worker threads for parallel sections (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Brma,
    BrmaIb,
    BrmaBc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Random,
    FromFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    RhoW,
    ThetaCtrl,
    ThetaTrt,
}

#[derive(Debug, Args, Clone)]
struct SamplerArgs {
    /// Number of chains [default: 4].
    #[arg(long)]
    chains: Option<usize>,
    /// Post-warmup draws per chain [default: 5000].
    #[arg(long)]
    iters: Option<usize>,
    /// Adaptation draws per chain [default: 5000].
    #[arg(long)]
    warmup: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model to a dataset and write posterior summaries.
    Fit {
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Dataset CSV (study_id,n_ctrl,r1_ctrl,r2_ctrl,n_trt,r1_trt,r2_trt[,n2_ctrl,n2_trt]).
        #[arg(long)]
        data: PathBuf,
        /// Shared within-study correlation for the normal-approximation model.
        #[arg(long)]
        rho_w: Option<f64>,
        /// Per-study correlations as CSV `study_id,rho_w`.
        #[arg(long, conflicts_with = "rho_w")]
        rho_w_file: Option<PathBuf>,
        /// Fixed control-arm dependence parameter (copula model).
        #[arg(long)]
        theta_a: Option<f64>,
        /// Fixed treatment-arm dependence parameter (copula model).
        #[arg(long)]
        theta_b: Option<f64>,
        /// Informative dependence priors as JSON {"ctrl":{"mean","sd"},"trt":{...}}.
        #[arg(long, conflicts_with_all = ["theta_a", "theta_b"])]
        theta_prior: Option<PathBuf>,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Random seed [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Chain initialization; `from-fit` seeds the copula model from an
        /// independent-binomial fit.
        #[arg(long, value_enum, default_value_t = InitArg::Random)]
        init: InitArg,
        /// Optional CSV dump of raw constrained draws.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// JSON file of defaults merged under the flags (flags win).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run simulation-study scenario cells and write performance tables.
    Simulate {
        /// One cell as "eta=3,assoc=strong,m=300".
        #[arg(long, conflicts_with = "all")]
        scenario: Option<String>,
        /// Run the full 18-cell factorial.
        #[arg(long)]
        all: bool,
        /// Replications per cell [default: 100; the full study used 1000].
        #[arg(long)]
        reps: Option<usize>,
        /// Studies per generated dataset [default: 30].
        #[arg(long)]
        n_studies: Option<usize>,
        /// Patient resamples per study for the association bootstrap
        /// [default: 1000].
        #[arg(long)]
        bootstrap_reps: Option<usize>,
        /// Chains per model fit [default: 2].
        #[arg(long)]
        chains: Option<usize>,
        /// Post-warmup draws per chain [default: 3000].
        #[arg(long)]
        iters: Option<usize>,
        /// Adaptation draws per chain [default: 3000].
        #[arg(long)]
        warmup: Option<usize>,
        /// Random seed [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Elicit an informative prior from cohort evidence by double bootstrap.
    Elicit {
        /// Cohort CSV (cohort_id,n_resp,n_nonresp,rate_resp,rate_nonresp).
        #[arg(long)]
        cohorts: PathBuf,
        #[arg(long, default_value_t = 1000)]
        b_outer: usize,
        #[arg(long, default_value_t = 200)]
        b_inner: usize,
        #[arg(long, value_enum)]
        target: TargetArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSON file (mean, sd, draws).
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert between the Frank dependence parameter and Spearman's rho.
    Spearman {
        #[arg(long, conflicts_with = "rho")]
        theta: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Check normalization and marginal sums of the coupled binomial pmf.
    PmfCheck {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        p1: f64,
        #[arg(long)]
        p2: f64,
        #[arg(long)]
        theta: f64,
    },
    /// Reproduce the bundled case study end to end: elicitation, all three
    /// fits, a side-by-side estimate table, and correlation draws.
    Reproduce {
        /// Dataset CSV (defaults to the bundled leukemia data).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Cohort CSV (defaults to the bundled reconstructed cohorts).
        #[arg(long)]
        cohorts: Option<PathBuf>,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the elicited within-study correlation (sensitivity runs).
        #[arg(long)]
        rho_w: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors mapped onto the exit-code contract: user/validation errors exit 1,
/// numerical failures exit 2.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<bivmeta::data::DataError> for CliError {
    fn from(e: bivmeta::data::DataError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<bivmeta::models::ModelError> for CliError {
    fn from(e: bivmeta::models::ModelError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<bivmeta::mcmc::McmcError> for CliError {
    fn from(e: bivmeta::mcmc::McmcError) -> Self {
        match e {
            bivmeta::mcmc::McmcError::ConfigInvalid { .. } => CliError::User(e.to_string()),
            bivmeta::mcmc::McmcError::InitializationFailed { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<bivmeta::copula::CopulaError> for CliError {
    fn from(e: bivmeta::copula::CopulaError) -> Self {
        match e {
            bivmeta::copula::CopulaError::SpearmanOutOfRange { .. } => {
                CliError::User(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<bivmeta::association::AssociationError> for CliError {
    fn from(e: bivmeta::association::AssociationError) -> Self {
        match e {
            bivmeta::association::AssociationError::TooDegenerate { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::User(format!("json error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
