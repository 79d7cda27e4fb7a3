//! Bayesian bivariate random-effects meta-analysis of binary outcomes.
//!
//! Three models over two correlated binary endpoints are provided, all sharing
//! the same between-studies hierarchy (bivariate normal true effects with
//! heterogeneity parameters and a between-studies correlation):
//!
//! - [`models::Brma`] — normal approximation on the log odds ratio scale,
//!   with known within-study variances and correlation;
//! - [`models::BrmaIb`] — exact independent binomial within-study likelihoods
//!   on a logit link;
//! - [`models::BrmaBc`] — joint within-study likelihood built from a Frank
//!   copula with binomial marginals, capturing within-study association
//!   through the copula dependence parameter.
//!
//! Inference runs on a self-contained adaptive random-walk Metropolis sampler
//! ([`mcmc`]), with rank-normalized split R-hat and bulk effective sample
//! size diagnostics. The [`simulation`] module generates correlated binary
//! individual patient data through the same copula machinery and scores the
//! three models on bias, coverage and RMSE; [`association`] builds informative
//! priors for within-study association parameters from external cohort rates
//! via pseudo individual patient data and a double bootstrap.
//!
//! The numerical kernel ([`real`], [`special`], [`copula`]) is generic over
//! the scalar type via `num-traits`; the statistical pipeline instantiates it
//! at `f64`. Concrete aliases for the generic copula types are exported at
//! the crate root.

pub mod association;
pub mod copula;
pub mod data;
pub mod mcmc;
pub mod models;
pub mod real;
pub mod simulation;
pub mod special;

pub use data::{ArmDependence, DependenceSource, LogOrSummary, PosteriorSummary, StudyRecord};

/// Frank copula over `f64`, the precision used by the fitting pipeline.
pub type FrankCopula = copula::FrankCopula<f64>;
/// Discrete joint pmf with binomial marginals over `f64`.
pub type BinomFrankPmf = copula::BinomFrankPmf<f64>;
/// Coupled Bernoulli-pair sampler over `f64`.
pub type BernoulliPairTable = copula::BernoulliPairTable<f64>;
