//! Log-posterior definitions for the three bivariate meta-analysis models
//! over a shared unconstrained parameterization.
//!
//! All three share the between-studies hierarchy: true effects
//! `(delta1_i, delta2_i)` are bivariate normal around `(d1, d2)` with
//! standard deviations `(tau1, tau2)` and correlation `rho_b`, where
//! `rho_b = tanh(z)` with a standard normal prior on `z`, `tau_j` carries a
//! uniform prior on `(0, tau_upper)` (sampled through a logit transform whose
//! Jacobian is part of the posterior), and `d_j` and the baselines `mu_ji`
//! carry wide normal priors. They differ only in the within-study level:
//! a bivariate normal on log odds ratios (known covariance), independent
//! binomials on a logit link, or Frank-coupled binomials.

mod brma;
mod brma_bc;
mod brma_ib;
pub mod params;

pub use brma::{brma_logpost, Brma};
pub use brma_bc::{brma_bc_logpost, BrmaBc, ThetaMode};
pub use brma_ib::{brma_ib_logpost, BrmaIb};
pub use params::{ParamLayout, ParamVector};

use serde::{Deserialize, Serialize};

use crate::data::{PosteriorSummary, ThetaPrior};
use crate::mcmc::{run_chains, summarize, ChainOutput, McmcError, SamplerConfig, Target};
use crate::special::{inv_logit, softplus};

/// Between-studies standard deviations are floored at this value inside the
/// covariance so the matrix stays invertible as `tau -> 0`.
pub const TAU_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_6;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("within-study covariance of study {study} is singular (rho_w = {rho_w})")]
    SingularWithinCovariance { study: usize, rho_w: f64 },
    #[error("within-study variances of study {study} must be positive")]
    InvalidVariance { study: usize },
    #[error("invalid prior specification: {detail}")]
    InvalidPrior { detail: String },
    #[error("dependence parameters required for every study: expected {expected}, found {found}")]
    DependenceLengthMismatch { expected: usize, found: usize },
    #[error("{detail}")]
    InvalidDependence { detail: String },
}

/// Which model a configuration refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Brma,
    BrmaIb,
    BrmaBc,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Brma => "brma",
            ModelKind::BrmaIb => "brma-ib",
            ModelKind::BrmaBc => "brma-bc",
        })
    }
}

/// Prior hyperparameters shared across the models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Prior sd of the mean effects `d1, d2`.
    pub d_sd: f64,
    /// Prior sd of the baselines `mu_ji`.
    pub mu_sd: f64,
    /// Upper bound of the uniform prior on `tau1, tau2`.
    pub tau_upper: f64,
    /// Prior sd of the Fisher-z value behind `rho_b`.
    pub z_sd: f64,
    /// Informative priors for sampled dependence parameters (control arm,
    /// treatment arm).
    pub theta_prior: Option<(ThetaPrior, ThetaPrior)>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { d_sd: 10.0, mu_sd: 10.0, tau_upper: 2.0, z_sd: 1.0, theta_prior: None }
    }
}

impl PriorSpec {
    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        let scales = [
            ("d_sd", self.d_sd),
            ("mu_sd", self.mu_sd),
            ("tau_upper", self.tau_upper),
            ("z_sd", self.z_sd),
        ];
        for (name, v) in scales {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidPrior { detail: format!("{name} must be positive") });
            }
        }
        if let Some((a, b)) = &self.theta_prior {
            if !(a.sd > 0.0 && b.sd > 0.0) {
                return Err(ModelError::InvalidPrior {
                    detail: "theta prior standard deviations must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn norm_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Bivariate normal log-density from the explicit 2x2 inverse.
pub(crate) fn bvn_ln_pdf(
    x1: f64,
    x2: f64,
    m1: f64,
    m2: f64,
    var1: f64,
    var2: f64,
    rho: f64,
) -> f64 {
    let det = var1 * var2 * (1.0 - rho * rho);
    let z1 = x1 - m1;
    let z2 = x2 - m2;
    let q = (z1 * z1 / var1 - 2.0 * rho * z1 * z2 / (var1 * var2).sqrt() + z2 * z2 / var2)
        / (1.0 - rho * rho);
    -LN_2PI - 0.5 * det.ln() - 0.5 * q
}

/// Log-prior of the global block: `z`, both tau transforms (including their
/// Jacobians), the mean effects, and sampled dependence parameters when
/// present.
pub(crate) fn global_prior_term(priors: &PriorSpec, layout: &ParamLayout, x: &[f64]) -> f64 {
    use params::{D1, D2, T1, T2, Z};
    let mut lp = norm_ln_pdf(x[Z], 0.0, priors.z_sd);
    // U(0, upper) density times d tau / dt collapses to ln sig + ln(1 - sig)
    for t in [x[T1], x[T2]] {
        lp -= softplus(t) + softplus(-t);
    }
    lp += norm_ln_pdf(x[D1], 0.0, priors.d_sd) + norm_ln_pdf(x[D2], 0.0, priors.d_sd);
    if layout.has_theta {
        let (pa, pb) = priors
            .theta_prior
            .as_ref()
            .expect("sampled dependence requires theta priors");
        lp += norm_ln_pdf(x[layout.theta_ctrl()], pa.mean, pa.sd);
        lp += norm_ln_pdf(x[layout.theta_trt()], pb.mean, pb.sd);
    }
    lp
}

/// Between-studies term of one study plus its baseline priors when present.
pub(crate) fn between_term(priors: &PriorSpec, layout: &ParamLayout, x: &[f64], study: usize) -> f64 {
    use params::{D1, D2, T1, T2, Z};
    let rho = x[Z].tanh();
    let tau1 = (priors.tau_upper * inv_logit(x[T1])).max(TAU_FLOOR);
    let tau2 = (priors.tau_upper * inv_logit(x[T2])).max(TAU_FLOOR);
    let mut lp = bvn_ln_pdf(
        x[layout.delta1(study)],
        x[layout.delta2(study)],
        x[D1],
        x[D2],
        tau1 * tau1,
        tau2 * tau2,
        rho,
    );
    if layout.has_mu {
        lp += norm_ln_pdf(x[layout.mu1(study)], 0.0, priors.mu_sd);
        lp += norm_ln_pdf(x[layout.mu2(study)], 0.0, priors.mu_sd);
    }
    lp
}

/// Term indices shared by the three models: term 0 is the global prior,
/// terms `1..=n` the per-study between terms, terms `n+1..=2n` the per-study
/// within-study likelihoods.
pub(crate) fn affected_terms_for(layout: &ParamLayout, block: usize, theta_sampled: bool) -> Vec<usize> {
    let n = layout.n_studies;
    if block == 0 {
        let mut t: Vec<usize> = (0..=n).collect();
        if theta_sampled {
            t.extend(n + 1..=2 * n);
        }
        t
    } else {
        let study = block - 1;
        vec![1 + study, 1 + n + study]
    }
}

/// Result of fitting a model: posterior summaries plus the raw chains.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub summaries: Vec<PosteriorSummary>,
    pub chains: Vec<ChainOutput>,
    pub param_names: Vec<String>,
    /// Evaluations that hit the log-pmf floor (copula model only).
    pub floor_hits: Option<u64>,
}

pub(crate) fn fit_target<T: Target + ?Sized>(
    target: &T,
    config: &SamplerConfig,
) -> Result<FitOutput, McmcError> {
    let chains = run_chains(target, config)?;
    let names = target.param_names();
    let summaries = summarize(&chains, &names);
    Ok(FitOutput { summaries, chains, param_names: names, floor_hits: None })
}

/// Build an unconstrained initialization point for `layout` from the
/// posterior summaries of a (possibly simpler) model's fit, matched by
/// parameter name. Coordinates absent from the summaries fall back to the
/// prior means; this is how the copula model is seeded from an
/// independent-binomial fit.
pub fn init_from_summaries(
    layout: &ParamLayout,
    priors: &PriorSpec,
    summaries: &[PosteriorSummary],
) -> Vec<f64> {
    let mut constrained: Vec<f64> = layout
        .names()
        .iter()
        .map(|name| {
            if let Some(s) = summaries.iter().find(|s| &s.parameter == name) {
                return s.mean;
            }
            match name.as_str() {
                "theta_ctrl" => priors.theta_prior.map(|(a, _)| a.mean).unwrap_or(0.0),
                "theta_trt" => priors.theta_prior.map(|(_, b)| b.mean).unwrap_or(0.0),
                _ => 0.0,
            }
        })
        .collect();
    // keep the transforms finite at the bounds
    constrained[params::Z] = constrained[params::Z].clamp(-0.99, 0.99);
    for t in [params::T1, params::T2] {
        constrained[t] = constrained[t].clamp(1e-3, priors.tau_upper - 1e-3);
    }
    layout.unconstrain(&constrained, priors.tau_upper)
}
