//! Copula model: the two counts of each study arm are modelled jointly by a
//! Frank copula with binomial marginals, so within-study association enters
//! through the dependence parameters `theta_ctrl, theta_trt`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::copula::binom_frank_ln_pmf;
use crate::data::{ArmDependence, DependenceSource, StudyRecord};
use crate::mcmc::{McmcError, SamplerConfig, Target};
use crate::special::inv_logit;

use super::params::{ParamLayout, ParamVector};
use super::{
    affected_terms_for, between_term, fit_target, global_prior_term, FitOutput, ModelError,
    PriorSpec,
};

/// Whether dependence parameters are fixed per study or sampled as one shared
/// pair under informative priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaMode {
    Fixed,
    Sampled,
}

#[derive(Debug)]
pub struct BrmaBc {
    data: Vec<StudyRecord>,
    dependence: Vec<ArmDependence>,
    priors: PriorSpec,
    layout: ParamLayout,
    mode: ThetaMode,
    floor_hits: AtomicU64,
}

impl BrmaBc {
    /// Build the model. Every study needs a dependence entry: either all
    /// fixed (per-study values, as estimated from patient data) or all
    /// carrying one common informative prior, in which case a single
    /// `(theta_ctrl, theta_trt)` pair is sampled and shared across studies.
    pub fn new(
        data: Vec<StudyRecord>,
        dependence: Vec<ArmDependence>,
        priors: PriorSpec,
    ) -> Result<Self, ModelError> {
        priors.validate()?;
        if dependence.len() != data.len() {
            return Err(ModelError::DependenceLengthMismatch {
                expected: data.len(),
                found: dependence.len(),
            });
        }

        let mut priors = priors;
        let mode = if data.is_empty() {
            if priors.theta_prior.is_some() {
                ThetaMode::Sampled
            } else {
                ThetaMode::Fixed
            }
        } else {
            let prior_of = |d: &ArmDependence| match d.source {
                DependenceSource::Fixed => None,
                DependenceSource::InformativePrior { ctrl, trt } => Some((ctrl, trt)),
            };
            match prior_of(&dependence[0]) {
                None => {
                    if dependence.iter().any(|d| prior_of(d).is_some()) {
                        return Err(ModelError::InvalidDependence {
                            detail: "dependence sources must be all fixed or all informative"
                                .into(),
                        });
                    }
                    ThetaMode::Fixed
                }
                Some(first) => {
                    if dependence.iter().any(|d| prior_of(d) != Some(first)) {
                        return Err(ModelError::InvalidDependence {
                            detail: "sampled dependence requires one common prior across studies"
                                .into(),
                        });
                    }
                    priors.theta_prior = Some(first);
                    ThetaMode::Sampled
                }
            }
        };
        if mode == ThetaMode::Sampled && priors.theta_prior.is_none() {
            return Err(ModelError::InvalidPrior {
                detail: "sampled dependence requires theta priors".into(),
            });
        }

        let layout = ParamLayout::new(data.len(), true, mode == ThetaMode::Sampled);
        Ok(Self { data, dependence, priors, layout, mode, floor_hits: AtomicU64::new(0) })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn mode(&self) -> ThetaMode {
        self.mode
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    /// Evaluations that fell back to the log-pmf floor since the last reset.
    pub fn floor_hits(&self) -> u64 {
        self.floor_hits.load(Ordering::Relaxed)
    }

    pub fn reset_floor_hits(&self) {
        self.floor_hits.store(0, Ordering::Relaxed);
    }

    pub fn log_post(&self, params: &ParamVector) -> f64 {
        assert_eq!(params.layout, self.layout);
        self.log_density(&params.values)
    }

    pub fn fit(&self, config: &SamplerConfig) -> Result<FitOutput, McmcError> {
        self.reset_floor_hits();
        let mut out = fit_target(self, config)?;
        out.floor_hits = Some(self.floor_hits());
        Ok(out)
    }

    fn cell_ln(&self, r1: u64, r2: u64, p1: f64, p2: f64, n1: u64, n2: u64, theta: f64) -> f64 {
        match binom_frank_ln_pmf(r1, r2, p1, p2, n1, n2, theta) {
            Ok((l, floored)) => {
                if floored {
                    self.floor_hits.fetch_add(1, Ordering::Relaxed);
                }
                l
            }
            // four-term cancellation beyond tolerance: treat as an empty cell
            Err(_) => {
                self.floor_hits.fetch_add(1, Ordering::Relaxed);
                crate::copula::LN_PMF_FLOOR
            }
        }
    }

    pub(crate) fn within_term(&self, x: &[f64], i: usize) -> f64 {
        let rec = &self.data[i];
        let (theta_ctrl, theta_trt) = match self.mode {
            ThetaMode::Fixed => (self.dependence[i].theta_ctrl, self.dependence[i].theta_trt),
            ThetaMode::Sampled => (x[self.layout.theta_ctrl()], x[self.layout.theta_trt()]),
        };
        let mu1 = x[self.layout.mu1(i)];
        let mu2 = x[self.layout.mu2(i)];
        let de1 = x[self.layout.delta1(i)];
        let de2 = x[self.layout.delta2(i)];
        self.cell_ln(
            rec.r1_ctrl,
            rec.r2_ctrl,
            inv_logit(mu1),
            inv_logit(mu2),
            rec.n_ctrl,
            rec.outcome2_n_ctrl(),
            theta_ctrl,
        ) + self.cell_ln(
            rec.r1_trt,
            rec.r2_trt,
            inv_logit(mu1 + de1),
            inv_logit(mu2 + de2),
            rec.n_trt,
            rec.outcome2_n_trt(),
            theta_trt,
        )
    }
}

impl Target for BrmaBc {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn param_names(&self) -> Vec<String> {
        self.layout.names()
    }

    fn blocks(&self) -> Vec<Vec<usize>> {
        self.layout.blocks()
    }

    fn num_terms(&self) -> usize {
        1 + 2 * self.layout.n_studies
    }

    fn term(&self, term: usize, x: &[f64]) -> f64 {
        let n = self.layout.n_studies;
        if term == 0 {
            global_prior_term(&self.priors, &self.layout, x)
        } else if term <= n {
            between_term(&self.priors, &self.layout, x, term - 1)
        } else {
            self.within_term(x, term - n - 1)
        }
    }

    fn affected_terms(&self, block: usize) -> Vec<usize> {
        affected_terms_for(&self.layout, block, self.mode == ThetaMode::Sampled)
    }

    fn global_update_repeats(&self) -> usize {
        // with fixed dependence the global block avoids the copula terms
        // entirely; with a sampled pair every repeat pays for them
        match self.mode {
            ThetaMode::Fixed => 6,
            ThetaMode::Sampled => 3,
        }
    }

    fn scaling_moves(&self) -> Vec<crate::mcmc::ScalingMove> {
        super::brma_ib::tau_scaling_moves(&self.layout)
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        self.layout.constrain(x, self.priors.tau_upper)
    }
}

/// Log-posterior of the copula model at one parameter point.
pub fn brma_bc_logpost(
    params: &ParamVector,
    data: &[StudyRecord],
    dependence: &[ArmDependence],
    priors: &PriorSpec,
) -> Result<f64, ModelError> {
    let model = BrmaBc::new(data.to_vec(), dependence.to_vec(), priors.clone())?;
    assert_eq!(params.layout, model.layout);
    Ok(model.log_density(&params.values))
}
