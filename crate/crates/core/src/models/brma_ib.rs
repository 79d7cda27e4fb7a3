//! Independent-binomial model: exact binomial within-study likelihoods on a
//! logit link, ignoring within-study association.

use crate::data::StudyRecord;
use crate::mcmc::{McmcError, SamplerConfig, Target};
use crate::special::{binom_ln_pmf, inv_logit};

use super::params::{ParamLayout, ParamVector};
use super::{
    affected_terms_for, between_term, fit_target, global_prior_term, FitOutput, ModelError,
    PriorSpec,
};

#[derive(Debug, Clone)]
pub struct BrmaIb {
    data: Vec<StudyRecord>,
    priors: PriorSpec,
    layout: ParamLayout,
}

impl BrmaIb {
    pub fn new(data: Vec<StudyRecord>, priors: PriorSpec) -> Result<Self, ModelError> {
        priors.validate()?;
        let layout = ParamLayout::new(data.len(), true, false);
        Ok(Self { data, priors, layout })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn log_post(&self, params: &ParamVector) -> f64 {
        assert_eq!(params.layout, self.layout);
        self.log_density(&params.values)
    }

    pub fn fit(&self, config: &SamplerConfig) -> Result<FitOutput, McmcError> {
        fit_target(self, config)
    }

    pub(crate) fn within_term(&self, x: &[f64], i: usize) -> f64 {
        let rec = &self.data[i];
        let mu1 = x[self.layout.mu1(i)];
        let mu2 = x[self.layout.mu2(i)];
        let de1 = x[self.layout.delta1(i)];
        let de2 = x[self.layout.delta2(i)];
        binom_ln_pmf(rec.r1_ctrl, rec.n_ctrl, inv_logit(mu1))
            + binom_ln_pmf(rec.r1_trt, rec.n_trt, inv_logit(mu1 + de1))
            + binom_ln_pmf(rec.r2_ctrl, rec.outcome2_n_ctrl(), inv_logit(mu2))
            + binom_ln_pmf(rec.r2_trt, rec.outcome2_n_trt(), inv_logit(mu2 + de2))
    }
}

impl Target for BrmaIb {
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
        affected_terms_for(&self.layout, block, false)
    }

    fn global_update_repeats(&self) -> usize {
        // the global block never touches the binomial terms, so extra
        // updates of the slow (z, tau, d) coordinates are nearly free
        6
    }

    fn scaling_moves(&self) -> Vec<crate::mcmc::ScalingMove> {
        tau_scaling_moves(&self.layout)
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        self.layout.constrain(x, self.priors.tau_upper)
    }
}

/// Joint (tau_j, delta_j.) moves across the heterogeneity funnel, shared by
/// the two binomial-likelihood models.
pub(crate) fn tau_scaling_moves(layout: &ParamLayout) -> Vec<crate::mcmc::ScalingMove> {
    use super::params::{D1, D2, T1, T2};
    let n = layout.n_studies;
    if n == 0 {
        return Vec::new();
    }
    vec![
        crate::mcmc::ScalingMove {
            scale_coord: T1,
            anchor_coord: D1,
            group: (0..n).map(|i| layout.delta1(i)).collect(),
        },
        crate::mcmc::ScalingMove {
            scale_coord: T2,
            anchor_coord: D2,
            group: (0..n).map(|i| layout.delta2(i)).collect(),
        },
    ]
}

/// Log-posterior of the independent-binomial model at one parameter point.
pub fn brma_ib_logpost(
    params: &ParamVector,
    data: &[StudyRecord],
    priors: &PriorSpec,
) -> Result<f64, ModelError> {
    let model = BrmaIb::new(data.to_vec(), priors.clone())?;
    assert_eq!(params.layout, model.layout);
    Ok(model.log_density(&params.values))
}
