//! Normal-approximation model: bivariate normal within-study likelihood on
//! log odds ratios with known covariance.
//!
//! Because the within-study level is Gaussian, the per-study effects have a
//! closed-form conditional given the global parameters. Fitting therefore
//! samples the five global parameters against the collapsed likelihood
//! `y_i ~ N(d, Sigma_w_i + Sigma_b)` and draws the study effects exactly from
//! their conditional afterwards, which mixes far better than random-walk
//! updates on the joint hierarchy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::association::mix3;
use crate::data::LogOrSummary;
use crate::mcmc::{run_chains, summarize, ChainOutput, DrawMatrix, McmcError, SamplerConfig, Target};

use super::params::{ParamLayout, ParamVector, D1, D2, T1, T2, Z};
use super::{
    between_term, bvn_ln_pdf, global_prior_term, FitOutput, ModelError, PriorSpec, TAU_FLOOR,
};

#[derive(Debug, Clone)]
pub struct Brma {
    data: Vec<LogOrSummary>,
    priors: PriorSpec,
    layout: ParamLayout,
}

impl Brma {
    /// Build the model, validating the within-study covariances up front.
    pub fn new(data: Vec<LogOrSummary>, priors: PriorSpec) -> Result<Self, ModelError> {
        priors.validate()?;
        for (i, s) in data.iter().enumerate() {
            if !(s.var1 > 0.0 && s.var2 > 0.0) {
                return Err(ModelError::InvalidVariance { study: i });
            }
            if s.rho_w.abs() >= 1.0 {
                return Err(ModelError::SingularWithinCovariance { study: i, rho_w: s.rho_w });
            }
        }
        let layout = ParamLayout::new(data.len(), false, false);
        Ok(Self { data, priors, layout })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    /// Joint log-posterior of globals and study effects.
    pub fn log_post(&self, params: &ParamVector) -> f64 {
        assert_eq!(params.layout, self.layout);
        self.log_density_hierarchical(&params.values)
    }

    pub(crate) fn log_density_hierarchical(&self, x: &[f64]) -> f64 {
        let mut lp = global_prior_term(&self.priors, &self.layout, x);
        for i in 0..self.data.len() {
            lp += between_term(&self.priors, &self.layout, x, i);
            let s = &self.data[i];
            lp += bvn_ln_pdf(
                s.y1,
                s.y2,
                x[self.layout.delta1(i)],
                x[self.layout.delta2(i)],
                s.var1,
                s.var2,
                s.rho_w,
            );
        }
        lp
    }

    /// Sample the collapsed posterior of the global parameters, then draw the
    /// study effects exactly from their Gaussian conditional per retained
    /// draw. The augmentation stream is seeded from `(config.seed, chain)`,
    /// so outputs stay bit-reproducible.
    pub fn fit(&self, config: &SamplerConfig) -> Result<FitOutput, McmcError> {
        let marginal = MarginalBrma { model: self };
        let chains = run_chains(&marginal, config)?;
        let n = self.data.len();
        let dim = 5 + 2 * n;
        let augmented: Vec<ChainOutput> = chains
            .into_iter()
            .enumerate()
            .map(|(ci, ch)| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix3(config.seed, 0xde17a, ci as u64));
                let mut data = Vec::with_capacity(ch.draws.rows() * dim);
                for row in 0..ch.draws.rows() {
                    let globals = ch.draws.row(row);
                    data.extend_from_slice(globals);
                    for s in &self.data {
                        let (de1, de2) = sample_delta_conditional(&mut rng, globals, s);
                        data.push(de1);
                        data.push(de2);
                    }
                }
                ChainOutput {
                    draws: DrawMatrix::from_raw(data, dim),
                    accept_rate: ch.accept_rate,
                    scales: ch.scales,
                }
            })
            .collect();
        let names = self.layout.names();
        let summaries = summarize(&augmented, &names);
        Ok(FitOutput { summaries, chains: augmented, param_names: names, floor_hits: None })
    }

    fn between_cov(&self, constrained_globals: &[f64]) -> (f64, f64, f64) {
        let tau1 = constrained_globals[T1].max(TAU_FLOOR);
        let tau2 = constrained_globals[T2].max(TAU_FLOOR);
        (tau1 * tau1, tau2 * tau2, constrained_globals[Z])
    }

    /// Collapsed per-study log-likelihood at constrained-scale globals.
    fn marginal_study_term(&self, constrained_globals: &[f64], i: usize) -> f64 {
        let s = &self.data[i];
        let (t1sq, t2sq, rho_b) = self.between_cov(constrained_globals);
        let s11 = s.var1 + t1sq;
        let s22 = s.var2 + t2sq;
        let s12 = s.rho_w * (s.var1 * s.var2).sqrt() + rho_b * (t1sq * t2sq).sqrt();
        let rho = s12 / (s11 * s22).sqrt();
        bvn_ln_pdf(s.y1, s.y2, constrained_globals[D1], constrained_globals[D2], s11, s22, rho)
    }
}

/// Collapsed five-parameter view used for sampling.
struct MarginalBrma<'a> {
    model: &'a Brma,
}

impl Target for MarginalBrma<'_> {
    fn dim(&self) -> usize {
        5
    }

    fn param_names(&self) -> Vec<String> {
        ParamLayout::new(0, false, false).names()
    }

    fn num_terms(&self) -> usize {
        1 + self.model.data.len()
    }

    fn term(&self, term: usize, x: &[f64]) -> f64 {
        let global_layout = ParamLayout::new(0, false, false);
        if term == 0 {
            global_prior_term(&self.model.priors, &global_layout, x)
        } else {
            let c = global_layout.constrain(x, self.model.priors.tau_upper);
            self.model.marginal_study_term(&c, term - 1)
        }
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        ParamLayout::new(0, false, false).constrain(x, self.model.priors.tau_upper)
    }
}

/// Draw `(delta1_i, delta2_i)` from its exact conditional given constrained
/// globals and the study's observed summary: with `A = Sigma_w^-1` and
/// `B = Sigma_b^-1`, the conditional is `N(V (A y + B d), V)`,
/// `V = (A + B)^-1`.
fn sample_delta_conditional(
    rng: &mut ChaCha8Rng,
    constrained_globals: &[f64],
    s: &LogOrSummary,
) -> (f64, f64) {
    let inv2x2 = |v11: f64, v12: f64, v22: f64| {
        let det = v11 * v22 - v12 * v12;
        (v22 / det, -v12 / det, v11 / det)
    };
    let tau1 = constrained_globals[T1].max(TAU_FLOOR);
    let tau2 = constrained_globals[T2].max(TAU_FLOOR);
    let rho_b = constrained_globals[Z];
    let (d1, d2) = (constrained_globals[D1], constrained_globals[D2]);

    let w12 = s.rho_w * (s.var1 * s.var2).sqrt();
    let (a11, a12, a22) = inv2x2(s.var1, w12, s.var2);
    let b12 = rho_b * tau1 * tau2;
    let (b11, bx12, b22) = inv2x2(tau1 * tau1, b12, tau2 * tau2);

    let (p11, p12, p22) = (a11 + b11, a12 + bx12, a22 + b22);
    let (v11, v12, v22) = inv2x2(p11, p12, p22);

    let r1 = a11 * s.y1 + a12 * s.y2 + b11 * d1 + bx12 * d2;
    let r2 = a12 * s.y1 + a22 * s.y2 + bx12 * d1 + b22 * d2;
    let m1 = v11 * r1 + v12 * r2;
    let m2 = v12 * r1 + v22 * r2;

    // lower Cholesky of V
    let l11 = v11.sqrt();
    let l21 = v12 / l11;
    let l22 = (v22 - l21 * l21).max(0.0).sqrt();
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    (m1 + l11 * z1, m2 + l21 * z1 + l22 * z2)
}

/// Log-posterior of the normal-approximation model at one parameter point.
pub fn brma_logpost(
    params: &ParamVector,
    data: &[LogOrSummary],
    priors: &PriorSpec,
) -> Result<f64, ModelError> {
    let model = Brma::new(data.to_vec(), priors.clone())?;
    assert_eq!(params.layout, model.layout);
    Ok(model.log_density_hierarchical(&params.values))
}
