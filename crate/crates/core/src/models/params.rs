//! Unconstrained parameterization shared by the three models.
//!
//! Layout of the unconstrained vector:
//!
//! ```text
//! [z, t1, t2, d1, d2,
//!  delta1[0], delta2[0], ..., delta1[n-1], delta2[n-1],
//!  mu1[0], mu2[0], ..., mu1[n-1], mu2[n-1],      (binomial models only)
//!  theta_ctrl, theta_trt]                        (sampled-dependence only)
//! ```
//!
//! with `rho_b = tanh(z)` and `tau_j = tau_upper * inv_logit(t_j)`. All other
//! coordinates are identity-mapped.

use crate::data::BetweenStudyState;
use crate::special::{inv_logit, logit};

/// Index bookkeeping for the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_studies: usize,
    pub has_mu: bool,
    pub has_theta: bool,
}

pub const Z: usize = 0;
pub const T1: usize = 1;
pub const T2: usize = 2;
pub const D1: usize = 3;
pub const D2: usize = 4;
const GLOBALS: usize = 5;

impl ParamLayout {
    pub fn new(n_studies: usize, has_mu: bool, has_theta: bool) -> Self {
        Self { n_studies, has_mu, has_theta }
    }

    pub fn dim(&self) -> usize {
        GLOBALS
            + 2 * self.n_studies
            + if self.has_mu { 2 * self.n_studies } else { 0 }
            + if self.has_theta { 2 } else { 0 }
    }

    pub fn delta1(&self, study: usize) -> usize {
        GLOBALS + 2 * study
    }

    pub fn delta2(&self, study: usize) -> usize {
        GLOBALS + 2 * study + 1
    }

    pub fn mu1(&self, study: usize) -> usize {
        debug_assert!(self.has_mu);
        GLOBALS + 2 * self.n_studies + 2 * study
    }

    pub fn mu2(&self, study: usize) -> usize {
        debug_assert!(self.has_mu);
        GLOBALS + 2 * self.n_studies + 2 * study + 1
    }

    pub fn theta_ctrl(&self) -> usize {
        debug_assert!(self.has_theta);
        self.dim() - 2
    }

    pub fn theta_trt(&self) -> usize {
        debug_assert!(self.has_theta);
        self.dim() - 1
    }

    /// Constrained-scale parameter names, aligned with `constrain`.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec![
            "rho_b".to_string(),
            "tau1".to_string(),
            "tau2".to_string(),
            "d1".to_string(),
            "d2".to_string(),
        ];
        for i in 0..self.n_studies {
            names.push(format!("delta1[{i}]"));
            names.push(format!("delta2[{i}]"));
        }
        if self.has_mu {
            for i in 0..self.n_studies {
                names.push(format!("mu1[{i}]"));
                names.push(format!("mu2[{i}]"));
            }
        }
        if self.has_theta {
            names.push("theta_ctrl".to_string());
            names.push("theta_trt".to_string());
        }
        names
    }

    /// Update blocks: the global block first, then one block per study.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = Vec::with_capacity(1 + self.n_studies);
        let mut global = vec![Z, T1, T2, D1, D2];
        if self.has_theta {
            global.push(self.theta_ctrl());
            global.push(self.theta_trt());
        }
        blocks.push(global);
        for i in 0..self.n_studies {
            let mut b = vec![self.delta1(i), self.delta2(i)];
            if self.has_mu {
                b.push(self.mu1(i));
                b.push(self.mu2(i));
            }
            blocks.push(b);
        }
        blocks
    }

    /// Map unconstrained coordinates to the constrained scale.
    pub fn constrain(&self, x: &[f64], tau_upper: f64) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim());
        let mut out = x.to_vec();
        out[Z] = x[Z].tanh();
        out[T1] = tau_upper * inv_logit(x[T1]);
        out[T2] = tau_upper * inv_logit(x[T2]);
        out
    }

    /// Inverse of `constrain`.
    pub fn unconstrain(&self, c: &[f64], tau_upper: f64) -> Vec<f64> {
        debug_assert_eq!(c.len(), self.dim());
        let mut out = c.to_vec();
        out[Z] = atanh(c[Z]);
        out[T1] = logit(c[T1] / tau_upper);
        out[T2] = logit(c[T2] / tau_upper);
        out
    }

    /// Structured view of a constrained vector.
    pub fn state(&self, c: &[f64]) -> BetweenStudyState {
        let n = self.n_studies;
        BetweenStudyState {
            rho_b: c[Z],
            z: atanh(c[Z]),
            tau1: c[T1],
            tau2: c[T2],
            d1: c[D1],
            d2: c[D2],
            delta1: (0..n).map(|i| c[self.delta1(i)]).collect(),
            delta2: (0..n).map(|i| c[self.delta2(i)]).collect(),
            mu1: self.has_mu.then(|| (0..n).map(|i| c[self.mu1(i)]).collect()),
            mu2: self.has_mu.then(|| (0..n).map(|i| c[self.mu2(i)]).collect()),
        }
    }
}

fn atanh(x: f64) -> f64 {
    0.5 * ((1.0 + x).ln() - (1.0 - x).ln())
}

/// An unconstrained parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), layout.dim(), "parameter vector length mismatch");
        Self { layout, values }
    }

    pub fn zeros(layout: ParamLayout) -> Self {
        Self { layout, values: vec![0.0; layout.dim()] }
    }

    pub fn constrain(&self, tau_upper: f64) -> Vec<f64> {
        self.layout.constrain(&self.values, tau_upper)
    }

    pub fn from_constrained(layout: ParamLayout, constrained: &[f64], tau_upper: f64) -> Self {
        Self::new(layout, layout.unconstrain(constrained, tau_upper))
    }
}
