//! Posterior summarization over pooled post-warmup draws.

use crate::data::PosteriorSummary;

use super::{diagnose, ChainOutput};

/// Linear-interpolation (type 7) quantile of an ascending-sorted slice.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Pooled mean, median, sd and the 95% credible interval per parameter, with
/// split R-hat / bulk ESS attached.
pub fn summarize(chains: &[ChainOutput], param_names: &[String]) -> Vec<PosteriorSummary> {
    assert!(!chains.is_empty());
    let dim = chains[0].draws.dim();
    assert_eq!(param_names.len(), dim, "one name per parameter required");
    let diags = diagnose(chains);

    (0..dim)
        .map(|j| {
            let mut pooled: Vec<f64> = chains.iter().flat_map(|c| c.draws.column(j)).collect();
            pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = pooled.len() as f64;
            let mean = pooled.iter().sum::<f64>() / n;
            let sd = if pooled.len() > 1 {
                (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            PosteriorSummary {
                parameter: param_names[j].clone(),
                mean,
                median: quantile_type7(&pooled, 0.5),
                sd,
                ci_low: quantile_type7(&pooled, 0.025),
                ci_high: quantile_type7(&pooled, 0.975),
                rhat: diags[j].rhat,
                ess: diags[j].ess,
            }
        })
        .collect()
}
