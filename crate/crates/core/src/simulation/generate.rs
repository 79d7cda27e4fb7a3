//! Data generation for the simulation study and within-study association
//! estimation from the generated patient records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::association::{frank_binomial_mle, mix3, table_of};
use crate::copula::BernoulliPairTable;
use crate::data::{to_log_or, BetweenStudyState, StudyRecord};
use crate::special::inv_logit;

use super::ScenarioConfig;

/// Per-patient binary pairs of one study, kept per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyIpd {
    pub ctrl: Vec<(bool, bool)>,
    pub trt: Vec<(bool, bool)>,
}

/// One generated dataset plus the latent truth that produced it.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub records: Vec<StudyRecord>,
    pub truth: BetweenStudyState,
    pub ipd: Vec<StudyIpd>,
    /// Frank dependence used on the Bernoulli scale, both arms.
    pub theta_gen: f64,
}

fn bvn_draw(rng: &mut ChaCha8Rng, m1: f64, m2: f64, s1: f64, s2: f64, rho: f64) -> (f64, f64) {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    (m1 + s1 * z1, m2 + s2 * (rho * z1 + (1.0 - rho * rho).sqrt() * z2))
}

fn draw_arm_size(rng: &mut ChaCha8Rng, m: f64) -> u64 {
    let z: f64 = rng.sample(StandardNormal);
    let n = (m + 5.0 * z).round();
    (n.max(2.0)) as u64
}

/// Generate one replication's dataset: heterogeneous arm sizes, correlated
/// baselines and true effects, and per-patient Bernoulli pairs coupled by a
/// Frank copula on both arms.
pub fn generate_dataset(cfg: &ScenarioConfig, rep_index: usize) -> GeneratedData {
    let theta = cfg.theta_gen();
    generate_with_theta(cfg, rep_index, theta)
}

pub(super) fn generate_with_theta(
    cfg: &ScenarioConfig,
    rep_index: usize,
    theta: f64,
) -> GeneratedData {
    let mut rng = ChaCha8Rng::seed_from_u64(mix3(cfg.seed, cfg.scenario_key(), rep_index as u64));
    let t = &cfg.truth;
    let n_studies = cfg.n_studies;

    let mut records = Vec::with_capacity(n_studies);
    let mut ipd = Vec::with_capacity(n_studies);
    let mut delta1 = Vec::with_capacity(n_studies);
    let mut delta2 = Vec::with_capacity(n_studies);
    let mut mu1 = Vec::with_capacity(n_studies);
    let mut mu2 = Vec::with_capacity(n_studies);

    for i in 0..n_studies {
        let n_ctrl = draw_arm_size(&mut rng, cfg.m);
        let n_trt = draw_arm_size(&mut rng, cfg.m);
        let (m1, m2) = bvn_draw(&mut rng, cfg.eta, cfg.eta, t.s1, t.s2, t.rho_baseline);
        let (de1, de2) = bvn_draw(&mut rng, t.d1, t.d2, t.tau1, t.tau2, t.rho_b);

        let p = [
            inv_logit(m1),
            inv_logit(m2),
            inv_logit(m1 + de1),
            inv_logit(m2 + de2),
        ];
        let ctrl_table = BernoulliPairTable::new(p[0], p[1], theta);
        let trt_table = BernoulliPairTable::new(p[2], p[3], theta);

        let draw_arm = |rng: &mut ChaCha8Rng, n: u64, table: &BernoulliPairTable<f64>| {
            (0..n).map(|_| table.sample(rng)).collect::<Vec<_>>()
        };
        let ctrl = draw_arm(&mut rng, n_ctrl, &ctrl_table);
        let trt = draw_arm(&mut rng, n_trt, &trt_table);

        let count = |arm: &[(bool, bool)], which: usize| {
            arm.iter().filter(|&&(a, b)| if which == 0 { a } else { b }).count() as u64
        };
        records.push(
            StudyRecord::new(
                format!("sim{i:02}"),
                n_ctrl,
                count(&ctrl, 0),
                count(&ctrl, 1),
                n_trt,
                count(&trt, 0),
                count(&trt, 1),
            )
            .expect("generated counts are within arm sizes"),
        );
        ipd.push(StudyIpd { ctrl, trt });
        delta1.push(de1);
        delta2.push(de2);
        mu1.push(m1);
        mu2.push(m2);
    }

    let truth = BetweenStudyState {
        d1: t.d1,
        d2: t.d2,
        tau1: t.tau1,
        tau2: t.tau2,
        rho_b: t.rho_b,
        z: 0.5 * ((1.0 + t.rho_b).ln() - (1.0 - t.rho_b).ln()),
        delta1,
        delta2,
        mu1: Some(mu1),
        mu2: Some(mu2),
    };
    GeneratedData { records, truth, ipd, theta_gen: theta }
}

/// Bootstrap estimates of one study's within-study association parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WithinEstimate {
    /// Pearson correlation of patient-resampled log odds ratio pairs.
    pub rho_w: f64,
    /// Frank-Bernoulli MLE for the control arm, averaged over resamples.
    pub theta_ctrl: f64,
    pub theta_trt: f64,
    /// An arm was constant on an outcome; the estimate was recorded as 0.
    pub degenerate: bool,
    /// Some arm's MLE ran into the optimizer bracket.
    pub at_bracket: bool,
}

/// Patient-resampling bootstrap for within-study association: `rho_w` as the
/// Pearson correlation across `b` resampled (continuity-corrected) log-OR
/// pairs, and per-arm Frank dependence as the mean of per-resample MLEs.
pub fn estimate_within_associations(
    ipd: &[StudyIpd],
    b: usize,
    seed: u64,
) -> Vec<WithinEstimate> {
    ipd.iter()
        .enumerate()
        .map(|(i, study)| estimate_one_study(study, b, mix3(seed, i as u64, 0)))
        .collect()
}

fn arm_is_degenerate(arm: &[(bool, bool)]) -> bool {
    let t = table_of(arm);
    let (r1, c1) = (t[0] + t[1], t[0] + t[2]);
    let n = arm.len() as u64;
    r1 == 0 || r1 == n || c1 == 0 || c1 == n
}

fn estimate_one_study(study: &StudyIpd, b: usize, seed: u64) -> WithinEstimate {
    if arm_is_degenerate(&study.ctrl) || arm_is_degenerate(&study.trt) {
        return WithinEstimate {
            rho_w: 0.0,
            theta_ctrl: 0.0,
            theta_trt: 0.0,
            degenerate: true,
            at_bracket: false,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_ctrl = study.ctrl.len();
    let n_trt = study.trt.len();

    let mut ys = Vec::with_capacity(b);
    let mut phis = Vec::with_capacity(b);
    let mut ctrl_pairs: Vec<(u64, u64)> = Vec::with_capacity(b);
    let mut trt_pairs: Vec<(u64, u64)> = Vec::with_capacity(b);

    let mut ctrl_buf: Vec<(bool, bool)> = Vec::with_capacity(n_ctrl);
    let mut trt_buf: Vec<(bool, bool)> = Vec::with_capacity(n_trt);
    for _ in 0..b {
        ctrl_buf.clear();
        ctrl_buf.extend((0..n_ctrl).map(|_| study.ctrl[rng.random_range(0..n_ctrl)]));
        trt_buf.clear();
        trt_buf.extend((0..n_trt).map(|_| study.trt[rng.random_range(0..n_trt)]));

        let tc = table_of(&ctrl_buf);
        let tt = table_of(&trt_buf);
        ctrl_pairs.push((tc[0] + tc[1], tc[0] + tc[2]));
        trt_pairs.push((tt[0] + tt[1], tt[0] + tt[2]));
        if let (Some(pc), Some(pt)) = (crate::association::phi_coefficient(tc), crate::association::phi_coefficient(tt)) {
            phis.push(0.5 * (pc + pt));
        }
        let rec = StudyRecord::new(
            "boot",
            n_ctrl as u64,
            tc[0] + tc[1],
            tc[0] + tc[2],
            n_trt as u64,
            tt[0] + tt[1],
            tt[0] + tt[2],
        )
        .expect("bootstrap counts are within arm sizes");
        let s = to_log_or(&rec, 0.0);
        ys.push((s.y1, s.y2));
    }

    // the copula model couples arm-level counts, so the dependence parameter
    // is fitted to the bootstrap count pairs with binomial marginals held at
    // the observed rates (not to the patient-level 2x2 table)
    let rate = |arm: &[(bool, bool)]| {
        let t = table_of(arm);
        let n = arm.len() as f64;
        ((t[0] + t[1]) as f64 / n, (t[0] + t[2]) as f64 / n)
    };
    let (pc1, pc2) = rate(&study.ctrl);
    let (pt1, pt2) = rate(&study.trt);
    let ctrl_mle = frank_binomial_mle(&ctrl_pairs, n_ctrl as u64, pc1, pc2);
    let trt_mle = frank_binomial_mle(&trt_pairs, n_trt as u64, pt1, pt2);

    let use_phi = std::env::var("BIVMETA_RHOW_PHI").is_ok();
    let rho_w = if use_phi {
        (phis.iter().sum::<f64>() / phis.len().max(1) as f64).clamp(-1.0, 1.0)
    } else {
        pearson(&ys).unwrap_or(0.0).clamp(-1.0, 1.0)
    };
    let theta_of = |m: &Option<crate::association::ThetaMle>| m.map(|v| v.theta).unwrap_or(0.0);
    let at_bracket = [&ctrl_mle, &trt_mle]
        .iter()
        .any(|m| m.map(|v| v.at_bracket).unwrap_or(false));
    WithinEstimate {
        rho_w,
        theta_ctrl: theta_of(&ctrl_mle),
        theta_trt: theta_of(&trt_mle),
        degenerate: false,
        at_bracket,
    }
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let (mx, my) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let den = (sxx * syy).sqrt();
    (den > 0.0).then(|| sxy / den)
}

#[cfg(test)]
mod tests {
    use super::super::{Association, ScenarioConfig};
    use super::*;
    use crate::association::phi_coefficient;
    use crate::copula::{spearman_rho, theta_from_spearman};

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig {
            n_studies: 40,
            m: 300.0,
            eta: 0.0,
            assoc: Association::Weak,
            seed: 11,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn counts_match_ipd_and_never_exceed_arm_sizes() {
        let g = generate_dataset(&small_cfg(), 0);
        assert_eq!(g.records.len(), 40);
        for (rec, ipd) in g.records.iter().zip(&g.ipd) {
            assert_eq!(rec.n_ctrl as usize, ipd.ctrl.len());
            assert_eq!(rec.n_trt as usize, ipd.trt.len());
            assert!(rec.r1_ctrl <= rec.n_ctrl && rec.r2_trt <= rec.n_trt);
            let sum = ipd.ctrl.iter().filter(|&&(a, _)| a).count() as u64;
            assert_eq!(sum, rec.r1_ctrl);
            let sum = ipd.trt.iter().filter(|&&(_, b)| b).count() as u64;
            assert_eq!(sum, rec.r2_trt);
        }
        g.truth.validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic_per_replication() {
        let cfg = small_cfg();
        let a = generate_dataset(&cfg, 3);
        let b = generate_dataset(&cfg, 3);
        assert_eq!(a.records, b.records);
        let c = generate_dataset(&cfg, 4);
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn baseline_levels_map_to_event_proportions() {
        // eta = 0 -> ~50%, eta = 3 -> ~95%, eta = 4 -> ~98%
        for (eta, expect, tol) in [(0.0, 0.5, 0.02), (3.0, 0.9526, 0.01), (4.0, 0.982, 0.006)] {
            let cfg = ScenarioConfig { eta, n_studies: 120, ..small_cfg() };
            let g = generate_dataset(&cfg, 0);
            let mean_prop: f64 = g
                .records
                .iter()
                .map(|r| r.r1_ctrl as f64 / r.n_ctrl as f64)
                .sum::<f64>()
                / g.records.len() as f64;
            assert!((mean_prop - expect).abs() < tol, "eta={eta}: {mean_prop}");
        }
    }

    #[test]
    fn within_arm_correlation_tracks_the_association_level() {
        // the dependence parameter is calibrated so the patient pairs reach
        // the labelled Spearman (= phi) target at the baseline proportion
        for (eta, assoc, target) in [
            (0.0, Association::Strong, 0.75),
            (3.0, Association::Strong, 0.75),
            (0.0, Association::Moderate, 0.45),
        ] {
            let cfg = ScenarioConfig { eta, assoc, n_studies: 60, ..small_cfg() };
            let g = generate_dataset(&cfg, 1);
            let mut pooled: Vec<(bool, bool)> = Vec::new();
            for s in &g.ipd {
                pooled.extend_from_slice(&s.ctrl);
            }
            let phi = phi_coefficient(table_of(&pooled)).unwrap();
            assert!(
                (phi - target).abs() < 0.06,
                "eta {eta} {assoc:?}: pooled phi {phi} vs target {target}"
            );
        }
    }

    #[test]
    fn generating_dependence_grows_with_the_event_proportion() {
        let theta_at = |eta: f64| {
            ScenarioConfig { eta, assoc: Association::Strong, ..small_cfg() }.theta_gen()
        };
        let (t0, t3, t4) = (theta_at(0.0), theta_at(3.0), theta_at(4.0));
        assert!(t0 < t3 && t3 < t4, "{t0} {t3} {t4}");
        // at eta = 0 the binary phi target is reached directly
        let phi = BernoulliPairTable::new(0.5f64, 0.5, t0).phi();
        assert!((phi - 0.75).abs() < 1e-6, "phi {phi}");
    }

    #[test]
    fn association_estimates_recover_independence() {
        let cfg = ScenarioConfig { assoc: Association::Weak, n_studies: 6, ..small_cfg() };
        // force theta = 0 regardless of the scenario label
        let g = generate_with_theta(&cfg, 2, 0.0);
        let est = estimate_within_associations(&g.ipd, 400, 5);
        let mean_theta: f64 =
            est.iter().map(|e| e.theta_ctrl + e.theta_trt).sum::<f64>() / (2.0 * est.len() as f64);
        let mean_rho: f64 = est.iter().map(|e| e.rho_w).sum::<f64>() / est.len() as f64;
        assert!(mean_theta.abs() < 0.35, "theta {mean_theta}");
        assert!(mean_rho.abs() < 0.05, "rho {mean_rho}");
    }

    #[test]
    fn association_estimates_recover_the_generating_dependence() {
        // the estimator works on the count scale, so the recovered theta
        // matches the count-level dependence implied by the generating
        // Bernoulli copula, not the Bernoulli theta itself: at large n the
        // counts are near-Gaussian and their Spearman correlation follows
        // from the patient-level Pearson phi
        let target = 0.7;
        let theta_bern = theta_from_spearman(target).unwrap();
         let phi = crate::copula::BernoulliPairTable::new(0.5f64, 0.5, theta_bern).phi();
        let count_spearman = 6.0 / std::f64::consts::PI * (phi / 2.0).asin();
        let theta_counts = theta_from_spearman(count_spearman).unwrap();

        let cfg = ScenarioConfig { n_studies: 4, m: 10_000.0, ..small_cfg() };
        let g = generate_with_theta(&cfg, 7, theta_bern);
        let est = estimate_within_associations(&g.ipd, 60, 6);
        for e in &est {
            assert!(!e.degenerate);
            // the Gaussian-copula bridge is only approximate (the pseudo-MLE
            // projects onto the Frank family), so bracket rather than pin
            assert!(
                e.theta_ctrl > 0.6 * theta_counts && e.theta_ctrl < 0.95 * theta_bern,
                "theta_ctrl {} vs count-scale {theta_counts} (bernoulli {theta_bern})",
                e.theta_ctrl
            );
        }
        let _ = spearman_rho(theta_bern).unwrap();
    }

    #[test]
    fn perfectly_concordant_patients_are_flagged_at_the_bracket() {
        let arm: Vec<(bool, bool)> = (0..200)
            .map(|i| if i % 3 == 0 { (false, false) } else { (true, true) })
            .collect();
        let study = StudyIpd { ctrl: arm.clone(), trt: arm };
        let est = estimate_one_study(&study, 50, 3);
        assert!(est.at_bracket);
        assert!(est.theta_ctrl > 40.0);
    }

    #[test]
    fn constant_arms_short_circuit_to_zero_with_a_flag() {
        let ctrl: Vec<(bool, bool)> = (0..50).map(|i| (true, i % 2 == 0)).collect();
        let trt: Vec<(bool, bool)> = (0..50).map(|i| (i % 2 == 0, i % 3 == 0)).collect();
        let est = estimate_one_study(&StudyIpd { ctrl, trt }, 20, 4);
        assert!(est.degenerate);
        assert_eq!(est.rho_w, 0.0);
        assert_eq!(est.theta_ctrl, 0.0);
    }
}
