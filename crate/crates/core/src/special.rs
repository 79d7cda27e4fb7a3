//! Generic special functions backing the copula and likelihood kernels:
//! log-gamma, the regularized incomplete beta, binomial pmf/cdf and the
//! logit link pair.

use crate::real::Real;

/// Natural log of the gamma function, Lanczos approximation (g = 7, n = 9).
///
/// Accurate to roughly thirteen significant digits over the range used here
/// (binomial coefficients for trial counts up to a few thousand).
pub fn ln_gamma<R: Real>(x: R) -> R {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = R::lit(0.5);
    if x < half {
        // reflection for the left half-plane
        let pi = R::lit(std::f64::consts::PI);
        return pi.ln() - (pi * x).sin().ln() - ln_gamma(R::one() - x);
    }
    let x = x - R::one();
    let mut acc = R::lit(COEFFS[0]);
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += R::lit(c) / (x + R::from_count(i as u64));
    }
    let g = R::lit(7.5);
    let t = x + g;
    R::lit(0.918_938_533_204_672_7) + (x + half) * t.ln() - t + acc.ln()
}

/// `ln B(a, b)`.
pub fn ln_beta<R: Real>(a: R, b: R) -> R {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `ln C(n, k)`.
pub fn ln_choose<R: Real>(n: u64, k: u64) -> R {
    debug_assert!(k <= n);
    ln_gamma(R::from_count(n + 1)) - ln_gamma(R::from_count(k + 1)) - ln_gamma(R::from_count(n - k + 1))
}

/// Regularized incomplete beta function `I_x(a, b)` via the Lentz continued
/// fraction, with the symmetry switch at `x = (a+1)/(a+b+2)`.
pub fn beta_reg<R: Real>(a: R, b: R, x: R) -> R {
    debug_assert!(x >= R::zero() && x <= R::one());
    if x <= R::zero() {
        return R::zero();
    }
    if x >= R::one() {
        return R::one();
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p()).exp();
    if x < (a + R::one()) / (a + b + R::lit(2.0)) {
        front * beta_cf(a, b, x) / a
    } else {
        R::one() - front * beta_cf(b, a, R::one() - x) / b
    }
}

fn beta_cf<R: Real>(a: R, b: R, x: R) -> R {
    let tiny = R::lit(1e-300);
    let eps = R::lit(1e-16);
    let qab = a + b;
    let qap = a + R::one();
    let qam = a - R::one();
    let mut c = R::one();
    let mut d = R::one() - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = d.recip();
    let mut h = d;
    for m in 1..=300u64 {
        let mf = R::from_count(m);
        let m2 = R::from_count(2 * m);
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = R::one() + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = R::one() + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        h = h * d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = R::one() + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = R::one() + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        let del = d * c;
        h = h * del;
        if (del - R::one()).abs() < eps {
            break;
        }
    }
    h
}

/// Binomial log-pmf `ln P(X = r)` for `X ~ Bin(p, n)`.
pub fn binom_ln_pmf<R: Real>(r: u64, n: u64, p: R) -> R {
    debug_assert!(r <= n);
    if p <= R::zero() {
        return if r == 0 { R::zero() } else { R::neg_infinity() };
    }
    if p >= R::one() {
        return if r == n { R::zero() } else { R::neg_infinity() };
    }
    ln_choose::<R>(n, r) + R::from_count(r) * p.ln() + R::from_count(n - r) * (-p).ln_1p()
}

/// Binomial pmf.
pub fn binom_pmf<R: Real>(r: u64, n: u64, p: R) -> R {
    binom_ln_pmf(r, n, p).exp()
}

/// Binomial CDF `P(X <= k)` for `X ~ Bin(p, n)`, with `k = -1` allowed as the
/// empty lower tail. Direct summation for `n <= 50`, the regularized
/// incomplete beta identity `I_{1-p}(n-k, k+1)` otherwise.
pub fn binom_cdf<R: Real>(k: i64, n: u64, p: R) -> R {
    if k < 0 {
        return R::zero();
    }
    let k = k as u64;
    if k >= n {
        return R::one();
    }
    if p <= R::zero() {
        return R::one();
    }
    if p >= R::one() {
        return R::zero();
    }
    if n <= 50 {
        let mut acc = R::zero();
        for j in 0..=k {
            acc += binom_pmf(j, n, p);
        }
        if acc > R::one() {
            R::one()
        } else {
            acc
        }
    } else {
        beta_reg(R::from_count(n - k), R::from_count(k + 1), R::one() - p)
    }
}

/// Log-odds of a probability in (0, 1).
pub fn logit<R: Real>(p: R) -> R {
    p.ln() - (-p).ln_1p()
}

/// Inverse logit, evaluated stably on both tails.
pub fn inv_logit<R: Real>(x: R) -> R {
    if x >= R::zero() {
        (R::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
pub fn softplus<R: Real>(x: R) -> R {
    x.max(R::zero()) + (-x.abs()).exp().ln_1p()
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9). Used for rank normalization in the diagnostics.
pub fn inv_norm_cdf<R: Real>(p: R) -> R {
    debug_assert!(p > R::zero() && p < R::one());
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = R::lit(0.02425);
    let p_high = R::one() - p_low;
    let poly = |cs: &[f64], x: R| cs.iter().fold(R::zero(), |acc, &c| acc * x + R::lit(c));
    if p < p_low {
        let q = (R::lit(-2.0) * p.ln()).sqrt();
        poly(&C, q) / (poly(&D, q) * q + R::one())
    } else if p <= p_high {
        let q = p - R::lit(0.5);
        let r = q * q;
        q * poly(&A, r) / (poly(&B, r) * r + R::one())
    } else {
        let q = (R::lit(-2.0) * (-p).ln_1p()).sqrt();
        -poly(&C, q) / (poly(&D, q) * q + R::one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_matches_known_values() {
        assert_relative_eq!(ln_gamma(1.0f64), 0.0, epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(2.0f64), 0.0, epsilon = 1e-13);
        // Gamma(0.5) = sqrt(pi)
        assert_relative_eq!(ln_gamma(0.5f64), 0.5 * std::f64::consts::PI.ln(), epsilon = 1e-13);
        // Gamma(11) = 10!
        assert_relative_eq!(ln_gamma(11.0f64), (3_628_800.0f64).ln(), epsilon = 1e-13);
    }

    #[test]
    fn ln_gamma_cross_checked_against_statrs() {
        for &x in &[0.1, 0.73, 1.0, 3.5, 17.0, 101.5, 350.0, 1201.0] {
            assert_relative_eq!(
                ln_gamma(x),
                statrs::function::gamma::ln_gamma(x),
                max_relative = 1e-12,
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn beta_reg_cross_checked_against_statrs() {
        for &(a, b, x) in &[
            (2.0, 3.0, 0.4),
            (0.5, 0.5, 0.1),
            (82.0, 171.0, 0.32),
            (300.0, 12.0, 0.98),
            (10.0, 340.0, 0.02),
        ] {
            assert_relative_eq!(
                beta_reg(a, b, x),
                statrs::function::beta::beta_reg(a, b, x),
                max_relative = 1e-11
            );
        }
    }

    #[test]
    fn binom_cdf_matches_frozen_high_precision_values() {
        // 50-digit reference evaluations of I_{1-p}(n-k, k+1)
        assert_relative_eq!(binom_cdf(170, 252, 0.68f64), 0.45061767002693737888, max_relative = 1e-12);
        assert_relative_eq!(binom_cdf(220, 252, 0.88f64), 0.39464056031555534121, max_relative = 1e-12);
        assert_relative_eq!(binom_cdf(5, 350, 0.02f64), 0.29812683521796818149, max_relative = 1e-12);
        assert_relative_eq!(binom_cdf(340, 350, 0.98f64), 0.16744559482383710168, max_relative = 1e-12);
        assert_relative_eq!(binom_cdf(25, 50, 0.5f64), 0.55613758632960852424, max_relative = 1e-12);
    }

    #[test]
    fn binom_cdf_direct_and_beta_paths_agree_near_the_switch() {
        // n = 50 sums directly, n = 51 goes through the incomplete beta
        for &p in &[0.02, 0.3, 0.5, 0.9, 0.98] {
            for k in [0i64, 10, 25, 49] {
                let direct: f64 = (0..=k as u64).map(|j| binom_pmf(j, 50, p)).sum();
                assert_relative_eq!(binom_cdf(k, 50, p), direct.min(1.0), epsilon = 1e-14);
                let beta = beta_reg(50.0 - k as f64, k as f64 + 1.0, 1.0 - p);
                assert_relative_eq!(binom_cdf(k, 50, p), beta, max_relative = 1e-10, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn binom_cdf_edge_cases() {
        assert_eq!(binom_cdf(-1, 10, 0.5f64), 0.0);
        assert_eq!(binom_cdf(10, 10, 0.5f64), 1.0);
        assert_eq!(binom_cdf(3, 10, 0.0f64), 1.0);
        assert_eq!(binom_cdf(3, 10, 1.0f64), 0.0);
    }

    #[test]
    fn binom_ln_pmf_closed_form() {
        // ln C(10,5) + 10 ln 0.5
        let expect = (252.0f64).ln() + 10.0 * (0.5f64).ln();
        assert_relative_eq!(binom_ln_pmf(5, 10, 0.5f64), expect, epsilon = 1e-12);
        assert_eq!(binom_ln_pmf(1, 10, 0.0f64), f64::NEG_INFINITY);
        assert_eq!(binom_ln_pmf(0, 10, 0.0f64), 0.0);
    }

    #[test]
    fn softplus_tracks_the_naive_form() {
        for &x in &[-40.0f64, -3.0, 0.0, 2.5, 30.0] {
            assert_relative_eq!(softplus(x), (1.0f64 + x.exp()).ln(), max_relative = 1e-14);
        }
        assert_eq!(softplus(800.0f64), 800.0);
        assert_eq!(softplus(-800.0f64), 0.0);
    }

    #[test]
    fn logit_pair_inverts() {
        for &p in &[1e-12, 1e-4, 0.3, 0.5, 0.9999, 1.0 - 1e-12] {
            assert_relative_eq!(inv_logit(logit(p)), p, max_relative = 1e-12);
        }
        assert_relative_eq!(inv_logit(-745.0f64), 0.0, epsilon = 1e-300);
        assert_relative_eq!(inv_logit(745.0f64), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn inv_norm_cdf_matches_statrs_quantiles() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-8, 0.001, 0.025, 0.31, 0.5, 0.76, 0.975, 0.999, 1.0 - 1e-8] {
            assert_relative_eq!(inv_norm_cdf(p), n.inverse_cdf(p), epsilon = 2e-8);
        }
    }

    #[test]
    fn kernel_is_usable_at_f32() {
        let c: f32 = binom_cdf(3, 10, 0.5f32);
        assert!((c - 0.171_875).abs() < 1e-5);
        assert!((inv_logit(0.0f32) - 0.5).abs() < 1e-7);
    }
}
