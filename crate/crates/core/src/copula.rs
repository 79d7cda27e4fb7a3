//! Frank copula evaluation, discrete joint pmfs with binomial marginals,
//! Spearman conversion, and coupled Bernoulli sampling.
//!
//! The copula CDF is the only place where numerical care is required: the
//! closed form cancels catastrophically once `theta * min(u, v)` grows, and
//! the plain exponentials overflow for large negative `theta`. Evaluation
//! therefore switches between the `expm1`/`ln_1p` composition of the closed
//! form and a factored tail form that stays accurate out to arbitrarily
//! large `|theta|`.

use rand::Rng;

use crate::real::Real;
use crate::special::{binom_cdf, binom_ln_pmf};

/// `ln(1e-300)`, the floor assigned to zero-mass cells in log-pmf accessors.
pub const LN_PMF_FLOOR: f64 = -690.775_527_898_213_7;

/// Dependence parameter magnitude below which the independence copula is used.
pub const THETA_INDEPENDENCE_EPS: f64 = 1e-8;

/// Most negative rectangle mass accepted as four-term cancellation noise.
pub const RECT_MASS_FLOOR: f64 = -1e-12;

#[derive(Debug, Clone, thiserror::Error)]
pub enum CopulaError {
    #[error(
        "rectangle mass {mass:e} below the {RECT_MASS_FLOOR:e} cancellation floor \
         (F1: [{f1_lo}, {f1_hi}], F2: [{f2_lo}, {f2_hi}], theta = {theta})"
    )]
    NumericalInstability {
        f1_hi: f64,
        f1_lo: f64,
        f2_hi: f64,
        f2_lo: f64,
        theta: f64,
        mass: f64,
    },
    #[error("2-D quadrature left {achieved:e} of unresolved error (target {target:e})")]
    QuadratureNonConvergence { achieved: f64, target: f64 },
    #[error("Spearman correlation {rho} is outside the invertible range |rho| < 0.999")]
    SpearmanOutOfRange { rho: f64 },
}

/// Frank copula CDF `C(u, v; theta)`.
///
/// `theta = 0` (and any `|theta| < 1e-8`) dispatches to the independence
/// copula `u * v`; the result always lies within the Frechet-Hoeffding
/// bounds up to floating-point rounding.
pub fn frank_cdf<R: Real>(u: R, v: R, theta: R) -> R {
    let zero = R::zero();
    let one = R::one();
    let u = u.max(zero).min(one);
    let v = v.max(zero).min(one);
    if u == zero || v == zero {
        return zero;
    }
    if u == one {
        return v;
    }
    if v == one {
        return u;
    }
    if theta.abs() < R::lit(THETA_INDEPENDENCE_EPS) {
        return u * v;
    }
    if theta > zero {
        frank_cdf_pos(u, v, theta)
    } else {
        frank_cdf_neg(u, v, -theta)
    }
}

fn frank_cdf_pos<R: Real>(u: R, v: R, theta: R) -> R {
    let one = R::one();
    let mn = u.min(v);
    let mx = u.max(v);
    if theta * mn <= R::lit(12.0) {
        // closed form: the argument of ln_1p stays well away from -1 here
        let x = (-theta * u).exp_m1() * (-theta * v).exp_m1() / (-theta).exp_m1();
        -x.ln_1p() / theta
    } else {
        // factored tail: C = min - [ln_1p(e) - ln_1p(-exp(-theta))] / theta
        let e = (-theta * (mx - mn)).exp() - (-theta * (one - mn)).exp() - (-theta * mx).exp();
        mn - (e.ln_1p() - (-(-theta).exp()).ln_1p()) / theta
    }
}

/// Negative dependence, evaluated at `s = -theta > 0`.
fn frank_cdf_neg<R: Real>(u: R, v: R, s: R) -> R {
    let zero = R::zero();
    let cap = R::lit(350.0);
    if s * u <= cap && s * v <= cap && s <= R::lit(700.0) {
        let x = (s * u).exp_m1() * (s * v).exp_m1() / s.exp_m1();
        x.ln_1p() / s
    } else {
        let w = u + v - R::one();
        let (base, e) = if w <= zero {
            (zero, (s * w).exp() - (-s * (R::one() - u)).exp() - (-s * (R::one() - v)).exp())
        } else {
            (w, (-s * w).exp() - (-s * u).exp() - (-s * v).exp())
        };
        base + (e.ln_1p() - (-(-s).exp()).ln_1p()) / s
    }
}

/// Probability mass of the rectangle `(F1_lo, F1_hi] x (F2_lo, F2_hi]` under
/// the Frank copula, i.e. the four-term finite difference of the CDF.
///
/// Cancellation noise down to `-1e-12` is clamped to zero; anything more
/// negative is reported as an instability with the offending inputs.
pub fn rect_mass<R: Real>(
    f1_hi: R,
    f1_lo: R,
    f2_hi: R,
    f2_lo: R,
    theta: R,
) -> Result<R, CopulaError> {
    debug_assert!(f1_lo <= f1_hi && f2_lo <= f2_hi);
    let m = frank_cdf(f1_hi, f2_hi, theta) - frank_cdf(f1_lo, f2_hi, theta)
        - frank_cdf(f1_hi, f2_lo, theta)
        + frank_cdf(f1_lo, f2_lo, theta);
    if m >= R::zero() {
        Ok(m)
    } else if m >= R::lit(RECT_MASS_FLOOR) {
        Ok(R::zero())
    } else {
        Err(CopulaError::NumericalInstability {
            f1_hi: f1_hi.to_f64().unwrap_or(f64::NAN),
            f1_lo: f1_lo.to_f64().unwrap_or(f64::NAN),
            f2_hi: f2_hi.to_f64().unwrap_or(f64::NAN),
            f2_lo: f2_lo.to_f64().unwrap_or(f64::NAN),
            theta: theta.to_f64().unwrap_or(f64::NAN),
            mass: m.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// Joint pmf `h(x1, x2)` of two binomial counts coupled by a Frank copula,
/// obtained by finite differences of `C(F1(x1), F2(x2))` with the convention
/// `F(-1) = 0`.
pub fn binom_frank_pmf<R: Real>(
    x1: u64,
    x2: u64,
    p1: R,
    p2: R,
    n1: u64,
    n2: u64,
    theta: R,
) -> Result<R, CopulaError> {
    debug_assert!(x1 <= n1 && x2 <= n2);
    if theta.abs() < R::lit(THETA_INDEPENDENCE_EPS) {
        // the independence copula factorizes exactly; the product form stays
        // accurate in tail cells where differencing the CDFs would cancel
        return Ok((binom_ln_pmf(x1, n1, p1) + binom_ln_pmf(x2, n2, p2)).exp());
    }
    let f1_hi = binom_cdf(x1 as i64, n1, p1);
    let f1_lo = binom_cdf(x1 as i64 - 1, n1, p1);
    let f2_hi = binom_cdf(x2 as i64, n2, p2);
    let f2_lo = binom_cdf(x2 as i64 - 1, n2, p2);
    rect_mass(f1_hi, f1_lo, f2_hi, f2_lo, theta)
}

/// Log joint pmf, evaluated without the detour through probability scale at
/// independence (where it is exactly the sum of the marginal log-pmfs) and
/// floored at `ln(1e-300)` otherwise. The flag reports a floored cell.
pub fn binom_frank_ln_pmf<R: Real>(
    x1: u64,
    x2: u64,
    p1: R,
    p2: R,
    n1: u64,
    n2: u64,
    theta: R,
) -> Result<(R, bool), CopulaError> {
    if theta.abs() < R::lit(THETA_INDEPENDENCE_EPS) {
        return Ok((binom_ln_pmf(x1, n1, p1) + binom_ln_pmf(x2, n2, p2), false));
    }
    let m = binom_frank_pmf(x1, x2, p1, p2, n1, n2, theta)?;
    let floor = R::lit(LN_PMF_FLOOR);
    if m > R::zero() {
        let l = m.ln();
        if l < floor {
            Ok((floor, true))
        } else {
            Ok((l, false))
        }
    } else {
        Ok((floor, true))
    }
}

/// A Frank copula with a fixed dependence parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrankCopula<R> {
    theta: R,
}

impl<R: Real> FrankCopula<R> {
    pub fn new(theta: R) -> Self {
        Self { theta }
    }

    pub fn theta(&self) -> R {
        self.theta
    }

    pub fn cdf(&self, u: R, v: R) -> R {
        frank_cdf(u, v, self.theta)
    }

    pub fn rect_mass(&self, f1_hi: R, f1_lo: R, f2_hi: R, f2_lo: R) -> Result<R, CopulaError> {
        rect_mass(f1_hi, f1_lo, f2_hi, f2_lo, self.theta)
    }
}

/// Joint distribution of `(X1, X2)` with `Xj ~ Bin(pj, nj)` marginals coupled
/// by a Frank copula. Marginal CDF tables are precomputed so full-support
/// scans (normalization and marginal checks) stay cheap.
#[derive(Debug, Clone)]
pub struct BinomFrankPmf<R> {
    n1: u64,
    n2: u64,
    p1: R,
    p2: R,
    theta: R,
    cdf1: Vec<R>,
    cdf2: Vec<R>,
}

impl<R: Real> BinomFrankPmf<R> {
    pub fn new(n1: u64, n2: u64, p1: R, p2: R, theta: R) -> Self {
        assert!(p1 >= R::zero() && p1 <= R::one(), "p1 must lie in [0, 1]");
        assert!(p2 >= R::zero() && p2 <= R::one(), "p2 must lie in [0, 1]");
        let table = |n: u64, p: R| (0..=n).map(|x| binom_cdf(x as i64, n, p)).collect::<Vec<_>>();
        Self { n1, n2, p1, p2, theta, cdf1: table(n1, p1), cdf2: table(n2, p2) }
    }

    pub fn n1(&self) -> u64 {
        self.n1
    }

    pub fn n2(&self) -> u64 {
        self.n2
    }

    pub fn p1(&self) -> R {
        self.p1
    }

    pub fn p2(&self) -> R {
        self.p2
    }

    pub fn theta(&self) -> R {
        self.theta
    }

    fn f1(&self, x: i64) -> R {
        if x < 0 {
            R::zero()
        } else {
            self.cdf1[(x as u64).min(self.n1) as usize]
        }
    }

    fn f2(&self, x: i64) -> R {
        if x < 0 {
            R::zero()
        } else {
            self.cdf2[(x as u64).min(self.n2) as usize]
        }
    }

    /// Cell mass at `(x1, x2)`.
    pub fn pmf(&self, x1: u64, x2: u64) -> Result<R, CopulaError> {
        debug_assert!(x1 <= self.n1 && x2 <= self.n2);
        if self.theta.abs() < R::lit(THETA_INDEPENDENCE_EPS) {
            return Ok(
                (binom_ln_pmf(x1, self.n1, self.p1) + binom_ln_pmf(x2, self.n2, self.p2)).exp()
            );
        }
        rect_mass(
            self.f1(x1 as i64),
            self.f1(x1 as i64 - 1),
            self.f2(x2 as i64),
            self.f2(x2 as i64 - 1),
            self.theta,
        )
    }

    /// Log cell mass, floored at `ln(1e-300)` away from independence. The
    /// flag reports whether the floor was applied.
    pub fn ln_pmf(&self, x1: u64, x2: u64) -> Result<(R, bool), CopulaError> {
        if self.theta.abs() < R::lit(THETA_INDEPENDENCE_EPS) {
            return Ok((
                binom_ln_pmf(x1, self.n1, self.p1) + binom_ln_pmf(x2, self.n2, self.p2),
                false,
            ));
        }
        let m = self.pmf(x1, x2)?;
        if m > R::zero() {
            let l = m.ln();
            let floor = R::lit(LN_PMF_FLOOR);
            if l < floor {
                Ok((floor, true))
            } else {
                Ok((l, false))
            }
        } else {
            Ok((R::lit(LN_PMF_FLOOR), true))
        }
    }

    /// Total-mass defect and worst marginal defects over the full support:
    /// `(|sum - 1|, max |row_sum - Bin(p2)|, max |col_sum - Bin(p1)|)`.
    pub fn normalization_residuals(&self) -> Result<(R, R, R), CopulaError> {
        let mut total = R::zero();
        let mut col_sums = vec![R::zero(); self.n1 as usize + 1];
        let mut worst_row = R::zero();
        for x2 in 0..=self.n2 {
            let mut row = R::zero();
            for x1 in 0..=self.n1 {
                let m = self.pmf(x1, x2)?;
                row += m;
                col_sums[x1 as usize] += m;
                total += m;
            }
            let expect = self.f2(x2 as i64) - self.f2(x2 as i64 - 1);
            worst_row = worst_row.max((row - expect).abs());
        }
        let mut worst_col = R::zero();
        for x1 in 0..=self.n1 {
            let expect = self.f1(x1 as i64) - self.f1(x1 as i64 - 1);
            worst_col = worst_col.max((col_sums[x1 as usize] - expect).abs());
        }
        Ok(((total - R::one()).abs(), worst_row, worst_col))
    }
}

/// Exact 2x2 cell probabilities of a coupled Bernoulli pair, for repeated
/// sampling with fixed `(p1, p2, theta)`.
#[derive(Debug, Clone, Copy)]
pub struct BernoulliPairTable<R> {
    /// Cell probabilities indexed by `(x1, x2)`.
    pub p00: R,
    pub p01: R,
    pub p10: R,
    pub p11: R,
}

impl<R: Real> BernoulliPairTable<R> {
    pub fn new(p1: R, p2: R, theta: R) -> Self {
        assert!(p1 > R::zero() && p1 < R::one(), "p1 must lie in (0, 1)");
        assert!(p2 > R::zero() && p2 < R::one(), "p2 must lie in (0, 1)");
        let one = R::one();
        let p00 = frank_cdf(one - p1, one - p2, theta);
        let p01 = ((one - p1) - p00).max(R::zero());
        let p10 = ((one - p2) - p00).max(R::zero());
        let p11 = (one - p00 - p01 - p10).max(R::zero());
        Self { p00, p01, p10, p11 }
    }

    /// Draw one `(x1, x2)` pair.
    pub fn sample(&self, rng: &mut impl Rng) -> (bool, bool) {
        let u = R::lit(rng.random::<f64>());
        if u < self.p00 {
            (false, false)
        } else if u < self.p00 + self.p01 {
            (false, true)
        } else if u < self.p00 + self.p01 + self.p10 {
            (true, false)
        } else {
            (true, true)
        }
    }

    /// Pearson correlation (phi coefficient) implied by the exact table.
    pub fn phi(&self) -> R {
        let p1 = self.p10 + self.p11;
        let p2 = self.p01 + self.p11;
        let one = R::one();
        (self.p11 - p1 * p2) / (p1 * (one - p1) * p2 * (one - p2)).sqrt()
    }
}

/// Draw a correlated Bernoulli pair from the Frank-coupled 2x2 table.
pub fn sample_bernoulli_pair<R: Real>(
    p1: R,
    p2: R,
    theta: R,
    rng: &mut impl Rng,
) -> (bool, bool) {
    BernoulliPairTable::new(p1, p2, theta).sample(rng)
}

/// Absolute tolerance of the Spearman double integral (the correlation
/// inherits 12x this).
const SPEARMAN_QUAD_TOL: f64 = 8e-8;

/// Spearman's rank correlation of the Frank copula,
/// `rho_S = 12 * int C du dv - 3`, by adaptive 2-D Simpson quadrature.
///
/// Antisymmetry in `theta` is exact by construction: negative arguments are
/// evaluated as `-spearman_rho(-theta)`.
pub fn spearman_rho<R: Real>(theta: R) -> Result<R, CopulaError> {
    if theta.abs() < R::lit(THETA_INDEPENDENCE_EPS) {
        return Ok(R::zero());
    }
    if theta < R::zero() {
        return spearman_rho(-theta).map(|r| -r);
    }
    let integral = quad2d(|u, v| frank_cdf(u, v, theta), R::lit(SPEARMAN_QUAD_TOL))?;
    Ok(R::lit(12.0) * integral - R::lit(3.0))
}

/// Frank dependence parameter matching a Spearman correlation, by bisection
/// on a geometrically expanded bracket. Guarantees
/// `|spearman_rho(theta) - rho_s| < 1e-4`.
pub fn theta_from_spearman<R: Real>(rho_s: R) -> Result<R, CopulaError> {
    let rho = rho_s.to_f64().unwrap_or(f64::NAN);
    if !rho.is_finite() || rho.abs() >= 0.999 {
        return Err(CopulaError::SpearmanOutOfRange { rho });
    }
    if rho_s == R::zero() {
        return Ok(R::zero());
    }
    if rho_s < R::zero() {
        return theta_from_spearman(-rho_s).map(|t| -t);
    }
    let mut lo = R::zero();
    let mut hi = R::one();
    while spearman_rho(hi)? < rho_s {
        lo = hi;
        hi = hi + hi;
    }
    let f_tol = R::lit(5e-5);
    for _ in 0..200 {
        let mid = (lo + hi) * R::lit(0.5);
        let f = spearman_rho(mid)? - rho_s;
        if f.abs() < f_tol {
            return Ok(mid);
        }
        if f < R::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) * R::lit(0.5))
}

/// Adaptive 2-D Simpson quadrature on the unit square to absolute tolerance
/// `tol`. Unresolvable error (depth exhaustion) is accumulated and reported.
fn quad2d<R: Real, F: Fn(R, R) -> R>(f: F, tol: R) -> Result<R, CopulaError> {
    struct State<'a, R, F> {
        f: &'a F,
        unresolved: R,
    }

    fn simpson9<R: Real, F: Fn(R, R) -> R>(f: &F, x0: R, x1: R, y0: R, y1: R) -> R {
        let half = R::lit(0.5);
        let xm = (x0 + x1) * half;
        let ym = (y0 + y1) * half;
        let w = |i: usize| if i == 1 { R::lit(4.0) } else { R::one() };
        let xs = [x0, xm, x1];
        let ys = [y0, ym, y1];
        let mut acc = R::zero();
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in ys.iter().enumerate() {
                acc += w(i) * w(j) * f(x, y);
            }
        }
        acc * (x1 - x0) * (y1 - y0) / R::lit(36.0)
    }

    #[allow(clippy::too_many_arguments)]
    fn cell<R: Real, F: Fn(R, R) -> R>(
        st: &mut State<R, F>,
        x0: R,
        x1: R,
        y0: R,
        y1: R,
        coarse: R,
        tol: R,
        depth: usize,
    ) -> R {
        let half = R::lit(0.5);
        let xm = (x0 + x1) * half;
        let ym = (y0 + y1) * half;
        let s = [
            (x0, xm, y0, ym),
            (xm, x1, y0, ym),
            (x0, xm, ym, y1),
            (xm, x1, ym, y1),
        ]
        .map(|(a, b, c, d)| simpson9(st.f, a, b, c, d));
        let fine = s[0] + s[1] + s[2] + s[3];
        let err = (fine - coarse).abs() / R::lit(15.0);
        if err <= tol || depth >= 24 {
            if depth >= 24 && err > tol {
                st.unresolved += err;
            }
            return fine + (fine - coarse) / R::lit(15.0);
        }
        let quarter_tol = tol * R::lit(0.25);
        let quads = [
            (x0, xm, y0, ym, s[0]),
            (xm, x1, y0, ym, s[1]),
            (x0, xm, ym, y1, s[2]),
            (xm, x1, ym, y1, s[3]),
        ];
        let mut acc = R::zero();
        for (a, b, c, d, sc) in quads {
            acc += cell(st, a, b, c, d, sc, quarter_tol, depth + 1);
        }
        acc
    }

    let mut st = State { f: &f, unresolved: R::zero() };
    let coarse = simpson9(&f, R::zero(), R::one(), R::zero(), R::one());
    let value = cell(&mut st, R::zero(), R::one(), R::zero(), R::one(), coarse, tol, 0);
    if st.unresolved > tol {
        return Err(CopulaError::QuadratureNonConvergence {
            achieved: st.unresolved.to_f64().unwrap_or(f64::NAN),
            target: tol.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(value)
}
