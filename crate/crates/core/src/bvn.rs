//! Bivariate normal tail probabilities by adaptive quadrature.
//!
//! The joint detection matrix needs, for every sensor pair, the probability
//! that two correlated zero-mean Gaussian observations both exceed their
//! detection thresholds in magnitude.  Only pairwise (2-D) marginals are ever
//! required, so everything here is built on one primitive: the upper-orthant
//! probability `P(X > h, Y > k)` for a standard bivariate normal with
//! correlation `rho`.
//!
//! The orthant probability is evaluated by adaptive Gauss-Kronrod quadrature
//! of the bivariate density with the inner variable integrated in closed form:
//!
//! ```text
//! P(X > h, Y > k) = ∫_h^∞ phi(x) · Phibar( (k - rho·x) / sqrt(1 - rho²) ) dx
//! ```
//!
//! The integrand is smooth for every `|rho| < 1`; as `|rho| -> 1` it develops
//! a step at `x = k/rho`, which the adaptive subdivision resolves.  The exact
//! degenerate forms are used at `|rho| = 1`.  Absolute accuracy is driven well
//! below the 1e-6 tolerance required of the joint detection matrix.

use statrs::function::erf::erfc;

/// Integration is truncated where the standard normal tail mass drops below
/// 1e-17; contributions beyond are invisible at the accuracy target.
const TAIL_CUTOFF: f64 = 8.5;

/// Absolute tolerance requested from the adaptive quadrature.  Two orders
/// tighter than the 1e-6 contract on joint detection probabilities so that
/// downstream matrix assembly keeps a comfortable margin.
const QUAD_TOL: f64 = 1e-10;

/// Maximum bisection depth; 2^-50 of the initial interval is far below any
/// feature width the integrand can develop for |rho| <= 1 - 1e-15.
const MAX_DEPTH: u32 = 50;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_68;
    (-0.5 * x * x).exp() * FRAC_1_SQRT_2PI
}

/// Standard normal CDF, accurate in both tails (erfc-based).
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal survival function `P(Z > x)`.
#[inline]
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Upper-orthant probability `P(X > h, Y > k)` for standard bivariate normal
/// `(X, Y)` with correlation `rho`.
///
/// # Panics
/// Panics if `rho` is outside `[-1, 1]` or any argument is NaN.
pub fn orthant_upper(h: f64, k: f64, rho: f64) -> f64 {
    assert!(
        (-1.0..=1.0).contains(&rho),
        "correlation {rho} outside [-1, 1]"
    );
    assert!(!h.is_nan() && !k.is_nan(), "NaN orthant bound");

    // Degenerate correlations have exact closed forms; the quadrature path
    // below stays accurate up to |rho| = 1 - 1e-15.
    if rho >= 1.0 - 1e-15 {
        return std_normal_sf(h.max(k));
    }
    if rho <= -1.0 + 1e-15 {
        // Y = -X: the event is h < X < -k.
        return (std_normal_cdf(-k) - std_normal_cdf(h)).max(0.0);
    }

    let lo = h.max(-TAIL_CUTOFF);
    if lo >= TAIL_CUTOFF {
        return 0.0;
    }
    let s = ((1.0 - rho) * (1.0 + rho)).sqrt();
    let integrand = |x: f64| std_normal_pdf(x) * std_normal_sf((k - rho * x) / s);
    let v = adaptive_gk15(&integrand, lo, TAIL_CUTOFF, QUAD_TOL, 0);
    v.clamp(0.0, 1.0)
}

/// Probability that both components exceed their thresholds in magnitude,
/// `P(|X| > a, |Y| > b)`, for standard bivariate normal with correlation
/// `rho` and thresholds `a, b >= 0`.
///
/// The event is the union of the four quadrant cells beyond the thresholds.
/// Point reflection maps the (+,+) cell onto (-,-) and (+,-) onto (-,+), so
/// two orthant evaluations cover all four cells.
///
/// # Panics
/// Panics if `a` or `b` is negative.
pub fn both_exceed_two_sided(a: f64, b: f64, rho: f64) -> f64 {
    assert!(a >= 0.0 && b >= 0.0, "magnitude thresholds must be >= 0");
    let pp = orthant_upper(a, b, rho); // (X > a, Y > b) and (X < -a, Y < -b)
    let pm = orthant_upper(a, b, -rho); // (X > a, Y < -b) and (X < -a, Y > b)
    (2.0 * (pp + pm)).clamp(0.0, 1.0)
}

/// Gauss-Kronrod 15(7) evaluation on `[a, b]`: returns the Kronrod estimate
/// and an error estimate from the embedded Gauss rule.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    // QUADPACK dqk15 abscissae (positive half) and weights.
    const XGK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WGK: [f64; 8] = [
        0.022_935_322_010_529_225,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_18,
        0.140_653_259_715_525_92,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_727_83,
    ];
    const WG: [f64; 4] = [
        0.129_484_966_168_869_93,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_94,
        0.417_959_183_673_469_4,
    ];

    let c = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = half * XGK[i];
        let fsum = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * fsum;
        if i % 2 == 1 {
            gauss += WG[i / 2] * fsum;
        }
    }
    let value = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (value, err)
}

/// Adaptive bisection driver around [`gk15`] with an absolute tolerance that
/// halves with each split.
fn adaptive_gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, e) = gk15(f, a, b);
    if e <= tol || depth >= MAX_DEPTH {
        return v;
    }
    let m = 0.5 * (a + b);
    adaptive_gk15(f, a, m, 0.5 * tol, depth + 1) + adaptive_gk15(f, m, b, 0.5 * tol, depth + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-9;

    /// `P(X > 0, Y > 0) = 1/4 + asin(rho) / (2*pi)` exactly.
    #[test]
    fn orthant_at_origin_matches_arcsine_law() {
        for &rho in &[-0.95_f64, -0.5, -0.1, 0.0, 0.3, 0.6615, 0.9, 0.999] {
            let expected = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
            let got = orthant_upper(0.0, 0.0, rho);
            assert!(
                (got - expected).abs() < EPS,
                "rho={rho}: got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn independent_case_factorizes() {
        for &(h, k) in &[(0.3, 1.2), (-0.7, 2.0), (1.6448, 1.6448), (3.0, -1.0)] {
            let got = orthant_upper(h, k, 0.0);
            let expected = std_normal_sf(h) * std_normal_sf(k);
            assert!(
                (got - expected).abs() < EPS,
                "h={h} k={k}: got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn degenerate_correlations_use_exact_forms() {
        let h = 0.4;
        let k = 1.1;
        assert!((orthant_upper(h, k, 1.0) - std_normal_sf(1.1)).abs() < 1e-15);
        let expected = std_normal_cdf(-k) - std_normal_cdf(h);
        assert!((orthant_upper(h, k, -1.0) - expected.max(0.0)).abs() < 1e-15);
        // Disjoint half-lines under rho = -1.
        assert_eq!(orthant_upper(1.0, 1.0, -1.0), 0.0);
    }

    #[test]
    fn near_degenerate_correlation_stays_continuous() {
        let h = 0.4;
        let k = 1.1;
        let limit = std_normal_sf(1.1);
        for &rho in &[0.999, 0.999_999, 1.0 - 1e-12] {
            let got = orthant_upper(h, k, rho);
            assert!(
                (got - limit).abs() < 2e-3,
                "rho={rho}: got {got}, limit {limit}"
            );
            assert!(got <= limit + EPS, "rho={rho}: exceeded degenerate limit");
        }
        assert!((orthant_upper(h, k, 1.0 - 1e-12) - limit).abs() < 1e-5);
    }

    #[test]
    fn two_sided_event_covers_plane_at_zero_thresholds() {
        for &rho in &[-0.8, 0.0, 0.5, 0.99] {
            let got = both_exceed_two_sided(0.0, 0.0, rho);
            assert!((got - 1.0).abs() < EPS, "rho={rho}: got {got}");
        }
    }

    #[test]
    fn two_sided_matches_independent_product() {
        let a = 1.6448536269514722; // both marginal exceedances = 0.1
        let p = both_exceed_two_sided(a, a, 0.0);
        assert!((p - 0.01).abs() < 1e-8, "got {p}");
    }

    proptest! {
        /// Upper-orthant probability respects the Frechet bounds for the
        /// two marginal events.
        #[test]
        fn orthant_within_frechet_bounds(
            h in -3.0f64..3.0,
            k in -3.0f64..3.0,
            rho in -0.999f64..0.999,
        ) {
            let p = orthant_upper(h, k, rho);
            let ph = std_normal_sf(h);
            let pk = std_normal_sf(k);
            prop_assert!(p <= ph.min(pk) + EPS);
            prop_assert!(p >= (ph + pk - 1.0).max(0.0) - EPS);
        }

        /// Symmetry in the two coordinates.
        #[test]
        fn orthant_is_symmetric(
            h in -3.0f64..3.0,
            k in -3.0f64..3.0,
            rho in -0.999f64..0.999,
        ) {
            let a = orthant_upper(h, k, rho);
            let b = orthant_upper(k, h, rho);
            prop_assert!((a - b).abs() < EPS);
        }

        /// The four quadrant cells plus the complementary bands partition the
        /// plane: P(|X|>a, |Y|>b) + P(|X|<=a) + P(|X|>a, |Y|<=b) = 1.
        #[test]
        fn two_sided_complement_is_consistent(
            a in 0.0f64..3.0,
            b in 0.0f64..3.0,
            rho in -0.999f64..0.999,
        ) {
            let both = both_exceed_two_sided(a, b, rho);
            // P(|X|>a) = 2*sf(a); P(|X|>a, |Y|<=b) = P(|X|>a) - both.
            let px = 2.0 * std_normal_sf(a);
            let py = 2.0 * std_normal_sf(b);
            // Inclusion-exclusion for the union of the two exceedances.
            let union = px + py - both;
            prop_assert!(union <= 1.0 + EPS);
            prop_assert!(both <= px.min(py) + EPS);
            prop_assert!(both >= (px + py - 1.0).max(0.0) - EPS);
        }
    }
}
