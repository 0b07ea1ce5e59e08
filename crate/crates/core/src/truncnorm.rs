//! Tail-safe Gaussian masses and selective p-values for a centered normal
//! restricted to a union of intervals.
//!
//! Everything is computed as log-probabilities. Same-sign segments are
//! measured from the far side through the log survival function, so masses
//! of segments tens of standard deviations out stay finite and relatively
//! accurate instead of cancelling to zero.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

use libm::{erf, erfc};

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalUnion};

/// ln(sqrt(2 pi))
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Above this the survival function comes from the Mills-ratio continued
/// fraction instead of `erfc`.
const CF_CUTOFF: f64 = 20.0;

/// Segments with `w * (lo + w / 2)` below this are integrated directly.
const NARROW_SEGMENT: f64 = 0.05;

/// log P(N(0,1) > x).
pub fn log_sf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < 0.0 {
        // sf(x) = 1 - sf(-x); log1p keeps the tiny complement.
        return (-log_sf(-x).exp()).ln_1p();
    }
    if x < CF_CUTOFF {
        return (0.5 * erfc(x * FRAC_1_SQRT_2)).ln();
    }
    // sf(x) = phi(x) / (x + 1/(x + 2/(x + 3/(x + ...))))
    let mut t = x;
    for k in (1..=80).rev() {
        t = x + k as f64 / t;
    }
    -0.5 * x * x - LN_SQRT_2PI - t.ln()
}

/// log P(N(0,1) <= x).
pub fn log_cdf(x: f64) -> f64 {
    log_sf(-x)
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
pub fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp_m1()).ln()
}

/// `ln(sum(exp(v)))`, exact `-inf` for an empty or all-`-inf` input.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// log P(lo <= N(0, sigma^2) <= hi). Empty ranges give `-inf`.
pub fn log_gauss_mass(lo: f64, hi: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    let (l, h) = (lo / sigma, hi / sigma);
    if !(l < h) {
        return f64::NEG_INFINITY;
    }
    if l >= 0.0 {
        same_sign_log_mass(l, h)
    } else if h <= 0.0 {
        same_sign_log_mass(-h, -l)
    } else {
        // Straddles zero: both erf terms are non-negative, no cancellation.
        (0.5 * (erf(h * FRAC_1_SQRT_2) + erf(-l * FRAC_1_SQRT_2))).ln()
    }
}

/// Mass of `[l, h]` with `0 <= l < h`.
fn same_sign_log_mass(l: f64, h: f64) -> f64 {
    let w = h - l;
    if w.is_finite() && w * (l + 0.5 * w) < NARROW_SEGMENT {
        // phi(l) * int_0^w exp(-l t - t^2 / 2) dt; the integrand is nearly
        // flat so five Gauss-Legendre nodes are exact to rounding.
        const NODES: [(f64, f64); 5] = [
            (0.0, 0.568_888_888_888_888_9),
            (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let half = 0.5 * w;
        let integral: f64 = NODES
            .iter()
            .map(|&(x, wt)| {
                let t = half * (x + 1.0);
                wt * (-(l * t + 0.5 * t * t)).exp()
            })
            .sum::<f64>()
            * half;
        return -0.5 * l * l - LN_SQRT_2PI + integral.ln();
    }
    log_diff_exp(log_sf(l), log_sf(h))
}

/// Two-sided selective p-value `P(|Z| > |z_obs| | Z in region)` for
/// `Z ~ N(0, sigma^2)`.
pub fn two_sided_p(region: &IntervalUnion, z_obs: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !z_obs.is_finite() {
        return Err(Error::InternalInconsistency(format!(
            "two_sided_p needs sigma > 0 and finite z (sigma = {sigma}, z = {z_obs})"
        )));
    }
    if region.distance_to(z_obs) > 1e-9 {
        return Err(Error::ObservationOutsideRegion { z_obs });
    }
    let log_den = log_sum_exp(region.segments().iter().map(|s| log_gauss_mass(s.lo, s.hi, sigma)));
    if log_den == f64::NEG_INFINITY {
        return Err(Error::ZeroDenominator);
    }
    if z_obs == 0.0 {
        return Ok(1.0);
    }
    let t = z_obs.abs();
    let left = Interval::new(f64::NEG_INFINITY, -t);
    let right = Interval::new(t, f64::INFINITY);
    let log_num = log_sum_exp(region.segments().iter().flat_map(|s| {
        [left, right]
            .into_iter()
            .filter_map(move |tail| s.intersect(&tail))
            .map(|iv| log_gauss_mass(iv.lo, iv.hi, sigma))
    }));
    Ok((log_num - log_den).exp().clamp(0.0, 1.0))
}

/// log of the unconditional two-sided p-value `2 P(N(0, sigma^2) > |z|)`.
pub fn naive_log_p(z_obs: f64, sigma: f64) -> f64 {
    if z_obs == 0.0 {
        return 0.0;
    }
    (LN_2 + log_sf(z_obs.abs() / sigma)).min(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn union(segs: &[(f64, f64)]) -> IntervalUnion {
        IntervalUnion::from_intervals(segs.iter().map(|&(l, h)| Interval::new(l, h)).collect(), 0.0)
    }

    fn phi_cdf(x: f64) -> f64 {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }

    #[test]
    fn whole_line_has_unit_mass() {
        assert_eq!(log_gauss_mass(f64::NEG_INFINITY, f64::INFINITY, 1.0), 0.0);
        assert_relative_eq!(log_gauss_mass(0.0, f64::INFINITY, 1.0), 0.5f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(log_gauss_mass(f64::NEG_INFINITY, 0.0, 3.0), 0.5f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn empty_range_is_neg_infinity() {
        assert_eq!(log_gauss_mass(1.0, 1.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn survival_function_branches_join_smoothly() {
        // Reference values of log Q(x) from 30-digit arithmetic.
        let reference = [
            (10.0, -53.231_285_150_512_47),
            (19.999_999_999, -203.917_155_351_047_5),
            (20.0, -203.917_155_371_097_26),
            (25.0, -316.639_408_008_020_26),
            (38.0, -726.557_216_018_820_1),
        ];
        for (x, expected) in reference {
            assert_relative_eq!(log_sf(x), expected, max_relative = 1e-14);
        }
        assert!(log_sf(1e4).is_finite());
        assert_relative_eq!(log_sf(-40.0), 0.0, epsilon = 1e-300);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn log_sf_matches_high_precision_table() {
        // log Q(x) evaluated with 40-digit arithmetic.
        const TABLE: [(f64, f64); 23] = [
            (-6.0, -9.8658764552437573169e-10),
            (-2.5, -0.006229025485860002381),
            (-0.5, -0.36894641528865639307),
            (0.0, -LN_2),
            (0.1, -0.77615459273027332557),
            (0.7, -1.4189677615315315793),
            (1.5, -2.705944400823889807),
            (2.2, -4.2756184470441433921),
            (3.3, -7.6346161480711272938),
            (4.9, -14.551182689355312642),
            (6.1, -21.357498419215557364),
            (7.7, -32.621366909980109912),
            (9.3, -46.405198397388906913),
            (12.5, -81.575967870743883217),
            (15.0, -116.13138484571169524),
            (17.8, -162.22126863342325569),
            (19.5, -194.01696577749749941),
            (21.0, -224.46571583141447131),
            (26.4, -352.67373223534271076),
            (33.3, -558.8703957087615412),
            (39.9, -800.61094201051187462),
            (55.0, -1517.4266020241886656),
            (120.0, -7205.7064997083789644),
        ];
        for (x, expected) in TABLE {
            assert_relative_eq!(log_sf(x), expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn unconditional_p_at_the_quantile() {
        let p = two_sided_p(&IntervalUnion::single(Interval::REAL_LINE), 1.959_964, 1.0).unwrap();
        assert!((p - 0.05).abs() < 1e-6, "p = {p}");
    }

    #[test]
    fn p_is_one_at_the_center() {
        let p = two_sided_p(&IntervalUnion::single(Interval::REAL_LINE), 0.0, 1.0).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(naive_log_p(0.0, 2.0), 0.0);
    }

    #[test]
    fn symmetric_truncation_closed_form() {
        let p = two_sided_p(&union(&[(-2.0, 2.0)]), 1.0, 1.0).unwrap();
        let expected = 2.0 * (phi_cdf(2.0) - phi_cdf(1.0)) / (2.0 * phi_cdf(2.0) - 1.0);
        assert_relative_eq!(p, expected, max_relative = 1e-12);
    }

    #[test]
    fn observation_outside_region_is_rejected() {
        assert!(matches!(two_sided_p(&union(&[(-1.0, 1.0)]), 2.0, 1.0), Err(Error::ObservationOutsideRegion { .. })));
        assert!(matches!(two_sided_p(&union(&[(1.0, 1.0)]), 1.0, 1.0), Err(Error::ZeroDenominator)));
    }

    #[test]
    fn far_tail_segments_give_meaningful_ratios() {
        // Both segments near 30 sigma: direct CDF differences would be 0/0.
        let p = two_sided_p(&union(&[(30.0, 30.5), (31.0, 32.0)]), 30.2, 1.0).unwrap();
        assert!(p > 0.0 && p < 1.0, "p = {p}");
        // Mass beyond 30.2 within [30, 30.5] plus all of [31, 32], over the total.
        let num = log_sum_exp([log_gauss_mass(30.2, 30.5, 1.0), log_gauss_mass(31.0, 32.0, 1.0)]);
        let den = log_sum_exp([log_gauss_mass(30.0, 30.5, 1.0), log_gauss_mass(31.0, 32.0, 1.0)]);
        assert_relative_eq!(p, (num - den).exp(), max_relative = 1e-13);
    }

    #[test]
    fn narrow_segment_matches_density_times_width() {
        let l = 25.0;
        let w: f64 = 1e-9;
        let expected = -0.5 * l * l - LN_SQRT_2PI + w.ln();
        assert_relative_eq!(log_gauss_mass(l, l + w, 1.0), expected, max_relative = 1e-9);
    }

    #[test]
    fn naive_matches_whole_line() {
        for &z in &[0.3, 1.0, 2.5, 7.0, 15.0, 35.0] {
            let p = two_sided_p(&IntervalUnion::single(Interval::REAL_LINE), z, 1.3).unwrap();
            let naive = naive_log_p(z, 1.3).exp();
            assert_relative_eq!(p, naive, max_relative = 1e-12);
        }
    }
}
