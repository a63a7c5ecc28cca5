//! Scalar normal-distribution functions.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, `0.5 * erfc(-x / sqrt 2)`.
///
/// The complementary error function keeps full relative precision in the
/// lower tail, which the upper-tail form `1 - ...` would not.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Density of `N(mean, sd^2)` at `x`.
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(Error::Domain(format!("normal sd must be positive, got {sd}")));
    }
    Ok(std_normal_pdf((x - mean) / sd) / sd)
}

/// Inverse of [`std_normal_cdf`].
///
/// A rational initial guess (Acklam's approximation) is polished by
/// safeguarded Newton steps on the CDF itself, so the round trip
/// `Φ(Φ⁻¹(p)) = p` holds to the accuracy of the CDF.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "quantile probability must lie in (0, 1), got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work in the lower half and reflect; keeps the result exactly odd.
    let (q, sign) = if p > 0.5 { (1.0 - p, 1.0) } else { (p, -1.0) };
    let mut x = acklam_lower(q);

    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    for _ in 0..50 {
        let f = std_normal_cdf(x) - q;
        if f > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let d = std_normal_pdf(x);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - x).abs() <= 1e-15 * x.abs().max(1.0);
        x = next;
        if done {
            break;
        }
    }
    Ok(-sign * x)
}

/// Acklam's rational approximation for `p <= 0.5`, relative error ~1e-9.
fn acklam_lower(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
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
    const P_LOW: f64 = 0.024_25;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bisect_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if std_normal_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn pdf_values() {
        assert_abs_diff_eq!(std_normal_pdf(0.0), 0.398_942_280_4, epsilon = 1e-10);
        assert_eq!(std_normal_pdf(1.7), std_normal_pdf(-1.7));
        assert_abs_diff_eq!(std_normal_pdf(3.0), 0.004_431_848_4, epsilon = 1e-10);
    }

    #[test]
    fn cdf_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_abs_diff_eq!(std_normal_cdf(1.645), 0.95, epsilon = 1e-4);
        let tail = std_normal_pdf(8.0) / 8.0;
        assert!(std_normal_cdf(-8.0) < tail);
        assert!(std_normal_cdf(-8.0) < 1e-15);
        for i in -80..=80 {
            let x = i as f64 * 0.1;
            assert_abs_diff_eq!(std_normal_cdf(x) + std_normal_cdf(-x), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn cdf_lower_tail_relative_accuracy() {
        // Mills-ratio asymptotic series to five terms as the reference.
        for &x in &[6.0_f64, 7.0, 8.0] {
            let z2 = 1.0 / (x * x);
            let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2.powi(3) + 105.0 * z2.powi(4)
                - 945.0 * z2.powi(5);
            let reference = std_normal_pdf(x) / x * series;
            let rel = (std_normal_cdf(-x) - reference).abs() / reference;
            // the truncated series itself is only good to ~1e-4 at x = 6
            assert!(rel < 2e-4 * (6.0 / x).powi(12), "x={x} rel={rel}");
        }
    }

    #[test]
    fn quantile_values() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(std_normal_quantile(0.95).unwrap(), 1.6449, epsilon = 1e-4);
        let oracle = bisect_quantile(0.75);
        assert_abs_diff_eq!(oracle, 0.674_49, epsilon = 1e-5);
        assert_abs_diff_eq!(std_normal_quantile(0.75).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn quantile_domain_errors() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(std_normal_quantile(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn quantile_round_trip_and_antisymmetry() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let x = std_normal_quantile(p).unwrap();
            assert!((std_normal_cdf(x) - p).abs() <= 1e-10, "p={p}");
            let y = std_normal_quantile(1.0 - p).unwrap();
            assert!((x + y).abs() <= 1e-12, "p={p}: {x} vs {y}");
        }
        for &p in &[1e-12, 1e-6, 0.001, 0.999_999] {
            let x = std_normal_quantile(p).unwrap();
            let rel = (std_normal_cdf(x) - p).abs() / p;
            assert!(rel < 1e-9, "p={p}");
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        let n = 20_001;
        let h = 20.0 / (n - 1) as f64;
        let mut s = 0.0;
        for j in 0..n {
            let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            s += w * std_normal_pdf(-10.0 + j as f64 * h);
        }
        assert_abs_diff_eq!(s * h, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn normal_pdf_general() {
        assert_abs_diff_eq!(normal_pdf(0.0, 0.0, 1.0).unwrap(), 0.398_942_280_4, epsilon = 1e-10);
        assert_abs_diff_eq!(normal_pdf(2.0, 2.0, 5.0).unwrap(), 0.079_788_456_1, epsilon = 1e-10);
        assert_abs_diff_eq!(normal_pdf(1.0, 0.0, 2.0).unwrap(), 0.176_032_663_4, epsilon = 1e-10);
        assert!(normal_pdf(0.0, 0.0, 0.0).is_err());
        assert!(normal_pdf(0.0, 0.0, -1.0).is_err());
    }
}
