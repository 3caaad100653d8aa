//! Shared statistical primitives: standard normal quantile and CDF, sample
//! percentiles, and a one-sample Kolmogorov-Smirnov test against N(0, 1).

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is well-defined")
}

/// Standard normal CDF, computed through the complementary error function
/// so it stays accurate to machine precision well into the tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile; `p` must lie strictly inside (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Parameter(format!(
            "quantile level must be in (0, 1), got {p}"
        )));
    }
    let mut z = standard_normal().inverse_cdf(p);
    // The library inverts by rational approximation, which is only good to
    // about 1e-9; two Newton corrections against the analytic CDF tighten
    // the result to full double precision.
    for _ in 0..2 {
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf <= f64::MIN_POSITIVE {
            break;
        }
        z -= (normal_cdf(z) - p) / pdf;
    }
    Ok(z)
}

/// Linear-interpolation sample percentile (the common "type 7" rule) of an
/// ascending-sorted slice at probability `p` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
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

/// One-sample Kolmogorov-Smirnov test against the standard normal.
#[derive(Debug, Clone, Copy)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Computes the KS statistic `sup_x |F_n(x) - Phi(x)|` and its asymptotic
/// p-value from the Kolmogorov distribution of `sqrt(n) * D`.
pub fn ks_test_standard_normal(xs: &[f64]) -> Result<KsTest> {
    if xs.is_empty() {
        return Err(Error::Parameter("KS test needs at least one value".into()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal_cdf(x);
        d = d.max(cdf - i as f64 / nf);
        d = d.max((i + 1) as f64 / nf - cdf);
    }
    let lambda = nf.sqrt() * d;
    Ok(KsTest {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
        n,
    })
}

/// Survival function `P(K > lambda)` of the Kolmogorov distribution.
///
/// Uses the alternating tail series for large arguments and the
/// theta-function form of the CDF for small ones, where the tail series
/// converges too slowly.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        let mut cdf = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            cdf += (-m * m * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut p = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            if term < 1e-300 {
                break;
            }
            p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        }
        p.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    #[test]
    fn quantile_hits_pinned_values() {
        assert!((normal_quantile(0.975).unwrap() - 1.959963984540054).abs() < 1e-12);
        assert!((normal_quantile(0.75).unwrap() - 0.6744897501960817).abs() < 1e-10);
        assert!(normal_quantile(0.5).unwrap().abs() < 1e-14);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn cdf_and_quantile_are_inverse() {
        for &p in &[0.01, 0.2, 0.5, 0.9, 0.999] {
            let z = normal_quantile(p).unwrap();
            assert!((normal_cdf(z) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&xs, 0.0), 1.0);
        assert_eq!(percentile_sorted(&xs, 1.0), 4.0);
        assert!((percentile_sorted(&xs, 0.5) - 2.5).abs() < 1e-15);
        assert!((percentile_sorted(&xs, 1.0 / 3.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ks_statistic_for_a_point_mass_is_exact() {
        // ECDF jumps from 0 to 1 at c, so D = max(Phi(c), 1 - Phi(c)).
        for &c in &[-1.3, 0.0, 0.4, 2.2] {
            let xs = vec![c; 50];
            let t = ks_test_standard_normal(&xs).unwrap();
            let expected = normal_cdf(c).max(1.0 - normal_cdf(c));
            assert!((t.statistic - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ks_p_value_is_roughly_uniform_under_the_null() {
        // Feed genuine standard normal samples; the rejection rate at
        // alpha = 0.05 should be close to 5 percent.
        let mut rejections = 0;
        let runs = 400;
        for seed in 0..runs {
            let mut rng = Rng64::seed_from(1000 + seed);
            let xs: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
            let t = ks_test_standard_normal(&xs).unwrap();
            if t.p_value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / runs as f64;
        assert!(rate < 0.10, "rejection rate {rate}");
        assert!(rate > 0.005, "rejection rate {rate}");
    }

    #[test]
    fn ks_rejects_a_shifted_sample() {
        let mut rng = Rng64::seed_from(9);
        let xs: Vec<f64> = (0..500).map(|_| rng.normal() + 1.0).collect();
        let t = ks_test_standard_normal(&xs).unwrap();
        assert!(t.p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_survival_matches_known_points() {
        // Classic critical values: P(K > 1.3581) = 0.05, P(K > 1.6276) = 0.01.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 2e-4);
        // Continuity across the series switch at lambda = 1. The survival
        // function has slope about -1.07 there, so nudge by 1e-12 and allow
        // the corresponding spread.
        let below = kolmogorov_survival(1.0 - 1e-12);
        let above = kolmogorov_survival(1.0 + 1e-12);
        assert!((below - above).abs() < 1e-9);
    }
}
