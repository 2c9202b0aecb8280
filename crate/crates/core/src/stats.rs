//! Distribution helpers used across the crate.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Left-continuous inverse of the empirical distribution function:
/// the smallest order statistic `v` with `F̂(v) ≥ prob`.
pub fn quantile_inverse_cdf(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let k = (prob.clamp(0.0, 1.0) * n as f64).ceil() as usize;
    sorted[k.clamp(1, n) - 1]
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn chi2_quantile(level: f64, df: usize) -> f64 {
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(level)
}

/// Upper tail `P(χ²_df ≥ x)`.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let d = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    d.sf(x)
}

pub fn normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Difference-quotient estimate of the sparsity `1/f(F⁻¹(τ))` from a sample,
/// using the Hall–Sheather bandwidth at 95% coverage.
pub fn sparsity(sample: &[f64], tau: f64) -> f64 {
    let n = sample.len();
    let sorted = sorted_copy(sample);
    let h = hall_sheather_bandwidth(n, tau, 0.05);
    let lo = (tau - h).max(0.5 / n as f64);
    let hi = (tau + h).min(1.0 - 0.5 / n as f64);
    if hi <= lo {
        return 0.0;
    }
    (quantile_sorted(&sorted, hi) - quantile_sorted(&sorted, lo)) / (hi - lo)
}

pub fn hall_sheather_bandwidth(n: usize, tau: f64, alpha: f64) -> f64 {
    let z = normal_quantile(1.0 - alpha / 2.0);
    let q = normal_quantile(tau);
    let f = normal_pdf(q);
    (n as f64).powf(-1.0 / 3.0) * z.powf(2.0 / 3.0) * (1.5 * f * f / (2.0 * q * q + 1.0)).powf(1.0 / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
        assert_eq!(quantile_inverse_cdf(&s, 0.5), 2.0);
        assert_eq!(quantile_inverse_cdf(&s, 0.51), 3.0);
        assert_eq!(quantile_inverse_cdf(&s, 0.0), 1.0);
    }

    #[test]
    fn chi2_helpers() {
        assert!((chi2_quantile(0.95, 1) - 3.841458820694124).abs() < 1e-9);
        assert!((chi2_sf(3.841458820694124, 1) - 0.05).abs() < 1e-9);
        assert_eq!(chi2_sf(0.0, 4), 1.0);
    }

    #[test]
    fn sparsity_of_uniform_grid() {
        // Uniform(0, 1) has sparsity 1 everywhere.
        let s: Vec<f64> = (0..10_001).map(|i| i as f64 / 10_000.0).collect();
        assert!((sparsity(&s, 0.5) - 1.0).abs() < 1e-3);
    }
}
