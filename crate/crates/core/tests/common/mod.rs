//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

pub fn rho(tau: f64, s: f64) -> f64 {
    s * (tau - if s < 0.0 { 1.0 } else { 0.0 })
}

/// Minimum check loss over all exact-fit solutions through `q` observations.
/// Singular subsets are skipped.
pub fn vertex_oracle(x: &DMatrix<f64>, y: &[f64], tau: f64) -> f64 {
    let (n, q) = x.shape();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..q).collect();
    loop {
        let xb = DMatrix::from_fn(q, q, |a, c| x[(idx[a], c)]);
        let yb = DVector::from_fn(q, |a, _| y[idx[a]]);
        let det = xb.determinant();
        if det.abs() > 1e-10 {
            if let Some(theta) = xb.lu().solve(&yb) {
                let obj: f64 = (0..n).map(|i| rho(tau, y[i] - x.row(i).transpose().dot(&theta))).sum();
                best = best.min(obj);
            }
        }
        // next combination
        let mut k = q;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if idx[k] < n - q + k {
                idx[k] += 1;
                for m in k + 1..q {
                    idx[m] = idx[m - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Empirical CDF distance against a reference CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov p-value for statistic `d` with sample size `n`
/// (with the Stephens small-sample correction).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for j in 1..200 {
        let j = j as f64;
        let term = 2.0 * (-1.0f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-14 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
