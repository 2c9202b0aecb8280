//! Check-loss (pinball) minimization over a linear design.
//!
//! The problem `min_θ Σ wᵢ ρ_τ(yᵢ − xᵢᵀθ)` is the linear program
//!
//! ```text
//! min  τ 1ᵀu + (1 − τ) 1ᵀv   s.t.  Xθ + u − v = y,  u, v ≥ 0
//! ```
//!
//! It is solved in two stages. A Mehrotra predictor–corrector interior-point
//! method works on the bounded dual (`Xᵀa = (1 − τ)Xᵀ1`, `0 ≤ a ≤ 1`) and
//! produces a near-optimal θ. A crossover then picks the `q` observations with
//! the smallest residuals as an exact-fit basis and finishes with descent
//! pivots along the edges of the objective until no edge direction decreases
//! it. The result is an exact vertex: `q` zero residuals and a dual certificate
//! `d ∈ [τ − 1, τ]ⁿ` with `Xᵀ(w ⊙ d) = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VcqrError};
use crate::linalg::{independent_columns, select_columns};

/// Tolerance on the duality gap of a returned fit.
pub const OPT_TOL: f64 = 1e-8;

const RANK_TOL: f64 = 1e-9;
const MAX_IPM_ITER: usize = 60;

/// Result of one check-loss minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: f64,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `Σ wᵢ ρ_τ(rᵢ)` over the stored residuals.
    pub objective: f64,
    pub zero_residual_count: usize,
    /// Subgradient of the loss at the solution, one entry per observation.
    pub dual_certificate: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    /// Observations interpolated by the final vertex.
    pub basis: Vec<usize>,
    pub rank: usize,
    pub rank_deficient: bool,
    pub duality_gap: f64,
    pub pivots: usize,
}

impl QuantileFit {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// `‖Xᵀ(w ⊙ d)‖_∞` for the given design.
    pub fn stationarity(&self, design: &DMatrix<f64>) -> f64 {
        let mut g = vec![0.0; design.ncols()];
        for (i, &d) in self.dual_certificate.iter().enumerate() {
            let wd = self.weight(i) * d;
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += wd * design[(i, j)];
            }
        }
        g.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(VcqrError::InvalidArgument(format!(
            "quantile level must lie in (0, 1), got {tau}"
        )))
    }
}

#[inline]
pub(crate) fn rho(tau: f64, s: f64) -> f64 {
    if s < 0.0 {
        s * (tau - 1.0)
    } else {
        s * tau
    }
}

#[inline]
pub(crate) fn phi(tau: f64, s: f64) -> f64 {
    if s > 0.0 {
        tau
    } else if s < 0.0 {
        tau - 1.0
    } else {
        0.0
    }
}

/// `ρ_τ(s) = s (τ − 1{s < 0})`.
pub fn check_loss(tau: f64, s: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(rho(tau, s))
}

/// Derivative of the check loss, with value 0 at the kink.
pub fn check_score(tau: f64, s: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(phi(tau, s))
}

/// Minimizes `Σ wᵢ ρ_τ(yᵢ − xᵢᵀθ)`.
///
/// Dependent columns are dropped (left to right) before solving and their
/// coefficients reported as zero, with `rank_deficient` set.
pub fn solve_quantile(design: &DMatrix<f64>, y: &[f64], tau: f64, weights: Option<&[f64]>) -> Result<QuantileFit> {
    check_tau(tau)?;
    let (n, q) = design.shape();
    if n == 0 || q == 0 {
        return Err(VcqrError::InvalidArgument("empty design".into()));
    }
    if y.len() != n {
        return Err(VcqrError::DimensionMismatch(format!(
            "design has {n} rows but response has {} entries",
            y.len()
        )));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(VcqrError::NonFinite("design".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(VcqrError::NonFinite("response".into()));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(VcqrError::DimensionMismatch(format!(
                "{} weights for {n} observations",
                w.len()
            )));
        }
        if let Some(i) = w.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(VcqrError::InvalidArgument(format!(
                "weight {i} must be positive and finite, got {}",
                w[i]
            )));
        }
    }

    let (xw, yw) = match weights {
        Some(w) => {
            let mut xw = design.clone();
            for (i, &wi) in w.iter().enumerate() {
                xw.row_mut(i).scale_mut(wi);
            }
            let yw: Vec<f64> = y.iter().zip(w).map(|(a, b)| a * b).collect();
            (xw, yw)
        }
        None => (design.clone(), y.to_vec()),
    };

    let cols = independent_columns(&xw, RANK_TOL);
    let rank = cols.len();
    let mut theta = vec![0.0; q];
    let mut basis = Vec::new();
    let mut pivots = 0;
    if rank > 0 {
        let xr = select_columns(&xw, &cols);
        let start = interior_point(&xr, &yw, tau);
        let vertex = crossover(&xr, &yw, tau, &start)?;
        for (k, &c) in cols.iter().enumerate() {
            theta[c] = vertex.theta[k];
        }
        basis = vertex.basis;
        pivots = vertex.pivots;
    }

    let theta_v = DVector::from_column_slice(&theta);
    let fitted = design * &theta_v;
    let mut residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    for &i in &basis {
        residuals[i] = 0.0;
    }
    let objective: f64 = residuals
        .iter()
        .enumerate()
        .map(|(i, &r)| weights.map_or(1.0, |w| w[i]) * rho(tau, r))
        .sum();
    let zero_tol = zero_tolerance(&yw);
    let zero_residual_count = residuals
        .iter()
        .enumerate()
        .filter(|(i, r)| (r.abs() * weights.map_or(1.0, |w| w[*i])) <= zero_tol)
        .count();

    let dual_certificate = certificate(&xw, &residuals, weights, tau, &basis, zero_tol);
    let dual_obj: f64 = dual_certificate.iter().zip(&yw).map(|(d, y)| d * y).sum();

    Ok(QuantileFit {
        tau,
        coefficients: theta,
        residuals,
        objective,
        zero_residual_count,
        dual_certificate,
        weights: weights.map(<[f64]>::to_vec),
        basis,
        rank,
        rank_deficient: rank < q,
        duality_gap: objective - dual_obj,
        pivots,
    })
}

fn zero_tolerance(y: &[f64]) -> f64 {
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    1e-10 * scale.max(f64::MIN_POSITIVE)
}

/// Primal–dual interior point on the bounded dual. Returns a θ estimate; on
/// numerical trouble the best iterate so far is returned, since the crossover
/// does not depend on interior-point accuracy for correctness.
fn interior_point(x: &DMatrix<f64>, y: &[f64], tau: f64) -> Vec<f64> {
    let (n, q) = x.shape();
    let yv = DVector::from_column_slice(y);
    let ones = DVector::from_element(n, 1.0);
    let b = x.tr_mul(&ones) * (1.0 - tau);

    let mut theta = x
        .tr_mul(x)
        .cholesky()
        .map(|c| c.solve(&x.tr_mul(&yv)))
        .unwrap_or_else(|| DVector::zeros(q));
    let r = &yv - x * &theta;
    let mean_abs = r.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let delta = mean_abs.max(1e-8 * (1.0 + yv.amax()));
    let mut a = DVector::from_element(n, 1.0 - tau);
    let mut s = DVector::from_element(n, tau);
    let mut w = r.map(|v| v.max(0.0) + delta);
    let mut z = r.map(|v| (-v).max(0.0) + delta);

    for _ in 0..MAX_IPM_ITER {
        let mu_total = a.dot(&z) + s.dot(&w);
        let primal: f64 = (&yv - x * &theta).iter().map(|&v| rho(tau, v)).sum();
        if mu_total <= 1e-10 * (1.0 + primal) {
            break;
        }
        let r1 = &b - x.tr_mul(&a);
        let r2 = &yv - x * &theta - &w + &z;
        let r3 = DVector::from_element(n, 1.0) - &a - &s;
        let dvec = DVector::from_fn(n, |i, _| 1.0 / (z[i] / a[i] + w[i] / s[i]));
        let mut xd = x.clone();
        for i in 0..n {
            xd.row_mut(i).scale_mut(dvec[i]);
        }
        let m = x.tr_mul(&xd);
        let Some(chol) = m.cholesky() else { break };

        let newton = |r4: &DVector<f64>, r5: &DVector<f64>| {
            let rho_v = DVector::from_fn(n, |i, _| r2[i] - (r5[i] - w[i] * r3[i]) / s[i] + r4[i] / a[i]);
            let rhs = xd.tr_mul(&rho_v) - &r1;
            let dtheta = chol.solve(&rhs);
            let xdt = x * &dtheta;
            let da = DVector::from_fn(n, |i, _| dvec[i] * (rho_v[i] - xdt[i]));
            let ds = &r3 - &da;
            let dz = DVector::from_fn(n, |i, _| (r4[i] - z[i] * da[i]) / a[i]);
            let dw = DVector::from_fn(n, |i, _| (r5[i] - w[i] * ds[i]) / s[i]);
            (dtheta, da, ds, dz, dw)
        };

        let r4 = -a.component_mul(&z);
        let r5 = -s.component_mul(&w);
        let (_, da, ds, dz, dw) = newton(&r4, &r5);
        let ap = step_len(&a, &da).min(step_len(&s, &ds));
        let ad = step_len(&z, &dz).min(step_len(&w, &dw));
        let mu_aff = (&a + &da * ap).dot(&(&z + &dz * ad)) + (&s + &ds * ap).dot(&(&w + &dw * ad));
        let sigma = (mu_aff / mu_total).powi(3).clamp(0.0, 1.0);
        let mu = sigma * mu_total / (2 * n) as f64;

        let r4c = DVector::from_fn(n, |i, _| mu - a[i] * z[i] - da[i] * dz[i]);
        let r5c = DVector::from_fn(n, |i, _| mu - s[i] * w[i] - ds[i] * dw[i]);
        let (dtheta, da, ds, dz, dw) = newton(&r4c, &r5c);
        let ap = (0.99995 * step_len(&a, &da).min(step_len(&s, &ds))).min(1.0);
        let ad = (0.99995 * step_len(&z, &dz).min(step_len(&w, &dw))).min(1.0);
        if !(ap.is_finite() && ad.is_finite()) || dtheta.iter().any(|v| !v.is_finite()) {
            break;
        }
        a += &da * ap;
        s += &ds * ap;
        theta += &dtheta * ad;
        z += &dz * ad;
        w += &dw * ad;
        if ap < 1e-12 && ad < 1e-12 {
            break;
        }
    }
    theta.iter().copied().collect()
}

/// Largest α ≤ 1 keeping `v + α dv ≥ 0`.
fn step_len(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(1.0_f64 / 0.99995, f64::min)
}

struct Vertex {
    theta: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

/// Chooses an exact-fit basis near `start` and pivots to an optimal vertex.
fn crossover(x: &DMatrix<f64>, y: &[f64], tau: f64, start: &[f64]) -> Result<Vertex> {
    let (n, q) = x.shape();
    let theta0 = DVector::from_column_slice(start);
    let r0 = DVector::from_column_slice(y) - x * theta0;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| r0[i].abs().total_cmp(&r0[j].abs()).then(i.cmp(&j)));
    let mut basis = pick_independent_rows(x, &order, 1e-6);
    if basis.len() < q {
        basis = pick_independent_rows(x, &order, 1e-11);
    }
    if basis.len() < q {
        return Err(VcqrError::Numerical(
            "could not find a nonsingular exact-fit basis".into(),
        ));
    }

    let zero_tol = zero_tolerance(y);
    let mut is_basic = vec![false; n];
    let max_pivots = 20 * n + 200;
    for pivots in 0..max_pivots {
        is_basic.iter_mut().for_each(|b| *b = false);
        basis.iter().for_each(|&i| is_basic[i] = true);
        let xb = DMatrix::from_fn(q, q, |a, c| x[(basis[a], c)]);
        let binv = xb
            .lu()
            .try_inverse()
            .ok_or_else(|| VcqrError::Numerical("singular basis during pivoting".into()))?;
        let yb = DVector::from_fn(q, |a, _| y[basis[a]]);
        let theta = &binv * yb;
        let mut res: Vec<f64> = (0..n).map(|i| y[i] - x.row(i).transpose().dot(&theta)).collect();
        for &i in &basis {
            res[i] = 0.0;
        }
        // Edge directions: column j of V is X δ_j with X_B δ_j = e_j.
        let v = x * &binv;

        let mut best: Option<(usize, f64, f64, f64)> = None; // (j, sign, g, normalized g)
        for j in 0..q {
            let mut g_plus = 1.0 - tau;
            let mut g_minus = tau;
            let mut norm = 1.0;
            for i in 0..n {
                if is_basic[i] {
                    continue;
                }
                let vij = v[(i, j)];
                if vij == 0.0 {
                    continue;
                }
                norm += vij.abs();
                g_plus += dir_deriv(tau, res[i], -vij, zero_tol);
                g_minus += dir_deriv(tau, res[i], vij, zero_tol);
            }
            for (sign, g) in [(1.0, g_plus), (-1.0, g_minus)] {
                if g < -1e-10 * norm {
                    let gn = g / norm;
                    if best.is_none_or(|b| gn < b.3) {
                        best = Some((j, sign, g, gn));
                    }
                }
            }
        }
        let Some((j, sign, g, _)) = best else {
            return Ok(Vertex {
                theta: theta.iter().copied().collect(),
                basis,
                pivots,
            });
        };

        // Exact line search along θ + t·sign·δ_j: slopes increase by |v_i|
        // each time a residual crosses zero.
        let mut breaks: Vec<(f64, f64, usize)> = (0..n)
            .filter(|&i| !is_basic[i] && res[i].abs() > zero_tol)
            .filter_map(|i| {
                let vi = sign * v[(i, j)];
                let t = res[i] / vi;
                (vi != 0.0 && t > 0.0).then_some((t, vi.abs(), i))
            })
            .collect();
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut slope = g;
        let mut entering = None;
        for &(_, dv, i) in &breaks {
            slope += dv;
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let entering = entering.ok_or_else(|| VcqrError::Numerical("objective unbounded along an edge".into()))?;
        basis[j] = entering;
    }
    Err(VcqrError::Numerical(format!(
        "pivoting did not terminate within {max_pivots} steps"
    )))
}

/// Right derivative of `t ↦ ρ_τ(r + t c)` at `t = 0`.
#[inline]
fn dir_deriv(tau: f64, r: f64, c: f64, zero_tol: f64) -> f64 {
    let positive = if r > zero_tol {
        true
    } else if r < -zero_tol {
        false
    } else {
        c > 0.0
    };
    if positive {
        tau * c
    } else {
        (tau - 1.0) * c
    }
}

fn pick_independent_rows(x: &DMatrix<f64>, order: &[usize], rel_tol: f64) -> Vec<usize> {
    let q = x.ncols();
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(q);
    let mut rows = Vec::with_capacity(q);
    for &i in order {
        let row = x.row(i).transpose();
        let norm0 = row.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = row;
        for _ in 0..2 {
            for b in &ortho {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > rel_tol * norm0 {
            ortho.push(v / norm);
            rows.push(i);
            if rows.len() == q {
                break;
            }
        }
    }
    rows
}

/// Dual certificate at a vertex. Nonzero residuals get `φ_τ(r)`; the zero
/// residuals are solved for inside `[τ − 1, τ]` so that `Xᵀ(w ⊙ d) = 0`.
fn certificate(
    xw: &DMatrix<f64>,
    residuals: &[f64],
    weights: Option<&[f64]>,
    tau: f64,
    basis: &[usize],
    zero_tol: f64,
) -> Vec<f64> {
    let (n, q) = xw.shape();
    let mut d = vec![0.0; n];
    let mut zero = Vec::new();
    let mut g = DVector::<f64>::zeros(q);
    for i in 0..n {
        let scaled = residuals[i] * weights.map_or(1.0, |w| w[i]);
        if scaled.abs() <= zero_tol {
            zero.push(i);
        } else {
            d[i] = phi(tau, scaled);
            g.axpy(d[i], &xw.row(i).transpose(), 1.0);
        }
    }
    if zero.is_empty() {
        return d;
    }
    // Basic rows first: X_Bᵀ d_B = −g with the degenerate zeros at 0.
    let cols = independent_columns(xw, RANK_TOL);
    let xr = select_columns(xw, &cols);
    let gr = DVector::from_fn(cols.len(), |k, _| g[cols[k]]);
    if basis.len() == cols.len() && !basis.is_empty() {
        let xb = DMatrix::from_fn(basis.len(), basis.len(), |a, c| xr[(basis[a], c)]);
        if let Some(db) = xb.transpose().lu().solve(&(-&gr)) {
            for (k, &i) in basis.iter().enumerate() {
                d[i] = db[k];
            }
            let inside = basis.iter().all(|&i| d[i] >= tau - 1.0 - 1e-12 && d[i] <= tau + 1e-12);
            if inside {
                for &i in basis {
                    d[i] = d[i].clamp(tau - 1.0, tau);
                }
                return d;
            }
        }
    }
    // Degenerate vertex: box-constrained least squares over all zero residuals
    // by cyclic projected coordinate descent.
    let m: Vec<DVector<f64>> = zero.iter().map(|&i| xr.row(i).transpose()).collect();
    let norms: Vec<f64> = m.iter().map(|c| c.norm_squared()).collect();
    let mut resid = gr.clone();
    for (k, &i) in zero.iter().enumerate() {
        d[i] = d[i].clamp(tau - 1.0, tau);
        resid.axpy(d[i], &m[k], 1.0);
    }
    let scale = 1.0 + gr.amax() + m.iter().map(|c| c.amax()).fold(0.0, f64::max);
    for _ in 0..20_000 {
        if resid.amax() <= 1e-13 * scale {
            break;
        }
        for (k, &i) in zero.iter().enumerate() {
            if norms[k] == 0.0 {
                continue;
            }
            let step = m[k].dot(&resid) / norms[k];
            let new = (d[i] - step).clamp(tau - 1.0, tau);
            let delta = new - d[i];
            if delta != 0.0 {
                resid.axpy(delta, &m[k], 1.0);
                d[i] = new;
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn loss_and_score_values() {
        assert_eq!(check_loss(0.5, -2.0).unwrap(), 1.0);
        assert!((check_loss(0.9, 1.0).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(check_loss(0.25, 0.0).unwrap(), 0.0);
        assert!((check_score(0.9, 1.0).unwrap() - 0.9).abs() < 1e-15);
        assert!((check_score(0.9, -1.0).unwrap() + 0.1).abs() < 1e-15);
        assert_eq!(check_score(0.5, 0.0).unwrap(), 0.0);
        assert!(check_loss(0.0, 1.0).is_err());
        assert!(check_score(1.0, 1.0).is_err());
    }

    #[test]
    fn sample_median() {
        let x = col(&[1.0, 1.0, 1.0]);
        let fit = solve_quantile(&x, &[1.0, 2.0, 10.0], 0.5, None).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.objective - 4.5).abs() < 1e-12);
    }

    #[test]
    fn flat_optimum_even_sample() {
        let x = col(&[1.0, 1.0]);
        let fit = solve_quantile(&x, &[0.0, 1.0], 0.5, None).unwrap();
        assert!((0.0..=1.0).contains(&fit.coefficients[0]));
        assert!((fit.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_design_interpolates() {
        let x = DMatrix::<f64>::identity(4, 4);
        let y = [3.0, -1.0, 0.5, 7.0];
        for tau in [0.1, 0.5, 0.9] {
            let fit = solve_quantile(&x, &y, tau, None).unwrap();
            assert_eq!(fit.objective, 0.0);
            assert!(fit.residuals.iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn rank_deficient_design_flagged() {
        let x = DMatrix::from_row_slice(
            5,
            3,
            &[
                1.0, 0.0, 0.0, //
                1.0, 1.0, 2.0, //
                1.0, 2.0, 4.0, //
                1.0, 3.0, 6.0, //
                1.0, 4.0, 8.0,
            ],
        );
        let y = [0.1, 1.3, 1.9, 3.2, 3.8];
        let fit = solve_quantile(&x, &y, 0.5, None).unwrap();
        assert!(fit.rank_deficient);
        assert_eq!(fit.rank, 2);
        assert_eq!(fit.coefficients[2], 0.0);
        assert!(fit.stationarity(&x) < 1e-9);
    }

    #[test]
    fn input_errors() {
        let x = col(&[1.0, 1.0]);
        assert!(solve_quantile(&DMatrix::zeros(0, 1), &[], 0.5, None).is_err());
        assert!(solve_quantile(&x, &[1.0], 0.5, None).is_err());
        assert!(solve_quantile(&x, &[1.0, f64::NAN], 0.5, None).is_err());
        assert!(solve_quantile(&x, &[1.0, 2.0], 0.5, Some(&[1.0, 0.0])).is_err());
        assert!(solve_quantile(&x, &[1.0, 2.0], 1.5, None).is_err());
    }

    #[test]
    fn all_zero_design() {
        let x = DMatrix::zeros(3, 2);
        let fit = solve_quantile(&x, &[1.0, -2.0, 0.0], 0.3, None).unwrap();
        assert_eq!(fit.rank, 0);
        assert!((fit.objective - (0.3 + 1.4)).abs() < 1e-12);
    }
}
