//! Varying-coefficient quantile model: fitting and coefficient curves.
//!
//! The index variable is mapped affinely onto `[0, 1]` before the spline bases
//! are evaluated, so every [`VcDesign`] handed to [`fit_vcqr`] lives on the unit
//! interval. Evaluation helpers take `t` in the original units and undo the map,
//! including the chain-rule factor for derivatives.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{Domain, VcDesign};
use crate::error::{Result, VcqrError};
use crate::qrsolve::{solve_quantile, QuantileFit};
use crate::stats::{quantile_sorted, sorted_copy};

/// Observations `(tᵢ, xᵢ, yᵢ)` with `xᵢ₀ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub t: Vec<f64>,
    /// `n × (p + 1)`; column 0 is the intercept.
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// One label per column of `x`.
    pub column_names: Vec<String>,
    /// Range of the index variable mapped onto `[0, 1]`; the observed range
    /// when unset.
    pub t_domain: Option<Domain>,
}

impl Dataset {
    pub fn new(t: Vec<f64>, x: DMatrix<f64>, y: Vec<f64>, column_names: Vec<String>) -> Result<Self> {
        let n = t.len();
        if n == 0 {
            return Err(VcqrError::InvalidArgument("dataset is empty".into()));
        }
        if x.nrows() != n || y.len() != n {
            return Err(VcqrError::DimensionMismatch(format!(
                "t has {n} entries, x has {} rows, y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(VcqrError::DimensionMismatch("x needs an intercept column".into()));
        }
        if column_names.len() != x.ncols() {
            return Err(VcqrError::DimensionMismatch(format!(
                "{} column names for {} columns",
                column_names.len(),
                x.ncols()
            )));
        }
        if t.iter().chain(y.iter()).chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(VcqrError::NonFinite("dataset".into()));
        }
        if let Some(i) = (0..n).find(|&i| x[(i, 0)] != 1.0) {
            return Err(VcqrError::InvalidArgument(format!(
                "intercept column must be identically 1 (row {i})"
            )));
        }
        Ok(Self {
            t,
            x,
            y,
            column_names,
            t_domain: None,
        })
    }

    /// Dataset with default column names `x0, x1, …`.
    pub fn unnamed(t: Vec<f64>, x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(t, x, y, names)
    }

    /// Fixes the index range mapped onto `[0, 1]`; every `tᵢ` must lie inside.
    pub fn with_domain(mut self, domain: Domain) -> Result<Self> {
        if let Some(&t) = self.t.iter().find(|&&t| !domain.contains(t)) {
            return Err(VcqrError::OutsideDomain {
                t,
                lo: domain.lo,
                hi: domain.hi,
            });
        }
        self.t_domain = Some(domain);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    /// Number of non-constant covariates.
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn index_domain(&self) -> Result<Domain> {
        if let Some(d) = self.t_domain {
            return Ok(d);
        }
        let lo = self.t.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Domain::new(lo, hi)
    }

    /// Index values mapped onto `[0, 1]`.
    pub fn unit_t(&self) -> Result<Vec<f64>> {
        let d = self.index_domain()?;
        Ok(self.t.iter().map(|&t| d.to_unit(t).clamp(0.0, 1.0)).collect())
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Number of distinct index values.
    pub fn distinct_t(&self) -> usize {
        let mut s = sorted_copy(&self.t);
        s.dedup();
        s.len()
    }

    /// Stacked design rows `Π(tᵢ, xᵢ)`.
    pub fn design_matrix(&self, design: &VcDesign) -> Result<DMatrix<f64>> {
        check_design(self, design)?;
        Ok(design.matrix(&self.unit_t()?, &self.x))
    }

    /// Central range of the index holding `coverage` of the observations.
    pub fn central_range(&self, coverage: f64) -> (f64, f64) {
        let s = sorted_copy(&self.t);
        let tail = (1.0 - coverage) / 2.0;
        (quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail))
    }
}

fn check_design(data: &Dataset, design: &VcDesign) -> Result<()> {
    if design.p() != data.p() {
        return Err(VcqrError::DimensionMismatch(format!(
            "design has {} coefficients, data has {}",
            design.p() + 1,
            data.p() + 1
        )));
    }
    if design.bases().iter().any(|b| b.domain() != Domain::unit()) {
        return Err(VcqrError::InvalidArgument(
            "design bases must live on the unit interval".into(),
        ));
    }
    Ok(())
}

/// A fitted varying-coefficient quantile model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcqrModel {
    pub tau: f64,
    pub design: VcDesign,
    pub fit: QuantileFit,
    /// Index range mapped onto the unit interval.
    pub t_domain: Domain,
}

/// Fits the model by check-loss minimization over the spline-expanded design.
pub fn fit_vcqr(data: &Dataset, tau: f64, design: &VcDesign) -> Result<VcqrModel> {
    fit_vcqr_weighted(data, tau, design, None)
}

/// As [`fit_vcqr`], minimizing `Σ wᵢ ρ_τ(·)`.
pub fn fit_vcqr_weighted(data: &Dataset, tau: f64, design: &VcDesign, weights: Option<&[f64]>) -> Result<VcqrModel> {
    let xm = data.design_matrix(design)?;
    if design.width() >= data.n() {
        return Err(VcqrError::InvalidArgument(format!(
            "design width {} must be below the sample size {}",
            design.width(),
            data.n()
        )));
    }
    let fit = solve_quantile(&xm, &data.y, tau, weights)?;
    Ok(VcqrModel {
        tau,
        design: design.clone(),
        fit,
        t_domain: data.index_domain()?,
    })
}

impl VcqrModel {
    pub fn p(&self) -> usize {
        self.design.p()
    }

    /// Coefficient block `θ̂_j`.
    pub fn block(&self, j: usize) -> &[f64] {
        let off = self.design.offsets()[j];
        &self.fit.coefficients[off..off + self.design.bases()[j].dim()]
    }

    fn unit(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || !self.t_domain.contains(t) {
            return Err(VcqrError::OutsideDomain {
                t,
                lo: self.t_domain.lo,
                hi: self.t_domain.hi,
            });
        }
        Ok(self.t_domain.to_unit(t).clamp(0.0, 1.0))
    }

    /// `β̂_j^{(deriv)}(t)` with `t` in original units.
    pub fn coefficient(&self, j: usize, t: f64, deriv: usize) -> Result<f64> {
        if j > self.p() {
            return Err(VcqrError::InvalidArgument(format!(
                "coefficient index {j} exceeds p = {}",
                self.p()
            )));
        }
        let u = self.unit(t)?;
        let b = self.design.bases()[j].eval(u, deriv)?;
        let raw: f64 = b.iter().zip(self.block(j)).map(|(a, c)| a * c).sum();
        Ok(raw / self.t_domain.width().powi(deriv as i32))
    }

    /// `q̂(t, x) = Σ_j β̂_j(t) x_j`.
    pub fn predict(&self, t: f64, x: &[f64]) -> Result<f64> {
        let u = self.unit(t)?;
        let row = self.design.row(u, x)?;
        Ok(row.iter().zip(&self.fit.coefficients).map(|(a, c)| a * c).sum())
    }
}

pub fn eval_coefficient(model: &VcqrModel, j: usize, t: f64, deriv: usize) -> Result<f64> {
    model.coefficient(j, t, deriv)
}

pub fn predict_quantile(model: &VcqrModel, t: f64, x: &[f64]) -> Result<f64> {
    model.predict(t, x)
}

/// Grid mean of `(β̂_j^{(deriv)} − β_j^{(deriv)})²` for each coefficient.
/// `truth(j, t)` returns the true derivative of order `deriv`.
pub fn mise(model: &VcqrModel, truth: impl Fn(usize, f64) -> f64, grid: &[f64], deriv: usize) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(VcqrError::InvalidArgument("empty grid".into()));
    }
    (0..=model.p())
        .map(|j| {
            let mut acc = 0.0;
            for &t in grid {
                let e = model.coefficient(j, t, deriv)? - truth(j, t);
                acc += e * e;
            }
            Ok(acc / grid.len() as f64)
        })
        .collect()
}

/// `count` equispaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| {
                if i == count - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

/// One row of an exported coefficient curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub coefficient: String,
    pub t: f64,
    pub value: f64,
    pub deriv: usize,
}

/// Curves of every coefficient over `grid` for each derivative order.
pub fn coefficient_curves(
    model: &VcqrModel,
    names: &[String],
    grid: &[f64],
    derivs: &[usize],
) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::with_capacity(names.len() * grid.len() * derivs.len());
    for j in 0..=model.p() {
        let name = names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
        for &deriv in derivs {
            for &t in grid {
                out.push(CurvePoint {
                    coefficient: name.clone(),
                    t,
                    value: model.coefficient(j, t, deriv)?,
                    deriv,
                });
            }
        }
    }
    Ok(out)
}

/// Writes `coefficient,t,value,deriv` rows. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_curves_csv<W: Write>(mut w: W, points: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(w, "coefficient,t,value,deriv")?;
    for p in points {
        writeln!(w, "{},{:?},{:?},{}", p.coefficient, p.t, p.value, p.deriv)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, BasisKind};

    fn linear_design(p: usize, knots: &[f64]) -> VcDesign {
        VcDesign::shared(p, make_basis(knots, 1, BasisKind::BSpline, Domain::unit()).unwrap())
    }

    fn grid_data(n: usize, f: impl Fn(f64, f64) -> f64) -> Dataset {
        let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let xs: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0).collect();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let y = (0..n).map(|i| f(t[i], xs[i])).collect();
        Dataset::unnamed(t, x, y).unwrap()
    }

    #[test]
    fn constant_truth_recovered() {
        let data = grid_data(60, |_, x| 1.5 - 0.5 * x);
        let model = fit_vcqr(&data, 0.5, &linear_design(1, &[0.3, 0.7])).unwrap();
        assert!(model.fit.objective < 1e-10);
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            assert!((model.coefficient(0, t, 0).unwrap() - 1.5).abs() < 1e-6);
            assert!((model.coefficient(1, t, 0).unwrap() + 0.5).abs() < 1e-6);
            assert!(model.coefficient(0, t, 1).unwrap().abs() < 1e-6);
            assert_eq!(model.coefficient(1, t, 2).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_truth_in_span() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.0 * t).collect();
        let data = Dataset::unnamed(t, DMatrix::from_element(30, 1, 1.0), y).unwrap();
        let model = fit_vcqr(&data, 0.5, &linear_design(0, &[])).unwrap();
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            assert!((model.coefficient(0, t, 0).unwrap() - 2.0 * t).abs() < 1e-8);
            assert!((model.coefficient(0, t, 1).unwrap() - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rescaled_index_derivative() {
        // t in [10, 20]: slope of beta_0 in original units is 3.
        let t: Vec<f64> = (0..25).map(|i| 10.0 + 10.0 * i as f64 / 24.0).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * t - 1.0).collect();
        let data = Dataset::unnamed(t, DMatrix::from_element(25, 1, 1.0), y).unwrap();
        let model = fit_vcqr(&data, 0.3, &linear_design(0, &[0.5])).unwrap();
        assert!((model.coefficient(0, 12.5, 1).unwrap() - 3.0).abs() < 1e-8);
        assert!((model.coefficient(0, 15.0, 0).unwrap() - 44.0).abs() < 1e-8);
        assert!(matches!(
            model.coefficient(0, 21.0, 0),
            Err(VcqrError::OutsideDomain { .. })
        ));
        assert!(model.coefficient(1, 12.0, 0).is_err());
    }

    #[test]
    fn prediction_bookkeeping() {
        let data = grid_data(80, |t, x| (3.0 * t).sin() + x * t + 0.1 * ((t * 1e3).sin()));
        let model = fit_vcqr(&data, 0.5, &linear_design(1, &[0.5])).unwrap();
        for i in 0..data.n() {
            let q = model.predict(data.t[i], &data.x_row(i)).unwrap();
            let target = data.y[i] - model.fit.residuals[i];
            assert!((q - target).abs() <= 1e-10 * (1.0 + target.abs()));
        }
        let t = 0.4;
        let b0 = model.coefficient(0, t, 0).unwrap();
        let b1 = model.coefficient(1, t, 0).unwrap();
        assert!((model.predict(t, &[1.0, 0.0]).unwrap() - b0).abs() < 1e-12);
        let q1 = model.predict(t, &[1.0, 1.0]).unwrap();
        let q3 = model.predict(t, &[1.0, 3.0]).unwrap();
        assert!(((q3 - b0) - 3.0 * (q1 - b0)).abs() < 1e-12);
        assert!((q1 - (b0 + b1)).abs() < 1e-12);
    }

    #[test]
    fn mise_identities() {
        let data = grid_data(50, |t, x| t + x);
        let model = fit_vcqr(&data, 0.5, &linear_design(1, &[])).unwrap();
        let grid = linspace(0.0, 1.0, 11);
        let fitted = |j: usize, t: f64| model.coefficient(j, t, 0).unwrap();
        let zero = mise(&model, fitted, &grid, 0).unwrap();
        assert!(zero.iter().all(|&v| v < 1e-24));
        let shifted = mise(&model, |j, t| model.coefficient(j, t, 0).unwrap() + 0.3, &grid, 0).unwrap();
        assert!(shifted.iter().all(|&v| (v - 0.09).abs() < 1e-12));
    }

    #[test]
    fn width_must_be_below_n() {
        let data = grid_data(4, |t, _| t);
        assert!(fit_vcqr(&data, 0.5, &linear_design(1, &[0.5])).is_err());
    }

    #[test]
    fn curve_csv_round_trip() {
        let data = grid_data(40, |t, x| t * t + x);
        let model = fit_vcqr(&data, 0.5, &linear_design(1, &[0.5])).unwrap();
        let grid = linspace(0.05, 0.95, 7);
        let pts = coefficient_curves(&model, &data.column_names, &grid, &[0, 1]).unwrap();
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for (line, p) in text.lines().skip(1).zip(&pts) {
            let f: Vec<&str> = line.split(',').collect();
            let j: usize = f[0][1..].parse().unwrap();
            let t: f64 = f[1].parse().unwrap();
            let v: f64 = f[2].parse().unwrap();
            let d: usize = f[3].parse().unwrap();
            assert_eq!(v, model.coefficient(j, t, d).unwrap());
            assert_eq!(v, p.value);
        }
    }
}
