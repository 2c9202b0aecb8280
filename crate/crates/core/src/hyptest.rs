//! Tests of coefficient constancy.
//!
//! The null hypothesis is `β_j(t) ≡ const` for every `j`, i.e. the linear model
//! `y ~ x`. A spline design is reparameterized as `Γ = A Π = (x, Γ₂)` so the null
//! is the sub-model without the `Γ₂` block. The score test needs only the null
//! fit; the likelihood-ratio-type test fits both models and is calibrated by a
//! residual bootstrap.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, VcDesign};
use crate::error::{Result, VcqrError};
use crate::linalg::score_quadratic_form;
use crate::qrsolve::{phi, solve_quantile, QuantileFit};
use crate::stats::{chi2_sf, normal_sf, quantile_inverse_cdf, sorted_copy};
use crate::vcm::Dataset;

/// Largest df for which `Calibration::Auto` reports the chi-square p-value.
pub const AUTO_DF_THRESHOLD: usize = 40;

const COLLINEAR_TOL: f64 = 1e-10;

/// Reparameterized design `Γ(t, x) = A Π(t, x) = (x, Γ₂(t, x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaDesign {
    pub base: VcDesign,
    /// Square, invertible; row `j < p + 1` extracts the constant direction of
    /// coefficient `j`.
    pub transform: DMatrix<f64>,
    pub x_block_width: usize,
    pub gamma2_width: usize,
}

/// Builds `A` block by block. In a truncated power block the leading column is
/// the constant; in a B-spline block the constant is the sum of all columns and
/// the first column is dropped from `Γ₂`.
pub fn build_gamma_design(design: &VcDesign) -> GammaDesign {
    let w = design.width();
    let p1 = design.p() + 1;
    let offsets = design.offsets();
    let mut a = DMatrix::zeros(w, w);
    let mut next = p1;
    for (j, basis) in design.bases().iter().enumerate() {
        let off = offsets[j];
        let d = basis.dim();
        match basis.kind() {
            BasisKind::TruncatedPower => a[(j, off)] = 1.0,
            BasisKind::BSpline => {
                for c in 0..d {
                    a[(j, off + c)] = 1.0;
                }
            }
        }
        for c in 1..d {
            a[(next, off + c)] = 1.0;
            next += 1;
        }
    }
    debug_assert_eq!(next, w);
    GammaDesign {
        base: design.clone(),
        transform: a,
        x_block_width: p1,
        gamma2_width: w - p1,
    }
}

impl GammaDesign {
    /// `Γ(t, x)` for `t` on the unit interval.
    pub fn row(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let pi = DVector::from_vec(self.base.row(t, x)?);
        Ok((&self.transform * pi).iter().copied().collect())
    }

    /// Stacked `Γ₂` rows on the data.
    pub fn gamma2_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let pi = data.design_matrix(&self.base)?;
        let a2 = self.transform.rows(self.x_block_width, self.gamma2_width);
        Ok(pi * a2.transpose())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    Chisq,
    Normal,
    /// Chi-square when df ≤ [`AUTO_DF_THRESHOLD`], normal otherwise.
    #[default]
    Auto,
}

impl Calibration {
    fn resolve(self, df: usize) -> Calibration {
        match self {
            Calibration::Auto if df <= AUTO_DF_THRESHOLD => Calibration::Chisq,
            Calibration::Auto => Calibration::Normal,
            c => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaoTestReport {
    /// `|w|²`.
    pub statistic: f64,
    pub df: usize,
    /// `τ(1−τ)`.
    pub sigma2: f64,
    /// `(|w|² − df)/√(2 df)`.
    pub standardized: f64,
    pub p_value_chisq: f64,
    pub p_value_normal: f64,
    /// Resolved calibration (never `Auto`).
    pub calibration_used: Calibration,
    pub p_value: f64,
    pub null_fit: QuantileFit,
}

/// Score statistic `|w|² = s̃ᵀ Q⁽²²⁾ s̃ / (τ(1−τ))` with `s̃ = Σ φ_τ(rᵢ) Γ₂ᵢ`, where
/// `r` are the residuals of the null fit of `y` on `x`.
pub fn rao_statistic(x: &DMatrix<f64>, gamma2: &DMatrix<f64>, y: &[f64], tau: f64) -> Result<(f64, QuantileFit)> {
    let fit = solve_quantile(x, y, tau, None)?;
    let scores: Vec<f64> = fit.residuals.iter().map(|&r| phi(tau, r)).collect();
    let q = score_quadratic_form(x, gamma2, &scores, COLLINEAR_TOL)?;
    Ok((q / (tau * (1.0 - tau)), fit))
}

fn check_test_input(data: &Dataset, design: &VcDesign) -> Result<()> {
    if data.n() <= design.width() {
        return Err(VcqrError::InvalidArgument(format!(
            "the test needs n = {} above the design width {}",
            data.n(),
            design.width()
        )));
    }
    if design.width() == data.p() + 1 {
        return Err(VcqrError::InvalidArgument(
            "design has no directions beyond the constant coefficients".into(),
        ));
    }
    Ok(())
}

fn rao_report(statistic: f64, df: usize, tau: f64, calibration: Calibration, null_fit: QuantileFit) -> RaoTestReport {
    let standardized = (statistic - df as f64) / (2.0 * df as f64).sqrt();
    let p_value_chisq = chi2_sf(statistic, df);
    let p_value_normal = normal_sf(standardized);
    let used = calibration.resolve(df);
    RaoTestReport {
        statistic,
        df,
        sigma2: tau * (1.0 - tau),
        standardized,
        p_value_chisq,
        p_value_normal,
        calibration_used: used,
        p_value: if used == Calibration::Chisq {
            p_value_chisq
        } else {
            p_value_normal
        },
        null_fit,
    }
}

/// Score test of constancy against the spline alternative spanned by `design`.
pub fn rao_score_test(data: &Dataset, tau: f64, design: &VcDesign, calibration: Calibration) -> Result<RaoTestReport> {
    check_test_input(data, design)?;
    let gamma = build_gamma_design(design);
    let g2 = gamma.gamma2_matrix(data)?;
    let (stat, fit) = rao_statistic(&data.x, &g2, &data.y, tau)?;
    Ok(rao_report(stat, gamma.gamma2_width, tau, calibration, fit))
}

/// Linear scale model `σ(t, x) = (t, xᵀ) γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleModel {
    /// Coefficients on `(t, x₀ = 1, x₁, …, x_p)`.
    pub gamma_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub scale_floor: f64,
    pub floor_applied: bool,
}

/// Fraction of the median fitted scale used as the default floor.
pub const RELATIVE_SCALE_FLOOR: f64 = 0.1;

/// `10⁻³ · median|y − median(y)|`, or a tiny positive value for constant `y`.
/// This is the absolute lower bound of the default floor.
pub fn default_scale_floor(y: &[f64]) -> f64 {
    let s = sorted_copy(y);
    let med = crate::stats::quantile_sorted(&s, 0.5);
    let dev: Vec<f64> = sorted_copy(&y.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
    let mad = crate::stats::quantile_sorted(&dev, 0.5);
    if mad > 0.0 {
        1e-3 * mad
    } else {
        f64::EPSILON * y.iter().fold(1.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Median regression of `|y − x ξ̂|` on `(t, x)`, where `ξ̂` is the median
/// regression of `y` on `x`. Fitted scales below `scale_floor` are raised to it.
///
/// Without an explicit floor the larger of [`default_scale_floor`] and
/// [`RELATIVE_SCALE_FLOOR`] times the median fitted scale is used, which keeps
/// the largest weight within about ten times a typical one when the linear
/// scale fit crosses zero.
pub fn estimate_scale(data: &Dataset, scale_floor: Option<f64>) -> Result<ScaleModel> {
    let n = data.n();
    let q = data.p() + 2;
    if n <= q {
        return Err(VcqrError::InvalidArgument(format!(
            "scale model needs n = {n} above {q} regressors"
        )));
    }
    if let Some(f) = scale_floor {
        if !(f > 0.0 && f.is_finite()) {
            return Err(VcqrError::InvalidArgument(format!(
                "scale floor must be positive, got {f}"
            )));
        }
    }
    let location = solve_quantile(&data.x, &data.y, 0.5, None)?;
    let z = DMatrix::from_fn(n, q, |i, j| if j == 0 { data.t[i] } else { data.x[(i, j - 1)] });
    if z.columns(0, 1).iter().all(|&v| v == data.t[0]) {
        return Err(VcqrError::Singular("index variable is constant".into()));
    }
    let abs_res: Vec<f64> = location.residuals.iter().map(|r| r.abs()).collect();
    let scale = solve_quantile(&z, &abs_res, 0.5, None)?;
    if scale.rank_deficient {
        return Err(VcqrError::Singular("scale regressors are collinear".into()));
    }
    let fitted: Vec<f64> = (0..n)
        .map(|i| (0..q).map(|j| z[(i, j)] * scale.coefficients[j]).sum())
        .collect();
    let floor = scale_floor.unwrap_or_else(|| {
        let median = crate::stats::quantile_sorted(&sorted_copy(&fitted), 0.5);
        default_scale_floor(&data.y).max(RELATIVE_SCALE_FLOOR * median)
    });
    let mut floor_applied = false;
    let sigma_hat = fitted
        .into_iter()
        .map(|s| {
            if s < floor {
                floor_applied = true;
                floor
            } else {
                s
            }
        })
        .collect();
    Ok(ScaleModel {
        gamma_hat: scale.coefficients,
        sigma_hat,
        scale_floor: floor,
        floor_applied,
    })
}

/// Score test on the rescaled observations `(x/σ̂, y/σ̂)`; the basis is still
/// evaluated at the original index values.
pub fn rao_score_test_weighted(
    data: &Dataset,
    tau: f64,
    design: &VcDesign,
    scale: &ScaleModel,
    calibration: Calibration,
) -> Result<RaoTestReport> {
    check_test_input(data, design)?;
    if scale.sigma_hat.len() != data.n() {
        return Err(VcqrError::DimensionMismatch(format!(
            "{} scales for {} observations",
            scale.sigma_hat.len(),
            data.n()
        )));
    }
    if scale.sigma_hat.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(VcqrError::InvalidArgument("scales must be positive and finite".into()));
    }
    let gamma = build_gamma_design(design);
    let inv: Vec<f64> = scale.sigma_hat.iter().map(|s| 1.0 / s).collect();
    let x = DMatrix::from_fn(data.n(), data.x.ncols(), |i, j| data.x[(i, j)] * inv[i]);
    let g2 = gamma.gamma2_matrix(data)?;
    let g2 = DMatrix::from_fn(g2.nrows(), g2.ncols(), |i, j| g2[(i, j)] * inv[i]);
    let y: Vec<f64> = data.y.iter().zip(&inv).map(|(y, w)| y * w).collect();
    let (stat, fit) = rao_statistic(&x, &g2, &y, tau)?;
    Ok(rao_report(stat, gamma.gamma2_width, tau, calibration, fit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTestReport {
    /// `2 (R_null − R_alt)`.
    pub statistic: f64,
    pub df: usize,
    pub bootstrap_count: usize,
    pub bootstrap_statistics: Vec<f64>,
    /// `(1 + #{l* ≥ l}) / (B + 1)`.
    pub p_value: f64,
    pub seed: u64,
}

fn lr_statistic(x: &DMatrix<f64>, pi: &DMatrix<f64>, y: &[f64], tau: f64) -> Result<(f64, QuantileFit, QuantileFit)> {
    let null = solve_quantile(x, y, tau, None)?;
    let alt = solve_quantile(pi, y, tau, None)?;
    Ok((2.0 * (null.objective - alt.objective), null, alt))
}

/// Random stream `index` of the ChaCha8 generator keyed by `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Likelihood-ratio-type test with a residual bootstrap of `bootstrap_count`
/// samples. Bootstrap responses are the null fitted values plus alternative
/// residuals, resampled after shifting their empirical τ-quantile to 0.
pub fn lr_test(data: &Dataset, tau: f64, design: &VcDesign, bootstrap_count: usize, seed: u64) -> Result<LrTestReport> {
    if bootstrap_count == 0 {
        return Err(VcqrError::InvalidArgument("bootstrap count must be at least 1".into()));
    }
    check_test_input(data, design)?;
    let pi = data.design_matrix(design)?;
    let (stat, null, alt) = lr_statistic(&data.x, &pi, &data.y, tau)?;
    let sorted = sorted_copy(&alt.residuals);
    let shift = quantile_inverse_cdf(&sorted, tau);
    let pool: Vec<f64> = alt.residuals.iter().map(|r| r - shift).collect();
    let fitted: Vec<f64> = data.y.iter().zip(&null.residuals).map(|(y, r)| y - r).collect();
    let n = data.n();
    let boot: Vec<f64> = (0..bootstrap_count)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let y: Vec<f64> = (0..n).map(|i| fitted[i] + pool[rng.random_range(0..n)]).collect();
            lr_statistic(&data.x, &pi, &y, tau).map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    let exceed = boot.iter().filter(|&&l| l >= stat).count();
    Ok(LrTestReport {
        statistic: stat,
        df: design.width() - (data.p() + 1),
        bootstrap_count,
        p_value: (1 + exceed) as f64 / (bootstrap_count + 1) as f64,
        bootstrap_statistics: boot,
        seed,
    })
}

/// Flat summary written by the command-line front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub test: String,
    pub statistic: f64,
    pub df: usize,
    pub calibration: String,
    pub p_value: f64,
    pub n: usize,
    pub tau: f64,
    /// Knots per coefficient in original index units.
    pub knots: Vec<Vec<f64>>,
    pub seed: Option<u64>,
    pub bootstrap_count: Option<usize>,
}

impl TestSummary {
    pub fn from_rao(report: &RaoTestReport, weighted: bool, n: usize, tau: f64, knots: Vec<Vec<f64>>) -> Self {
        let calibration = match report.calibration_used {
            Calibration::Chisq => "chisq",
            _ => "normal",
        };
        Self {
            test: if weighted { "rs_weighted" } else { "rs" }.into(),
            statistic: report.statistic,
            df: report.df,
            calibration: calibration.into(),
            p_value: report.p_value,
            n,
            tau,
            knots,
            seed: None,
            bootstrap_count: None,
        }
    }

    pub fn from_lr(report: &LrTestReport, n: usize, tau: f64, knots: Vec<Vec<f64>>) -> Self {
        Self {
            test: "lr".into(),
            statistic: report.statistic,
            df: report.df,
            calibration: "bootstrap".into(),
            p_value: report.p_value,
            n,
            tau,
            knots,
            seed: Some(report.seed),
            bootstrap_count: Some(report.bootstrap_count),
        }
    }
}
