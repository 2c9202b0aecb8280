//! Spline bases on a closed interval and the varying-coefficient design rows.
//!
//! Two bases span the same piecewise-polynomial space for a given knot set and
//! degree `m`:
//!
//! * normalized B-splines of order `m + 1`, evaluated by the Cox–de Boor
//!   recursion on the extended partition (boundary knots repeated `m + 1` times);
//! * the truncated power basis `{1, t, …, t^m, (t − κ_1)_+^m, …, (t − κ_k)_+^m}`.
//!
//! Evaluation is right-continuous at interior knots and uses left limits at the
//! right end of the domain.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VcqrError};

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(VcqrError::InvalidArgument(format!(
                "domain [{lo}, {hi}] must be a finite interval with lo < hi"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }

    /// Affine map of `t` onto `[0, 1]`.
    pub fn to_unit(&self, t: f64) -> f64 {
        (t - self.lo) / self.width()
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.lo + u * self.width()
    }
}

impl Default for Domain {
    fn default() -> Self {
        Self::unit()
    }
}

/// Interior knots of a spline space on a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    interior: Vec<f64>,
    domain: Domain,
}

impl KnotVector {
    pub fn new(interior: Vec<f64>, domain: Domain) -> Result<Self> {
        for (i, &k) in interior.iter().enumerate() {
            if !k.is_finite() {
                return Err(VcqrError::InvalidKnots(format!("knot {i} is not finite")));
            }
            if k <= domain.lo || k >= domain.hi {
                return Err(VcqrError::InvalidKnots(format!(
                    "knot {k} is not strictly inside [{}, {}]",
                    domain.lo, domain.hi
                )));
            }
            if i > 0 && k <= interior[i - 1] {
                return Err(VcqrError::InvalidKnots(format!(
                    "knots must be strictly increasing ({} then {k})",
                    interior[i - 1]
                )));
            }
        }
        Ok(Self { interior, domain })
    }

    /// `count` equispaced interior knots.
    pub fn equispaced(count: usize, domain: Domain) -> Self {
        let interior = (1..=count)
            .map(|i| domain.lo + domain.width() * i as f64 / (count + 1) as f64)
            .collect();
        Self { interior, domain }
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn count(&self) -> usize {
        self.interior.len()
    }

    /// Knot sequence with each boundary repeated `order` times.
    pub fn extended(&self, order: usize) -> Vec<f64> {
        let mut ext = Vec::with_capacity(self.interior.len() + 2 * order);
        ext.extend(std::iter::repeat_n(self.domain.lo, order));
        ext.extend_from_slice(&self.interior);
        ext.extend(std::iter::repeat_n(self.domain.hi, order));
        ext
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    BSpline,
    TruncatedPower,
}

/// Spline basis of degree `m` (order `m + 1`) on a knot vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    knots: KnotVector,
    degree: usize,
    kind: BasisKind,
}

/// Builds a spline basis; `degree` is signed so that negative input can be rejected.
pub fn make_basis(interior_knots: &[f64], degree: i64, kind: BasisKind, domain: Domain) -> Result<SplineBasis> {
    if degree < 0 {
        return Err(VcqrError::InvalidArgument(format!(
            "spline degree must be nonnegative, got {degree}"
        )));
    }
    let knots = KnotVector::new(interior_knots.to_vec(), domain)?;
    Ok(SplineBasis::new(knots, degree as usize, kind))
}

impl SplineBasis {
    pub fn new(knots: KnotVector, degree: usize, kind: BasisKind) -> Self {
        Self { knots, degree, kind }
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn domain(&self) -> Domain {
        self.knots.domain
    }

    pub fn dim(&self) -> usize {
        self.knots.count() + self.degree + 1
    }

    /// Same knots and degree in the other basis kind.
    pub fn with_kind(&self, kind: BasisKind) -> Self {
        Self { kind, ..self.clone() }
    }

    /// Basis values (or derivatives of order `deriv`) at `t`.
    pub fn eval(&self, t: f64, deriv: usize) -> Result<Vec<f64>> {
        let dom = self.domain();
        if !t.is_finite() || !dom.contains(t) {
            return Err(VcqrError::OutsideDomain {
                t,
                lo: dom.lo,
                hi: dom.hi,
            });
        }
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, deriv, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into a caller-provided buffer of length `dim()`.
    pub(crate) fn eval_into(&self, t: f64, deriv: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out.iter_mut().for_each(|v| *v = 0.0);
        if deriv > self.degree {
            return;
        }
        match self.kind {
            BasisKind::BSpline => self.eval_bspline(t, deriv, out),
            BasisKind::TruncatedPower => self.eval_truncated(t, deriv, out),
        }
    }

    fn eval_bspline(&self, t: f64, deriv: usize, out: &mut [f64]) {
        let m = self.degree;
        let ext = self.knots.extended(m + 1);
        let len = ext.len();
        // Degree-0 indicator; the last nonempty span is closed on the right.
        let mut vals = vec![0.0; len - 1];
        let span = if t >= self.domain().hi {
            (0..len - 1).rev().find(|&i| ext[i] < ext[i + 1])
        } else {
            (0..len - 1).find(|&i| ext[i] <= t && t < ext[i + 1])
        };
        if let Some(i) = span {
            vals[i] = 1.0;
        }
        let base_degree = m - deriv;
        for j in 1..=base_degree {
            for i in 0..len - 1 - j {
                let left = ext[i + j] - ext[i];
                let right = ext[i + j + 1] - ext[i + 1];
                let mut v = 0.0;
                if left > 0.0 {
                    v += (t - ext[i]) / left * vals[i];
                }
                if right > 0.0 {
                    v += (ext[i + j + 1] - t) / right * vals[i + 1];
                }
                vals[i] = v;
            }
        }
        // Differentiate upwards from degree m - deriv to m.
        for j in base_degree + 1..=m {
            for i in 0..len - 1 - j {
                let left = ext[i + j] - ext[i];
                let right = ext[i + j + 1] - ext[i + 1];
                let mut v = 0.0;
                if left > 0.0 {
                    v += vals[i] / left;
                }
                if right > 0.0 {
                    v -= vals[i + 1] / right;
                }
                vals[i] = j as f64 * v;
            }
        }
        out.copy_from_slice(&vals[..self.dim()]);
    }

    fn eval_truncated(&self, t: f64, deriv: usize, out: &mut [f64]) {
        let m = self.degree;
        for (j, slot) in out.iter_mut().take(m + 1).enumerate() {
            if j >= deriv {
                *slot = falling(j, deriv) * t.powi((j - deriv) as i32);
            }
        }
        let coef = falling(m, deriv);
        let pow = (m - deriv) as i32;
        for (slot, &kappa) in out[m + 1..].iter_mut().zip(self.knots.interior()) {
            *slot = if t >= kappa { coef * (t - kappa).powi(pow) } else { 0.0 };
        }
    }
}

/// `j (j-1) … (j-d+1)`.
fn falling(j: usize, d: usize) -> f64 {
    (0..d).map(|i| (j - i) as f64).product()
}

/// Evaluates `basis` at `t`; a thin wrapper kept for API symmetry.
pub fn eval_basis(basis: &SplineBasis, t: f64, deriv: usize) -> Result<Vec<f64>> {
    basis.eval(t, deriv)
}

/// How candidate knots are laid out on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotPlacement {
    /// Equispaced sample quantiles of the observed index.
    #[default]
    Quantile,
    /// Equispaced points of the domain.
    Equispaced,
}

/// `count` knots strictly inside `(0, 1)`. Sample-quantile placement drops
/// duplicates, so it can return fewer than `count` knots on tied data.
pub fn place_knots(t_unit: &[f64], count: usize, placement: KnotPlacement) -> Vec<f64> {
    match placement {
        KnotPlacement::Equispaced => KnotVector::equispaced(count, Domain::unit()).interior,
        KnotPlacement::Quantile => {
            if t_unit.is_empty() {
                return Vec::new();
            }
            let sorted = crate::stats::sorted_copy(t_unit);
            let mut knots: Vec<f64> = (1..=count)
                .map(|i| crate::stats::quantile_sorted(&sorted, i as f64 / (count + 1) as f64))
                .filter(|&k| k > 0.0 && k < 1.0)
                .collect();
            knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
            knots
        }
    }
}

/// Per-coefficient bases of a varying-coefficient design. Slot 0 is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcDesign {
    bases: Vec<SplineBasis>,
}

impl VcDesign {
    pub fn new(bases: Vec<SplineBasis>) -> Result<Self> {
        if bases.is_empty() {
            return Err(VcqrError::InvalidArgument(
                "a design needs at least the intercept basis".into(),
            ));
        }
        Ok(Self { bases })
    }

    /// The same basis for every one of the `p + 1` coefficients.
    pub fn shared(p: usize, basis: SplineBasis) -> Self {
        Self {
            bases: vec![basis; p + 1],
        }
    }

    pub fn bases(&self) -> &[SplineBasis] {
        &self.bases
    }

    /// Number of non-constant covariates.
    pub fn p(&self) -> usize {
        self.bases.len() - 1
    }

    /// Row length `p_k`.
    pub fn width(&self) -> usize {
        self.bases.iter().map(SplineBasis::dim).sum()
    }

    /// Column offset of each coefficient block.
    pub fn offsets(&self) -> Vec<usize> {
        self.bases
            .iter()
            .scan(0, |acc, b| {
                let start = *acc;
                *acc += b.dim();
                Some(start)
            })
            .collect()
    }

    /// Largest interior-knot count over the blocks.
    pub fn max_knot_count(&self) -> usize {
        self.bases.iter().map(|b| b.knots().count()).max().unwrap_or(0)
    }

    pub fn with_kind(&self, kind: BasisKind) -> Self {
        Self {
            bases: self.bases.iter().map(|b| b.with_kind(kind)).collect(),
        }
    }

    /// `Π(t, x)`: the concatenation of `x_j · basis_j(t)`.
    pub fn row(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.bases.len() {
            return Err(VcqrError::DimensionMismatch(format!(
                "covariate vector has length {}, design expects {}",
                x.len(),
                self.bases.len()
            )));
        }
        if x[0] != 1.0 {
            return Err(VcqrError::InvalidArgument(format!(
                "intercept slot x[0] must be 1, got {}",
                x[0]
            )));
        }
        for b in &self.bases {
            let d = b.domain();
            if !t.is_finite() || !d.contains(t) {
                return Err(VcqrError::OutsideDomain { t, lo: d.lo, hi: d.hi });
            }
        }
        let mut out = vec![0.0; self.width()];
        self.row_into(t, x, &mut out);
        Ok(out)
    }

    /// Unchecked row fill; the intercept slot is not required to be 1 so that
    /// rescaled (weighted) rows can reuse it.
    pub(crate) fn row_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let mut start = 0;
        for (b, &xj) in self.bases.iter().zip(x) {
            let block = &mut out[start..start + b.dim()];
            b.eval_into(t, 0, block);
            block.iter_mut().for_each(|v| *v *= xj);
            start += b.dim();
        }
    }

    /// Stacked rows for a sample; `t` in the design's own coordinates.
    pub(crate) fn matrix(&self, t: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = t.len();
        let w = self.width();
        let mut m = DMatrix::zeros(n, w);
        let mut row = vec![0.0; w];
        let mut xi = vec![0.0; x.ncols()];
        for i in 0..n {
            for (j, v) in xi.iter_mut().enumerate() {
                *v = x[(i, j)];
            }
            self.row_into(t[i], &xi, &mut row);
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// `Π(t, x)` for one observation.
pub fn design_row(design: &VcDesign, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    design.row(t, x)
}

/// Extreme eigenvalues of the scaled empirical Gram matrix `(k/n) Σ Π Πᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramDiagnostic {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// The `k` used in the scaling, `max(k, 1)`.
    pub scale_k: usize,
}

impl GramDiagnostic {
    pub fn condition_number(&self) -> f64 {
        if self.min_eigenvalue > 0.0 {
            self.max_eigenvalue / self.min_eigenvalue
        } else {
            f64::INFINITY
        }
    }
}

/// Conditioning diagnostic over a sample of `(t, x)` pairs. Rank deficiency is
/// reported as a zero minimum eigenvalue.
pub fn gram_eigen_diagnostic(design: &VcDesign, sample: &[(f64, Vec<f64>)]) -> Result<GramDiagnostic> {
    if sample.is_empty() {
        return Err(VcqrError::InvalidArgument("empty sample".into()));
    }
    let w = design.width();
    let mut gram = DMatrix::<f64>::zeros(w, w);
    for (t, x) in sample {
        let row = design.row(*t, x)?;
        for a in 0..w {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..w {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    let k = design.max_knot_count().max(1);
    gram *= k as f64 / sample.len() as f64;
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.max();
    let mut min = eig.eigenvalues.min();
    // Round-off noise on a singular Gram matrix is reported as exact rank loss.
    if min <= max.abs() * 1e-12 * w as f64 {
        min = 0.0;
    }
    Ok(GramDiagnostic {
        min_eigenvalue: min,
        max_eigenvalue: max,
        scale_k: k,
    })
}
