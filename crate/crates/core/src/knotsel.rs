//! Stepwise knot selection scored by an adapted Schwarz criterion.
//!
//! The search runs in the truncated power basis, where adding a knot `κ` to
//! coefficient `j` appends the single column `x_j (t − κ)₊^m`. Additions are
//! screened by Rao score statistics computed from the current residuals and
//! deletions by Wald statistics, so no candidate requires an extra fit. Every
//! accepted change is refit and recorded; the recorded model with the smallest
//! criterion wins and is refit in the B-spline basis.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{place_knots, BasisKind, Domain, KnotPlacement, KnotVector, SplineBasis, VcDesign};
use crate::error::{Result, VcqrError};
use crate::linalg::{block_last, gram, schur_trailing, score_quadratic_form};
use crate::qrsolve::{phi, QuantileFit};
use crate::stats::{chi2_quantile, sparsity};
use crate::vcm::{fit_vcqr, Dataset, VcqrModel};

const COLLINEAR_TOL: f64 = 1e-10;

/// `floor(min(4 n^{1/5}, n/4, distinct_t, 30))`, at least 1.
pub fn default_potential_knot_count(n: usize, distinct_t: usize) -> usize {
    let n_f = n as f64;
    let v = (4.0 * n_f.powf(0.2)).min(n_f / 4.0).min(distinct_t as f64).min(30.0);
    (v.floor() as usize).max(1)
}

/// `log(objective) + 0.5 log(n) p_n / n`. A zero objective (perfect fit) maps to
/// `−∞`.
pub fn sic(objective: f64, p_n: usize, n: usize) -> Result<f64> {
    if !objective.is_finite() || objective < 0.0 {
        return Err(VcqrError::InvalidArgument(format!(
            "criterion needs a nonnegative objective, got {objective}"
        )));
    }
    if n == 0 {
        return Err(VcqrError::InvalidArgument("criterion needs n ≥ 1".into()));
    }
    if objective == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let n_f = n as f64;
    Ok(objective.ln() + 0.5 * n_f.ln() * p_n as f64 / n_f)
}

/// A screening statistic with its degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenScore {
    pub statistic: f64,
    pub df: usize,
    /// The candidate block lies (numerically) in the span of the design.
    pub collinear: bool,
}

/// Rao score statistic for appending `candidates` to the columns of `design`,
/// evaluated at `fit` (a fit of `design`). Collinear candidates come back with
/// statistic 0 and the flag set.
pub fn rao_add_score(design: &DMatrix<f64>, fit: &QuantileFit, candidates: &DMatrix<f64>) -> Result<ScreenScore> {
    let n = design.nrows();
    if candidates.nrows() != n || fit.n() != n {
        return Err(VcqrError::DimensionMismatch(format!(
            "design has {n} rows, candidates {}, fit {}",
            candidates.nrows(),
            fit.n()
        )));
    }
    let tau = fit.tau;
    // A weighted fit is the plain fit of the row-scaled problem.
    let scores: Vec<f64> = fit.residuals.iter().map(|&r| phi(tau, r)).collect();
    let (x1, x2) = match &fit.weights {
        None => (design.clone(), candidates.clone()),
        Some(w) => (scale_rows(design, w), scale_rows(candidates, w)),
    };
    let df = candidates.ncols();
    match score_quadratic_form(&x1, &x2, &scores, COLLINEAR_TOL) {
        Ok(q) => Ok(ScreenScore {
            statistic: q / (tau * (1.0 - tau)),
            df,
            collinear: false,
        }),
        Err(VcqrError::Singular(_)) => Ok(ScreenScore {
            statistic: 0.0,
            df,
            collinear: true,
        }),
        Err(e) => Err(e),
    }
}

fn scale_rows(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| w[i] * x[(i, j)])
}

/// Residual-based variance scale `τ(1−τ)·sparsity²` used by the Wald screen.
pub fn wald_scale(fit: &QuantileFit) -> f64 {
    let s = sparsity(&fit.residuals, fit.tau);
    fit.tau * (1.0 - fit.tau) * s * s
}

/// Wald statistic `θ̂_bᵀ V⁻¹ θ̂_b` for the coefficient block `block` of `fit`,
/// with `V = ŝ² (Gram⁻¹)_bb` and `ŝ²` from [`wald_scale`].
pub fn wald_delete_score(design: &DMatrix<f64>, fit: &QuantileFit, block: &[usize]) -> Result<ScreenScore> {
    let q = design.ncols();
    if block.is_empty() || block.iter().any(|&b| b >= q) {
        return Err(VcqrError::InvalidArgument(format!(
            "block {block:?} does not index a design with {q} columns"
        )));
    }
    let theta = nalgebra::DVector::from_iterator(block.len(), block.iter().map(|&b| fit.coefficients[b]));
    if theta.iter().all(|&v| v == 0.0) {
        return Ok(ScreenScore {
            statistic: 0.0,
            df: block.len(),
            collinear: false,
        });
    }
    let x = match &fit.weights {
        None => design.clone(),
        Some(w) => scale_rows(design, w),
    };
    let g = block_last(&gram(&x), block);
    let schur = schur_trailing(&g, q - block.len())?;
    let s2 = wald_scale(fit);
    if s2 <= 0.0 || !s2.is_finite() {
        return Err(VcqrError::Singular("residual sparsity estimate vanished".into()));
    }
    let stat = theta.dot(&(&schur * &theta)) / s2;
    Ok(ScreenScore {
        statistic: stat,
        df: block.len(),
        collinear: false,
    })
}

/// Where candidate knots come from. Explicit knots are in the original units
/// of the index variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKnots {
    /// [`default_potential_knot_count`] knots per coefficient.
    Auto {
        placement: KnotPlacement,
    },
    Count {
        count: usize,
        placement: KnotPlacement,
    },
    /// One candidate set used for every coefficient.
    Shared(Vec<f64>),
    PerCoefficient(Vec<Vec<f64>>),
}

impl Default for PotentialKnots {
    fn default() -> Self {
        PotentialKnots::Auto {
            placement: KnotPlacement::Equispaced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnotSelectionConfig {
    pub potential_knots: PotentialKnots,
    pub degree: usize,
    pub max_iterations: usize,
    /// Chi-square quantile level an addition must exceed.
    pub add_threshold: f64,
    /// Chi-square quantile level below which a knot is deleted.
    pub delete_threshold: f64,
}

impl Default for KnotSelectionConfig {
    fn default() -> Self {
        Self {
            potential_knots: PotentialKnots::default(),
            degree: 1,
            max_iterations: 20,
            add_threshold: 0.95,
            delete_threshold: 0.90,
        }
    }
}

impl KnotSelectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("add_threshold", self.add_threshold),
            ("delete_threshold", self.delete_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(VcqrError::InvalidArgument(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if self.degree > 5 {
            return Err(VcqrError::InvalidArgument(format!(
                "degree {} is not supported (max 5)",
                self.degree
            )));
        }
        Ok(())
    }

    /// Candidate knots per coefficient on the unit interval.
    fn candidates(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        let p1 = data.p() + 1;
        let domain = data.index_domain()?;
        let to_unit = |set: &[f64]| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(set.len());
            for &k in set {
                if !k.is_finite() || k <= domain.lo || k >= domain.hi {
                    return Err(VcqrError::InvalidKnots(format!(
                        "candidate knot {k} is not inside the index range [{}, {}]",
                        domain.lo, domain.hi
                    )));
                }
                out.push(domain.to_unit(k));
            }
            out.sort_by(f64::total_cmp);
            out.dedup();
            Ok(out)
        };
        let unit_t = data.unit_t()?;
        match &self.potential_knots {
            PotentialKnots::Auto { placement } => {
                let count = default_potential_knot_count(data.n(), data.distinct_t());
                Ok(vec![place_knots(&unit_t, count, *placement); p1])
            }
            PotentialKnots::Count { count, placement } => Ok(vec![place_knots(&unit_t, *count, *placement); p1]),
            PotentialKnots::Shared(set) => Ok(vec![to_unit(set)?; p1]),
            PotentialKnots::PerCoefficient(sets) => {
                if sets.len() != p1 {
                    return Err(VcqrError::DimensionMismatch(format!(
                        "{} candidate sets for {p1} coefficients",
                        sets.len()
                    )));
                }
                sets.iter().map(|s| to_unit(s)).collect()
            }
        }
    }
}

/// One model visited by the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitedModel {
    /// Knots per coefficient in original index units.
    pub knots_per_coefficient: Vec<Vec<f64>>,
    pub p_n: usize,
    pub objective: f64,
    pub sic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSelectionTrace {
    pub visited: Vec<VisitedModel>,
    pub selected: usize,
    pub n: usize,
    /// The selected model fits the data exactly.
    pub perfect_fit: bool,
}

impl KnotSelectionTrace {
    pub fn selected_model(&self) -> &VisitedModel {
        &self.visited[self.selected]
    }

    /// JSON array of `{knots_per_coefficient, p_n, objective, sic}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.visited).expect("trace serializes")
    }
}

/// Knot sets as sorted index lists into the per-coefficient candidate sets.
type ModelKey = Vec<Vec<usize>>;

struct Search<'a> {
    data: &'a Dataset,
    tau: f64,
    degree: usize,
    unit_t: Vec<f64>,
    candidates: Vec<Vec<f64>>,
    domain: Domain,
}

impl Search<'_> {
    fn design(&self, key: &ModelKey, kind: BasisKind) -> Result<VcDesign> {
        let bases = key
            .iter()
            .enumerate()
            .map(|(j, idx)| {
                let knots: Vec<f64> = idx.iter().map(|&i| self.candidates[j][i]).collect();
                Ok(SplineBasis::new(
                    KnotVector::new(knots, Domain::unit())?,
                    self.degree,
                    kind,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        VcDesign::new(bases)
    }

    fn fit(&self, key: &ModelKey) -> Result<(DMatrix<f64>, VcqrModel)> {
        let design = self.design(key, BasisKind::TruncatedPower)?;
        let xm = self.data.design_matrix(&design)?;
        let model = fit_vcqr(self.data, self.tau, &design)?;
        Ok((xm, model))
    }

    fn record(&self, key: &ModelKey, model: &VcqrModel) -> Result<VisitedModel> {
        let p_n = model.design.width();
        Ok(VisitedModel {
            knots_per_coefficient: key
                .iter()
                .enumerate()
                .map(|(j, idx)| {
                    idx.iter()
                        .map(|&i| self.domain.from_unit(self.candidates[j][i]))
                        .collect()
                })
                .collect(),
            p_n,
            objective: model.fit.objective,
            sic: sic(model.fit.objective, p_n, self.data.n())?,
        })
    }

    fn candidate_column(&self, j: usize, kappa: f64) -> DMatrix<f64> {
        let m = self.degree as i32;
        DMatrix::from_fn(self.data.n(), 1, |i, _| {
            let u = self.unit_t[i];
            if u >= kappa {
                self.data.x[(i, j)] * (u - kappa).powi(m)
            } else {
                0.0
            }
        })
    }

    /// Best addition `(j, candidate index, statistic)`.
    fn best_addition(
        &self,
        key: &ModelKey,
        xm: &DMatrix<f64>,
        fit: &QuantileFit,
    ) -> Result<Option<(usize, usize, f64)>> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (j, cands) in self.candidates.iter().enumerate() {
            for (c, &kappa) in cands.iter().enumerate() {
                if key[j].contains(&c) {
                    continue;
                }
                let col = self.candidate_column(j, kappa);
                if col.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let s = rao_add_score(xm, fit, &col)?;
                if s.collinear {
                    continue;
                }
                // Strict comparison keeps the smallest (j, knot) on ties.
                if best.is_none_or(|b| s.statistic > b.2) {
                    best = Some((j, c, s.statistic));
                }
            }
        }
        Ok(best)
    }

    /// Weakest current knot `(j, candidate index, statistic)`.
    fn weakest_knot(
        &self,
        key: &ModelKey,
        xm: &DMatrix<f64>,
        model: &VcqrModel,
    ) -> Result<Option<(usize, usize, f64)>> {
        let offsets = model.design.offsets();
        let mut worst: Option<(usize, usize, f64)> = None;
        for (j, idx) in key.iter().enumerate() {
            for (pos, &c) in idx.iter().enumerate() {
                let col = offsets[j] + self.degree + 1 + pos;
                let s = wald_delete_score(xm, &model.fit, &[col])?;
                if worst.is_none_or(|w| s.statistic < w.2) {
                    worst = Some((j, c, s.statistic));
                }
            }
        }
        Ok(worst)
    }
}

/// Stepwise knot search. Returns the selected model refit in the B-spline
/// basis together with the search trace.
pub fn stepwise_select(
    data: &Dataset,
    tau: f64,
    config: &KnotSelectionConfig,
) -> Result<(VcqrModel, KnotSelectionTrace)> {
    config.validate()?;
    let search = Search {
        data,
        tau,
        degree: config.degree,
        unit_t: data.unit_t()?,
        candidates: config.candidates(data)?,
        domain: data.index_domain()?,
    };
    let add_cut = chi2_quantile(config.add_threshold, 1);
    let delete_cut = chi2_quantile(config.delete_threshold, 1);

    let mut key: ModelKey = vec![Vec::new(); data.p() + 1];
    let (mut xm, mut model) = search.fit(&key)?;
    let mut visited = vec![search.record(&key, &model)?];
    let mut keys = vec![key.clone()];
    let mut seen: HashSet<ModelKey> = HashSet::from([key.clone()]);

    for _ in 0..config.max_iterations {
        let start = key.clone();
        if let Some((j, c, stat)) = search.best_addition(&key, &xm, &model.fit)? {
            if stat > add_cut
                && search
                    .design(&with_knot(&key, j, c), BasisKind::TruncatedPower)?
                    .width()
                    < data.n()
            {
                key = with_knot(&key, j, c);
                (xm, model) = search.fit(&key)?;
                visited.push(search.record(&key, &model)?);
                keys.push(key.clone());
            }
        }
        if let Some((j, c, stat)) = search.weakest_knot(&key, &xm, &model)? {
            if stat < delete_cut {
                key[j].retain(|&i| i != c);
                (xm, model) = search.fit(&key)?;
                visited.push(search.record(&key, &model)?);
                keys.push(key.clone());
            }
        }
        if key == start || !seen.insert(key.clone()) {
            break;
        }
    }

    let selected = visited
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if v.sic < visited[b].sic { i } else { b });
    let final_design = search.design(&keys[selected], BasisKind::BSpline)?;
    let final_model = fit_vcqr(data, tau, &final_design)?;
    let trace = KnotSelectionTrace {
        perfect_fit: visited[selected].sic == f64::NEG_INFINITY,
        visited,
        selected,
        n: data.n(),
    };
    Ok((final_model, trace))
}

fn with_knot(key: &ModelKey, j: usize, c: usize) -> ModelKey {
    let mut k = key.clone();
    k[j].push(c);
    k[j].sort_unstable();
    k
}

/// Uniform-knot design with the same knot count on every coefficient.
pub fn uniform_design(p: usize, count: usize, degree: usize, kind: BasisKind) -> VcDesign {
    let knots = KnotVector::equispaced(count, Domain::unit());
    VcDesign::shared(p, SplineBasis::new(knots, degree, kind))
}

/// Chooses the number of equispaced knots (shared by all coefficients) in
/// `0..=max_count` by the criterion. Counts whose design would reach the
/// sample size are skipped. Returns the chosen design and its criterion value.
pub fn select_uniform_count(
    data: &Dataset,
    tau: f64,
    degree: usize,
    max_count: usize,
    weights: Option<&[f64]>,
) -> Result<(VcDesign, f64)> {
    let mut best: Option<(VcDesign, f64)> = None;
    for count in 0..=max_count {
        let design = uniform_design(data.p(), count, degree, BasisKind::BSpline);
        if design.width() >= data.n() {
            break;
        }
        let model = crate::vcm::fit_vcqr_weighted(data, tau, &design, weights)?;
        let value = sic(model.fit.objective, design.width(), data.n())?;
        if best.as_ref().is_none_or(|b| value < b.1) {
            best = Some((design, value));
        }
    }
    best.ok_or_else(|| VcqrError::InvalidArgument("sample too small for any spline design".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn potential_knot_guideline() {
        assert_eq!(default_potential_knot_count(200, 200), 11);
        assert_eq!(default_potential_knot_count(654, 10_000), 14);
        assert_eq!(default_potential_knot_count(4, 4), 1);
        assert_eq!(default_potential_knot_count(1, 1), 1);
        assert_eq!(default_potential_knot_count(100_000_000, 1_000_000), 30);
        assert_eq!(default_potential_knot_count(1000, 3), 3);
    }

    #[test]
    fn criterion_values() {
        let v = sic(50.0, 5, 100).unwrap();
        assert!((v - (50f64.ln() + 0.5 * 100f64.ln() * 0.05)).abs() < 1e-15);
        assert!((v - 4.027_152_26).abs() < 1e-8);
        assert_eq!(sic(1.0, 0, 17).unwrap(), 0.0);
        assert_eq!(sic(0.0, 3, 10).unwrap(), f64::NEG_INFINITY);
        assert!(sic(-1.0, 3, 10).is_err());
        // Penalty per parameter shrinks with n.
        let pen = |n: usize| sic(1.0, 1, n).unwrap();
        for n in 3..200 {
            assert!(pen(2 * n) < pen(n));
        }
    }

    fn kink_data(n: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let y = (0..n)
            .map(|i| 1.0 + xs[i] * (1.0 + 4.0 * (t[i] - 0.5).max(0.0)) + noise * rng.random_range(-1.0..1.0))
            .collect();
        Dataset::unnamed(t, x, y).unwrap().with_domain(Domain::unit()).unwrap()
    }

    #[test]
    fn collinear_candidate_flagged() {
        let data = kink_data(100, 0.1, 1);
        let design = uniform_design(1, 0, 1, BasisKind::TruncatedPower);
        let xm = data.design_matrix(&design).unwrap();
        let model = fit_vcqr(&data, 0.5, &design).unwrap();
        let dup = xm.columns(1, 1).clone_owned();
        let s = rao_add_score(&xm, &model.fit, &dup).unwrap();
        assert!(s.collinear);
        assert_eq!(s.statistic, 0.0);
    }

    #[test]
    fn kink_candidate_detected() {
        let data = kink_data(2000, 0.0, 2);
        let design = uniform_design(1, 0, 1, BasisKind::TruncatedPower);
        let xm = data.design_matrix(&design).unwrap();
        let model = fit_vcqr(&data, 0.5, &design).unwrap();
        let col = DMatrix::from_fn(data.n(), 1, |i, _| data.x[(i, 1)] * (data.t[i] - 0.5).max(0.0));
        let s = rao_add_score(&xm, &model.fit, &col).unwrap();
        assert!(!s.collinear);
        assert!(s.statistic > chi2_quantile(0.95, 1), "{}", s.statistic);
    }

    #[test]
    fn wald_zero_block() {
        let data = kink_data(50, 0.2, 3);
        let design = uniform_design(1, 1, 1, BasisKind::TruncatedPower);
        let xm = data.design_matrix(&design).unwrap();
        let mut model = fit_vcqr(&data, 0.5, &design).unwrap();
        model.fit.coefficients[2] = 0.0;
        assert_eq!(wald_delete_score(&xm, &model.fit, &[2]).unwrap().statistic, 0.0);
        assert!(wald_delete_score(&xm, &model.fit, &[9]).is_err());
    }

    #[test]
    fn empty_candidates_return_linear_model() {
        let data = kink_data(60, 0.1, 4);
        let config = KnotSelectionConfig {
            potential_knots: PotentialKnots::Shared(vec![]),
            ..Default::default()
        };
        let (model, trace) = stepwise_select(&data, 0.5, &config).unwrap();
        assert_eq!(trace.visited.len(), 1);
        assert_eq!(model.design.width(), 4);
    }

    #[test]
    fn candidates_outside_range_rejected() {
        let data = kink_data(60, 0.1, 5);
        let config = KnotSelectionConfig {
            potential_knots: PotentialKnots::Shared(vec![0.5, 1.2]),
            ..Default::default()
        };
        assert!(stepwise_select(&data, 0.5, &config).is_err());
        let bad = KnotSelectionConfig {
            add_threshold: 1.0,
            ..Default::default()
        };
        assert!(stepwise_select(&data, 0.5, &bad).is_err());
    }

    #[test]
    fn trace_is_consistent_and_deterministic() {
        let data = kink_data(400, 0.2, 6);
        let config = KnotSelectionConfig::default();
        let (model, trace) = stepwise_select(&data, 0.5, &config).unwrap();
        for v in &trace.visited {
            assert_eq!(v.sic, sic(v.objective, v.p_n, trace.n).unwrap());
        }
        let best = trace.visited.iter().map(|v| v.sic).fold(f64::INFINITY, f64::min);
        assert_eq!(trace.selected_model().sic, best);
        assert!(trace.selected_model().sic <= trace.visited[0].sic);
        // B-spline refit spans the same space as the selected truncated-power model.
        assert!((model.fit.objective - trace.selected_model().objective).abs() < 1e-7);
        let (_, again) = stepwise_select(&data, 0.5, &config).unwrap();
        assert_eq!(trace, again);
        let json: serde_json::Value = serde_json::from_str(&trace.to_json()).unwrap();
        assert_eq!(json.as_array().unwrap().len(), trace.visited.len());
        assert!(json[0].get("knots_per_coefficient").is_some());
    }

    #[test]
    fn uniform_count_selection_prefers_needed_knots() {
        let data = kink_data(400, 0.05, 7);
        let (design, _) = select_uniform_count(&data, 0.5, 1, 6, None).unwrap();
        assert!(design.max_knot_count() >= 1);
    }
}
