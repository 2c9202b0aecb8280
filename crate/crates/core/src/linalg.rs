//! Small dense helpers shared by the solver and the tests of fit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VcqrError};

/// Greedy left-to-right selection of linearly independent columns
/// (modified Gram–Schmidt with reorthogonalization).
pub(crate) fn independent_columns(x: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let n = x.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).clone_owned();
        let norm0 = col.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = col;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > rel_tol * norm0 && n > 0 {
            basis.push(v / norm);
            keep.push(j);
        }
    }
    keep
}

/// Columns `cols` of `x`.
pub(crate) fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

/// `xᵀ x`.
pub(crate) fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x)
}

/// Schur complement `Q22 − Q21 Q11⁻¹ Q12` of the trailing block of a symmetric
/// matrix whose leading block has size `k`.
pub(crate) fn schur_trailing(q: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let w = q.nrows();
    let q11 = q.view((0, 0), (k, k)).clone_owned();
    let q12 = q.view((0, k), (k, w - k)).clone_owned();
    let q22 = q.view((k, k), (w - k, w - k)).clone_owned();
    if k == 0 {
        return Ok(q22);
    }
    let chol = q11
        .cholesky()
        .ok_or_else(|| VcqrError::Singular("leading Gram block is not positive definite".into()))?;
    let sol = chol.solve(&q12);
    Ok(q22 - q12.transpose() * sol)
}

/// Permutes `q` so that the columns in `block` come last, preserving order.
pub(crate) fn block_last(q: &DMatrix<f64>, block: &[usize]) -> DMatrix<f64> {
    let mut order: Vec<usize> = (0..q.nrows()).filter(|i| !block.contains(i)).collect();
    order.extend_from_slice(block);
    DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(order[i], order[j])])
}

/// Score quadratic form `s̃ᵀ S⁻¹ s̃` with `s̃ = x2ᵀ scores` and `S` the Schur
/// complement of the `x2` block in the Gram matrix of `[x1, x2]`. A column of
/// `x2` whose component orthogonal to `x1` and the earlier `x2` columns falls
/// below `rel_tol` of its norm is reported as `Singular`.
pub(crate) fn score_quadratic_form(x1: &DMatrix<f64>, x2: &DMatrix<f64>, scores: &[f64], rel_tol: f64) -> Result<f64> {
    let keep = independent_columns(x1, 1e-10);
    let mut r2 = x2.clone();
    if !keep.is_empty() {
        let q = select_columns(x1, &keep).qr().q();
        let proj = &q * q.tr_mul(x2);
        r2 -= proj;
        // Second pass for columns that are nearly inside span(x1).
        let proj = &q * q.tr_mul(&r2);
        r2 -= proj;
    }
    let s = r2.tr_mul(&r2);
    let chol = s.clone().cholesky();
    let norms: Vec<f64> = x2.column_iter().map(|c| c.norm_squared()).collect();
    let singular = || VcqrError::Singular("candidate columns are collinear with the design".into());
    let chol = chol.ok_or_else(singular)?;
    let l = chol.l();
    for (i, &n2) in norms.iter().enumerate() {
        if n2 == 0.0 || l[(i, i)] * l[(i, i)] <= rel_tol * n2 {
            return Err(singular());
        }
    }
    let sv = DVector::from_column_slice(scores);
    let st = x2.tr_mul(&sv);
    Ok(st.dot(&chol.solve(&st)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_form_matches_explicit_schur() {
        let x1 = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let x2 = DMatrix::from_fn(12, 2, |i, j| ((i * (j + 3)) % 5) as f64);
        let sc: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.5 } else { -0.5 }).collect();
        let mut full = DMatrix::zeros(12, 4);
        full.view_mut((0, 0), (12, 2)).copy_from(&x1);
        full.view_mut((0, 2), (12, 2)).copy_from(&x2);
        let schur = schur_trailing(&gram(&full), 2).unwrap();
        let st = x2.tr_mul(&DVector::from_column_slice(&sc));
        let direct = st.dot(&(schur.try_inverse().unwrap() * &st));
        let got = score_quadratic_form(&x1, &x2, &sc, 1e-10).unwrap();
        assert!((got - direct).abs() < 1e-9 * direct.abs().max(1.0));
        let dup = x1.columns(1, 1).clone_owned();
        assert!(score_quadratic_form(&x1, &dup, &sc, 1e-10).is_err());
    }

    #[test]
    fn drops_dependent_columns() {
        let x = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 2.0, 3.0, 0.0, //
                1.0, 0.0, 1.0, 0.0, //
                1.0, 1.0, 2.0, 0.0, //
                1.0, 5.0, 6.0, 0.0,
            ],
        );
        assert_eq!(independent_columns(&x, 1e-10), vec![0, 1]);
    }

    #[test]
    fn schur_matches_inverse_block() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let s = schur_trailing(&a, 1).unwrap();
        let inv = a.clone().try_inverse().unwrap();
        let blk = inv.view((1, 1), (2, 2)).clone_owned().try_inverse().unwrap();
        assert!((s - blk).norm() < 1e-12);
    }
}
