use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Flips each column so its largest-magnitude entry (lowest row on ties) is
/// positive.
pub(crate) fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Symmetric eigendecomposition with eigenpairs ordered by eigenvalue,
/// descending when `descending` is set, ascending otherwise. Ties keep the
/// solver's index order.
pub(crate) fn sorted_eigh(m: DMatrix<f64>, descending: bool) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::LinearAlgebraFailure("non-finite matrix entries".into()));
    }
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let o = eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Solves the symmetric-definite pencil `A v = λ B v`.
///
/// `B` is Cholesky-factored as `L Lᵀ`, the problem is reduced to the
/// standard symmetric one `L⁻¹ A L⁻ᵀ u = λ u`, and `v = L⁻ᵀ u`. Returned
/// eigenvalues are descending; eigenvector columns satisfy `vᵀ B v = 1` and
/// carry the positive-largest-entry sign convention.
pub fn generalized_eigh(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "pencil needs two square matrices of equal size, got {}×{} and {}×{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebraFailure("right-hand matrix is not positive definite".into()))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::LinearAlgebraFailure("singular Cholesky factor".into()))?;
    let mut c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::LinearAlgebraFailure("singular Cholesky factor".into()))?;
    symmetrize(&mut c);
    let (values, u) = sorted_eigh(c, true)?;
    let mut v = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::LinearAlgebraFailure("singular Cholesky factor".into()))?;
    fix_signs(&mut v);
    Ok((values, v))
}
