//! Dense SVD through faer. nalgebra's bidiagonal SVD pairs singular values
//! with the wrong vectors on some graded triangular matrices, which the
//! streaming update produces routinely.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Thin factorization `A = U diag(s) Vᵀ`, `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn thin_svd(a: &DMatrix<f64>) -> Result<Svd> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(m, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("SVD input"));
    }
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = fa
        .thin_svd()
        .map_err(|e| Error::InvalidParameter(format!("SVD did not converge: {e:?}")))?;
    let (fu, fs, fv) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| fs[y].total_cmp(&fs[x]));
    Ok(Svd {
        u: DMatrix::from_fn(m, k, |i, c| fu[(i, order[c])]),
        s: DVector::from_fn(k, |c, _| fs[order[c]]),
        v: DMatrix::from_fn(n, k, |i, c| fv[(i, order[c])]),
    })
}

/// Eigendecomposition `A = Q diag(λ) Qᵀ` of a symmetric matrix, `λ`
/// nondecreasing. Only the lower triangle is read.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (m, n) = a.shape();
    if m != n {
        return Err(Error::DimensionMismatch {
            context: "symmetric eigendecomposition",
            expected: m,
            actual: n,
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("eigenvalue input"));
    }
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let fa = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let evd = fa
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::InvalidParameter(format!("eigensolver did not converge: {e:?}")))?;
    let (fs, fu) = (evd.S().column_vector(), evd.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| fs[x].total_cmp(&fs[y]));
    Ok((
        DVector::from_fn(n, |c, _| fs[order[c]]),
        DMatrix::from_fn(n, n, |i, c| fu[(i, order[c])]),
    ))
}
