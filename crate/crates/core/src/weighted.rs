//! Weighted Euclidean geometry `ℝᵐ_M`.
//!
//! A [`WeightOperator`] is an SPD bilinear form `⟨x, y⟩_M = yᵀ M x`. The
//! identity weight reduces every operation to plain Euclidean arithmetic; an
//! explicit weight is a sparse symmetric matrix (typically a finite element
//! mass or mass+stiffness matrix) whose Cholesky factor is computed on first
//! use and cached.
//!
//! [`core_weighted_svd`] is the batch reference factorization: with
//! `M = F Fᵀ` it takes a dense SVD of `Fᵀ U = Ṽ Σ Wᵀ` and maps the left
//! vectors back through `V = F⁻ᵀ Ṽ`, so that `Vᵀ M V = I`.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::io::{load_coo_from_matrix_market_file, save_to_matrix_market_file};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use sha2::{Digest, Sha256};

use crate::dense::thin_svd;

use crate::error::{Error, Result};
use crate::sparse::{csr_mul_mat, csr_mul_vec, symmetry_defect, SpdFactor};

/// Relative floor below which singular values count as zero.
pub const CORE_CUTOFF: f64 = 1e-14;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Identity,
    Explicit,
}

#[derive(Debug, Clone)]
pub struct WeightOperator {
    dim: usize,
    matrix: Option<CsrMatrix<f64>>,
    factor: OnceLock<Option<SpdFactor>>,
}

impl WeightOperator {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            matrix: None,
            factor: OnceLock::new(),
        }
    }

    /// Wraps a sparse symmetric matrix. Positive definiteness is checked when
    /// the Cholesky factor is first requested.
    pub fn explicit(matrix: CsrMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                context: "weight matrix (square)",
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        let defect = symmetry_defect(&matrix);
        if defect > SYMMETRY_TOL {
            return Err(Error::WeightNotSymmetric { defect });
        }
        Ok(Self {
            dim: matrix.nrows(),
            matrix: Some(matrix),
            factor: OnceLock::new(),
        })
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        let n = entries.len();
        let coo = CooMatrix::try_from_triplets(n, n, (0..n).collect(), (0..n).collect(), entries.to_vec())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Self::explicit(CsrMatrix::from(&coo))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> WeightKind {
        if self.matrix.is_some() {
            WeightKind::Explicit
        } else {
            WeightKind::Identity
        }
    }

    pub fn matrix(&self) -> Option<&CsrMatrix<f64>> {
        self.matrix.as_ref()
    }

    /// Cached Cholesky factor; `None` for the identity weight.
    pub fn cholesky(&self) -> Result<Option<&SpdFactor>> {
        let Some(matrix) = &self.matrix else {
            return Ok(None);
        };
        self.factor
            .get_or_init(|| SpdFactor::new(matrix).ok())
            .as_ref()
            .map(Some)
            .ok_or(Error::WeightNotSpd)
    }

    fn check_len(&self, context: &'static str, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim,
                actual: len,
            });
        }
        Ok(())
    }

    /// `M x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.matrix {
            Some(m) => csr_mul_vec(m, x),
            None => x.clone(),
        }
    }

    /// `M X`.
    pub fn apply_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.matrix {
            Some(m) => csr_mul_mat(m, x),
            None => x.clone(),
        }
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match &self.matrix {
            Some(m) => csr_mul_vec(m, x).dot(y),
            None => x.dot(y),
        }
    }

    pub fn norm_sq(&self, x: &DVector<f64>) -> f64 {
        self.inner(x, x).max(0.0)
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.norm_sq(x).sqrt()
    }

    /// SHA-256 over the dimension and the sorted triplets of the matrix.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        if let Some(m) = &self.matrix {
            for (r, c, v) in m.triplet_iter() {
                h.update((r as u64).to_le_bytes());
                h.update((c as u64).to_le_bytes());
                h.update(v.to_le_bytes());
            }
        } else {
            h.update(b"identity");
        }
        h.finalize().into()
    }

    /// Reads a weight matrix in Matrix Market coordinate format.
    pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<Self> {
        let coo: CooMatrix<f64> =
            load_coo_from_matrix_market_file(path).map_err(|e| Error::MatrixMarket(e.to_string()))?;
        Self::explicit(CsrMatrix::from(&coo))
    }

    /// Writes the weight matrix in Matrix Market coordinate format. The
    /// identity weight is written explicitly.
    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> Result<()> {
        match &self.matrix {
            Some(m) => save_to_matrix_market_file(m, path)?,
            None => save_to_matrix_market_file(&CsrMatrix::<f64>::identity(self.dim), path)?,
        }
        Ok(())
    }
}

/// Writes a dense matrix as a Matrix Market coordinate file (every entry
/// listed, 1-based indices).
pub fn write_dense_matrix_market(matrix: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut coo = CooMatrix::new(matrix.nrows(), matrix.ncols());
    for c in 0..matrix.ncols() {
        for r in 0..matrix.nrows() {
            coo.push(r, c, matrix[(r, c)]);
        }
    }
    save_to_matrix_market_file(&coo, path)?;
    Ok(())
}

/// Reads a Matrix Market coordinate file into a dense matrix.
pub fn read_dense_matrix_market(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let coo: CooMatrix<f64> =
        load_coo_from_matrix_market_file(path).map_err(|e| Error::MatrixMarket(e.to_string()))?;
    let mut dense = DMatrix::zeros(coo.nrows(), coo.ncols());
    for (r, c, &v) in coo.triplet_iter() {
        dense[(r, c)] += v;
    }
    Ok(dense)
}

/// Core M-weighted SVD `U = V diag(σ) Wᵀ` with `Vᵀ M V = I`, `Wᵀ W = I`.
#[derive(Debug, Clone)]
pub struct WeightedFactorization {
    pub v: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub w: DMatrix<f64>,
    pub weight: Arc<WeightOperator>,
}

impl WeightedFactorization {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut vs = self.v.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            vs.column_mut(k).scale_mut(*s);
        }
        vs * self.w.transpose()
    }

    /// Max-entry defects of `VᵀMV − I` and `WᵀW − I`.
    pub fn orthonormality_defects(&self) -> (f64, f64) {
        let dv = m_orthonormality_defect(&self.v, &self.weight).unwrap_or(f64::INFINITY);
        let dw = m_orthonormality_defect(&self.w, &WeightOperator::identity(self.w.nrows()))
            .unwrap_or(f64::INFINITY);
        (dv, dw)
    }

    /// All three factorization invariants at tolerance `tol`.
    pub fn satisfies_invariants(&self, tol: f64) -> bool {
        let (dv, dw) = self.orthonormality_defects();
        let positive = self.sigma.iter().all(|&s| s > 0.0);
        let ordered = self.sigma.as_slice().windows(2).all(|p| p[0] >= p[1]);
        dv <= tol && dw <= tol && positive && ordered
    }
}

/// `yᵀ M x`.
pub fn weighted_inner(x: &DVector<f64>, y: &DVector<f64>, wt: &WeightOperator) -> Result<f64> {
    wt.check_len("weighted_inner (x)", x.len())?;
    wt.check_len("weighted_inner (y)", y.len())?;
    Ok(wt.inner(x, y))
}

/// Max-entry magnitude of `Vᵀ M V − I`.
pub fn m_orthonormality_defect(v: &DMatrix<f64>, wt: &WeightOperator) -> Result<f64> {
    wt.check_len("m_orthonormality_defect", v.nrows())?;
    if v.ncols() > v.nrows() {
        return Err(Error::DimensionMismatch {
            context: "m_orthonormality_defect (columns ≤ rows)",
            expected: v.nrows(),
            actual: v.ncols(),
        });
    }
    let gram = v.transpose() * wt.apply_mat(v);
    let mut worst = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    Ok(worst)
}

/// `‖U‖²_HS = Σⱼ ‖uⱼ‖²_M`, accumulated column by column.
pub fn hs_norm_sq(u: &DMatrix<f64>, wt: &WeightOperator) -> Result<f64> {
    wt.check_len("hs_norm_sq", u.nrows())?;
    Ok(u.column_iter().map(|c| wt.norm_sq(&c.into_owned())).sum())
}

/// Batch core M-weighted SVD.
pub fn core_weighted_svd(u: &DMatrix<f64>, wt: &Arc<WeightOperator>) -> Result<WeightedFactorization> {
    wt.check_len("core_weighted_svd", u.nrows())?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("core_weighted_svd input"));
    }
    if u.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let factor = wt.cholesky()?;

    let scaled = match factor {
        Some(f) => {
            let mut b = DMatrix::zeros(u.nrows(), u.ncols());
            for (k, col) in u.column_iter().enumerate() {
                b.set_column(k, &f.factor_transpose_mul(&col.into_owned()));
            }
            b
        }
        None => u.clone(),
    };

    let svd = thin_svd(&scaled)?;
    let (left, right) = (&svd.u, &svd.v);
    let s_max = svd.s.max();
    if s_max <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let rank = svd
        .s
        .iter()
        .take_while(|&&s| s > CORE_CUTOFF * s_max)
        .count();

    let mut v = DMatrix::zeros(u.nrows(), rank);
    let mut w = right.columns(0, rank).into_owned();
    for k in 0..rank {
        let col = left.column(k).into_owned();
        let mapped = match factor {
            Some(f) => f.factor_transpose_solve(&col),
            None => col,
        };
        v.set_column(k, &mapped);
    }
    for k in 0..rank {
        if leading_sign(&w.column(k).into_owned()) < 0.0 {
            w.column_mut(k).neg_mut();
            v.column_mut(k).neg_mut();
        }
    }

    Ok(WeightedFactorization {
        v,
        sigma: svd.s.rows(0, rank).into_owned(),
        w,
        weight: Arc::clone(wt),
    })
}

/// Sign of the first entry that is not negligible relative to the column.
fn leading_sign(col: &DVector<f64>) -> f64 {
    let scale = col.amax();
    col.iter()
        .find(|v| v.abs() > 1e-12 * scale)
        .map_or(1.0, |v| v.signum())
}
