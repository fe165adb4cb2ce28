//! Sparse symmetric helpers: mat-vec products, a reverse Cuthill-McKee
//! ordering and a cached Cholesky factor built on top of it.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// `y = A x` for a CSR matrix.
pub fn csr_mul_vec(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    debug_assert_eq!(a.ncols(), x.len());
    let (offsets, cols, vals) = a.csr_data();
    DVector::from_iterator(
        a.nrows(),
        (0..a.nrows()).map(|r| {
            let range = offsets[r]..offsets[r + 1];
            cols[range.clone()]
                .iter()
                .zip(&vals[range])
                .map(|(&c, &v)| v * x[c])
                .sum()
        }),
    )
}

/// `Y = A X` for a CSR matrix and a dense right-hand side.
pub fn csr_mul_mat(a: &CsrMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.ncols(), x.nrows());
    let (offsets, cols, vals) = a.csr_data();
    let mut y = DMatrix::zeros(a.nrows(), x.ncols());
    for k in 0..x.ncols() {
        let xk = x.column(k);
        for r in 0..a.nrows() {
            let mut acc = 0.0;
            for p in offsets[r]..offsets[r + 1] {
                acc += vals[p] * xk[cols[p]];
            }
            y[(r, k)] = acc;
        }
    }
    y
}

/// Largest entry magnitude of `A - Aᵀ` relative to the largest entry of `A`.
pub fn symmetry_defect(a: &CsrMatrix<f64>) -> f64 {
    let scale = a.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let at = a.transpose();
    let mut worst = 0.0_f64;
    for r in 0..a.nrows() {
        let row = a.row(r);
        let trow = at.row(r);
        // Patterns can differ; merge both rows.
        let (mut i, mut j) = (0, 0);
        let (ci, vi) = (row.col_indices(), row.values());
        let (cj, vj) = (trow.col_indices(), trow.values());
        while i < ci.len() || j < cj.len() {
            let d = match (ci.get(i), cj.get(j)) {
                (Some(&a_c), Some(&b_c)) if a_c == b_c => {
                    let d = vi[i] - vj[j];
                    i += 1;
                    j += 1;
                    d
                }
                (Some(&a_c), Some(&b_c)) if a_c < b_c => {
                    i += 1;
                    vi[i - 1]
                }
                (Some(_), None) => {
                    i += 1;
                    vi[i - 1]
                }
                _ => {
                    j += 1;
                    vj[j - 1]
                }
            };
            worst = worst.max(d.abs());
        }
    }
    worst / scale
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern of `a`.
///
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|r| {
            a.row(r)
                .col_indices()
                .iter()
                .copied()
                .filter(|&c| c != r)
                .collect()
        })
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut scratch = vec![usize::MAX; n];

    while order.len() < n {
        // Lowest-degree unvisited node, then walk to a pseudo-peripheral node.
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node exists");
        let start = pseudo_peripheral(seed, &adj, &degree, &visited, &mut scratch);

        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(node) = queue.pop_front() {
            order.push(node);
            let mut next: Vec<usize> = adj[node].iter().copied().filter(|&c| !visited[c]).collect();
            next.sort_by_key(|&c| (degree[c], c));
            for c in next {
                visited[c] = true;
                queue.push_back(c);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(
    seed: usize,
    adj: &[Vec<usize>],
    degree: &[usize],
    excluded: &[bool],
    level: &mut [usize],
) -> usize {
    let mut current = seed;
    let mut depth = 0;
    for _ in 0..8 {
        let (d, last_level) = bfs_levels(current, adj, excluded, level);
        let candidate = last_level
            .into_iter()
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(current);
        if d <= depth {
            break;
        }
        depth = d;
        current = candidate;
    }
    current
}

fn bfs_levels(
    start: usize,
    adj: &[Vec<usize>],
    excluded: &[bool],
    level: &mut [usize],
) -> (usize, Vec<usize>) {
    let mut touched = vec![start];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut max_level = 0;
    while let Some(node) = queue.pop_front() {
        for &c in &adj[node] {
            if !excluded[c] && level[c] == usize::MAX {
                level[c] = level[node] + 1;
                max_level = max_level.max(level[c]);
                touched.push(c);
                queue.push_back(c);
            }
        }
    }
    let last: Vec<usize> = touched.iter().copied().filter(|&i| level[i] == max_level).collect();
    for i in touched {
        level[i] = usize::MAX;
    }
    (max_level, last)
}

/// Cholesky factorization `P A Pᵀ = L Lᵀ` of a sparse SPD matrix under a
/// reverse Cuthill-McKee permutation `P`.
///
/// The factor of `A` itself is `F = Pᵀ L`, so `A = F Fᵀ`.
#[derive(Clone)]
pub struct SpdFactor {
    perm: Vec<usize>,
    l: CscMatrix<f64>,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor")
            .field("dim", &self.perm.len())
            .field("factor_nnz", &self.l.nnz())
            .finish()
    }
}

impl SpdFactor {
    pub fn new(a: &CsrMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                context: "cholesky (square)",
                expected: a.nrows(),
                actual: a.ncols(),
            });
        }
        let n = a.nrows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut coo = CooMatrix::new(n, n);
        for (r, c, &v) in a.triplet_iter() {
            coo.push(inv[r], inv[c], v);
        }
        let permuted = CscMatrix::from(&coo);
        let chol = CscCholesky::factor(&permuted).map_err(|_| Error::WeightNotSpd)?;
        Ok(Self {
            perm,
            l: chol.take_l(),
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored entries in the triangular factor.
    pub fn factor_nnz(&self) -> usize {
        self.l.nnz()
    }

    fn lower_solve_in_place(&self, y: &mut [f64]) {
        let (offsets, rows, vals) = self.l.csc_data();
        for j in 0..y.len() {
            let start = offsets[j];
            let yj = y[j] / vals[start];
            y[j] = yj;
            for p in start + 1..offsets[j + 1] {
                y[rows[p]] -= vals[p] * yj;
            }
        }
    }

    fn upper_solve_in_place(&self, x: &mut [f64]) {
        let (offsets, rows, vals) = self.l.csc_data();
        for j in (0..x.len()).rev() {
            let start = offsets[j];
            let mut acc = x[j];
            for p in start + 1..offsets[j + 1] {
                acc -= vals[p] * x[rows[p]];
            }
            x[j] = acc / vals[start];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.lower_solve_in_place(&mut y);
        self.upper_solve_in_place(&mut y);
        let mut x = DVector::zeros(y.len());
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// `Fᵀ x = Lᵀ P x`.
    pub fn factor_transpose_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let px: Vec<f64> = self.perm.iter().map(|&old| x[old]).collect();
        let (offsets, rows, vals) = self.l.csc_data();
        DVector::from_iterator(
            px.len(),
            (0..px.len()).map(|j| {
                (offsets[j]..offsets[j + 1])
                    .map(|p| vals[p] * px[rows[p]])
                    .sum::<f64>()
            }),
        )
    }

    /// `F⁻ᵀ y = Pᵀ L⁻ᵀ y`.
    pub fn factor_transpose_solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut w: Vec<f64> = y.iter().copied().collect();
        self.upper_solve_in_place(&mut w);
        let mut z = DVector::zeros(w.len());
        for (new, &old) in self.perm.iter().enumerate() {
            z[old] = w[new];
        }
        z
    }
}
