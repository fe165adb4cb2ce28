use nalgebra::DVector;

use crate::error::{Error, Result};

/// Tridiagonal matrix. `lower[i]` sits at `(i + 1, i)`, `upper[i]` at `(i, i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n.saturating_sub(1)],
            diag: vec![0.0; n],
            upper: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn transpose(&self) -> Self {
        Self {
            lower: self.upper.clone(),
            diag: self.diag.clone(),
            upper: self.lower.clone(),
        }
    }

    /// `self + s·other`.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        let comb = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + s * y).collect();
        Self {
            lower: comb(&self.lower, &other.lower),
            diag: comb(&self.diag, &other.diag),
            upper: comb(&self.upper, &other.upper),
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |i, _| {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            s
        })
    }

    /// Gaussian elimination with partial pivoting (one extra superdiagonal of fill).
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dim();
        if n == 0 {
            return Ok(DVector::zeros(0));
        }
        let mut d = self.diag.clone();
        let mut du = self.upper.clone();
        du.push(0.0);
        let mut du2 = vec![0.0; n];
        let mut dl = self.lower.clone();
        let mut x = b.clone();
        for i in 0..n - 1 {
            if dl[i].abs() > d[i].abs() {
                // Swap rows i and i + 1.
                let f = d[i] / dl[i];
                d[i] = dl[i];
                let tmp = d[i + 1];
                d[i + 1] = du[i] - f * tmp;
                du2[i] = du[i + 1];
                du[i + 1] *= -f;
                du[i] = tmp;
                x.swap_rows(i, i + 1);
                x[i + 1] -= f * x[i];
                dl[i] = f;
            } else {
                if d[i] == 0.0 {
                    return Err(Error::SingularSystem);
                }
                let f = dl[i] / d[i];
                d[i + 1] -= f * du[i];
                x[i + 1] -= f * x[i];
                dl[i] = f;
            }
        }
        if d[n - 1] == 0.0 {
            return Err(Error::SingularSystem);
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            if i + 1 < n {
                s -= du[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= du2[i] * x[i + 2];
            }
            x[i] = s / d[i];
        }
        Ok(x)
    }
}
