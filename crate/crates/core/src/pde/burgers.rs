//! Viscous Burgers equation on `[0, 1]` with homogeneous Dirichlet data,
//! P1 in space and backward Euler in time. The fixture parameters below are
//! test settings of this crate, not values from an external reference.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::interface::steps_for_horizon;
use super::tridiag::Tridiagonal;
use super::{check_len, Dynamics};
use crate::error::{Error, Result};
use crate::weighted::WeightOperator;

pub const NEWTON_MAX_ITERS: usize = 25;
const NEWTON_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurgersConfig {
    pub n_cells: usize,
    pub nu: f64,
    pub tau: f64,
    pub t_final: f64,
    /// Steady source `a·sin(πx)`.
    pub forcing_amplitude: f64,
}

impl BurgersConfig {
    pub fn fixture() -> Self {
        Self {
            n_cells: 64,
            nu: 0.05,
            tau: 0.01,
            t_final: 0.5,
            forcing_amplitude: 0.0,
        }
    }
}

/// Initial state used by the Burgers fixture runs.
pub fn burgers_truth_initial(x: f64) -> f64 {
    (PI * x).sin() + 0.5 * (3.0 * PI * x).sin()
}

#[derive(Debug)]
pub struct BurgersProblem {
    pub config: BurgersConfig,
    pub h: f64,
    pub n_steps: usize,
    pub mass_tri: Tridiagonal,
    pub stiffness_tri: Tridiagonal,
    pub mass: Arc<WeightOperator>,
    pub h1_weight: Arc<WeightOperator>,
    pub forcing: DVector<f64>,
}

fn to_csr(t: &Tridiagonal) -> CsrMatrix<f64> {
    let n = t.dim();
    let mut coo = CooMatrix::new(n, n);
    for i in 0..n {
        coo.push(i, i, t.diag[i]);
        if i + 1 < n {
            coo.push(i + 1, i, t.lower[i]);
            coo.push(i, i + 1, t.upper[i]);
        }
    }
    CsrMatrix::from(&coo)
}

impl BurgersProblem {
    pub fn new(config: BurgersConfig) -> Result<Self> {
        if config.n_cells < 2 {
            return Err(Error::InvalidParameter("Burgers grid needs at least 2 cells".into()));
        }
        if !(config.nu > 0.0 && config.nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("viscosity must be positive, got {}", config.nu)));
        }
        let n_steps = steps_for_horizon(config.tau, config.t_final)?;
        let m = config.n_cells - 1;
        let h = 1.0 / config.n_cells as f64;
        let mass_tri = Tridiagonal {
            lower: vec![h / 6.0; m - 1],
            diag: vec![2.0 * h / 3.0; m],
            upper: vec![h / 6.0; m - 1],
        };
        let stiffness_tri = Tridiagonal {
            lower: vec![-1.0 / h; m - 1],
            diag: vec![2.0 / h; m],
            upper: vec![-1.0 / h; m - 1],
        };
        let h1 = mass_tri.add_scaled(1.0, &stiffness_tri);
        let shape = DVector::from_fn(m, |i, _| config.forcing_amplitude * (PI * (i + 1) as f64 * h).sin());
        let forcing = mass_tri.mul_vec(&shape);
        Ok(Self {
            mass: Arc::new(WeightOperator::explicit(to_csr(&mass_tri))?),
            h1_weight: Arc::new(WeightOperator::explicit(to_csr(&h1))?),
            config,
            h,
            n_steps,
            mass_tri,
            stiffness_tri,
            forcing,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.n_cells - 1
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (1..self.config.n_cells).map(|i| i as f64 * self.h)
    }

    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.nodes().map(f))
    }

    fn extended(u: &DVector<f64>, k: usize) -> f64 {
        // Dirichlet zeros at both ends; node k of the extended grid.
        if k == 0 || k > u.len() {
            0.0
        } else {
            u[k - 1]
        }
    }

    /// Galerkin convection `∫ u u_x φ_i`.
    pub fn convection(&self, u: &DVector<f64>) -> DVector<f64> {
        let m = self.dim();
        let mut out = DVector::zeros(m);
        for k in 0..=m {
            let (a, b) = (Self::extended(u, k), Self::extended(u, k + 1));
            if k >= 1 {
                out[k - 1] += (b - a) * (2.0 * a + b) / 6.0;
            }
            if k < m {
                out[k] += (b - a) * (a + 2.0 * b) / 6.0;
            }
        }
        out
    }

    /// Jacobian of [`Self::convection`] at `u`.
    pub fn convection_jacobian(&self, u: &DVector<f64>) -> Tridiagonal {
        let m = self.dim();
        let mut t = Tridiagonal::zeros(m);
        for k in 0..=m {
            let (a, b) = (Self::extended(u, k), Self::extended(u, k + 1));
            // Element between extended nodes k (value a) and k + 1 (value b).
            if k >= 1 {
                let r = k - 1;
                t.diag[r] += (-4.0 * a + b) / 6.0;
                if k < m {
                    t.upper[r] += (a + 2.0 * b) / 6.0;
                }
            }
            if k < m {
                let r = k;
                t.diag[r] += (-a + 4.0 * b) / 6.0;
                if k >= 1 {
                    t.lower[r - 1] += (-2.0 * a - b) / 6.0;
                }
            }
        }
        t
    }

    /// Linearized step operator `M + τνA + τN′(u)`.
    pub fn step_jacobian(&self, u: &DVector<f64>) -> Tridiagonal {
        let tau = self.config.tau;
        self.mass_tri
            .add_scaled(tau * self.config.nu, &self.stiffness_tri)
            .add_scaled(tau, &self.convection_jacobian(u))
    }

    fn residual(&self, u: &DVector<f64>, mu_prev: &DVector<f64>) -> DVector<f64> {
        let tau = self.config.tau;
        self.mass_tri.mul_vec(u) - mu_prev
            + self.stiffness_tri.mul_vec(u) * (tau * self.config.nu)
            + self.convection(u) * tau
            - &self.forcing * tau
    }

    /// One implicit step by Newton's method; returns the new state and the
    /// number of Newton corrections taken.
    pub fn forward_step_with_stats(&self, u_prev: &DVector<f64>, j: usize) -> Result<(DVector<f64>, usize)> {
        check_len("Burgers forward step", self.dim(), u_prev.len())?;
        if j == 0 || j > self.n_steps {
            return Err(Error::IndexOutOfRange {
                index: j,
                count: self.n_steps,
            });
        }
        let mu_prev = self.mass_tri.mul_vec(u_prev);
        let scale = mu_prev.amax() + self.config.tau * self.forcing.amax();
        let mut u = u_prev.clone();
        let mut r = self.residual(&u, &mu_prev);
        for it in 0..=NEWTON_MAX_ITERS {
            let rn = r.amax();
            if !rn.is_finite() {
                break;
            }
            if rn <= NEWTON_RTOL * scale {
                return Ok((u, it));
            }
            if it == NEWTON_MAX_ITERS {
                break;
            }
            let delta = self.step_jacobian(&u).solve(&r)?;
            u -= &delta;
            r = self.residual(&u, &mu_prev);
            // Converged to roundoff even if the residual test is too strict.
            if delta.amax() <= 1e-15 * u.amax() && r.amax() <= 1e3 * NEWTON_RTOL * scale {
                return Ok((u, it + 1));
            }
        }
        Err(Error::NewtonFailure {
            step: j,
            iterations: NEWTON_MAX_ITERS,
            residual: r.amax(),
        })
    }

    pub fn forward_step_burgers(&self, u_prev: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
        self.forward_step_with_stats(u_prev, j).map(|(u, _)| u)
    }

    /// Solves `(M + τνA + τN′(u^j))ᵀ u*^{j−1} = M u*^j + τ M r^j` with `r^j = û^j − u^j`.
    pub fn adjoint_step_burgers(
        &self,
        ustar_next: &DVector<f64>,
        u_forward_snapshot: &DVector<f64>,
        mismatch: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let m = self.dim();
        check_len("Burgers adjoint step", m, ustar_next.len())?;
        check_len("Burgers adjoint step", m, u_forward_snapshot.len())?;
        check_len("Burgers adjoint step", m, mismatch.len())?;
        let rhs = self.mass_tri.mul_vec(&(ustar_next + mismatch * self.config.tau));
        self.step_jacobian(u_forward_snapshot).transpose().solve(&rhs)
    }
}

impl Dynamics for BurgersProblem {
    fn dim(&self) -> usize {
        self.config.n_cells - 1
    }

    fn n_steps(&self) -> usize {
        self.n_steps
    }

    fn tau(&self) -> f64 {
        self.config.tau
    }

    fn mass(&self) -> &Arc<WeightOperator> {
        &self.mass
    }

    fn h1_weight(&self) -> &Arc<WeightOperator> {
        &self.h1_weight
    }

    fn step_forward(&self, u_prev: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
        self.forward_step_burgers(u_prev, j)
    }

    fn step_adjoint(
        &self,
        ustar_next: &DVector<f64>,
        forward: &DVector<f64>,
        obs: &DVector<f64>,
        _j: usize,
    ) -> Result<DVector<f64>> {
        self.adjoint_step_burgers(ustar_next, forward, &(obs - forward))
    }
}
