//! Forward and adjoint solvers for the constraint equations.

mod burgers;
mod interface;
mod mesh;
mod tridiag;

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use burgers::{burgers_truth_initial, BurgersConfig, BurgersProblem, NEWTON_MAX_ITERS};
pub use interface::{
    assemble_full_mass, assemble_interface_problem, load_vector, manufactured_solution, steps_for_horizon,
    truth_initial_condition, DiscreteProblem, ForcingSpec,
};
pub use mesh::InterfaceMesh;
pub use tridiag::Tridiagonal;

use crate::error::{Error, Result};
use crate::weighted::{read_dense_matrix_market, write_dense_matrix_market, WeightOperator};

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// A time-discrete evolution with an adjoint, as seen by the optimizer.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;
    fn n_steps(&self) -> usize;
    fn tau(&self) -> f64;
    /// Discrete L² weight used by the misfit and the gradient.
    fn mass(&self) -> &Arc<WeightOperator>;
    fn h1_weight(&self) -> &Arc<WeightOperator>;
    /// `u^j` from `u^{j−1}`, for `1 ≤ j ≤ n`.
    fn step_forward(&self, u_prev: &DVector<f64>, j: usize) -> Result<DVector<f64>>;
    /// `u*^{j−1}` from `u*^j`, the forward state `u^j` and the observation `û^j`.
    fn step_adjoint(
        &self,
        ustar_next: &DVector<f64>,
        forward: &DVector<f64>,
        obs: &DVector<f64>,
        j: usize,
    ) -> Result<DVector<f64>>;

    /// Runs the forward model from `u0`, returning `u^1, …, u^n`.
    fn trajectory(&self, u0: &DVector<f64>) -> Result<Trajectory> {
        check_len("initial condition", self.dim(), u0.len())?;
        let mut snapshots = Vec::with_capacity(self.n_steps());
        let mut u = u0.clone();
        for j in 1..=self.n_steps() {
            u = self.step_forward(&u, j)?;
            snapshots.push(u.clone());
        }
        Ok(Trajectory {
            snapshots,
            tau: self.tau(),
        })
    }
}

/// Forward states `u^1, …, u^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<DVector<f64>>,
    pub tau: f64,
}

const TRAJ_MAGIC: &[u8; 8] = b"PODTRAJ1";

impl Trajectory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.len())
    }

    pub fn is_finite(&self) -> bool {
        self.snapshots.iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.snapshots)
    }

    pub fn from_matrix(matrix: &DMatrix<f64>, tau: f64) -> Self {
        Self {
            snapshots: matrix.column_iter().map(|c| c.into_owned()).collect(),
            tau,
        }
    }

    /// Dense Matrix Market dump, one column per time level.
    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> Result<()> {
        write_dense_matrix_market(&self.to_matrix(), path)
    }

    pub fn read_matrix_market(path: impl AsRef<Path>, tau: f64) -> Result<Self> {
        Ok(Self::from_matrix(&read_dense_matrix_market(path)?, tau))
    }

    /// Raw little-endian dump: magic, `m` and `n` as u64, `tau`, then the
    /// snapshots one after the other.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(TRAJ_MAGIC)?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.tau.to_le_bytes())?;
        for s in &self.snapshots {
            for v in s.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TRAJ_MAGIC {
            return Err(Error::Format("not a trajectory dump".into()));
        }
        let mut buf = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8]> {
            r.read_exact(&mut buf)?;
            Ok(buf)
        };
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let tau = f64::from_le_bytes(next(&mut r)?);
        let mut snapshots = Vec::with_capacity(n);
        for _ in 0..n {
            let mut s = DVector::zeros(m);
            for v in s.iter_mut() {
                *v = f64::from_le_bytes(next(&mut r)?);
            }
            snapshots.push(s);
        }
        Ok(Self { snapshots, tau })
    }
}

/// Noisy observations `û^j = u^j + η^j`, `j = 1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub values: Vec<DVector<f64>>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn synth_observations(truth: &Trajectory, noise_sigma: f64, seed: u64) -> Result<ObservationSet> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sigma must be nonnegative, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = if noise_sigma == 0.0 {
        truth.snapshots.clone()
    } else {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        truth
            .snapshots
            .iter()
            .map(|u| u.map(|v| v + normal.sample(&mut rng)))
            .collect()
    };
    Ok(ObservationSet {
        values,
        noise_sigma,
        seed,
    })
}
