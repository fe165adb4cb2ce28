use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::ipod::{IpodState, IpodTolerances};
use crate::weighted::WeightOperator;

/// Streaming store for a forward trajectory. Snapshots are scaled by `√τ`
/// before compression so that the Hilbert-Schmidt norm of the stream is the
/// discrete `L²(0, T; L²)` norm of the trajectory. Leading zero snapshots
/// (which cannot seed a basis) are only counted.
#[derive(Debug)]
pub struct CompressedTrajectory {
    tau: f64,
    weight: Arc<WeightOperator>,
    tols: IpodTolerances,
    leading_zeros: usize,
    state: Option<IpodState>,
}

impl CompressedTrajectory {
    pub fn new(weight: Arc<WeightOperator>, tols: IpodTolerances, tau: f64) -> Result<Self> {
        tols.validate()?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        Ok(Self {
            tau,
            weight,
            tols,
            leading_zeros: 0,
            state: None,
        })
    }

    pub fn push(&mut self, u: &DVector<f64>) -> Result<()> {
        let scaled = u * self.tau.sqrt();
        match &mut self.state {
            Some(state) => {
                state.update(&scaled)?;
            }
            None if self.weight.norm_sq(&scaled) == 0.0 => {
                if u.len() != self.weight.dim() {
                    return Err(Error::DimensionMismatch {
                        context: "trajectory compression",
                        expected: self.weight.dim(),
                        actual: u.len(),
                    });
                }
                self.leading_zeros += 1;
            }
            None => {
                self.state = Some(IpodState::init(&scaled, Arc::clone(&self.weight), self.tols)?);
            }
        }
        Ok(())
    }

    pub fn finalize(&mut self) {
        if let Some(state) = &mut self.state {
            state.finalize();
            let bound = state.error_bound();
            let norm = state.hs_sq_stream().sqrt();
            if bound > 0.1 * norm {
                log::warn!("compression error bound {bound:.3e} exceeds 10% of the trajectory norm {norm:.3e}");
            }
        }
    }

    pub fn len(&self) -> usize {
        self.leading_zeros + self.state.as_ref().map_or(0, IpodState::count)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshot `u^j`, `1 ≤ j ≤ len`.
    pub fn reconstruct(&self, j: usize) -> Result<DVector<f64>> {
        if j == 0 || j > self.len() {
            return Err(Error::IndexOutOfRange {
                index: j,
                count: self.len(),
            });
        }
        if j <= self.leading_zeros {
            return Ok(DVector::zeros(self.weight.dim()));
        }
        let state = self.state.as_ref().expect("nonzero snapshot was ingested");
        state.reconstruct(j - self.leading_zeros, self.tau)
    }

    pub fn state(&self) -> Option<&IpodState> {
        self.state.as_ref()
    }

    pub fn rank(&self) -> usize {
        self.state.as_ref().map_or(0, IpodState::rank)
    }

    pub fn e_p(&self) -> f64 {
        self.state.as_ref().map_or(0.0, IpodState::e_p)
    }

    pub fn e_sv(&self) -> f64 {
        self.state.as_ref().map_or(0.0, IpodState::e_sv)
    }

    pub fn error_bound(&self) -> f64 {
        self.e_p() + self.e_sv()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_zeros_are_reproduced() {
        let wt = Arc::new(WeightOperator::diagonal(&[1.0, 2.0, 0.5]).unwrap());
        let mut c = CompressedTrajectory::new(wt, IpodTolerances::lossless(), 0.25).unwrap();
        let zero = DVector::zeros(3);
        let a = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let b = DVector::from_vec(vec![0.5, 0.0, 1.0]);
        for u in [&zero, &zero, &a, &zero, &b] {
            c.push(u).unwrap();
        }
        c.finalize();
        assert_eq!(c.len(), 5);
        assert_eq!(c.reconstruct(1).unwrap(), zero);
        assert!((c.reconstruct(3).unwrap() - &a).amax() < 1e-13);
        assert!(c.reconstruct(4).unwrap().amax() < 1e-13);
        assert!((c.reconstruct(5).unwrap() - &b).amax() < 1e-13);
        assert!(c.reconstruct(6).is_err());
        assert!(c.push(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn all_zero_stream() {
        let wt = Arc::new(WeightOperator::identity(2));
        let mut c = CompressedTrajectory::new(wt, IpodTolerances::default(), 1.0).unwrap();
        c.push(&DVector::zeros(2)).unwrap();
        c.finalize();
        assert_eq!((c.len(), c.rank()), (1, 0));
        assert_eq!(c.error_bound(), 0.0);
    }
}
