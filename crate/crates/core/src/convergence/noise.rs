use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gd::descent_threshold;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseMode {
    /// `ε` times a uniformly random unit vector.
    RandomDirection,
    /// `−ε ∇J/‖∇J‖`.
    AdversarialOpposing,
    /// Opposing the gradient with magnitude
    /// `min(fraction · descent_threshold(‖∇J‖), ε)`.
    ThresholdFraction,
}

impl NoiseMode {
    pub fn name(self) -> &'static str {
        match self {
            NoiseMode::RandomDirection => "random-direction",
            NoiseMode::AdversarialOpposing => "adversarial-opposing",
            NoiseMode::ThresholdFraction => "threshold-fraction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePolicy {
    pub mode: NoiseMode,
    pub epsilon: f64,
    pub fraction: f64,
    pub seed: u64,
}

impl NoisePolicy {
    pub fn exact() -> Self {
        Self {
            mode: NoiseMode::RandomDirection,
            epsilon: 0.0,
            fraction: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise bound must be nonnegative, got {}", self.epsilon)));
        }
        if self.mode == NoiseMode::ThresholdFraction && !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::InvalidParameter(format!("threshold fraction must lie in [0, 1], got {}", self.fraction)));
        }
        Ok(())
    }
}

pub(super) struct NoiseSource {
    policy: NoisePolicy,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(policy: NoisePolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            policy,
            rng: ChaCha8Rng::seed_from_u64(policy.seed),
        })
    }

    pub fn emit(&mut self, grad: &DVector<f64>, kappa: f64, lipschitz: f64) -> Result<DVector<f64>> {
        let eps = self.policy.epsilon;
        let gnorm = grad.norm();
        let mut xi = match self.policy.mode {
            NoiseMode::RandomDirection => {
                // draw even when ε = 0 so the stream does not depend on ε
                let v = DVector::<f64>::from_fn(grad.len(), |_, _| StandardNormal.sample(&mut self.rng));
                let n = v.norm();
                if eps == 0.0 || n == 0.0 {
                    DVector::zeros(grad.len())
                } else {
                    v * (eps / n)
                }
            }
            NoiseMode::AdversarialOpposing => opposing(grad, gnorm, eps),
            NoiseMode::ThresholdFraction => {
                let mag = (self.policy.fraction * descent_threshold(gnorm, kappa, lipschitz)?).min(eps);
                opposing(grad, gnorm, mag)
            }
        };
        let mut norm = xi.norm();
        while norm > eps {
            xi *= 1.0 - f64::EPSILON;
            norm = xi.norm();
        }
        assert!(norm <= eps, "noise norm {norm} exceeds bound {eps}");
        Ok(xi)
    }
}

fn opposing(grad: &DVector<f64>, gnorm: f64, mag: f64) -> DVector<f64> {
    if gnorm == 0.0 || mag == 0.0 {
        DVector::zeros(grad.len())
    } else {
        grad * (-mag / gnorm)
    }
}
