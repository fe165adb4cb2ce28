use nalgebra::DVector;

use super::noise::NoiseSource;
use super::{NoisePolicy, ObjectiveSpec};
use crate::error::{Error, Result};

/// Everything recorded by `inexact_gd`. Iterate-indexed vectors have
/// `k + 1` entries, `noise_norms` has `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GdTrace {
    pub iterates: Vec<DVector<f64>>,
    pub objectives: Vec<f64>,
    /// `J(x^(i)) − inf J`.
    pub gaps: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub noise_norms: Vec<f64>,
}

impl GdTrace {
    pub fn iterations(&self) -> usize {
        self.noise_norms.len()
    }
}

/// Noise magnitude below which a step is guaranteed to decrease the
/// objective: `(2 − κL)/(4 − κL) · ‖∇J‖`. Defined up to `κL = 1`.
pub fn descent_threshold(grad_norm: f64, kappa: f64, lipschitz: f64) -> Result<f64> {
    let kl = kappa * lipschitz;
    if !(kappa > 0.0 && lipschitz > 0.0) || kl > 1.0 + 1e-12 {
        return Err(Error::StepSizeDomain { kappa, lipschitz });
    }
    Ok((2.0 - kl) / (4.0 - kl) * grad_norm)
}

/// `x^(i+1) = x^(i) − κ(∇J(x^(i)) + ξ^(i))` for exactly `k` steps.
pub fn inexact_gd(
    spec: &ObjectiveSpec,
    kappa: f64,
    policy: &NoisePolicy,
    k: usize,
    x0: &DVector<f64>,
) -> Result<GdTrace> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {kappa}")));
    }
    crate::pde::check_len("starting point", spec.dim(), x0.len())?;
    let mut noise = NoiseSource::new(*policy)?;
    let mut trace = GdTrace {
        iterates: Vec::with_capacity(k + 1),
        objectives: Vec::with_capacity(k + 1),
        gaps: Vec::with_capacity(k + 1),
        grad_norms: Vec::with_capacity(k + 1),
        noise_norms: Vec::with_capacity(k),
    };
    let mut x = x0.clone();
    let mut g = spec.gradient(&x);
    trace.record(spec, &x, &g);
    for i in 0..k {
        let xi = noise.emit(&g, kappa, spec.lipschitz)?;
        trace.noise_norms.push(xi.norm());
        x -= (&g + xi) * kappa;
        g = spec.gradient(&x);
        let objective = spec.value(&x);
        if !objective.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: i + 1,
                objective,
                trace: trace.objectives,
            });
        }
        trace.record(spec, &x, &g);
    }
    Ok(trace)
}

impl GdTrace {
    fn record(&mut self, spec: &ObjectiveSpec, x: &DVector<f64>, g: &DVector<f64>) {
        let gap = spec.gap(x);
        self.objectives.push(spec.inf_value + gap);
        self.gaps.push(gap);
        self.grad_norms.push(g.norm());
        self.iterates.push(x.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::super::NoiseMode;
    use super::*;

    fn half_norm_sq(n: usize) -> ObjectiveSpec {
        ObjectiveSpec::from_spectrum(&vec![1.0; n], DVector::zeros(n), None).unwrap()
    }

    #[test]
    fn threshold_values() {
        assert!((descent_threshold(3.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((descent_threshold(1.0, 1e-12, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((descent_threshold(1.0, 0.25, 2.0).unwrap() - 1.5 / 3.5).abs() < 1e-15);
        assert!(matches!(descent_threshold(1.0, 0.6, 2.0), Err(Error::StepSizeDomain { .. })));
        assert!(descent_threshold(1.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn unit_step_on_half_norm_sq_lands_at_origin() {
        let spec = half_norm_sq(3);
        let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let t = inexact_gd(&spec, 1.0, &NoisePolicy::exact(), 3, &x0).unwrap();
        assert_eq!(t.iterates.len(), 4);
        assert_eq!(t.iterates[1], DVector::zeros(3));
        assert_eq!(t.gaps[1], 0.0);
    }

    #[test]
    fn zero_noise_is_plain_descent() {
        let spec = ObjectiveSpec::from_spectrum(&[0.5, 2.0, 3.0], DVector::from_vec(vec![1.0, 0.0, -1.0]), Some(3)).unwrap();
        let x0 = DVector::from_vec(vec![2.0, 2.0, 2.0]);
        let kappa = 0.2;
        let policy = NoisePolicy {
            mode: NoiseMode::RandomDirection,
            epsilon: 0.0,
            fraction: 0.0,
            seed: 77,
        };
        let t = inexact_gd(&spec, kappa, &policy, 10, &x0).unwrap();
        let mut x = x0.clone();
        for i in 0..10 {
            x -= spec.gradient(&x) * kappa;
            assert_eq!(t.iterates[i + 1], x);
        }
        assert!(t.noise_norms.iter().all(|&n| n == 0.0));
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let spec = ObjectiveSpec::pl_nonconvex(DVector::from_vec(vec![1.0, 2.0, 5.0])).unwrap();
        let policy = NoisePolicy {
            mode: NoiseMode::RandomDirection,
            epsilon: 0.3,
            fraction: 0.0,
            seed: 5,
        };
        let x0 = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        let kappa = 1.0 / spec.lipschitz;
        let a = inexact_gd(&spec, kappa, &policy, 25, &x0).unwrap();
        let b = inexact_gd(&spec, kappa, &policy, 25, &x0).unwrap();
        assert_eq!(a, b);
        let c = inexact_gd(&spec, kappa, &NoisePolicy { seed: 6, ..policy }, 25, &x0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn blow_up_reports_divergence() {
        let spec = half_norm_sq(2);
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        match inexact_gd(&spec, 1e200, &NoisePolicy::exact(), 5, &x0) {
            Err(Error::Divergence { iteration, trace, .. }) => {
                assert!(iteration >= 1);
                assert_eq!(trace.len(), iteration);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(inexact_gd(&spec, -1.0, &NoisePolicy::exact(), 5, &x0).is_err());
    }
}
