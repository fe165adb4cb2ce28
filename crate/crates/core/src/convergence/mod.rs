//! Inexact gradient descent on synthetic objectives whose constants are
//! known exactly, with checkers for the convergence bounds.

mod bounds;
mod gd;
mod noise;
mod suite;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use bounds::{
    check_convex_bound, check_decrease, check_gradient_dominance, check_pl_bounds, check_sc_bound, BoundReport,
    PropertyCount, Theorem,
};
pub use gd::{descent_threshold, inexact_gd, GdTrace};
pub use noise::{NoiseMode, NoisePolicy};
pub use suite::{draw_instance, run_suite, Instance, SuiteConfig, SuiteReport, SuiteRow, TheoremSummary};

use crate::dense::sym_eigen;
use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    StronglyConvexQuadratic,
    ConvexSingularQuadratic,
    PlNonconvex,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::StronglyConvexQuadratic => "strongly-convex-quadratic",
            Family::ConvexSingularQuadratic => "convex-singular-quadratic",
            Family::PlNonconvex => "pl-nonconvex",
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    /// `J(x) = ½⟨x, Ax⟩ − ⟨Ac, x⟩`, so `c` is a minimizer. Held as
    /// `A = Q diag(λ) Qᵀ` with eigenvalues under the rank cutoff set to zero,
    /// so the null space is exact and `J − inf J` carries no roundoff from it.
    Quadratic {
        q: DMatrix<f64>,
        lambda: DVector<f64>,
        center: DVector<f64>,
    },
    /// `J(x) = Σ s_i (x_i² + 3 sin² x_i)`.
    Sines { weights: DVector<f64> },
}

/// A test objective together with its descent constant `L`, its strong
/// convexity or PL constant `mu`, a minimizer and the infimum.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub family: Family,
    kind: Kind,
    pub lipschitz: f64,
    pub mu: f64,
    pub x_star: Option<DVector<f64>>,
    pub inf_value: f64,
}

impl ObjectiveSpec {
    /// Quadratic with minimizer `center`. The family is read off the spectrum.
    pub fn quadratic(a: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || center.len() != n {
            return Err(Error::DimensionMismatch {
                context: "quadratic objective",
                expected: n,
                actual: if a.ncols() != n { a.ncols() } else { center.len() },
            });
        }
        let scale = a.amax();
        if scale == 0.0 {
            return Err(Error::InvalidParameter("quadratic with zero Hessian".into()));
        }
        let defect = (&a - a.transpose()).amax() / scale;
        if defect > 1e-12 {
            return Err(Error::WeightNotSymmetric { defect });
        }
        let (mut lambda, q) = sym_eigen(&a)?;
        let lmax = lambda[n - 1];
        let cut = RANK_TOL * lmax;
        if lambda[0] < -cut {
            return Err(Error::InvalidParameter(format!("Hessian is indefinite (eigenvalue {:e})", lambda[0])));
        }
        let family = if lambda[0] > cut {
            Family::StronglyConvexQuadratic
        } else {
            Family::ConvexSingularQuadratic
        };
        lambda.apply(|l| {
            if *l <= cut {
                *l = 0.0
            }
        });
        let mu = *lambda.iter().find(|&&l| l > 0.0).expect("largest eigenvalue is positive");
        let y = q.tr_mul(&center);
        let inf_value = -0.5 * lambda.iter().zip(y.iter()).map(|(l, v)| l * v * v).sum::<f64>();
        Ok(Self {
            family,
            lipschitz: lmax,
            mu,
            x_star: Some(center.clone()),
            inf_value,
            kind: Kind::Quadratic { q, lambda, center },
        })
    }

    /// `Q diag(spectrum) Qᵀ` with `Q` a seeded random rotation, or the
    /// identity when `rotation_seed` is `None`.
    pub fn from_spectrum(spectrum: &[f64], center: DVector<f64>, rotation_seed: Option<u64>) -> Result<Self> {
        let n = spectrum.len();
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum));
        let a = match rotation_seed {
            None => d,
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
                let q = g.qr().q();
                let a = &q * d * q.transpose();
                (&a + a.transpose()) * 0.5
            }
        };
        Self::quadratic(a, center)
    }

    pub fn pl_nonconvex(weights: DVector<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("weights must be positive".into()));
        }
        let smax = weights.max();
        let smin = weights.min();
        let n = weights.len();
        Ok(Self {
            family: Family::PlNonconvex,
            // second derivative of x² + 3 sin² x is 2 + 6 cos 2x ≤ 8
            lipschitz: 8.0 * smax,
            mu: sines_pl_constant() * smin,
            x_star: Some(DVector::zeros(n)),
            inf_value: 0.0,
            kind: Kind::Sines { weights },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            Kind::Quadratic { center, .. } => center.len(),
            Kind::Sines { weights } => weights.len(),
        }
    }

    pub fn is_convex(&self) -> bool {
        self.family != Family::PlNonconvex
    }

    pub fn is_strongly_convex(&self) -> bool {
        self.family == Family::StronglyConvexQuadratic
    }

    /// `J(x) − inf J`, evaluated without cancellation.
    pub fn gap(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            Kind::Quadratic { q, lambda, center } => {
                let y = q.tr_mul(&(x - center));
                0.5 * lambda.iter().zip(y.iter()).map(|(l, v)| l * v * v).sum::<f64>()
            }
            Kind::Sines { weights } => weights
                .iter()
                .zip(x.iter())
                .map(|(s, &v)| s * (v * v + 3.0 * v.sin().powi(2)))
                .sum(),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.inf_value + self.gap(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            Kind::Quadratic { q, lambda, center } => {
                let y = q.tr_mul(&(x - center));
                q * y.component_mul(lambda)
            }
            Kind::Sines { weights } => {
                DVector::from_fn(x.len(), |i, _| weights[i] * (2.0 * x[i] + 3.0 * (2.0 * x[i]).sin()))
            }
        }
    }
}

/// `inf_x f'(x)² / (2 f(x))` for `f(x) = x² + 3 sin² x`. The ratio is even,
/// tends to 8 at the origin and to 2 at infinity, and stays above 1.9 past
/// `x = 60`, so a grid search there plus golden-section refinement finds it.
/// A relative safety margin of 1e-6 is taken off.
pub fn sines_pl_constant() -> f64 {
    static CONST: OnceLock<f64> = OnceLock::new();
    *CONST.get_or_init(|| {
        let ratio = |x: f64| {
            let f = x * x + 3.0 * x.sin().powi(2);
            let g = 2.0 * x + 3.0 * (2.0 * x).sin();
            g * g / (2.0 * f)
        };
        let step = 1e-3;
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        for i in 1..=60_000 {
            let x = i as f64 * step;
            let r = ratio(x);
            if r < best {
                best = r;
                arg = x;
            }
        }
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let (mut lo, mut hi) = (arg - step, arg + step);
        for _ in 0..80 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if ratio(a) < ratio(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        ratio(0.5 * (lo + hi)).min(best) * (1.0 - 1e-6)
    })
}
