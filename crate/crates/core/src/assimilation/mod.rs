//! Initial-condition estimation by steepest descent on the regularized
//! misfit, with either a stored trajectory or a compressed one.

mod compress;

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;

pub use compress::CompressedTrajectory;

use crate::error::{Error, Result};
use crate::ipod::IpodTolerances;
use crate::pde::{check_len, Dynamics, ObservationSet, Trajectory};
use crate::weighted::WeightOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightChoice {
    L2Mass,
    H1,
}

impl WeightChoice {
    pub fn select<P: Dynamics + ?Sized>(self, problem: &P) -> &Arc<WeightOperator> {
        match self {
            Self::L2Mass => problem.mass(),
            Self::H1 => problem.h1_weight(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationMode {
    /// Stop once `κ‖∇J‖ ≤ tol_sd`.
    GradNorm,
    /// Stop once `|J^{(i+1)} − J^{(i)}| ≤ tol_sd`.
    ObjectiveDecrement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentMode {
    Exact,
    Inexact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionConfig {
    pub tols: IpodTolerances,
    pub weight: WeightChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssimilationConfig {
    pub gamma: f64,
    pub kappa: f64,
    pub tol_sd: f64,
    pub termination: TerminationMode,
    pub max_iters: usize,
    /// Required for inexact runs.
    pub compression: Option<CompressionConfig>,
    /// Also evaluate the exact gradient in inexact runs to measure `ξ`.
    /// Diagnostic only: it stores the full trajectory.
    pub reference_gradient: bool,
}

impl AssimilationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if !(self.tol_sd > 0.0 && self.tol_sd.is_finite()) {
            return Err(Error::InvalidParameter(format!("tol_sd must be > 0, got {}", self.tol_sd)));
        }
        if let Some(c) = &self.compression {
            c.tols.validate()?;
        }
        Ok(())
    }
}

/// Tracks how many uncompressed trajectory snapshots are held at once. The
/// state being advanced by the forward solver counts as one.
#[derive(Debug, Default, Clone, Copy)]
pub struct SnapshotCounter {
    live: usize,
    peak: usize,
}

impl SnapshotCounter {
    pub fn acquire(&mut self) {
        self.live += 1;
        self.peak = self.peak.max(self.live);
    }

    pub fn release(&mut self) {
        self.live = self.live.checked_sub(1).expect("release without acquire");
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    /// `‖∇J‖` in the mass norm.
    pub grad_norm: f64,
    pub xi_norm: Option<f64>,
    pub e_p: f64,
    pub e_sv: f64,
    /// Stored columns: the compression rank, or `n` for a stored trajectory.
    pub rank: usize,
    pub peak_snapshots: usize,
    pub wall_time: Duration,
}

impl IterationRecord {
    pub fn error_bound(&self) -> f64 {
        self.e_p + self.e_sv
    }
}

/// Result of one objective and gradient evaluation.
#[derive(Debug)]
pub struct GradientEvaluation {
    pub gradient: DVector<f64>,
    pub objective: f64,
    pub peak_snapshots: usize,
    pub compression: Option<CompressedTrajectory>,
}

fn check_inputs<P: Dynamics + ?Sized>(problem: &P, u0: &DVector<f64>, obs: &ObservationSet) -> Result<()> {
    check_len("initial condition", problem.dim(), u0.len())?;
    check_len("observation count", problem.n_steps(), obs.len())?;
    for v in &obs.values {
        check_len("observation", problem.dim(), v.len())?;
    }
    Ok(())
}

/// `(τ/2) Σ_j ‖û^j − u^j‖²_M + (γ/2) ‖u0‖²_M`.
pub fn objective<P: Dynamics + ?Sized>(
    u0: &DVector<f64>,
    obs: &ObservationSet,
    problem: &P,
    gamma: f64,
) -> Result<f64> {
    check_inputs(problem, u0, obs)?;
    let mass = problem.mass();
    let mut u = u0.clone();
    let mut misfit = 0.0;
    for (j, o) in obs.values.iter().enumerate() {
        u = problem.step_forward(&u, j + 1)?;
        misfit += mass.norm_sq(&(o - &u));
    }
    Ok(0.5 * problem.tau() * misfit + 0.5 * gamma * mass.norm_sq(u0))
}

/// Exact gradient with the full forward trajectory kept for the adjoint sweep.
pub fn evaluate_exact<P: Dynamics + ?Sized>(
    u0: &DVector<f64>,
    obs: &ObservationSet,
    problem: &P,
    gamma: f64,
) -> Result<(GradientEvaluation, Trajectory)> {
    check_inputs(problem, u0, obs)?;
    let mass = problem.mass();
    let n = problem.n_steps();
    let mut counter = SnapshotCounter::default();
    let mut snapshots: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut misfit = 0.0;
    for (j, o) in obs.values.iter().enumerate() {
        let u = problem.step_forward(snapshots.last().unwrap_or(u0), j + 1)?;
        misfit += mass.norm_sq(&(o - &u));
        counter.acquire();
        snapshots.push(u);
    }
    let objective = 0.5 * problem.tau() * misfit + 0.5 * gamma * mass.norm_sq(u0);
    let mut z = DVector::zeros(problem.dim());
    for j in (1..=n).rev() {
        z = problem.step_adjoint(&z, &snapshots[j - 1], &obs.values[j - 1], j)?;
    }
    let gradient = u0 * gamma - z;
    let traj = Trajectory {
        snapshots,
        tau: problem.tau(),
    };
    Ok((
        GradientEvaluation {
            gradient,
            objective,
            peak_snapshots: counter.peak(),
            compression: None,
        },
        traj,
    ))
}

/// Inexact gradient: the forward trajectory is streamed into the compressor
/// and decompressed one snapshot at a time during the adjoint sweep.
pub fn evaluate_compressed<P: Dynamics + ?Sized>(
    u0: &DVector<f64>,
    obs: &ObservationSet,
    problem: &P,
    gamma: f64,
    compression: &CompressionConfig,
) -> Result<GradientEvaluation> {
    check_inputs(problem, u0, obs)?;
    let mass = problem.mass();
    let weight = compression.weight.select(problem);
    let mut store = CompressedTrajectory::new(Arc::clone(weight), compression.tols, problem.tau())?;
    let mut counter = SnapshotCounter::default();
    let mut misfit = 0.0;
    let mut current: Option<DVector<f64>> = None;
    for (j, o) in obs.values.iter().enumerate() {
        let next = problem.step_forward(current.as_ref().unwrap_or(u0), j + 1)?;
        if current.take().is_some() {
            counter.release();
        }
        counter.acquire();
        misfit += mass.norm_sq(&(o - &next));
        store.push(&next)?;
        current = Some(next);
    }
    if current.take().is_some() {
        counter.release();
    }
    store.finalize();
    let objective = 0.5 * problem.tau() * misfit + 0.5 * gamma * mass.norm_sq(u0);

    let mut z = DVector::zeros(problem.dim());
    for j in (1..=problem.n_steps()).rev() {
        let u = store.reconstruct(j)?;
        counter.acquire();
        z = problem.step_adjoint(&z, &u, &obs.values[j - 1], j)?;
        drop(u);
        counter.release();
    }
    Ok(GradientEvaluation {
        gradient: u0 * gamma - z,
        objective,
        peak_snapshots: counter.peak(),
        compression: Some(store),
    })
}

/// `∇J(u0) = −u*^0 + γ u0` together with the stored forward trajectory.
pub fn gradient_exact<P: Dynamics + ?Sized>(
    u0: &DVector<f64>,
    obs: &ObservationSet,
    problem: &P,
    gamma: f64,
) -> Result<(DVector<f64>, Trajectory)> {
    evaluate_exact(u0, obs, problem, gamma).map(|(e, t)| (e.gradient, t))
}

pub fn gradient_compressed<P: Dynamics + ?Sized>(
    u0: &DVector<f64>,
    obs: &ObservationSet,
    problem: &P,
    gamma: f64,
    tols: IpodTolerances,
    weight: WeightChoice,
) -> Result<(DVector<f64>, CompressedTrajectory, IterationRecord)> {
    let start = Instant::now();
    let eval = evaluate_compressed(u0, obs, problem, gamma, &CompressionConfig { tols, weight })?;
    let store = eval.compression.expect("compressed evaluation keeps its store");
    let record = IterationRecord {
        iter: 0,
        objective: eval.objective,
        grad_norm: problem.mass().norm(&eval.gradient),
        xi_norm: None,
        e_p: store.e_p(),
        e_sv: store.e_sv(),
        rank: store.rank(),
        peak_snapshots: eval.peak_snapshots,
        wall_time: start.elapsed(),
    };
    Ok((eval.gradient, store, record))
}

#[derive(Debug)]
pub struct DescentOutcome {
    pub records: Vec<IterationRecord>,
    pub u0: DVector<f64>,
    /// Number of descent updates applied.
    pub iterations: usize,
    pub converged: bool,
    pub peak_snapshots: usize,
    /// Compressed trajectory of the last evaluation (inexact runs).
    pub final_compression: Option<CompressedTrajectory>,
}

pub const CSV_HEADER: &str = "iter,J,grad_norm,e_p,e_sv,rank,xi_norm,peak_snapshots";

impl DescentOutcome {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            let xi = r.xi_norm.map(|x| format!("{x:e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{},{},{}",
                r.iter, r.objective, r.grad_norm, r.e_p, r.e_sv, r.rank, xi, r.peak_snapshots
            )?;
        }
        Ok(())
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }
}

/// Constant-step steepest descent `u ← u − κ ∇J(u)`.
pub fn run_descent<P: Dynamics + ?Sized>(
    config: &AssimilationConfig,
    problem: &P,
    obs: &ObservationSet,
    u0_initial: &DVector<f64>,
    mode: DescentMode,
) -> Result<DescentOutcome> {
    config.validate()?;
    let compression = match (mode, &config.compression) {
        (DescentMode::Inexact, None) => {
            return Err(Error::InvalidParameter("inexact descent needs a compression config".into()))
        }
        (DescentMode::Inexact, Some(c)) => Some(*c),
        (DescentMode::Exact, _) => None,
    };
    let mass = problem.mass();
    let mut u = u0_initial.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut prev_objective: Option<f64> = None;
    let mut peak = 0;
    let mut final_compression = None;
    let mut converged = false;

    for iter in 0..=config.max_iters {
        let start = Instant::now();
        let (eval, xi_norm) = match &compression {
            None => (evaluate_exact(&u, obs, problem, config.gamma)?.0, None),
            Some(c) => {
                let eval = evaluate_compressed(&u, obs, problem, config.gamma, c)?;
                let xi = if config.reference_gradient {
                    let (reference, _) = gradient_exact(&u, obs, problem, config.gamma)?;
                    Some(mass.norm(&(&eval.gradient - reference)))
                } else {
                    None
                };
                (eval, xi)
            }
        };
        let grad_norm = mass.norm(&eval.gradient);
        if !eval.objective.is_finite() || !grad_norm.is_finite() {
            let mut trace: Vec<f64> = records.iter().map(|r| r.objective).collect();
            trace.push(eval.objective);
            return Err(Error::Divergence {
                iteration: iter,
                objective: eval.objective,
                trace,
            });
        }
        peak = peak.max(eval.peak_snapshots);
        let (e_p, e_sv, rank) = match &eval.compression {
            Some(s) => (s.e_p(), s.e_sv(), s.rank()),
            None => (0.0, 0.0, problem.n_steps()),
        };
        records.push(IterationRecord {
            iter,
            objective: eval.objective,
            grad_norm,
            xi_norm,
            e_p,
            e_sv,
            rank,
            peak_snapshots: eval.peak_snapshots,
            wall_time: start.elapsed(),
        });
        log::debug!("iter {iter}: J = {:e}, |grad| = {grad_norm:e}", eval.objective);

        let done = match config.termination {
            TerminationMode::GradNorm => config.kappa * grad_norm <= config.tol_sd,
            TerminationMode::ObjectiveDecrement => {
                prev_objective.is_some_and(|p| (eval.objective - p).abs() <= config.tol_sd)
            }
        };
        final_compression = eval.compression;
        if done {
            converged = true;
            break;
        }
        if iter == config.max_iters {
            break;
        }
        u -= &eval.gradient * config.kappa;
        prev_objective = Some(eval.objective);
    }

    Ok(DescentOutcome {
        iterations: records.len() - 1,
        records,
        u0: u,
        converged,
        peak_snapshots: peak,
        final_compression,
    })
}

/// Largest eigenvalue of the (constant) Hessian of a linear-quadratic
/// objective, by power iteration on `v ↦ ∇J(v) − ∇J(0)` in the mass inner
/// product.
pub fn estimate_hessian_norm<P: Dynamics + ?Sized>(
    obs: &ObservationSet,
    problem: &P,
    gamma: f64,
    max_iters: usize,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mass = problem.mass();
    let zero = DVector::zeros(problem.dim());
    let (g0, _) = gradient_exact(&zero, obs, problem, gamma)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(problem.dim(), |_, _| rng.random_range(-1.0..1.0));
    v /= mass.norm(&v);
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let (g, _) = gradient_exact(&v, obs, problem, gamma)?;
        let hv = g - &g0;
        let next = mass.norm(&hv);
        if next == 0.0 {
            return Ok(0.0);
        }
        v = hv / next;
        let converged = (next - lambda).abs() <= 1e-10 * next;
        lambda = next;
        if converged {
            break;
        }
    }
    Ok(lambda)
}

/// `√(Σ_j τ ‖u^j − û^j‖²_M / ‖u^j‖²_M)` between a reference trajectory and
/// an estimate.
pub fn relative_trajectory_error(
    reference: &Trajectory,
    estimate: &Trajectory,
    weight: &WeightOperator,
) -> Result<f64> {
    check_len("trajectory length", reference.len(), estimate.len())?;
    let mut acc = 0.0;
    for (r, e) in reference.snapshots.iter().zip(&estimate.snapshots) {
        let denom = weight.norm_sq(r);
        if denom == 0.0 {
            continue;
        }
        acc += reference.tau * weight.norm_sq(&(r - e)) / denom;
    }
    Ok(acc.sqrt())
}
