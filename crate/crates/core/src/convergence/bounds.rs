use super::gd::{descent_threshold, GdTrace};
use super::ObjectiveSpec;
use crate::error::{Error, Result};

/// Margins within `REL_SLACK · |bound| + ABS_SLACK · reference` of zero are
/// roundoff, not violations. `reference` is the initial gap or squared
/// distance.
pub const REL_SLACK: f64 = 1e-10;
pub const ABS_SLACK: f64 = 1e-13;

/// Steps starting below this fraction of the initial gap are at the
/// resolution of the gap evaluation and are not checked for decrease.
pub const DECREASE_FLOOR: f64 = 1e-8;

/// `κL` this close to 1 counts as `κ = 1/L`.
const UNIT_STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Theorem {
    /// Sublinear bound on the objective gap for convex objectives.
    Convex,
    /// Linear rate of the objective gap under the PL inequality.
    Pl,
    /// Linear contraction of the squared distance under strong convexity.
    StronglyConvex,
}

impl Theorem {
    pub fn name(self) -> &'static str {
        match self {
            Theorem::Convex => "convex",
            Theorem::Pl => "pl",
            Theorem::StronglyConvex => "strongly-convex",
        }
    }
}

/// Per-iteration bound evaluation. `margins[k − 1]` is `lhs − rhs` at
/// iterate `k`, or `None` where the hypotheses did not hold.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub margins: Vec<Option<f64>>,
    pub bounds: Vec<f64>,
    pub violations: usize,
    /// First iterate inside the termination ball, when tracked.
    pub first_delta_entry: Option<usize>,
}

impl BoundReport {
    fn new(theorem: Theorem) -> Self {
        Self {
            theorem,
            margins: Vec::new(),
            bounds: Vec::new(),
            violations: 0,
            first_delta_entry: None,
        }
    }

    fn push(&mut self, lhs: f64, rhs: f64, reference: f64, held: bool) {
        self.bounds.push(rhs);
        if held {
            let margin = lhs - rhs;
            if margin > REL_SLACK * rhs.abs() + ABS_SLACK * reference {
                self.violations += 1;
            }
            self.margins.push(Some(margin));
        } else {
            self.margins.push(None);
        }
    }

    pub fn asserted(&self) -> usize {
        self.margins.iter().flatten().count()
    }

    pub fn hypothesis_fraction(&self) -> f64 {
        if self.margins.is_empty() {
            return 0.0;
        }
        self.asserted() as f64 / self.margins.len() as f64
    }

    pub fn max_margin(&self) -> Option<f64> {
        self.margins.iter().flatten().copied().reduce(f64::max)
    }
}

fn require_below_unit_step(kappa: f64, spec: &ObjectiveSpec) -> Result<()> {
    if !(kappa > 0.0 && kappa * spec.lipschitz < 1.0) {
        return Err(Error::StepSizeDomain {
            kappa,
            lipschitz: spec.lipschitz,
        });
    }
    Ok(())
}

fn noise_within(trace: &GdTrace, i: usize, epsilon: f64) -> bool {
    trace.noise_norms[i] <= epsilon
}

fn below_threshold(trace: &GdTrace, i: usize, epsilon: f64, kappa: f64, lipschitz: f64) -> Result<bool> {
    let thr = descent_threshold(trace.grad_norms[i], kappa, lipschitz)?;
    Ok(noise_within(trace, i, epsilon) && epsilon < thr)
}

fn distance(trace: &GdTrace, spec: &ObjectiveSpec, i: usize) -> Result<f64> {
    let x_star = spec
        .x_star
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("objective has no known minimizer".into()))?;
    Ok((&trace.iterates[i] - x_star).norm())
}

/// `J(x^k) − J(x⋆) ≤ ‖x⁰ − x⋆‖²/(2kκ) + ‖x⁰ − x⋆‖ε + κε²/(2η)`, `η = 1 − κL`.
/// Asserted while every earlier noise vector is bounded by `ε`, `ε` is below
/// the descent threshold, and the run has not entered the termination set
/// `J − J⋆ < ‖x⁰ − x⋆‖ε + κε²/(2η)`.
pub fn check_convex_bound(trace: &GdTrace, spec: &ObjectiveSpec, kappa: f64, epsilon: f64) -> Result<BoundReport> {
    require_below_unit_step(kappa, spec)?;
    if !spec.is_convex() {
        return Err(Error::InvalidParameter(format!("{} is not convex", spec.family.name())));
    }
    let l = spec.lipschitz;
    let eta = 1.0 - kappa * l;
    let d0 = distance(trace, spec, 0)?;
    let delta = d0 * epsilon + kappa * epsilon * epsilon / (2.0 * eta);
    let mut report = BoundReport::new(Theorem::Convex);
    let mut held = true;
    for k in 1..=trace.iterations() {
        held = held && below_threshold(trace, k - 1, epsilon, kappa, l)? && trace.gaps[k] >= delta;
        if trace.gaps[k] < delta && report.first_delta_entry.is_none() {
            report.first_delta_entry = Some(k);
        }
        let rhs = d0 * d0 / (2.0 * k as f64 * kappa) + delta;
        report.push(trace.gaps[k], rhs, trace.gaps[0], held);
    }
    Ok(report)
}

/// Linear rate of `J − inf J` under the PL inequality. For `κ = 1/L`:
/// `(1 − μ/L)^k gap₀ + (1 − (1 − μ/L)^k) ε²/(2μ)`, needing only `‖ξ‖ ≤ ε`.
/// For `κ < 1/L`, with `θ = 1 − μ(2κ − Lκ²)`:
/// `θ^k gap₀ + (1 − θ^k)/(1 − θ) (√(2L)|Lκ² − κ| √gap₀ ε + Lκ²ε²/2)`,
/// needing `ε` below the descent threshold as well.
pub fn check_pl_bounds(trace: &GdTrace, spec: &ObjectiveSpec, kappa: f64, epsilon: f64) -> Result<BoundReport> {
    let l = spec.lipschitz;
    let mu = spec.mu;
    if !(kappa > 0.0) || kappa * l > 1.0 + UNIT_STEP_TOL {
        return Err(Error::StepSizeDomain { kappa, lipschitz: l });
    }
    let gap0 = trace.gaps[0];
    let mut report = BoundReport::new(Theorem::Pl);
    let mut held = true;
    if (kappa * l - 1.0).abs() <= UNIT_STEP_TOL {
        let q = 1.0 - mu / l;
        for k in 1..=trace.iterations() {
            held = held && noise_within(trace, k - 1, epsilon);
            let qk = q.powi(k as i32);
            let rhs = qk * gap0 + (1.0 - qk) * epsilon * epsilon / (2.0 * mu);
            report.push(trace.gaps[k], rhs, gap0, held);
        }
        return Ok(report);
    }
    let theta = 1.0 - mu * (2.0 * kappa - l * kappa * kappa);
    let rate_ok = theta > 0.0 && theta < 1.0;
    let c = (2.0 * l).sqrt() * (l * kappa * kappa - kappa).abs() * gap0.sqrt() * epsilon
        + 0.5 * l * kappa * kappa * epsilon * epsilon;
    for k in 1..=trace.iterations() {
        held = held && rate_ok && below_threshold(trace, k - 1, epsilon, kappa, l)?;
        let tk = theta.powi(k as i32);
        let rhs = tk * gap0 + (1.0 - tk) / (1.0 - theta) * c;
        report.push(trace.gaps[k], rhs, gap0, held);
    }
    Ok(report)
}

/// `‖x^k − x⋆‖² ≤ θ^k d₀² + (1 − θ^k)/(1 − θ)(2κd₀ε + κ²ε²/(2Lη) + κ²ε²)`
/// with `θ = 1 − μκ`, `η = 2κ − 2κ²L`. Asserted while `‖ξ‖ ≤ ε` and every
/// earlier iterate stays outside the ball of radius
/// `δ = (√(2Lη) + √(2Lη + 2Lηκμ + κμ)) / (μ√(2Lη)) · ε`.
pub fn check_sc_bound(trace: &GdTrace, spec: &ObjectiveSpec, kappa: f64, epsilon: f64) -> Result<BoundReport> {
    require_below_unit_step(kappa, spec)?;
    if !spec.is_strongly_convex() {
        return Err(Error::InvalidParameter(format!("{} is not strongly convex", spec.family.name())));
    }
    let l = spec.lipschitz;
    let mu = spec.mu;
    let theta = 1.0 - mu * kappa;
    let eta = 2.0 * kappa - 2.0 * kappa * kappa * l;
    let s = (2.0 * l * eta).sqrt();
    let delta = (s + (2.0 * l * eta + 2.0 * l * eta * kappa * mu + kappa * mu).sqrt()) / (mu * s) * epsilon;
    let d0 = distance(trace, spec, 0)?;
    let c = 2.0 * kappa * d0 * epsilon + kappa * kappa * epsilon * epsilon / (2.0 * l * eta) + kappa * kappa * epsilon * epsilon;
    let mut report = BoundReport::new(Theorem::StronglyConvex);
    let mut held = true;
    for k in 1..=trace.iterations() {
        let d_prev = distance(trace, spec, k - 1)?;
        if d_prev < delta && report.first_delta_entry.is_none() {
            report.first_delta_entry = Some(k - 1);
        }
        held = held && noise_within(trace, k - 1, epsilon) && d_prev >= delta;
        let tk = theta.powi(k as i32);
        let rhs = tk * d0 * d0 + (1.0 - tk) / (1.0 - theta) * c;
        let dk = distance(trace, spec, k)?;
        report.push(dk * dk, rhs, d0 * d0, held);
    }
    Ok(report)
}

/// How many times a property was checked and how often it failed.
/// `unresolved` counts qualifying steps skipped at roundoff level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PropertyCount {
    pub checked: usize,
    pub failed: usize,
    pub unresolved: usize,
}

impl PropertyCount {
    pub fn merge(self, other: Self) -> Self {
        Self {
            checked: self.checked + other.checked,
            failed: self.failed + other.failed,
            unresolved: self.unresolved + other.unresolved,
        }
    }
}

/// `J(x^(i+1)) < J(x^(i))` at every step whose noise is strictly below the
/// descent threshold, from iterates whose gap is above `DECREASE_FLOOR`
/// times the initial one. Requires `0 < κ < 1/L`.
pub fn check_decrease(trace: &GdTrace, spec: &ObjectiveSpec, kappa: f64) -> Result<PropertyCount> {
    require_below_unit_step(kappa, spec)?;
    let mut count = PropertyCount::default();
    for i in 0..trace.iterations() {
        let thr = descent_threshold(trace.grad_norms[i], kappa, spec.lipschitz)?;
        if trace.noise_norms[i] < thr {
            if trace.gaps[i] <= DECREASE_FLOOR * trace.gaps[0] {
                count.unresolved += 1;
                continue;
            }
            count.checked += 1;
            if trace.gaps[i + 1] >= trace.gaps[i] {
                count.failed += 1;
            }
        }
    }
    Ok(count)
}

/// `‖∇J(x)‖²/(2L) ≤ J(x) − inf J` at every iterate.
pub fn check_gradient_dominance(trace: &GdTrace, spec: &ObjectiveSpec) -> PropertyCount {
    let mut count = PropertyCount::default();
    for (g, gap) in trace.grad_norms.iter().zip(&trace.gaps) {
        count.checked += 1;
        let lhs = g * g / (2.0 * spec.lipschitz);
        if lhs > gap + REL_SLACK * gap.abs() + ABS_SLACK * trace.gaps[0] {
            count.failed += 1;
        }
    }
    count
}
