use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::bounds::{
    check_convex_bound, check_decrease, check_gradient_dominance, check_pl_bounds, check_sc_bound, BoundReport,
    PropertyCount, Theorem,
};
use super::gd::{descent_threshold, inexact_gd};
use super::{Family, NoiseMode, NoisePolicy, ObjectiveSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub instances: usize,
    pub iterations: usize,
    pub max_dim: usize,
    pub seed: u64,
    /// Fraction used by threshold-fraction noise.
    pub fraction: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 12_000,
            iterations: 60,
            max_dim: 10,
            seed: 20_240_601,
            fraction: 0.9,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.iterations == 0 {
            return Err(Error::InvalidParameter("suite needs at least one instance and one iteration".into()));
        }
        if self.max_dim < 2 {
            return Err(Error::InvalidParameter(format!("max_dim must be at least 2, got {}", self.max_dim)));
        }
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::InvalidParameter(format!("fraction must lie in (0, 1), got {}", self.fraction)));
        }
        Ok(())
    }
}

/// One randomized problem: objective, step, noise and starting point.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: usize,
    pub spec: ObjectiveSpec,
    pub kappa: f64,
    pub policy: NoisePolicy,
    pub x0: DVector<f64>,
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo.log10()..hi.log10()))
}

fn spectrum(rng: &mut ChaCha8Rng, rank: usize) -> Vec<f64> {
    let scale = log_uniform(rng, 0.1, 10.0);
    let cond = log_uniform(rng, 1.0, 1e3);
    let mut s: Vec<f64> = (0..rank).map(|_| scale * log_uniform(rng, 1.0, cond.max(1.0 + 1e-9))).collect();
    s[0] = scale;
    if rank > 1 {
        s[rank - 1] = scale * cond;
    }
    s
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Deterministic in `(config.seed, id)`; every instance has its own stream.
pub fn draw_instance(config: &SuiteConfig, id: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(id as u64);
    let n = rng.random_range(2..=config.max_dim);
    let family = [
        Family::StronglyConvexQuadratic,
        Family::ConvexSingularQuadratic,
        Family::PlNonconvex,
    ][rng.random_range(0..3)];
    let (spec, x0) = match family {
        Family::PlNonconvex => {
            let w = DVector::from_fn(n, |_, _| log_uniform(&mut rng, 1.0, 10.0));
            let x0 = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            (ObjectiveSpec::pl_nonconvex(w)?, x0)
        }
        _ => {
            let rank = if family == Family::StronglyConvexQuadratic {
                n
            } else {
                rng.random_range(1..n)
            };
            let mut s = spectrum(&mut rng, rank);
            s.resize(n, 0.0);
            let sd = rng.random_range(0.5..3.0);
            let center = gaussian(&mut rng, n, sd);
            let spread = rng.random_range(0.5..3.0);
            let x0 = &center + gaussian(&mut rng, n, spread);
            let rot: u64 = rng.random();
            (ObjectiveSpec::from_spectrum(&s, center, Some(rot))?, x0)
        }
    };
    let kl = if rng.random_bool(0.25) {
        1.0
    } else {
        rng.random_range(0.05..0.95)
    };
    let kappa = kl / spec.lipschitz;
    let mode = [
        NoiseMode::RandomDirection,
        NoiseMode::AdversarialOpposing,
        NoiseMode::ThresholdFraction,
    ][rng.random_range(0..3)];
    let thr0 = descent_threshold(spec.gradient(&x0).norm(), kappa, spec.lipschitz)?;
    let epsilon = match mode {
        _ if rng.random_bool(0.05) => 0.0,
        NoiseMode::ThresholdFraction => config.fraction * thr0 * log_uniform(&mut rng, 1e-3, 2.0),
        _ => config.fraction * thr0 * log_uniform(&mut rng, 1e-4, 1.0),
    };
    let policy = NoisePolicy {
        mode,
        epsilon,
        fraction: config.fraction,
        seed: rng.random(),
    };
    Ok(Instance {
        id,
        spec,
        kappa,
        policy,
        x0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremSummary {
    pub worst_margin: Option<f64>,
    pub hypothesis_fraction: f64,
    pub asserted: usize,
    pub violations: usize,
}

impl From<&BoundReport> for TheoremSummary {
    fn from(r: &BoundReport) -> Self {
        Self {
            worst_margin: r.max_margin(),
            hypothesis_fraction: r.hypothesis_fraction(),
            asserted: r.asserted(),
            violations: r.violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub id: usize,
    pub family: Family,
    pub mode: NoiseMode,
    pub kappa: f64,
    pub kappa_l: f64,
    pub epsilon: f64,
    pub convex: Option<TheoremSummary>,
    pub pl: Option<TheoremSummary>,
    pub sc: Option<TheoremSummary>,
    pub decrease: PropertyCount,
    pub gradient_dominance: PropertyCount,
}

impl SuiteRow {
    pub fn summary(&self, theorem: Theorem) -> Option<&TheoremSummary> {
        match theorem {
            Theorem::Convex => self.convex.as_ref(),
            Theorem::Pl => self.pl.as_ref(),
            Theorem::StronglyConvex => self.sc.as_ref(),
        }
    }

    /// At least one bound was evaluated under its hypotheses.
    pub fn hypotheses_met(&self) -> bool {
        [&self.convex, &self.pl, &self.sc]
            .iter()
            .any(|s| s.is_some_and(|s| s.asserted > 0))
    }
}

fn run_instance(inst: &Instance, iterations: usize) -> Result<SuiteRow> {
    let trace = inexact_gd(&inst.spec, inst.kappa, &inst.policy, iterations, &inst.x0)?;
    let kl = inst.kappa * inst.spec.lipschitz;
    let eps = inst.policy.epsilon;
    let below = kl < 1.0 - 1e-12;
    let convex = if below && inst.spec.is_convex() {
        Some((&check_convex_bound(&trace, &inst.spec, inst.kappa, eps)?).into())
    } else {
        None
    };
    let sc = if below && inst.spec.is_strongly_convex() {
        Some((&check_sc_bound(&trace, &inst.spec, inst.kappa, eps)?).into())
    } else {
        None
    };
    let pl = Some((&check_pl_bounds(&trace, &inst.spec, inst.kappa, eps)?).into());
    let decrease = if below {
        check_decrease(&trace, &inst.spec, inst.kappa)?
    } else {
        PropertyCount::default()
    };
    Ok(SuiteRow {
        id: inst.id,
        family: inst.spec.family,
        mode: inst.policy.mode,
        kappa: inst.kappa,
        kappa_l: kl,
        epsilon: eps,
        convex,
        pl,
        sc,
        decrease,
        gradient_dominance: check_gradient_dominance(&trace, &inst.spec),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub rows: Vec<SuiteRow>,
}

pub const SUITE_CSV_HEADER: &str = "id,family,mode,kappa_l,kappa,epsilon,\
convex_margin,convex_hyp,pl_margin,pl_hyp,sc_margin,sc_hyp,decrease_checked,decrease_failed";

fn opt_e(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

impl SuiteReport {
    pub fn violations(&self, theorem: Theorem) -> usize {
        self.rows.iter().filter_map(|r| r.summary(theorem)).map(|s| s.violations).sum()
    }

    pub fn asserted(&self, theorem: Theorem) -> usize {
        self.rows.iter().filter_map(|r| r.summary(theorem)).map(|s| s.asserted).sum()
    }

    pub fn worst_margin(&self, theorem: Theorem) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.summary(theorem).and_then(|s| s.worst_margin))
            .reduce(f64::max)
    }

    pub fn hypothesis_instances(&self) -> usize {
        self.rows.iter().filter(|r| r.hypotheses_met()).count()
    }

    pub fn decrease(&self) -> PropertyCount {
        self.rows.iter().fold(PropertyCount::default(), |a, r| a.merge(r.decrease))
    }

    pub fn gradient_dominance(&self) -> PropertyCount {
        self.rows
            .iter()
            .fold(PropertyCount::default(), |a, r| a.merge(r.gradient_dominance))
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{SUITE_CSV_HEADER}")?;
        for r in &self.rows {
            let cols = |s: Option<&TheoremSummary>| match s {
                Some(s) => format!("{},{}", opt_e(s.worst_margin), s.hypothesis_fraction),
                None => ",".to_string(),
            };
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e},{},{},{},{},{}",
                r.id,
                r.family.name(),
                r.mode.name(),
                r.kappa_l,
                r.kappa,
                r.epsilon,
                cols(r.convex.as_ref()),
                cols(r.pl.as_ref()),
                cols(r.sc.as_ref()),
                r.decrease.checked,
                r.decrease.failed
            )?;
        }
        Ok(())
    }

    /// Rows for one theorem only, skipping instances where it does not apply.
    pub fn write_theorem_csv(&self, theorem: Theorem, mut w: impl Write) -> Result<()> {
        writeln!(w, "id,family,mode,kappa_l,epsilon,worst_margin,hypothesis_fraction,asserted,violations")?;
        for r in &self.rows {
            if let Some(s) = r.summary(theorem) {
                writeln!(
                    w,
                    "{},{},{},{:e},{:e},{},{},{},{}",
                    r.id,
                    r.family.name(),
                    r.mode.name(),
                    r.kappa_l,
                    r.epsilon,
                    opt_e(s.worst_margin),
                    s.hypothesis_fraction,
                    s.asserted,
                    s.violations
                )?;
            }
        }
        Ok(())
    }
}

/// Draws and runs every instance in parallel; rows come back in id order.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    config.validate()?;
    let rows = (0..config.instances)
        .into_par_iter()
        .map(|id| draw_instance(config, id).and_then(|inst| run_instance(&inst, config.iterations)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport { config: *config, rows })
}
