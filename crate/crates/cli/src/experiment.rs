//! Runs one configured experiment and writes its artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::info;
use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use podgrad::assimilation::{
    relative_trajectory_error, run_descent, AssimilationConfig, CompressionConfig, DescentMode, DescentOutcome,
    TerminationMode, WeightChoice,
};
use podgrad::convergence::{run_suite, Theorem};
use podgrad::ipod::{IpodState, IpodTolerances, UpdateKind};
use podgrad::pde::{
    assemble_interface_problem, burgers_truth_initial, synth_observations, BurgersConfig, BurgersProblem, Dynamics,
    ForcingSpec, ObservationSet,
};
use podgrad::weighted::{hs_norm_sq, WeightOperator};

use crate::config::{
    Bench, BenchWeight, Compression, Descent, ExperimentConfig, ExperimentKind, Forcing, Termination, Weight,
};
use crate::error::{CliError, Result};
use crate::summary::{
    AssimilationSummary, BenchRun, BenchSummary, ModeSummary, RunSummary, SuiteSummary, TheoremLine, SUMMARY_FILE,
};

pub const THEOREMS: [Theorem; 3] = [Theorem::Convex, Theorem::Pl, Theorem::StronglyConvex];

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(CliError::io(path))
}

fn finish(mut w: BufWriter<File>, dir: &Path, name: &str) -> Result<()> {
    w.flush().map_err(CliError::io(dir.join(name)))
}

fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(dir, name)?;
    body(&mut w)?;
    finish(w, dir, name)
}

fn io_err(dir: &Path, name: &str) -> impl FnOnce(std::io::Error) -> CliError {
    CliError::io(dir.join(name))
}

/// Runs the experiment, writes artifacts into `out`, and checks invariants
/// last so a failing run still leaves its files behind.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(out).map_err(CliError::io(out))?;
    write_file(out, "config.toml", |w| {
        w.write_all(config.to_toml_string().as_bytes()).map_err(io_err(out, "config.toml"))
    })?;
    let start = Instant::now();
    let (summary, broken) = match config.kind {
        ExperimentKind::LinearAssimilation => {
            let p = config.linear.as_ref().expect("validated");
            let forcing = match p.forcing {
                Forcing::Zero => ForcingSpec::Zero,
                Forcing::Interface => ForcingSpec::Interface,
                Forcing::ManufacturedSine => ForcingSpec::ManufacturedSine,
            };
            let problem = assemble_interface_problem(p.h, p.tau, p.t_final, p.beta_plus, p.beta_minus, forcing)
                .map_err(CliError::engine("assembling the interface problem"))?;
            let truth = problem.truth_initial_condition();
            assimilation(config, &problem, &truth, p.noise_sigma, p.seed, out)?
        }
        ExperimentKind::BurgersAssimilation => {
            let b = config.burgers.as_ref().expect("validated");
            let problem = BurgersProblem::new(BurgersConfig {
                n_cells: b.n_cells,
                nu: b.nu,
                tau: b.tau,
                t_final: b.t_final,
                forcing_amplitude: b.forcing_amplitude,
            })
            .map_err(CliError::engine("building the Burgers problem"))?;
            let truth = problem.interpolate(burgers_truth_initial);
            assimilation(config, &problem, &truth, b.noise_sigma, b.seed, out)?
        }
        ExperimentKind::ConvergenceSuite => suite(config, out)?,
        ExperimentKind::IpodBench => bench(config.bench.as_ref().expect("validated"), out)?,
    };
    info!("{} finished in {:.2}s", config.kind.name(), start.elapsed().as_secs_f64());
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(out, SUMMARY_FILE, |w| {
        writeln!(w, "{json}").map_err(io_err(out, SUMMARY_FILE))
    })?;
    match broken {
        Some(msg) => Err(CliError::Invariant(msg)),
        None => Ok(summary),
    }
}

fn assimilation_config(d: &Descent, c: &Compression) -> AssimilationConfig {
    AssimilationConfig {
        gamma: d.gamma,
        kappa: d.kappa,
        tol_sd: d.tol_sd,
        termination: match d.termination {
            Termination::GradNorm => TerminationMode::GradNorm,
            Termination::ObjectiveDecrement => TerminationMode::ObjectiveDecrement,
        },
        max_iters: d.max_iters,
        compression: Some(CompressionConfig {
            tols: IpodTolerances {
                tol_p: c.tol_p,
                tol_sv: c.tol_sv,
                tol_o: c.tol_o,
                reorth_cap: c.reorth_cap,
            },
            weight: match c.weight {
                Weight::L2 => WeightChoice::L2Mass,
                Weight::H1 => WeightChoice::H1,
            },
        }),
        reference_gradient: d.reference_gradient,
    }
}

fn assimilation<P: Dynamics>(
    config: &ExperimentConfig,
    problem: &P,
    truth_u0: &DVector<f64>,
    sigma: f64,
    seed: u64,
    out: &Path,
) -> Result<(RunSummary, Option<String>)> {
    let d = config.descent.as_ref().expect("validated");
    let c = config.compression.as_ref().expect("validated");
    let settings = assimilation_config(d, c);
    let truth = problem.trajectory(truth_u0).map_err(CliError::engine("truth trajectory"))?;
    let obs: ObservationSet =
        synth_observations(&truth, sigma, seed).map_err(CliError::engine("synthesizing observations"))?;
    let start_u0 = DVector::zeros(problem.dim());

    let mut broken = Vec::new();
    let mut mode_summary = |mode: DescentMode, name: &str| -> Result<ModeSummary> {
        let t = Instant::now();
        let outcome = run_descent(&settings, problem, &obs, &start_u0, mode).map_err(CliError::engine("descent"))?;
        info!("{name} descent: {} iterations in {:.2}s", outcome.iterations, t.elapsed().as_secs_f64());
        let file = format!("iterations_{name}.csv");
        write_file(out, &file, |w| outcome.write_csv(w).map_err(CliError::engine("writing iterations")))?;
        let estimate = problem.trajectory(&outcome.u0).map_err(CliError::engine("estimate trajectory"))?;
        let error = relative_trajectory_error(&truth, &estimate, problem.mass())
            .map_err(CliError::engine("trajectory error"))?;
        if mode == DescentMode::Inexact {
            write_ledger(&outcome, out)?;
            if outcome.peak_snapshots > 1 {
                broken.push(format!("inexact run held {} snapshots at once", outcome.peak_snapshots));
            }
        }
        if !outcome.converged {
            log::warn!("{name} descent stopped at max_iters = {} without converging", d.max_iters);
        }
        let last = outcome.records.last().expect("at least one record");
        Ok(ModeSummary {
            iterations: outcome.iterations,
            converged: outcome.converged,
            storage_rows: problem.dim(),
            storage_columns: match mode {
                DescentMode::Exact => problem.n_steps(),
                DescentMode::Inexact => last.rank,
            },
            relative_error: error,
            final_objective: last.objective,
            final_grad_norm: last.grad_norm,
            peak_snapshots: outcome.peak_snapshots,
            error_bound: (mode == DescentMode::Inexact).then(|| last.error_bound()),
            max_xi_norm: outcome.records.iter().filter_map(|r| r.xi_norm).reduce(f64::max),
        })
    };
    let exact = if d.mode.runs_exact() {
        Some(mode_summary(DescentMode::Exact, "exact")?)
    } else {
        None
    };
    let inexact = if d.mode.runs_inexact() {
        Some(mode_summary(DescentMode::Inexact, "inexact")?)
    } else {
        None
    };
    let summary = RunSummary {
        kind: config.kind,
        assimilation: Some(AssimilationSummary {
            dim: problem.dim(),
            n_steps: problem.n_steps(),
            exact,
            inexact,
        }),
        suite: None,
        bench: None,
    };
    Ok((summary, (!broken.is_empty()).then(|| broken.join("; "))))
}

fn write_ledger(outcome: &DescentOutcome, out: &Path) -> Result<()> {
    write_file(out, "ledger.csv", |w| {
        let e = io_err(out, "ledger.csv");
        (|| {
            writeln!(w, "iter,e_p,e_sv,error_bound,rank,xi_norm")?;
            for r in &outcome.records {
                let xi = r.xi_norm.map(|x| format!("{x:e}")).unwrap_or_default();
                writeln!(w, "{},{:e},{:e},{:e},{},{}", r.iter, r.e_p, r.e_sv, r.error_bound(), r.rank, xi)?;
            }
            Ok(())
        })()
        .map_err(e)
    })?;
    if let Some(state) = outcome.final_compression.as_ref().and_then(|c| c.state()) {
        write_file(out, "modes.csv", |w| {
            let e = io_err(out, "modes.csv");
            (|| {
                writeln!(w, "mode,sigma")?;
                for (i, s) in state.sigma().iter().enumerate() {
                    writeln!(w, "{},{s:e}", i + 1)?;
                }
                Ok(())
            })()
            .map_err(e)
        })?;
    }
    Ok(())
}

fn suite(config: &ExperimentConfig, out: &Path) -> Result<(RunSummary, Option<String>)> {
    let s = config.suite.as_ref().expect("validated");
    let report = run_suite(&config.suite_config(s)).map_err(CliError::engine("convergence suite"))?;
    write_file(out, "suite.csv", |w| report.write_csv(w).map_err(CliError::engine("writing suite")))?;
    let mut lines = Vec::new();
    let mut broken = Vec::new();
    for th in THEOREMS {
        let file = format!("margins_{}.csv", th.name());
        write_file(out, &file, |w| {
            report.write_theorem_csv(th, w).map_err(CliError::engine("writing margins"))
        })?;
        let violations = report.violations(th);
        if violations > 0 {
            broken.push(format!("{violations} {} bound violations", th.name()));
        }
        lines.push(TheoremLine {
            theorem: th.name().to_string(),
            asserted: report.asserted(th),
            violations,
            worst_margin: report.worst_margin(th),
        });
    }
    let dec = report.decrease();
    let dom = report.gradient_dominance();
    if dec.failed > 0 {
        broken.push(format!("{} decrease failures", dec.failed));
    }
    if dom.failed > 0 {
        broken.push(format!("{} gradient-dominance failures", dom.failed));
    }
    let summary = RunSummary {
        kind: config.kind,
        assimilation: None,
        suite: Some(SuiteSummary {
            instances: s.instances,
            hypothesis_instances: report.hypothesis_instances(),
            theorems: lines,
            decrease_checked: dec.checked,
            decrease_failed: dec.failed,
            decrease_unresolved: dec.unresolved,
            dominance_checked: dom.checked,
            dominance_failed: dom.failed,
        }),
        bench: None,
    };
    Ok((summary, (!broken.is_empty()).then(|| broken.join("; "))))
}

fn mass_1d(m: usize) -> Result<Arc<WeightOperator>> {
    let h = 1.0 / (m + 1) as f64;
    let mut coo = CooMatrix::new(m, m);
    for i in 0..m {
        coo.push(i, i, 4.0 * h / 6.0);
        if i + 1 < m {
            coo.push(i, i + 1, h / 6.0);
            coo.push(i + 1, i, h / 6.0);
        }
    }
    WeightOperator::explicit(CsrMatrix::from(&coo))
        .map(Arc::new)
        .map_err(CliError::engine("mass weight"))
}

/// Low-rank-plus-noise stream used by the bench.
pub fn bench_stream(b: &Bench) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
    let mut draw = |r, c| DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let a = draw(b.rows, b.rank);
    let w = draw(b.cols, b.rank);
    let noise = draw(b.rows, b.cols);
    a * w.transpose() + noise * b.noise
}

fn bench(b: &Bench, out: &Path) -> Result<(RunSummary, Option<String>)> {
    let weight = match b.weight {
        BenchWeight::Identity => Arc::new(WeightOperator::identity(b.rows)),
        BenchWeight::Mass1d => mass_1d(b.rows)?,
    };
    let u = bench_stream(b);
    let scale = hs_norm_sq(&u, &weight).map_err(CliError::engine("stream norm"))?.sqrt();
    let mut runs = Vec::new();
    let mut broken = Vec::new();
    for &tol in &b.tolerances {
        let t = Instant::now();
        let tols = IpodTolerances::uniform(tol);
        let mut state = IpodState::init(&u.column(0).into_owned(), Arc::clone(&weight), tols)
            .map_err(CliError::engine("iPOD init"))?;
        let (mut buffered, mut extended, mut truncated) = (0, 1, 0);
        for j in 1..u.ncols() {
            let rep = state.update(&u.column(j).into_owned()).map_err(CliError::engine("iPOD update"))?;
            match rep.kind {
                UpdateKind::Buffered => buffered += 1,
                UpdateKind::Exact => extended += 1,
                UpdateKind::SvTruncated => truncated += 1,
            }
        }
        state.finalize();
        let rec = state.reconstruct_all().map_err(CliError::engine("reconstruction"))?;
        let exact = hs_norm_sq(&(&u - rec), &weight).map_err(CliError::engine("error norm"))?.sqrt();
        info!("tol {tol:e}: rank {} in {:.3}s", state.rank(), t.elapsed().as_secs_f64());
        if exact > state.error_bound() + 1e-12 * scale {
            broken.push(format!("tol {tol:e}: error {exact:e} above bound {:e}", state.error_bound()));
        }
        runs.push(BenchRun {
            tol,
            rank: state.rank(),
            e_p: state.e_p(),
            e_sv: state.e_sv(),
            error_bound: state.error_bound(),
            exact_error: exact,
            buffered,
            extended,
            sv_truncated: truncated,
        });
    }
    write_file(out, "bench.csv", |w| {
        let e = io_err(out, "bench.csv");
        (|| {
            writeln!(w, "tol,rank,e_p,e_sv,error_bound,exact_error,buffered,extended,sv_truncated")?;
            for r in &runs {
                writeln!(
                    w,
                    "{:e},{},{:e},{:e},{:e},{:e},{},{},{}",
                    r.tol, r.rank, r.e_p, r.e_sv, r.error_bound, r.exact_error, r.buffered, r.extended, r.sv_truncated
                )?;
            }
            Ok(())
        })()
        .map_err(e)
    })?;
    let summary = RunSummary {
        kind: ExperimentKind::IpodBench,
        assimilation: None,
        suite: None,
        bench: Some(BenchSummary {
            rows: b.rows,
            cols: b.cols,
            hs_norm: scale,
            runs,
        }),
    };
    Ok((summary, (!broken.is_empty()).then(|| broken.join("; "))))
}
