//! Machine-readable run summaries and the text tables built from them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentKind;
use crate::error::{CliError, Result};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assimilation: Option<AssimilationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssimilationSummary {
    pub dim: usize,
    pub n_steps: usize,
    pub exact: Option<ModeSummary>,
    pub inexact: Option<ModeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub iterations: usize,
    pub converged: bool,
    pub storage_rows: usize,
    pub storage_columns: usize,
    /// `√(Σ_j τ ‖u^j − u⋆^j‖²_M / ‖u^j‖²_M)` against the truth trajectory.
    pub relative_error: f64,
    pub final_objective: f64,
    pub final_grad_norm: f64,
    pub peak_snapshots: usize,
    pub error_bound: Option<f64>,
    pub max_xi_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub instances: usize,
    pub hypothesis_instances: usize,
    pub theorems: Vec<TheoremLine>,
    pub decrease_checked: usize,
    pub decrease_failed: usize,
    pub decrease_unresolved: usize,
    pub dominance_checked: usize,
    pub dominance_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremLine {
    pub theorem: String,
    pub asserted: usize,
    pub violations: usize,
    pub worst_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub rows: usize,
    pub cols: usize,
    pub hs_norm: f64,
    pub runs: Vec<BenchRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub tol: f64,
    pub rank: usize,
    pub e_p: f64,
    pub e_sv: f64,
    pub error_bound: f64,
    pub exact_error: f64,
    pub buffered: usize,
    pub extended: usize,
    pub sv_truncated: usize,
}

/// Six significant digits.
pub fn sig6(x: f64) -> String {
    format!("{x:.5e}")
}

fn opt_sig6(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_else(|| "-".into())
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            let _ = write!(line, "{cell:<w$}", w = widths[c]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

impl RunSummary {
    pub fn load(dir: &Path) -> Result<Self> {
        let empty = match std::fs::read_dir(dir) {
            Ok(mut entries) => entries.next().is_none(),
            Err(_) => return Err(CliError::Artifacts(format!("{} is not a readable run directory", dir.display()))),
        };
        if empty {
            return Err(CliError::Artifacts(format!("{} is empty: no run artifacts", dir.display())));
        }
        let path = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| CliError::Artifacts(format!("{} is missing; did the run finish?", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Artifacts(format!("{}: {e}", path.display())))
    }

    pub fn table(&self) -> String {
        if let Some(a) = &self.assimilation {
            let modes: Vec<(&str, &ModeSummary)> = [("exact", &a.exact), ("inexact", &a.inexact)]
                .into_iter()
                .filter_map(|(n, m)| m.as_ref().map(|m| (n, m)))
                .collect();
            let mut rows = vec![std::iter::once(String::new())
                .chain(modes.iter().map(|(n, _)| n.to_string()))
                .collect::<Vec<_>>()];
            let row = |label: &str, f: &dyn Fn(&ModeSummary) -> String| {
                std::iter::once(label.to_string())
                    .chain(modes.iter().map(|(_, m)| f(m)))
                    .collect::<Vec<_>>()
            };
            rows.push(row("number of iteration", &|m| m.iterations.to_string()));
            rows.push(row("data storage", &|m| format!("{}x{}", m.storage_rows, m.storage_columns)));
            rows.push(row("relative error", &|m| sig6(m.relative_error)));
            return render(&rows);
        }
        if let Some(s) = &self.suite {
            let mut rows = vec![vec![
                "theorem".to_string(),
                "asserted".into(),
                "violations".into(),
                "worst margin".into(),
            ]];
            for t in &s.theorems {
                rows.push(vec![
                    t.theorem.clone(),
                    t.asserted.to_string(),
                    t.violations.to_string(),
                    opt_sig6(t.worst_margin),
                ]);
            }
            let mut out = render(&rows);
            let _ = writeln!(
                out,
                "instances {}, meeting hypotheses {}; decrease {}/{} failed ({} unresolved); dominance {}/{} failed",
                s.instances,
                s.hypothesis_instances,
                s.decrease_failed,
                s.decrease_checked,
                s.decrease_unresolved,
                s.dominance_failed,
                s.dominance_checked
            );
            return out;
        }
        if let Some(b) = &self.bench {
            let mut rows = vec![vec![
                "tol".to_string(),
                "rank".into(),
                "error bound".into(),
                "exact error".into(),
                "bound/exact".into(),
            ]];
            for r in &b.runs {
                let ratio = (r.exact_error > 0.0).then(|| r.error_bound / r.exact_error);
                rows.push(vec![
                    sig6(r.tol),
                    r.rank.to_string(),
                    sig6(r.error_bound),
                    sig6(r.exact_error),
                    opt_sig6(ratio),
                ]);
            }
            return render(&rows);
        }
        String::new()
    }
}
