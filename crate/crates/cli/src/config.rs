//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
/// Overrides where relative `output_dir` values are resolved.
pub const OUTPUT_ROOT_ENV: &str = "PODGRAD_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LinearAssimilation,
    BurgersAssimilation,
    ConvergenceSuite,
    IpodBench,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearProblem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burgers: Option<BurgersSetup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descent: Option<Descent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<Compression>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<Suite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<Bench>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Forcing {
    Zero,
    Interface,
    ManufacturedSine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearProblem {
    pub h: f64,
    pub tau: f64,
    pub t_final: f64,
    pub beta_plus: f64,
    pub beta_minus: f64,
    #[serde(default = "default_forcing")]
    pub forcing: Forcing,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn default_forcing() -> Forcing {
    Forcing::Interface
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurgersSetup {
    pub n_cells: usize,
    pub nu: f64,
    pub tau: f64,
    pub t_final: f64,
    #[serde(default)]
    pub forcing_amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exact,
    Inexact,
    Both,
}

impl Mode {
    pub fn runs_exact(self) -> bool {
        self != Mode::Inexact
    }

    pub fn runs_inexact(self) -> bool {
        self != Mode::Exact
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradNorm,
    ObjectiveDecrement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descent {
    pub gamma: f64,
    pub kappa: f64,
    pub tol_sd: f64,
    #[serde(default = "default_termination")]
    pub termination: Termination,
    pub max_iters: usize,
    pub mode: Mode,
    /// Measure the gradient error in inexact runs. Stores the full trajectory.
    #[serde(default)]
    pub reference_gradient: bool,
}

fn default_termination() -> Termination {
    Termination::GradNorm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weight {
    L2,
    H1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compression {
    pub tol_p: f64,
    pub tol_sv: f64,
    #[serde(default = "default_tol_o")]
    pub tol_o: f64,
    #[serde(default = "default_reorth_cap")]
    pub reorth_cap: usize,
    #[serde(default = "default_weight")]
    pub weight: Weight,
}

fn default_tol_o() -> f64 {
    1e-12
}

fn default_reorth_cap() -> usize {
    5
}

fn default_weight() -> Weight {
    Weight::L2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub instances: usize,
    pub iterations: usize,
    pub max_dim: usize,
    pub seed: u64,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
}

fn default_fraction() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchWeight {
    Identity,
    Mass1d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bench {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub noise: f64,
    pub weight: BenchWeight,
    pub seed: u64,
    pub tolerances: Vec<f64>,
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{key}` must be positive and finite, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{key}` must be nonnegative and finite, got {v}")))
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{key}` must be at least {min}, got {v}")))
    }
}

fn required<'a, T>(section: &'a Option<T>, name: &str, kind: ExperimentKind) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("[{name}] section is required for kind `{}`", kind.name())))
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LinearAssimilation => "linear-assimilation",
            ExperimentKind::BurgersAssimilation => "burgers-assimilation",
            ExperimentKind::ConvergenceSuite => "convergence-suite",
            ExperimentKind::IpodBench => "ipod-bench",
        }
    }

    fn sections(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::LinearAssimilation => &["linear", "descent", "compression"],
            ExperimentKind::BurgersAssimilation => &["burgers", "descent", "compression"],
            ExperimentKind::ConvergenceSuite => &["suite"],
            ExperimentKind::IpodBench => &["bench"],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Normalized form: every defaulted key written out explicitly.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(CliError::Config("`output_dir` must not be empty".into()));
        }
        let present = [
            ("linear", self.linear.is_some()),
            ("burgers", self.burgers.is_some()),
            ("descent", self.descent.is_some()),
            ("compression", self.compression.is_some()),
            ("suite", self.suite.is_some()),
            ("bench", self.bench.is_some()),
        ];
        let wanted = self.kind.sections();
        for (name, is_set) in present {
            if is_set && !wanted.contains(&name) {
                return Err(CliError::Config(format!(
                    "[{name}] section is not used by kind `{}`",
                    self.kind.name()
                )));
            }
        }
        let kind = self.kind;
        match kind {
            ExperimentKind::LinearAssimilation => {
                let p = required(&self.linear, "linear", kind)?;
                positive("linear.h", p.h)?;
                positive("linear.tau", p.tau)?;
                positive("linear.t_final", p.t_final)?;
                positive("linear.beta_plus", p.beta_plus)?;
                positive("linear.beta_minus", p.beta_minus)?;
                nonnegative("linear.noise_sigma", p.noise_sigma)?;
                self.validate_descent()?;
            }
            ExperimentKind::BurgersAssimilation => {
                let b = required(&self.burgers, "burgers", kind)?;
                at_least("burgers.n_cells", b.n_cells, 2)?;
                positive("burgers.nu", b.nu)?;
                positive("burgers.tau", b.tau)?;
                positive("burgers.t_final", b.t_final)?;
                nonnegative("burgers.noise_sigma", b.noise_sigma)?;
                if !b.forcing_amplitude.is_finite() {
                    return Err(CliError::Config("`burgers.forcing_amplitude` must be finite".into()));
                }
                self.validate_descent()?;
            }
            ExperimentKind::ConvergenceSuite => {
                let s = required(&self.suite, "suite", kind)?;
                self.suite_config(s).validate().map_err(|e| CliError::Config(format!("[suite]: {e}")))?;
            }
            ExperimentKind::IpodBench => {
                let b = required(&self.bench, "bench", kind)?;
                at_least("bench.rows", b.rows, 1)?;
                at_least("bench.cols", b.cols, 1)?;
                at_least("bench.rank", b.rank, 1)?;
                if b.rank > b.rows.min(b.cols) {
                    return Err(CliError::Config(format!(
                        "`bench.rank` = {} exceeds min(rows, cols) = {}",
                        b.rank,
                        b.rows.min(b.cols)
                    )));
                }
                nonnegative("bench.noise", b.noise)?;
                if b.tolerances.is_empty() {
                    return Err(CliError::Config("`bench.tolerances` must not be empty".into()));
                }
                for &t in &b.tolerances {
                    nonnegative("bench.tolerances", t)?;
                }
            }
        }
        Ok(())
    }

    fn validate_descent(&self) -> Result<()> {
        let d = required(&self.descent, "descent", self.kind)?;
        nonnegative("descent.gamma", d.gamma)?;
        positive("descent.kappa", d.kappa)?;
        positive("descent.tol_sd", d.tol_sd)?;
        if d.reference_gradient && !d.mode.runs_inexact() {
            return Err(CliError::Config("`descent.reference_gradient` needs an inexact run".into()));
        }
        let c = required(&self.compression, "compression", self.kind)?;
        nonnegative("compression.tol_p", c.tol_p)?;
        nonnegative("compression.tol_sv", c.tol_sv)?;
        positive("compression.tol_o", c.tol_o)?;
        at_least("compression.reorth_cap", c.reorth_cap, 1)?;
        Ok(())
    }

    pub(crate) fn suite_config(&self, s: &Suite) -> podgrad::convergence::SuiteConfig {
        podgrad::convergence::SuiteConfig {
            instances: s.instances,
            iterations: s.iterations,
            max_dim: s.max_dim,
            seed: s.seed,
            fraction: s.fraction,
        }
    }

    /// Where artifacts go: `output_dir`, resolved against `root` when relative.
    pub fn resolve_output(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) if self.output_dir.is_relative() => r.join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

/// Output root from the environment, if set and non-empty.
pub fn output_root_from_env() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Sets a dotted key (`descent.kappa`) in a parsed config document. The
/// value is read as TOML when possible and as a bare string otherwise.
pub fn set_key(doc: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = parse_scalar(raw);
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Config(format!("empty key in `{key}`")))?;
    let mut table = doc;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINEAR: &str = r#"
schema_version = 1
kind = "linear-assimilation"
output_dir = "out"

[linear]
h = 0.25
tau = 0.05
t_final = 0.5
beta_plus = 1.0
beta_minus = 0.5
noise_sigma = 0.05
seed = 1

[descent]
gamma = 1e-3
kappa = 1.0
tol_sd = 1e-6
max_iters = 10
mode = "both"

[compression]
tol_p = 1e-8
tol_sv = 1e-8
"#;

    #[test]
    fn defaults_are_filled_and_round_trip() {
        let c = ExperimentConfig::from_toml_str(LINEAR).unwrap();
        assert_eq!(c.compression.as_ref().unwrap().tol_o, 1e-12);
        assert_eq!(c.linear.as_ref().unwrap().forcing, Forcing::Interface);
        let text = c.to_toml_string();
        assert!(text.contains("reorth_cap = 5"));
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = LINEAR.replace("kappa = 1.0", "kappa = 1.0\nkapa = 2.0");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("kapa"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn semantic_checks() {
        let cases = [
            (LINEAR.replace("kappa = 1.0", "kappa = -1.0"), "descent.kappa"),
            (LINEAR.replace("schema_version = 1", "schema_version = 9"), "schema_version"),
            (LINEAR.replace("[compression]\ntol_p = 1e-8\ntol_sv = 1e-8", ""), "[compression]"),
            (format!("{LINEAR}\n[suite]\ninstances = 1\niterations = 1\nmax_dim = 2\nseed = 0\n"), "not used"),
        ];
        for (text, needle) in cases {
            let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
            assert_eq!(err.exit_code(), 2);
            assert!(err.to_string().contains(needle), "{err}");
        }
    }

    #[test]
    fn set_key_parses_values() {
        let mut doc: toml::Table = toml::from_str(LINEAR).unwrap();
        set_key(&mut doc, "descent.kappa", "0.5").unwrap();
        set_key(&mut doc, "compression.weight", "h1").unwrap();
        set_key(&mut doc, "linear.seed", "7").unwrap();
        let c: ExperimentConfig = doc.try_into().unwrap();
        assert_eq!(c.descent.as_ref().unwrap().kappa, 0.5);
        assert_eq!(c.compression.as_ref().unwrap().weight, Weight::H1);
        assert_eq!(c.linear.as_ref().unwrap().seed, 7);
        assert!(set_key(&mut toml::Table::new(), "", "1").is_err());
    }

    #[test]
    fn output_root_applies_to_relative_dirs() {
        let c = ExperimentConfig::from_toml_str(LINEAR).unwrap();
        assert_eq!(c.resolve_output(Some(Path::new("/tmp/r"))), PathBuf::from("/tmp/r/out"));
        assert_eq!(c.resolve_output(None), PathBuf::from("out"));
    }
}
