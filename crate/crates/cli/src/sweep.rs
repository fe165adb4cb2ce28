//! Parameter sweeps: the cartesian product of `key=v1,v2,...` overrides,
//! each run in its own output directory on a worker thread.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{set_key, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::experiment::run_experiment;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepParam {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (key, values) = s.split_once('=').ok_or_else(|| format!("expected key=v1,v2,..., got `{s}`"))?;
        let key = key.trim();
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if key.is_empty() || values.iter().any(|v| v.is_empty()) {
            return Err(format!("expected key=v1,v2,..., got `{s}`"));
        }
        Ok(Self {
            key: key.to_string(),
            values,
        })
    }
}

#[derive(Debug)]
pub struct Variant {
    pub label: String,
    pub config: ExperimentConfig,
    pub output: PathBuf,
}

fn label_part(key: &str, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.+".contains(c) { c } else { '_' })
        .collect();
    format!("{key}={clean}")
}

/// Expands the sweep and validates every variant before anything runs.
pub fn expand(base_text: &str, params: &[SweepParam], out_root: &Path) -> Result<Vec<Variant>> {
    let base: toml::Table = toml::from_str(base_text).map_err(|e| CliError::Config(e.to_string()))?;
    if params.is_empty() {
        return Err(CliError::Config("sweep needs at least one --param".into()));
    }
    let mut combos: Vec<Vec<(&str, &str)>> = vec![Vec::new()];
    for p in params {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                p.values.iter().map(move |v| {
                    let mut next = c.clone();
                    next.push((p.key.as_str(), v.as_str()));
                    next
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .map(|combo| {
            let mut doc = base.clone();
            for (k, v) in &combo {
                if *k == "output_dir" {
                    return Err(CliError::Config("output_dir cannot be swept".into()));
                }
                set_key(&mut doc, k, v)?;
            }
            let label = combo.iter().map(|(k, v)| label_part(k, v)).collect::<Vec<_>>().join(",");
            let text = toml::to_string(&doc).expect("table serializes");
            let config = ExperimentConfig::from_toml_str(&text)
                .map_err(|e| CliError::Config(format!("variant {label}: {e}")))?;
            Ok(Variant {
                output: out_root.join(&label),
                label,
                config,
            })
        })
        .collect()
}

/// Runs the variants on `jobs` threads. Each variant's outcome is recorded
/// in `sweep.csv` under `out_root`; the first error by severity is returned.
pub fn run_variants(variants: &[Variant], jobs: usize, out_root: &Path) -> Result<()> {
    std::fs::create_dir_all(out_root).map_err(CliError::io(out_root))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<()>>>> = Mutex::new((0..variants.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(variants.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(v) = variants.get(i) else { break };
                log::info!("sweep variant {}", v.label);
                let r = run_experiment(&v.config, &v.output).map(|_| ());
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let results: Vec<Result<()>> = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every variant ran"))
        .collect();
    let index = out_root.join("sweep.csv");
    let mut w = std::fs::File::create(&index).map_err(CliError::io(&index))?;
    let mut body = String::from("variant,status,message\n");
    for (v, r) in variants.iter().zip(&results) {
        let (status, msg) = match r {
            Ok(()) => ("ok".to_string(), String::new()),
            Err(e) => (format!("exit {}", e.exit_code()), e.to_string().replace(['"', '\n'], "'")),
        };
        body.push_str(&format!("\"{}\",{status},\"{msg}\"\n", v.label));
    }
    w.write_all(body.as_bytes()).map_err(CliError::io(&index))?;
    results
        .into_iter()
        .filter_map(|r| r.err())
        .max_by_key(|e| e.exit_code())
        .map_or(Ok(()), Err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_parse() {
        let p: SweepParam = "compression.tol_p=1e-6, 1e-8".parse().unwrap();
        assert_eq!(p.key, "compression.tol_p");
        assert_eq!(p.values, vec!["1e-6", "1e-8"]);
        assert!("novalues".parse::<SweepParam>().is_err());
        assert!("k=1,,2".parse::<SweepParam>().is_err());
    }

    #[test]
    fn expansion_is_cartesian_and_validated() {
        let base = r#"
schema_version = 1
kind = "convergence-suite"
output_dir = "s"
[suite]
instances = 4
iterations = 3
max_dim = 3
seed = 1
"#;
        let params = vec![
            "suite.seed=1,2,3".parse().unwrap(),
            "suite.iterations=5,6".parse().unwrap(),
        ];
        let v = expand(base, &params, Path::new("/r")).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v[0].label, "suite.seed=1,suite.iterations=5");
        assert_eq!(v[5].output, PathBuf::from("/r/suite.seed=3,suite.iterations=6"));
        assert_eq!(v[5].config.suite.as_ref().unwrap().seed, 3);

        let bad = vec!["suite.instances=0".parse().unwrap()];
        assert_eq!(expand(base, &bad, Path::new("/r")).unwrap_err().exit_code(), 2);
        let typo = vec!["suite.instancez=3".parse().unwrap()];
        assert!(expand(base, &typo, Path::new("/r")).unwrap_err().to_string().contains("instancez"));
    }
}
