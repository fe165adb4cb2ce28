use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use podgrad_cli::config::{output_root_from_env, ExperimentConfig, OUTPUT_ROOT_ENV};
use podgrad_cli::sweep::{expand, run_variants, SweepParam};
use podgrad_cli::{run_experiment, CliError, Result, RunSummary};

#[derive(Parser)]
#[command(name = "podgrad", version, about = "Compressed-gradient data assimilation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print its summary table.
    #[command(after_help = format!("Relative output_dir values resolve against ${OUTPUT_ROOT_ENV} when set."))]
    Run { config: PathBuf },
    /// Print the summary table of a finished run directory.
    Summarize { dir: PathBuf },
    /// Run the cartesian product of parameter overrides.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...` with a dotted key such as `compression.tol_p`.
        #[arg(long = "param", required = true)]
        params: Vec<SweepParam>,
        /// Worker threads.
        #[arg(long, default_value_t = 2)]
        jobs: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    let root = output_root_from_env();
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = cfg.resolve_output(root.as_deref());
            let summary = run_experiment(&cfg, &out)?;
            print!("{}", summary.table());
            eprintln!("artifacts in {}", out.display());
        }
        Command::Summarize { dir } => {
            let summary = RunSummary::load(&dir)?;
            print!("{}", summary.table());
        }
        Command::Sweep { config, params, jobs } => {
            let text = std::fs::read_to_string(&config).map_err(CliError::io(&config))?;
            let base = ExperimentConfig::load(&config)?;
            let out_root = base.resolve_output(root.as_deref());
            let variants = expand(&text, &params, &out_root)?;
            eprintln!("{} variants into {}", variants.len(), out_root.display());
            run_variants(&variants, jobs, &out_root)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
