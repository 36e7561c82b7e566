//! `penny-billiards`: run the rolling-disk table experiments.
//!
//! Exit status is 0 on success, 2 for a bad configuration or command line,
//! and 3 when the engine fails (outputs computed so far are still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nonholo::engine::ImpactMode;
use nonholo::experiments::{preset, run_ensemble, run_scenario, ExperimentError, ScenarioConfig, PRESETS};

#[derive(Parser)]
#[command(name = "penny-billiards", version, about = "Rolling disk on a table with nonholonomic impacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv, events.csv and summary.json.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// Impact map: elastic, plastic, specular or specular:<e>.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ImpactMode>,
        /// Stop after this many impacts.
        #[arg(long)]
        impacts: Option<usize>,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the perturbation ensemble and write snapshot_t{T}.csv files.
    Ensemble {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the built-in scenarios, or print one as a config file.
    Presets {
        #[arg(long, value_name = "NAME")]
        show: Option<String>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Built-in scenario name (see `presets`).
    #[arg(long)]
    preset: Option<String>,
    /// TOML scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, ExperimentError> {
        match (&self.preset, &self.config) {
            (Some(name), _) => preset(name),
            (None, Some(path)) => ScenarioConfig::load(path),
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

fn parse_mode(s: &str) -> Result<ImpactMode, String> {
    s.parse()
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Simulate { source, mode, impacts, out } => {
            let mut cfg = source.load()?;
            if let Some(mode) = mode {
                cfg.engine.impact_mode = mode;
            }
            if let Some(n) = impacts {
                cfg.engine.max_impacts = n;
            }
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let report = run_scenario(&cfg)?;
            println!(
                "{} impacts ({} mode), terminated by {}; outputs in {}",
                report.trace.impact_count(),
                cfg.engine.impact_mode,
                report.trace.termination,
                cfg.output_dir.display()
            );
        }
        Command::Ensemble { source, out } => {
            let mut cfg = source.load()?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let report = run_ensemble(&cfg)?;
            println!(
                "{} members, {} failed; {} snapshot files in {}",
                report.members.len(),
                report.failed_count(),
                report.snapshot_paths.len(),
                cfg.output_dir.display()
            );
        }
        Command::Validate { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            println!(
                "{}: ok ({} mode, table {} x {}{})",
                config.display(),
                cfg.engine.impact_mode,
                cfg.table.a,
                cfg.table.b,
                if cfg.ensemble.is_some() { ", with ensemble" } else { "" }
            );
        }
        Command::Presets { show: Some(name) } => print!("{}", preset(&name)?.to_toml_string()?),
        Command::Presets { show: None } => {
            for name in PRESETS {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("penny-billiards: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
