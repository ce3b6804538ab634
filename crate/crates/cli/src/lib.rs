//! Command-line driver: config resolution, subcommand dispatch and output
//! writing for the `kpo` binary.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{resolve_config, Override};
use output::{config_hash, init_logger, json_file, take_warnings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kpo", version, about = "Coupled Kerr parametric oscillator network simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Echo informational messages.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Mean-field steady states -> states.json
    States,
    /// Bifurcation sweep -> branches.csv
    Sweep,
    /// Stable-state classification over (detuning, drive) -> phase_diagram.csv
    PhaseDiagram,
    /// Analytic fluctuation spectra -> psd.csv (and psd_welch.csv)
    Psd,
    /// Pump-noisy-probe sweep -> probe.csv, probe_psd.csv, branches.csv
    Probe,
    /// Lindblad steady state -> rho_observables.json, quad_dist.csv
    Lindblad,
    /// Lab-frame integration with lock-in -> labframe.csv
    Labframe,
    /// Normal modes and origin exponents -> modes.json
    NormalModes,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::States => "states",
            Command::Sweep => "sweep",
            Command::PhaseDiagram => "phase-diagram",
            Command::Psd => "psd",
            Command::Probe => "probe",
            Command::Lindblad => "lindblad",
            Command::Labframe => "labframe",
            Command::NormalModes => "normal-modes",
        }
    }
}

/// Splits dot-path overrides (`--a.b=value`) from ordinary arguments.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let (overrides, rest) = args.into_iter().partition(|a: &String| {
        a.strip_prefix("--").and_then(|s| s.split_once('=')).is_some_and(|(k, _)| k.contains('.'))
    });
    (rest, overrides)
}

/// Runs one invocation and returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let (args, raw_overrides) = split_overrides(args);
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    init_logger(cli.verbose);
    let started = chrono::Utc::now().to_rfc3339();

    let overrides: Result<Vec<Override>, _> = raw_overrides.iter().map(|s| Override::parse(s)).collect();
    let resolved = overrides.and_then(|o| match &cli.config {
        Some(path) => resolve_config(path, &o, cli.seed),
        None => Err(config::ConfigError(vec!["--config: required".into()])),
    });
    let cfg = match resolved {
        Ok(c) => c,
        Err(e) => {
            for msg in &e.0 {
                eprintln!("config error: {msg}");
            }
            return EXIT_CONFIG;
        }
    };
    let hash = config_hash(&cfg);

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return EXIT_IO;
        }
    };
    let result = pool.install(|| match cli.command {
        Command::States => commands::states(&cfg, &hash),
        Command::Sweep => commands::sweep(&cfg, &hash),
        Command::PhaseDiagram => commands::phase(&cfg, &hash),
        Command::Psd => commands::psd(&cfg, &hash),
        Command::Probe => commands::probe(&cfg, &hash),
        Command::Lindblad => commands::lindblad(&cfg, &hash),
        Command::Labframe => commands::labframe(&cfg, &hash),
        Command::NormalModes => commands::modes(&cfg, &hash),
    });

    let (mut files, code, error) = match result {
        Ok(files) => (files, EXIT_OK, None),
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if code == EXIT_CONFIG {
                return code;
            }
            (Vec::new(), code, Some(e.to_string()))
        }
    };
    let outputs: Vec<String> = files.iter().map(|f| f.name.clone()).collect();
    let log = json!({
        "subcommand": cli.command.name(),
        "started": started,
        "finished": chrono::Utc::now().to_rfc3339(),
        "exit_code": code,
        "error": error,
        "threads": pool.current_num_threads(),
        "config_path": cli.config,
        "config_hash": hash,
        "outputs": outputs,
        "warnings": take_warnings(),
        "resolved_config": cfg,
    });
    files.push(json_file("run_log.json", &log));
    match write_all(&cli.out, &files) {
        Ok(()) => code,
        Err(e) => {
            eprintln!("cannot write outputs to {}: {e}", cli.out.display());
            EXIT_IO
        }
    }
}

fn write_all(dir: &Path, files: &[output::OutputFile]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in files {
        std::fs::write(dir.join(&f.name), &f.contents)?;
    }
    Ok(())
}
