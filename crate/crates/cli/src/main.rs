use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dko_core::config::{load_config, parse_eps_list, ConfigError, ScenarioConfig, PRESETS};
use dko_core::model::AuditStatus;
use dko_core::output;
use dko_core::solver::{run_ensemble_with, run_trajectory, worker_count, Scenario, SolverError};
use dko_core::verify::{epsilon_study, run_suite, Suite, VerifyError};

/// Simulator and verification harness for penalized obstacle problems of
/// Dean-Kawasaki type.
#[derive(Parser)]
#[command(name = "sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path.
    Run {
        /// Preset name or path to a config file.
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 0)]
        path_id: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate paths `0..M` and write ensemble statistics.
    Ensemble {
        #[arg(long)]
        config: String,
        #[arg(long)]
        paths: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a check suite.
    Verify {
        #[arg(long, value_enum, default_value_t = SuiteArg::Fast)]
        suite: SuiteArg,
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coupled runs over a geometric list of penalty scales.
    StudyEpsilon {
        #[arg(long)]
        config: String,
        /// Comma-separated, strictly decreasing, e.g. `0.1,0.05,0.025,0.0125`.
        #[arg(long)]
        eps: String,
        #[arg(long, default_value_t = 0)]
        path_id: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the built-in presets.
    ListScenarios,
    /// Check the structural assumptions of a configuration.
    Audit {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Fast,
    Full,
}

enum Failure {
    Validation(String),
    Numerical(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numerical(m) | Failure::Other(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::NonFinite { .. } | SolverError::BadTimeStep { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Solver(s) => s.into(),
            VerifyError::Config(c) => c.into(),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(format!("cannot write output: {e}"))
    }
}

fn echo(sc: &Scenario) {
    println!("config_hash={} master_seed={}", sc.config_hash, sc.master_seed);
}

fn wrote(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn load(arg: &str) -> Result<(ScenarioConfig, Scenario), Failure> {
    let config = load_config(arg)?;
    let sc = config.build()?;
    Ok((config, sc))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, path_id, out } => {
            let (config, sc) = load(&config)?;
            echo(&sc);
            println!("path_id={path_id}");
            let rec = run_trajectory(&sc, path_id)?;
            wrote(&output::write_run(&out, &config, &sc, &rec)?);
        }
        Command::Ensemble { config, paths, out } => {
            let (config, sc) = load(&config)?;
            if paths < 2 {
                return Err(Failure::Validation(format!("ensemble needs at least 2 paths, got {paths}")));
            }
            echo(&sc);
            let threads = worker_count();
            println!("paths=0..{paths} threads={threads}");
            let stats = run_ensemble_with(&sc, 0, paths, threads, |_| {})?;
            wrote(&output::write_ensemble(&out, &config, &sc, &stats)?);
        }
        Command::Verify { suite, config, out } => {
            let (config, sc) = load(&config)?;
            echo(&sc);
            let suite = match suite {
                SuiteArg::Fast => Suite::Fast,
                SuiteArg::Full => Suite::Full,
            };
            let checks = run_suite(&config, suite, worker_count())?;
            for c in &checks {
                println!("{:<24} {} observed={:.4e} tolerance={:.4e}", c.check_id, c.status(), c.observed, c.tolerance);
            }
            wrote(&output::write_checks(&out, &config, "Verification suite", &checks)?);
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Failure::Other(format!("{failed} of {} checks failed", checks.len())));
            }
        }
        Command::StudyEpsilon { config, eps, path_id, out } => {
            let (config, sc) = load(&config)?;
            let eps = parse_eps_list(&eps)?;
            echo(&sc);
            let report = epsilon_study(&sc, &eps, path_id)?;
            let checks = report.checks();
            for r in &report.rows {
                println!("eps={:<10} penalty_l1={:.6e} lambda={:.6e} nu={:.6e}", r.epsilon, r.penalty_l1, r.lambda_total, r.nu_total);
            }
            match report.slope {
                Some(s) => println!("slope={s:.4}"),
                None => println!("slope=undefined (penalty never active)"),
            }
            wrote(&output::write_epsilon_study(&out, &config, &report, &checks)?);
        }
        Command::ListScenarios => {
            for (name, about) in PRESETS {
                println!("{name:<16} {about}");
            }
        }
        Command::Audit { config, out } => {
            let (config, sc) = load(&config)?;
            echo(&sc);
            let report = output::scenario_audit(&sc);
            for e in &report.entries {
                let status = if e.status == AuditStatus::Pass { "pass" } else { "FAIL" };
                println!("{:<10} {status} value={:.4e} at={:.4e} {}", e.id, e.value, e.worst_point, e.note);
            }
            wrote(&output::write_audit(&out, &config, &report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
