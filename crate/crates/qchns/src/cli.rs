//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or numerical failure, 2 configuration error,
//! 3 a step failed after all time-step halvings, 4 an operator-lab check
//! failed.

use crate::config::{parse_config, SimConfig};
use crate::convergence::{self, StudyTable};
use crate::diagnostics;
use crate::error::Error;
use crate::lab::{self, LabParams};
use crate::picard;
use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STEP_FAILED: i32 = 3;
pub const EXIT_LAB_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "qchns", version, about = "Quasi-incompressible Cahn-Hilliard-Navier-Stokes solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time-step a configured run; writes records.csv and snapshots.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dense operator checks on 16x16 and 32x32 grids.
    OperatorLab { config: PathBuf },
    /// Refinement study of the spatial operators.
    Convergence {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Energy balance and monotonicity of a records file.
    EnergyReport {
        csv: PathBuf,
        /// Allowed per-step energy increase relative to E(0).
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::DomainError(_) | Error::GridTooSmall { .. } | Error::InvalidGrid(_) => EXIT_CONFIG,
        Error::StepFailed { .. } | Error::PhaseBoundExceeded(_) => EXIT_STEP_FAILED,
        _ => EXIT_FAILURE,
    }
}

fn load_config(path: &Path) -> Result<SimConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = parse_config(&text, path.parent())?;
    cfg.validate()?;
    Ok(cfg)
}

fn run_cmd(config: &Path, out_override: Option<PathBuf>, out: &mut dyn Write) -> Result<i32, Error> {
    let mut cfg = load_config(config)?;
    if let Some(o) = out_override {
        cfg.output_dir = o;
    }
    let res = picard::run(&cfg, Some(&cfg.output_dir))?;
    let last = res.records.last().expect("initial record");
    writeln!(
        out,
        "steps {} t {:.6e} E_total {:.10e} mass {:.10e} max |phi| {:.4}",
        res.records.len() - 1,
        last.t,
        last.e_total,
        last.mass,
        last.phi_max.abs().max(last.phi_min.abs())
    )?;
    writeln!(out, "records written to {}", cfg.output_path("records.csv").display())?;
    match res.failure {
        Some(msg) => {
            writeln!(out, "run stopped early: {msg}")?;
            Ok(EXIT_STEP_FAILED)
        }
        None => Ok(EXIT_OK),
    }
}

fn lab_cmd(config: &Path, out: &mut dyn Write) -> Result<i32, Error> {
    let cfg = load_config(config)?;
    let params = LabParams::new(cfg.params()?);
    let init = cfg.init.clone();
    let report = lab::run_lab(params, cfg.lx, cfg.ly, |g| init.sample(g))?;
    writeln!(out, "{report}")?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_LAB_FAILED })
}

fn convergence_cmd(config: &Path, levels: usize, out: &mut dyn Write) -> Result<i32, Error> {
    let cfg = load_config(config)?;
    if levels < 2 {
        return Err(Error::Config("--levels must be at least 2".into()));
    }
    let rows = convergence::study(cfg.grid()?, levels)?;
    write!(out, "{}", StudyTable(&rows))?;
    Ok(EXIT_OK)
}

fn energy_cmd(csv: &Path, tol: f64, out: &mut dyn Write) -> Result<i32, Error> {
    let records = diagnostics::read_records(csv)?;
    let r = diagnostics::energy_report(&records, tol);
    writeln!(out, "steps {}", r.steps)?;
    writeln!(out, "max energy-balance residual {:.6e}", r.max_balance_residual)?;
    writeln!(out, "cumulative energy-balance residual {:.6e}", r.cumulative_balance_residual)?;
    writeln!(out, "energy monotone: {} (largest increase {:.3e})", if r.monotone { "yes" } else { "no" }, r.max_increase)?;
    writeln!(out, "mass drift {:.3e}", r.mass_drift)?;
    writeln!(out, "max constraint residual {:.3e}", r.max_constraint_res)?;
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let res = match cli.command {
        Command::Run { config, out: o } => run_cmd(&config, o, out),
        Command::OperatorLab { config } => lab_cmd(&config, out),
        Command::Convergence { config, levels } => convergence_cmd(&config, levels, out),
        Command::EnergyReport { csv, tol } => energy_cmd(&csv, tol, out),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
