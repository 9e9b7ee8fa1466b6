//! `riemann-deform`: geometry inspection, boundary-index computation,
//! single solves, evolutions, closed-surface runs and a verification suite
//! for G-deformation boundary-value problems.

mod commands;
mod config;
mod output;
mod verify;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use config::{load_config, parse_grid_flag};
use deform_core::error::CoreError;
use output::OutDir;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_INDETERMINATE: u8 = 3;
const EXIT_NOT_ADMITTED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "riemann-deform",
    about = "Surface G-deformation experiments via Riemann-Hilbert boundary problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonFlags {
    /// Run configuration (JSON)
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override the config grid, e.g. 32x128
    #[arg(long, value_name = "NRxNT")]
    grid: Option<String>,
    /// Override the kernel threshold
    #[arg(long, value_name = "X")]
    tau_kernel: Option<f64>,
    /// Seed for randomized checks, recorded in report.json
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Build the surface and report curvature/area diagnostics
    Geometry(CommonFlags),
    /// Compute the winding index of the configured boundary coefficient
    Index(CommonFlags),
    /// Assemble and solve one linearized boundary-value problem
    Solve(CommonFlags),
    /// Run a G-deformation evolution to t0
    Evolve(CommonFlags),
    /// Solve the glued two-chart closed-surface problem
    Closed(CommonFlags),
    /// Run the built-in invariant suite
    Verify {
        /// Optional output directory for report.json
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Seed for randomized checks
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Maps an error chain to the documented exit codes: 2 for configuration
/// problems, 3 for numerical indeterminacy, 4 for admittance failures.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Config(_)
                | CoreError::MetricNotPositiveDefinite(..)
                | CoreError::MetricBound { .. } => EXIT_CONFIG,
                CoreError::NotAdmitted(_)
                | CoreError::NotConjugateIsothermal(_)
                | CoreError::DegenerateImmersion(_)
                | CoreError::OutsideWorkingRegion(_)
                | CoreError::SeamMismatch(_) => EXIT_NOT_ADMITTED,
                CoreError::Evolution { reason, .. } => {
                    if reason.contains("admitted") || reason.contains("conjugate isothermal") {
                        EXIT_NOT_ADMITTED
                    } else {
                        EXIT_INDETERMINATE
                    }
                }
                CoreError::DegenerateBoundaryField(_)
                | CoreError::UnderResolvedPhase(_)
                | CoreError::IndeterminateKernel(_)
                | CoreError::EliminationIllConditioned(_)
                | CoreError::Backend(_) => EXIT_INDETERMINATE,
            };
        }
    }
    EXIT_CONFIG
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify { out, seed } => {
            let checks = verify::run_suite(seed);
            let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
            let mut all_ok = true;
            for c in &checks {
                let verdict = if c.pass { "PASS" } else { "FAIL" };
                println!("{:width$}  {}  {}", c.name, verdict, c.detail);
                all_ok &= c.pass;
            }
            if let Some(dir) = out {
                let out = OutDir::create(&dir)?;
                out.write_json(
                    "report.json",
                    &json!({
                        "command": "verify",
                        "seed": seed,
                        "pass": all_ok,
                        "checks": checks
                            .iter()
                            .map(|c| json!({"name": c.name, "pass": c.pass, "detail": c.detail}))
                            .collect::<Vec<_>>(),
                    }),
                )?;
            }
            Ok(if all_ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_INDETERMINATE)
            })
        }
        Command::Geometry(f) => dispatch(f, "geometry", commands::geometry),
        Command::Index(f) => dispatch(f, "index", commands::index),
        Command::Solve(f) => dispatch(f, "solve", commands::solve),
        Command::Evolve(f) => dispatch(f, "evolve", commands::evolve),
        Command::Closed(f) => dispatch(f, "closed", commands::closed),
    }
}

fn dispatch(
    flags: CommonFlags,
    name: &str,
    body: fn(&config::RunConfig, &OutDir) -> Result<serde_json::Value>,
) -> Result<ExitCode> {
    let loaded = load_config(&flags.config)?;
    let mut cfg = loaded.config;
    if let Some(g) = &flags.grid {
        cfg.grid = parse_grid_flag(g)?;
    }
    if let Some(tau) = flags.tau_kernel {
        cfg.tau_kernel = Some(tau);
    }
    let out = OutDir::create(&flags.out)?;
    // the accepted config travels with the results, byte for byte
    out.write("config.json", loaded.raw.as_bytes())?;
    let result = body(&cfg, &out)?;
    out.write_json(
        "report.json",
        &json!({
            "command": name,
            "seed": flags.seed,
            "grid": { "n_r": cfg.grid.n_r, "n_theta": cfg.grid.n_theta },
            "tau_kernel": cfg.tau_kernel(),
            "result": result,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}
