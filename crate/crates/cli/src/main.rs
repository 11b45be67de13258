//! `sigmak`: solve, verify and sweep prescribed-curvature problems from JSON
//! configs, and print the reference oracles.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 the solver did
//! not converge or failed numerically, 3 a verification check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sigmak::config::RunConfig;
use sigmak::pipeline::{run_oracle, run_solve, run_sweep, run_verify, ORACLES};
use sigmak::Error;

#[derive(Parser)]
#[command(name = "sigmak", version, about = "Prescribed sigma_k curvature of spacelike graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides the config, defaults to `out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Dirichlet problem at one grid spacing.
    Solve(Common),
    /// Run the estimate reports on a solution file.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Solution CSV; defaults to `solution.csv` in the output directory.
        #[arg(long, value_name = "PATH")]
        solution: Option<PathBuf>,
    },
    /// Solve and verify over several grid spacings.
    Sweep(Common),
    /// Print a reference oracle.
    Oracle {
        #[arg(value_name = "NAME")]
        name: String,
    },
}

const OK: u8 = 0;
const CONFIG: u8 = 1;
const SOLVER: u8 = 2;
const VERIFY: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. }
        | Error::ConeExit { .. }
        | Error::Numeric(_)
        | Error::Initialization(_)
        | Error::Admissibility { .. }
        | Error::Spacelike { .. }
        | Error::ConeViolation(_) => SOLVER,
        _ => CONFIG,
    }
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), Error> {
    let cfg = RunConfig::from_path(&common.config, common.seed)?;
    let out = common.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn solve(common: &Common, quiet: bool) -> Result<u8, Error> {
    let (cfg, out) = load(common)?;
    let run = run_solve(&cfg, &out)?;
    let s = &run.summary;
    if !quiet {
        println!(
            "h = {}: {} unknowns, residual {:.3e} after {} Newton steps",
            s.h, s.unknowns, s.residual_norm, s.newton_iterations
        );
        if let Some(e) = s.max_error {
            println!("max error against the exact solution: {e:.3e}");
        }
        for w in &s.warnings {
            println!("warning: {w}");
        }
        println!("wrote {}", out.display());
    }
    match &s.message {
        None => Ok(OK),
        Some(m) => {
            eprintln!("error: {m}");
            Ok(SOLVER)
        }
    }
}

fn verify(common: &Common, solution: Option<&Path>, quiet: bool) -> Result<u8, Error> {
    let (cfg, out) = load(common)?;
    let default = out.join("solution.csv");
    let result = run_verify(&cfg, solution.unwrap_or(&default), &out)?;
    if !quiet {
        for r in &result.reports {
            println!("{:<20} {:?} margin {:.3e}", r.name, r.status, r.margin);
        }
        for s in &result.skipped {
            println!("{:<20} skipped: {}", s.name, s.reason);
        }
        if let Some(p) = &result.lu_probe {
            println!("lu probe: empirical delta' = {:?}", p.delta_prime);
        }
    }
    Ok(if result.acceptable() { OK } else { VERIFY })
}

fn sweep(common: &Common, quiet: bool) -> Result<u8, Error> {
    let (cfg, out) = load(common)?;
    let table = run_sweep(&cfg, &out)?;
    if !quiet {
        print!("{}", table.to_csv());
        if !table.error_ratios.is_empty() {
            println!("error ratios: {:?}", table.error_ratios);
        }
        for r in &table.stability {
            println!("{} {:?} margin {:.3e}", r.name, r.status, r.margin);
        }
    }
    if let Some(f) = &table.failure {
        eprintln!("error: {f}");
    }
    Ok(if !table.complete() {
        SOLVER
    } else if !table.acceptable() {
        VERIFY
    } else {
        OK
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors
            return ExitCode::from(if e.use_stderr() { CONFIG } else { OK });
        }
    };
    let result = match &cli.command {
        Command::Solve(c) => solve(c, cli.quiet),
        Command::Verify { common, solution } => verify(common, solution.as_deref(), cli.quiet),
        Command::Sweep(c) => sweep(c, cli.quiet),
        Command::Oracle { name } => run_oracle(name).map(|text| {
            print!("{text}");
            OK
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(ref m) if m.starts_with("unknown oracle")) {
                eprintln!("available oracles: {}", ORACLES.join(", "));
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
