//! `kinetic`: command-line front end to the Markov-generator workbench.
//!
//! Exit codes: 0 when every check passes, 1 when a mathematical invariant
//! fails (a check, a missing invariant density, a support violation, an
//! exhausted truncation budget, a maximum-principle certificate), 2 for bad
//! input.

mod commands;
mod report;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kinetic_core::Error;

use crate::report::Report;
use crate::scenario::Scenario;

#[derive(Debug, Parser)]
#[command(name = "kinetic", version, about = "Markov generators, their semigroups and H-theorems on a grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (default: the scenario's `output`, else
    /// `kinetic-out/<name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for the particle oracle.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Truncation tolerance for the semigroup.
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Grid nodes per axis.
    #[arg(long = "grid-n", global = true)]
    grid_n: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve a density and check positivity, mass and H-monotonicity.
    Run { file: PathBuf },
    /// Maximum-principle check of a truncated operator.
    Pawula { file: PathBuf },
    /// Solve for the invariant density.
    Invariant { file: PathBuf },
    /// H-curves with dissipation and boundary diagnostics.
    Hcurve { file: PathBuf },
    /// Compare the grid evolution with a particle ensemble.
    OracleCompare { file: PathBuf },
}

impl Command {
    fn file(&self) -> &Path {
        match self {
            Command::Run { file }
            | Command::Pawula { file }
            | Command::Invariant { file }
            | Command::Hcurve { file }
            | Command::OracleCompare { file } => file,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Run { .. } => "run",
            Command::Pawula { .. } => "pawula",
            Command::Invariant { .. } => "invariant",
            Command::Hcurve { .. } => "hcurve",
            Command::OracleCompare { .. } => "oracle-compare",
        }
    }
}

/// Errors that mean the mathematics failed rather than the input.
fn is_invariant_failure(e: &Error) -> bool {
    matches!(e, Error::NoInvariantDensity | Error::SupportViolation { .. } | Error::TruncationBudgetExceeded { .. })
}

fn apply_overrides(cli: &Cli, sc: &mut Scenario) -> Result<(), Error> {
    if let Some(tol) = cli.tol {
        sc.tol = tol;
    }
    if let Some(n) = cli.grid_n {
        sc.grid.n = scenario::Counts::Uniform(n);
    }
    if let Some(seed) = cli.seed {
        match sc.oracle.as_mut() {
            Some(o) => o.seed = seed,
            None => return Err(Error::Spec("--seed given but the scenario has no `oracle` section".into())),
        }
    }
    Ok(())
}

fn output_dir(cli: &Cli, configured: Option<&Path>, name: &str) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| configured.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("kinetic-out").join(name))
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string()
}

fn execute(cli: &Cli) -> Result<(Report, PathBuf), (Error, Option<(PathBuf, String)>)> {
    let file = cli.command.file();
    if let Command::Pawula { .. } = cli.command {
        if cli.tol.is_some() || cli.grid_n.is_some() || cli.seed.is_some() {
            return Err((Error::Spec("pawula takes no --tol, --grid-n or --seed".into()), None));
        }
        let out = output_dir(cli, None, &stem(file));
        std::fs::create_dir_all(&out).map_err(|e| (e.into(), None))?;
        let ctx = Some((out.clone(), stem(file)));
        return commands::pawula(file, &out).map(|r| (r, out)).map_err(|e| (e, ctx));
    }

    let mut sc = Scenario::load(file).map_err(|e| (e, None))?;
    apply_overrides(cli, &mut sc).map_err(|e| (e, None))?;
    let out = output_dir(cli, sc.output.as_deref(), &sc.name);
    std::fs::create_dir_all(&out).map_err(|e| (e.into(), None))?;
    let ctx = Some((out.clone(), sc.name.clone()));
    let result = match cli.command {
        Command::Run { .. } => commands::run(&sc, &out, false),
        Command::Hcurve { .. } => commands::run(&sc, &out, true),
        Command::Invariant { .. } => commands::invariant(&sc, &out),
        Command::OracleCompare { .. } => commands::oracle_compare(&sc, &out),
        Command::Pawula { .. } => unreachable!("handled above"),
    };
    result.map(|r| (r, out)).map_err(|e| (e, ctx))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok((mut rep, out)) => {
            if let Err(e) = rep.write(&out) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            rep.print();
            if rep.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err((e, ctx)) => {
            let code = if is_invariant_failure(&e) { 1 } else { 2 };
            if code == 1 {
                if let Some((out, name)) = ctx {
                    let mut rep = Report::new(cli.command.name(), &name);
                    rep.pass = false;
                    rep.error = Some(format!("{}: {e}", e.kind()));
                    // the error is what matters; a failed write adds nothing
                    let _ = rep.write(&out);
                }
                println!("FAIL {}: {e}", e.kind());
            } else {
                eprintln!("error ({}): {e}", e.kind());
            }
            ExitCode::from(code)
        }
    }
}
