//! `negishi`: solve, audit and stress exchange-economy equilibria from the
//! command line.
//!
//! Exit codes: 0 success or consistent verdict, 2 inconsistent verdict,
//! 3 solver non-convergence, 4 invalid spec or malformed input,
//! 1 any other failure (for example an unwritable output directory).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use negishi_core::continuation::{self, FamilyKind};
use negishi_core::diagnostics::{self, ResidualTolerances, Verdict, SPREAD_TOL};
use negishi_core::report::{self, json_string, write_atomic};
use negishi_core::{spec_file, EconomySpec, Error, SolverOptions};

const EXIT_INCONSISTENT: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;
const EXIT_INVALID: u8 = 4;

/// Default threshold for re-solved tail deviations.
const TIME_CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "negishi", version, about = "Negishi-weight equilibria of exchange economies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// Economy spec file (TOML).
    #[arg(long, value_name = "PATH")]
    spec: PathBuf,
    /// Directory for report files; created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Tolerance override; its meaning depends on the command.
    #[arg(long, value_name = "X")]
    tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the competitive equilibrium (tol: budget residual, default 1e-10).
    Solve(Common),
    /// Audit a consumption/price path CSV against the economy (tol: Euler, clearing and budget gates, default 1e-10).
    Audit {
        #[command(flatten)]
        common: Common,
        /// Path CSV with header `period, price, c_0, c_1, ...`.
        #[arg(long, value_name = "PATH")]
        path: PathBuf,
    },
    /// Test a forced-zero-bond economy for a supporting interest-rate path (tol: rate spread, default 1e-12).
    AutarkyCheck(Common),
    /// Solve a family of neighboring economies and extrapolate the limit (tol: final member diff, default 1e-6).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        family: FamilyArgs,
    },
    /// Re-solve from every restart period and compare tails (tol: max deviation, default 1e-8).
    Consistency(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Bonds,
    Endowment,
    Horizon,
}

#[derive(Debug, Clone, clap::Args)]
struct FamilyArgs {
    #[arg(long, value_enum, default_value = "bonds")]
    family: Family,
    /// First perturbation size (or first horizon for `horizon`).
    #[arg(long, value_name = "X")]
    eps_start: Option<f64>,
    /// Factor between consecutive parameters.
    #[arg(long, value_name = "Y")]
    eps_factor: Option<f64>,
    #[arg(long, value_name = "N")]
    eps_count: Option<usize>,
    /// Per-agent direction, comma separated.
    #[arg(long, value_name = "a,b,...", value_delimiter = ',', allow_negative_numbers = true)]
    direction: Option<Vec<f64>>,
    /// Decay of the endowment perturbation.
    #[arg(long, value_name = "X", default_value_t = 0.5)]
    decay: f64,
}

/// An input problem detected by the CLI itself.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_INVALID),
            };
        }
    };
    match run(cli.command) {
        Ok(Verdict::Consistent) => ExitCode::SUCCESS,
        Ok(Verdict::Inconsistent) => ExitCode::from(EXIT_INCONSISTENT),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<InputError>().is_some() {
        return EXIT_INVALID;
    }
    match e.downcast_ref::<Error>() {
        Some(err) => core_exit_code(err),
        None => 1,
    }
}

fn core_exit_code(err: &Error) -> u8 {
    match err {
        Error::NonConvergence { .. } | Error::Bracket { .. } | Error::Consistency(_) => EXIT_NONCONVERGENCE,
        Error::Member { source, .. } => core_exit_code(source),
        Error::Domain { .. }
        | Error::Index { .. }
        | Error::Invalid(_)
        | Error::Parse(_)
        | Error::Shape(_)
        | Error::Regime(_) => EXIT_INVALID,
    }
}

fn run(command: Command) -> anyhow::Result<Verdict> {
    match command {
        Command::Solve(c) => solve(&c),
        Command::Audit { common, path } => audit(&common, &path),
        Command::AutarkyCheck(c) => autarky_check(&c),
        Command::Sweep { common, family } => sweep(&common, &family),
        Command::Consistency(c) => consistency(&c),
    }
}

fn load(common: &Common) -> anyhow::Result<EconomySpec> {
    if let Some(tol) = common.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(input_error(format!("--tol must be positive, got {tol}")));
        }
    }
    let econ = spec_file::read_economy(&common.spec)?;
    econ.ensure_valid()?;
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create output directory {}", common.out.display()))?;
    Ok(econ)
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    write_atomic(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn solve(c: &Common) -> anyhow::Result<Verdict> {
    let econ = load(c)?;
    let opts = SolverOptions::with_tol(c.tol.unwrap_or(SolverOptions::default().tol));
    let eq = negishi_core::solve_equilibrium(&econ, &opts)?;
    write(&c.out, "equilibrium.csv", &report::equilibrium_csv(&eq))?;
    write(&c.out, "residuals.csv", &report::residual_csv(&eq.residuals))?;
    write(&c.out, "metadata.json", &json_string(&report::equilibrium_metadata(&econ, &eq)))?;
    println!(
        "solved {} agents over {} periods: max budget residual {:e} ({} iterations, {:?})",
        econ.n_agents(),
        econ.n_periods(),
        eq.trace.residual_norm,
        eq.trace.iterations,
        eq.trace.method
    );
    Ok(Verdict::Consistent)
}

fn audit(c: &Common, path: &Path) -> anyhow::Result<Verdict> {
    let econ = load(c)?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read path file {}: {e}", path.display())))?;
    let (alloc, prices) = report::parse_path_csv(&text, &econ)?;
    let r = negishi_core::audit(&econ, &alloc, &prices)?;
    let mut tol = ResidualTolerances::default();
    if let Some(x) = c.tol {
        tol.euler = x;
        tol.clearing = x;
        tol.budget = x;
    }
    write(&c.out, "residuals.csv", &report::residual_csv(&r))?;
    write(&c.out, "audit_summary.json", &json_string(&report::audit_summary(&r, &tol)))?;
    let pass = r.passes(&tol);
    println!(
        "audit {}: max euler {:e}, max clearing {:e}, max budget {:e}, max mu-ratio drift {:e}",
        if pass { "passed" } else { "failed" },
        r.max_euler(),
        r.max_clearing(),
        r.max_budget(),
        r.max_mu_ratio_drift()
    );
    if let (false, Some(w)) = (pass, r.worst_clearing()) {
        println!("worst clearing residual at period {}", w.period.unwrap_or(0));
    }
    Ok(if pass { Verdict::Consistent } else { Verdict::Inconsistent })
}

fn autarky_check(c: &Common) -> anyhow::Result<Verdict> {
    let econ = load(c)?;
    let r = diagnostics::zero_bond_feasibility(&econ, c.tol.unwrap_or(SPREAD_TOL))?;
    write(&c.out, "required_rates.csv", &report::required_rates_csv(&r))?;
    write(&c.out, "consistency.json", &json_string(&report::consistency_json(&r)))?;
    println!("verdict {:?}: rate spread {}", r.verdict, report::fmt_num(r.rate_spread));
    Ok(r.verdict)
}

fn sweep(c: &Common, f: &FamilyArgs) -> anyhow::Result<Verdict> {
    let econ = load(c)?;
    let n = econ.n_agents();
    let default_direction = |lead: f64, rest: f64| -> Vec<f64> {
        (0..n).map(|j| match j {
            0 => lead,
            1 => rest,
            _ => 0.0,
        })
        .collect()
    };
    let (kind, start, factor, count) = match f.family {
        Family::Bonds => (
            FamilyKind::InitialBondShrink {
                direction: f.direction.clone().unwrap_or_else(|| default_direction(1.0, -1.0)),
            },
            f.eps_start.unwrap_or(1.0),
            f.eps_factor.unwrap_or(0.5),
            f.eps_count.unwrap_or(13),
        ),
        Family::Endowment => (
            FamilyKind::EndowmentPerturbation {
                direction: f.direction.clone().unwrap_or_else(|| default_direction(1.0, 0.0)),
                decay: f.decay,
            },
            f.eps_start.unwrap_or(1.0),
            f.eps_factor.unwrap_or(0.5),
            f.eps_count.unwrap_or(13),
        ),
        Family::Horizon => (
            FamilyKind::HorizonGrowth,
            f.eps_start.unwrap_or(econ.horizon as f64),
            f.eps_factor.unwrap_or(2.0),
            f.eps_count.unwrap_or(5),
        ),
    };
    if count == 0 {
        return Err(input_error("--eps-count must be at least 1"));
    }
    if !(start > 0.0 && factor > 0.0 && start.is_finite() && factor.is_finite()) {
        return Err(input_error("--eps-start and --eps-factor must be positive"));
    }
    let params: Vec<f64> = (0..count)
        .map(|k| {
            let x = start * factor.powi(k as i32);
            if matches!(f.family, Family::Horizon) { x.round() } else { x }
        })
        .collect();
    let family = continuation::generate_family(&econ, kind, &params)?;
    let run = continuation::run_continuation(
        &family,
        c.tol.unwrap_or(continuation::CONVERGENCE_TOL),
        &SolverOptions::default(),
    )?;
    let limit = continuation::limit_report(&run)?;
    write(&c.out, "continuation.csv", &report::continuation_csv(&run))?;
    write(&c.out, "limit.csv", &report::limit_csv(&limit))?;
    write(&c.out, "metadata.json", &json_string(&report::continuation_metadata(&run, &limit)))?;
    println!(
        "{} members, final diff {}, converged {}, limit audit {}",
        run.members.len(),
        run.diffs.last().map(|d| report::fmt_num(*d)).unwrap_or_else(|| "n/a".into()),
        run.converged,
        if limit.passes_audit { "passed" } else { "failed" }
    );
    if let Some(fz) = &limit.forced_zero {
        println!(
            "limit {} the forced zero-bond constraint (max net trade {})",
            if fz.satisfied { "satisfies" } else { "violates" },
            report::fmt_num(fz.max_trade)
        );
    }
    Ok(Verdict::Consistent)
}

fn consistency(c: &Common) -> anyhow::Result<Verdict> {
    let econ = load(c)?;
    let opts = SolverOptions::default();
    let eq = negishi_core::solve_equilibrium(&econ, &opts)?;
    let deviations = (1..econ.horizon)
        .map(|s| Ok((s, diagnostics::time_consistency_check(&econ, &eq, s, &opts)?)))
        .collect::<negishi_core::Result<Vec<_>>>()?;
    write(&c.out, "time_consistency.csv", &report::time_consistency_csv(&deviations))?;
    let threshold = c.tol.unwrap_or(TIME_CONSISTENCY_TOL);
    let worst = deviations.iter().map(|d| d.1).fold(0.0, f64::max);
    println!("max tail deviation {} over {} restart periods", report::fmt_num(worst), deviations.len());
    Ok(if worst < threshold { Verdict::Consistent } else { Verdict::Inconsistent })
}
