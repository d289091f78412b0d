//! Command-line front end: `solve`, `domain`, `verify` and `lemma`.

pub mod config;
pub mod output;
pub mod suite;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use qlhyp_core::determinacy::{ybar, ybar_integral};
use qlhyp_core::iteration::{lemma_bound, lemma_oracle};
use qlhyp_core::problem::{validate, AdmissibleBox, DEFAULT_HYPERBOLICITY_TOL};
use qlhyp_core::verify::CASE_NAMES;
use qlhyp_core::{solve, ConvergenceReport, DeterminacyConstants, ProblemSpec, Solution, SolveError};
use serde::Serialize;

use config::Config;
use output::{write_csv, write_json, Cell};
use suite::{run_case, SuiteOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "qlhyp",
    version,
    about = "Local solutions of diagonal quasilinear hyperbolic systems by successive approximation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the problem in a config file; writes solution.csv and report.json.
    Solve {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the existence constants and write the barrier to barrier.csv.
    Domain {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Rows in barrier.csv.
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Run the closed-form registry checks; writes verify.json.
    Verify {
        /// Registry case to run; repeatable.
        #[arg(long = "case", value_parser = clap::builder::PossibleValuesParser::new(CASE_NAMES))]
        cases: Vec<String>,
        /// Run every registry case (the default when no case is named).
        #[arg(long)]
        all: bool,
        /// Coarser grids and fewer cone seeds.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare the closed-form convergence bound with its integral recursion.
    Lemma {
        #[arg(long, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        zbar: f64,
        #[arg(long = "nu-max")]
        nu_max: usize,
        /// Right end of the τ interval.
        #[arg(long, default_value_t = 1.0)]
        tau_max: f64,
        /// Quadrature intervals for the recursion.
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        /// Intervals between reported τ values.
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Solve { config, out } => cmd_solve(&config, &out),
        Command::Domain { config, out, points } => cmd_domain(&config, &out, points),
        Command::Verify { cases, all, quick, out } => cmd_verify(cases, all, quick, &out),
        Command::Lemma { alpha, beta, zbar, nu_max, tau_max, steps, rows, out } => {
            cmd_lemma(alpha, beta, zbar, nu_max, tau_max, steps, rows, &out)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

/// Loads, estimates and validates; any failure here is a config error.
fn prepare(path: &Path) -> Result<(Config, ProblemSpec, DeterminacyConstants)> {
    let cfg = Config::load(path)?;
    let spec = cfg.spec()?;
    let constants = DeterminacyConstants::estimate(&spec, &cfg.estimate_options())?;
    let report = validate(&spec, &AdmissibleBox::new(&spec, constants.c0), 20, DEFAULT_HYPERBOLICITY_TOL);
    if !report.passed() {
        bail!("problem failed validation:\n{report}");
    }
    Ok((cfg, spec, constants))
}

#[derive(Serialize)]
struct SolveReport<'a> {
    #[serde(flatten)]
    report: &'a ConvergenceReport,
    #[serde(flatten)]
    constants: &'a DeterminacyConstants,
}

fn cmd_solve(config: &Path, out: &Path) -> Result<i32> {
    let (cfg, spec, constants) = prepare(config)?;
    constants.trapezoid(&spec)?;
    let params = cfg.grid_params(&spec);
    let (sol, code) = match solve(&spec, &constants, params, &cfg.solve_options()) {
        Ok(sol) => (sol, EXIT_OK),
        Err(SolveError::NotConverged(sol)) => (*sol, EXIT_NOT_CONVERGED),
        Err(e) => return Err(e.into()),
    };
    write_solution(&out.join("solution.csv"), &sol)?;
    write_json(&out.join("report.json"), &SolveReport { report: &sol.report, constants: &sol.constants })?;
    let r = &sol.report;
    if r.converged {
        eprintln!(
            "converged after {} iterations, last difference {:e}",
            r.iterations_used,
            r.Z.last().copied().unwrap_or(0.0)
        );
    } else {
        eprintln!(
            "did not converge in {} iterations, last difference {:e}",
            r.iterations_used,
            r.Z.last().copied().unwrap_or(f64::NAN)
        );
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    Ok(code)
}

fn write_solution(path: &Path, sol: &Solution) -> Result<()> {
    let n = sol.field.n();
    let mut header = vec!["level".to_string(), "t".to_string(), "x".to_string()];
    for suffix in ["", "_x", "_t"] {
        header.extend((1..=n).map(|i| format!("u{i}{suffix}")));
    }
    let rows = sol.field.nodes().zip(sol.dx_field.nodes()).zip(sol.dt_field.nodes()).map(|((u, ux), ut)| {
        let (k, _, x, t, u) = u;
        let mut row = Vec::with_capacity(3 + 3 * n);
        row.extend([Cell::Int(k as u64), Cell::Num(t), Cell::Num(x)]);
        row.extend(u.iter().chain(ux.4).chain(ut.4).map(|&v| Cell::Num(v)));
        row
    });
    let rows: Vec<Vec<Cell>> = rows.collect();
    write_csv(path, &header, rows.iter().map(Vec::as_slice))
}

fn cmd_domain(config: &Path, out: &Path, points: usize) -> Result<i32> {
    let (_, spec, c) = prepare(config)?;
    let trap = c.trapezoid(&spec)?;
    println!("n            = {}", c.n);
    println!("C0           = {}", c.c0);
    println!("C1           = {}", c.c1);
    println!("C2           = {}", c.c2);
    println!("C3           = {}", c.c3);
    println!("C4           = {}", c.c4);
    println!("Lambda       = {}", c.lambda);
    println!("T            = {}", c.t_final);
    if c.blowup_time.is_finite() {
        println!("blowup_time  = {}", c.blowup_time);
    } else {
        println!("blowup_time  = inf");
    }
    println!("beta         = {}", c.beta());
    println!("integral     = {}", ybar_integral(c.t_final, c.n, c.c1, c.c2)?);
    println!("top edge     = [{}, {}]", trap.left(c.t_final), trap.right(c.t_final));

    let points = points.max(2);
    let mut rows = Vec::with_capacity(points);
    for j in 0..points {
        let t = c.t_final * j as f64 / (points - 1) as f64;
        rows.push([Cell::Num(t), Cell::Num(ybar(t, c.n, c.c1, c.c2)?), Cell::Num(ybar_integral(t, c.n, c.c1, c.c2)?)]);
    }
    write_csv(
        &out.join("barrier.csv"),
        &["t".into(), "Ybar".into(), "integral".into()],
        rows.iter().map(|r| r.as_slice()),
    )?;
    Ok(EXIT_OK)
}

fn cmd_verify(cases: Vec<String>, all: bool, quick: bool, out: &Path) -> Result<i32> {
    let names: Vec<String> =
        if all || cases.is_empty() { CASE_NAMES.iter().map(|s| s.to_string()).collect() } else { cases };
    let opts = if quick { SuiteOptions::quick() } else { SuiteOptions::default() };
    let mut results = Vec::new();
    for name in &names {
        let r = run_case(name, &opts)?;
        println!("{} {name} ({:.1} s)", if r.passed { "PASS" } else { "FAIL" }, r.seconds);
        for c in r.checks.iter().filter(|c| !c.passed) {
            println!("  {}: {:e} (margin {:e})", c.name, c.value, c.margin);
        }
        results.push(r);
    }
    write_json(&out.join("verify.json"), &results)?;
    Ok(if results.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_ERROR })
}

#[allow(clippy::too_many_arguments)]
fn cmd_lemma(
    alpha: f64,
    beta: f64,
    zbar: f64,
    nu_max: usize,
    tau_max: f64,
    steps: usize,
    rows: usize,
    out: &Path,
) -> Result<i32> {
    if tau_max.is_nan() || tau_max <= 0.0 || steps == 0 || rows == 0 || !steps.is_multiple_of(rows) {
        bail!("need tau_max > 0 and steps a positive multiple of rows");
    }
    let taus: Vec<f64> = (0..=steps).map(|j| tau_max * j as f64 / steps as f64).collect();
    let oracle = lemma_oracle(alpha, beta, zbar, nu_max, &taus);
    let mut table = Vec::new();
    for (nu, row) in oracle.iter().enumerate() {
        for j in (0..=steps).step_by(steps / rows) {
            let closed = lemma_bound(alpha, beta, zbar, nu as u32, taus[j]);
            let rel = if closed == 0.0 { (row[j] - closed).abs() } else { ((row[j] - closed) / closed).abs() };
            table.push([
                Cell::Int(nu as u64),
                Cell::Num(taus[j]),
                Cell::Num(closed),
                Cell::Num(row[j]),
                Cell::Num(rel),
            ]);
        }
    }
    write_csv(
        &out.join("lemma.csv"),
        &["nu".into(), "tau".into(), "closed_form".into(), "oracle".into(), "rel_diff".into()],
        table.iter().map(|r| r.as_slice()),
    )?;
    let worst = table.iter().filter_map(|r| if let Cell::Num(v) = r[4] { Some(v) } else { None }).fold(0.0, f64::max);
    println!("largest relative difference: {worst:e}");
    Ok(EXIT_OK)
}
