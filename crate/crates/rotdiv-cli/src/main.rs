//! Convergence-study command line.
//!
//! Configures one manufactured experiment, runs the solver over a range of
//! refinement levels and polynomial degrees, and writes the error/order table
//! as CSV (full precision) or Markdown (three significant digits). Output is
//! deterministic: re-running the same configuration produces bit-identical
//! files. Exit codes: 0 when every requested solve converged, 1 on solver or
//! I/O failure, 2 on usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rotdiv::hybridsystem::{HybridizationType, SolverKind};
use rotdiv::mesh::ElementKind;
use rotdiv::study::{run_convergence_study, StudyConfig, StudyOutcome};
use rotdiv::verify::{ConvergenceRecord, ExperimentId};

/// Degrees above this need `--allow-high-degree`; large k mostly measures
/// quadrature and dense-factorization cost, not the method.
const SOFT_DEGREE_LIMIT: usize = 3;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ElementsArg {
    /// Structured triangles (squares split along a diagonal).
    Tri,
    /// Structured squares.
    Quad,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    /// Direct factorization: sparse Cholesky for hybridization 3, dense LU
    /// for hybridizations 1 and 2.
    Cholesky,
    /// Diagonally preconditioned conjugate gradients (hybridization 3 only).
    Cg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    /// Comma-separated values, full precision.
    Csv,
    /// Markdown table, three significant digits.
    Md,
}

/// Convergence studies for a trace-based mixed solver of
/// curl rot u − grad div u = f on the unit square.
#[derive(Debug, Parser)]
#[command(name = "rotdiv", version)]
struct Args {
    /// Manufactured experiment: 1 (electric), 2 (magnetic), 3 (Dirichlet).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    experiment: u8,

    /// Element kind.
    #[arg(long, value_enum)]
    elements: ElementsArg,

    /// Hybridization: which trace pair carries the global unknowns.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
    hybridization: u8,

    /// Polynomial degrees, comma separated (e.g. 0,1,2).
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,

    /// Refinement levels as min:max (inclusive).
    #[arg(long, value_parser = parse_levels)]
    levels: (u32, u32),

    /// Tangential stabilization parameter (> 0).
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,

    /// Normal stabilization parameter (> 0).
    #[arg(long, default_value_t = 1.0)]
    tau: f64,

    /// Linear solver for the global trace systems.
    #[arg(long, value_enum, default_value_t = SolverArg::Cholesky)]
    solver: SolverArg,

    /// Relative-residual tolerance for the iterative solver.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,

    /// Output table format.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,

    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also write the last assembled global matrix as zero-based
    /// "i j value" coordinate text.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,

    /// Accept polynomial degrees above the soft limit of 3.
    #[arg(long)]
    allow_high_degree: bool,
}

fn parse_levels(s: &str) -> Result<(u32, u32), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected min:max, got `{s}`"))?;
    let lo: u32 = lo.trim().parse().map_err(|e| format!("bad minimum level `{lo}`: {e}"))?;
    let hi: u32 = hi.trim().parse().map_err(|e| format!("bad maximum level `{hi}`: {e}"))?;
    if lo == 0 || lo > hi {
        return Err(format!("level range {lo}:{hi} must satisfy 1 ≤ min ≤ max"));
    }
    Ok((lo, hi))
}

/// Scientific notation with three significant digits and a two-digit
/// exponent, e.g. `9.70e-01`.
fn sci3(v: f64) -> String {
    if v == 0.0 {
        return "0.00e+00".to_string();
    }
    let s = format!("{v:.2e}");
    let (mantissa, exp) = s.split_once('e').expect("exponential format");
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    format!("{mantissa}e{sign}{digits:0>2}")
}

fn eoc_cell(rate: Option<f64>, undefined: &str) -> String {
    match rate {
        Some(r) => format!("{r:.2}"),
        None => undefined.to_string(),
    }
}

/// Full-precision CSV: one row per (k, level); undefined rates are empty.
fn render_csv(records: &[ConvergenceRecord]) -> String {
    let mut out = String::from(
        "k,level,h,e_sigma,eoc_sigma,e_u,eoc_u,e_phi,eoc_phi,\
         e_sigma_check,eoc_sigma_check,e_phi_hat,eoc_phi_hat\n",
    );
    for record in records {
        for row in &record.rows {
            let e = &row.errors;
            let r = &row.eoc;
            out.push_str(&format!(
                "{},{},{:e},{:e},{},{:e},{},{:e},{},{:e},{},{:e},{}\n",
                record.degree,
                row.level,
                row.h,
                e.e_sigma,
                eoc_cell(r.sigma, ""),
                e.e_u,
                eoc_cell(r.u, ""),
                e.e_phi,
                eoc_cell(r.phi, ""),
                e.e_sigma_check,
                eoc_cell(r.sigma_check, ""),
                e.e_phi_hat,
                eoc_cell(r.phi_hat, ""),
            ));
        }
    }
    out
}

/// Markdown table with three significant digits; undefined rates are `--`.
fn render_md(records: &[ConvergenceRecord]) -> String {
    let mut out = String::from(
        "| k | level | h | e_sigma | eoc | e_u | eoc | e_phi | eoc \
         | e_sigma_check | eoc | e_phi_hat | eoc |\n\
         |---|---|---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for record in records {
        for row in &record.rows {
            let e = &row.errors;
            let r = &row.eoc;
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                record.degree,
                row.level,
                sci3(row.h),
                sci3(e.e_sigma),
                eoc_cell(r.sigma, "--"),
                sci3(e.e_u),
                eoc_cell(r.u, "--"),
                sci3(e.e_phi),
                eoc_cell(r.phi, "--"),
                sci3(e.e_sigma_check),
                eoc_cell(r.sigma_check, "--"),
                sci3(e.e_phi_hat),
                eoc_cell(r.phi_hat, "--"),
            ));
        }
    }
    out
}

fn run(args: &Args) -> Result<(), String> {
    let experiment = match args.experiment {
        1 => ExperimentId::Exp1Electric,
        2 => ExperimentId::Exp2Magnetic,
        _ => ExperimentId::Exp3Dirichlet,
    };
    let hybridization = match args.hybridization {
        1 => HybridizationType::TypeI,
        2 => HybridizationType::TypeII,
        _ => HybridizationType::TypeIII,
    };
    let mut degrees = args.k.clone();
    degrees.sort_unstable();
    degrees.dedup();
    let config = StudyConfig {
        experiment,
        element_kind: match args.elements {
            ElementsArg::Tri => ElementKind::Triangle,
            ElementsArg::Quad => ElementKind::Square,
        },
        hybridization,
        degrees,
        min_level: args.levels.0,
        max_level: args.levels.1,
        alpha: args.alpha,
        tau: args.tau,
        solver: match args.solver {
            SolverArg::Cholesky => SolverKind::Direct,
            SolverArg::Cg => SolverKind::ConjugateGradient,
        },
        tolerance: args.tol,
        dump_last_matrix: args.dump_matrix.is_some(),
    };
    let StudyOutcome { records, matrix_text } =
        run_convergence_study(&config).map_err(|e| e.to_string())?;
    let table = match args.format {
        FormatArg::Csv => render_csv(&records),
        FormatArg::Md => render_md(&records),
    };
    match &args.out {
        Some(path) => std::fs::write(path, table)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => print!("{table}"),
    }
    if let Some(path) = &args.dump_matrix {
        let text = matrix_text.unwrap_or_default();
        std::fs::write(path, text)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(&k) = args.k.iter().find(|&&k| k > SOFT_DEGREE_LIMIT) {
        if !args.allow_high_degree {
            eprintln!(
                "error: degree {k} is above the soft limit {SOFT_DEGREE_LIMIT}; \
                 pass --allow-high-degree to accept the cost"
            );
            return ExitCode::from(2);
        }
        eprintln!("warning: degree {k} is above the soft limit {SOFT_DEGREE_LIMIT}");
    }
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
