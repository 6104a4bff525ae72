//! Convergence-study driver shared by the CLI and the acceptance tests.
//!
//! A study fixes an experiment (which also fixes the boundary-condition
//! family), an element kind, a hybridization, and stabilization parameters,
//! then sweeps polynomial degrees over a range of refinement levels. Each
//! (degree, level) cell runs the full pipeline — mesh, bases, local
//! operators, global assembly, solve, reconstruction, error norms — and the
//! per-degree histories are returned as [`ConvergenceRecord`]s.

use crate::hybridsystem::{
    assemble_global, reconstruct_fields, solve_global, HybridizationType, SolveOptions,
    SolverKind,
};
use crate::localsolver::StabilizationParams;
use crate::mesh::{build_structured_mesh, ElementKind};
use crate::verify::{
    manufactured_case, skeleton_errors, volume_errors, ConvergenceRecord, ErrorReport,
    ExperimentId,
};
use crate::{Error, Result};

/// Everything a convergence study needs.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    /// Which manufactured solution to run (fixes the boundary condition).
    pub experiment: ExperimentId,
    /// Element shape.
    pub element_kind: ElementKind,
    /// Which trace pair is kept global.
    pub hybridization: HybridizationType,
    /// Polynomial degrees, one convergence record each.
    pub degrees: Vec<usize>,
    /// Coarsest refinement level.
    pub min_level: u32,
    /// Finest refinement level (inclusive).
    pub max_level: u32,
    /// Tangential stabilization α > 0.
    pub alpha: f64,
    /// Normal stabilization τ > 0.
    pub tau: f64,
    /// Linear solver for the trace systems.
    pub solver: SolverKind,
    /// Relative-residual tolerance for the iterative solver.
    pub tolerance: f64,
    /// Collect the coordinate text of the last assembled global matrix.
    pub dump_last_matrix: bool,
}

impl StudyConfig {
    /// A study of one experiment with the default knobs: triangles,
    /// hybridization III, α = τ = 1, direct solver.
    pub fn new(experiment: ExperimentId) -> Self {
        StudyConfig {
            experiment,
            element_kind: ElementKind::Triangle,
            hybridization: HybridizationType::TypeIII,
            degrees: vec![1],
            min_level: 1,
            max_level: 4,
            alpha: 1.0,
            tau: 1.0,
            solver: SolverKind::Direct,
            tolerance: 1e-12,
            dump_last_matrix: false,
        }
    }
}

/// Results of a convergence study.
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    /// One convergence history per requested degree, in request order.
    pub records: Vec<ConvergenceRecord>,
    /// Coordinate text (`i j value` per line) of the last assembled global
    /// matrix, when [`StudyConfig::dump_last_matrix`] was set.
    pub matrix_text: Option<String>,
}

/// Runs the full study. Fails on the first invalid configuration or
/// non-converged solve, with the offending (degree, level) in the message.
pub fn run_convergence_study(config: &StudyConfig) -> Result<StudyOutcome> {
    if config.degrees.is_empty() {
        return Err(Error::InvalidParameter("no polynomial degrees requested".to_string()));
    }
    if config.min_level > config.max_level {
        return Err(Error::InvalidParameter(format!(
            "level range {}:{} is empty",
            config.min_level, config.max_level
        )));
    }
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if !positive(config.alpha) || !positive(config.tau) {
        return Err(Error::InvalidParameter(format!(
            "stabilization parameters must be positive, got alpha = {}, tau = {}",
            config.alpha, config.tau
        )));
    }
    let sol = manufactured_case(config.experiment);
    let params = StabilizationParams { alpha: config.alpha, tau: config.tau };
    let options = SolveOptions {
        kind: config.solver,
        tolerance: config.tolerance,
        max_iterations: None,
    };
    let mut records = Vec::with_capacity(config.degrees.len());
    let mut matrix_text = None;
    for &k in &config.degrees {
        let mut levels: Vec<(u32, f64, ErrorReport)> = Vec::new();
        for level in config.min_level..=config.max_level {
            let mesh = build_structured_mesh(level, config.element_kind)?;
            let system = assemble_global(
                &mesh,
                k,
                params,
                config.hybridization,
                sol.boundary,
                &|p| sol.f(p),
            )
            .map_err(|e| study_error("assembly", k, level, e))?;
            let solution = solve_global(&system, &options)
                .map_err(|e| study_error("solve", k, level, e))?;
            let fields = reconstruct_fields(&system, &solution.trace)
                .map_err(|e| study_error("reconstruction", k, level, e))?;
            let (e_sigma, e_phi, e_u) = volume_errors(&mesh, &system.bases, &fields, &sol)?;
            let (e_sigma_check, e_phi_hat) =
                skeleton_errors(&mesh, &system.bases, &fields, &sol)?;
            levels.push((
                level,
                mesh.h_reported,
                ErrorReport { e_sigma, e_phi, e_u, e_sigma_check, e_phi_hat },
            ));
            if config.dump_last_matrix {
                matrix_text = Some(system.matrix.to_coordinate_text());
            }
        }
        records.push(ConvergenceRecord::from_errors(k, &levels)?);
    }
    Ok(StudyOutcome { records, matrix_text })
}

fn study_error(stage: &str, k: usize, level: u32, e: Error) -> Error {
    match e {
        Error::InvalidParameter(m) => {
            Error::InvalidParameter(format!("{stage} failed at k = {k}, level {level}: {m}"))
        }
        other => Error::Internal(format!("{stage} failed at k = {k}, level {level}: {other}")),
    }
}
