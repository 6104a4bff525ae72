//! Hybridized discontinuous Galerkin solver for the two-dimensional vector
//! Laplacian in rotational–divergence mixed form,
//!
//! ```text
//!   curl rot u − grad div u = f   in Ω = (0,1)²,
//! ```
//!
//! written as the first-order system σ = rot u, φ = −div u,
//! curl σ + grad φ = f. Element-interior unknowns are eliminated element by
//! element (static condensation), leaving a global system for scalar trace
//! unknowns on the mesh skeleton. Three hybridizations (which pair of traces
//! is kept global) and three boundary-condition families (electric, magnetic,
//! Dirichlet) are supported on structured triangular and square meshes.
//!
//! The default hybridization keeps both velocity traces global and condenses
//! to a symmetric positive-definite sparse system solved by Cholesky or
//! conjugate gradients. The other two keep one velocity and one flux trace;
//! their condensed systems enforce weak continuity of the recovered
//! complementary fluxes, are nonsymmetric (with singular symmetric part), and
//! are assembled dense and solved by LU.
//!
//! The crate is organized bottom-up:
//!
//! * [`mesh`] — structured meshes, face orientation conventions;
//! * [`polybasis`] — orthonormal polynomial bases and quadrature;
//! * [`linalg`] — minimal symmetric sparse storage, Cholesky, and CG;
//! * [`localsolver`] — element-local solves and condensed element matrices;
//! * [`hybridsystem`] — trace dof maps, global assembly, reconstruction;
//! * [`verify`] — manufactured solutions, error norms, convergence orders;
//! * [`study`] — the convergence-study driver used by the CLI.

pub mod hybridsystem;
pub mod linalg;
pub mod localsolver;
pub mod mesh;
pub mod polybasis;
pub mod study;
pub mod verify;

pub use hybridsystem::{BoundaryKind, HybridizationType};
pub use mesh::{build_structured_mesh, ElementKind, Mesh};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// An id or index does not refer to an existing entity.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    /// A basis or factorization lost rank beyond recovery.
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
    /// A matrix expected to be symmetric positive definite is not.
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    /// An iterative solver exhausted its iteration budget.
    #[error("no convergence after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    /// An internal consistency check failed; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

/// Convenience alias used by all fallible operations in this crate.
pub type Result<T> = std::result::Result<T, Error>;
