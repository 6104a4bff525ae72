//! Global trace system: dof maps, assembly, solve, and field reconstruction.
//!
//! The volume unknowns are condensed out element by element
//! ([`crate::localsolver`]), leaving unknown trace moments on the mesh
//! skeleton. Every face carries two slots — tangential and normal — of `k+1`
//! moments each against the shared orthonormal face basis. Which trace field
//! lives in a slot depends on the hybridization:
//!
//! * [`HybridizationType::TypeIII`]: ǔ·n⊥ and û·n (all velocity data),
//! * [`HybridizationType::TypeI`]: ǔ·n⊥ and φ̂,
//! * [`HybridizationType::TypeII`]: σ̌ and û·n.
//!
//! Boundary conditions constrain one member of each trace pair on Γ:
//!
//! * [`BoundaryKind::Electric`]: φ̂ = 0 and ǔ·n⊥ = 0,
//! * [`BoundaryKind::Magnetic`]: σ̌ = 0 and û·n = 0,
//! * [`BoundaryKind::Dirichlet`]: ǔ·n⊥ = 0 and û·n = 0.
//!
//! On a boundary face each constraint lands either on the slot's own data
//! quantity — then the slot is pinned to zero (essential) — or on the
//! recovered complement, in which case the slot stays free and its continuity
//! row degenerates to "complement = 0 on Γ", imposing the condition weakly.
//!
//! Slot moments are stored in the *global* face orientation. Velocity-type
//! slots flip sign between the two adjacent elements (outward normals are
//! opposite); flux-type slots are plain scalars and do not.
//!
//! The global equations enforce weak continuity of the recovered complements:
//! at every free slot, the moments of the complement trace are gathered from
//! the adjacent elements and set to zero. With all-velocity slots
//! (hybridization III) these equations are exactly the stationarity conditions
//! of the discrete energy, so the matrix is assembled from the element energy
//! matrices into a sparse symmetric positive-definite system. Hybridizations I
//! and II carry one flux-data slot family; their continuity system has the
//! energy matrix as its symmetric part plus a nonzero skew coupling between
//! the two slot families, so it is assembled as a dense nonsymmetric matrix
//! and solved by LU factorization. All three systems condense the same
//! underlying scheme and yield identical volume fields.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{cg_solve, cholesky_factor, cholesky_solve, spmv, SymmetricSparse};
use crate::localsolver::{
    assemble_local_system_with_modes, FaceModes, LocalFields, LocalOperators, NormalMode,
    StabilizationParams, TangentialMode,
};
use crate::mesh::Mesh;
use crate::polybasis::{
    build_element_basis, element_quadrature, map_quadrature_to_element, ElementBasis,
    MAX_QUADRATURE_DEGREE,
};
use crate::{Error, Result};

/// Which pair of trace fields is kept as the global unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HybridizationType {
    /// Unknowns ǔ·n⊥ and φ̂.
    TypeI,
    /// Unknowns σ̌ and û·n.
    TypeII,
    /// Unknowns ǔ·n⊥ and û·n (the default).
    TypeIII,
}

/// Homogeneous boundary-condition family on Γ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    /// φ̂ = 0 and ǔ·n⊥ = 0.
    Electric,
    /// σ̌ = 0 and û·n = 0.
    Magnetic,
    /// ǔ·n⊥ = 0 and û·n = 0.
    Dirichlet,
}

/// Disposition of one trace slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotStatus {
    /// Unknown, at this offset in the global vector.
    Free(usize),
    /// Pinned to zero by a boundary condition.
    EssentialZero,
}

/// Trace-slot layout of the skeleton.
///
/// Slot `2·fd·face + which·fd + a` is moment `a` of face `face`, with `which`
/// 0 = tangential pair, 1 = normal pair, and `fd = k+1` moments per slot.
#[derive(Debug, Clone)]
pub struct DofMap {
    /// Hybridization the map was built for.
    pub hybridization: HybridizationType,
    /// Boundary-condition family.
    pub boundary: BoundaryKind,
    /// Polynomial degree k.
    pub degree: usize,
    /// Moments per slot, `k+1`.
    pub fd: usize,
    /// Number of free unknowns.
    pub n_dofs: usize,
    /// Data modes per global face (identical as seen from both elements).
    pub face_modes: Vec<FaceModes>,
    status: Vec<SlotStatus>,
}

impl DofMap {
    /// Flat slot index of moment `a` of the tangential (`which = 0`) or
    /// normal (`which = 1`) slot of `face`.
    pub fn slot_index(&self, face: usize, which: usize, a: usize) -> usize {
        2 * self.fd * face + which * self.fd + a
    }

    /// Status of one slot moment.
    pub fn status(&self, face: usize, which: usize, a: usize) -> SlotStatus {
        self.status[self.slot_index(face, which, a)]
    }
}

/// Builds the trace dof map for a mesh, degree, hybridization, and boundary
/// condition.
pub fn build_trace_dofmap(
    mesh: &Mesh,
    k: usize,
    hybridization: HybridizationType,
    boundary: BoundaryKind,
) -> DofMap {
    let fd = k + 1;
    let native = match hybridization {
        HybridizationType::TypeIII => FaceModes::velocity(),
        HybridizationType::TypeI => FaceModes {
            tangential: TangentialMode::VelocityTangential,
            normal: NormalMode::DivFlux,
        },
        HybridizationType::TypeII => FaceModes {
            tangential: TangentialMode::RotFlux,
            normal: NormalMode::VelocityNormal,
        },
    };
    // A boundary condition pins a slot exactly when it constrains the slot's
    // own data quantity; the complementary constraint of the pair is imposed
    // weakly by the free slot's continuity row, which on Γ degenerates to
    // "recovered complement = 0".
    let pin_tangential = match native.tangential {
        // Data ǔ·n⊥, pinned when the condition sets ǔ·n⊥ = 0.
        TangentialMode::VelocityTangential => boundary != BoundaryKind::Magnetic,
        // Data σ̌, pinned when the condition sets σ̌ = 0.
        TangentialMode::RotFlux => boundary == BoundaryKind::Magnetic,
    };
    let pin_normal = match native.normal {
        // Data û·n, pinned when the condition sets û·n = 0.
        NormalMode::VelocityNormal => boundary != BoundaryKind::Electric,
        // Data φ̂, pinned when the condition sets φ̂ = 0.
        NormalMode::DivFlux => boundary == BoundaryKind::Electric,
    };
    let mut face_modes = Vec::with_capacity(mesh.faces.len());
    let mut status = Vec::with_capacity(2 * fd * mesh.faces.len());
    let mut next = 0;
    let push = |status: &mut Vec<SlotStatus>, next: &mut usize, pinned: bool| {
        for _ in 0..fd {
            if pinned {
                status.push(SlotStatus::EssentialZero);
            } else {
                status.push(SlotStatus::Free(*next));
                *next += 1;
            }
        }
    };
    for face in &mesh.faces {
        push(&mut status, &mut next, face.is_boundary && pin_tangential);
        push(&mut status, &mut next, face.is_boundary && pin_normal);
        face_modes.push(native);
    }
    DofMap {
        hybridization,
        boundary,
        degree: k,
        fd,
        n_dofs: next,
        face_modes,
        status,
    }
}

/// Assembled global trace system with everything needed to reconstruct the
/// volume fields afterwards.
pub struct GlobalSystem {
    /// Trace matrix: sparse SPD for hybridization III, dense nonsymmetric
    /// otherwise.
    pub matrix: SystemMatrix,
    /// Load vector.
    pub rhs: Vec<f64>,
    /// Slot layout.
    pub dofmap: DofMap,
    /// Condensed local operators, one per element.
    pub local_ops: Vec<LocalOperators>,
    /// Element bases (shared by reconstruction and error evaluation).
    pub bases: Vec<ElementBasis>,
    /// Source moments `(f, z_j)_K` per element.
    pub f_moments: Vec<DVector<f64>>,
}

/// Storage for the assembled trace matrix.
///
/// Hybridization III produces the Hessian of the discrete energy — symmetric
/// positive definite, stored sparse. Hybridizations I and II produce the
/// flux-continuity matrix, whose symmetric part is that energy Hessian but
/// whose skew part couples the tangential and normal slot families; it is
/// stored dense and factorized by LU.
pub enum SystemMatrix {
    /// Lower-triangle sparse symmetric matrix.
    Symmetric(SymmetricSparse),
    /// Dense nonsymmetric matrix.
    Dense(DMatrix<f64>),
}

impl SystemMatrix {
    /// Matrix dimension.
    pub fn n(&self) -> usize {
        match self {
            SystemMatrix::Symmetric(a) => a.n,
            SystemMatrix::Dense(a) => a.nrows(),
        }
    }

    /// Matrix–vector product `A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            SystemMatrix::Symmetric(a) => spmv(a, x),
            SystemMatrix::Dense(a) => {
                if x.len() != a.ncols() {
                    return Err(Error::InvalidParameter(format!(
                        "matvec length {} against a {}×{} matrix",
                        x.len(),
                        a.nrows(),
                        a.ncols()
                    )));
                }
                let y = a * DVector::from_column_slice(x);
                Ok(y.as_slice().to_vec())
            }
        }
    }

    /// Zero-based `i j value` coordinate-format text: the stored lower
    /// triangle for the symmetric variant, every nonzero row-major for the
    /// dense variant.
    pub fn to_coordinate_text(&self) -> String {
        match self {
            SystemMatrix::Symmetric(a) => a.to_coordinate_text(),
            SystemMatrix::Dense(a) => {
                let mut out = String::new();
                for i in 0..a.nrows() {
                    for j in 0..a.ncols() {
                        let v = a[(i, j)];
                        if v != 0.0 {
                            out.push_str(&format!("{i} {j} {v:.17e}\n"));
                        }
                    }
                }
                out
            }
        }
    }
}

/// Moments of a source field against the element's orthonormal vector basis,
/// integrated with a rule `4` degrees beyond assembly exactness so smooth
/// non-polynomial sources are resolved well past discretization accuracy.
fn source_moments(
    mesh: &Mesh,
    basis: &ElementBasis,
    element_id: usize,
    f: &dyn Fn([f64; 2]) -> [f64; 2],
) -> Result<DVector<f64>> {
    let degree = (2 * basis.degree + 6).min(MAX_QUADRATURE_DEGREE);
    let reference = element_quadrature(mesh.element_kind, degree)?;
    let rule = map_quadrature_to_element(&reference, &mesh.elements[element_id]);
    let m = basis.dim;
    let mut moments = DVector::zeros(2 * m);
    for (q, p) in rule.points.iter().enumerate() {
        let w = rule.weights[q];
        let fv = f(*p);
        for i in 0..m {
            let b = basis.eval(i, *p);
            moments[i] += w * fv[0] * b;
            moments[m + i] += w * fv[1] * b;
        }
    }
    Ok(moments)
}

/// Largest dense flux-continuity system the assembler will build (unknowns).
/// Dense LU is cubic, so runaway sizes are rejected up front; the symmetric
/// sparse path has no such cap.
pub const MAX_DENSE_DOFS: usize = 20_000;

/// Assembles the condensed global system for a source field `f`.
///
/// Elements are visited in id order and entries accumulated in a fixed order,
/// so reassembly is bit-identical. Hybridization III assembles the element
/// energy matrices into a sparse symmetric system; hybridizations I and II
/// assemble the element flux-continuity matrices into a dense one.
pub fn assemble_global(
    mesh: &Mesh,
    k: usize,
    params: StabilizationParams,
    hybridization: HybridizationType,
    boundary: BoundaryKind,
    f: &dyn Fn([f64; 2]) -> [f64; 2],
) -> Result<GlobalSystem> {
    let dofmap = build_trace_dofmap(mesh, k, hybridization, boundary);
    let fd = dofmap.fd;
    let symmetric = hybridization == HybridizationType::TypeIII;
    if !symmetric && dofmap.n_dofs > MAX_DENSE_DOFS {
        return Err(Error::InvalidParameter(format!(
            "flux-continuity system has {} unknowns, above the dense-solver cap {}; \
             use hybridization III or a coarser mesh",
            dofmap.n_dofs, MAX_DENSE_DOFS
        )));
    }
    let assembly_quad = element_quadrature(mesh.element_kind, 2 * k + 2)?;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut dense = if symmetric {
        DMatrix::zeros(0, 0)
    } else {
        DMatrix::zeros(dofmap.n_dofs, dofmap.n_dofs)
    };
    let mut rhs = vec![0.0; dofmap.n_dofs];
    let mut local_ops = Vec::with_capacity(mesh.elements.len());
    let mut bases = Vec::with_capacity(mesh.elements.len());
    let mut f_moments = Vec::with_capacity(mesh.elements.len());

    for element in &mesh.elements {
        let basis = build_element_basis(mesh, element.id, k, &assembly_quad)?;
        let modes: Vec<FaceModes> =
            element.faces.iter().map(|&gf| dofmap.face_modes[gf]).collect();
        let ops = assemble_local_system_with_modes(element, &basis, params, &modes)?;
        let moments = source_moments(mesh, &basis, element.id, f)?;
        let b_k = if symmetric {
            &ops.load_map * &moments
        } else {
            &ops.jump_load_map * &moments
        };

        // Local slot → (global dof, orientation factor); pinned slots drop out
        // because their data is zero.
        let mut slot_dofs: Vec<Option<(usize, f64)>> = vec![None; ops.n_slots];
        for (lf, &gf) in element.faces.iter().enumerate() {
            let sign = f64::from(element.face_signs[lf]);
            let modes = dofmap.face_modes[gf];
            for a in 0..fd {
                if let SlotStatus::Free(g) = dofmap.status(gf, 0, a) {
                    let factor = match modes.tangential {
                        TangentialMode::VelocityTangential => sign,
                        TangentialMode::RotFlux => 1.0,
                    };
                    slot_dofs[ops.slot_t(lf) + a] = Some((g, factor));
                }
                if let SlotStatus::Free(g) = dofmap.status(gf, 1, a) {
                    let factor = match modes.normal {
                        NormalMode::VelocityNormal => sign,
                        NormalMode::DivFlux => 1.0,
                    };
                    slot_dofs[ops.slot_n(lf) + a] = Some((g, factor));
                }
            }
        }
        for (i, di) in slot_dofs.iter().enumerate() {
            let Some((gi, si)) = *di else { continue };
            rhs[gi] += si * b_k[i];
            for (j, dj) in slot_dofs.iter().enumerate() {
                let Some((gj, sj)) = *dj else { continue };
                if symmetric {
                    if gi >= gj {
                        triplets.push((gi, gj, si * sj * ops.a_k[(i, j)]));
                    }
                } else {
                    dense[(gi, gj)] += si * sj * ops.jump_matrix[(i, j)];
                }
            }
        }
        local_ops.push(ops);
        bases.push(basis);
        f_moments.push(moments);
    }
    let matrix = if symmetric {
        SystemMatrix::Symmetric(SymmetricSparse::from_triplets(dofmap.n_dofs, &triplets)?)
    } else {
        SystemMatrix::Dense(dense)
    };
    Ok(GlobalSystem { matrix, rhs, dofmap, local_ops, bases, f_moments })
}

/// Linear-solver choice for the trace system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Direct factorization (the default): sparse Cholesky for the symmetric
    /// system, dense LU with partial pivoting for the flux-continuity systems.
    Direct,
    /// Diagonally preconditioned conjugate gradients; requires the symmetric
    /// system (hybridization III).
    ConjugateGradient,
}

/// Solver options; `tolerance` is the CG relative-residual target.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Which solver to run.
    pub kind: SolverKind,
    /// Relative-residual tolerance for the iterative solver.
    pub tolerance: f64,
    /// Iteration cap for the iterative solver; `None` picks `max(1000, 40·n)`.
    pub max_iterations: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { kind: SolverKind::Direct, tolerance: 1e-12, max_iterations: None }
    }
}

/// Solved trace vector with solver diagnostics.
#[derive(Debug, Clone)]
pub struct GlobalSolution {
    /// Free-dof values in dof-map order.
    pub trace: Vec<f64>,
    /// Iterations used (0 for the direct solver).
    pub iterations: usize,
    /// Final relative residual ‖Ax − b‖/‖b‖.
    pub relative_residual: f64,
}

/// Solves the assembled trace system.
pub fn solve_global(system: &GlobalSystem, options: &SolveOptions) -> Result<GlobalSolution> {
    let n = system.matrix.n();
    if n == 0 {
        return Ok(GlobalSolution { trace: Vec::new(), iterations: 0, relative_residual: 0.0 });
    }
    match (&system.matrix, options.kind) {
        (SystemMatrix::Symmetric(a), SolverKind::Direct) => {
            let factor = cholesky_factor(a)?;
            let x = cholesky_solve(&factor, &system.rhs)?;
            let r = residual_norm(&system.matrix, &x, &system.rhs)?;
            Ok(GlobalSolution { trace: x, iterations: 0, relative_residual: r })
        }
        (SystemMatrix::Symmetric(a), SolverKind::ConjugateGradient) => {
            let maxit = options.max_iterations.unwrap_or_else(|| 1000.max(40 * n));
            let sol = cg_solve(a, &system.rhs, options.tolerance, maxit, true)?;
            Ok(GlobalSolution {
                trace: sol.x,
                iterations: sol.iterations,
                relative_residual: sol.relative_residual,
            })
        }
        (SystemMatrix::Dense(a), SolverKind::Direct) => {
            let lu = a.clone().lu();
            let b = DVector::from_column_slice(&system.rhs);
            let x = lu.solve(&b).ok_or_else(|| {
                Error::Internal("flux-continuity matrix is singular".to_string())
            })?;
            let x = x.as_slice().to_vec();
            let r = residual_norm(&system.matrix, &x, &system.rhs)?;
            Ok(GlobalSolution { trace: x, iterations: 0, relative_residual: r })
        }
        (SystemMatrix::Dense(_), SolverKind::ConjugateGradient) => Err(Error::InvalidParameter(
            "conjugate gradients needs the symmetric positive-definite system; \
             hybridizations I and II assemble a nonsymmetric flux-continuity \
             matrix, so use the direct solver or hybridization III"
                .to_string(),
        )),
    }
}

fn residual_norm(a: &SystemMatrix, x: &[f64], b: &[f64]) -> Result<f64> {
    let ax = a.matvec(x)?;
    let mut rr = 0.0;
    let mut bb = 0.0;
    for i in 0..b.len() {
        rr += (ax[i] - b[i]).powi(2);
        bb += b[i] * b[i];
    }
    Ok(if bb > 0.0 { (rr / bb).sqrt() } else { rr.sqrt() })
}

/// Reconstructs the volume fields and all recovered traces on every element
/// from the solved trace vector.
pub fn reconstruct_fields(system: &GlobalSystem, trace: &[f64]) -> Result<Vec<LocalFields>> {
    if trace.len() != system.dofmap.n_dofs {
        return Err(Error::InvalidParameter(format!(
            "trace vector has length {}, expected {}",
            trace.len(),
            system.dofmap.n_dofs
        )));
    }
    let mut fields = Vec::with_capacity(system.local_ops.len());
    for (e, ops) in system.local_ops.iter().enumerate() {
        let data = element_slot_data(system, e, trace);
        let mut local = ops.solve_trace_slots(&data);
        local.add_assign(&ops.solve_local_source(&system.f_moments[e])?);
        fields.push(local);
    }
    Ok(fields)
}

/// Per-element slot data gathered from a global trace vector: orientation
/// signs applied to velocity-type slots, zeros for pinned slots. Face ids and
/// signs come from the element basis's face tables, so the system needs no
/// mesh reference.
fn element_slot_data(system: &GlobalSystem, element_id: usize, trace: &[f64]) -> DVector<f64> {
    let ops = &system.local_ops[element_id];
    let basis = &system.bases[element_id];
    let dofmap = &system.dofmap;
    let fd = dofmap.fd;
    let mut data = DVector::zeros(ops.n_slots);
    for (lf, ft) in basis.face_tables.iter().enumerate() {
        let gf = ft.face_id;
        let sign = f64::from(ft.sign);
        let modes = dofmap.face_modes[gf];
        for a in 0..fd {
            if let SlotStatus::Free(g) = dofmap.status(gf, 0, a) {
                let factor = match modes.tangential {
                    TangentialMode::VelocityTangential => sign,
                    TangentialMode::RotFlux => 1.0,
                };
                data[ops.slot_t(lf) + a] = factor * trace[g];
            }
            if let SlotStatus::Free(g) = dofmap.status(gf, 1, a) {
                let factor = match modes.normal {
                    NormalMode::VelocityNormal => sign,
                    NormalMode::DivFlux => 1.0,
                };
                data[ops.slot_n(lf) + a] = factor * trace[g];
            }
        }
    }
    data
}

/// Discrete quadratic functional `J(x) = ½ xᵀA x − bᵀx` of a trace vector.
///
/// For hybridization III this is the discrete energy the solution minimizes.
/// For the dense flux-continuity matrices the skew part drops out of `xᵀAx`
/// automatically, but the solution is a stationary point rather than a
/// minimizer, so the value is diagnostic only there.
pub fn energy_value(system: &GlobalSystem, trace: &[f64]) -> Result<f64> {
    let ax = system.matrix.matvec(trace)?;
    let mut quad = 0.0;
    let mut lin = 0.0;
    for i in 0..trace.len() {
        quad += trace[i] * ax[i];
        lin += system.rhs[i] * trace[i];
    }
    Ok(0.5 * quad - lin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localsolver::local_residual;
    use crate::mesh::{build_grid_mesh, build_structured_mesh, ElementKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_source(p: [f64; 2]) -> [f64; 2] {
        let (x, y) = (p[0], p[1]);
        [
            (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin() + 0.3,
            x * y + (std::f64::consts::PI * x).cos(),
        ]
    }

    const ALL_HYB: [HybridizationType; 3] =
        [HybridizationType::TypeI, HybridizationType::TypeII, HybridizationType::TypeIII];
    const ALL_BC: [BoundaryKind; 3] =
        [BoundaryKind::Electric, BoundaryKind::Magnetic, BoundaryKind::Dirichlet];

    #[test]
    fn dof_counts_on_level_two_squares() {
        // Level-2 squares, k = 0: 40 faces (24 interior, 16 boundary), one
        // moment per slot. A boundary slot is pinned exactly when the
        // condition constrains its own data quantity; the other member of the
        // pair is imposed weakly by the free slot's row.
        let mesh = build_structured_mesh(2, ElementKind::Square).unwrap();
        let expected = [
            // ǔ·n⊥ and û·n unknowns: Electric pins t, Magnetic pins n,
            // Dirichlet pins both.
            (HybridizationType::TypeIII, BoundaryKind::Electric, 64),
            (HybridizationType::TypeIII, BoundaryKind::Magnetic, 64),
            (HybridizationType::TypeIII, BoundaryKind::Dirichlet, 48),
            // ǔ·n⊥ and φ̂ unknowns: Electric pins both, Magnetic neither,
            // Dirichlet pins t only (û·n = 0 is weak).
            (HybridizationType::TypeI, BoundaryKind::Electric, 48),
            (HybridizationType::TypeI, BoundaryKind::Magnetic, 80),
            (HybridizationType::TypeI, BoundaryKind::Dirichlet, 64),
            // σ̌ and û·n unknowns: mirror image of hybridization I.
            (HybridizationType::TypeII, BoundaryKind::Electric, 80),
            (HybridizationType::TypeII, BoundaryKind::Magnetic, 48),
            (HybridizationType::TypeII, BoundaryKind::Dirichlet, 64),
        ];
        for (hyb, bc, n) in expected {
            let dm = build_trace_dofmap(&mesh, 0, hyb, bc);
            assert_eq!(dm.n_dofs, n, "{hyb:?}/{bc:?}");
        }
    }

    #[test]
    fn dof_counts_scale_with_degree_and_interior_faces() {
        for kind in [ElementKind::Triangle, ElementKind::Square] {
            let mesh = build_structured_mesh(2, kind).unwrap();
            let ni = mesh.interior_face_count();
            let nb = mesh.boundary_face_count();
            for k in 0..=2usize {
                let dm = build_trace_dofmap(
                    &mesh,
                    k,
                    HybridizationType::TypeIII,
                    BoundaryKind::Dirichlet,
                );
                assert_eq!(dm.n_dofs, 2 * (k + 1) * ni, "{kind:?} k={k}");
                let dm = build_trace_dofmap(
                    &mesh,
                    k,
                    HybridizationType::TypeIII,
                    BoundaryKind::Electric,
                );
                assert_eq!(dm.n_dofs, 2 * (k + 1) * ni + (k + 1) * nb);
                // Dirichlet pins only ǔ·n⊥ when φ̂ is the normal unknown.
                let dm = build_trace_dofmap(
                    &mesh,
                    k,
                    HybridizationType::TypeI,
                    BoundaryKind::Dirichlet,
                );
                assert_eq!(dm.n_dofs, (k + 1) * (2 * ni + nb));
                // Electric pins nothing when σ̌ and û·n are the unknowns.
                let dm = build_trace_dofmap(
                    &mesh,
                    k,
                    HybridizationType::TypeII,
                    BoundaryKind::Electric,
                );
                assert_eq!(dm.n_dofs, 2 * (k + 1) * (ni + nb));
            }
        }
    }

    #[test]
    fn zero_source_gives_zero_rhs_and_zero_solution() {
        let mesh = build_structured_mesh(2, ElementKind::Triangle).unwrap();
        let sys = assemble_global(
            &mesh,
            1,
            StabilizationParams::default(),
            HybridizationType::TypeIII,
            BoundaryKind::Dirichlet,
            &|_| [0.0, 0.0],
        )
        .unwrap();
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
        let sol = solve_global(&sys, &SolveOptions::default()).unwrap();
        assert!(sol.trace.iter().all(|&v| v == 0.0));
        let fields = reconstruct_fields(&sys, &sol.trace).unwrap();
        for f in &fields {
            assert_eq!(f.sigma.norm() + f.phi.norm() + f.u.norm(), 0.0);
        }
    }

    #[test]
    fn single_element_dirichlet_condenses_to_nothing() {
        // On a one-square grid every face is boundary. With velocity unknowns
        // on both slots, Dirichlet pins everything: the global system is
        // empty and the solution is just the element-local source solve. (The
        // one-cell triangle grid keeps its interior diagonal, so it does not
        // qualify.) With a flux unknown on one slot that slot stays free, so
        // hybridizations I and II retain one slot per face.
        let mesh = build_grid_mesh(0, ElementKind::Square);
        let k = 1;
        let sys = assemble_global(
            &mesh,
            k,
            StabilizationParams::default(),
            HybridizationType::TypeIII,
            BoundaryKind::Dirichlet,
            &smooth_source,
        )
        .unwrap();
        assert_eq!(sys.dofmap.n_dofs, 0);
        assert_eq!(sys.matrix.n(), 0);
        let sol = solve_global(&sys, &SolveOptions::default()).unwrap();
        assert!(sol.trace.is_empty());
        let fields = reconstruct_fields(&sys, &sol.trace).unwrap();
        for (e, ops) in sys.local_ops.iter().enumerate() {
            let direct = ops.solve_local_source(&sys.f_moments[e]).unwrap();
            assert!((&fields[e].sigma - &direct.sigma).norm() < 1e-14);
            assert!((&fields[e].phi - &direct.phi).norm() < 1e-14);
            assert!((&fields[e].u - &direct.u).norm() < 1e-14);
        }
        for hyb in [HybridizationType::TypeI, HybridizationType::TypeII] {
            let dm = build_trace_dofmap(&mesh, k, hyb, BoundaryKind::Dirichlet);
            assert_eq!(dm.n_dofs, (k + 1) * mesh.boundary_face_count(), "{hyb:?}");
        }
    }

    #[test]
    fn direct_solver_succeeds_for_all_combinations() {
        // Hybridization III yields the sparse SPD energy system (Cholesky);
        // I and II yield dense flux-continuity systems (LU). Every
        // combination must assemble and solve to a tight residual.
        for kind in [ElementKind::Triangle, ElementKind::Square] {
            let mesh = build_structured_mesh(2, kind).unwrap();
            for hyb in ALL_HYB {
                for bc in ALL_BC {
                    for k in 0..=2usize {
                        let sys = assemble_global(
                            &mesh,
                            k,
                            StabilizationParams::default(),
                            hyb,
                            bc,
                            &smooth_source,
                        )
                        .unwrap();
                        match (&sys.matrix, hyb) {
                            (SystemMatrix::Symmetric(_), HybridizationType::TypeIII) => {}
                            (SystemMatrix::Dense(_), HybridizationType::TypeI)
                            | (SystemMatrix::Dense(_), HybridizationType::TypeII) => {}
                            _ => panic!("{kind:?}/{hyb:?}: wrong matrix storage"),
                        }
                        let sol = solve_global(&sys, &SolveOptions::default());
                        match sol {
                            Ok(sol) => assert!(
                                sol.relative_residual < 1e-10,
                                "{kind:?}/{hyb:?}/{bc:?} k={k}: residual {:.3e}",
                                sol.relative_residual
                            ),
                            Err(e) => panic!("{kind:?}/{hyb:?}/{bc:?} k={k}: {e:?}"),
                        }
                    }
                }
            }
        }
    }

    /// Gathers the element energy matrices into a dense global matrix with
    /// the same slot→dof mapping and orientation factors as `assemble_global`.
    fn gather_energy_dense(mesh: &Mesh, sys: &GlobalSystem) -> DMatrix<f64> {
        let dofmap = &sys.dofmap;
        let fd = dofmap.fd;
        let mut a = DMatrix::zeros(dofmap.n_dofs, dofmap.n_dofs);
        for element in &mesh.elements {
            let ops = &sys.local_ops[element.id];
            let mut slot_dofs: Vec<Option<(usize, f64)>> = vec![None; ops.n_slots];
            for (lf, &gf) in element.faces.iter().enumerate() {
                let sign = f64::from(element.face_signs[lf]);
                let modes = dofmap.face_modes[gf];
                for m in 0..fd {
                    if let SlotStatus::Free(g) = dofmap.status(gf, 0, m) {
                        let factor = match modes.tangential {
                            TangentialMode::VelocityTangential => sign,
                            TangentialMode::RotFlux => 1.0,
                        };
                        slot_dofs[ops.slot_t(lf) + m] = Some((g, factor));
                    }
                    if let SlotStatus::Free(g) = dofmap.status(gf, 1, m) {
                        let factor = match modes.normal {
                            NormalMode::VelocityNormal => sign,
                            NormalMode::DivFlux => 1.0,
                        };
                        slot_dofs[ops.slot_n(lf) + m] = Some((g, factor));
                    }
                }
            }
            for (i, di) in slot_dofs.iter().enumerate() {
                let Some((gi, si)) = *di else { continue };
                for (j, dj) in slot_dofs.iter().enumerate() {
                    let Some((gj, sj)) = *dj else { continue };
                    a[(gi, gj)] += si * sj * ops.a_k[(i, j)];
                }
            }
        }
        a
    }

    #[test]
    fn flux_continuity_matrix_is_a_skew_perturbation_of_the_energy_matrix() {
        // The dense system's symmetric part is exactly the assembled energy
        // matrix. On triangle meshes that energy matrix is singular: the
        // trace data of a gradient (hybridization I) or perp-gradient
        // (hybridization II) of a continuous piecewise-linear interior "tent"
        // is a zero-energy mode. The skew part does see the tent — the
        // complementary trace of a tent gradient jumps across faces — so the
        // full flux-continuity matrix is invertible, and the dense LU path is
        // the only correct one for these unknowns.
        let mesh = build_structured_mesh(2, ElementKind::Triangle).unwrap();
        for (hyb, bc) in [
            (HybridizationType::TypeI, BoundaryKind::Electric),
            (HybridizationType::TypeII, BoundaryKind::Dirichlet),
        ] {
            let sys = assemble_global(
                &mesh,
                0,
                StabilizationParams::default(),
                hyb,
                bc,
                &smooth_source,
            )
            .unwrap();
            let SystemMatrix::Dense(j) = &sys.matrix else {
                panic!("{hyb:?}: expected the dense storage");
            };
            let a = gather_energy_dense(&mesh, &sys);
            let scale = a.norm().max(1.0);
            let sym = (j + &j.transpose()) * 0.5;
            assert!(
                (&sym - &a).norm() < 1e-12 * scale,
                "{hyb:?}/{bc:?}: symmetric part differs from the energy matrix"
            );
            let skew = (j - &j.transpose()) * 0.5;
            assert!(skew.norm() > 1e-3 * scale, "{hyb:?}/{bc:?}: skew part missing");
            let eig = a.clone().symmetric_eigen();
            let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
            let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()));
            assert!(
                min_eig < 1e-12 * max_eig,
                "{hyb:?}/{bc:?}: energy matrix unexpectedly invertible (min |λ| {min_eig:.3e})"
            );
            assert!(j.clone().lu().is_invertible(), "{hyb:?}/{bc:?}: matrix singular");
        }
    }

    #[test]
    fn reconstruction_satisfies_local_equations_and_weak_jumps() {
        let combos = ALL_HYB.iter().flat_map(|&h| ALL_BC.iter().map(move |&b| (h, b)));
        for (hyb, bc) in combos {
            let mesh = build_structured_mesh(2, ElementKind::Triangle).unwrap();
            let sys = assemble_global(
                &mesh,
                1,
                StabilizationParams::default(),
                hyb,
                bc,
                &smooth_source,
            )
            .unwrap();
            let sol = solve_global(&sys, &SolveOptions::default()).unwrap();
            let fields = reconstruct_fields(&sys, &sol.trace).unwrap();
            // Local equations hold with the recovered traces.
            let scale: f64 = sys.f_moments.iter().map(|m| m.norm()).fold(0.0, f64::max);
            for e in 0..mesh.elements.len() {
                let (ra, rb, rc) = local_residual(&sys.bases[e], &fields[e], &sys.f_moments[e]);
                let res = ra.norm() + rb.norm() + rc.norm();
                assert!(res < 1e-10 * scale.max(1.0), "{hyb:?}/{bc:?} e={e}: {res:.3e}");
            }
            // Weak continuity at every free dof: scalar fluxes match across
            // interior faces; element-outward velocity traces cancel; weakly
            // imposed boundary fluxes vanish.
            let trace_scale: f64 = sol.trace.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
            for face in &mesh.faces {
                let (e1, e2) = face.elements;
                let lf1 = mesh.elements[e1].faces.iter().position(|&g| g == face.id).unwrap();
                let fd = sys.dofmap.fd;
                for a in 0..fd {
                    for which in 0..2usize {
                        if !matches!(sys.dofmap.status(face.id, which, a), SlotStatus::Free(_)) {
                            continue;
                        }
                        let modes = sys.dofmap.face_modes[face.id];
                        let velocity_unknown = if which == 0 {
                            modes.tangential == TangentialMode::VelocityTangential
                        } else {
                            modes.normal == NormalMode::VelocityNormal
                        };
                        // Paired (recovered) quantity on each side.
                        let pick = |e: usize, lf: usize| -> f64 {
                            let fl = &fields[e];
                            match (which, velocity_unknown) {
                                (0, true) => fl.sigma_check[lf][a],
                                (0, false) => fl.u_check_t[lf][a],
                                (_, true) => fl.phi_hat[lf][a],
                                (_, false) => fl.u_hat_n[lf][a],
                            }
                        };
                        let r = match e2 {
                            Some(e2) => {
                                let lf2 = mesh.elements[e2]
                                    .faces
                                    .iter()
                                    .position(|&g| g == face.id)
                                    .unwrap();
                                if velocity_unknown {
                                    // scalar flux: single-valued
                                    pick(e1, lf1) - pick(e2, lf2)
                                } else {
                                    // outward velocity components cancel
                                    pick(e1, lf1) + pick(e2, lf2)
                                }
                            }
                            None => pick(e1, lf1), // weak zero-flux on Γ
                        };
                        assert!(
                            r.abs() < 1e-9 * trace_scale,
                            "{hyb:?}/{bc:?} face {} slot {which}/{a}: jump {r:.3e}",
                            face.id
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn solution_scales_linearly_with_source() {
        let mesh = build_structured_mesh(2, ElementKind::Square).unwrap();
        let sys1 = assemble_global(
            &mesh,
            1,
            StabilizationParams::default(),
            HybridizationType::TypeIII,
            BoundaryKind::Electric,
            &smooth_source,
        )
        .unwrap();
        let scaled = |p: [f64; 2]| {
            let v = smooth_source(p);
            [3.0 * v[0], 3.0 * v[1]]
        };
        let sys3 = assemble_global(
            &mesh,
            1,
            StabilizationParams::default(),
            HybridizationType::TypeIII,
            BoundaryKind::Electric,
            &scaled,
        )
        .unwrap();
        let x1 = solve_global(&sys1, &SolveOptions::default()).unwrap().trace;
        let x3 = solve_global(&sys3, &SolveOptions::default()).unwrap().trace;
        let norm1: f64 = x1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut diff = 0.0_f64;
        for i in 0..x1.len() {
            diff += (3.0 * x1[i] - x3[i]).powi(2);
        }
        assert!(diff.sqrt() < 1e-12 * 3.0 * norm1.max(1.0));
    }

    #[test]
    fn assembly_is_bit_reproducible() {
        let mesh = build_structured_mesh(2, ElementKind::Triangle).unwrap();
        for hyb in [HybridizationType::TypeIII, HybridizationType::TypeII] {
            let build = || {
                assemble_global(
                    &mesh,
                    1,
                    StabilizationParams::default(),
                    hyb,
                    BoundaryKind::Magnetic,
                    &smooth_source,
                )
                .unwrap()
            };
            let a = build();
            let b = build();
            match (&a.matrix, &b.matrix) {
                (SystemMatrix::Symmetric(ma), SystemMatrix::Symmetric(mb)) => {
                    assert_eq!(ma.values, mb.values);
                    assert_eq!(ma.row_idx, mb.row_idx);
                }
                (SystemMatrix::Dense(ma), SystemMatrix::Dense(mb)) => assert_eq!(ma, mb),
                _ => panic!("storage kind changed between assemblies"),
            }
            assert_eq!(a.rhs, b.rhs);
            let xa = solve_global(&a, &SolveOptions::default()).unwrap().trace;
            let xb = solve_global(&b, &SolveOptions::default()).unwrap().trace;
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn all_hybridizations_give_the_same_fields() {
        // The three hybridizations condense the same scheme, so the
        // reconstructed volume fields must agree to solver accuracy.
        for kind in [ElementKind::Triangle, ElementKind::Square] {
            for bc in ALL_BC {
                let mesh = build_structured_mesh(2, kind).unwrap();
                let solve = |hyb| {
                    let sys = assemble_global(
                        &mesh,
                        0,
                        StabilizationParams::default(),
                        hyb,
                        bc,
                        &smooth_source,
                    )
                    .unwrap();
                    let sol = solve_global(&sys, &SolveOptions::default()).unwrap();
                    reconstruct_fields(&sys, &sol.trace).unwrap()
                };
                let by_hyb: Vec<_> = ALL_HYB.iter().map(|&h| solve(h)).collect();
                let scale: f64 = by_hyb[0]
                    .iter()
                    .map(|f| f.u.norm())
                    .fold(0.0, f64::max)
                    .max(1.0);
                for pair in 0..2 {
                    for e in 0..mesh.elements.len() {
                        let (x, y) = (&by_hyb[pair][e], &by_hyb[pair + 1][e]);
                        let d = (&x.sigma - &y.sigma).norm()
                            + (&x.phi - &y.phi).norm()
                            + (&x.u - &y.u).norm();
                        assert!(
                            d < 1e-8 * scale,
                            "{kind:?}/{bc:?} pair {pair} element {e}: {d:.3e}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn cg_matches_the_direct_solver_and_rejects_dense_systems() {
        let mesh = build_structured_mesh(2, ElementKind::Triangle).unwrap();
        let sys = assemble_global(
            &mesh,
            1,
            StabilizationParams::default(),
            HybridizationType::TypeIII,
            BoundaryKind::Dirichlet,
            &smooth_source,
        )
        .unwrap();
        let direct = solve_global(&sys, &SolveOptions::default()).unwrap();
        let cg_options =
            SolveOptions { kind: SolverKind::ConjugateGradient, ..SolveOptions::default() };
        let cg = solve_global(&sys, &cg_options).unwrap();
        assert!(cg.iterations > 0);
        let norm: f64 = direct.trace.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut diff = 0.0_f64;
        for i in 0..direct.trace.len() {
            diff += (direct.trace[i] - cg.trace[i]).powi(2);
        }
        assert!(diff.sqrt() < 1e-9 * norm.max(1.0), "CG/direct differ by {:.3e}", diff.sqrt());

        // The iterative solver requires symmetry; the flux-continuity
        // systems must refuse it with a clear error.
        let dense_sys = assemble_global(
            &mesh,
            1,
            StabilizationParams::default(),
            HybridizationType::TypeI,
            BoundaryKind::Dirichlet,
            &smooth_source,
        )
        .unwrap();
        let err = solve_global(&dense_sys, &cg_options);
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn energy_at_the_solution_is_minimal_and_closed_form() {
        let mesh = build_structured_mesh(2, ElementKind::Square).unwrap();
        let sys = assemble_global(
            &mesh,
            1,
            StabilizationParams::default(),
            HybridizationType::TypeIII,
            BoundaryKind::Dirichlet,
            &smooth_source,
        )
        .unwrap();
        let sol = solve_global(&sys, &SolveOptions::default()).unwrap();
        let j_star = energy_value(&sys, &sol.trace).unwrap();
        // At the minimum Ax = b, so J = −½ bᵀx ≤ 0.
        let closed: f64 =
            -0.5 * sys.rhs.iter().zip(&sol.trace).map(|(b, x)| b * x).sum::<f64>();
        assert!((j_star - closed).abs() < 1e-10 * closed.abs().max(1.0));
        assert!(j_star <= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let perturbed: Vec<f64> = sol
                .trace
                .iter()
                .map(|v| v + rng.gen_range(-0.1..0.1))
                .collect();
            assert!(energy_value(&sys, &perturbed).unwrap() > j_star);
        }
    }
}
