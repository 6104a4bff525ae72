//! Element-local solves and static condensation.
//!
//! On one element K the discrete unknowns are the coefficients of σ_h, φ_h
//! (scalar, `dim` each) and u_h (vector, `2·dim`), satisfying for all test
//! functions (χ, ψ, z) in the same spaces:
//!
//! ```text
//!   (σ_h, χ)_K − (u_h, curl χ)_K + ⟨ǔ_h·n⊥, χ⟩_∂K           = 0
//!   (φ_h, ψ)_K − (u_h, grad ψ)_K + ⟨û_h·n, ψ⟩_∂K            = 0
//!   (σ_h, rot z)_K + ⟨σ̌_h, z·n⊥⟩_∂K
//!     − (φ_h, div z)_K + ⟨φ̂_h, z·n⟩_∂K                      = (f, z)_K
//! ```
//!
//! with the numerical-trace closures `(ǔ−u)·n⊥ = α(σ − σ̌)` and
//! `(û−u)·n = τ(φ − φ̂)`. On every face exactly one member of each pair
//! {ǔ·n⊥, σ̌} and {û·n, φ̂} acts as *data* and the other is *recovered* from
//! the closure; which member is data is the face's [`FaceModes`]. The
//! all-velocity choice (data ǔ·n⊥ and û·n) is the default; the flux-data
//! variants arise for the other hybridizations of the global system.
//!
//! Eliminating the volume unknowns element by element condenses the problem
//! onto the per-face data moments; the condensed matrix `A_K` is assembled
//! from the local energy form, so it is symmetric positive semidefinite by
//! construction.
//!
//! All trace data are exchanged as moments against the orthonormal face basis
//! in the *element-outward* orientation; global orientation signs are applied
//! by the dof map, never here.

use nalgebra::{DMatrix, DVector};

use crate::mesh::Element;
use crate::polybasis::ElementBasis;
use crate::{Error, Result};

/// Stabilization constants of the trace closures, one global value each.
#[derive(Debug, Clone, Copy)]
pub struct StabilizationParams {
    /// Penalty α > 0 in `(ǔ−u)·n⊥ = α(σ−σ̌)`.
    pub alpha: f64,
    /// Penalty τ > 0 in `(û−u)·n = τ(φ−φ̂)`.
    pub tau: f64,
}

impl StabilizationParams {
    /// Validating constructor.
    pub fn new(alpha: f64, tau: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "stabilization parameters must be positive and finite, got alpha={alpha}, tau={tau}"
            )));
        }
        Ok(StabilizationParams { alpha, tau })
    }
}

impl Default for StabilizationParams {
    fn default() -> Self {
        StabilizationParams { alpha: 1.0, tau: 1.0 }
    }
}

/// Which member of the tangential trace pair {ǔ·n⊥, σ̌} is supplied as data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TangentialMode {
    /// Data is ǔ·n⊥ (element-outward); σ̌ is recovered.
    VelocityTangential,
    /// Data is σ̌; ǔ·n⊥ is recovered.
    RotFlux,
}

/// Which member of the normal trace pair {û·n, φ̂} is supplied as data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalMode {
    /// Data is û·n (element-outward); φ̂ is recovered.
    VelocityNormal,
    /// Data is φ̂; û·n is recovered.
    DivFlux,
}

/// Data modes of one face: one tangential and one normal choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceModes {
    /// Tangential pair choice.
    pub tangential: TangentialMode,
    /// Normal pair choice.
    pub normal: NormalMode,
}

impl FaceModes {
    /// The default all-velocity modes: data (ǔ·n⊥, û·n).
    pub fn velocity() -> Self {
        FaceModes {
            tangential: TangentialMode::VelocityTangential,
            normal: NormalMode::VelocityNormal,
        }
    }
}

/// Per-face moment matrices against the orthonormal face basis `q_a`
/// (`fd = k+1` functions per face).
#[derive(Debug, Clone)]
struct FaceOps {
    /// `bf[(i, a)] = ⟨b_i, q_a⟩_F` for the scalar volume basis.
    bf: DMatrix<f64>,
    /// `et[(j, a)] = ⟨z_j·n_K⊥, q_a⟩_F` for the vector volume basis.
    et: DMatrix<f64>,
    /// `en[(j, a)] = ⟨z_j·n_K, q_a⟩_F`.
    en: DMatrix<f64>,
}

/// Volume fields and recovered traces of one element-local solve.
#[derive(Debug, Clone)]
pub struct LocalFields {
    /// Coefficients of σ_h (length `dim`).
    pub sigma: DVector<f64>,
    /// Coefficients of φ_h (length `dim`).
    pub phi: DVector<f64>,
    /// Coefficients of u_h (length `2·dim`, first component block then second).
    pub u: DVector<f64>,
    /// Per-face moments of σ̌_h.
    pub sigma_check: Vec<DVector<f64>>,
    /// Per-face moments of φ̂_h.
    pub phi_hat: Vec<DVector<f64>>,
    /// Per-face moments of ǔ_h·n⊥ (element-outward).
    pub u_check_t: Vec<DVector<f64>>,
    /// Per-face moments of û_h·n (element-outward).
    pub u_hat_n: Vec<DVector<f64>>,
}

impl LocalFields {
    fn zeros(dim: usize, fd: usize, nfaces: usize) -> Self {
        LocalFields {
            sigma: DVector::zeros(dim),
            phi: DVector::zeros(dim),
            u: DVector::zeros(2 * dim),
            sigma_check: vec![DVector::zeros(fd); nfaces],
            phi_hat: vec![DVector::zeros(fd); nfaces],
            u_check_t: vec![DVector::zeros(fd); nfaces],
            u_hat_n: vec![DVector::zeros(fd); nfaces],
        }
    }

    /// Adds `other` into `self` (superposition of local solutions).
    pub fn add_assign(&mut self, other: &LocalFields) {
        self.sigma += &other.sigma;
        self.phi += &other.phi;
        self.u += &other.u;
        for (a, b) in self.sigma_check.iter_mut().zip(&other.sigma_check) {
            *a += b;
        }
        for (a, b) in self.phi_hat.iter_mut().zip(&other.phi_hat) {
            *a += b;
        }
        for (a, b) in self.u_check_t.iter_mut().zip(&other.u_check_t) {
            *a += b;
        }
        for (a, b) in self.u_hat_n.iter_mut().zip(&other.u_hat_n) {
            *a += b;
        }
    }
}

/// Factorized element-local system plus the condensed element matrix.
///
/// Slot layout: faces in element-local order, each contributing `fd`
/// tangential-data moments followed by `fd` normal-data moments, so slot
/// `2·fd·face + which·fd + a` is moment `a` of face `face`
/// (`which` 0 = tangential, 1 = normal).
#[derive(Debug, Clone)]
pub struct LocalOperators {
    /// Element id (diagnostics only).
    pub element_id: usize,
    /// Polynomial degree k.
    pub degree: usize,
    /// Scalar space dimension.
    pub dim: usize,
    /// Face-basis dimension `k+1`.
    pub fd: usize,
    /// Stabilization constants the system was built with.
    pub params: StabilizationParams,
    /// Per-face data modes.
    pub modes: Vec<FaceModes>,
    /// Number of trace-data slots, `2·fd·#faces`.
    pub n_slots: usize,
    /// Volume responses to unit trace data: `4·dim × n_slots`, rows ordered
    /// (σ, φ, u₁-block, u₂-block).
    pub trace_to_volume: DMatrix<f64>,
    /// Volume responses to unit source moments: `4·dim × 2·dim`.
    pub source_to_volume: DMatrix<f64>,
    /// Condensed symmetric positive-semidefinite element matrix.
    pub a_k: DMatrix<f64>,
    /// Element load map: `b_K = load_map · f_moments` (`n_slots × 2·dim`).
    pub load_map: DMatrix<f64>,
    /// Flux-continuity element matrix (`n_slots × n_slots`): row `s` holds the
    /// negated moments, at slot `s`, of the recovered complement of slot `s`'s
    /// data quantity, per unit data at each slot. Gathering these rows over
    /// the elements sharing a face assembles the weak continuity equations for
    /// the recovered traces. When every face uses velocity modes this equals
    /// `a_k`; in general its symmetric part equals `a_k`.
    pub jump_matrix: DMatrix<f64>,
    /// Source contribution to the flux-continuity equations
    /// (`n_slots × 2·dim`): moments of the complement traces of the
    /// source-driven local solve, so the element right-hand side is
    /// `jump_load_map · f_moments`.
    pub jump_load_map: DMatrix<f64>,
    faces: Vec<FaceOps>,
}

/// Builds the all-velocity-mode local operators (the default hybridization's
/// local solver).
pub fn assemble_local_system(
    element: &Element,
    basis: &ElementBasis,
    params: StabilizationParams,
) -> Result<LocalOperators> {
    let modes = vec![FaceModes::velocity(); basis.face_tables.len()];
    assemble_local_system_with_modes(element, basis, params, &modes)
}

/// Builds the local operators with explicit per-face data modes.
pub fn assemble_local_system_with_modes(
    element: &Element,
    basis: &ElementBasis,
    params: StabilizationParams,
    modes: &[FaceModes],
) -> Result<LocalOperators> {
    let m = basis.dim;
    let fd = basis.degree + 1;
    let nfaces = basis.face_tables.len();
    if modes.len() != nfaces {
        return Err(Error::InvalidParameter(format!(
            "got {} face modes for {} faces",
            modes.len(),
            nfaces
        )));
    }
    let (alpha, tau) = (params.alpha, params.tau);
    let nq = basis.quad.points.len();

    // Volume derivative moments d*[ (a, i) ] = ∫_K b_a ∂b_i/∂{x,y}.
    let mut dx = DMatrix::zeros(m, m);
    let mut dy = DMatrix::zeros(m, m);
    for a in 0..m {
        for i in 0..m {
            let (mut sx, mut sy) = (0.0, 0.0);
            for q in 0..nq {
                let w = basis.quad.weights[q] * basis.values[(a, q)];
                sx += w * basis.grad_x[(i, q)];
                sy += w * basis.grad_y[(i, q)];
            }
            dx[(a, i)] = sx;
            dy[(a, i)] = sy;
        }
    }

    // Face moment matrices; everything else on a face derives from bf and the
    // outward normal because z_j·n and z_j·n⊥ are scalar multiples of b_{j mod m}.
    let mut faces = Vec::with_capacity(nfaces);
    for ft in &basis.face_tables {
        let nqf = ft.quad.params.len();
        let mut bf = DMatrix::zeros(m, fd);
        for i in 0..m {
            for a in 0..fd {
                let mut s = 0.0;
                for q in 0..nqf {
                    s += ft.quad.weights[q] * ft.values[(i, q)] * ft.face_basis.values[(a, q)];
                }
                bf[(i, a)] = s;
            }
        }
        let n = ft.outward_normal;
        let nperp = [n[1], -n[0]];
        let mut et = DMatrix::zeros(2 * m, fd);
        let mut en = DMatrix::zeros(2 * m, fd);
        for j in 0..2 * m {
            let (comp, row) = if j < m { (0, j) } else { (1, j - m) };
            for a in 0..fd {
                et[(j, a)] = nperp[comp] * bf[(row, a)];
                en[(j, a)] = n[comp] * bf[(row, a)];
            }
        }
        faces.push(FaceOps { bf, et, en });
    }

    // Local matrix, row/column blocks (σ, φ, u₁, u₂).
    let size = 4 * m;
    let mut mat = DMatrix::zeros(size, size);
    for i in 0..m {
        mat[(i, i)] += 1.0; // (σ, χ): orthonormal mass
        mat[(m + i, m + i)] += 1.0; // (φ, ψ)
        for a in 0..m {
            // −(u, curl χ_i) = −u₁·∂χ/∂y + u₂·∂χ/∂x
            mat[(i, 2 * m + a)] -= dy[(a, i)];
            mat[(i, 3 * m + a)] += dx[(a, i)];
            // −(u, grad ψ_i)
            mat[(m + i, 2 * m + a)] -= dx[(a, i)];
            mat[(m + i, 3 * m + a)] -= dy[(a, i)];
        }
    }
    for j in 0..2 * m {
        for i in 0..m {
            // (σ, rot z_j) and −(φ, div z_j).
            let rot = if j < m { -dy[(i, j)] } else { dx[(i, j - m)] };
            let div = if j < m { dx[(i, j)] } else { dy[(i, j - m)] };
            mat[(2 * m + j, i)] += rot;
            mat[(2 * m + j, m + i)] -= div;
        }
    }
    for (f, ops) in faces.iter().enumerate() {
        // Face mass ⟨b_i, b_l⟩_F and trace couplings, exact because every
        // trace lies in the span of the face basis.
        let sf = &ops.bf * ops.bf.transpose(); // m × m
        match modes[f].tangential {
            TangentialMode::VelocityTangential => {
                // σ̌ recovered: α⁻¹⟨u·n⊥, z_j·n⊥⟩ and ⟨σ, z_j·n⊥⟩ enter eq 3.
                let wt = &ops.et * ops.et.transpose(); // 2m × 2m
                for j in 0..2 * m {
                    for jp in 0..2 * m {
                        mat[(2 * m + j, 2 * m + jp)] += wt[(j, jp)] / alpha;
                    }
                }
                let pt = &ops.bf * ops.et.transpose(); // m × 2m, ⟨b_i, z_j·n⊥⟩
                for j in 0..2 * m {
                    for i in 0..m {
                        mat[(2 * m + j, i)] += pt[(i, j)];
                    }
                }
            }
            TangentialMode::RotFlux => {
                // ǔ·n⊥ recovered: α⟨σ, χ⟩_F and ⟨u·n⊥, χ⟩_F enter eq 1.
                let pt = &ops.bf * ops.et.transpose();
                for i in 0..m {
                    for l in 0..m {
                        mat[(i, l)] += alpha * sf[(i, l)];
                    }
                    for j in 0..2 * m {
                        mat[(i, 2 * m + j)] += pt[(i, j)];
                    }
                }
            }
        }
        match modes[f].normal {
            NormalMode::VelocityNormal => {
                let wn = &ops.en * ops.en.transpose();
                for j in 0..2 * m {
                    for jp in 0..2 * m {
                        mat[(2 * m + j, 2 * m + jp)] += wn[(j, jp)] / tau;
                    }
                }
                let pn = &ops.bf * ops.en.transpose();
                for j in 0..2 * m {
                    for i in 0..m {
                        mat[(2 * m + j, m + i)] += pn[(i, j)];
                    }
                }
            }
            NormalMode::DivFlux => {
                let pn = &ops.bf * ops.en.transpose();
                for i in 0..m {
                    for l in 0..m {
                        mat[(m + i, m + l)] += tau * sf[(i, l)];
                    }
                    for j in 0..2 * m {
                        mat[(m + i, 2 * m + j)] += pn[(i, j)];
                    }
                }
            }
        }
    }

    // Right-hand sides: one column per trace-data slot, then 2·dim source
    // columns (unit moments of f).
    let n_slots = 2 * fd * nfaces;
    let mut rhs = DMatrix::zeros(size, n_slots + 2 * m);
    for (f, ops) in faces.iter().enumerate() {
        let t0 = 2 * fd * f;
        let n0 = t0 + fd;
        for a in 0..fd {
            match modes[f].tangential {
                TangentialMode::VelocityTangential => {
                    // data g_t = ǔ·n⊥: −⟨g_t, χ⟩ in eq 1, +α⁻¹⟨g_t, z·n⊥⟩ in eq 3.
                    for i in 0..m {
                        rhs[(i, t0 + a)] -= ops.bf[(i, a)];
                    }
                    for j in 0..2 * m {
                        rhs[(2 * m + j, t0 + a)] += ops.et[(j, a)] / alpha;
                    }
                }
                TangentialMode::RotFlux => {
                    // data ς = σ̌: +α⟨ς, χ⟩ in eq 1, −⟨ς, z·n⊥⟩ in eq 3.
                    for i in 0..m {
                        rhs[(i, t0 + a)] += alpha * ops.bf[(i, a)];
                    }
                    for j in 0..2 * m {
                        rhs[(2 * m + j, t0 + a)] -= ops.et[(j, a)];
                    }
                }
            }
            match modes[f].normal {
                NormalMode::VelocityNormal => {
                    for i in 0..m {
                        rhs[(m + i, n0 + a)] -= ops.bf[(i, a)];
                    }
                    for j in 0..2 * m {
                        rhs[(2 * m + j, n0 + a)] += ops.en[(j, a)] / tau;
                    }
                }
                NormalMode::DivFlux => {
                    for i in 0..m {
                        rhs[(m + i, n0 + a)] += tau * ops.bf[(i, a)];
                    }
                    for j in 0..2 * m {
                        rhs[(2 * m + j, n0 + a)] -= ops.en[(j, a)];
                    }
                }
            }
        }
    }
    for j in 0..2 * m {
        rhs[(2 * m + j, n_slots + j)] = 1.0;
    }

    let lu = mat.clone().full_piv_lu();
    let solved = lu.solve(&rhs).ok_or_else(|| {
        Error::Internal(format!(
            "singular local system on element {} (this contradicts local solvability and indicates an assembly bug)",
            element.id
        ))
    })?;
    let trace_to_volume = solved.columns(0, n_slots).into_owned();
    let source_to_volume = solved.columns(n_slots, 2 * m).into_owned();

    // Condensed element matrix from the energy form
    //   a_K(η, μ) = (Σ_η, Σ_μ) + (Φ_η, Φ_μ) + Σ_F (closure-mismatch penalties),
    // evaluated on the slot basis. Symmetric PSD by construction.
    let s_resp = trace_to_volume.rows(0, m).into_owned();
    let p_resp = trace_to_volume.rows(m, m).into_owned();
    let w_resp = trace_to_volume.rows(2 * m, 2 * m).into_owned();
    let mut a_k = s_resp.transpose() * &s_resp + p_resp.transpose() * &p_resp;
    for (f, ops) in faces.iter().enumerate() {
        let t0 = 2 * fd * f;
        let n0 = t0 + fd;
        // Tangential mismatch rows (fd × n_slots) and their weight.
        let (mut mt, wt) = match modes[f].tangential {
            TangentialMode::VelocityTangential => (ops.et.transpose() * &w_resp, 1.0 / alpha),
            TangentialMode::RotFlux => (ops.bf.transpose() * &s_resp, alpha),
        };
        for a in 0..fd {
            mt[(a, t0 + a)] -= 1.0;
        }
        a_k += wt * mt.transpose() * &mt;
        let (mut mn, wn) = match modes[f].normal {
            NormalMode::VelocityNormal => (ops.en.transpose() * &w_resp, 1.0 / tau),
            NormalMode::DivFlux => (ops.bf.transpose() * &p_resp, tau),
        };
        for a in 0..fd {
            mn[(a, n0 + a)] -= 1.0;
        }
        a_k += wn * mn.transpose() * &mn;
    }
    let load_map = w_resp.transpose();

    // Complement-trace maps: the moments at each slot of the recovered
    // complement of that slot's data quantity (σ̌ for ǔ·n⊥ data and vice
    // versa, û·n for φ̂ data and vice versa), written as an affine map of the
    // volume coefficients and the slot data. These mirror the recovery
    // relations used by `recover_traces`.
    let mut complement_of_volume = DMatrix::zeros(n_slots, size);
    let mut complement_of_data = DMatrix::zeros(n_slots, n_slots);
    for (f, ops) in faces.iter().enumerate() {
        let t0 = 2 * fd * f;
        let n0 = t0 + fd;
        for a in 0..fd {
            match modes[f].tangential {
                TangentialMode::VelocityTangential => {
                    // complement σ̌ = σ|_F + α⁻¹(u·n⊥ − data)
                    for i in 0..m {
                        complement_of_volume[(t0 + a, i)] += ops.bf[(i, a)];
                    }
                    for j in 0..2 * m {
                        complement_of_volume[(t0 + a, 2 * m + j)] += ops.et[(j, a)] / alpha;
                    }
                    complement_of_data[(t0 + a, t0 + a)] = -1.0 / alpha;
                }
                TangentialMode::RotFlux => {
                    // complement ǔ·n⊥ = u·n⊥ + α(σ|_F − data)
                    for i in 0..m {
                        complement_of_volume[(t0 + a, i)] += alpha * ops.bf[(i, a)];
                    }
                    for j in 0..2 * m {
                        complement_of_volume[(t0 + a, 2 * m + j)] += ops.et[(j, a)];
                    }
                    complement_of_data[(t0 + a, t0 + a)] = -alpha;
                }
            }
            match modes[f].normal {
                NormalMode::VelocityNormal => {
                    // complement φ̂ = φ|_F + τ⁻¹(u·n − data)
                    for i in 0..m {
                        complement_of_volume[(n0 + a, m + i)] += ops.bf[(i, a)];
                    }
                    for j in 0..2 * m {
                        complement_of_volume[(n0 + a, 2 * m + j)] += ops.en[(j, a)] / tau;
                    }
                    complement_of_data[(n0 + a, n0 + a)] = -1.0 / tau;
                }
                NormalMode::DivFlux => {
                    // complement û·n = u·n + τ(φ|_F − data)
                    for i in 0..m {
                        complement_of_volume[(n0 + a, m + i)] += tau * ops.bf[(i, a)];
                    }
                    for j in 0..2 * m {
                        complement_of_volume[(n0 + a, 2 * m + j)] += ops.en[(j, a)];
                    }
                    complement_of_data[(n0 + a, n0 + a)] = -tau;
                }
            }
        }
    }
    let jump_matrix = -(&complement_of_volume * &trace_to_volume + complement_of_data);
    let jump_load_map = &complement_of_volume * &source_to_volume;

    Ok(LocalOperators {
        element_id: element.id,
        degree: basis.degree,
        dim: m,
        fd,
        params,
        modes: modes.to_vec(),
        n_slots,
        trace_to_volume,
        source_to_volume,
        a_k,
        load_map,
        jump_matrix,
        jump_load_map,
        faces,
    })
}

impl LocalOperators {
    /// Slot offset of face `f`: tangential moments at `slot_t(f)..slot_t(f)+fd`.
    pub fn slot_t(&self, f: usize) -> usize {
        2 * self.fd * f
    }

    /// Normal moments of face `f` start here.
    pub fn slot_n(&self, f: usize) -> usize {
        2 * self.fd * f + self.fd
    }

    /// Recovers all four trace-moment sets on each face from volume fields and
    /// the supplied slot data.
    fn recover_traces(&self, fields: &mut LocalFields, data: &DVector<f64>) {
        let (alpha, tau) = (self.params.alpha, self.params.tau);
        for (f, ops) in self.faces.iter().enumerate() {
            let g_t = data.rows(self.slot_t(f), self.fd);
            let g_n = data.rows(self.slot_n(f), self.fd);
            let u_t = ops.et.transpose() * &fields.u;
            let u_n = ops.en.transpose() * &fields.u;
            let s_f = ops.bf.transpose() * &fields.sigma;
            let p_f = ops.bf.transpose() * &fields.phi;
            match self.modes[f].tangential {
                TangentialMode::VelocityTangential => {
                    fields.u_check_t[f] = g_t.into_owned();
                    fields.sigma_check[f] = &s_f + (&u_t - g_t) / alpha;
                }
                TangentialMode::RotFlux => {
                    fields.sigma_check[f] = g_t.into_owned();
                    fields.u_check_t[f] = &u_t + alpha * (&s_f - g_t);
                }
            }
            match self.modes[f].normal {
                NormalMode::VelocityNormal => {
                    fields.u_hat_n[f] = g_n.into_owned();
                    fields.phi_hat[f] = &p_f + (&u_n - g_n) / tau;
                }
                NormalMode::DivFlux => {
                    fields.phi_hat[f] = g_n.into_owned();
                    fields.u_hat_n[f] = &u_n + tau * (&p_f - g_n);
                }
            }
        }
    }

    /// Solves the trace-driven local problem (zero source). `tangential_data`
    /// and `normal_data` hold one moment vector per face — for a velocity-mode
    /// face the moments of ǔ·n⊥ (resp. û·n), for a flux-mode face the moments
    /// of σ̌ (resp. φ̂) — in the element-outward orientation.
    pub fn solve_local_trace(
        &self,
        tangential_data: &[DVector<f64>],
        normal_data: &[DVector<f64>],
    ) -> Result<LocalFields> {
        let nfaces = self.faces.len();
        if tangential_data.len() != nfaces || normal_data.len() != nfaces {
            return Err(Error::InvalidParameter(format!(
                "expected {} per-face moment vectors, got {} tangential / {} normal",
                nfaces,
                tangential_data.len(),
                normal_data.len()
            )));
        }
        let mut data = DVector::zeros(self.n_slots);
        for f in 0..nfaces {
            if tangential_data[f].len() != self.fd || normal_data[f].len() != self.fd {
                return Err(Error::InvalidParameter(format!(
                    "face {f}: expected {} moments per trace field",
                    self.fd
                )));
            }
            data.rows_mut(self.slot_t(f), self.fd).copy_from(&tangential_data[f]);
            data.rows_mut(self.slot_n(f), self.fd).copy_from(&normal_data[f]);
        }
        Ok(self.solve_trace_slots(&data))
    }

    /// [`LocalOperators::solve_local_trace`] on a packed slot vector.
    pub fn solve_trace_slots(&self, data: &DVector<f64>) -> LocalFields {
        let vol = &self.trace_to_volume * data;
        let m = self.dim;
        let mut fields = LocalFields::zeros(m, self.fd, self.faces.len());
        fields.sigma = vol.rows(0, m).into_owned();
        fields.phi = vol.rows(m, m).into_owned();
        fields.u = vol.rows(2 * m, 2 * m).into_owned();
        self.recover_traces(&mut fields, data);
        fields
    }

    /// Solves the source-driven local problem (zero trace data);
    /// `f_moments[j] = (f, z_j)_K` against the orthonormal vector basis.
    pub fn solve_local_source(&self, f_moments: &DVector<f64>) -> Result<LocalFields> {
        let m = self.dim;
        if f_moments.len() != 2 * m {
            return Err(Error::InvalidParameter(format!(
                "expected {} source moments, got {}",
                2 * m,
                f_moments.len()
            )));
        }
        let vol = &self.source_to_volume * f_moments;
        let mut fields = LocalFields::zeros(m, self.fd, self.faces.len());
        fields.sigma = vol.rows(0, m).into_owned();
        fields.phi = vol.rows(m, m).into_owned();
        fields.u = vol.rows(2 * m, 2 * m).into_owned();
        self.recover_traces(&mut fields, &DVector::zeros(self.n_slots));
        Ok(fields)
    }
}

/// The condensed element system: the energy-form matrix `A_K` on the trace
/// slots and the load vector `b_K[μ] = (f, U_μ)_K` built from the velocity
/// responses.
pub fn condensed_element_system(
    ops: &LocalOperators,
    f_moments: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if f_moments.len() != 2 * ops.dim {
        return Err(Error::InvalidParameter(format!(
            "expected {} source moments, got {}",
            2 * ops.dim,
            f_moments.len()
        )));
    }
    Ok((ops.a_k.clone(), &ops.load_map * f_moments))
}

/// Residual of the three local equations, assembled *independently* of
/// [`LocalOperators`] by direct quadrature of each term, with all four traces
/// taken from `fields`. Returns the three residual blocks (tests against χ,
/// ψ, z).
pub fn local_residual(
    basis: &ElementBasis,
    fields: &LocalFields,
    f_moments: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let m = basis.dim;
    let nq = basis.quad.points.len();
    let mut res_a = DVector::zeros(m);
    let mut res_b = DVector::zeros(m);
    let mut res_c = DVector::zeros(2 * m);

    // Volume terms by quadrature (no orthonormality assumptions).
    for q in 0..nq {
        let w = basis.quad.weights[q];
        let mut sigma = 0.0;
        let mut phi = 0.0;
        let mut u = [0.0, 0.0];
        for l in 0..m {
            sigma += fields.sigma[l] * basis.values[(l, q)];
            phi += fields.phi[l] * basis.values[(l, q)];
            u[0] += fields.u[l] * basis.values[(l, q)];
            u[1] += fields.u[m + l] * basis.values[(l, q)];
        }
        for i in 0..m {
            let curl = basis.curl_at(i, q);
            res_a[i] += w * (sigma * basis.values[(i, q)] - (u[0] * curl[0] + u[1] * curl[1]));
            res_b[i] += w
                * (phi * basis.values[(i, q)]
                    - (u[0] * basis.grad_x[(i, q)] + u[1] * basis.grad_y[(i, q)]));
        }
        for j in 0..2 * m {
            res_c[j] += w * (sigma * basis.vector_rot_at(j, q) - phi * basis.vector_div_at(j, q));
        }
    }
    // Face terms: evaluate traces pointwise from their face-basis moments.
    for (f, ft) in basis.face_tables.iter().enumerate() {
        let n = ft.outward_normal;
        let nperp = [n[1], -n[0]];
        for (q, &wq) in ft.quad.weights.iter().enumerate() {
            let mut sigma_check = 0.0;
            let mut phi_hat = 0.0;
            let mut u_check_t = 0.0;
            let mut u_hat_n = 0.0;
            for a in 0..ft.face_basis.dim {
                let qv = ft.face_basis.values[(a, q)];
                sigma_check += fields.sigma_check[f][a] * qv;
                phi_hat += fields.phi_hat[f][a] * qv;
                u_check_t += fields.u_check_t[f][a] * qv;
                u_hat_n += fields.u_hat_n[f][a] * qv;
            }
            for i in 0..m {
                res_a[i] += wq * u_check_t * ft.values[(i, q)];
                res_b[i] += wq * u_hat_n * ft.values[(i, q)];
            }
            for j in 0..2 * m {
                let (comp, row) = if j < m { (0, j) } else { (1, j - m) };
                let zt = nperp[comp] * ft.values[(row, q)];
                let zn = n[comp] * ft.values[(row, q)];
                res_c[j] += wq * (sigma_check * zt + phi_hat * zn);
            }
        }
    }
    res_c -= f_moments;
    (res_a, res_b, res_c)
}
