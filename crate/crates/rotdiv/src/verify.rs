//! Manufactured solutions, error norms, and convergence orders.
//!
//! Houses the three closed-form test solutions the convergence studies run
//! against, the volume and skeleton L2 error norms, L2 projections with their
//! decay rates, observed-order-of-convergence bookkeeping, and a
//! finite-difference oracle for the source term.
//!
//! Conventions (matching the rest of the crate): for a vector `z` and scalar
//! `s`,
//!
//! ```text
//!   rot z  = ∂z₂/∂x − ∂z₁/∂y,      curl s = (∂s/∂y, −∂s/∂x),
//!   σ = rot u,   φ = −div u,   f = curl σ + grad φ = curl rot u − grad div u.
//! ```
//!
//! The skeleton norm over ∂T_h counts every interior face once per adjacent
//! element (twice in total); boundary faces are counted once.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::hybridsystem::BoundaryKind;
use crate::localsolver::LocalFields;
use crate::mesh::Mesh;
use crate::polybasis::{
    build_element_basis, element_quadrature, face_quadrature, map_quadrature_to_element,
    ElementBasis, FaceBasis, MAX_QUADRATURE_DEGREE,
};
use crate::{Error, Result};

/// Identifier of one manufactured convergence experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    /// Trigonometric solution satisfying the electric table (φ = 0, u·n⊥ = 0
    /// on Γ).
    Exp1Electric,
    /// Trigonometric solution satisfying the magnetic table (σ = 0, u·n = 0
    /// on Γ).
    Exp2Magnetic,
    /// Trigonometric solution vanishing on Γ (Dirichlet table); σ and φ do
    /// not vanish there.
    Exp3Dirichlet,
}

/// Exact fields an error norm or projection compares against.
pub trait ExactSolution {
    /// Vector field u.
    fn u(&self, p: [f64; 2]) -> [f64; 2];
    /// Scalar rotation σ = rot u.
    fn sigma(&self, p: [f64; 2]) -> f64;
    /// Scalar negative divergence φ = −div u.
    fn phi(&self, p: [f64; 2]) -> f64;
}

/// Closed-form exact solution with its source term and the boundary family
/// it satisfies homogeneously on Γ.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedSolution {
    /// Which experiment this is.
    pub id: ExperimentId,
    /// The boundary-condition family the exact solution satisfies.
    pub boundary: BoundaryKind,
}

/// Returns the manufactured solution for an experiment id.
pub fn manufactured_case(id: ExperimentId) -> ManufacturedSolution {
    let boundary = match id {
        ExperimentId::Exp1Electric => BoundaryKind::Electric,
        ExperimentId::Exp2Magnetic => BoundaryKind::Magnetic,
        ExperimentId::Exp3Dirichlet => BoundaryKind::Dirichlet,
    };
    ManufacturedSolution { id, boundary }
}

impl ManufacturedSolution {
    /// Exact vector field u.
    pub fn u(&self, p: [f64; 2]) -> [f64; 2] {
        let (x, y) = (p[0], p[1]);
        match self.id {
            ExperimentId::Exp1Electric => {
                [(PI * x).cos() * (PI * y).sin(), 2.0 * (PI * x).sin() * (PI * y).cos()]
            }
            ExperimentId::Exp2Magnetic => {
                [(2.0 * PI * x).sin() * (PI * y).cos(), 2.0 * (2.0 * PI * x).cos() * (PI * y).sin()]
            }
            ExperimentId::Exp3Dirichlet => {
                let s = (PI * x).sin() * (PI * y).sin();
                [s, s]
            }
        }
    }

    /// Exact rotation σ = rot u.
    pub fn sigma(&self, p: [f64; 2]) -> f64 {
        let (x, y) = (p[0], p[1]);
        match self.id {
            ExperimentId::Exp1Electric => PI * (PI * x).cos() * (PI * y).cos(),
            ExperimentId::Exp2Magnetic => -3.0 * PI * (2.0 * PI * x).sin() * (PI * y).sin(),
            ExperimentId::Exp3Dirichlet => {
                PI * (PI * x).cos() * (PI * y).sin() - PI * (PI * x).sin() * (PI * y).cos()
            }
        }
    }

    /// Exact negative divergence φ = −div u.
    pub fn phi(&self, p: [f64; 2]) -> f64 {
        let (x, y) = (p[0], p[1]);
        match self.id {
            ExperimentId::Exp1Electric => 3.0 * PI * (PI * x).sin() * (PI * y).sin(),
            ExperimentId::Exp2Magnetic => -4.0 * PI * (2.0 * PI * x).cos() * (PI * y).cos(),
            ExperimentId::Exp3Dirichlet => {
                -PI * (PI * x).cos() * (PI * y).sin() - PI * (PI * x).sin() * (PI * y).cos()
            }
        }
    }

    /// Hand-derived gradient of σ.
    fn sigma_grad(&self, p: [f64; 2]) -> [f64; 2] {
        let (x, y) = (p[0], p[1]);
        match self.id {
            ExperimentId::Exp1Electric => [
                -PI * PI * (PI * x).sin() * (PI * y).cos(),
                -PI * PI * (PI * x).cos() * (PI * y).sin(),
            ],
            ExperimentId::Exp2Magnetic => [
                -6.0 * PI * PI * (2.0 * PI * x).cos() * (PI * y).sin(),
                -3.0 * PI * PI * (2.0 * PI * x).sin() * (PI * y).cos(),
            ],
            ExperimentId::Exp3Dirichlet => [
                -PI * PI * ((PI * x).sin() * (PI * y).sin() + (PI * x).cos() * (PI * y).cos()),
                PI * PI * ((PI * x).cos() * (PI * y).cos() + (PI * x).sin() * (PI * y).sin()),
            ],
        }
    }

    /// Hand-derived gradient of φ.
    fn phi_grad(&self, p: [f64; 2]) -> [f64; 2] {
        let (x, y) = (p[0], p[1]);
        match self.id {
            ExperimentId::Exp1Electric => [
                3.0 * PI * PI * (PI * x).cos() * (PI * y).sin(),
                3.0 * PI * PI * (PI * x).sin() * (PI * y).cos(),
            ],
            ExperimentId::Exp2Magnetic => [
                8.0 * PI * PI * (2.0 * PI * x).sin() * (PI * y).cos(),
                4.0 * PI * PI * (2.0 * PI * x).cos() * (PI * y).sin(),
            ],
            ExperimentId::Exp3Dirichlet => [
                PI * PI * ((PI * x).sin() * (PI * y).sin() - (PI * x).cos() * (PI * y).cos()),
                PI * PI * ((PI * x).sin() * (PI * y).sin() - (PI * x).cos() * (PI * y).cos()),
            ],
        }
    }

    /// Source term f = curl σ + grad φ, assembled from the hand-derived
    /// gradients (curl s = (∂s/∂y, −∂s/∂x)).
    pub fn f(&self, p: [f64; 2]) -> [f64; 2] {
        let ds = self.sigma_grad(p);
        let dp = self.phi_grad(p);
        [ds[1] + dp[0], -ds[0] + dp[1]]
    }
}

impl ExactSolution for ManufacturedSolution {
    fn u(&self, p: [f64; 2]) -> [f64; 2] {
        ManufacturedSolution::u(self, p)
    }
    fn sigma(&self, p: [f64; 2]) -> f64 {
        ManufacturedSolution::sigma(self, p)
    }
    fn phi(&self, p: [f64; 2]) -> f64 {
        ManufacturedSolution::phi(self, p)
    }
}

/// Second-order central finite-difference evaluation of
/// `curl rot u − grad div u` at `p` with step `step`, built from nested first
/// differences of `u` alone. Oracle for the analytically derived source term.
pub fn fd_curl_rot_minus_grad_div(
    u: &dyn Fn([f64; 2]) -> [f64; 2],
    p: [f64; 2],
    step: f64,
) -> [f64; 2] {
    let rot = |q: [f64; 2]| {
        let dx2 = (u([q[0] + step, q[1]])[1] - u([q[0] - step, q[1]])[1]) / (2.0 * step);
        let dy1 = (u([q[0], q[1] + step])[0] - u([q[0], q[1] - step])[0]) / (2.0 * step);
        dx2 - dy1
    };
    let div = |q: [f64; 2]| {
        let dx1 = (u([q[0] + step, q[1]])[0] - u([q[0] - step, q[1]])[0]) / (2.0 * step);
        let dy2 = (u([q[0], q[1] + step])[1] - u([q[0], q[1] - step])[1]) / (2.0 * step);
        dx1 + dy2
    };
    let curl_rot = [
        (rot([p[0], p[1] + step]) - rot([p[0], p[1] - step])) / (2.0 * step),
        -(rot([p[0] + step, p[1]]) - rot([p[0] - step, p[1]])) / (2.0 * step),
    ];
    let grad_div = [
        (div([p[0] + step, p[1]]) - div([p[0] - step, p[1]])) / (2.0 * step),
        (div([p[0], p[1] + step]) - div([p[0], p[1] - step])) / (2.0 * step),
    ];
    [curl_rot[0] - grad_div[0], curl_rot[1] - grad_div[1]]
}

/// The five error quantities of one solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct ErrorReport {
    /// Volume L2 error of σ_h.
    pub e_sigma: f64,
    /// Volume L2 error of φ_h.
    pub e_phi: f64,
    /// Volume L2 error of u_h.
    pub e_u: f64,
    /// Skeleton L2 error of σ̌_h over ∂T_h.
    pub e_sigma_check: f64,
    /// Skeleton L2 error of φ̂_h over ∂T_h.
    pub e_phi_hat: f64,
}

/// Observed convergence orders for the five error quantities; `None` marks an
/// undefined rate (first level, or a vanishing error).
#[derive(Debug, Clone, Copy, Default)]
pub struct EocReport {
    /// Rate of e_σ.
    pub sigma: Option<f64>,
    /// Rate of e_φ.
    pub phi: Option<f64>,
    /// Rate of e_u.
    pub u: Option<f64>,
    /// Rate of e_σ̌.
    pub sigma_check: Option<f64>,
    /// Rate of e_φ̂.
    pub phi_hat: Option<f64>,
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    /// Mesh refinement level.
    pub level: u32,
    /// Reported mesh size h = 2^(−level).
    pub h: f64,
    /// Errors at this level.
    pub errors: ErrorReport,
    /// Rates against the previous level (all `None` on the first row).
    pub eoc: EocReport,
}

/// Convergence history of one polynomial degree over a level sequence.
#[derive(Debug, Clone)]
pub struct ConvergenceRecord {
    /// Polynomial degree k.
    pub degree: usize,
    /// One row per level, h strictly decreasing.
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceRecord {
    /// Builds the record from per-level errors, computing rates between
    /// consecutive rows. `h` must be strictly decreasing.
    pub fn from_errors(degree: usize, levels: &[(u32, f64, ErrorReport)]) -> Result<Self> {
        for w in levels.windows(2) {
            if w[1].1 >= w[0].1 {
                return Err(Error::InvalidParameter(format!(
                    "mesh sizes must decrease strictly: h = {} then {}",
                    w[0].1, w[1].1
                )));
            }
        }
        let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels.len());
        for (i, &(level, h, errors)) in levels.iter().enumerate() {
            let eoc = if i == 0 {
                EocReport::default()
            } else {
                let prev = &rows[i - 1];
                EocReport {
                    sigma: eoc(prev.errors.e_sigma, errors.e_sigma, prev.h, h),
                    phi: eoc(prev.errors.e_phi, errors.e_phi, prev.h, h),
                    u: eoc(prev.errors.e_u, errors.e_u, prev.h, h),
                    sigma_check: eoc(prev.errors.e_sigma_check, errors.e_sigma_check, prev.h, h),
                    phi_hat: eoc(prev.errors.e_phi_hat, errors.e_phi_hat, prev.h, h),
                }
            };
            rows.push(ConvergenceRow { level, h, errors, eoc });
        }
        Ok(ConvergenceRecord { degree, rows })
    }
}

/// Observed order between two levels: `log(e₁/e₂)/log(h₁/h₂)`. Returns `None`
/// when either error vanishes (the rate is undefined).
pub fn eoc(e_coarse: f64, e_fine: f64, h_coarse: f64, h_fine: f64) -> Option<f64> {
    if e_coarse <= 0.0 || e_fine <= 0.0 {
        return None;
    }
    Some((e_coarse / e_fine).ln() / (h_coarse / h_fine).ln())
}

/// Quadrature exactness used by error norms and projections: well past the
/// assembly exactness so trigonometric integrands are resolved beyond
/// discretization accuracy.
fn error_quadrature_degree(k: usize) -> usize {
    (2 * k + 6).min(MAX_QUADRATURE_DEGREE)
}

/// Volume L2 errors `(e_σ, e_φ, e_u)` of reconstructed fields against an
/// exact solution, integrated element by element with a rule of exactness
/// ≥ 2k+6 and summed in element-id order (deterministic).
pub fn volume_errors<E: ExactSolution + ?Sized>(
    mesh: &Mesh,
    bases: &[ElementBasis],
    fields: &[LocalFields],
    exact: &E,
) -> Result<(f64, f64, f64)> {
    let contributions = volume_error_contributions(mesh, bases, fields, exact)?;
    let (mut s2, mut p2, mut u2) = (0.0, 0.0, 0.0);
    for (cs, cp, cu) in contributions {
        s2 += cs;
        p2 += cp;
        u2 += cu;
    }
    Ok((s2.sqrt(), p2.sqrt(), u2.sqrt()))
}

/// Per-element squared volume-error contributions, in element-id order.
pub fn volume_error_contributions<E: ExactSolution + ?Sized>(
    mesh: &Mesh,
    bases: &[ElementBasis],
    fields: &[LocalFields],
    exact: &E,
) -> Result<Vec<(f64, f64, f64)>> {
    if bases.len() != mesh.elements.len() || fields.len() != mesh.elements.len() {
        return Err(Error::InvalidParameter(format!(
            "expected {} bases and fields, got {} and {}",
            mesh.elements.len(),
            bases.len(),
            fields.len()
        )));
    }
    let degree = bases.first().map_or(0, |b| b.degree);
    let reference = element_quadrature(mesh.element_kind, error_quadrature_degree(degree))?;
    let mut contributions = Vec::with_capacity(mesh.elements.len());
    for element in &mesh.elements {
        let basis = &bases[element.id];
        let local = &fields[element.id];
        let m = basis.dim;
        let rule = map_quadrature_to_element(&reference, element);
        let (mut s2, mut p2, mut u2) = (0.0, 0.0, 0.0);
        for (q, &p) in rule.points.iter().enumerate() {
            let w = rule.weights[q];
            let mut sig_h = 0.0;
            let mut phi_h = 0.0;
            let mut u_h = [0.0, 0.0];
            for i in 0..m {
                let b = basis.eval(i, p);
                sig_h += local.sigma[i] * b;
                phi_h += local.phi[i] * b;
                u_h[0] += local.u[i] * b;
                u_h[1] += local.u[m + i] * b;
            }
            let ue = exact.u(p);
            s2 += w * (exact.sigma(p) - sig_h).powi(2);
            p2 += w * (exact.phi(p) - phi_h).powi(2);
            u2 += w * ((ue[0] - u_h[0]).powi(2) + (ue[1] - u_h[1]).powi(2));
        }
        contributions.push((s2, p2, u2));
    }
    Ok(contributions)
}

/// Skeleton L2 errors `(e_σ̌, e_φ̂)` of the recovered traces over ∂T_h:
/// every element contributes all of its faces, so interior faces are counted
/// twice. Face integration uses exactness ≥ 2k+6.
pub fn skeleton_errors<E: ExactSolution + ?Sized>(
    mesh: &Mesh,
    bases: &[ElementBasis],
    fields: &[LocalFields],
    exact: &E,
) -> Result<(f64, f64)> {
    if bases.len() != mesh.elements.len() || fields.len() != mesh.elements.len() {
        return Err(Error::InvalidParameter(format!(
            "expected {} bases and fields, got {} and {}",
            mesh.elements.len(),
            bases.len(),
            fields.len()
        )));
    }
    let degree = bases.first().map_or(0, |b| b.degree);
    let fd = degree + 1;
    let mut s2 = 0.0;
    let mut p2 = 0.0;
    for element in &mesh.elements {
        let local = &fields[element.id];
        for (lf, &gf) in element.faces.iter().enumerate() {
            let face = &mesh.faces[gf];
            let quad = face_quadrature(face.length, error_quadrature_degree(degree))?;
            let fb = FaceBasis::new(face.length, degree, &quad);
            for (q, &s) in quad.params.iter().enumerate() {
                let w = quad.weights[q];
                let p = face.point_at(s);
                let mut sig_h = 0.0;
                let mut phi_h = 0.0;
                for a in 0..fd {
                    let v = fb.values[(a, q)];
                    sig_h += local.sigma_check[lf][a] * v;
                    phi_h += local.phi_hat[lf][a] * v;
                }
                s2 += w * (exact.sigma(p) - sig_h).powi(2);
                p2 += w * (exact.phi(p) - phi_h).powi(2);
            }
        }
    }
    Ok((s2.sqrt(), p2.sqrt()))
}

/// L2 projection of a scalar function into the broken degree-k volume space:
/// the orthonormal-basis moments, one coefficient vector per element.
pub fn l2_project_volume(
    mesh: &Mesh,
    k: usize,
    f: &dyn Fn([f64; 2]) -> f64,
) -> Result<Vec<DVector<f64>>> {
    let assembly = element_quadrature(mesh.element_kind, 2 * k + 2)?;
    let reference = element_quadrature(mesh.element_kind, error_quadrature_degree(k))?;
    let mut coeffs = Vec::with_capacity(mesh.elements.len());
    for element in &mesh.elements {
        let basis = build_element_basis(mesh, element.id, k, &assembly)?;
        let rule = map_quadrature_to_element(&reference, element);
        let mut c = DVector::zeros(basis.dim);
        for (q, &p) in rule.points.iter().enumerate() {
            let w = rule.weights[q];
            let fv = f(p);
            for i in 0..basis.dim {
                c[i] += w * fv * basis.eval(i, p);
            }
        }
        coeffs.push(c);
    }
    Ok(coeffs)
}

/// Volume L2 norm of `f − Π_k f` over T_h.
pub fn volume_projection_error(
    mesh: &Mesh,
    k: usize,
    f: &dyn Fn([f64; 2]) -> f64,
) -> Result<f64> {
    let assembly = element_quadrature(mesh.element_kind, 2 * k + 2)?;
    let reference = element_quadrature(mesh.element_kind, error_quadrature_degree(k))?;
    let coeffs = l2_project_volume(mesh, k, f)?;
    let mut total = 0.0;
    for element in &mesh.elements {
        let basis = build_element_basis(mesh, element.id, k, &assembly)?;
        let rule = map_quadrature_to_element(&reference, element);
        for (q, &p) in rule.points.iter().enumerate() {
            let mut proj = 0.0;
            for i in 0..basis.dim {
                proj += coeffs[element.id][i] * basis.eval(i, p);
            }
            total += rule.weights[q] * (f(p) - proj).powi(2);
        }
    }
    Ok(total.sqrt())
}

/// L2 projection of a scalar function onto the degree-k face spaces: one
/// moment vector per global face, in the shared face parameterization.
pub fn l2_project_skeleton(
    mesh: &Mesh,
    k: usize,
    f: &dyn Fn([f64; 2]) -> f64,
) -> Result<Vec<DVector<f64>>> {
    let mut coeffs = Vec::with_capacity(mesh.faces.len());
    for face in &mesh.faces {
        let quad = face_quadrature(face.length, error_quadrature_degree(k))?;
        let fb = FaceBasis::new(face.length, k, &quad);
        let mut c = DVector::zeros(fb.dim);
        for (q, &s) in quad.params.iter().enumerate() {
            let w = quad.weights[q];
            let fv = f(face.point_at(s));
            for a in 0..fb.dim {
                c[a] += w * fv * fb.values[(a, q)];
            }
        }
        coeffs.push(c);
    }
    Ok(coeffs)
}

/// Skeleton L2 norm of `f − P_k f` over ∂T_h (interior faces counted twice).
pub fn skeleton_projection_error(
    mesh: &Mesh,
    k: usize,
    f: &dyn Fn([f64; 2]) -> f64,
) -> Result<f64> {
    let coeffs = l2_project_skeleton(mesh, k, f)?;
    let mut total = 0.0;
    for face in &mesh.faces {
        let quad = face_quadrature(face.length, error_quadrature_degree(k))?;
        let fb = FaceBasis::new(face.length, k, &quad);
        let multiplicity = if face.is_boundary { 1.0 } else { 2.0 };
        for (q, &s) in quad.params.iter().enumerate() {
            let mut proj = 0.0;
            for a in 0..fb.dim {
                proj += coeffs[face.id][a] * fb.values[(a, q)];
            }
            total += multiplicity * quad.weights[q] * (f(face.point_at(s)) - proj).powi(2);
        }
    }
    Ok(total.sqrt())
}
