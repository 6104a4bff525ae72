//! Total-degree polynomial bases of degree ≤ k on physical elements and mesh
//! faces, together with Gauss quadrature rules.
//!
//! The same total-degree space 𝒫_k (dimension (k+1)(k+2)/2) is used on both
//! triangles and squares. Every element gets its own orthonormal modal basis:
//! monomials centered at the element centroid and scaled by its diameter,
//! orthonormalized by modified Gram–Schmidt in the element L2 inner product.
//! Faces get orthonormal Legendre bases in arc length, parameterized in the
//! *global* face orientation so that the two elements sharing a face agree on
//! every face moment.

use nalgebra::DMatrix;

use crate::mesh::{Element, ElementKind, Face, Mesh};
use crate::{Error, Result};

/// Largest supported quadrature exactness degree.
pub const MAX_QUADRATURE_DEGREE: usize = 30;

/// Relative pivot threshold below which Gram–Schmidt reports a degenerate
/// element.
const GRAM_SCHMIDT_PIVOT: f64 = 1e-12;

/// Dimension of the scalar total-degree space 𝒫_k in two variables.
pub fn scalar_basis_dim(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

/// A quadrature rule on a reference or physical element.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Evaluation points.
    pub points: Vec<[f64; 2]>,
    /// Positive weights; they sum to the element area.
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub exactness: usize,
}

/// A quadrature rule on a face, in arc length `s ∈ [0, length]` measured from
/// [`Face::start`] along the global tangent.
#[derive(Debug, Clone)]
pub struct FaceQuadrature {
    /// Arc-length parameters of the evaluation points.
    pub params: Vec<f64>,
    /// Positive weights; they sum to the face length.
    pub weights: Vec<f64>,
    /// Polynomial degree in `s` integrated exactly.
    pub exactness: usize,
}

/// Gauss–Legendre nodes and weights on [−1, 1], computed by Newton iteration
/// on the Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess, then Newton on P_n(x) = 0.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            if n == 1 {
                p1 = x;
            }
            for m in 1..n {
                let p2 = ((2 * m + 1) as f64 * x * p1 - m as f64 * p0) / (m + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            // Derivative from the standard identity (1−x²) P_n' = n(P_{n−1} − x P_n).
            dp = n as f64 * (p0 - x * p1) / (1.0 - x * x);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Enforce exact symmetry of the rule (cosmetic; stabilizes determinism).
    for i in 0..n / 2 {
        let a = 0.5 * (nodes[i] - nodes[n - 1 - i]);
        nodes[i] = a;
        nodes[n - 1 - i] = -a;
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Quadrature on the *reference* element — the unit square [0,1]² or the unit
/// right triangle (0,0),(1,0),(0,1) — exact for total degree ≤
/// `exactness_degree`. Squares use a tensor Gauss rule; triangles a collapsed
/// (Duffy) tensor rule whose Jacobian `1−v` raises the needed 1D degree by one.
pub fn element_quadrature(element_kind: ElementKind, exactness_degree: usize) -> Result<QuadratureRule> {
    if exactness_degree > MAX_QUADRATURE_DEGREE {
        return Err(Error::InvalidParameter(format!(
            "quadrature exactness {exactness_degree} exceeds the supported maximum {MAX_QUADRATURE_DEGREE}"
        )));
    }
    let d = exactness_degree;
    let rule = match element_kind {
        ElementKind::Square => {
            let n = d / 2 + 1; // 2n−1 ≥ d
            let (x, w) = gauss_legendre(n);
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    points.push([0.5 * (x[i] + 1.0), 0.5 * (x[j] + 1.0)]);
                    weights.push(0.25 * w[i] * w[j]);
                }
            }
            QuadratureRule { points, weights, exactness: d }
        }
        ElementKind::Triangle => {
            let n = (d + 3) / 2; // 2n−1 ≥ d+1 covers the collapsed Jacobian
            let (x, w) = gauss_legendre(n);
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let u = 0.5 * (x[i] + 1.0);
                    let v = 0.5 * (x[j] + 1.0);
                    points.push([u * (1.0 - v), v]);
                    weights.push(0.25 * w[i] * w[j] * (1.0 - v));
                }
            }
            QuadratureRule { points, weights, exactness: d }
        }
    };
    Ok(rule)
}

/// Maps a reference-element rule onto a physical element (affine map; our
/// squares are axis-aligned, so this is exact for both kinds).
pub fn map_quadrature_to_element(rule: &QuadratureRule, element: &Element) -> QuadratureRule {
    let v0 = element.vertices[0];
    let v1 = element.vertices[1];
    let vlast = *element.vertices.last().unwrap();
    // Reference axes map to the edges adjacent to vertex 0.
    let (ax, ay) = (v1[0] - v0[0], v1[1] - v0[1]);
    let (bx, by) = (vlast[0] - v0[0], vlast[1] - v0[1]);
    // |J| = 2·area for the reference triangle (area ½), = area for the unit
    // reference square; either way the physical weights sum to the area.
    let jac = (ax * by - ay * bx).abs();
    let points = rule
        .points
        .iter()
        .map(|p| [v0[0] + ax * p[0] + bx * p[1], v0[1] + ay * p[0] + by * p[1]])
        .collect::<Vec<_>>();
    let weights = rule.weights.iter().map(|w| w * jac).collect();
    QuadratureRule { points, weights, exactness: rule.exactness }
}

/// 1D Gauss–Legendre rule on a face of length `length`, exact for polynomials
/// in the arc-length parameter up to `exactness_degree`.
pub fn face_quadrature(length: f64, exactness_degree: usize) -> Result<FaceQuadrature> {
    if exactness_degree > MAX_QUADRATURE_DEGREE {
        return Err(Error::InvalidParameter(format!(
            "quadrature exactness {exactness_degree} exceeds the supported maximum {MAX_QUADRATURE_DEGREE}"
        )));
    }
    let n = exactness_degree / 2 + 1;
    let (x, w) = gauss_legendre(n);
    let params = x.iter().map(|xi| 0.5 * length * (xi + 1.0)).collect();
    let weights = w.iter().map(|wi| 0.5 * length * wi).collect();
    Ok(FaceQuadrature { params, weights, exactness: exactness_degree })
}

/// Orthonormal Legendre basis on a face, in arc length from [`Face::start`].
#[derive(Debug, Clone)]
pub struct FaceBasis {
    /// Polynomial degree k.
    pub degree: usize,
    /// Number of functions, k+1.
    pub dim: usize,
    /// Face length.
    pub length: f64,
    /// `values[(a, q)]`: a-th function at the q-th quadrature point.
    pub values: DMatrix<f64>,
}

impl FaceBasis {
    /// Builds the basis with values tabulated at `quad`'s points.
    pub fn new(length: f64, degree: usize, quad: &FaceQuadrature) -> Self {
        let dim = degree + 1;
        let nq = quad.params.len();
        let mut values = DMatrix::zeros(dim, nq);
        for (q, &s) in quad.params.iter().enumerate() {
            let xi = 2.0 * s / length - 1.0;
            let mut p0 = 1.0;
            let mut p1 = xi;
            for a in 0..dim {
                let pa = if a == 0 { 1.0 } else { p1 };
                values[(a, q)] = ((2 * a + 1) as f64 / length).sqrt() * pa;
                if a >= 1 {
                    let p2 = ((2 * a + 1) as f64 * xi * p1 - a as f64 * p0) / (a + 1) as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
        }
        FaceBasis { degree, dim, length, values }
    }

    /// Evaluates the a-th function at arc-length parameter `s`.
    pub fn eval(&self, a: usize, s: f64) -> f64 {
        let xi = 2.0 * s / self.length - 1.0;
        let mut p0 = 1.0;
        let mut p1 = xi;
        let pa = match a {
            0 => 1.0,
            1 => xi,
            _ => {
                for m in 1..a {
                    let p2 = ((2 * m + 1) as f64 * xi * p1 - m as f64 * p0) / (m + 1) as f64;
                    p0 = p1;
                    p1 = p2;
                }
                p1
            }
        };
        ((2 * a + 1) as f64 / self.length).sqrt() * pa
    }
}

/// Per-face tables carried by an [`ElementBasis`]: the element basis traced
/// onto the face, and the shared face basis, both at the face quadrature
/// points (global parameterization, so neighbor tables coincide pointwise).
#[derive(Debug, Clone)]
pub struct FaceTable {
    /// Global face id.
    pub face_id: usize,
    /// Local face index within the element.
    pub local_index: usize,
    /// Orientation sign `n_K = sign · n` (see `mesh::element_face_sign`).
    pub sign: i8,
    /// Element-outward unit normal on this face.
    pub outward_normal: [f64; 2],
    /// Face quadrature in global arc length.
    pub quad: FaceQuadrature,
    /// Physical quadrature points.
    pub points: Vec<[f64; 2]>,
    /// `values[(i, q)]`: volume basis function i traced at face point q.
    pub values: DMatrix<f64>,
    /// Orthonormal face basis tabulated at the same points.
    pub face_basis: FaceBasis,
}

/// Orthonormal modal basis of 𝒫_k on one physical element, with value and
/// derivative tables at the element quadrature points and trace tables on
/// every face.
#[derive(Debug, Clone)]
pub struct ElementBasis {
    /// Polynomial degree k.
    pub degree: usize,
    /// Dimension (k+1)(k+2)/2.
    pub dim: usize,
    /// Monomial centering point (element centroid).
    pub center: [f64; 2],
    /// Monomial length scale (element diameter).
    pub scale: f64,
    /// `coeffs[(i, j)]`: coefficient of scaled monomial j in basis function i.
    pub coeffs: DMatrix<f64>,
    /// Physical-element quadrature used for construction and assembly.
    pub quad: QuadratureRule,
    /// `values[(i, q)]`: basis function i at element quadrature point q.
    pub values: DMatrix<f64>,
    /// x-derivatives at element quadrature points.
    pub grad_x: DMatrix<f64>,
    /// y-derivatives at element quadrature points.
    pub grad_y: DMatrix<f64>,
    /// Tables for each local face, in the element's local face order.
    pub face_tables: Vec<FaceTable>,
}

/// Monomial exponents (a, b) of 𝒫_k in degree-major order.
fn monomial_exponents(k: usize) -> Vec<(usize, usize)> {
    let mut exps = Vec::with_capacity(scalar_basis_dim(k));
    for d in 0..=k {
        for a in (0..=d).rev() {
            exps.push((a, d - a));
        }
    }
    exps
}

/// Builds the orthonormal basis for element `element_id` of `mesh`.
///
/// `quad` must be a *reference-element* rule of the matching kind, declared
/// exact to total degree ≥ 2k+2; it is mapped to the element internally. Face
/// tables are built with matching 1D exactness.
pub fn build_element_basis(
    mesh: &Mesh,
    element_id: usize,
    k: usize,
    quad: &QuadratureRule,
) -> Result<ElementBasis> {
    let element = mesh
        .elements
        .get(element_id)
        .ok_or_else(|| Error::IndexOutOfRange(format!("element id {element_id}")))?;
    let faces: Vec<&Face> = element.faces.iter().map(|&fid| &mesh.faces[fid]).collect();
    build_element_basis_raw(element, &faces, k, quad)
}

/// [`build_element_basis`] variant taking the element and its faces directly
/// (used by tests that construct elements by hand).
pub fn build_element_basis_raw(
    element: &Element,
    faces: &[&Face],
    k: usize,
    quad: &QuadratureRule,
) -> Result<ElementBasis> {
    if quad.exactness < 2 * k + 2 {
        return Err(Error::InvalidParameter(format!(
            "element quadrature exactness {} is below the required 2k+2 = {}",
            quad.exactness,
            2 * k + 2
        )));
    }
    let dim = scalar_basis_dim(k);
    let exps = monomial_exponents(k);
    let center = element.centroid();
    let scale = element.diameter;
    let phys = map_quadrature_to_element(quad, element);
    let nq = phys.points.len();

    // Tabulate scaled monomials and their derivatives at the quadrature points.
    let mut mono = DMatrix::zeros(dim, nq);
    let mut mono_dx = DMatrix::zeros(dim, nq);
    let mut mono_dy = DMatrix::zeros(dim, nq);
    for (q, p) in phys.points.iter().enumerate() {
        let xi = (p[0] - center[0]) / scale;
        let eta = (p[1] - center[1]) / scale;
        for (j, &(a, b)) in exps.iter().enumerate() {
            mono[(j, q)] = xi.powi(a as i32) * eta.powi(b as i32);
            mono_dx[(j, q)] = if a == 0 {
                0.0
            } else {
                a as f64 / scale * xi.powi(a as i32 - 1) * eta.powi(b as i32)
            };
            mono_dy[(j, q)] = if b == 0 {
                0.0
            } else {
                b as f64 / scale * xi.powi(a as i32) * eta.powi(b as i32 - 1)
            };
        }
    }

    // Modified Gram–Schmidt on the monomial value rows, tracking coefficients.
    // One re-orthogonalization pass keeps the mass matrix near identity even
    // at k = 3 on triangles.
    let dot = |f: &[f64], g: &[f64]| -> f64 {
        f.iter().zip(g).zip(&phys.weights).map(|((a, b), w)| a * b * w).sum()
    };
    let mut coeffs = DMatrix::<f64>::identity(dim, dim);
    let mut values = mono.clone();
    for i in 0..dim {
        let original_norm = dot(values.row(i).transpose().as_slice(), values.row(i).transpose().as_slice()).sqrt();
        for _pass in 0..2 {
            for l in 0..i {
                let proj = dot(
                    values.row(i).transpose().as_slice(),
                    values.row(l).transpose().as_slice(),
                );
                for q in 0..nq {
                    let v = values[(l, q)];
                    values[(i, q)] -= proj * v;
                }
                for j in 0..dim {
                    let c = coeffs[(l, j)];
                    coeffs[(i, j)] -= proj * c;
                }
            }
        }
        let norm = dot(
            values.row(i).transpose().as_slice(),
            values.row(i).transpose().as_slice(),
        )
        .sqrt();
        if original_norm == 0.0 || !norm.is_finite() || norm <= GRAM_SCHMIDT_PIVOT * original_norm {
            return Err(Error::NumericalDegeneracy(format!(
                "Gram–Schmidt pivot {norm:.3e} below threshold on element {} (degenerate geometry?)",
                element.id
            )));
        }
        for q in 0..nq {
            values[(i, q)] /= norm;
        }
        for j in 0..dim {
            coeffs[(i, j)] /= norm;
        }
    }

    // Derivative tables follow from the tracked coefficients.
    let grad_x = &coeffs * mono_dx;
    let grad_y = &coeffs * mono_dy;

    // Face tables: quadrature in the global parameterization shared by both
    // adjacent elements.
    let mut face_tables = Vec::with_capacity(faces.len());
    for (local_index, face) in faces.iter().enumerate() {
        let fq = face_quadrature(face.length, quad.exactness)?;
        let points: Vec<[f64; 2]> = fq.params.iter().map(|&s| face.point_at(s)).collect();
        let mut fvalues = DMatrix::zeros(dim, fq.params.len());
        for (q, p) in points.iter().enumerate() {
            let xi = (p[0] - center[0]) / scale;
            let eta = (p[1] - center[1]) / scale;
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, &(a, b)) in exps.iter().enumerate() {
                    acc += coeffs[(i, j)] * xi.powi(a as i32) * eta.powi(b as i32);
                }
                fvalues[(i, q)] = acc;
            }
        }
        let outward = element.outward_normal(local_index);
        let sign = if (outward[0] - face.normal[0]).abs() + (outward[1] - face.normal[1]).abs() < 1e-12 {
            1
        } else {
            -1
        };
        let face_basis = FaceBasis::new(face.length, k, &fq);
        face_tables.push(FaceTable {
            face_id: face.id,
            local_index,
            sign,
            outward_normal: outward,
            quad: fq,
            points,
            values: fvalues,
            face_basis,
        });
    }

    Ok(ElementBasis {
        degree: k,
        dim,
        center,
        scale,
        coeffs,
        quad: phys,
        values,
        grad_x,
        grad_y,
        face_tables,
    })
}

impl ElementBasis {
    /// Evaluates basis function `i` at an arbitrary physical point.
    pub fn eval(&self, i: usize, p: [f64; 2]) -> f64 {
        let xi = (p[0] - self.center[0]) / self.scale;
        let eta = (p[1] - self.center[1]) / self.scale;
        let exps = monomial_exponents(self.degree);
        exps.iter()
            .enumerate()
            .map(|(j, &(a, b))| self.coeffs[(i, j)] * xi.powi(a as i32) * eta.powi(b as i32))
            .sum()
    }

    /// Evaluates the gradient of basis function `i` at an arbitrary point.
    pub fn eval_grad(&self, i: usize, p: [f64; 2]) -> [f64; 2] {
        let xi = (p[0] - self.center[0]) / self.scale;
        let eta = (p[1] - self.center[1]) / self.scale;
        let exps = monomial_exponents(self.degree);
        let mut g = [0.0, 0.0];
        for (j, &(a, b)) in exps.iter().enumerate() {
            let c = self.coeffs[(i, j)];
            if a > 0 {
                g[0] += c * a as f64 / self.scale * xi.powi(a as i32 - 1) * eta.powi(b as i32);
            }
            if b > 0 {
                g[1] += c * b as f64 / self.scale * xi.powi(a as i32) * eta.powi(b as i32 - 1);
            }
        }
        g
    }

    /// `curl b_i = (∂b_i/∂y, −∂b_i/∂x)` at element quadrature point `q`.
    pub fn curl_at(&self, i: usize, q: usize) -> [f64; 2] {
        [self.grad_y[(i, q)], -self.grad_x[(i, q)]]
    }

    /// Vector basis function `z_j`, `j ∈ [0, 2·dim)`: `(b_j, 0)` for the first
    /// block, `(0, b_{j−dim})` for the second, at element quadrature point `q`.
    pub fn vector_at(&self, j: usize, q: usize) -> [f64; 2] {
        if j < self.dim {
            [self.values[(j, q)], 0.0]
        } else {
            [0.0, self.values[(j - self.dim, q)]]
        }
    }

    /// `rot z_j = ∂z₂/∂x − ∂z₁/∂y` at element quadrature point `q`.
    pub fn vector_rot_at(&self, j: usize, q: usize) -> f64 {
        if j < self.dim {
            -self.grad_y[(j, q)]
        } else {
            self.grad_x[(j - self.dim, q)]
        }
    }

    /// `div z_j = ∂z₁/∂x + ∂z₂/∂y` at element quadrature point `q`.
    pub fn vector_div_at(&self, j: usize, q: usize) -> f64 {
        if j < self.dim {
            self.grad_x[(j, q)]
        } else {
            self.grad_y[(j - self.dim, q)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;
    use approx::assert_relative_eq;

    fn integrate(rule: &QuadratureRule, f: impl Fn(f64, f64) -> f64) -> f64 {
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * f(p[0], p[1]))
            .sum()
    }

    /// ∫ x^a y^b over the reference triangle (0,0),(1,0),(0,1) = a! b! / (a+b+2)!.
    fn triangle_monomial_integral(a: usize, b: usize) -> f64 {
        let fact = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn basis_dims() {
        assert_eq!(scalar_basis_dim(0), 1);
        assert_eq!(scalar_basis_dim(1), 3);
        assert_eq!(scalar_basis_dim(3), 10);
    }

    #[test]
    fn square_rule_integrates_xy() {
        let rule = element_quadrature(ElementKind::Square, 1).unwrap();
        assert!((integrate(&rule, |x, y| x * y) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn triangle_rule_weights_and_x_squared() {
        let rule = element_quadrature(ElementKind::Triangle, 0).unwrap();
        assert!((rule.weights.iter().sum::<f64>() - 0.5).abs() < 1e-14);
        let rule = element_quadrature(ElementKind::Triangle, 2).unwrap();
        assert!((integrate(&rule, |x, _| x * x) - 1.0 / 12.0).abs() < 1e-14);
    }

    #[test]
    fn rules_are_exact_up_to_declared_degree() {
        for d in 0..=12usize {
            let sq = element_quadrature(ElementKind::Square, d).unwrap();
            let tr = element_quadrature(ElementKind::Triangle, d).unwrap();
            assert!((sq.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            assert!((tr.weights.iter().sum::<f64>() - 0.5).abs() < 1e-13);
            for a in 0..=d {
                for b in 0..=(d - a) {
                    let exact_sq = 1.0 / ((a + 1) as f64 * (b + 1) as f64);
                    let got_sq = integrate(&sq, |x, y| x.powi(a as i32) * y.powi(b as i32));
                    assert!(
                        (got_sq - exact_sq).abs() < 1e-12,
                        "square d={d} x^{a} y^{b}: {got_sq} vs {exact_sq}"
                    );
                    let exact_tr = triangle_monomial_integral(a, b);
                    let got_tr = integrate(&tr, |x, y| x.powi(a as i32) * y.powi(b as i32));
                    assert!(
                        (got_tr - exact_tr).abs() < 1e-12,
                        "triangle d={d} x^{a} y^{b}: {got_tr} vs {exact_tr}"
                    );
                }
            }
        }
    }

    #[test]
    fn excessive_degree_is_rejected() {
        assert!(element_quadrature(ElementKind::Square, 31).is_err());
        assert!(face_quadrature(1.0, 31).is_err());
    }

    #[test]
    fn face_rule_examples() {
        let fq = face_quadrature(0.5, 1).unwrap();
        assert!((fq.weights.iter().sum::<f64>() - 0.5).abs() < 1e-14);
        let fq = face_quadrature(1.0, 3).unwrap();
        let int: f64 = fq.params.iter().zip(&fq.weights).map(|(s, w)| w * s * s * s).sum();
        assert!((int - 0.25).abs() < 1e-14);
        let fq = face_quadrature(2.0, 0).unwrap();
        assert_eq!(fq.params.len(), 1);
        assert_relative_eq!(fq.params[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_basis_on_square() {
        let mesh = build_structured_mesh(1, ElementKind::Square).unwrap();
        let quad = element_quadrature(ElementKind::Square, 2).unwrap();
        let basis = build_element_basis(&mesh, 0, 0, &quad).unwrap();
        let area = mesh.elements[0].area;
        for q in 0..basis.quad.points.len() {
            assert_relative_eq!(basis.values[(0, q)], 1.0 / area.sqrt(), max_relative = 1e-13);
        }
        assert_eq!(basis.grad_x[(0, 0)], 0.0);
        assert_eq!(basis.grad_y[(0, 0)], 0.0);
    }

    #[test]
    fn mass_matrix_is_identity_for_all_degrees_and_kinds() {
        for kind in [ElementKind::Square, ElementKind::Triangle] {
            let mesh = build_structured_mesh(1, kind).unwrap();
            for k in 0..=3usize {
                let quad = element_quadrature(kind, 2 * k + 2).unwrap();
                for e in &mesh.elements {
                    let basis = build_element_basis(&mesh, e.id, k, &quad).unwrap();
                    for i in 0..basis.dim {
                        for j in 0..basis.dim {
                            let m: f64 = basis
                                .quad
                                .weights
                                .iter()
                                .enumerate()
                                .map(|(q, w)| w * basis.values[(i, q)] * basis.values[(j, q)])
                                .sum();
                            let expect = if i == j { 1.0 } else { 0.0 };
                            assert!(
                                (m - expect).abs() < 1e-10,
                                "{kind:?} k={k} elem={} M[{i},{j}]={m}",
                                e.id
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn face_mass_matrix_is_identity() {
        let mesh = build_structured_mesh(1, ElementKind::Triangle).unwrap();
        let quad = element_quadrature(ElementKind::Triangle, 8).unwrap();
        let basis = build_element_basis(&mesh, 0, 3, &quad).unwrap();
        for ft in &basis.face_tables {
            let fb = &ft.face_basis;
            for a in 0..fb.dim {
                for b in 0..fb.dim {
                    let m: f64 = ft
                        .quad
                        .weights
                        .iter()
                        .enumerate()
                        .map(|(q, w)| w * fb.values[(a, q)] * fb.values[(b, q)])
                        .sum();
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((m - expect).abs() < 1e-10, "face mass [{a},{b}] = {m}");
                }
            }
        }
    }

    #[test]
    fn derivative_tables_match_finite_differences() {
        let mesh = build_structured_mesh(1, ElementKind::Triangle).unwrap();
        let quad = element_quadrature(ElementKind::Triangle, 6).unwrap();
        let basis = build_element_basis(&mesh, 2, 2, &quad).unwrap();
        let h = 1e-6;
        for i in 0..basis.dim {
            for (q, p) in basis.quad.points.iter().enumerate() {
                // curl b = (∂b/∂y, −∂b/∂x), via central differences.
                let dls = (basis.eval(i, [p[0], p[1] + h]) - basis.eval(i, [p[0], p[1] - h])) / (2.0 * h);
                let dxs = (basis.eval(i, [p[0] + h, p[1]]) - basis.eval(i, [p[0] - h, p[1]])) / (2.0 * h);
                let curl = basis.curl_at(i, q);
                assert!((curl[0] - dls).abs() < 1e-6);
                assert!((curl[1] + dxs).abs() < 1e-6);
            }
        }
        // rot z = ∂z₂/∂x − ∂z₁/∂y for both vector blocks.
        for j in 0..2 * basis.dim {
            for (q, p) in basis.quad.points.iter().enumerate() {
                let eval_vec = |pt: [f64; 2]| -> [f64; 2] {
                    if j < basis.dim {
                        [basis.eval(j, pt), 0.0]
                    } else {
                        [0.0, basis.eval(j - basis.dim, pt)]
                    }
                };
                let dz2dx = (eval_vec([p[0] + h, p[1]])[1] - eval_vec([p[0] - h, p[1]])[1]) / (2.0 * h);
                let dz1dy = (eval_vec([p[0], p[1] + h])[0] - eval_vec([p[0], p[1] - h])[0]) / (2.0 * h);
                assert!((basis.vector_rot_at(j, q) - (dz2dx - dz1dy)).abs() < 1e-6);
                let dz1dx = (eval_vec([p[0] + h, p[1]])[0] - eval_vec([p[0] - h, p[1]])[0]) / (2.0 * h);
                let dz2dy = (eval_vec([p[0], p[1] + h])[1] - eval_vec([p[0], p[1] - h])[1]) / (2.0 * h);
                assert!((basis.vector_div_at(j, q) - (dz1dx + dz2dy)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn degree_nesting_by_least_squares() {
        let mesh = build_structured_mesh(1, ElementKind::Square).unwrap();
        let quad = element_quadrature(ElementKind::Square, 8).unwrap();
        for k in 1..=3usize {
            let lo = build_element_basis(&mesh, 1, k - 1, &quad).unwrap();
            let hi = build_element_basis(&mesh, 1, k, &quad).unwrap();
            // Both bases share the quadrature, so project lo onto hi directly.
            for i in 0..lo.dim {
                let mut residual = 0.0;
                for q in 0..hi.quad.points.len() {
                    let mut recon = 0.0;
                    for j in 0..hi.dim {
                        let c: f64 = hi
                            .quad
                            .weights
                            .iter()
                            .enumerate()
                            .map(|(qq, w)| w * lo.values[(i, qq)] * hi.values[(j, qq)])
                            .sum();
                        recon += c * hi.values[(j, q)];
                    }
                    residual += hi.quad.weights[q] * (lo.values[(i, q)] - recon).powi(2);
                }
                assert!(residual.sqrt() < 1e-10, "k={k} fn {i} residual {residual:.3e}");
            }
        }
    }

    #[test]
    fn insufficient_quadrature_is_rejected() {
        let mesh = build_structured_mesh(1, ElementKind::Square).unwrap();
        let quad = element_quadrature(ElementKind::Square, 2).unwrap();
        assert!(build_element_basis(&mesh, 0, 1, &quad).is_err());
    }

    #[test]
    fn degenerate_element_reports_numerical_degeneracy() {
        use crate::mesh::{Element, Face};
        // Zero-area "triangle": all quadrature weights vanish, so the first
        // Gram–Schmidt pivot is zero.
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let element = Element {
            id: 0,
            vertices: vertices.clone(),
            area: 0.0,
            diameter: 1.0,
            faces: vec![0, 1, 2],
            face_signs: vec![1, 1, 1],
        };
        let faces: Vec<Face> = (0..3)
            .map(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % 3];
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt().max(1e-30);
                Face {
                    id: i,
                    start: a,
                    end: b,
                    normal: [0.0, 1.0],
                    tangent: [1.0, 0.0],
                    length: len,
                    elements: (0, None),
                    is_boundary: true,
                }
            })
            .collect();
        let face_refs: Vec<&Face> = faces.iter().collect();
        let quad = element_quadrature(ElementKind::Triangle, 4).unwrap();
        let err = build_element_basis_raw(&element, &face_refs, 1, &quad).unwrap_err();
        assert!(matches!(err, Error::NumericalDegeneracy(_)));
    }

    #[test]
    fn neighbor_elements_share_face_tables() {
        let mesh = build_structured_mesh(1, ElementKind::Triangle).unwrap();
        let quad = element_quadrature(ElementKind::Triangle, 4).unwrap();
        let interior = mesh.faces.iter().find(|f| !f.is_boundary).unwrap();
        let (lo, hi) = (interior.elements.0, interior.elements.1.unwrap());
        let basis_lo = build_element_basis(&mesh, lo, 1, &quad).unwrap();
        let basis_hi = build_element_basis(&mesh, hi, 1, &quad).unwrap();
        let ft_lo = basis_lo.face_tables.iter().find(|ft| ft.face_id == interior.id).unwrap();
        let ft_hi = basis_hi.face_tables.iter().find(|ft| ft.face_id == interior.id).unwrap();
        for (p, q) in ft_lo.points.iter().zip(&ft_hi.points) {
            assert_eq!(p[0].to_bits(), q[0].to_bits());
            assert_eq!(p[1].to_bits(), q[1].to_bits());
        }
        for a in 0..ft_lo.face_basis.dim {
            for q in 0..ft_lo.quad.params.len() {
                assert_eq!(
                    ft_lo.face_basis.values[(a, q)].to_bits(),
                    ft_hi.face_basis.values[(a, q)].to_bits()
                );
            }
        }
        assert_eq!(ft_lo.sign, 1);
        assert_eq!(ft_hi.sign, -1);
    }
}
