//! Structured meshes of the unit square Ω = (0,1)².
//!
//! Two element kinds are supported: axis-aligned squares of side 2^(−l), and
//! the right triangles obtained by splitting every square along the diagonal
//! from its lower-left to its upper-right corner.
//!
//! Orientation conventions used throughout the crate:
//!
//! * element vertices are stored counter-clockwise, and local face `i` is the
//!   edge from vertex `i` to vertex `i+1 (mod n)`, so the element-outward unit
//!   normal of local face `i` is `(d_y, −d_x)/|d|` for edge vector `d`;
//! * every face stores one *global* unit normal `n`: outward of Ω on boundary
//!   faces, and pointing from the lower-id element into the higher-id element
//!   on interior faces;
//! * the global tangent is `t = n⊥ = (n_y, −n_x)`, and a face is parameterized
//!   by arc length from [`Face::start`] along `+t`; both adjacent elements see
//!   this single parameterization, so face moments are single-valued by
//!   construction and orientation enters only through [`element_face_sign`].

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::{Error, Result};

/// Shape of the mesh elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    /// Right triangles, two per grid square (diagonal lower-left → upper-right).
    Triangle,
    /// Axis-aligned squares.
    Square,
}

/// A single mesh element (triangle or square).
#[derive(Debug, Clone)]
pub struct Element {
    /// Index into [`Mesh::elements`].
    pub id: usize,
    /// Vertex coordinates in counter-clockwise order.
    pub vertices: Vec<[f64; 2]>,
    /// Polygon area (positive).
    pub area: f64,
    /// Largest pairwise vertex distance.
    pub diameter: f64,
    /// Global face ids; local face `i` is the edge `vertices[i] → vertices[i+1]`.
    pub faces: Vec<usize>,
    /// `+1` where the element-outward normal equals the global face normal,
    /// `−1` where it is opposite. Indexed like [`Element::faces`].
    pub face_signs: Vec<i8>,
}

impl Element {
    /// Element-outward unit normal of local face `i`.
    pub fn outward_normal(&self, local_face: usize) -> [f64; 2] {
        let a = self.vertices[local_face];
        let b = self.vertices[(local_face + 1) % self.vertices.len()];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt();
        [dy / len, -dx / len]
    }

    /// Centroid (vertex average; exact for these symmetric elements).
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.vertices.len() as f64;
        let (sx, sy) = self
            .vertices
            .iter()
            .fold((0.0, 0.0), |(sx, sy), v| (sx + v[0], sy + v[1]));
        [sx / n, sy / n]
    }
}

/// A mesh face (edge), carrying the global orientation data.
#[derive(Debug, Clone)]
pub struct Face {
    /// Index into [`Mesh::faces`].
    pub id: usize,
    /// First endpoint; the face runs from `start` to `end` along `+t`.
    pub start: [f64; 2],
    /// Second endpoint, `end = start + length·t`.
    pub end: [f64; 2],
    /// Global unit normal (boundary: outward of Ω; interior: lower-id element
    /// → higher-id element).
    pub normal: [f64; 2],
    /// Global unit tangent `t = (n_y, −n_x)`.
    pub tangent: [f64; 2],
    /// Euclidean length of the face.
    pub length: f64,
    /// Adjacent element ids: `(lower, Some(higher))` on interior faces,
    /// `(owner, None)` on boundary faces.
    pub elements: (usize, Option<usize>),
    /// Whether the face lies on ∂Ω.
    pub is_boundary: bool,
}

impl Face {
    /// Face midpoint.
    pub fn midpoint(&self) -> [f64; 2] {
        [
            0.5 * (self.start[0] + self.end[0]),
            0.5 * (self.start[1] + self.end[1]),
        ]
    }

    /// Point at arc-length parameter `s ∈ [0, length]` from [`Face::start`].
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        [
            self.start[0] + s * self.tangent[0],
            self.start[1] + s * self.tangent[1],
        ]
    }
}

/// A structured mesh of the unit square.
#[derive(Debug, Clone)]
pub struct Mesh {
    /// Refinement index `l`: the grid has 2^l × 2^l squares.
    pub level: u32,
    /// Element shape.
    pub element_kind: ElementKind,
    /// All elements, ids equal to positions.
    pub elements: Vec<Element>,
    /// All faces, ids equal to positions.
    pub faces: Vec<Face>,
    /// Reported mesh size `h = 2^(−l)` (side length of the grid squares; the
    /// triangle diameter is √2 times larger but tables are indexed by `h`).
    pub h_reported: f64,
}

impl Mesh {
    /// Number of interior (non-boundary) faces.
    pub fn interior_face_count(&self) -> usize {
        self.faces.iter().filter(|f| !f.is_boundary).count()
    }

    /// Number of boundary faces.
    pub fn boundary_face_count(&self) -> usize {
        self.faces.iter().filter(|f| f.is_boundary).count()
    }

    /// Plain-text dump (debugging aid): one `E` line per element with vertex
    /// coordinates, one `F` line per face with adjacent element ids (`-1` for
    /// the missing neighbor of a boundary face) and the global normal.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.elements {
            write!(out, "E {}", e.id).unwrap();
            for v in &e.vertices {
                write!(out, " {} {}", v[0], v[1]).unwrap();
            }
            out.push('\n');
        }
        for f in &self.faces {
            let b = f.elements.1.map_or(-1, |id| id as i64);
            writeln!(
                out,
                "F {} {} {} {} {}",
                f.id, f.elements.0, b, f.normal[0], f.normal[1]
            )
            .unwrap();
        }
        out
    }
}

/// Returns the geometry of face `face_id`: `(normal, tangent, length, midpoint)`.
pub fn face_geometry(mesh: &Mesh, face_id: usize) -> Result<([f64; 2], [f64; 2], f64, [f64; 2])> {
    let f = mesh
        .faces
        .get(face_id)
        .ok_or_else(|| Error::IndexOutOfRange(format!("face id {face_id}")))?;
    Ok((f.normal, f.tangent, f.length, f.midpoint()))
}

/// Sign relating the element-outward normal `n_K` on a local face to the
/// global face normal `n`: returns `+1` iff `n_K = n` (then `n_K⊥ = t`),
/// `−1` iff `n_K = −n`.
pub fn element_face_sign(mesh: &Mesh, element_id: usize, local_face: usize) -> Result<i8> {
    let e = mesh
        .elements
        .get(element_id)
        .ok_or_else(|| Error::IndexOutOfRange(format!("element id {element_id}")))?;
    e.face_signs
        .get(local_face)
        .copied()
        .ok_or_else(|| Error::IndexOutOfRange(format!("local face {local_face}")))
}

/// Builds the level-`l` structured mesh: a 2^l × 2^l grid of squares, each
/// optionally split into two triangles along its lower-left → upper-right
/// diagonal. Construction is deterministic (bit-identical coordinates for
/// identical inputs).
pub fn build_structured_mesh(level: u32, element_kind: ElementKind) -> Result<Mesh> {
    if !(1..=12).contains(&level) {
        return Err(Error::InvalidParameter(format!(
            "mesh level must be in [1, 12], got {level}"
        )));
    }
    Ok(grid_mesh(level, element_kind))
}

/// Builds the 2^l × 2^l grid for any `level ≥ 0`. Level 0 yields the
/// single-cell mesh (one square, or two triangles), which is smaller than
/// [`build_structured_mesh`] allows but useful for element-level sanity tests.
pub fn build_grid_mesh(level: u32, element_kind: ElementKind) -> Mesh {
    grid_mesh(level, element_kind)
}

fn grid_mesh(level: u32, element_kind: ElementKind) -> Mesh {
    let n = 1usize << level;
    // Dyadic grid coordinates are exact in binary floating point.
    let coord = |i: usize| i as f64 / n as f64;

    let mut elements: Vec<Element> = Vec::new();
    for iy in 0..n {
        for ix in 0..n {
            let v00 = [coord(ix), coord(iy)];
            let v10 = [coord(ix + 1), coord(iy)];
            let v11 = [coord(ix + 1), coord(iy + 1)];
            let v01 = [coord(ix), coord(iy + 1)];
            let cell_vertex_sets: Vec<Vec<[f64; 2]>> = match element_kind {
                ElementKind::Square => vec![vec![v00, v10, v11, v01]],
                ElementKind::Triangle => {
                    vec![vec![v00, v10, v11], vec![v00, v11, v01]]
                }
            };
            for vertices in cell_vertex_sets {
                let id = elements.len();
                let area = polygon_area(&vertices);
                assert!(area > 0.0, "element vertices must be counter-clockwise");
                let diameter = polygon_diameter(&vertices);
                elements.push(Element {
                    id,
                    vertices,
                    area,
                    diameter,
                    faces: Vec::new(),
                    face_signs: Vec::new(),
                });
            }
        }
    }

    // Faces are keyed by their endpoint pair (as exact grid indices) and
    // created in first-encounter order while walking elements in id order, so
    // the first toucher of an interior face is always the lower-id element.
    let vertex_key = |p: [f64; 2]| -> (usize, usize) {
        (
            (p[0] * n as f64).round() as usize,
            (p[1] * n as f64).round() as usize,
        )
    };
    let mut face_ids: HashMap<((usize, usize), (usize, usize)), usize> = HashMap::new();
    let mut faces: Vec<Face> = Vec::new();

    for e in &mut elements {
        let nv = e.vertices.len();
        for i in 0..nv {
            let a = e.vertices[i];
            let b = e.vertices[(i + 1) % nv];
            let (ka, kb) = (vertex_key(a), vertex_key(b));
            let key = if ka <= kb { (ka, kb) } else { (kb, ka) };
            let outward = e.outward_normal(i);
            match face_ids.get(&key) {
                None => {
                    // First encounter: the global normal is this element's
                    // outward normal, hence t = −(edge direction) and the
                    // face runs from b back to a.
                    let id = faces.len();
                    face_ids.insert(key, id);
                    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                    let tangent = [outward[1], -outward[0]];
                    faces.push(Face {
                        id,
                        start: b,
                        end: a,
                        normal: outward,
                        tangent,
                        length: len,
                        elements: (e.id, None),
                        is_boundary: true, // downgraded on second encounter
                    });
                    e.faces.push(id);
                    e.face_signs.push(1);
                }
                Some(&id) => {
                    let f = &mut faces[id];
                    f.elements.1 = Some(e.id);
                    f.is_boundary = false;
                    e.faces.push(id);
                    e.face_signs.push(-1);
                }
            }
        }
    }

    Mesh {
        level,
        element_kind,
        elements,
        faces,
        h_reported: 1.0 / n as f64,
    }
}

/// Signed shoelace area (positive for counter-clockwise vertex order).
fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let mut twice = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        twice += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * twice
}

fn polygon_diameter(vertices: &[[f64; 2]]) -> f64 {
    let mut d2: f64 = 0.0;
    for (i, a) in vertices.iter().enumerate() {
        for b in &vertices[i + 1..] {
            d2 = d2.max((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2));
        }
    }
    d2.sqrt()
}
