//! Two-dimensional polytopal meshes.
//!
//! A [`Mesh`] is built once from a vertex list and a list of counter-clockwise
//! vertex loops, after which it is immutable. Faces (edges) are derived from the
//! loops; every element stores the outward unit normal of each of its faces so
//! that downstream code never has to reason about global face orientation.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

/// Point or vector in the plane.
pub type Point = nalgebra::Vector2<f64>;

/// Relative tolerance used by [`Mesh::validate`].
const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid mesh structure: {0}")]
    Structure(String),
    #[error("invalid generator input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub coords: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub vertices: [usize; 2],
    pub measure: f64,
    pub diameter: f64,
    pub midpoint: Point,
    /// Unit tangent pointing from `vertices[0]` to `vertices[1]`.
    pub tangent: Point,
    /// One (boundary) or two (interior) adjacent elements.
    pub neighbors: Vec<usize>,
    /// Outward normal of `neighbors[i]` on this face.
    pub normals: Vec<Point>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.neighbors.len() == 1
    }

    /// Outward unit normal of `element` on this face, if adjacent.
    pub fn normal_for(&self, element: usize) -> Option<Point> {
        self.neighbors
            .iter()
            .position(|&e| e == element)
            .map(|i| self.normals[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    /// Counter-clockwise vertex loop.
    pub vertices: Vec<usize>,
    /// `faces[i]` joins `vertices[i]` and `vertices[(i + 1) % n]`.
    pub faces: Vec<usize>,
    /// Outward unit normals, aligned with `faces`.
    pub normals: Vec<Point>,
    pub measure: f64,
    pub diameter: f64,
    pub barycenter: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vertex>,
    faces: Vec<Face>,
    elements: Vec<Element>,
    boundary_faces: Vec<usize>,
    interior_faces: Vec<usize>,
    h: f64,
}

/// Axis-aligned rectangle `[min.x, max.x] x [min.y, max.y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point,
    pub max: Point,
}

impl BoundingBox {
    pub fn unit_square() -> Self {
        Self {
            min: Point::new(0.0, 0.0),
            max: Point::new(1.0, 1.0),
        }
    }
}

/// A broken mesh invariant, reported by [`Mesh::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFiniteVertex { vertex: usize },
    NeighborCount { face: usize, count: usize },
    DegenerateFace { face: usize },
    /// The element area is not positive or disagrees with the shoelace formula.
    Measure { element: usize, measure: f64 },
    /// `n_TF` is not a unit vector orthogonal to `F` pointing out of `T`.
    NormalConsistency { element: usize, face: usize },
    /// The two normals of an interior face are not opposite.
    NormalsNotOpposite { face: usize },
    /// `sum_F |F| n_TF` does not vanish.
    Closure { element: usize, defect: f64 },
    FaceDiameter { element: usize, face: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFiniteVertex { vertex } => write!(f, "vertex {vertex} has non-finite coordinates"),
            Violation::NeighborCount { face, count } => {
                write!(f, "face {face} has {count} neighbors (expected 1 or 2)")
            }
            Violation::DegenerateFace { face } => write!(f, "face {face} has zero length"),
            Violation::Measure { element, measure } => {
                write!(f, "element {element} has invalid measure {measure:e}")
            }
            Violation::NormalConsistency { element, face } => {
                write!(f, "normal of face {face} in element {element} is not outward unit")
            }
            Violation::NormalsNotOpposite { face } => write!(f, "normals of interior face {face} are not opposite"),
            Violation::Closure { element, defect } => {
                write!(f, "element {element}: sum of |F| n_TF = {defect:e}")
            }
            Violation::FaceDiameter { element, face } => {
                write!(f, "face {face} is larger than element {element}")
            }
        }
    }
}

fn cross(a: &Point, b: &Point) -> f64 {
    a.x * b.y - a.y * b.x
}

fn shoelace(points: &[Point]) -> f64 {
    let n = points.len();
    (0..n).map(|i| cross(&points[i], &points[(i + 1) % n])).sum::<f64>() / 2.0
}

impl Mesh {
    /// Builds a mesh from vertex coordinates and counter-clockwise element loops.
    ///
    /// Faces are derived from consecutive loop vertices. An edge shared by more
    /// than two elements, a loop with fewer than three vertices or an
    /// out-of-range vertex index is a structure error. Geometric defects
    /// (flat or clockwise elements) are left for [`Mesh::validate`].
    pub fn from_polygons(coords: Vec<Point>, loops: Vec<Vec<usize>>) -> Result<Self, MeshError> {
        if loops.is_empty() {
            return Err(MeshError::Structure("mesh has no elements".into()));
        }
        let vertices: Vec<Vertex> = coords.into_iter().map(|coords| Vertex { coords }).collect();
        let mut edge_map: HashMap<(usize, usize), usize> = HashMap::new();
        let mut faces: Vec<Face> = Vec::new();
        let mut elements = Vec::with_capacity(loops.len());

        for (t, lp) in loops.into_iter().enumerate() {
            if lp.len() < 3 {
                return Err(MeshError::Structure(format!("element {t} has fewer than 3 vertices")));
            }
            if let Some(&v) = lp.iter().find(|&&v| v >= vertices.len()) {
                return Err(MeshError::Structure(format!("element {t} references missing vertex {v}")));
            }
            let n = lp.len();
            let pts: Vec<Point> = lp.iter().map(|&v| vertices[v].coords).collect();
            let measure = shoelace(&pts);
            let barycenter = polygon_centroid(&pts, measure);
            let mut diameter: f64 = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    diameter = diameter.max((pts[i] - pts[j]).norm());
                }
            }

            let mut face_ids = Vec::with_capacity(n);
            let mut normals = Vec::with_capacity(n);
            for i in 0..n {
                let (a, b) = (lp[i], lp[(i + 1) % n]);
                if a == b {
                    return Err(MeshError::Structure(format!("element {t} repeats vertex {a}")));
                }
                let key = (a.min(b), a.max(b));
                let edge = pts[(i + 1) % n] - pts[i];
                let len = edge.norm();
                // Outward for a counter-clockwise loop.
                let normal = if len > 0.0 { Point::new(edge.y, -edge.x) / len } else { Point::zeros() };
                let f = match edge_map.get(&key) {
                    Some(&f) => {
                        let face = &mut faces[f];
                        if face.neighbors.len() >= 2 {
                            return Err(MeshError::Structure(format!(
                                "edge ({}, {}) is shared by more than two elements",
                                key.0, key.1
                            )));
                        }
                        if face.neighbors.contains(&t) {
                            return Err(MeshError::Structure(format!("element {t} uses edge twice")));
                        }
                        face.neighbors.push(t);
                        face.normals.push(normal);
                        f
                    }
                    None => {
                        let f = faces.len();
                        let (pa, pb) = (vertices[key.0].coords, vertices[key.1].coords);
                        let d = pb - pa;
                        let len = d.norm();
                        faces.push(Face {
                            vertices: [key.0, key.1],
                            measure: len,
                            diameter: len,
                            midpoint: (pa + pb) / 2.0,
                            tangent: if len > 0.0 { d / len } else { Point::zeros() },
                            neighbors: vec![t],
                            normals: vec![normal],
                        });
                        edge_map.insert(key, f);
                        f
                    }
                };
                face_ids.push(f);
                normals.push(normal);
            }
            elements.push(Element {
                vertices: lp,
                faces: face_ids,
                normals,
                measure,
                diameter,
                barycenter,
            });
        }

        let boundary_faces = (0..faces.len()).filter(|&f| faces[f].is_boundary()).collect();
        let interior_faces = (0..faces.len()).filter(|&f| !faces[f].is_boundary()).collect();
        let h = elements.iter().map(|e| e.diameter).fold(0.0, f64::max);
        Ok(Self {
            vertices,
            faces,
            elements,
            boundary_faces,
            interior_faces,
            h,
        })
    }

    /// Uniform `nx x ny` grid of axis-aligned quadrilaterals.
    pub fn cartesian(nx: usize, ny: usize, domain: BoundingBox) -> Result<Self, MeshError> {
        if nx == 0 || ny == 0 {
            return Err(MeshError::InvalidInput("cell counts must be at least 1".into()));
        }
        let extent = domain.max - domain.min;
        if !(extent.x > 0.0 && extent.y > 0.0) {
            return Err(MeshError::InvalidInput("domain box must have positive extent".into()));
        }
        let mut coords = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                coords.push(Point::new(
                    domain.min.x + extent.x * i as f64 / nx as f64,
                    domain.min.y + extent.y * j as f64 / ny as f64,
                ));
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut loops = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                loops.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::from_polygons(coords, loops)
    }

    /// Structured triangulation of the unit square with `2 n^2` triangles.
    ///
    /// Each grid square is cut along its `(0,0)-(1,1)` diagonal. Interior
    /// vertices are then moved by at most `distortion / (4n)` per coordinate
    /// following a fixed quasi-periodic pattern of the vertex indices, so the
    /// same `(n, distortion)` always yields the same mesh. Boundary vertices
    /// stay in place.
    pub fn distorted_triangular(n: usize, distortion: f64) -> Result<Self, MeshError> {
        if n == 0 {
            return Err(MeshError::InvalidInput("n must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&distortion) {
            return Err(MeshError::InvalidInput(format!(
                "distortion must lie in [0, 1), got {distortion}"
            )));
        }
        let amplitude = distortion / (4.0 * n as f64);
        let mut coords = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                let mut p = Point::new(i as f64 / n as f64, j as f64 / n as f64);
                if i > 0 && i < n && j > 0 && j < n {
                    let (dx, dy) = distortion_pattern(i, j);
                    p += amplitude * Point::new(dx, dy);
                }
                coords.push(p);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut loops = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                loops.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                loops.push(vec![id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::from_polygons(coords, loops)
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn element(&self, t: usize) -> &Element {
        &self.elements[t]
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn boundary_faces(&self) -> &[usize] {
        &self.boundary_faces
    }

    pub fn interior_faces(&self) -> &[usize] {
        &self.interior_faces
    }

    /// Mesh size, the largest element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Total area of the elements.
    pub fn area(&self) -> f64 {
        self.elements.iter().map(|e| e.measure).sum()
    }

    pub fn element_points(&self, t: usize) -> Vec<Point> {
        self.elements[t].vertices.iter().map(|&v| self.vertices[v].coords).collect()
    }

    pub fn face_points(&self, f: usize) -> [Point; 2] {
        let [a, b] = self.faces[f].vertices;
        [self.vertices[a].coords, self.vertices[b].coords]
    }

    fn contains(&self, e: &Element, x: &Point) -> bool {
        let n = e.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[e.vertices[i]].coords;
            let b = self.vertices[e.vertices[(i + 1) % n]].coords;
            cross(&(b - a), &(x - a)) >= -1e-12 * e.diameter * e.diameter
        })
    }

    /// Index of the first element whose closure contains `x`.
    pub fn locate(&self, x: &Point) -> Option<usize> {
        self.elements.iter().position(|e| self.contains(e, x))
    }

    /// All elements whose closure contains `x`, e.g. both sides of a face.
    pub fn locate_all(&self, x: &Point) -> Vec<usize> {
        (0..self.elements.len()).filter(|&t| self.contains(&self.elements[t], x)).collect()
    }

    /// Checks every structural and geometric invariant; an empty list means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (v, vert) in self.vertices.iter().enumerate() {
            if !(vert.coords.x.is_finite() && vert.coords.y.is_finite()) {
                out.push(Violation::NonFiniteVertex { vertex: v });
            }
        }
        for (f, face) in self.faces.iter().enumerate() {
            if face.neighbors.is_empty() || face.neighbors.len() > 2 || face.normals.len() != face.neighbors.len() {
                out.push(Violation::NeighborCount {
                    face: f,
                    count: face.neighbors.len(),
                });
            }
            if !(face.measure > 0.0) {
                out.push(Violation::DegenerateFace { face: f });
            }
        }
        let mut bad_element = vec![false; self.elements.len()];
        for (t, el) in self.elements.iter().enumerate() {
            let pts = self.element_points(t);
            let area = shoelace(&pts);
            let scale = el.diameter * el.diameter;
            if !(el.measure > GEOM_TOL * scale) || (el.measure - area).abs() > GEOM_TOL * area.abs().max(scale) {
                out.push(Violation::Measure {
                    element: t,
                    measure: el.measure,
                });
                bad_element[t] = true;
                continue;
            }
            let mut normals_ok = true;
            let mut closure = Point::zeros();
            for (i, &f) in el.faces.iter().enumerate() {
                let face = &self.faces[f];
                let n = el.normals[i];
                let unit = (n.norm() - 1.0).abs() <= GEOM_TOL;
                let orthogonal = n.dot(&face.tangent).abs() <= GEOM_TOL;
                let outward = n.dot(&(face.midpoint - el.barycenter)) > 0.0;
                let stored = face.normal_for(t).is_some_and(|m| (m - n).norm() <= GEOM_TOL);
                if !(unit && orthogonal && outward && stored) {
                    out.push(Violation::NormalConsistency { element: t, face: f });
                    normals_ok = false;
                }
                if face.diameter > el.diameter * (1.0 + GEOM_TOL) {
                    out.push(Violation::FaceDiameter { element: t, face: f });
                }
                closure += face.measure * n;
            }
            if !normals_ok {
                bad_element[t] = true;
            } else if closure.norm() > GEOM_TOL * el.diameter.max(1.0) {
                out.push(Violation::Closure {
                    element: t,
                    defect: closure.norm(),
                });
            }
        }
        for &f in &self.interior_faces {
            let face = &self.faces[f];
            if face.neighbors.iter().any(|&t| bad_element[t]) {
                continue;
            }
            if (face.normals[0] + face.normals[1]).norm() > GEOM_TOL {
                out.push(Violation::NormalsNotOpposite { face: f });
            }
        }
        out
    }

    /// Reads the polygonal text format:
    ///
    /// ```text
    /// DIM 2
    /// VERTICES n
    /// x y            (n lines)
    /// ELEMENTS m
    /// count v1 .. vcount   (m lines, 0-based, counter-clockwise)
    /// ```
    ///
    /// Blank lines and lines starting with `#` are skipped.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let last_line = text.lines().count().max(1);
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| MeshError::Parse {
                line: last_line,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };

        let (ln, l) = next("DIM header")?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        if tokens != ["DIM", "2"] {
            return Err(MeshError::Parse {
                line: ln,
                msg: format!("expected `DIM 2`, found `{l}`"),
            });
        }
        let n_vertices = parse_header(next("VERTICES header")?, "VERTICES")?;
        let mut coords = Vec::with_capacity(n_vertices);
        for _ in 0..n_vertices {
            let (ln, l) = next("vertex coordinates")?;
            let xs = parse_numbers::<f64>(ln, l)?;
            if xs.len() != 2 {
                return Err(MeshError::Parse {
                    line: ln,
                    msg: format!("expected 2 coordinates, found {}", xs.len()),
                });
            }
            coords.push(Point::new(xs[0], xs[1]));
        }
        let n_elements = parse_header(next("ELEMENTS header")?, "ELEMENTS")?;
        let mut loops = Vec::with_capacity(n_elements);
        for _ in 0..n_elements {
            let (ln, l) = next("element loop")?;
            let ids = parse_numbers::<usize>(ln, l)?;
            if ids.is_empty() || ids[0] + 1 != ids.len() {
                return Err(MeshError::Parse {
                    line: ln,
                    msg: "vertex count does not match the number of indices".into(),
                });
            }
            if let Some(&v) = ids[1..].iter().find(|&&v| v >= n_vertices) {
                return Err(MeshError::Parse {
                    line: ln,
                    msg: format!("vertex index {v} out of range"),
                });
            }
            loops.push(ids[1..].to_vec());
        }
        if let Some((ln, l)) = lines.next() {
            return Err(MeshError::Parse {
                line: ln,
                msg: format!("trailing content `{l}`"),
            });
        }
        Self::from_polygons(coords, loops)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        let mut file = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "DIM 2")?;
        writeln!(out, "VERTICES {}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e}", v.coords.x, v.coords.y)?;
        }
        writeln!(out, "ELEMENTS {}", self.elements.len())?;
        for e in &self.elements {
            write!(out, "{}", e.vertices.len())?;
            for v in &e.vertices {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn parse_header((ln, l): (usize, &str), keyword: &str) -> Result<usize, MeshError> {
    let mut it = l.split_whitespace();
    match (it.next(), it.next().map(str::parse::<usize>), it.next()) {
        (Some(k), Some(Ok(n)), None) if k == keyword => Ok(n),
        _ => Err(MeshError::Parse {
            line: ln,
            msg: format!("expected `{keyword} <count>`, found `{l}`"),
        }),
    }
}

fn parse_numbers<T: std::str::FromStr>(ln: usize, l: &str) -> Result<Vec<T>, MeshError> {
    l.split_whitespace()
        .map(|tok| {
            tok.parse::<T>().map_err(|_| MeshError::Parse {
                line: ln,
                msg: format!("cannot parse `{tok}`"),
            })
        })
        .collect()
}

fn polygon_centroid(pts: &[Point], area: f64) -> Point {
    let n = pts.len();
    if area.abs() <= f64::EPSILON * pts.iter().map(|p| p.norm_squared()).sum::<f64>() {
        return pts.iter().sum::<Point>() / n as f64;
    }
    let mut c = Point::zeros();
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        c += (a + b) * cross(&a, &b);
    }
    c / (6.0 * area)
}

/// Displacement direction in `[-1, 1]^2` for grid vertex `(i, j)`.
///
/// Golden-ratio phases give an aperiodic pattern that does not vanish on the
/// grid, unlike any sinusoid whose period divides the grid spacing.
fn distortion_pattern(i: usize, j: usize) -> (f64, f64) {
    const PHI: f64 = 0.618_033_988_749_894_9;
    let (a, b) = (i as f64, j as f64);
    let tau = 2.0 * std::f64::consts::PI;
    ((tau * (PHI * a + PHI * PHI * b)).sin(), (tau * (PHI * PHI * a + PHI * b)).cos())
}
