//! Scaled monomial bases, quadrature rules and local L2-orthogonal projectors.
//!
//! Element bases use `((x - x_T) / h_T)^alpha` with `|alpha| <= l`, face bases
//! use `(((x - x_F) . t_F) / h_F)^i` with `i <= l`. Both can optionally be
//! orthonormalized through a Cholesky factor of their Gram matrix.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mesh::{Mesh, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("element {element} is not star-shaped with respect to its barycenter")]
    NotStarShaped { element: usize },
    #[error("singular or indefinite local matrix ({what})")]
    Conditioning { what: String },
}

/// Number of bivariate monomials of total degree at most `l`.
pub fn dim_element(l: usize) -> usize {
    (l + 1) * (l + 2) / 2
}

/// Number of univariate monomials of degree at most `l`.
pub fn dim_face(l: usize) -> usize {
    l + 1
}

/// Exponents `(a, b)` ordered by total degree, then by decreasing `a`.
pub fn monomial_exponents(l: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(dim_element(l));
    for deg in 0..=l as u32 {
        for b in 0..=deg {
            out.push((deg - b, b));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BasisKind {
    /// Plain scaled monomials.
    #[default]
    Monomial,
    /// Scaled monomials orthonormalized in L2 on their support.
    Orthonormal,
}

// ---------------------------------------------------------------------------
// Quadrature

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-type initial guess refined by Newton.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_and_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let prev = if n == 0 { 0.0 } else { p0 };
    let d = n as f64 * (z * p - prev) / (z * z - 1.0);
    (p, d)
}

/// Reference rule on the triangle `(0,0), (1,0), (0,1)`.
struct ReferenceTriangle {
    points: Vec<(f64, f64)>,
    weights: Vec<f64>,
}

fn reference_triangle(order: usize) -> Arc<ReferenceTriangle> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<ReferenceTriangle>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(rule) = cache.read().unwrap().get(&order) {
        return rule.clone();
    }
    // Collapsed (Duffy) product of Gauss-Legendre rules. The Jacobian adds one
    // degree in the collapsed direction.
    let n = (order + 3) / 2;
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        let u = (1.0 + x[i]) / 2.0;
        for j in 0..n {
            let v = (1.0 + x[j]) / 2.0;
            points.push((u, (1.0 - u) * v));
            weights.push(w[i] * w[j] * (1.0 - u) / 4.0);
        }
    }
    let rule = Arc::new(ReferenceTriangle { points, weights });
    cache.write().unwrap().insert(order, rule.clone());
    rule
}

/// Rule exact up to degree `order` on the triangle `a, b, c`.
pub fn triangle_quadrature(a: Point, b: Point, c: Point, order: usize) -> QuadratureRule {
    let reference = reference_triangle(order);
    let jac = ((b - a).x * (c - a).y - (b - a).y * (c - a).x).abs();
    QuadratureRule {
        points: reference.points.iter().map(|&(u, v)| a + u * (b - a) + v * (c - a)).collect(),
        weights: reference.weights.iter().map(|w| w * jac).collect(),
        exactness: order,
    }
}

/// Rule exact up to degree `order` on element `t`.
///
/// Triangles are integrated directly; other polygons are fanned into
/// sub-triangles from the barycenter, which requires star-shapedness with
/// respect to that point.
pub fn element_quadrature(mesh: &Mesh, t: usize, order: usize) -> Result<QuadratureRule, BasisError> {
    let pts = mesh.element_points(t);
    if pts.len() == 3 {
        return Ok(triangle_quadrature(pts[0], pts[1], pts[2], order));
    }
    let xt = mesh.element(t).barycenter;
    let mut rule = QuadratureRule {
        points: Vec::new(),
        weights: Vec::new(),
        exactness: order,
    };
    let n = pts.len();
    let scale = mesh.element(t).diameter.powi(2);
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        let signed = (a - xt).x * (b - xt).y - (a - xt).y * (b - xt).x;
        if !(signed > 1e-14 * scale) {
            return Err(BasisError::NotStarShaped { element: t });
        }
        let sub = triangle_quadrature(xt, a, b, order);
        rule.points.extend(sub.points);
        rule.weights.extend(sub.weights);
    }
    Ok(rule)
}

/// Gauss-Legendre rule exact up to degree `order` on face `f`.
pub fn face_quadrature(mesh: &Mesh, f: usize, order: usize) -> QuadratureRule {
    let [a, b] = mesh.face_points(f);
    segment_quadrature(a, b, order)
}

pub fn segment_quadrature(a: Point, b: Point, order: usize) -> QuadratureRule {
    let n = order / 2 + 1;
    let (x, w) = gauss_legendre(n);
    let len = (b - a).norm();
    QuadratureRule {
        points: x.iter().map(|&s| a + (1.0 + s) / 2.0 * (b - a)).collect(),
        weights: w.iter().map(|&wi| wi * len / 2.0).collect(),
        exactness: order,
    }
}

// ---------------------------------------------------------------------------
// Bases

/// Scalar polynomial basis of `P^l(T)` on a mesh element.
#[derive(Debug, Clone)]
pub struct ElementBasis {
    pub degree: usize,
    pub center: Point,
    pub scale: f64,
    exponents: Vec<(u32, u32)>,
    /// Maps monomial values to basis values when orthonormalized.
    transform: Option<DMatrix<f64>>,
}

impl ElementBasis {
    pub fn monomial(degree: usize, center: Point, scale: f64) -> Self {
        Self {
            degree,
            center,
            scale,
            exponents: monomial_exponents(degree),
            transform: None,
        }
    }

    pub fn new(mesh: &Mesh, t: usize, degree: usize, kind: BasisKind, quad: &QuadratureRule) -> Result<Self, BasisError> {
        let el = mesh.element(t);
        let mut basis = Self::monomial(degree, el.barycenter, el.diameter);
        if kind == BasisKind::Orthonormal {
            let gram = basis.gram(quad);
            basis.transform = Some(orthonormalizer(gram, "element Gram")?);
        }
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    fn monomials(&self, x: &Point) -> DVector<f64> {
        let xi = (x - self.center) / self.scale;
        let pows = powers(xi, self.degree);
        DVector::from_iterator(self.dim(), self.exponents.iter().map(|&(a, b)| pows[a as usize].0 * pows[b as usize].1))
    }

    /// Basis values at `x`.
    pub fn eval(&self, x: &Point) -> DVector<f64> {
        let m = self.monomials(x);
        match &self.transform {
            Some(t) => t * m,
            None => m,
        }
    }

    /// Basis gradients at `x`, one row per basis function.
    pub fn grad(&self, x: &Point) -> DMatrix<f64> {
        let xi = (x - self.center) / self.scale;
        let pows = powers(xi, self.degree);
        let mut g = DMatrix::zeros(self.dim(), 2);
        for (i, &(a, b)) in self.exponents.iter().enumerate() {
            if a > 0 {
                g[(i, 0)] = a as f64 * pows[a as usize - 1].0 * pows[b as usize].1 / self.scale;
            }
            if b > 0 {
                g[(i, 1)] = b as f64 * pows[a as usize].0 * pows[b as usize - 1].1 / self.scale;
            }
        }
        match &self.transform {
            Some(t) => t * g,
            None => g,
        }
    }

    pub fn gram(&self, quad: &QuadratureRule) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (x, &w) in quad.points.iter().zip(&quad.weights) {
            let phi = self.eval(x);
            m.ger(w, &phi, &phi, 1.0);
        }
        m
    }

    /// Evaluates the polynomial with coefficients `coef` at `x`.
    pub fn value(&self, coef: &[f64], x: &Point) -> f64 {
        self.eval(x).iter().zip(coef).map(|(p, c)| p * c).sum()
    }
}

/// Scalar polynomial basis of `P^l(F)` on a mesh face.
#[derive(Debug, Clone)]
pub struct FaceBasis {
    pub degree: usize,
    pub center: Point,
    pub tangent: Point,
    pub scale: f64,
    transform: Option<DMatrix<f64>>,
}

impl FaceBasis {
    pub fn new(mesh: &Mesh, f: usize, degree: usize, kind: BasisKind, quad: &QuadratureRule) -> Result<Self, BasisError> {
        let face = mesh.face(f);
        let mut basis = Self {
            degree,
            center: face.midpoint,
            tangent: face.tangent,
            scale: face.diameter,
            transform: None,
        };
        if kind == BasisKind::Orthonormal {
            let gram = basis.gram(quad);
            basis.transform = Some(orthonormalizer(gram, "face Gram")?);
        }
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.degree + 1
    }

    pub fn eval(&self, x: &Point) -> DVector<f64> {
        let s = (x - self.center).dot(&self.tangent) / self.scale;
        let mut v = DVector::zeros(self.dim());
        let mut p = 1.0;
        for i in 0..self.dim() {
            v[i] = p;
            p *= s;
        }
        match &self.transform {
            Some(t) => t * v,
            None => v,
        }
    }

    pub fn gram(&self, quad: &QuadratureRule) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (x, &w) in quad.points.iter().zip(&quad.weights) {
            let phi = self.eval(x);
            m.ger(w, &phi, &phi, 1.0);
        }
        m
    }

    pub fn value(&self, coef: &[f64], x: &Point) -> f64 {
        self.eval(x).iter().zip(coef).map(|(p, c)| p * c).sum()
    }
}

fn powers(xi: Point, degree: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(degree + 1);
    let (mut px, mut py) = (1.0, 1.0);
    for _ in 0..=degree {
        out.push((px, py));
        px *= xi.x;
        py *= xi.y;
    }
    out
}

/// `L^{-1}` for the Cholesky factor `L` of `gram`.
fn orthonormalizer(gram: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>, BasisError> {
    let n = gram.nrows();
    let chol = gram.cholesky().ok_or_else(|| BasisError::Conditioning { what: what.into() })?;
    chol.l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| BasisError::Conditioning { what: what.into() })
}

/// Solves `gram * x = rhs` through Cholesky, column by column.
pub fn spd_solve(gram: DMatrix<f64>, rhs: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>, BasisError> {
    let chol = gram.cholesky().ok_or_else(|| BasisError::Conditioning { what: what.into() })?;
    Ok(chol.solve(&rhs))
}

/// Coefficients of the L2-orthogonal projection of `f` onto the span of
/// `basis_eval`, computed with the given quadrature.
pub fn l2_project(
    f: impl Fn(&Point) -> f64,
    basis_eval: impl Fn(&Point) -> DVector<f64>,
    dim: usize,
    quad: &QuadratureRule,
) -> Result<DVector<f64>, BasisError> {
    let mut gram = DMatrix::zeros(dim, dim);
    let mut rhs = DMatrix::zeros(dim, 1);
    for (x, &w) in quad.points.iter().zip(&quad.weights) {
        let phi = basis_eval(x);
        gram.ger(w, &phi, &phi, 1.0);
        let fx = f(x);
        for i in 0..dim {
            rhs[(i, 0)] += w * fx * phi[i];
        }
    }
    let c = spd_solve(gram, rhs, "projection Gram")?;
    Ok(c.column(0).into_owned())
}

/// Projection of `f` onto `P^l(T)` in the monomial basis of element `t`.
pub fn project_on_element(
    mesh: &Mesh,
    t: usize,
    l: usize,
    order: usize,
    f: impl Fn(&Point) -> f64,
) -> Result<DVector<f64>, BasisError> {
    let quad = element_quadrature(mesh, t, order.max(2 * l))?;
    let el = mesh.element(t);
    let basis = ElementBasis::monomial(l, el.barycenter, el.diameter);
    l2_project(f, |x| basis.eval(x), basis.dim(), &quad)
}
