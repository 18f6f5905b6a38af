//! Discrete HHO velocity/pressure spaces, local reconstruction operators,
//! the interpolator and discrete norms.
//!
//! Local velocity vectors on an element are laid out as
//! `[cell x | cell y | face_0 x | face_0 y | face_1 x | ...]`, where the cell
//! blocks have `N_k = (k+1)(k+2)/2` entries and each face block `k+1`.
//! The gradient reconstruction acts component-wise through a scalar operator
//! on the scalar local layout `[cell | face_0 | face_1 | ...]`; the velocity
//! reconstruction and the boundary residual act on the velocity layout.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::basis::{
    dim_element, element_quadrature, face_quadrature, BasisError, BasisKind, ElementBasis, FaceBasis, QuadratureRule,
};
use crate::mesh::{Mesh, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HhoError {
    #[error("k must be ≥ 1, got {0}")]
    InvalidDegree(usize),
    #[error("element {element}: {source}")]
    Basis { element: usize, source: BasisError },
    #[error("vector size mismatch: expected {expected}, got {got}")]
    Size { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HhoConfig {
    pub k: usize,
    /// Quadrature exactness used for every element and face integral.
    /// `None` selects `2k + 4`; values below `2k + 2` are raised to it.
    pub quad_order: Option<usize>,
    pub basis: BasisKind,
    pub reconstruction: Reconstruction,
}

/// Velocity reconstruction `r_T^{k+1}` entering the boundary residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reconstruction {
    /// `(grad_s r, grad_s w)_T = (G_s v, grad_s w)_T`, closed by the mean value
    /// and the mean rotation of `G v`. Controls rigid rotations, which the
    /// symmetric viscous form does not see.
    #[default]
    Symmetric,
    /// Component-wise `(grad r, grad w)_T = (G v, grad w)_T`, closed by the
    /// mean value.
    Full,
}

impl HhoConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            quad_order: None,
            basis: BasisKind::Monomial,
            reconstruction: Reconstruction::Symmetric,
        }
    }
}

/// Reconstruction operators and cached quadrature data of one element.
#[derive(Debug, Clone)]
pub struct LocalOperators {
    pub element: usize,
    pub faces: Vec<usize>,
    pub normals: Vec<Point>,
    pub h: f64,
    pub nk: usize,
    pub nf: usize,
    pub cell_basis: ElementBasis,
    pub recon_basis: ElementBasis,
    pub quad: QuadratureRule,
    /// Cell basis values at the element quadrature points (`n_q x N_k`).
    pub phi: DMatrix<f64>,
    /// Cell basis partial derivatives at the element quadrature points.
    pub dphi: [DMatrix<f64>; 2],
    pub mass: DMatrix<f64>,
    mass_chol: Cholesky<f64, Dyn>,
    /// `B_j` with `(B_j)_{a,.} v = int_T (G v)_{.j} phi_a`, scalar layout.
    pub bmat: [DMatrix<f64>; 2],
    /// `M^{-1} B_j`: coefficients of column `j` of the gradient reconstruction.
    pub grad: [DMatrix<f64>; 2],
    /// Velocity reconstruction onto `P^{k+1}(T)^2`: coefficients of each
    /// component in `recon_basis` from the velocity layout.
    pub recon: [DMatrix<f64>; 2],
    pub face_quads: Vec<QuadratureRule>,
    /// Cell basis values at each face's quadrature points.
    pub face_phi: Vec<DMatrix<f64>>,
    /// Face basis values at each face's quadrature points.
    pub face_psi: Vec<DMatrix<f64>>,
    /// Boundary residual components at each face's quadrature points, from
    /// the velocity layout.
    pub residual: Vec<[DMatrix<f64>; 2]>,
}

impl LocalOperators {
    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Scalar local dimension `N_k + |F_T| (k+1)`.
    pub fn n_scalar(&self) -> usize {
        self.nk + self.n_faces() * self.nf
    }

    /// Velocity local dimension (two components).
    pub fn n_velocity(&self) -> usize {
        2 * self.n_scalar()
    }

    /// Position in the velocity local layout of scalar entry `s` of component `comp`.
    pub fn vel_index(&self, comp: usize, s: usize) -> usize {
        if s < self.nk {
            comp * self.nk + s
        } else {
            let f = (s - self.nk) / self.nf;
            let j = (s - self.nk) % self.nf;
            2 * self.nk + f * 2 * self.nf + comp * self.nf + j
        }
    }

    /// Extracts the scalar local vector of component `comp`.
    pub fn component(&self, v: &DVector<f64>, comp: usize) -> DVector<f64> {
        DVector::from_iterator(self.n_scalar(), (0..self.n_scalar()).map(|s| v[self.vel_index(comp, s)]))
    }

    pub fn mass_solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.mass_chol.solve(rhs)
    }

    /// Gradient reconstruction coefficients `c[i][j]` of `(G v)_{ij}` in the cell basis.
    pub fn gradient_coefficients(&self, v: &DVector<f64>) -> [[DVector<f64>; 2]; 2] {
        let v0 = self.component(v, 0);
        let v1 = self.component(v, 1);
        [[&self.grad[0] * &v0, &self.grad[1] * &v0], [&self.grad[0] * &v1, &self.grad[1] * &v1]]
    }

    /// Divergence reconstruction matrix acting on the velocity local layout.
    pub fn divergence_matrix(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nk, self.n_velocity());
        for comp in 0..2 {
            for s in 0..self.n_scalar() {
                let col = self.vel_index(comp, s);
                for a in 0..self.nk {
                    d[(a, col)] += self.grad[comp][(a, s)];
                }
            }
        }
        d
    }

    /// Moments `int_T D_T v phi_a` of the divergence reconstruction, acting on
    /// the velocity local layout.
    pub fn divergence_moments(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nk, self.n_velocity());
        for comp in 0..2 {
            for s in 0..self.n_scalar() {
                let col = self.vel_index(comp, s);
                for a in 0..self.nk {
                    d[(a, col)] += self.bmat[comp][(a, s)];
                }
            }
        }
        d
    }

    /// `G_T v` at the element quadrature points.
    pub fn gradient_at_qps(&self, v: &DVector<f64>) -> Vec<Matrix2<f64>> {
        let c = self.gradient_coefficients(v);
        let vals: Vec<Vec<DVector<f64>>> =
            c.iter().map(|row| row.iter().map(|cij| &self.phi * cij).collect()).collect();
        (0..self.quad.len())
            .map(|q| Matrix2::new(vals[0][0][q], vals[0][1][q], vals[1][0][q], vals[1][1][q]))
            .collect()
    }

    /// Cell polynomial `v_T` at the element quadrature points.
    pub fn cell_at_qps(&self, v: &DVector<f64>) -> Vec<Vector2<f64>> {
        let c0 = &self.phi * v.rows(0, self.nk);
        let c1 = &self.phi * v.rows(self.nk, self.nk);
        (0..self.quad.len()).map(|q| Vector2::new(c0[q], c1[q])).collect()
    }

    /// `grad v_T` (broken gradient of the cell unknown) at the element quadrature points.
    pub fn cell_gradient_at_qps(&self, v: &DVector<f64>) -> Vec<Matrix2<f64>> {
        let c0 = v.rows(0, self.nk);
        let c1 = v.rows(self.nk, self.nk);
        let g00 = &self.dphi[0] * c0;
        let g01 = &self.dphi[1] * c0;
        let g10 = &self.dphi[0] * c1;
        let g11 = &self.dphi[1] * c1;
        (0..self.quad.len()).map(|q| Matrix2::new(g00[q], g01[q], g10[q], g11[q])).collect()
    }

    /// Potential reconstruction coefficients per component in `recon_basis`.
    pub fn potential(&self, v: &DVector<f64>) -> [DVector<f64>; 2] {
        [&self.recon[0] * v, &self.recon[1] * v]
    }

    /// Boundary residual at the quadrature points of local face `f`.
    pub fn residual_at_qps(&self, v: &DVector<f64>, f: usize) -> Vec<Vector2<f64>> {
        let d0 = &self.residual[f][0] * v;
        let d1 = &self.residual[f][1] * v;
        (0..d0.len()).map(|q| Vector2::new(d0[q], d1[q])).collect()
    }
}

/// HHO discretization data shared by all discrete fields on a mesh.
#[derive(Debug, Clone)]
pub struct HhoSpace {
    mesh: Arc<Mesh>,
    k: usize,
    quad_order: usize,
    kind: BasisKind,
    face_bases: Vec<FaceBasis>,
    face_quads: Vec<QuadratureRule>,
    face_mass: Vec<Cholesky<f64, Dyn>>,
    locals: Vec<LocalOperators>,
}

impl HhoSpace {
    pub fn new(mesh: Arc<Mesh>, cfg: HhoConfig) -> Result<Self, HhoError> {
        let k = cfg.k;
        if k < 1 {
            return Err(HhoError::InvalidDegree(k));
        }
        let quad_order = cfg.quad_order.unwrap_or(2 * k + 4).max(2 * k + 2);
        let kind = cfg.basis;
        let recon_kind = cfg.reconstruction;

        let face_data: Vec<(FaceBasis, QuadratureRule, Cholesky<f64, Dyn>)> = (0..mesh.n_faces())
            .into_par_iter()
            .map(|f| {
                let quad = face_quadrature(&mesh, f, quad_order);
                let basis = FaceBasis::new(&mesh, f, k, kind, &quad).map_err(|e| HhoError::Basis {
                    element: mesh.face(f).neighbors[0],
                    source: e,
                })?;
                let chol = basis.gram(&quad).cholesky().ok_or(HhoError::Basis {
                    element: mesh.face(f).neighbors[0],
                    source: BasisError::Conditioning { what: "face mass".into() },
                })?;
                Ok((basis, quad, chol))
            })
            .collect::<Result<_, HhoError>>()?;
        let mut face_bases = Vec::with_capacity(face_data.len());
        let mut face_quads = Vec::with_capacity(face_data.len());
        let mut face_mass = Vec::with_capacity(face_data.len());
        for (b, q, c) in face_data {
            face_bases.push(b);
            face_quads.push(q);
            face_mass.push(c);
        }

        let locals = (0..mesh.n_elements())
            .into_par_iter()
            .map(|t| {
                build_local(&mesh, t, k, quad_order, kind, recon_kind, &face_bases, &face_quads, &face_mass)
                    .map_err(|source| HhoError::Basis { element: t, source })
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            mesh,
            k,
            quad_order,
            kind,
            face_bases,
            face_quads,
            face_mass,
            locals,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn basis_kind(&self) -> BasisKind {
        self.kind
    }

    /// Scalar cell dimension `N_k`.
    pub fn nk(&self) -> usize {
        dim_element(self.k)
    }

    /// Scalar face dimension `k + 1`.
    pub fn nf(&self) -> usize {
        self.k + 1
    }

    pub fn local(&self, t: usize) -> &LocalOperators {
        &self.locals[t]
    }

    pub fn locals(&self) -> &[LocalOperators] {
        &self.locals
    }

    pub fn face_basis(&self, f: usize) -> &FaceBasis {
        &self.face_bases[f]
    }

    pub fn face_quad(&self, f: usize) -> &QuadratureRule {
        &self.face_quads[f]
    }

    /// Coefficients of the L2 projection of `u` onto `P^k(F)^2`.
    pub fn project_face(&self, f: usize, u: &dyn Fn(&Point) -> Vector2<f64>) -> [DVector<f64>; 2] {
        let quad = &self.face_quads[f];
        let basis = &self.face_bases[f];
        let mut rhs = [DVector::zeros(self.nf()), DVector::zeros(self.nf())];
        for (x, &w) in quad.points.iter().zip(&quad.weights) {
            let psi = basis.eval(x);
            let val = u(x);
            rhs[0].axpy(w * val.x, &psi, 1.0);
            rhs[1].axpy(w * val.y, &psi, 1.0);
        }
        [self.face_mass[f].solve(&rhs[0]), self.face_mass[f].solve(&rhs[1])]
    }

    /// Coefficients of the L2 projection of the scalar `f` onto `P^k(T)`.
    pub fn project_cell_scalar(&self, t: usize, f: &dyn Fn(&Point) -> f64) -> DVector<f64> {
        let lo = &self.locals[t];
        let mut rhs = DVector::zeros(lo.nk);
        for (q, &w) in lo.quad.weights.iter().enumerate() {
            let fx = f(&lo.quad.points[q]);
            for a in 0..lo.nk {
                rhs[a] += w * fx * lo.phi[(q, a)];
            }
        }
        lo.mass_solve(&rhs)
    }

    /// The interpolator `I_h^k`.
    pub fn interpolate(&self, u: &(dyn Fn(&Point) -> Vector2<f64> + Sync)) -> HybridVelocity {
        let mut v = HybridVelocity::zeros(self);
        let cells: Vec<[DVector<f64>; 2]> = (0..self.mesh.n_elements())
            .into_par_iter()
            .map(|t| {
                [
                    self.project_cell_scalar(t, &|x| u(x).x),
                    self.project_cell_scalar(t, &|x| u(x).y),
                ]
            })
            .collect();
        for (t, c) in cells.iter().enumerate() {
            v.cell_mut(t, 0).copy_from_slice(c[0].as_slice());
            v.cell_mut(t, 1).copy_from_slice(c[1].as_slice());
        }
        let faces: Vec<[DVector<f64>; 2]> =
            (0..self.mesh.n_faces()).into_par_iter().map(|f| self.project_face(f, u)).collect();
        for (f, c) in faces.iter().enumerate() {
            v.face_mut(f, 0).copy_from_slice(c[0].as_slice());
            v.face_mut(f, 1).copy_from_slice(c[1].as_slice());
        }
        v
    }

    /// The broken projector `pi_h^k` applied to a scalar field.
    pub fn project_pressure(&self, p: &(dyn Fn(&Point) -> f64 + Sync)) -> BrokenPressure {
        let cells: Vec<DVector<f64>> =
            (0..self.mesh.n_elements()).into_par_iter().map(|t| self.project_cell_scalar(t, &p)).collect();
        let mut coefs = Vec::with_capacity(cells.len() * self.nk());
        for c in cells {
            coefs.extend(c.iter());
        }
        BrokenPressure { nk: self.nk(), coefs }
    }

    /// `(sum_T ||grad_s v_T||^m + sum_F h_F^(1-m) ||v_F - v_T||^m_F)^(1/m)`.
    pub fn norm_eps(&self, v: &HybridVelocity, m: f64) -> f64 {
        self.discrete_norm(v, m, true)
    }

    /// Same as [`Self::norm_eps`] with the full gradient.
    pub fn norm_1(&self, v: &HybridVelocity, m: f64) -> f64 {
        self.discrete_norm(v, m, false)
    }

    fn discrete_norm(&self, v: &HybridVelocity, m: f64, sym: bool) -> f64 {
        let total: f64 = self
            .locals
            .par_iter()
            .map(|lo| {
                let vl = v.local(self, lo.element);
                let grads = lo.cell_gradient_at_qps(&vl);
                let mut acc = 0.0;
                for (g, &w) in grads.iter().zip(&lo.quad.weights) {
                    let g = if sym { (g + g.transpose()) * 0.5 } else { *g };
                    acc += w * g.norm().powf(m);
                }
                for (fl, &f) in lo.faces.iter().enumerate() {
                    let hf = self.mesh.face(f).diameter;
                    let jump = face_jump_at_qps(lo, &vl, fl);
                    let fq = &lo.face_quads[fl];
                    let s: f64 = jump.iter().zip(&fq.weights).map(|(j, w)| w * j.norm().powf(m)).sum();
                    acc += hf.powf(1.0 - m) * s;
                }
                acc
            })
            .sum();
        total.powf(1.0 / m)
    }

    /// `(sum_T h_T ||delta_dT v||^m_{L^m(dT)})^(1/m)`.
    pub fn seminorm_residual(&self, v: &HybridVelocity, m: f64) -> f64 {
        let total: f64 = self
            .locals
            .par_iter()
            .map(|lo| {
                let vl = v.local(self, lo.element);
                let mut acc = 0.0;
                for fl in 0..lo.n_faces() {
                    let d = lo.residual_at_qps(&vl, fl);
                    acc += d.iter().zip(&lo.face_quads[fl].weights).map(|(d, w)| w * d.norm().powf(m)).sum::<f64>();
                }
                lo.h * acc
            })
            .sum();
        total.powf(1.0 / m)
    }

    /// `||G_h v||_{L^m}`.
    pub fn gradient_norm(&self, v: &HybridVelocity, m: f64) -> f64 {
        let total: f64 = self
            .locals
            .par_iter()
            .map(|lo| {
                let g = lo.gradient_at_qps(&v.local(self, lo.element));
                g.iter().zip(&lo.quad.weights).map(|(g, w)| w * g.norm().powf(m)).sum::<f64>()
            })
            .sum();
        total.powf(1.0 / m)
    }
}

/// `v_F - v_T` at the quadrature points of local face `fl`.
pub fn face_jump_at_qps(lo: &LocalOperators, vl: &DVector<f64>, fl: usize) -> Vec<Vector2<f64>> {
    let off = 2 * lo.nk + fl * 2 * lo.nf;
    let f0 = &lo.face_psi[fl] * vl.rows(off, lo.nf);
    let f1 = &lo.face_psi[fl] * vl.rows(off + lo.nf, lo.nf);
    let c0 = &lo.face_phi[fl] * vl.rows(0, lo.nk);
    let c1 = &lo.face_phi[fl] * vl.rows(lo.nk, lo.nk);
    (0..f0.len()).map(|q| Vector2::new(f0[q] - c0[q], f1[q] - c1[q])).collect()
}

#[allow(clippy::too_many_arguments)]
fn build_local(
    mesh: &Mesh,
    t: usize,
    k: usize,
    quad_order: usize,
    kind: BasisKind,
    recon_kind: Reconstruction,
    face_bases: &[FaceBasis],
    face_quads: &[QuadratureRule],
    face_mass: &[Cholesky<f64, Dyn>],
) -> Result<LocalOperators, BasisError> {
    let el = mesh.element(t);
    let quad = element_quadrature(mesh, t, quad_order)?;
    let cell_basis = ElementBasis::new(mesh, t, k, kind, &quad)?;
    let recon_basis = ElementBasis::new(mesh, t, k + 1, kind, &quad)?;
    let nk = cell_basis.dim();
    let nr = recon_basis.dim();
    let nf = k + 1;
    let nfaces = el.faces.len();
    let ns = nk + nfaces * nf;
    let nq = quad.len();

    let mut phi = DMatrix::zeros(nq, nk);
    let mut dphi = [DMatrix::zeros(nq, nk), DMatrix::zeros(nq, nk)];
    let mut mass = DMatrix::zeros(nk, nk);
    let mut bmat = [DMatrix::zeros(nk, ns), DMatrix::zeros(nk, ns)];
    let mut stiff = DMatrix::zeros(nr, nr);
    let mut rhs = DMatrix::zeros(nr, ns);
    // int_T phi^{k} phi^{k+1}, used for the cell projection of the reconstruction.
    let mut mixed = DMatrix::zeros(nk, nr);
    let mut cell_mean = DVector::zeros(nk);
    let mut recon_mean = DVector::zeros(nr);
    // int_T d_j phi^{k+1}
    let mut recon_dmean = [DVector::zeros(nr), DVector::zeros(nr)];
    // int_T d_j phi^{k+1}_b phi^{k}_a, for the symmetric reconstruction.
    let mut dmixed = [DMatrix::zeros(nr, nk), DMatrix::zeros(nr, nk)];
    // int_T d_i phi^{k+1}_a d_j phi^{k+1}_b
    let mut gg = [[DMatrix::zeros(nr, nr), DMatrix::zeros(nr, nr)], [DMatrix::zeros(nr, nr), DMatrix::zeros(nr, nr)]];

    for (q, (x, &w)) in quad.points.iter().zip(&quad.weights).enumerate() {
        let p = cell_basis.eval(x);
        let g = cell_basis.grad(x);
        let pr = recon_basis.eval(x);
        let gr = recon_basis.grad(x);
        phi.row_mut(q).copy_from(&p.transpose());
        dphi[0].row_mut(q).copy_from(&g.column(0).transpose());
        dphi[1].row_mut(q).copy_from(&g.column(1).transpose());
        mass.ger(w, &p, &p, 1.0);
        for j in 0..2 {
            // int_T d_j phi_b phi_a
            let mut block = bmat[j].columns_mut(0, nk);
            block.ger(w, &p, &g.column(j), 1.0);
        }
        stiff.gemm(w, &gr, &gr.transpose(), 1.0);
        {
            let mut block = rhs.columns_mut(0, nk);
            block.gemm(w, &gr, &g.transpose(), 1.0);
        }
        mixed.ger(w, &p, &pr, 1.0);
        cell_mean.axpy(w, &p, 1.0);
        recon_mean.axpy(w, &pr, 1.0);
        for i in 0..2 {
            recon_dmean[i].axpy(w, &gr.column(i), 1.0);
            dmixed[i].ger(w, &gr.column(i), &p, 1.0);
            for j in 0..2 {
                gg[i][j].ger(w, &gr.column(i), &gr.column(j), 1.0);
            }
        }
    }

    let mut normals = Vec::with_capacity(nfaces);
    let mut fq_list = Vec::with_capacity(nfaces);
    let mut face_phi = Vec::with_capacity(nfaces);
    let mut face_psi = Vec::with_capacity(nfaces);
    let mut face_phi_r = Vec::with_capacity(nfaces);
    for (fl, &f) in el.faces.iter().enumerate() {
        let n = el.normals[fl];
        normals.push(n);
        let fq = face_quads[f].clone();
        let fb = &face_bases[f];
        let nqf = fq.len();
        let mut fphi = DMatrix::zeros(nqf, nk);
        let mut fpsi = DMatrix::zeros(nqf, nf);
        let mut fphir = DMatrix::zeros(nqf, nr);
        let col = nk + fl * nf;
        for (q, (x, &w)) in fq.points.iter().zip(&fq.weights).enumerate() {
            let p = cell_basis.eval(x);
            let psi = fb.eval(x);
            let pr = recon_basis.eval(x);
            let gr = recon_basis.grad(x);
            let gn = &gr * n;
            fphi.row_mut(q).copy_from(&p.transpose());
            fpsi.row_mut(q).copy_from(&psi.transpose());
            fphir.row_mut(q).copy_from(&pr.transpose());
            for j in 0..2 {
                // face dofs: n_j int_F psi_c phi_a ; cell dofs: -n_j int_F phi_b phi_a
                bmat[j].columns_mut(col, nf).ger(w * n[j], &p, &psi, 1.0);
                bmat[j].columns_mut(0, nk).ger(-w * n[j], &p, &p, 1.0);
            }
            rhs.columns_mut(col, nf).ger(w, &gn, &psi, 1.0);
            rhs.columns_mut(0, nk).ger(-w, &gn, &p, 1.0);
        }
        fq_list.push(fq);
        face_phi.push(fphi);
        face_psi.push(fpsi);
        face_phi_r.push(fphir);
    }

    let mass_chol = mass.clone().cholesky().ok_or(BasisError::Conditioning {
        what: format!("cell mass of element {t}"),
    })?;
    let grad = [mass_chol.solve(&bmat[0]), mass_chol.solve(&bmat[1])];

    let nv = 2 * ns;
    // Position in the velocity layout of scalar entry `s` of component `comp`.
    let vidx = |comp: usize, s: usize| {
        if s < nk {
            comp * nk + s
        } else {
            let f = (s - nk) / nf;
            2 * nk + f * 2 * nf + comp * nf + (s - nk) % nf
        }
    };
    let recon = match recon_kind {
        Reconstruction::Full => {
            let scalar = full_reconstruction(&stiff, &rhs, &cell_mean, &recon_mean, t)?;
            let mut out = [DMatrix::zeros(nr, nv), DMatrix::zeros(nr, nv)];
            for (comp, r) in out.iter_mut().enumerate() {
                for s in 0..ns {
                    r.column_mut(vidx(comp, s)).copy_from(&scalar.column(s));
                }
            }
            out
        }
        Reconstruction::Symmetric => {
            let sym = SymmetricData { gg: &gg, dmixed: &dmixed, grad: &grad, cell_mean: &cell_mean, recon_mean: &recon_mean, recon_dmean: &recon_dmean };
            symmetric_reconstruction(&sym, &vidx, nv, t)?
        }
    };

    // Boundary residual at face quadrature points.
    let proj_t = mass_chol.solve(&mixed);
    let mut residual = Vec::with_capacity(nfaces);
    for (fl, &f) in el.faces.iter().enumerate() {
        let fq = &fq_list[fl];
        // int_F psi phi^{k+1}
        let mut fmix = DMatrix::zeros(nf, nr);
        for (q, &w) in fq.weights.iter().enumerate() {
            fmix.ger(w, &face_psi[fl].row(q).transpose(), &face_phi_r[fl].row(q).transpose(), 1.0);
        }
        let proj_f = face_mass[f].solve(&fmix);
        let mut comps = [DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)];
        for (comp, out) in comps.iter_mut().enumerate() {
            let mut c_t = &proj_t * &recon[comp];
            for a in 0..nk {
                c_t[(a, vidx(comp, a))] -= 1.0;
            }
            let mut c_f = &proj_f * &recon[comp];
            for j in 0..nf {
                c_f[(j, vidx(comp, nk + fl * nf + j))] -= 1.0;
            }
            *out = (&face_psi[fl] * c_f - &face_phi[fl] * &c_t) / el.diameter;
        }
        residual.push(comps);
    }

    Ok(LocalOperators {
        element: t,
        faces: el.faces.clone(),
        normals,
        h: el.diameter,
        nk,
        nf,
        cell_basis,
        recon_basis,
        quad,
        phi,
        dphi,
        mass,
        mass_chol,
        bmat,
        grad,
        recon,
        face_quads: fq_list,
        face_phi,
        face_psi,
        residual,
    })
}

/// Scalar potential reconstruction: solve on the non-constant modes, then
/// fix the constant mode through the mean-value closure.
fn full_reconstruction(
    stiff: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    cell_mean: &DVector<f64>,
    recon_mean: &DVector<f64>,
    t: usize,
) -> Result<DMatrix<f64>, BasisError> {
    let (nr, ns) = rhs.shape();
    let nk = cell_mean.len();
    let mut recon = DMatrix::zeros(nr, ns);
    let sub = stiff.view((1, 1), (nr - 1, nr - 1)).into_owned();
    let sub_rhs = rhs.rows(1, nr - 1).into_owned();
    let chol = sub.cholesky().ok_or(BasisError::Conditioning {
        what: format!("reconstruction stiffness of element {t}"),
    })?;
    let sol = chol.solve(&sub_rhs);
    recon.rows_mut(1, nr - 1).copy_from(&sol);
    for s in 0..ns {
        let mut target = if s < nk { cell_mean[s] } else { 0.0 };
        for a in 1..nr {
            target -= recon_mean[a] * recon[(a, s)];
        }
        recon[(0, s)] = target / recon_mean[0];
    }
    Ok(recon)
}

struct SymmetricData<'a> {
    gg: &'a [[DMatrix<f64>; 2]; 2],
    dmixed: &'a [DMatrix<f64>; 2],
    grad: &'a [DMatrix<f64>; 2],
    cell_mean: &'a DVector<f64>,
    recon_mean: &'a DVector<f64>,
    recon_dmean: &'a [DVector<f64>; 2],
}

/// Elasticity-style reconstruction. Unknowns `[r_0 | r_1]` in the
/// `P^{k+1}` basis; the rigid motions in the kernel of `grad_s` are fixed by
/// `int_T r = int_T v_T` and `int_T rot r = int_T ((G v)_10 - (G v)_01)`,
/// imposed with multipliers.
fn symmetric_reconstruction(
    d: &SymmetricData,
    vidx: &dyn Fn(usize, usize) -> usize,
    nv: usize,
    t: usize,
) -> Result<[DMatrix<f64>; 2], BasisError> {
    let nr = d.recon_mean.len();
    let nk = d.cell_mean.len();
    let ns = d.grad[0].ncols();
    let n = 2 * nr + 3;
    // int_T grad_s(psi_a e_i) : grad_s(psi_b e_m)
    //   = (delta_im sum_j int d_j psi_a d_j psi_b + int d_m psi_a d_i psi_b) / 2
    let mut sys = DMatrix::zeros(n, n);
    for i in 0..2 {
        for m in 0..2 {
            let mut block = d.gg[m][i].clone();
            if i == m {
                block += &d.gg[0][0] + &d.gg[1][1];
            }
            sys.view_mut((i * nr, m * nr), (nr, nr)).copy_from(&(block * 0.5));
        }
    }
    // Closure rows: mean of each component, mean rotation d_0 r_1 - d_1 r_0.
    for a in 0..nr {
        let rows = [
            (2 * nr, a, d.recon_mean[a]),
            (2 * nr + 1, nr + a, d.recon_mean[a]),
            (2 * nr + 2, nr + a, d.recon_dmean[0][a]),
            (2 * nr + 2, a, -d.recon_dmean[1][a]),
        ];
        for (r, c, v) in rows {
            sys[(r, c)] = v;
            sys[(c, r)] = v;
        }
    }
    // Right-hand side: int_T G v : grad_s(psi_b e_i)
    //   = sum_j int_T ((G v)_ij + (G v)_ji) d_j psi_b / 2, with
    // (G v)_ij = sum_a grad[j][a, .] v_i phi_a.
    let mut rhs = DMatrix::zeros(n, nv);
    for i in 0..2 {
        for j in 0..2 {
            // (G v)_ij and (G v)_ji as maps from the velocity layout to P^k coefficients.
            for (comp, col) in [(i, j), (j, i)] {
                let proj = &d.dmixed[j] * &d.grad[col];
                for s in 0..ns {
                    let c = vidx(comp, s);
                    let mut dst = rhs.view_mut((i * nr, c), (nr, 1));
                    dst += proj.column(s) * 0.5;
                }
            }
        }
    }
    for a in 0..nk {
        rhs[(2 * nr, vidx(0, a))] += d.cell_mean[a];
        rhs[(2 * nr + 1, vidx(1, a))] += d.cell_mean[a];
    }
    // int_T (G v)_10 - (G v)_01 = sum_a mean_a (grad[0] v_1 - grad[1] v_0)_a
    let rot0 = d.grad[0].tr_mul(d.cell_mean);
    let rot1 = d.grad[1].tr_mul(d.cell_mean);
    for s in 0..ns {
        rhs[(2 * nr + 2, vidx(1, s))] += rot0[s];
        rhs[(2 * nr + 2, vidx(0, s))] -= rot1[s];
    }
    let sol = sys.lu().solve(&rhs).ok_or(BasisError::Conditioning {
        what: format!("symmetric reconstruction of element {t}"),
    })?;
    Ok([sol.rows(0, nr).into_owned(), sol.rows(nr, nr).into_owned()])
}

/// HHO velocity: cell coefficients in `P^k(T)^2` and face coefficients in `P^k(F)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridVelocity {
    nk: usize,
    nf: usize,
    cells: Vec<f64>,
    faces: Vec<f64>,
}

impl HybridVelocity {
    pub fn zeros(space: &HhoSpace) -> Self {
        Self {
            nk: space.nk(),
            nf: space.nf(),
            cells: vec![0.0; 2 * space.nk() * space.mesh().n_elements()],
            faces: vec![0.0; 2 * space.nf() * space.mesh().n_faces()],
        }
    }

    pub fn n_elements(&self) -> usize {
        self.cells.len() / (2 * self.nk)
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len() / (2 * self.nf)
    }

    pub fn cell(&self, t: usize, comp: usize) -> &[f64] {
        let o = (2 * t + comp) * self.nk;
        &self.cells[o..o + self.nk]
    }

    pub fn cell_mut(&mut self, t: usize, comp: usize) -> &mut [f64] {
        let o = (2 * t + comp) * self.nk;
        &mut self.cells[o..o + self.nk]
    }

    pub fn face(&self, f: usize, comp: usize) -> &[f64] {
        let o = (2 * f + comp) * self.nf;
        &self.faces[o..o + self.nf]
    }

    pub fn face_mut(&mut self, f: usize, comp: usize) -> &mut [f64] {
        let o = (2 * f + comp) * self.nf;
        &mut self.faces[o..o + self.nf]
    }

    pub fn cells_raw(&self) -> &[f64] {
        &self.cells
    }

    pub fn faces_raw(&self) -> &[f64] {
        &self.faces
    }

    pub fn cells_raw_mut(&mut self) -> &mut [f64] {
        &mut self.cells
    }

    pub fn faces_raw_mut(&mut self) -> &mut [f64] {
        &mut self.faces
    }

    /// Restriction to element `t` in the velocity local layout.
    pub fn local(&self, space: &HhoSpace, t: usize) -> DVector<f64> {
        let lo = space.local(t);
        let mut v = DVector::zeros(lo.n_velocity());
        v.rows_mut(0, self.nk).copy_from_slice(self.cell(t, 0));
        v.rows_mut(self.nk, self.nk).copy_from_slice(self.cell(t, 1));
        for (fl, &f) in lo.faces.iter().enumerate() {
            let off = 2 * self.nk + fl * 2 * self.nf;
            v.rows_mut(off, self.nf).copy_from_slice(self.face(f, 0));
            v.rows_mut(off + self.nf, self.nf).copy_from_slice(self.face(f, 1));
        }
        v
    }

    /// Value of the cell polynomial of element `t` at `x`.
    pub fn cell_value(&self, space: &HhoSpace, t: usize, x: &Point) -> Vector2<f64> {
        let b = &space.local(t).cell_basis;
        Vector2::new(b.value(self.cell(t, 0), x), b.value(self.cell(t, 1), x))
    }

    /// Mean value of the cell polynomial of element `t`.
    pub fn cell_mean(&self, space: &HhoSpace, t: usize) -> Vector2<f64> {
        let lo = space.local(t);
        let mut acc = Vector2::zeros();
        for (q, &w) in lo.quad.weights.iter().enumerate() {
            let row = lo.phi.row(q);
            let v0: f64 = row.iter().zip(self.cell(t, 0)).map(|(a, b)| a * b).sum();
            let v1: f64 = row.iter().zip(self.cell(t, 1)).map(|(a, b)| a * b).sum();
            acc += w * Vector2::new(v0, v1);
        }
        acc / space.mesh().element(t).measure
    }

    /// `true` when all boundary face blocks vanish.
    pub fn is_zero_on_boundary(&self, space: &HhoSpace) -> bool {
        space
            .mesh()
            .boundary_faces()
            .iter()
            .all(|&f| self.face(f, 0).iter().chain(self.face(f, 1)).all(|&c| c == 0.0))
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self.cells.iter_mut().zip(&other.cells) {
            *x += a * y;
        }
        for (x, y) in self.faces.iter_mut().zip(&other.faces) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.cells.iter_mut().chain(self.faces.iter_mut()).for_each(|x| *x *= a);
    }
}

/// Broken pressure in `P^k(T_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokenPressure {
    nk: usize,
    coefs: Vec<f64>,
}

impl BrokenPressure {
    pub fn zeros(space: &HhoSpace) -> Self {
        Self {
            nk: space.nk(),
            coefs: vec![0.0; space.nk() * space.mesh().n_elements()],
        }
    }

    pub fn cell(&self, t: usize) -> &[f64] {
        &self.coefs[t * self.nk..(t + 1) * self.nk]
    }

    pub fn cell_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.coefs[t * self.nk..(t + 1) * self.nk]
    }

    pub fn raw(&self) -> &[f64] {
        &self.coefs
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.coefs
    }

    pub fn value(&self, space: &HhoSpace, t: usize, x: &Point) -> f64 {
        space.local(t).cell_basis.value(self.cell(t), x)
    }

    /// `int_Omega q_h`.
    pub fn integral(&self, space: &HhoSpace) -> f64 {
        space
            .locals()
            .iter()
            .map(|lo| {
                let v = &lo.phi * DVector::from_column_slice(self.cell(lo.element));
                v.iter().zip(&lo.quad.weights).map(|(a, w)| a * w).sum::<f64>()
            })
            .sum()
    }

    /// Whether `int_Omega q_h` vanishes up to `tol * |Omega|`.
    pub fn is_zero_mean(&self, space: &HhoSpace, tol: f64) -> bool {
        self.integral(space).abs() <= tol * space.mesh().area()
    }

    /// Subtracts the mean value so that the field belongs to `P_h^k`.
    pub fn remove_mean(&mut self, space: &HhoSpace) {
        let mean = self.integral(space) / space.mesh().area();
        // The constant function has coefficients equal to the projection of 1.
        for t in 0..space.mesh().n_elements() {
            let one = space.project_cell_scalar(t, &|_| 1.0);
            for (c, o) in self.cell_mut(t).iter_mut().zip(one.iter()) {
                *c -= mean * o;
            }
        }
    }

    /// `||q_h||_{L^m}`.
    pub fn norm(&self, space: &HhoSpace, m: f64) -> f64 {
        let total: f64 = space
            .locals()
            .iter()
            .map(|lo| {
                let v = &lo.phi * DVector::from_column_slice(self.cell(lo.element));
                v.iter().zip(&lo.quad.weights).map(|(a, w)| w * a.abs().powf(m)).sum::<f64>()
            })
            .sum();
        total.powf(1.0 / m)
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self.coefs.iter_mut().zip(&other.coefs) {
            *x += a * y;
        }
    }
}
