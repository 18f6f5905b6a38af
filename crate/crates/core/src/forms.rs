//! Discrete forms: viscous `a_h` with stabilization `s_h`, convective `c_h`,
//! pressure coupling `b_h`, the load functional and the Picard-linearized
//! local matrices.
//!
//! Gradients follow the convention `(G v)_{ij} = d_j v_i`, so that the
//! convective trilinear form `((w . grad) v) . z` reads `z . (G(v) w)`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rayon::prelude::*;

use crate::hho::{HhoSpace, HybridVelocity, BrokenPressure, LocalOperators};
use crate::laws::{CarreauYasuda, FluidLaws, LaplaceConvection};
use crate::mesh::Point;

/// Quadrature-point values of a local hybrid vector.
#[derive(Debug, Clone)]
pub struct LocalState {
    pub element: usize,
    pub u: DVector<f64>,
    pub cell: Vec<Vector2<f64>>,
    pub grad: Vec<Matrix2<f64>>,
    pub residual: Vec<Vec<Vector2<f64>>>,
}

impl LocalState {
    pub fn new(lo: &LocalOperators, u: DVector<f64>) -> Self {
        Self {
            element: lo.element,
            cell: lo.cell_at_qps(&u),
            grad: lo.gradient_at_qps(&u),
            residual: (0..lo.n_faces()).map(|f| lo.residual_at_qps(&u, f)).collect(),
            u,
        }
    }

    pub fn from_global(space: &HhoSpace, t: usize, v: &HybridVelocity) -> Self {
        Self::new(space.local(t), v.local(space, t))
    }
}

fn sym(g: &Matrix2<f64>) -> Matrix2<f64> {
    (g + g.transpose()) * 0.5
}

/// Effective viscosity `nu(|tau|)`, using `mu` where the law degenerates
/// (`tau = 0` with `delta = 0`).
pub fn effective_viscosity(law: &CarreauYasuda, tau: &Matrix2<f64>) -> f64 {
    let t = tau.norm();
    if t == 0.0 && law.delta == 0.0 {
        return law.mu;
    }
    law.viscosity_at(t)
}

/// Stabilization weight `(delta^r + |d|^r)^((r-2)/r)`, equal to 1 where it degenerates.
pub fn stabilization_weight(law: &CarreauYasuda, d: f64) -> f64 {
    if law.r == 2.0 {
        return 1.0;
    }
    let base = law.delta.powf(law.r) + d.powf(law.r);
    if base == 0.0 {
        return 1.0;
    }
    base.powf((law.r - 2.0) / law.r)
}

/// Threshold under which the `|w|^{-2}` weight of `c_h` is dropped:
/// `1e-13 (1 + max |w_h|)` over all element quadrature points.
pub fn singular_threshold(space: &HhoSpace, w: &HybridVelocity) -> f64 {
    let max = space
        .locals()
        .par_iter()
        .map(|lo| {
            lo.cell_at_qps(&w.local(space, lo.element))
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    1e-13 * (1.0 + max)
}

/// `int_T sigma(G_s w) : G_s v`.
pub fn viscous_local(lo: &LocalOperators, law: &CarreauYasuda, w: &LocalState, v: &LocalState) -> f64 {
    let mut acc = 0.0;
    for ((gw, gv), &wq) in w.grad.iter().zip(&v.grad).zip(&lo.quad.weights) {
        let tw = sym(gw);
        acc += wq * law.stress(&tw).dot(&sym(gv));
    }
    acc
}

/// Local part of `s_h` without the global prefactor.
pub fn stabilization_local(lo: &LocalOperators, law: &CarreauYasuda, w: &LocalState, v: &LocalState) -> f64 {
    let mut acc = 0.0;
    for (fl, fq) in lo.face_quads.iter().enumerate() {
        for ((dw, dv), &wq) in w.residual[fl].iter().zip(&v.residual[fl]).zip(&fq.weights) {
            acc += wq * stabilization_weight(law, dw.norm()) * dw.dot(dv);
        }
    }
    lo.h * acc
}

/// The three terms of the local convective form `c_T(w, v)`.
pub fn convective_terms_local(
    lo: &LocalOperators,
    law: &LaplaceConvection,
    w: &LocalState,
    v: &LocalState,
    eps: f64,
) -> [f64; 3] {
    let s = law.s;
    let sc = s / (s - 1.0);
    let mut t = [0.0; 3];
    if law.is_off() {
        return t;
    }
    for q in 0..lo.quad.len() {
        let wq = lo.quad.weights[q];
        let wv = w.cell[q];
        let chi = law.eval(&wv);
        let gw_chi = w.grad[q] * chi;
        t[0] += wq * v.cell[q].dot(&gw_chi) / s;
        let n2 = wv.norm_squared();
        if s != 2.0 && wv.norm() > eps {
            t[1] += wq * ((s - 2.0) / s) * (v.cell[q].dot(&wv) / n2) * wv.dot(&gw_chi);
        }
        t[2] -= wq * wv.dot(&(v.grad[q] * chi)) / sc;
    }
    t
}

fn par_sum(space: &HhoSpace, f: impl Fn(&LocalOperators) -> f64 + Sync + Send) -> f64 {
    space.locals().par_iter().map(f).sum()
}

/// `s_h(w, v)`.
pub fn stabilization_value(space: &HhoSpace, laws: &FluidLaws, w: &HybridVelocity, v: &HybridVelocity) -> f64 {
    laws.stab_factor()
        * par_sum(space, |lo| {
            let sw = LocalState::from_global(space, lo.element, w);
            let sv = LocalState::from_global(space, lo.element, v);
            stabilization_local(lo, &laws.viscous, &sw, &sv)
        })
}

/// `a_h(w, v) = int sigma(G_s w) : G_s v + s_h(w, v)`.
pub fn viscous_value(space: &HhoSpace, laws: &FluidLaws, w: &HybridVelocity, v: &HybridVelocity) -> f64 {
    par_sum(space, |lo| {
        let sw = LocalState::from_global(space, lo.element, w);
        let sv = LocalState::from_global(space, lo.element, v);
        viscous_local(lo, &laws.viscous, &sw, &sv) + laws.stab_factor() * stabilization_local(lo, &laws.viscous, &sw, &sv)
    })
}

/// The three terms of `c_h(w, v)`; their sum is the form value.
pub fn convective_terms(space: &HhoSpace, law: &LaplaceConvection, w: &HybridVelocity, v: &HybridVelocity) -> [f64; 3] {
    let eps = singular_threshold(space, w);
    space
        .locals()
        .par_iter()
        .map(|lo| {
            let sw = LocalState::from_global(space, lo.element, w);
            let sv = LocalState::from_global(space, lo.element, v);
            convective_terms_local(lo, law, &sw, &sv, eps)
        })
        .reduce(|| [0.0; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
}

/// `c_h(w, v)`.
pub fn convective_value(space: &HhoSpace, law: &LaplaceConvection, w: &HybridVelocity, v: &HybridVelocity) -> f64 {
    convective_terms(space, law, w, v).iter().sum()
}

/// `b_h(v, q) = -int D_h v q_h`, evaluated exactly from the local moments.
pub fn coupling_value(space: &HhoSpace, v: &HybridVelocity, q: &BrokenPressure) -> f64 {
    par_sum(space, |lo| {
        let vl = v.local(space, lo.element);
        let ql = DVector::from_column_slice(q.cell(lo.element));
        let mut acc = 0.0;
        for comp in 0..2 {
            acc += ql.dot(&(&lo.bmat[comp] * lo.component(&vl, comp)));
        }
        -acc
    })
}

/// Cell load vector `int_T f . v_T` in the velocity local layout.
pub fn load_local(lo: &LocalOperators, f: &(dyn Fn(&Point) -> Vector2<f64> + Sync)) -> DVector<f64> {
    let mut rhs = DVector::zeros(lo.n_velocity());
    for (q, (x, &w)) in lo.quad.points.iter().zip(&lo.quad.weights).enumerate() {
        let fx = f(x);
        for a in 0..lo.nk {
            rhs[a] += w * fx.x * lo.phi[(q, a)];
            rhs[lo.nk + a] += w * fx.y * lo.phi[(q, a)];
        }
    }
    rhs
}

/// `sum_T int_T f . v_T`.
pub fn load_value(space: &HhoSpace, f: &(dyn Fn(&Point) -> Vector2<f64> + Sync), v: &HybridVelocity) -> f64 {
    par_sum(space, |lo| load_local(lo, f).dot(&v.local(space, lo.element)))
}

/// Dense local matrices of the linearized problem.
#[derive(Debug, Clone)]
pub struct LocalMatrix {
    /// Velocity block, rows test and columns trial functions.
    pub a: DMatrix<f64>,
    /// Pressure-velocity block representing `b_h`, `N_k x n_velocity`.
    pub b: DMatrix<f64>,
}

/// Which terms enter the linearized matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linearization {
    /// Viscosity, stabilization weight and convection frozen at the state.
    Picard,
    /// Viscous part frozen at the state, convection dropped.
    NoConvection,
}

/// Scatter map from the scalar layout of component `comp` to the velocity layout.
fn colmap(lo: &LocalOperators) -> [Vec<usize>; 2] {
    [
        (0..lo.n_scalar()).map(|s| lo.vel_index(0, s)).collect(),
        (0..lo.n_scalar()).map(|s| lo.vel_index(1, s)).collect(),
    ]
}

fn scatter(a: &mut DMatrix<f64>, block: &DMatrix<f64>, rows: &[usize], cols: &[usize], scale: f64) {
    for (j, &c) in cols.iter().enumerate() {
        for (i, &r) in rows.iter().enumerate() {
            a[(r, c)] += scale * block[(i, j)];
        }
    }
}

/// `diag(d) m`.
fn row_scaled(m: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, &di) in d.iter().enumerate() {
        out.row_mut(i).scale_mut(di);
    }
    out
}

/// Matrix of the bilinear form
/// `(u, v) -> int nu_eff(G_s w) G_s u : G_s v + s^lin(w; u, v) + c^lin(w; u, v)`
/// linearized at the state `w`, together with the coupling block.
pub fn linearized_local_system(
    lo: &LocalOperators,
    laws: &FluidLaws,
    state: &LocalState,
    eps: f64,
    mode: Linearization,
) -> LocalMatrix {
    let nv = lo.n_velocity();
    let nk = lo.nk;
    let map = colmap(lo);
    let cell_rows: [Vec<usize>; 2] = [(0..nk).collect(), (nk..2 * nk).collect()];
    let mut a = DMatrix::zeros(nv, nv);

    let e = [&lo.phi * &lo.grad[0], &lo.phi * &lo.grad[1]];

    // Viscous part.
    let wnu: Vec<f64> = state
        .grad
        .iter()
        .zip(&lo.quad.weights)
        .map(|(g, &w)| w * effective_viscosity(&laws.viscous, &sym(g)))
        .collect();
    let we0 = row_scaled(&e[0], &wnu);
    let we1 = row_scaled(&e[1], &wnu);
    let p00 = e[0].tr_mul(&we0);
    let p11 = e[1].tr_mul(&we1);
    let p10 = e[1].tr_mul(&we0);
    scatter(&mut a, &p00, &map[0], &map[0], 1.0);
    scatter(&mut a, &p11, &map[0], &map[0], 0.5);
    scatter(&mut a, &p11, &map[1], &map[1], 1.0);
    scatter(&mut a, &p00, &map[1], &map[1], 0.5);
    // (G_s u)_01 = (E_1 u^0 + E_0 u^1) / 2 enters with weight 2.
    scatter(&mut a, &p10, &map[0], &map[1], 0.5);
    scatter(&mut a, &p10.transpose(), &map[1], &map[0], 0.5);

    // Stabilization.
    let stab = laws.stab_factor() * lo.h;
    for (fl, fq) in lo.face_quads.iter().enumerate() {
        let d: Vec<f64> = state.residual[fl]
            .iter()
            .zip(&fq.weights)
            .map(|(r, &w)| w * stabilization_weight(&laws.viscous, r.norm()))
            .collect();
        for res in &lo.residual[fl] {
            a.gemm_tr(stab, res, &row_scaled(res, &d), 1.0);
        }
    }

    // Convection.
    let law = &laws.convection;
    if mode == Linearization::Picard && !law.is_off() {
        let s = law.s;
        let sc = s / (s - 1.0);
        let nq = lo.quad.len();
        let chi: Vec<Vector2<f64>> = state.cell.iter().map(|w| law.eval(w)).collect();
        let c0: Vec<f64> = chi.iter().map(|c| c.x).collect();
        let c1: Vec<f64> = chi.iter().map(|c| c.y).collect();
        // Rows a_q = sum_j chi_j E_j[q, :].
        let aq = row_scaled(&e[0], &c0) + row_scaled(&e[1], &c1);
        let mut coef = [[vec![0.0; nq], vec![0.0; nq]], [vec![0.0; nq], vec![0.0; nq]]];
        for qp in 0..nq {
            let w = lo.quad.weights[qp];
            let wv = state.cell[qp];
            let beta = if s != 2.0 && wv.norm() > eps {
                ((s - 2.0) / s) / wv.norm_squared()
            } else {
                0.0
            };
            for i in 0..2 {
                for m in 0..2 {
                    let diag = if i == m { 1.0 / s } else { 0.0 };
                    coef[i][m][qp] = w * (diag + beta * wv[i] * wv[m]);
                }
            }
        }
        for i in 0..2 {
            for m in 0..2 {
                let block = lo.phi.tr_mul(&row_scaled(&aq, &coef[i][m]));
                scatter(&mut a, &block, &cell_rows[i], &map[m], 1.0);
            }
        }
        let w3: Vec<f64> = lo.quad.weights.iter().map(|w| -w / sc).collect();
        let block3 = aq.tr_mul(&row_scaled(&lo.phi, &w3));
        scatter(&mut a, &block3, &map[0], &cell_rows[0], 1.0);
        scatter(&mut a, &block3, &map[1], &cell_rows[1], 1.0);
    }

    LocalMatrix {
        a,
        b: -lo.divergence_moments(),
    }
}
