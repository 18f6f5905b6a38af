//! Global DOF layout, Dirichlet data, assembly with optional static
//! condensation of cell velocities, sparse direct solves and the Picard loop.
//!
//! Global unknowns are ordered as
//! `[interior face velocities | cell velocities (uncondensed only) | pressures | multiplier]`.
//! The multiplier enforces the zero-mean pressure constraint.

use std::time::Instant;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::forms::{linearized_local_system, load_local, singular_threshold, LocalMatrix, LocalState, Linearization};
use crate::hho::{BrokenPressure, HhoSpace, HybridVelocity, LocalOperators};
use crate::laws::{condition_report, FluidLaws};
use crate::mesh::{Mesh, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("k must be ≥ 1, got {0}")]
    InvalidDegree(usize),
    #[error("singular cell block in static condensation on element {element}")]
    Condensation { element: usize },
    #[error("linear solver failure: {0}")]
    LinearSolver(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

/// Offsets of the global unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemLayout {
    pub k: usize,
    pub nk: usize,
    pub nf: usize,
    pub condensed: bool,
    /// Start of the `2(k+1)` velocity unknowns of each interior face.
    pub face_offset: Vec<Option<usize>>,
    pub n_face_dofs: usize,
    /// Start of the cell velocity block when uncondensed.
    pub cell_offset: Option<usize>,
    pub pressure_offset: usize,
    pub multiplier: usize,
    pub n_dofs: usize,
}

impl SystemLayout {
    pub fn n_cell_dofs(&self) -> usize {
        if self.cell_offset.is_some() {
            self.pressure_offset - self.n_face_dofs
        } else {
            0
        }
    }

    pub fn n_pressure_dofs(&self) -> usize {
        self.multiplier - self.pressure_offset
    }

    pub fn cell_index(&self, t: usize) -> Option<usize> {
        self.cell_offset.map(|o| o + 2 * self.nk * t)
    }

    pub fn pressure_index(&self, t: usize) -> usize {
        self.pressure_offset + self.nk * t
    }
}

pub fn build_layout(mesh: &Mesh, k: usize, condense: bool) -> Result<SystemLayout, SolverError> {
    if k < 1 {
        return Err(SolverError::InvalidDegree(k));
    }
    let nk = (k + 1) * (k + 2) / 2;
    let nf = k + 1;
    let mut face_offset = vec![None; mesh.n_faces()];
    let mut next = 0;
    for &f in mesh.interior_faces() {
        face_offset[f] = Some(next);
        next += 2 * nf;
    }
    let n_face_dofs = next;
    let cell_offset = if condense {
        None
    } else {
        let o = next;
        next += 2 * nk * mesh.n_elements();
        Some(o)
    };
    let pressure_offset = next;
    next += nk * mesh.n_elements();
    Ok(SystemLayout {
        k,
        nk,
        nf,
        condensed: condense,
        face_offset,
        n_face_dofs,
        cell_offset,
        pressure_offset,
        multiplier: next,
        n_dofs: next + 1,
    })
}

/// Boundary face coefficients `Pi_F^k g`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryValues {
    pub faces: Vec<usize>,
    pub coefs: Vec<[DVector<f64>; 2]>,
}

impl BoundaryValues {
    pub fn apply_to(&self, v: &mut HybridVelocity) {
        for (&f, c) in self.faces.iter().zip(&self.coefs) {
            v.face_mut(f, 0).copy_from_slice(c[0].as_slice());
            v.face_mut(f, 1).copy_from_slice(c[1].as_slice());
        }
    }
}

pub fn apply_dirichlet(space: &HhoSpace, g: &(dyn Fn(&Point) -> Vector2<f64> + Sync)) -> BoundaryValues {
    let faces = space.mesh().boundary_faces().to_vec();
    let coefs = faces.par_iter().map(|&f| space.project_face(f, g)).collect();
    BoundaryValues { faces, coefs }
}

/// Sparse direct solver interface.
pub trait LinearSolver: Sync {
    fn solve(&self, n: usize, entries: &[(usize, usize, f64)], rhs: &[f64]) -> Result<Vec<f64>, SolverError>;
}

/// Sparse LU with partial pivoting.
#[derive(Debug, Clone, Copy, Default)]
pub struct SparseLu;

impl LinearSolver for SparseLu {
    fn solve(&self, n: usize, entries: &[(usize, usize, f64)], rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        let triplets: Vec<Triplet<usize, usize, f64>> =
            entries.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| SolverError::LinearSolver(format!("{e:?}")))?;
        let lu = mat.sp_lu().map_err(|e| SolverError::LinearSolver(format!("{e:?}")))?;
        let b = Col::<f64>::from_fn(n, |i| rhs[i]);
        let x = lu.solve(&b);
        let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::LinearSolver("non-finite solution (singular matrix)".into()));
        }
        Ok(out)
    }
}

/// Assembled sparse system and the data needed to recover cell unknowns.
///
/// `entries` hold the saddle-point matrix without the multiplier row and
/// column, which is singular along the constant pressure mode `kernel`; the
/// bordering is described by `constraint`, the pressure moments `int phi_a`.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub pressure_offset: usize,
    pub multiplier: usize,
    pub constraint: Vec<f64>,
    /// Coefficients of the constant 1 in the pressure space.
    pub kernel: Vec<f64>,
    recovery: Vec<Option<CellRecovery>>,
}

impl AssembledSystem {
    /// Entries of the full bordered matrix.
    pub fn bordered_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = self.entries.clone();
        for (a, &m) in self.constraint.iter().enumerate() {
            out.push((self.pressure_offset + a, self.multiplier, m));
            out.push((self.multiplier, self.pressure_offset + a, m));
        }
        out
    }
}

/// Solves the bordered system without factoring the dense multiplier row.
///
/// Testing with the constant pressure mode `e` gives `lambda = e.b / |Omega|`.
/// The remaining system is compatible and is solved with one pressure unknown
/// pinned, after which the pressure is shifted to zero mean.
pub fn solve_system(sys: &AssembledSystem, solver: &dyn LinearSolver) -> Result<Vec<f64>, SolverError> {
    let po = sys.pressure_offset;
    let area: f64 = sys.kernel.iter().zip(&sys.constraint).map(|(e, m)| e * m).sum();
    let eb: f64 = sys.kernel.iter().zip(&sys.rhs[po..]).map(|(e, b)| e * b).sum();
    let lambda = eb / area;
    let pin = po
        + sys
            .kernel
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .ok_or_else(|| SolverError::Config("empty pressure space".into()))?;
    let mut entries: Vec<(usize, usize, f64)> =
        sys.entries.iter().copied().filter(|&(r, c, _)| r != pin && c != pin).collect();
    entries.push((pin, pin, 1.0));
    entries.push((sys.multiplier, sys.multiplier, 1.0));
    let mut rhs = sys.rhs.clone();
    for (a, m) in sys.constraint.iter().enumerate() {
        rhs[po + a] -= lambda * m;
    }
    rhs[pin] = 0.0;
    rhs[sys.multiplier] = 0.0;
    let mut x = solver.solve(sys.n, &entries, &rhs)?;
    let mean: f64 = sys.constraint.iter().zip(&x[po..]).map(|(m, p)| m * p).sum();
    let shift = -mean / area;
    for (a, e) in sys.kernel.iter().enumerate() {
        x[po + a] += shift * e;
    }
    x[sys.multiplier] = lambda;
    Ok(x)
}

#[derive(Debug, Clone)]
struct CellRecovery {
    inv_rc: DVector<f64>,
    inv_acf: DMatrix<f64>,
    inv_bct: DMatrix<f64>,
}

/// Local unknown map of one element: global index of each local face-velocity
/// and pressure unknown, `None` for Dirichlet faces.
fn face_targets(lo: &LocalOperators, layout: &SystemLayout) -> Vec<Option<usize>> {
    let mut out = Vec::with_capacity(lo.n_faces() * 2 * lo.nf);
    for &f in &lo.faces {
        match layout.face_offset[f] {
            Some(o) => out.extend((0..2 * lo.nf).map(|j| Some(o + j))),
            None => out.extend(std::iter::repeat_n(None, 2 * lo.nf)),
        }
    }
    out
}

/// Known boundary values in the local face-velocity layout.
fn face_known(lo: &LocalOperators, state: &HybridVelocity, layout: &SystemLayout) -> DVector<f64> {
    let mut g = DVector::zeros(lo.n_faces() * 2 * lo.nf);
    for (fl, &f) in lo.faces.iter().enumerate() {
        if layout.face_offset[f].is_none() {
            let o = fl * 2 * lo.nf;
            g.rows_mut(o, lo.nf).copy_from_slice(state.face(f, 0));
            g.rows_mut(o + lo.nf, lo.nf).copy_from_slice(state.face(f, 1));
        }
    }
    g
}

fn cell_means(lo: &LocalOperators) -> DVector<f64> {
    lo.phi.tr_mul(&DVector::from_column_slice(&lo.quad.weights))
}

/// Assembles the linear system defined by the local matrices `locals`.
///
/// `state` supplies the Dirichlet values on boundary faces.
pub fn assemble(
    space: &HhoSpace,
    layout: &SystemLayout,
    locals: &[LocalMatrix],
    loads: &[DVector<f64>],
    state: &HybridVelocity,
) -> Result<AssembledSystem, SolverError> {
    let parts: Vec<_> = space
        .locals()
        .par_iter()
        .map(|lo| assemble_element(lo, layout, &locals[lo.element], &loads[lo.element], state))
        .collect::<Result<_, _>>()?;
    let mut entries = Vec::with_capacity(parts.iter().map(|p| p.entries.len()).sum());
    let mut rhs = vec![0.0; layout.n_dofs];
    let mut recovery = Vec::with_capacity(parts.len());
    let mut constraint = Vec::with_capacity(layout.n_pressure_dofs());
    let mut kernel = Vec::with_capacity(layout.n_pressure_dofs());
    for part in parts {
        entries.extend(part.entries);
        for (i, v) in part.rhs {
            rhs[i] += v;
        }
        recovery.push(part.recovery);
        constraint.extend(part.means.iter());
        kernel.extend(part.ones.iter());
    }
    Ok(AssembledSystem {
        n: layout.n_dofs,
        entries,
        rhs,
        pressure_offset: layout.pressure_offset,
        multiplier: layout.multiplier,
        constraint,
        kernel,
        recovery,
    })
}

struct ElementContribution {
    entries: Vec<(usize, usize, f64)>,
    rhs: Vec<(usize, f64)>,
    recovery: Option<CellRecovery>,
    means: DVector<f64>,
    ones: DVector<f64>,
}

fn assemble_element(
    lo: &LocalOperators,
    layout: &SystemLayout,
    lm: &LocalMatrix,
    load: &DVector<f64>,
    state: &HybridVelocity,
) -> Result<ElementContribution, SolverError> {
    let t = lo.element;
    let nc = 2 * lo.nk;
    let nfd = lo.n_velocity() - nc;
    let nk = lo.nk;
    let a_cc = lm.a.view((0, 0), (nc, nc));
    let a_cf = lm.a.view((0, nc), (nc, nfd));
    let a_fc = lm.a.view((nc, 0), (nfd, nc));
    let a_ff = lm.a.view((nc, nc), (nfd, nfd));
    let b_c = lm.b.columns(0, nc);
    let b_f = lm.b.columns(nc, nfd);
    let r_c = load.rows(0, nc);
    let r_f = load.rows(nc, nfd);

    // Local unknowns: [kept velocity | faces | pressure] with their global targets.
    let (mat, rhs, targets, recovery) = if layout.condensed {
        let lu = a_cc.into_owned().lu();
        let solve = |m: DMatrix<f64>| lu.solve(&m).ok_or(SolverError::Condensation { element: t });
        let inv_acf = solve(a_cf.into_owned())?;
        let inv_bct = solve(b_c.transpose())?;
        let inv_rc = solve(DMatrix::from_column_slice(nc, 1, r_c.as_slice()))?.column(0).into_owned();
        if !inv_acf.iter().chain(inv_bct.iter()).all(|v| v.is_finite()) {
            return Err(SolverError::Condensation { element: t });
        }
        let n = nfd + nk;
        let mut s = DMatrix::zeros(n, n);
        s.view_mut((0, 0), (nfd, nfd)).copy_from(&(a_ff - a_fc * &inv_acf));
        s.view_mut((0, nfd), (nfd, nk)).copy_from(&(b_f.transpose() - a_fc * &inv_bct));
        s.view_mut((nfd, 0), (nk, nfd)).copy_from(&(b_f - b_c * &inv_acf));
        s.view_mut((nfd, nfd), (nk, nk)).copy_from(&(-(b_c * &inv_bct)));
        let mut r = DVector::zeros(n);
        r.rows_mut(0, nfd).copy_from(&(r_f - a_fc * &inv_rc));
        r.rows_mut(nfd, nk).copy_from(&(-(b_c * &inv_rc)));
        let mut targets = face_targets(lo, layout);
        targets.extend((0..nk).map(|a| Some(layout.pressure_index(t) + a)));
        (s, r, targets, Some(CellRecovery { inv_rc, inv_acf, inv_bct }))
    } else {
        let n = nc + nfd + nk;
        let mut s = DMatrix::zeros(n, n);
        s.view_mut((0, 0), (nc + nfd, nc + nfd)).copy_from(&lm.a);
        s.view_mut((0, nc + nfd), (nc + nfd, nk)).copy_from(&lm.b.transpose());
        s.view_mut((nc + nfd, 0), (nk, nc + nfd)).copy_from(&lm.b);
        let mut r = DVector::zeros(n);
        r.rows_mut(0, nc + nfd).copy_from(load);
        let cell = layout.cell_index(t).expect("uncondensed layout");
        let mut targets: Vec<Option<usize>> = (0..nc).map(|i| Some(cell + i)).collect();
        targets.extend(face_targets(lo, layout));
        targets.extend((0..nk).map(|a| Some(layout.pressure_index(t) + a)));
        (s, r, targets, None)
    };

    // Move the Dirichlet columns to the right-hand side.
    let g = face_known(lo, state, layout);
    let face_start = if layout.condensed { 0 } else { nc };
    let mut rhs = rhs;
    for j in 0..nfd {
        if targets[face_start + j].is_none() && g[j] != 0.0 {
            rhs.axpy(-g[j], &mat.column(face_start + j), 1.0);
        }
    }

    let mut entries = Vec::with_capacity(mat.len());
    for (j, tj) in targets.iter().enumerate() {
        let Some(cj) = tj else { continue };
        for (i, ti) in targets.iter().enumerate() {
            let Some(ri) = ti else { continue };
            let v = mat[(i, j)];
            if v != 0.0 {
                entries.push((*ri, *cj, v));
            }
        }
    }
    let means = cell_means(lo);
    let ones = lo.mass_solve(&means);
    let rhs = targets
        .iter()
        .zip(rhs.iter())
        .filter_map(|(t, &v)| t.map(|i| (i, v)))
        .collect();
    Ok(ElementContribution {
        entries,
        rhs,
        recovery,
        means,
        ones,
    })
}

/// Solution of an assembled system mapped back to discrete fields.
pub fn extract_solution(
    space: &HhoSpace,
    layout: &SystemLayout,
    system: &AssembledSystem,
    x: &[f64],
    boundary: &BoundaryValues,
) -> (HybridVelocity, BrokenPressure, f64) {
    let mut u = HybridVelocity::zeros(space);
    boundary.apply_to(&mut u);
    for (f, off) in layout.face_offset.iter().enumerate() {
        if let Some(o) = off {
            u.face_mut(f, 0).copy_from_slice(&x[*o..*o + layout.nf]);
            u.face_mut(f, 1).copy_from_slice(&x[*o + layout.nf..*o + 2 * layout.nf]);
        }
    }
    let mut p = BrokenPressure::zeros(space);
    for t in 0..space.mesh().n_elements() {
        let o = layout.pressure_index(t);
        p.cell_mut(t).copy_from_slice(&x[o..o + layout.nk]);
    }
    let cells: Vec<DVector<f64>> = space
        .locals()
        .par_iter()
        .map(|lo| {
            let t = lo.element;
            let nk = lo.nk;
            match &system.recovery[t] {
                Some(rec) => {
                    let vl = u.local(space, t);
                    let uf = vl.rows(2 * nk, vl.len() - 2 * nk);
                    let pt = DVector::from_column_slice(p.cell(t));
                    &rec.inv_rc - &rec.inv_acf * uf - &rec.inv_bct * pt
                }
                None => {
                    let o = layout.cell_index(t).expect("uncondensed layout");
                    DVector::from_column_slice(&x[o..o + 2 * nk])
                }
            }
        })
        .collect();
    for (t, c) in cells.iter().enumerate() {
        let nk = layout.nk;
        u.cell_mut(t, 0).copy_from_slice(c.rows(0, nk).as_slice());
        u.cell_mut(t, 1).copy_from_slice(c.rows(nk, nk).as_slice());
    }
    (u, p, x[layout.multiplier])
}

/// Data of a generalized Navier-Stokes problem.
pub struct Problem<'a> {
    pub laws: FluidLaws,
    pub source: &'a (dyn Fn(&Point) -> Vector2<f64> + Sync),
    pub dirichlet: &'a (dyn Fn(&Point) -> Vector2<f64> + Sync),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    /// Linear Stokes-like solve with convection dropped.
    StokesLinear,
    Zero,
    Provided(HybridVelocity, BrokenPressure),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardConfig {
    pub tolerance: f64,
    pub max_iters: usize,
    /// Initial relaxation of each step; halved while the residual does not decrease.
    pub relaxation: f64,
    pub min_relaxation: f64,
    /// Number of previous steps mixed by Anderson acceleration; 0 disables it.
    pub anderson_depth: usize,
    pub initial_guess: InitialGuess,
    pub condense: bool,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iters: 200,
            relaxation: 1.0,
            min_relaxation: 0.125,
            anderson_depth: 0,
            initial_guess: InitialGuess::StokesLinear,
            condense: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DofCounts {
    pub face_velocity: usize,
    pub cell_velocity: usize,
    pub pressure: usize,
    pub system: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timings {
    pub setup: f64,
    pub local: f64,
    pub assembly: f64,
    pub linear_solve: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Number of evaluated iterates, the initial guess included.
    pub iterations: usize,
    /// Relative residual of each evaluated iterate.
    pub residual_history: Vec<f64>,
    /// Relative increment norm of each Picard update.
    pub increment_history: Vec<f64>,
    pub relaxation_history: Vec<f64>,
    pub converged: bool,
    pub dofs: DofCounts,
    pub timings: Timings,
    pub warnings: Vec<String>,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub velocity: HybridVelocity,
    pub pressure: BrokenPressure,
    pub multiplier: f64,
    pub report: SolveReport,
}

/// Nonlinear residual of the discrete problem at `(u, p, lambda)`, computed
/// element-wise from the matrices linearized at `u` itself. Rows follow the
/// uncondensed layout; Dirichlet face rows are dropped.
pub fn residual_vector(
    space: &HhoSpace,
    layout: &SystemLayout,
    locals: &[LocalMatrix],
    loads: &[DVector<f64>],
    u: &HybridVelocity,
    p: &BrokenPressure,
    lambda: f64,
) -> Vec<f64> {
    let n_el = space.mesh().n_elements();
    let nk = layout.nk;
    let n_cells = 2 * nk * n_el;
    // [faces | cells | pressure | constraint]
    let mut r = vec![0.0; layout.n_face_dofs + n_cells + nk * n_el + 1];
    let parts: Vec<(DVector<f64>, DVector<f64>, f64)> = space
        .locals()
        .par_iter()
        .map(|lo| {
            let t = lo.element;
            let lm = &locals[t];
            let ul = u.local(space, t);
            let pl = DVector::from_column_slice(p.cell(t));
            let rv = &lm.a * &ul + lm.b.transpose() * &pl - &loads[t];
            let means = cell_means(lo);
            let rp = &lm.b * &ul + &means * lambda;
            (rv, rp, means.dot(&pl))
        })
        .collect();
    for (lo, (rv, rp, pm)) in space.locals().iter().zip(parts) {
        let t = lo.element;
        let c = layout.n_face_dofs + 2 * nk * t;
        r[c..c + 2 * nk].copy_from_slice(rv.rows(0, 2 * nk).as_slice());
        for (fl, &f) in lo.faces.iter().enumerate() {
            if let Some(o) = layout.face_offset[f] {
                let lo_off = 2 * nk + fl * 2 * lo.nf;
                for j in 0..2 * lo.nf {
                    r[o + j] += rv[lo_off + j];
                }
            }
        }
        let po = layout.n_face_dofs + n_cells + nk * t;
        r[po..po + nk].copy_from_slice(rp.as_slice());
        *r.last_mut().unwrap() += pm;
    }
    r
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn local_matrices(
    space: &HhoSpace,
    laws: &FluidLaws,
    state: &HybridVelocity,
    mode: Linearization,
) -> Vec<LocalMatrix> {
    let eps = singular_threshold(space, state);
    space
        .locals()
        .par_iter()
        .map(|lo| {
            let st = LocalState::from_global(space, lo.element, state);
            linearized_local_system(lo, laws, &st, eps, mode)
        })
        .collect()
}

/// Solves the linear problem obtained by freezing coefficients at `state`.
pub fn linear_solve(
    space: &HhoSpace,
    layout: &SystemLayout,
    locals: &[LocalMatrix],
    loads: &[DVector<f64>],
    boundary: &BoundaryValues,
    solver: &dyn LinearSolver,
) -> Result<(HybridVelocity, BrokenPressure, f64), SolverError> {
    let mut lift = HybridVelocity::zeros(space);
    boundary.apply_to(&mut lift);
    let sys = assemble(space, layout, locals, loads, &lift)?;
    let x = solve_system(&sys, solver)?;
    Ok(extract_solution(space, layout, &sys, &x, boundary))
}

/// Flattens `(u, p, lambda)` as `[cells | faces | pressure | lambda]`.
fn pack(u: &HybridVelocity, p: &BrokenPressure, lambda: f64) -> DVector<f64> {
    DVector::from_iterator(
        u.cells_raw().len() + u.faces_raw().len() + p.raw().len() + 1,
        u.cells_raw().iter().chain(u.faces_raw()).chain(p.raw()).copied().chain(std::iter::once(lambda)),
    )
}

fn unpack(x: &DVector<f64>, u: &HybridVelocity, p: &BrokenPressure) -> (HybridVelocity, BrokenPressure, f64) {
    let (nc, nf, np) = (u.cells_raw().len(), u.faces_raw().len(), p.raw().len());
    let mut u = u.clone();
    let mut p = p.clone();
    u.cells_raw_mut().copy_from_slice(&x.as_slice()[..nc]);
    u.faces_raw_mut().copy_from_slice(&x.as_slice()[nc..nc + nf]);
    p.raw_mut().copy_from_slice(&x.as_slice()[nc + nf..nc + nf + np]);
    (u, p, x[nc + nf + np])
}

/// Anderson mixing of the Picard map `x -> x + f(x)` over the last `depth` steps.
struct Anderson {
    depth: usize,
    xs: std::collections::VecDeque<DVector<f64>>,
    fs: std::collections::VecDeque<DVector<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            xs: Default::default(),
            fs: Default::default(),
        }
    }

    fn clear(&mut self) {
        self.xs.clear();
        self.fs.clear();
    }

    fn push(&mut self, x: DVector<f64>, f: DVector<f64>) {
        if self.depth == 0 {
            return;
        }
        self.xs.push_back(x);
        self.fs.push_back(f);
        if self.xs.len() > self.depth + 1 {
            self.xs.pop_front();
            self.fs.pop_front();
        }
    }

    /// Records `(x, f)` and returns the mixed iterate when enough history exists.
    fn extrapolate(&mut self, x: &DVector<f64>, f: &DVector<f64>, beta: f64) -> Option<DVector<f64>> {
        self.push(x.clone(), f.clone());
        let m = self.xs.len().checked_sub(1).filter(|&m| m > 0)?;
        let n = x.len();
        let mut df = DMatrix::zeros(n, m);
        let mut dx = DMatrix::zeros(n, m);
        for j in 0..m {
            df.set_column(j, &(&self.fs[j + 1] - &self.fs[j]));
            dx.set_column(j, &(&self.xs[j + 1] - &self.xs[j]));
        }
        let gamma = df.clone().svd(true, true).solve(f, 1e-12 * df.norm()).ok()?;
        if !gamma.iter().all(|g| g.is_finite()) {
            return None;
        }
        Some(x + f * beta - (dx + df * beta) * gamma)
    }
}

/// Picard iteration for the discrete generalized Navier-Stokes problem.
pub fn picard_solve(space: &HhoSpace, problem: &Problem, config: &PicardConfig) -> Result<SolveOutput, SolverError> {
    picard_solve_with(space, problem, config, &SparseLu)
}

pub fn picard_solve_with(
    space: &HhoSpace,
    problem: &Problem,
    config: &PicardConfig,
    solver: &dyn LinearSolver,
) -> Result<SolveOutput, SolverError> {
    if !(config.tolerance > 0.0) {
        return Err(SolverError::Config("tolerance must be positive".into()));
    }
    if !(config.relaxation > 0.0 && config.relaxation <= 1.0) {
        return Err(SolverError::Config("relaxation must lie in (0, 1]".into()));
    }
    let start = Instant::now();
    let mut timings = Timings::default();
    let laws = &problem.laws;
    let mut warnings = Vec::new();
    if let Ok(rep) = condition_report(laws.viscous.r, laws.convection.s, 2, space.k()) {
        if !rep.consistency_ok && !laws.convection.is_off() {
            warnings.push(format!(
                "s = {} exceeds the consistency bound r*/r' = {}",
                laws.convection.s,
                rep.exponents.consistency_bound()
            ));
        }
    }

    let layout = build_layout(space.mesh(), space.k(), config.condense)?;
    let boundary = apply_dirichlet(space, problem.dirichlet);
    let loads: Vec<DVector<f64>> = space.locals().par_iter().map(|lo| load_local(lo, problem.source)).collect();
    let mut lift = HybridVelocity::zeros(space);
    boundary.apply_to(&mut lift);
    timings.setup = start.elapsed().as_secs_f64();

    let dofs = DofCounts {
        face_velocity: layout.n_face_dofs,
        cell_velocity: 2 * layout.nk * space.mesh().n_elements(),
        pressure: layout.n_pressure_dofs(),
        system: layout.n_dofs,
    };

    // Reference norm: residual of the lifted zero state.
    let tl = Instant::now();
    let lift_locals = local_matrices(space, laws, &lift, Linearization::Picard);
    timings.local += tl.elapsed().as_secs_f64();
    let zero_p = BrokenPressure::zeros(space);
    let ref_norm = norm2(&residual_vector(space, &layout, &lift_locals, &loads, &lift, &zero_p, 0.0));
    let scale = if ref_norm > 0.0 { ref_norm } else { 1.0 };

    let (mut u, mut p, mut lambda) = match &config.initial_guess {
        InitialGuess::Zero => (lift.clone(), BrokenPressure::zeros(space), 0.0),
        InitialGuess::Provided(u0, p0) => {
            let mut u0 = u0.clone();
            boundary.apply_to(&mut u0);
            (u0, p0.clone(), 0.0)
        }
        InitialGuess::StokesLinear => {
            let zero = HybridVelocity::zeros(space);
            let tl = Instant::now();
            let locals = local_matrices(space, laws, &zero, Linearization::NoConvection);
            timings.local += tl.elapsed().as_secs_f64();
            let ts = Instant::now();
            let out = linear_solve(space, &layout, &locals, &loads, &boundary, solver)?;
            timings.linear_solve += ts.elapsed().as_secs_f64();
            out
        }
    };

    let mut report = SolveReport {
        iterations: 0,
        residual_history: Vec::new(),
        increment_history: Vec::new(),
        relaxation_history: Vec::new(),
        converged: false,
        dofs,
        timings,
        warnings,
    };
    let eval = |u: &HybridVelocity, p: &BrokenPressure, lambda: f64, t: &mut Timings| {
        let tl = Instant::now();
        let locals = local_matrices(space, laws, u, Linearization::Picard);
        t.local += tl.elapsed().as_secs_f64();
        let res = norm2(&residual_vector(space, &layout, &locals, &loads, u, p, lambda)) / scale;
        (locals, res)
    };
    let (mut locals, mut res) = eval(&u, &p, lambda, &mut report.timings);
    let mut best: Option<(f64, HybridVelocity, BrokenPressure, f64)> = None;
    let mut history = Anderson::new(config.anderson_depth);

    loop {
        report.iterations += 1;
        report.residual_history.push(res);
        if best.as_ref().is_none_or(|b| res < b.0) {
            best = Some((res, u.clone(), p.clone(), lambda));
        }
        if res <= config.tolerance {
            report.converged = true;
            break;
        }
        if report.iterations >= config.max_iters || !res.is_finite() {
            break;
        }
        let ta = Instant::now();
        let sys = assemble(space, &layout, &locals, &loads, &u)?;
        report.timings.assembly += ta.elapsed().as_secs_f64();
        let ts = Instant::now();
        let x = solve_system(&sys, solver)?;
        report.timings.linear_solve += ts.elapsed().as_secs_f64();
        let (un, pn, ln) = extract_solution(space, &layout, &sys, &x, &boundary);
        let xk = pack(&u, &p, lambda);
        let fk = pack(&un, &pn, ln) - &xk;
        let size = norm2(u.cells_raw()).hypot(norm2(u.faces_raw()));
        let step_norm = norm2(&fk.as_slice()[..u.cells_raw().len() + u.faces_raw().len()]);

        let mut accepted = false;
        if let Some(xa) = history.extrapolate(&xk, &fk, config.relaxation) {
            let (uc, pc, lc) = unpack(&xa, &u, &p);
            let (lm, rc) = eval(&uc, &pc, lc, &mut report.timings);
            if rc < res {
                let mut d = uc.clone();
                d.axpy(-1.0, &u);
                report.increment_history.push(norm2(d.cells_raw()).hypot(norm2(d.faces_raw())) / size.max(f64::MIN_POSITIVE));
                report.relaxation_history.push(config.relaxation);
                (u, p, lambda, locals, res) = (uc, pc, lc, lm, rc);
                accepted = true;
            } else {
                history.clear();
                history.push(xk.clone(), fk.clone());
            }
        }
        if accepted {
            continue;
        }

        // Backtracking on the relaxation: accept the first step that lowers
        // the residual, or the smallest one.
        let mut theta = config.relaxation;
        loop {
            let (uc, pc, lc) = unpack(&(&xk + &fk * theta), &u, &p);
            let (lm, rc) = eval(&uc, &pc, lc, &mut report.timings);
            if rc < res || theta <= config.min_relaxation {
                report.increment_history.push(theta * step_norm / size.max(f64::MIN_POSITIVE));
                report.relaxation_history.push(theta);
                (u, p, lambda, locals, res) = (uc, pc, lc, lm, rc);
                break;
            }
            theta = (0.5 * theta).max(config.min_relaxation);
        }
    }

    if !report.converged {
        if let Some((_, bu, bp, bl)) = best {
            u = bu;
            p = bp;
            lambda = bl;
        }
    }
    report.timings.total = start.elapsed().as_secs_f64();
    Ok(SolveOutput {
        velocity: u,
        pressure: p,
        multiplier: lambda,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::coupling_value;
    use crate::hho::HhoConfig;
    use crate::laws::{CarreauYasuda, LaplaceConvection};
    use crate::mesh::BoundingBox;
    use std::sync::Arc;

    fn space(mesh: Mesh, k: usize) -> HhoSpace {
        HhoSpace::new(Arc::new(mesh), HhoConfig::new(k)).unwrap()
    }

    #[test]
    fn layout_counts() {
        let m = Mesh::cartesian(32, 32, BoundingBox::unit_square()).unwrap();
        assert_eq!(build_layout(&m, 3, true).unwrap().n_face_dofs, 15872);
        let m1 = Mesh::cartesian(1, 1, BoundingBox::unit_square()).unwrap();
        assert_eq!(build_layout(&m1, 1, true).unwrap().n_face_dofs, 0);
        let m2 = Mesh::cartesian(2, 2, BoundingBox::unit_square()).unwrap();
        let l = build_layout(&m2, 1, false).unwrap();
        assert_eq!(l.n_face_dofs, 16);
        assert_eq!(l.n_cell_dofs(), 4 * 6);
        assert_eq!(l.n_pressure_dofs(), 4 * 3);
        assert_eq!(l.n_dofs, 16 + 24 + 12 + 1);
        assert!(build_layout(&m2, 0, true).is_err());
    }

    #[test]
    fn deflated_solve_matches_bordered_solve() {
        // Boundary data with net outflow makes the multiplier nonzero.
        let sp = space(Mesh::distorted_triangular(3, 0.3).unwrap(), 2);
        let laws = FluidLaws::new(CarreauYasuda::new(1.0, 1.0, 1.5, 1.5).unwrap(), LaplaceConvection::new(1.0, 2.0).unwrap());
        let g = |x: &Point| Vector2::new(x.x + x.y * x.y, x.x * x.y);
        let f = |x: &Point| Vector2::new(x.y.sin(), 1.0);
        let state = sp.interpolate(&|x: &Point| Vector2::new(x.y, -x.x * x.x));
        let loads: Vec<_> = sp.locals().iter().map(|lo| load_local(lo, &f)).collect();
        let locals = local_matrices(&sp, &laws, &state, Linearization::Picard);
        let bv = apply_dirichlet(&sp, &g);
        let mut lift = HybridVelocity::zeros(&sp);
        bv.apply_to(&mut lift);
        for condense in [true, false] {
            let layout = build_layout(sp.mesh(), 2, condense).unwrap();
            let sys = assemble(&sp, &layout, &locals, &loads, &lift).unwrap();
            assert_eq!(sys.n, layout.n_dofs);
            assert_eq!(sys.rhs.len(), layout.n_dofs);
            let a = solve_system(&sys, &SparseLu).unwrap();
            let b = SparseLu.solve(sys.n, &sys.bordered_entries(), &sys.rhs).unwrap();
            assert!(b[layout.multiplier].abs() > 1e-3);
            let res = |x: &[f64]| {
                let mut r = sys.rhs.clone();
                for (i, j, v) in sys.bordered_entries() {
                    r[i] -= v * x[j];
                }
                norm2(&r)
            };
            assert!(res(&a) <= 1e-13 * norm2(&sys.rhs), "condense={condense}");
            // Forward agreement is limited by the conditioning of the saddle point.
            let diff = norm2(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
            assert!(diff <= 1e-8 * norm2(&b), "condense={condense}: {diff}");
        }
    }

    #[test]
    fn dirichlet_values() {
        let sp = space(Mesh::cartesian(4, 4, BoundingBox::unit_square()).unwrap(), 2);
        let zero = apply_dirichlet(&sp, &|_| Vector2::zeros());
        assert!(zero.coefs.iter().all(|c| c[0].amax() == 0.0 && c[1].amax() == 0.0));
        let lid = |x: &Point| if x.y >= 1.0 - 1e-12 { Vector2::new(1.0, 0.0) } else { Vector2::zeros() };
        let bv = apply_dirichlet(&sp, &lid);
        for (&f, c) in bv.faces.iter().zip(&bv.coefs) {
            let mid = sp.mesh().face(f).midpoint;
            let fb = sp.face_basis(f);
            let expect = if mid.y > 1.0 - 1e-12 { 1.0 } else { 0.0 };
            assert!((fb.value(c[0].as_slice(), &mid) - expect).abs() < 1e-13);
            assert!(fb.value(c[1].as_slice(), &mid).abs() < 1e-13);
        }
        let g = |x: &Point| Vector2::new(2.0 * x.x - x.y, 0.5 + x.y);
        let bv = apply_dirichlet(&sp, &g);
        for (&f, c) in bv.faces.iter().zip(&bv.coefs) {
            let fb = sp.face_basis(f);
            for x in &sp.face_quad(f).points {
                assert!((fb.value(c[0].as_slice(), x) - g(x).x).abs() < 1e-12);
                assert!((fb.value(c[1].as_slice(), x) - g(x).y).abs() < 1e-12);
            }
        }
    }

    fn stokes_problem<'a>(
        f: &'a (dyn Fn(&Point) -> Vector2<f64> + Sync),
        g: &'a (dyn Fn(&Point) -> Vector2<f64> + Sync),
    ) -> Problem<'a> {
        Problem {
            laws: FluidLaws::stokes(1.0),
            source: f,
            dirichlet: g,
        }
    }

    #[test]
    fn condensed_and_uncondensed_agree() {
        let sp = space(Mesh::cartesian(4, 4, BoundingBox::unit_square()).unwrap(), 1);
        let f = |x: &Point| Vector2::new((3.0 * x.y).sin(), x.x * x.x);
        let g = |x: &Point| Vector2::new(x.y * (1.0 - x.y), 0.0);
        for laws in [
            FluidLaws::stokes(1.0),
            FluidLaws::new(CarreauYasuda::new(1.0, 1.0, 1.5, 1.5).unwrap(), LaplaceConvection::new(1.0, 2.0).unwrap()),
        ] {
            let prob = Problem { laws, source: &f, dirichlet: &g };
            let a = picard_solve(&sp, &prob, &PicardConfig::default()).unwrap();
            let b = picard_solve(&sp, &prob, &PicardConfig { condense: false, ..Default::default() }).unwrap();
            assert!(a.report.converged && b.report.converged);
            let mut du = a.velocity.clone();
            du.axpy(-1.0, &b.velocity);
            assert!(norm2(du.faces_raw()) <= 1e-10 * norm2(a.velocity.faces_raw()));
            assert!(norm2(du.cells_raw()) <= 1e-10 * norm2(a.velocity.cells_raw()));
            let mut dp = a.pressure.clone();
            dp.axpy(-1.0, &b.pressure);
            assert!(norm2(dp.raw()) <= 1e-10 * norm2(a.pressure.raw()));
        }
    }

    #[test]
    fn linear_exact_solution_is_reproduced() {
        // u = (x2, x1), p = x1 - 1/2 with f = grad p solves Stokes; the scheme
        // is exact on these polynomials.
        for mesh in [Mesh::cartesian(3, 3, BoundingBox::unit_square()).unwrap(), Mesh::distorted_triangular(3, 0.3).unwrap()] {
            let sp = space(mesh, 1);
            let f = |_: &Point| Vector2::new(1.0, 0.0);
            let g = |x: &Point| Vector2::new(x.y, x.x);
            let out = picard_solve(&sp, &stokes_problem(&f, &g), &PicardConfig::default()).unwrap();
            assert!(out.report.converged);
            assert_eq!(out.report.iterations, 1);
            let iu = sp.interpolate(&g);
            let pp = sp.project_pressure(&|x| x.x - 0.5);
            let mut du = out.velocity.clone();
            du.axpy(-1.0, &iu);
            assert!(sp.norm_eps(&du, 2.0) <= 1e-8 * sp.norm_eps(&iu, 2.0));
            let mut dp = out.pressure.clone();
            dp.axpy(-1.0, &pp);
            assert!(dp.norm(&sp, 2.0) <= 1e-8 * pp.norm(&sp, 2.0));
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let sp = space(Mesh::cartesian(3, 3, BoundingBox::unit_square()).unwrap(), 1);
        let z = |_: &Point| Vector2::zeros();
        let laws = FluidLaws::new(CarreauYasuda::new(1.0, 1.0, 1.5, 1.5).unwrap(), LaplaceConvection::new(1.0, 2.0).unwrap());
        let out = picard_solve(&sp, &Problem { laws, source: &z, dirichlet: &z }, &PicardConfig::default()).unwrap();
        assert!(out.report.converged);
        assert_eq!(out.report.iterations, 1);
        assert!(out.velocity.cells_raw().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pressure_has_zero_mean_and_mass_is_conserved() {
        let sp = space(Mesh::distorted_triangular(4, 0.3).unwrap(), 2);
        let f = |x: &Point| Vector2::new(x.x * x.y, (2.0 * x.x).cos());
        let g = |x: &Point| Vector2::new(x.y * (1.0 - x.y) * x.x * (1.0 - x.x), 0.0);
        let laws = FluidLaws::new(CarreauYasuda::new(1.0, 1.0, 1.5, 1.5).unwrap(), LaplaceConvection::new(1.0, 2.0).unwrap());
        let cfg = PicardConfig::default();
        let out = picard_solve(&sp, &Problem { laws, source: &f, dirichlet: &g }, &cfg).unwrap();
        assert!(out.report.converged);
        assert!(out.pressure.integral(&sp).abs() <= 1e-11);
        for t in 0..sp.mesh().n_elements() {
            for a in 0..sp.nk() {
                let mut q = BrokenPressure::zeros(&sp);
                q.cell_mut(t)[a] = 1.0;
                assert!(coupling_value(&sp, &out.velocity, &q).abs() <= 10.0 * cfg.tolerance);
            }
        }
        let h = &out.report.residual_history;
        assert!(h.last().unwrap() < h.first().unwrap());
    }

    #[test]
    fn dirichlet_lift_of_polynomial_field() {
        // A divergence-free P^{k+1} field with f = -div(grad_s u) = -Delta u / 2 = 0
        // for harmonic components.
        let k = 1;
        let sp = space(Mesh::distorted_triangular(3, 0.2).unwrap(), k);
        let g = |x: &Point| Vector2::new(x.x * x.x - x.y * x.y, -2.0 * x.x * x.y);
        let z = |_: &Point| Vector2::zeros();
        let out = picard_solve(&sp, &stokes_problem(&z, &g), &PicardConfig::default()).unwrap();
        let iu = sp.interpolate(&g);
        let mut du = out.velocity.clone();
        du.axpy(-1.0, &iu);
        assert!(sp.norm_eps(&du, 2.0) <= 1e-8 * sp.norm_eps(&iu, 2.0));
    }

    #[test]
    fn nonconvergence_is_reported() {
        let sp = space(Mesh::cartesian(3, 3, BoundingBox::unit_square()).unwrap(), 1);
        let f = |x: &Point| Vector2::new(x.y, -x.x) * 10.0;
        let z = |_: &Point| Vector2::zeros();
        let laws = FluidLaws::new(CarreauYasuda::new(1.0, 1.0, 1.5, 1.5).unwrap(), LaplaceConvection::new(1.0, 2.0).unwrap());
        let cfg = PicardConfig { max_iters: 2, tolerance: 1e-15, ..Default::default() };
        let out = picard_solve(&sp, &Problem { laws, source: &f, dirichlet: &z }, &cfg).unwrap();
        assert!(!out.report.converged);
        assert_eq!(out.report.iterations, 2);
    }

    #[test]
    fn invalid_config_rejected() {
        let sp = space(Mesh::cartesian(1, 1, BoundingBox::unit_square()).unwrap(), 1);
        let z = |_: &Point| Vector2::zeros();
        let cfg = PicardConfig { tolerance: 0.0, ..Default::default() };
        assert!(picard_solve(&sp, &stokes_problem(&z, &z), &cfg).is_err());
    }
}
