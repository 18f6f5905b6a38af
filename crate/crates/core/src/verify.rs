//! Manufactured solution, errors in the energy-type norms and observed orders
//! of convergence on refinement families.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::hho::{BrokenPressure, HhoConfig, HhoError, HhoSpace, HybridVelocity};
use crate::laws::{conjugate, flatten, unflatten, CarreauYasuda, FluidLaws, LawError, LaplaceConvection};
use crate::mesh::{BoundingBox, Mesh, MeshError, Point};
use crate::solver::{picard_solve, PicardConfig, Problem, SolverError};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("only d = 2 is supported, got d = {0}")]
    Dimension(usize),
    #[error("a convergence study needs at least one level")]
    NoLevels,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Hho(#[from] HhoError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Law(#[from] LawError),
}

/// `u = (sin(pi y / 2), sin(pi x / 2))`, `p = sin(pi x / 2) sin(pi y / 2) - 4 / pi^2`
/// on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactSolution;

const HALF_PI: f64 = 0.5 * PI;

impl ExactSolution {
    pub fn velocity(&self, x: &Point) -> Vector2<f64> {
        Vector2::new((HALF_PI * x.y).sin(), (HALF_PI * x.x).sin())
    }

    pub fn pressure(&self, x: &Point) -> f64 {
        (HALF_PI * x.x).sin() * (HALF_PI * x.y).sin() - 4.0 / (PI * PI)
    }

    /// `(grad u)_ij = d_j u_i`.
    pub fn velocity_gradient(&self, x: &Point) -> Matrix2<f64> {
        Matrix2::new(0.0, HALF_PI * (HALF_PI * x.y).cos(), HALF_PI * (HALF_PI * x.x).cos(), 0.0)
    }

    /// Second derivatives `h[i][(j, k)] = d_j d_k u_i`.
    pub fn velocity_hessian(&self, x: &Point) -> [Matrix2<f64>; 2] {
        let c = -HALF_PI * HALF_PI;
        [
            Matrix2::new(0.0, 0.0, 0.0, c * (HALF_PI * x.y).sin()),
            Matrix2::new(c * (HALF_PI * x.x).sin(), 0.0, 0.0, 0.0),
        ]
    }

    pub fn pressure_gradient(&self, x: &Point) -> Vector2<f64> {
        let (sx, cx) = (HALF_PI * x.x).sin_cos();
        let (sy, cy) = (HALF_PI * x.y).sin_cos();
        HALF_PI * Vector2::new(cx * sy, sx * cy)
    }
}

/// The manufactured solution in dimension `d`.
pub fn exact_fields(d: usize) -> Result<ExactSolution, VerifyError> {
    if d != 2 {
        return Err(VerifyError::Dimension(d));
    }
    Ok(ExactSolution)
}

fn sym(m: &Matrix2<f64>) -> Matrix2<f64> {
    0.5 * (m + m.transpose())
}

/// `f = -div sigma(grad_s u) + (u . grad) chi(u) + grad p` by the chain rule.
pub fn source_term(exact: &ExactSolution, laws: &FluidLaws, x: &Point) -> Vector2<f64> {
    let g = exact.velocity_gradient(x);
    let hess = exact.velocity_hessian(x);
    let jac = laws.viscous.jacobian(&sym(&g));
    let mut div_sigma = Vector2::zeros();
    for j in 0..2 {
        // d_j grad u
        let dg = Matrix2::from_fn(|i, k| hess[i][(j, k)]);
        let dsigma = unflatten(&(jac * flatten(&sym(&dg))));
        div_sigma += dsigma.column(j);
    }
    let u = exact.velocity(x);
    // grad chi(u) u = J_chi(u) grad u u; it vanishes with u when J_chi blows up.
    let convection = match laws.convection.jacobian(&u) {
        Ok(jc) => jc * g * u,
        Err(_) => Vector2::zeros(),
    };
    -div_sigma + convection + exact.pressure_gradient(x)
}

/// Discrete errors against the interpolates of the exact solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub h: f64,
    /// `||u_h - I_h u||_{eps,r,h}`.
    pub err_u: f64,
    /// `||p_h - pi_h p||_{L^r'}`.
    pub err_p: f64,
    pub rel_u: f64,
    pub rel_p: f64,
    pub picard_iters: usize,
    pub converged: bool,
    pub final_residual: f64,
}

pub fn compute_errors(
    space: &HhoSpace,
    u_h: &HybridVelocity,
    p_h: &BrokenPressure,
    exact: &ExactSolution,
    r: f64,
) -> ErrorRecord {
    let iu = space.interpolate(&|x| exact.velocity(x));
    let pp = space.project_pressure(&|x| exact.pressure(x));
    let mut du = u_h.clone();
    du.axpy(-1.0, &iu);
    let mut dp = p_h.clone();
    dp.axpy(-1.0, &pp);
    let rc = conjugate(r);
    let err_u = space.norm_eps(&du, r);
    let err_p = dp.norm(space, rc);
    let ref_u = space.norm_eps(&iu, r);
    let ref_p = pp.norm(space, rc);
    ErrorRecord {
        h: space.mesh().h(),
        err_u,
        err_p,
        rel_u: if ref_u > 0.0 { err_u / ref_u } else { f64::NAN },
        rel_p: if ref_p > 0.0 { err_p / ref_p } else { f64::NAN },
        picard_iters: 0,
        converged: true,
        final_residual: 0.0,
    }
}

/// Observed order between consecutive levels; `None` where an error vanishes
/// or is not finite.
pub fn fit_rates(h: &[f64], err: &[f64]) -> Vec<Option<f64>> {
    h.windows(2)
        .zip(err.windows(2))
        .map(|(h, e)| {
            let ok = e.iter().all(|v| v.is_finite() && *v > 0.0);
            ok.then(|| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub records: Vec<ErrorRecord>,
    pub rates_u: Vec<Option<f64>>,
    pub rates_p: Vec<Option<f64>>,
}

impl RateTable {
    pub fn new(records: Vec<ErrorRecord>) -> Self {
        let h: Vec<f64> = records.iter().map(|r| r.h).collect();
        let eu: Vec<f64> = records.iter().map(|r| r.err_u).collect();
        let ep: Vec<f64> = records.iter().map(|r| r.err_p).collect();
        Self {
            rates_u: fit_rates(&h, &eu),
            rates_p: fit_rates(&h, &ep),
            records,
        }
    }

    pub fn all_converged(&self) -> bool {
        self.records.iter().all(|r| r.converged)
    }
}

impl fmt::Display for RateTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rate = |r: Option<&Option<f64>>| match r {
            Some(Some(v)) => format!("{v:.3}"),
            Some(None) => "undef".into(),
            None => "-".into(),
        };
        writeln!(f, "{:>10} {:>12} {:>12} {:>7} {:>7} {:>6}", "h", "err_u", "err_p", "rate_u", "rate_p", "iters")?;
        for (i, r) in self.records.iter().enumerate() {
            let prev = i.checked_sub(1);
            writeln!(
                f,
                "{:>10.4e} {:>12.4e} {:>12.4e} {:>7} {:>7} {:>6}{}",
                r.h,
                r.err_u,
                r.err_p,
                rate(prev.and_then(|j| self.rates_u.get(j)).map(Some).unwrap_or(None)),
                rate(prev.and_then(|j| self.rates_p.get(j)).map(Some).unwrap_or(None)),
                r.picard_iters,
                if r.converged { "" } else { " (not converged)" }
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeshFamily {
    /// Distorted structured triangulations of the unit square.
    Triangular { distortion: f64 },
    Cartesian,
}

impl MeshFamily {
    pub fn build(&self, n: usize) -> Result<Mesh, MeshError> {
        match *self {
            MeshFamily::Triangular { distortion } => Mesh::distorted_triangular(n, distortion),
            MeshFamily::Cartesian => Mesh::cartesian(n, n, BoundingBox::unit_square()),
        }
    }
}

/// Default vertex perturbation of the triangular family.
pub const DEFAULT_DISTORTION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub d: usize,
    pub r: f64,
    pub s: f64,
    pub delta: f64,
    pub mu: f64,
    pub nu: f64,
    pub yasuda_a: f64,
    pub k: usize,
    pub family: MeshFamily,
    /// Subdivisions per side of each level.
    pub levels: Vec<usize>,
    pub quad_order: Option<usize>,
    pub picard: PicardConfig,
}

impl ConvergenceConfig {
    /// `(1, delta, r, r)` Carreau-Yasuda viscosity and `(1, s)` convection on
    /// triangular meshes `h = 1/8, ..., 1/64`.
    pub fn new(r: f64, s: f64, delta: f64, k: usize) -> Self {
        Self {
            d: 2,
            r,
            s,
            delta,
            mu: 1.0,
            nu: 1.0,
            yasuda_a: r,
            k,
            family: MeshFamily::Triangular {
                distortion: DEFAULT_DISTORTION,
            },
            levels: vec![8, 16, 32, 64],
            quad_order: None,
            picard: PicardConfig::default(),
        }
    }

    pub fn laws(&self) -> Result<FluidLaws, LawError> {
        Ok(FluidLaws::new(
            CarreauYasuda::new(self.mu, self.delta, self.yasuda_a, self.r)?,
            LaplaceConvection::new(self.nu, self.s)?,
        ))
    }
}

/// Solves the manufactured problem on one mesh and measures the errors.
pub fn run_level(cfg: &ConvergenceConfig, mesh: Mesh) -> Result<ErrorRecord, VerifyError> {
    let exact = exact_fields(cfg.d)?;
    let laws = cfg.laws()?;
    let space = HhoSpace::new(
        Arc::new(mesh),
        HhoConfig {
            quad_order: cfg.quad_order,
            ..HhoConfig::new(cfg.k)
        },
    )?;
    let f = |x: &Point| source_term(&exact, &laws, x);
    let g = |x: &Point| exact.velocity(x);
    let out = picard_solve(&space, &Problem { laws, source: &f, dirichlet: &g }, &cfg.picard)?;
    let mut rec = compute_errors(&space, &out.velocity, &out.pressure, &exact, cfg.r);
    rec.picard_iters = out.report.iterations;
    rec.converged = out.report.converged;
    rec.final_residual = out.report.final_residual();
    Ok(rec)
}

/// Runs every level of the study; non-converged levels are flagged, not dropped.
pub fn run_convergence(cfg: &ConvergenceConfig) -> Result<RateTable, VerifyError> {
    exact_fields(cfg.d)?;
    if cfg.levels.is_empty() {
        return Err(VerifyError::NoLevels);
    }
    let records = cfg
        .levels
        .iter()
        .map(|&n| run_level(cfg, cfg.family.build(n)?))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RateTable::new(records))
}
