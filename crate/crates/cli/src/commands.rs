//! The subcommands. Each writes its files into the configured output
//! directory and returns the computed data; `converged` tells whether every
//! nonlinear solve met its tolerance.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hho_core::hho::{HhoConfig, HhoSpace};
use hho_core::laws::{condition_report, ConditionReport};
use hho_core::solver::{build_layout, picard_solve, Problem, SolveOutput};
use hho_core::verify::{compute_errors, exact_fields, run_convergence, source_term, ErrorRecord, RateTable};
use hho_core::{Mesh, Point};
use nalgebra::Vector2;

use crate::centerline::{reference_deviation, CenterlineProfile};
use crate::config::{Command, ProblemKind, RunConfig};
use crate::output::{write_centerlines, write_rate_csv, write_vtk};
use crate::CliError;

pub fn cmd_check(r: f64, s: f64, d: usize, k: usize) -> Result<ConditionReport, CliError> {
    if k < 1 {
        return Err(CliError::Config("k must be ≥ 1".into()));
    }
    condition_report(r, s, d, k).map_err(|e| CliError::Config(e.to_string()))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    f(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

pub struct ConvergenceResult {
    pub table: RateTable,
    pub csv: PathBuf,
}

impl ConvergenceResult {
    pub fn converged(&self) -> bool {
        self.table.all_converged()
    }
}

/// Manufactured-solution study over the configured mesh levels; writes
/// `convergence.csv`.
pub fn cmd_convergence(cfg: &RunConfig) -> Result<ConvergenceResult, CliError> {
    let table = run_convergence(&cfg.convergence()?).map_err(CliError::from_verify)?;
    prepare_dir(&cfg.output_dir)?;
    let csv = cfg.output_dir.join("convergence.csv");
    write_file(&csv, |w| write_rate_csv(&table, w))?;
    Ok(ConvergenceResult { table, csv })
}

pub struct SolveResult {
    pub space: HhoSpace,
    pub output: SolveOutput,
    /// Errors against the exact solution, for manufactured problems.
    pub errors: Option<ErrorRecord>,
    pub files: Vec<PathBuf>,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.output.report.converged
    }
}

fn build_space(cfg: &RunConfig) -> Result<HhoSpace, CliError> {
    let mesh = cfg.mesh.build()?.into_iter().next().ok_or_else(|| CliError::Config("no mesh level".into()))?;
    let hc = HhoConfig { quad_order: cfg.quad_order, ..HhoConfig::new(cfg.k) };
    HhoSpace::new(Arc::new(mesh), hc).map_err(|e| CliError::Config(e.to_string()))
}

fn top_of(mesh: &Mesh) -> f64 {
    mesh.vertices().iter().map(|v| v.coords.y).fold(f64::NEG_INFINITY, f64::max)
}

type VectorField<'a> = dyn Fn(&Point) -> Vector2<f64> + Sync + 'a;

fn solve_problem(cfg: &RunConfig, space: HhoSpace, kind: ProblemKind) -> Result<SolveResult, CliError> {
    let laws = cfg.laws()?;
    let exact = exact_fields(2).map_err(CliError::from_verify)?;
    let top = top_of(space.mesh());
    let lid_tol = 1e-12 * top.abs().max(1.0);
    let zero = |_: &Point| Vector2::zeros();
    let manufactured_f = |x: &Point| source_term(&exact, &laws, x);
    let manufactured_g = |x: &Point| exact.velocity(x);
    let lid = |x: &Point| if x.y >= top - lid_tol { Vector2::new(1.0, 0.0) } else { Vector2::zeros() };
    let (source, dirichlet): (&VectorField<'_>, &VectorField<'_>) = match kind {
        ProblemKind::Manufactured => (&manufactured_f, &manufactured_g),
        ProblemKind::Cavity => (&zero, &lid),
        ProblemKind::Zero => (&zero, &zero),
    };
    let output = picard_solve(&space, &Problem { laws, source, dirichlet }, &cfg.picard)
        .map_err(|e| CliError::Solve(e.to_string()))?;
    let errors = (kind == ProblemKind::Manufactured).then(|| {
        let mut rec = compute_errors(&space, &output.velocity, &output.pressure, &exact, cfg.r);
        rec.picard_iters = output.report.iterations;
        rec.converged = output.report.converged;
        rec.final_residual = output.report.final_residual();
        rec
    });
    Ok(SolveResult { space, output, errors, files: Vec::new() })
}

fn write_fields(res: &mut SolveResult, dir: &Path, name: &str, title: &str) -> Result<(), CliError> {
    prepare_dir(dir)?;
    let path = dir.join(name);
    write_file(&path, |w| write_vtk(&res.space, &res.output.velocity, &res.output.pressure, title, w))?;
    res.files.push(path);
    Ok(())
}

/// Single solve of the configured problem; writes `solution.vtk`.
pub fn cmd_solve(cfg: &RunConfig) -> Result<SolveResult, CliError> {
    let space = build_space(cfg)?;
    let mut res = solve_problem(cfg, space, cfg.problem)?;
    write_fields(&mut res, &cfg.output_dir, "solution.vtk", "hho-ns solution")?;
    Ok(res)
}

pub struct CavityResult {
    pub solve: SolveResult,
    pub profile: CenterlineProfile,
    /// Sup-norm deviation from the Re = 1000 reference data, `(u1, u2)`.
    pub reference_deviation: (f64, f64),
    pub face_velocity_dofs: usize,
}

/// Lid-driven cavity; writes `cavity.vtk`, `centerline_u1.csv` and
/// `centerline_u2.csv`, also when the nonlinear solver did not converge.
pub fn cmd_cavity(cfg: &RunConfig) -> Result<CavityResult, CliError> {
    let space = build_space(cfg)?;
    let face_velocity_dofs = build_layout(space.mesh(), cfg.k, true)
        .map_err(|e| CliError::Config(e.to_string()))?
        .n_face_dofs;
    let mut solve = solve_problem(cfg, space, ProblemKind::Cavity)?;
    write_fields(&mut solve, &cfg.output_dir, "cavity.vtk", "hho-ns lid-driven cavity")?;
    let profile = CenterlineProfile::extract(&solve.space, &solve.output.velocity, cfg.centerline)?;
    write_centerlines(&profile, &cfg.output_dir).map_err(|e| CliError::Io(e.to_string()))?;
    solve.files.push(cfg.output_dir.join("centerline_u1.csv"));
    solve.files.push(cfg.output_dir.join("centerline_u2.csv"));
    let reference_deviation = reference_deviation(&solve.space, &solve.output.velocity, cfg.centerline)?;
    Ok(CavityResult { solve, profile, reference_deviation, face_velocity_dofs })
}

/// Runs the configured command and returns a printable summary and whether
/// all solves converged.
pub fn run(cfg: &RunConfig) -> Result<(String, bool), CliError> {
    match cfg.command {
        Command::Check => {
            let rep = cmd_check(cfg.r, cfg.s, 2, cfg.k)?;
            Ok((rep.to_string(), true))
        }
        Command::Convergence => {
            let res = cmd_convergence(cfg)?;
            Ok((format!("{}wrote {}", res.table, res.csv.display()), res.converged()))
        }
        Command::Solve => {
            let res = cmd_solve(cfg)?;
            let mut s = solve_summary(&res);
            if let Some(e) = &res.errors {
                s += &format!("\nerr_u = {:.6e}, err_p = {:.6e}", e.err_u, e.err_p);
            }
            Ok((s, res.converged()))
        }
        Command::Cavity => {
            let res = cmd_cavity(cfg)?;
            let mut s = solve_summary(&res.solve);
            s += &format!(
                "\nface velocity dofs: {}\nmax deviation from reference: u1 {:.4}, u2 {:.4}",
                res.face_velocity_dofs, res.reference_deviation.0, res.reference_deviation.1
            );
            Ok((s, res.solve.converged()))
        }
    }
}

fn solve_summary(res: &SolveResult) -> String {
    let rep = &res.output.report;
    let mut s = format!(
        "picard: {} iterations, residual {:.3e}, {}\ndofs: {} face velocity, {} system; {:.2} s",
        rep.iterations,
        rep.final_residual(),
        if rep.converged { "converged" } else { "NOT converged" },
        rep.dofs.face_velocity,
        rep.dofs.system,
        rep.timings.total
    );
    for w in &rep.warnings {
        s += &format!("\nwarning: {w}");
    }
    for f in &res.files {
        s += &format!("\nwrote {}", f.display());
    }
    s
}
