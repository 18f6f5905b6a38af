//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; the process fails if any criterion fails.
//!
//! Built with `harness = false` so the summary is always printed. The full
//! 32x32 cavity is long-running (about a minute and a half with optimized
//! code); set `ACCEPTANCE_SKIP_LONG=1` to run only its 16x16 variant.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use hho_cli::commands::{cmd_cavity, cmd_check, cmd_convergence};
use hho_cli::config::{RawConfig, RunConfig};
use hho_core::basis::monomial_exponents;
use hho_core::forms::{convective_terms, linearized_local_system, load_local, singular_threshold, Linearization, LocalState};
use hho_core::hho::{HhoConfig, HhoSpace, HybridVelocity};
use hho_core::laws::{CarreauYasuda, FluidLaws, LaplaceConvection};
use hho_core::mesh::BoundingBox;
use hho_core::solver::{build_layout, picard_solve, PicardConfig, Problem, SolveReport};
use hho_core::verify::{exact_fields, source_term, RateTable};
use hho_core::{Mesh, Point};
use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PICARD_TOL: f64 = 1e-10;
const PICARD_MAX: usize = 100;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Every nonlinear solve of the suite, for the solver criterion.
#[derive(Default)]
struct SolveLog {
    entries: Vec<(String, usize, f64, bool)>,
}

impl SolveLog {
    fn record(&mut self, what: impl Into<String>, rep: &SolveReport) {
        self.entries.push((what.into(), rep.iterations, rep.final_residual(), rep.converged));
    }

    fn record_table(&mut self, what: &str, t: &RateTable) {
        for r in &t.records {
            self.entries.push((format!("{what} h={:.4}", r.h), r.picard_iters, r.final_residual, r.converged));
        }
    }
}

fn meshes_4x4() -> Vec<(&'static str, Mesh)> {
    vec![
        ("cartesian", Mesh::cartesian(4, 4, BoundingBox::unit_square()).unwrap()),
        ("triangular", Mesh::distorted_triangular(4, 0.3).unwrap()),
    ]
}

fn space(mesh: Mesh, k: usize) -> HhoSpace {
    HhoSpace::new(Arc::new(mesh), HhoConfig::new(k)).unwrap()
}

fn random_velocity(sp: &HhoSpace, rng: &mut ChaCha8Rng) -> HybridVelocity {
    let mut v = HybridVelocity::zeros(sp);
    v.cells_raw_mut().iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    v.faces_raw_mut().iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    v
}

fn monomial(a: u32, b: u32, x: &Point) -> f64 {
    x.x.powi(a as i32) * x.y.powi(b as i32)
}

fn monomial_grad(a: u32, b: u32, x: &Point) -> Vector2<f64> {
    let dx = if a > 0 { a as f64 * x.x.powi(a as i32 - 1) * x.y.powi(b as i32) } else { 0.0 };
    let dy = if b > 0 { b as f64 * x.x.powi(a as i32) * x.y.powi(b as i32 - 1) } else { 0.0 };
    Vector2::new(dx, dy)
}

fn rel(err: f64, scale: f64) -> f64 {
    err / scale.max(1.0)
}

/// 1. Commutation, residual consistency, trace identity, Fortin property and
///    norm domination on 4x4 meshes for k = 1, 2, 3.
fn operator_identities() -> Verdict {
    let mut worst = [0.0f64; 4];
    let mut dominated = true;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    // Smooth non-polynomial field for the Fortin check.
    let w = |x: &Point| Vector2::new((1.3 * x.x + 0.4 * x.y).sin(), (0.7 * x.x * x.y).exp());
    let div_w = |x: &Point| 1.3 * (1.3 * x.x + 0.4 * x.y).cos() + 0.7 * x.x * (0.7 * x.x * x.y).exp();
    for (_, mesh) in meshes_4x4() {
        for k in 1..=3 {
            let sp = space(mesh.clone(), k);
            // G_T I_T = pi_T grad on monomials of degree <= k + 2, compared as
            // functions at the quadrature points relative to the sup of pi_T grad.
            for (a, b) in monomial_exponents(k + 2) {
                let v = sp.interpolate(&|x| Vector2::new(monomial(a, b, x), -0.5 * monomial(a, b, x)));
                let (mut err, mut scale) = (0.0f64, 0.0f64);
                for lo in sp.locals() {
                    let g = lo.gradient_at_qps(&v.local(&sp, lo.element));
                    for j in 0..2 {
                        let expect = &lo.phi * sp.project_cell_scalar(lo.element, &|x| monomial_grad(a, b, x)[j]);
                        scale = scale.max(expect.amax());
                        for (q, gq) in g.iter().enumerate() {
                            err = err.max((gq[(0, j)] - expect[q]).abs()).max((gq[(1, j)] + 0.5 * expect[q]).abs());
                        }
                    }
                }
                worst[0] = worst[0].max(rel(err, scale));
            }
            // Boundary residual of interpolates of P^{k+1} fields.
            for (a, b) in monomial_exponents(k + 1) {
                let v = sp.interpolate(&|x| Vector2::new(monomial(a, b, x), monomial(b, a, x)));
                for lo in sp.locals() {
                    let vl = v.local(&sp, lo.element);
                    for fl in 0..lo.n_faces() {
                        for d in lo.residual_at_qps(&vl, fl) {
                            worst[1] = worst[1].max(d.norm());
                        }
                    }
                }
            }
            // D_h = tr G_h on random vectors.
            let v = random_velocity(&sp, &mut rng);
            for lo in sp.locals() {
                let vl = v.local(&sp, lo.element);
                let c = lo.gradient_coefficients(&vl);
                let tr = &c[0][0] + &c[1][1];
                worst[2] = worst[2].max(rel((lo.divergence_matrix() * &vl - &tr).amax(), tr.amax()));
            }
            // Fortin: D_T I_T w = pi_T div w. The identity rests on integration
            // by parts, so the projections use a quadrature accurate enough for
            // the smooth field.
            let fine = HhoSpace::new(sp.mesh_arc().clone(), HhoConfig { quad_order: Some(2 * k + 16), ..HhoConfig::new(k) }).unwrap();
            let iw = fine.interpolate(&w);
            for lo in fine.locals() {
                let d = &lo.phi * (lo.divergence_matrix() * iw.local(&fine, lo.element));
                let expect = &lo.phi * fine.project_cell_scalar(lo.element, &div_w);
                worst[3] = worst[3].max(rel((d - &expect).amax(), expect.amax()));
            }
            for _ in 0..100 {
                let v = random_velocity(&sp, &mut rng);
                for m in [1.5, 2.0, 3.0] {
                    dominated &= sp.norm_eps(&v, m) <= sp.norm_1(&v, m) * (1.0 + 1e-14);
                }
            }
        }
    }
    let pass = worst[0] <= 1e-10 && worst[1] <= 1e-10 && worst[2] <= 1e-14 && worst[3] <= 1e-9 && dominated;
    Verdict::new(
        pass,
        format!(
            "commutation {:.1e}, residual {:.1e}, trace {:.1e}, Fortin {:.1e}, norm_eps <= norm_1: {dominated}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

/// 2. |c_h(w, w)| relative to the sum of the magnitudes of its three terms.
fn non_dissipativity() -> Verdict {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let sp: Vec<HhoSpace> = (1..=3).map(|k| space(Mesh::distorted_triangular(4, 0.3).unwrap(), k)).collect();
    for sp in &sp {
        for s in [1.5, 2.0, 2.5, 4.5] {
            let law = LaplaceConvection::new(1.0, s).unwrap();
            for _ in 0..100 {
                let w = random_velocity(sp, &mut rng);
                let t = convective_terms(sp, &law, &w, &w);
                let scale: f64 = t.iter().map(|x| x.abs()).sum();
                worst = worst.max(t.iter().sum::<f64>().abs() / scale);
            }
        }
    }
    Verdict::new(worst <= 1e-10, format!("max |c_h(w,w)| / term scale = {worst:.1e} over 1200 samples"))
}

/// 3. Stokes limit with u = (x2, x1), p = x1 - 1/2: the solve reproduces the
///    interpolates, and the interpolates have zero residual.
fn polynomial_exactness(log: &mut SolveLog) -> Verdict {
    let laws = FluidLaws::new(CarreauYasuda::new(1.0, 1.0, 2.0, 2.0).unwrap(), LaplaceConvection::new(0.0, 2.0).unwrap());
    let g = |x: &Point| Vector2::new(x.y, x.x);
    // -div(grad_s u) = 0 and grad p = (1, 0).
    let f = |_: &Point| Vector2::new(1.0, 0.0);
    let mut worst = [0.0f64; 3];
    for (name, mesh) in meshes_4x4() {
        for k in 1..=3 {
            let sp = space(mesh.clone(), k);
            let out = picard_solve(&sp, &Problem { laws, source: &f, dirichlet: &g }, &PicardConfig::default()).unwrap();
            log.record(format!("exactness {name} k={k}"), &out.report);
            let iu = sp.interpolate(&g);
            let pp = sp.project_pressure(&|x| x.x - 0.5);
            let mut du = out.velocity.clone();
            du.axpy(-1.0, &iu);
            let mut dp = out.pressure.clone();
            dp.axpy(-1.0, &pp);
            worst[0] = worst[0].max(sp.norm_eps(&du, 2.0) / sp.norm_eps(&iu, 2.0));
            worst[1] = worst[1].max(dp.norm(&sp, 2.0) / pp.norm(&sp, 2.0));
            // Oracle: residual of the interpolates, element by element.
            let eps = singular_threshold(&sp, &iu);
            let mut res = 0.0f64;
            let mut scale = 0.0f64;
            let layout = build_layout(sp.mesh(), k, false).unwrap();
            let mut face_res = vec![0.0; layout.n_face_dofs];
            for lo in sp.locals() {
                let st = LocalState::from_global(&sp, lo.element, &iu);
                let lm = linearized_local_system(lo, &laws, &st, eps, Linearization::Picard);
                let ul = iu.local(&sp, lo.element);
                let pl = nalgebra::DVector::from_column_slice(pp.cell(lo.element));
                let load = load_local(lo, &f);
                let rv = &lm.a * &ul + lm.b.transpose() * &pl - &load;
                scale = scale.max(load.amax());
                for i in 0..2 * lo.nk {
                    res = res.max(rv[i].abs());
                }
                for (fl, &fi) in lo.faces.iter().enumerate() {
                    if let Some(o) = layout.face_offset[fi] {
                        for j in 0..2 * lo.nf {
                            face_res[o + j] += rv[2 * lo.nk + fl * 2 * lo.nf + j];
                        }
                    }
                }
                res = res.max((&lm.b * &ul).amax());
            }
            res = face_res.iter().fold(res, |m, v| m.max(v.abs()));
            worst[2] = worst[2].max(res / scale.max(1e-300));
        }
    }
    let pass = worst.iter().all(|&e| e <= 1e-8);
    Verdict::new(
        pass,
        format!("velocity {:.1e}, pressure {:.1e}, residual of interpolates {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn study(json: &str, dir: &std::path::Path) -> RateTable {
    let raw = RawConfig::parse(json).unwrap();
    let mut cfg = RunConfig::resolve(&raw, None).unwrap();
    cfg.output_dir = dir.to_path_buf();
    let res = cmd_convergence(&cfg).unwrap();
    let csv = std::fs::read_to_string(&res.csv).unwrap();
    assert_eq!(csv.lines().count(), res.table.records.len() + 1);
    res.table
}

fn rates_within(rates: &[Option<f64>], lo: f64, hi: f64) -> bool {
    !rates.is_empty() && rates.iter().all(|r| matches!(r, Some(v) if (lo..=hi).contains(v)))
}

fn fmt_rates(rates: &[Option<f64>]) -> String {
    let v: Vec<String> = rates.iter().map(|r| r.map_or("undef".into(), |v| format!("{v:.2}"))).collect();
    format!("[{}]", v.join(", "))
}

fn convergence_json(r: &str, k: usize, levels: &str) -> String {
    format!(
        r#"{{"command": "convergence", "r": {r}, "s": 2, "delta": 1, "k": {k},
            "mesh": {{"type": "triangular", "n": {levels}}},
            "picard": {{"tol": {PICARD_TOL:e}, "max_iters": {PICARD_MAX}}}}}"#
    )
}

/// 4. Newtonian rates, k = 1 on h = 1/8..1/64 and k = 2 on h = 1/8..1/32.
fn newtonian(log: &mut SolveLog, dir: &std::path::Path) -> Verdict {
    let t1 = study(&convergence_json("2", 1, "[8, 16, 32, 64]"), &dir.join("newtonian_k1"));
    log.record_table("newtonian k=1", &t1);
    let t2 = study(&convergence_json("2", 2, "[8, 16, 32]"), &dir.join("newtonian_k2"));
    log.record_table("newtonian k=2", &t2);
    let pass = rates_within(&t1.rates_u, 1.8, 2.2) && rates_within(&t1.rates_p, 1.7, 2.3) && rates_within(&t2.rates_u, 2.7, 3.3);
    Verdict::new(
        pass,
        format!(
            "k=1 velocity {} pressure {}; k=2 velocity {}",
            fmt_rates(&t1.rates_u),
            fmt_rates(&t1.rates_p),
            fmt_rates(&t2.rates_u)
        ),
    )
}

/// 5. Shear-thinning r = 9/5, k = 1.
fn shear_thinning(log: &mut SolveLog, dir: &std::path::Path) -> Verdict {
    let t = study(&convergence_json("1.8", 1, "[8, 16, 32, 64]"), &dir.join("thinning"));
    log.record_table("r=9/5", &t);
    let pass = rates_within(&t.rates_u, 1.9, 2.3) && rates_within(&t.rates_p, 1.8, 2.5);
    Verdict::new(pass, format!("velocity {} pressure {}", fmt_rates(&t.rates_u), fmt_rates(&t.rates_p)))
}

/// 6. Shear-thickening r = 5/2, k = 1.
fn shear_thickening(log: &mut SolveLog, dir: &std::path::Path) -> Verdict {
    let t = study(&convergence_json("2.5", 1, "[8, 16, 32, 64]"), &dir.join("thickening"));
    log.record_table("r=5/2", &t);
    let pass = rates_within(&t.rates_u, 1.3, 2.0);
    Verdict::new(pass, format!("velocity {} (pressure {})", fmt_rates(&t.rates_u), fmt_rates(&t.rates_p)))
}

/// 7. Every nonlinear solve of the suite converged within the iteration budget.
fn solver_budget(log: &SolveLog) -> Verdict {
    let bad: Vec<String> = log
        .entries
        .iter()
        .filter(|(_, it, res, conv)| !(*conv && *it <= PICARD_MAX && *res <= PICARD_TOL))
        .map(|(w, it, res, _)| format!("{w}: {it} iterations, residual {res:.1e}"))
        .collect();
    let max = log.entries.iter().map(|e| e.1).max().unwrap_or(0);
    let counts: Vec<String> = log.entries.iter().map(|e| format!("{}:{}", e.0, e.1)).collect();
    eprintln!("picard iterations: {}", counts.join(", "));
    if bad.is_empty() {
        Verdict::new(!log.entries.is_empty(), format!("{} solves, at most {max} iterations", log.entries.len()))
    } else {
        Verdict::new(false, bad.join("; "))
    }
}

/// Fourth-order central difference of `g` along axis `dir`.
fn fd<T>(g: impl Fn(&Point) -> T, x: &Point, dir: usize, h: f64) -> T
where
    T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let e = if dir == 0 { Point::new(h, 0.0) } else { Point::new(0.0, h) };
    let d1 = (g(&(x + e)) - g(&(x - e))) * (1.0 / (2.0 * h));
    let d2 = (g(&(x + 2.0 * e)) - g(&(x - 2.0 * e))) * (1.0 / (4.0 * h));
    d1 * (4.0 / 3.0) + d2 * (-1.0 / 3.0)
}

/// 8. Analytic source term against finite differences of the flux, using
///    only point values of the closed-form fields.
fn source_oracle() -> Verdict {
    let exact = exact_fields(2).unwrap();
    let hp = 0.5 * PI;
    let u = |x: &Point| Vector2::new((hp * x.y).sin(), (hp * x.x).sin());
    let p = |x: &Point| (hp * x.x).sin() * (hp * x.y).sin() - 4.0 / (PI * PI);
    let grad_u = |x: &Point| Matrix2::from_columns(&[fd(u, x, 0, 1e-4), fd(u, x, 1, 1e-4)]);
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    for r in [2.0, 1.8, 2.5] {
        let laws = FluidLaws::new(CarreauYasuda::new(1.0, 1.0, r, r).unwrap(), LaplaceConvection::new(1.0, 2.0).unwrap());
        for _ in 0..50 {
            let x = Point::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95));
            let h = 1e-3;
            let flux = |y: &Point| {
                let g = grad_u(y);
                laws.viscous.stress(&(0.5 * (g + g.transpose())))
            };
            let chi = |y: &Point| laws.convection.eval(&u(y));
            let div = fd(flux, &x, 0, h).column(0) + fd(flux, &x, 1, h).column(1);
            let ux = u(&x);
            let conv = fd(chi, &x, 0, h) * ux.x + fd(chi, &x, 1, h) * ux.y;
            let gp = Vector2::new(fd(p, &x, 0, h), fd(p, &x, 1, h));
            let oracle = -div + conv + gp;
            let f = source_term(&exact, &laws, &x);
            worst = worst.max((f - oracle).norm() / oracle.norm());
        }
    }
    Verdict::new(worst <= 1e-6, format!("max relative deviation {worst:.1e} at 150 points (r = 2, 9/5, 5/2)"))
}

fn cavity(log: &mut SolveLog, dir: &std::path::Path, n: usize, k: usize, tol: f64, expect_dofs: Option<usize>) -> Verdict {
    let json = format!(
        r#"{{"command": "cavity", "r": 2, "s": 2, "reynolds": 1000, "k": {k}, "mesh": {{"type": "cartesian", "n": {n}}},
            "picard": {{"tol": {PICARD_TOL:e}, "max_iters": {PICARD_MAX}}}}}"#
    );
    let mut cfg = RunConfig::resolve(&RawConfig::parse(&json).unwrap(), None).unwrap();
    cfg.output_dir = dir.join(format!("cavity_{n}_k{k}"));
    let t = Instant::now();
    let res = cmd_cavity(&cfg).unwrap();
    log.record(format!("cavity {n}x{n} k={k}"), &res.solve.output.report);
    let (d1, d2) = res.reference_deviation;
    let dofs_ok = expect_dofs.is_none_or(|d| d == res.face_velocity_dofs);
    let pass = dofs_ok && res.solve.converged() && d1 <= tol && d2 <= tol;
    Verdict::new(
        pass,
        format!(
            "{n}x{n} k={k}: {} face dofs, {} Picard iterations, deviation u1 {d1:.4} u2 {d2:.4} (tol {tol}), {:.0} s",
            res.face_velocity_dofs,
            res.solve.output.report.iterations,
            t.elapsed().as_secs_f64()
        ),
    )
}

/// 10. Predicted rates and s-intervals against the reference table.
fn condition_table() -> Verdict {
    // (r, s-interval for d = 2, [(O_vel lo, hi, O_pre lo, hi); k = 1, 2, 3])
    type Row = (f64, Option<(f64, f64)>, [(f64, f64, f64, f64); 3]);
    let table: [Row; 5] = [
        (1.5, Some((2.0, 2.0)), [(1.0, 2.0, 0.5, 1.0), (1.5, 3.0, 0.75, 1.5), (2.0, 4.0, 1.0, 2.0)]),
        (1.8, Some((2.0, 8.0)), [(1.6, 2.0, 1.28, 1.6), (2.4, 3.0, 1.92, 2.4), (3.2, 4.0, 2.56, 3.2)]),
        (2.0, Some((2.0, f64::INFINITY)), [(2.0, 2.0, 2.0, 2.0), (3.0, 3.0, 3.0, 3.0), (4.0, 4.0, 4.0, 4.0)]),
        (2.5, None, [(4.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0), (2.0, 2.0, 2.0, 2.0), (8.0 / 3.0, 8.0 / 3.0, 8.0 / 3.0, 8.0 / 3.0)]),
        (3.0, None, [(1.0, 1.0, 1.0, 1.0), (1.5, 1.5, 1.5, 1.5), (2.0, 2.0, 2.0, 2.0)]),
    ];
    // Rates and intervals are rationals with small denominators; compare to
    // round-off of their floating-point evaluation.
    let same = |a: f64, b: f64| a == b || (a - b).abs() <= 4.0 * f64::EPSILON * b.abs();
    let mut bad = Vec::new();
    let mut cells = 0;
    for (r, interval, rows) in table {
        for (i, &(vl, vh, pl, ph)) in rows.iter().enumerate() {
            let k = i + 1;
            let rep = cmd_check(r, 2.0, 2, k).unwrap();
            let v = rep.predicted_rate_velocity;
            let p = rep.predicted_rate_pressure;
            let iv_ok = match (rep.error_estimate_s_interval, interval) {
                (Some((a, b)), Some((c, d))) => same(a, c) && (b == d || same(b, d)),
                (None, None) => true,
                _ => false,
            };
            let fallback_ok = rep.stokes_fallback == (r > 2.0);
            if !(same(v.lo, vl) && same(v.hi, vh) && same(p.lo, pl) && same(p.hi, ph) && iv_ok && fallback_ok) {
                bad.push(format!("r={r} k={k}: vel {v} pre {p}"));
            }
            cells += 1;
        }
    }
    let text = cmd_check(1.5, 2.0, 2, 1).unwrap().to_string();
    let line_ok = text.contains("consistency: s=2 ≤ r*/r'=2 (non-strict only)");
    if !line_ok {
        bad.push("consistency line for (3/2, 2, 1)".into());
    }
    Verdict::new(bad.is_empty(), if bad.is_empty() { format!("{cells} cells match") } else { bad.join("; ") })
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // Listing mode used by `cargo test -- --list` and IDEs.
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let filter = args.iter().skip(1).find(|a| !a.starts_with('-'));
    if filter.is_some_and(|f| !"acceptance".contains(f.as_str())) {
        return;
    }
    let skip_long = std::env::var("ACCEPTANCE_SKIP_LONG").is_ok_and(|v| !v.is_empty() && v != "0");
    let dir = tempfile::tempdir().unwrap();
    let mut log = SolveLog::default();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        eprintln!("criterion {id} ({name}) ...");
        let v = f();
        eprintln!("criterion {id} done in {:.1} s", t.elapsed().as_secs_f64());
        results.push((id, name, v));
    };
    run(1, "operator identities", &mut operator_identities);
    run(2, "non-dissipativity", &mut non_dissipativity);
    run(3, "polynomial exactness", &mut || polynomial_exactness(&mut log));
    run(4, "Newtonian convergence", &mut || newtonian(&mut log, dir.path()));
    run(5, "shear-thinning convergence", &mut || shear_thinning(&mut log, dir.path()));
    run(6, "shear-thickening convergence", &mut || shear_thickening(&mut log, dir.path()));
    run(8, "source-term oracle", &mut source_oracle);
    run(9, "cavity", &mut || {
        let fast = cavity(&mut log, dir.path(), 16, 2, 0.1, None);
        if skip_long {
            return Verdict::new(fast.pass, format!("{}; 32x32 k=3 skipped (ACCEPTANCE_SKIP_LONG)", fast.detail));
        }
        let full = cavity(&mut log, dir.path(), 32, 3, 0.05, Some(15872));
        Verdict::new(fast.pass && full.pass, format!("{}; {}", fast.detail, full.detail))
    });
    run(7, "Picard budget", &mut || solver_budget(&log));
    run(10, "condition report table", &mut condition_table);
    results.sort_by_key(|r| r.0);

    println!();
    println!("acceptance summary");
    for (id, name, v) in &results {
        println!("criterion {id:>2} {}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
