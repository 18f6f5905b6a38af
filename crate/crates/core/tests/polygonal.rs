//! End-to-end solves on general polygonal meshes and mesh file round trips.

use std::sync::Arc;

use hho_core::hho::{HhoConfig, HhoSpace};
use hho_core::laws::FluidLaws;
use hho_core::mesh::BoundingBox;
use hho_core::solver::{picard_solve, PicardConfig, Problem};
use hho_core::verify::{fit_rates, run_level, ConvergenceConfig, MeshFamily};
use hho_core::{Mesh, Point};
use nalgebra::Vector2;

/// `n x n` squares where, in every other row, pairs of neighbouring squares
/// are merged into one rectangle whose loop keeps the shared edge's end
/// points: a hexagon with two flat angles.
fn merged_rectangles(n: usize) -> Mesh {
    assert!(n.is_multiple_of(2));
    let h = 1.0 / n as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let coords = (0..=n).flat_map(|j| (0..=n).map(move |i| Point::new(i as f64 * h, j as f64 * h))).collect();
    let mut loops = Vec::new();
    for j in 0..n {
        if j % 2 == 0 {
            for i in (0..n).step_by(2) {
                loops.push(vec![id(i, j), id(i + 1, j), id(i + 2, j), id(i + 2, j + 1), id(i + 1, j + 1), id(i, j + 1)]);
            }
        } else {
            for i in 0..n {
                loops.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
    }
    Mesh::from_polygons(coords, loops).unwrap()
}

#[test]
fn merged_mesh_is_valid() {
    let m = merged_rectangles(4);
    assert!(m.validate().is_empty());
    assert_eq!(m.n_elements(), 4 + 8);
    assert!((m.area() - 1.0).abs() < 1e-14);
    assert!(m.elements().iter().any(|e| e.vertices.len() == 6));
}

#[test]
fn stokes_flow_is_reproduced_on_polygons() {
    // u = (x2, x1), p = x1 - 1/2 solve the Stokes problem with f = (1, 0).
    let u = |x: &Point| Vector2::new(x.y, x.x);
    let laws = FluidLaws::stokes(1.0);
    for k in 1..=3 {
        let space = HhoSpace::new(Arc::new(merged_rectangles(4)), HhoConfig::new(k)).unwrap();
        let f = |_: &Point| Vector2::new(1.0, 0.0);
        let out = picard_solve(&space, &Problem { laws, source: &f, dirichlet: &u }, &PicardConfig::default()).unwrap();
        assert!(out.report.converged);
        let iu = space.interpolate(&u);
        let du = out.velocity.cells_raw().iter().zip(iu.cells_raw()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let df = out.velocity.faces_raw().iter().zip(iu.faces_raw()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(du < 1e-9 && df < 1e-9, "k={k}: {du:e} {df:e}");
        let pp = space.project_pressure(&|x| x.x - 0.5);
        let dp = out.pressure.raw().iter().zip(pp.raw()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dp < 1e-8, "k={k}: {dp:e}");
    }
}

#[test]
fn navier_stokes_converges_at_optimal_rate_on_polygons() {
    let cfg = ConvergenceConfig::new(2.0, 2.0, 1.0, 1);
    let coarse = run_level(&cfg, merged_rectangles(8)).unwrap();
    let fine = run_level(&cfg, merged_rectangles(16)).unwrap();
    assert!(coarse.converged && fine.converged);
    let h = [coarse.h, fine.h];
    let ru = fit_rates(&h, &[coarse.err_u, fine.err_u])[0].unwrap();
    let rp = fit_rates(&h, &[coarse.err_p, fine.err_p])[0].unwrap();
    assert!((1.7..=2.3).contains(&ru), "velocity rate {ru}");
    assert!(rp >= 1.5, "pressure rate {rp}");
}

#[test]
fn mesh_file_round_trip_preserves_the_discrete_solution() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.txt");
    let mesh = MeshFamily::Triangular { distortion: 0.3 }.build(4).unwrap();
    mesh.write(&path).unwrap();
    let back = Mesh::read(&path).unwrap();
    assert_eq!(back.n_elements(), mesh.n_elements());
    assert_eq!(back.n_faces(), mesh.n_faces());
    for (a, b) in mesh.vertices().iter().zip(back.vertices()) {
        assert_eq!(a.coords, b.coords);
    }
    let cfg = ConvergenceConfig::new(1.8, 2.0, 1.0, 2);
    let a = run_level(&cfg, mesh).unwrap();
    let b = run_level(&cfg, back).unwrap();
    assert_eq!(a.err_u, b.err_u);
    assert_eq!(a.err_p, b.err_p);
}

#[test]
fn cartesian_mesh_with_rectangular_domain() {
    let m = Mesh::cartesian(3, 2, BoundingBox { min: Point::new(-1.0, 0.0), max: Point::new(2.0, 0.5) }).unwrap();
    assert!((m.area() - 1.5).abs() < 1e-14);
    assert_eq!(m.boundary_faces().len(), 10);
}
