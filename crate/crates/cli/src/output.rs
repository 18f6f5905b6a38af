//! CSV and legacy VTK writers.

use std::io::{self, Write};

use hho_core::hho::{BrokenPressure, HhoSpace, HybridVelocity};
use hho_core::verify::RateTable;
use nalgebra::DVector;

use crate::centerline::CenterlineProfile;

pub const RATE_HEADER: &str = "meshsize,erru,errp,rate_u,rate_p,picard_iters";

/// Twelve significant digits, `.` decimal separator.
pub fn fmt_value(x: f64) -> String {
    format!("{x:.11e}")
}

/// One row per level; the rate columns of the first level are empty.
pub fn write_rate_csv<W: Write>(table: &RateTable, out: &mut W) -> io::Result<()> {
    let rate = |r: Option<&Option<f64>>| r.copied().flatten().map(fmt_value).unwrap_or_default();
    writeln!(out, "{RATE_HEADER}")?;
    for (i, r) in table.records.iter().enumerate() {
        let prev = i.checked_sub(1);
        write!(
            out,
            "{},{},{},{},{},{}\n",
            fmt_value(r.h),
            fmt_value(r.err_u),
            fmt_value(r.err_p),
            rate(prev.and_then(|j| table.rates_u.get(j))),
            rate(prev.and_then(|j| table.rates_p.get(j))),
            r.picard_iters
        )?;
    }
    Ok(())
}

/// Two-column profile CSV with the given header names.
pub fn write_profile_csv<W: Write>(samples: &[(f64, f64)], header: (&str, &str), out: &mut W) -> io::Result<()> {
    writeln!(out, "{},{}", header.0, header.1)?;
    for &(c, v) in samples {
        writeln!(out, "{},{}", fmt_value(c), fmt_value(v))?;
    }
    Ok(())
}

pub fn write_centerlines(profile: &CenterlineProfile, dir: &std::path::Path) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(dir.join("centerline_u1.csv"))?);
    write_profile_csv(&profile.u1_vertical, ("x2", "u1"), &mut f)?;
    f.flush()?;
    let mut f = io::BufWriter::new(std::fs::File::create(dir.join("centerline_u2.csv"))?);
    write_profile_csv(&profile.u2_horizontal, ("x1", "u2"), &mut f)?;
    f.flush()
}

/// Mean of the pressure polynomial of element `t`.
fn pressure_mean(space: &HhoSpace, p: &BrokenPressure, t: usize) -> f64 {
    let lo = space.local(t);
    let v = &lo.phi * DVector::from_column_slice(p.cell(t));
    v.iter().zip(&lo.quad.weights).map(|(a, w)| a * w).sum::<f64>() / space.mesh().element(t).measure
}

/// Legacy ASCII unstructured grid with cell-average `velocity` and `pressure`.
/// Triangles and quadrilaterals get their own cell types, other polygons are
/// written as `VTK_POLYGON`.
pub fn write_vtk<W: Write>(space: &HhoSpace, u: &HybridVelocity, p: &BrokenPressure, title: &str, out: &mut W) -> io::Result<()> {
    let mesh = space.mesh();
    let elements = mesh.elements();
    writeln!(out, "# vtk DataFile Version 3.0\n{}\nASCII\nDATASET UNSTRUCTURED_GRID", title.replace('\n', " "))?;
    writeln!(out, "POINTS {} double", mesh.vertices().len())?;
    for v in mesh.vertices() {
        writeln!(out, "{} {} 0", fmt_value(v.coords.x), fmt_value(v.coords.y))?;
    }
    let size: usize = elements.iter().map(|e| e.vertices.len() + 1).sum();
    writeln!(out, "CELLS {} {}", elements.len(), size)?;
    for e in elements {
        write!(out, "{}", e.vertices.len())?;
        for v in &e.vertices {
            write!(out, " {v}")?;
        }
        out.write_all(b"\n")?;
    }
    writeln!(out, "CELL_TYPES {}", elements.len())?;
    for e in elements {
        let ty = match e.vertices.len() {
            3 => 5,
            4 => 9,
            _ => 7,
        };
        writeln!(out, "{ty}")?;
    }
    writeln!(out, "CELL_DATA {}\nVECTORS velocity double", elements.len())?;
    for t in 0..elements.len() {
        let m = u.cell_mean(space, t);
        writeln!(out, "{} {} 0", fmt_value(m.x), fmt_value(m.y))?;
    }
    writeln!(out, "SCALARS pressure double 1\nLOOKUP_TABLE default")?;
    for t in 0..elements.len() {
        writeln!(out, "{}", fmt_value(pressure_mean(space, p, t)))?;
    }
    Ok(())
}
