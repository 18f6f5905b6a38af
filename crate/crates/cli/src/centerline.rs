//! Velocity profiles along the cavity centrelines and comparison with
//! reference data.

use hho_core::hho::{HhoSpace, HybridVelocity};
use hho_core::Point;
use nalgebra::Vector2;

use crate::config::CenterlineEval;
use crate::CliError;

/// Samples per centreline.
pub const N_SAMPLES: usize = 129;

/// `u1` along `x1 = 1/2` against `x2`, and `u2` along `x2 = 1/2` against `x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineProfile {
    pub u1_vertical: Vec<(f64, f64)>,
    pub u2_horizontal: Vec<(f64, f64)>,
}

/// Discrete velocity at `x`. On element boundaries the values of all
/// elements containing `x` are averaged.
pub fn velocity_at(space: &HhoSpace, u: &HybridVelocity, x: &Point, mode: CenterlineEval) -> Option<Vector2<f64>> {
    let owners = space.mesh().locate_all(x);
    if owners.is_empty() {
        return None;
    }
    let sum: Vector2<f64> = owners
        .iter()
        .map(|&t| match mode {
            CenterlineEval::Cell => u.cell_value(space, t, x),
            CenterlineEval::Reconstruction => {
                let lo = space.local(t);
                let [c0, c1] = lo.potential(&u.local(space, t));
                Vector2::new(lo.recon_basis.value(c0.as_slice(), x), lo.recon_basis.value(c1.as_slice(), x))
            }
        })
        .sum();
    Some(sum / owners.len() as f64)
}

impl CenterlineProfile {
    pub fn extract(space: &HhoSpace, u: &HybridVelocity, mode: CenterlineEval) -> Result<Self, CliError> {
        let at = |x: Point| {
            velocity_at(space, u, &x, mode)
                .ok_or_else(|| CliError::Config(format!("centreline point ({}, {}) lies outside the mesh", x.x, x.y)))
        };
        let coords: Vec<f64> = (0..N_SAMPLES).map(|i| i as f64 / (N_SAMPLES - 1) as f64).collect();
        let u1_vertical = coords.iter().map(|&y| Ok((y, at(Point::new(0.5, y))?.x))).collect::<Result<_, CliError>>()?;
        let u2_horizontal = coords.iter().map(|&x| Ok((x, at(Point::new(x, 0.5))?.y))).collect::<Result<_, CliError>>()?;
        Ok(Self { u1_vertical, u2_horizontal })
    }
}

/// Reference samples `(coordinate, value)` along one centreline.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceProfile {
    pub samples: Vec<(f64, f64)>,
}

impl ReferenceProfile {
    /// Parses two whitespace-separated columns; `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Config(format!("reference data line {}: {e}", i + 1)))?;
            match cols[..] {
                [c, v] => samples.push((c, v)),
                _ => return Err(CliError::Config(format!("reference data line {}: expected two columns", i + 1))),
            }
        }
        Ok(Self { samples })
    }
}

/// Re = 1000 reference data of the cavity: `u1` on the vertical centreline.
pub fn reference_u1() -> ReferenceProfile {
    ReferenceProfile::parse(include_str!("../data/ghia1982_re1000_u.dat")).expect("shipped reference data parses")
}

/// Re = 1000 reference data of the cavity: `u2` on the horizontal centreline.
pub fn reference_u2() -> ReferenceProfile {
    ReferenceProfile::parse(include_str!("../data/ghia1982_re1000_v.dat")).expect("shipped reference data parses")
}

/// Sup-norm deviations of the discrete velocity from both reference profiles,
/// evaluated at the reference sample points: `(u1 deviation, u2 deviation)`.
pub fn reference_deviation(space: &HhoSpace, u: &HybridVelocity, mode: CenterlineEval) -> Result<(f64, f64), CliError> {
    let dev = |r: &ReferenceProfile, point: fn(f64) -> Point, comp: usize| -> Result<f64, CliError> {
        r.samples.iter().try_fold(0.0f64, |m, &(c, v)| {
            let x = point(c);
            let uh = velocity_at(space, u, &x, mode)
                .ok_or_else(|| CliError::Config(format!("reference point ({}, {}) lies outside the mesh", x.x, x.y)))?;
            Ok(m.max((uh[comp] - v).abs()))
        })
    };
    Ok((
        dev(&reference_u1(), |y| Point::new(0.5, y), 0)?,
        dev(&reference_u2(), |x| Point::new(x, 0.5), 1)?,
    ))
}
