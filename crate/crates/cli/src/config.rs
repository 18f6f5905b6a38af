//! JSON run configuration.
//!
//! Keys: `command, r, s, delta, mu, nu, yasuda_a, k, mesh: {type, n | path},
//! quad_order, picard: {tol, max_iters, relaxation}, output_dir`. Also
//! accepted: `reynolds` (sets `mu = 2 / reynolds`), `problem`, `centerline`,
//! `mesh.distortion` and `picard.{anderson_depth, condense}`. `mesh.n` may be
//! a list of refinement levels for convergence studies.

use std::path::{Path, PathBuf};

use hho_core::laws::{CarreauYasuda, FluidLaws, LaplaceConvection};
use hho_core::solver::PicardConfig;
use hho_core::verify::{ConvergenceConfig, MeshFamily, DEFAULT_DISTORTION};
use hho_core::Mesh;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Check,
    Convergence,
    Cavity,
    Solve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Levels {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    /// `triangular`, `cartesian` or `file`.
    #[serde(rename = "type")]
    pub kind: Option<String>,
    pub n: Option<Levels>,
    pub path: Option<PathBuf>,
    pub distortion: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSpec {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub relaxation: Option<f64>,
    pub anderson_depth: Option<usize>,
    pub condense: Option<bool>,
}

/// Problem data of the `solve` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Source and boundary data of the smooth exact solution.
    Manufactured,
    /// Unit tangential velocity on the top side, no source.
    Cavity,
    /// Homogeneous data.
    Zero,
}

/// How centerline profiles evaluate the discrete velocity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterlineEval {
    #[default]
    Cell,
    Reconstruction,
}

/// The configuration file as written by the user; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub command: Option<Command>,
    pub r: Option<f64>,
    pub s: Option<f64>,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub yasuda_a: Option<f64>,
    pub k: Option<usize>,
    pub mesh: Option<MeshSpec>,
    pub quad_order: Option<usize>,
    pub picard: Option<PicardSpec>,
    pub output_dir: Option<PathBuf>,
    pub reynolds: Option<f64>,
    pub problem: Option<ProblemKind>,
    pub centerline: Option<CenterlineEval>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid configuration: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshChoice {
    Generated { family: MeshFamily, levels: Vec<usize> },
    File(PathBuf),
}

impl MeshChoice {
    /// Meshes of every level, in order.
    pub fn build(&self) -> Result<Vec<Mesh>, CliError> {
        match self {
            MeshChoice::Generated { family, levels } => levels
                .iter()
                .map(|&n| family.build(n).map_err(|e| CliError::Config(e.to_string())))
                .collect(),
            MeshChoice::File(path) => Ok(vec![Mesh::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?]),
        }
    }
}

/// A validated configuration with defaults filled in for its command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub r: f64,
    pub s: f64,
    pub delta: f64,
    pub mu: f64,
    pub nu: f64,
    pub yasuda_a: f64,
    pub k: usize,
    pub mesh: MeshChoice,
    pub quad_order: Option<usize>,
    pub picard: PicardConfig,
    pub output_dir: PathBuf,
    pub problem: ProblemKind,
    pub centerline: CenterlineEval,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    /// Resolves `raw` for `command`, which overrides the `command` key.
    pub fn resolve(raw: &RawConfig, command: Option<Command>) -> Result<Self, CliError> {
        let command = command
            .or(raw.command)
            .ok_or_else(|| invalid("no command given (set \"command\" in the configuration)"))?;
        let cavity = command == Command::Cavity;
        let r = raw.r.unwrap_or(2.0);
        let s = raw.s.unwrap_or(2.0);
        let k = raw.k.unwrap_or(if cavity { 3 } else { 1 });
        if k < 1 {
            return Err(invalid("k must be ≥ 1"));
        }
        let mu = match (raw.mu, raw.reynolds) {
            (Some(_), Some(_)) => return Err(invalid("give either mu or reynolds, not both")),
            (Some(mu), None) => mu,
            (None, Some(re)) if re > 0.0 && re.is_finite() => 2.0 / re,
            (None, Some(re)) => return Err(invalid(format!("reynolds must be positive, got {re}"))),
            (None, None) if cavity => 2.0 / 1000.0,
            (None, None) => 1.0,
        };
        let cfg = Self {
            command,
            r,
            s,
            delta: raw.delta.unwrap_or(1.0),
            mu,
            nu: raw.nu.unwrap_or(1.0),
            yasuda_a: raw.yasuda_a.unwrap_or(r),
            k,
            mesh: resolve_mesh(raw.mesh.as_ref(), command)?,
            quad_order: raw.quad_order,
            picard: resolve_picard(raw.picard.as_ref())?,
            output_dir: raw.output_dir.clone().unwrap_or_else(|| PathBuf::from(".")),
            problem: raw.problem.unwrap_or(if cavity { ProblemKind::Cavity } else { ProblemKind::Manufactured }),
            centerline: raw.centerline.unwrap_or_default(),
        };
        if let Some(q) = cfg.quad_order {
            if q < 2 * k + 2 {
                return Err(invalid(format!("quad_order must be at least 2k+2 = {}", 2 * k + 2)));
            }
        }
        cfg.laws()?;
        Ok(cfg)
    }

    pub fn laws(&self) -> Result<FluidLaws, CliError> {
        let viscous = CarreauYasuda::new(self.mu, self.delta, self.yasuda_a, self.r).map_err(|e| invalid(e.to_string()))?;
        let convection = LaplaceConvection::new(self.nu, self.s).map_err(|e| invalid(e.to_string()))?;
        Ok(FluidLaws::new(viscous, convection))
    }

    pub fn convergence(&self) -> Result<ConvergenceConfig, CliError> {
        let MeshChoice::Generated { family, levels } = &self.mesh else {
            return Err(invalid("convergence studies need a generated mesh family"));
        };
        Ok(ConvergenceConfig {
            d: 2,
            r: self.r,
            s: self.s,
            delta: self.delta,
            mu: self.mu,
            nu: self.nu,
            yasuda_a: self.yasuda_a,
            k: self.k,
            family: *family,
            levels: levels.clone(),
            quad_order: self.quad_order,
            picard: self.picard.clone(),
        })
    }
}

fn resolve_mesh(spec: Option<&MeshSpec>, command: Command) -> Result<MeshChoice, CliError> {
    let default = MeshSpec::default();
    let spec = spec.unwrap_or(&default);
    let kind = spec.kind.as_deref().unwrap_or(if command == Command::Cavity { "cartesian" } else { "triangular" });
    let levels = match &spec.n {
        Some(Levels::One(n)) => vec![*n],
        Some(Levels::Many(v)) => v.clone(),
        None => match command {
            Command::Convergence => vec![8, 16, 32, 64],
            Command::Cavity => vec![32],
            _ => vec![8],
        },
    };
    match kind {
        "file" => {
            let path = spec.path.clone().ok_or_else(|| invalid("mesh type \"file\" needs a \"path\""))?;
            if spec.n.is_some() {
                return Err(invalid("mesh type \"file\" does not take \"n\""));
            }
            Ok(MeshChoice::File(path))
        }
        "triangular" | "cartesian" => {
            if spec.path.is_some() {
                return Err(invalid(format!("mesh type \"{kind}\" does not take a \"path\"")));
            }
            if levels.is_empty() || levels.contains(&0) {
                return Err(invalid("mesh n must be at least 1"));
            }
            if command != Command::Convergence && levels.len() != 1 {
                return Err(invalid("only convergence studies accept several mesh levels"));
            }
            let family = if kind == "cartesian" {
                if spec.distortion.is_some() {
                    return Err(invalid("cartesian meshes take no distortion"));
                }
                MeshFamily::Cartesian
            } else {
                let distortion = spec.distortion.unwrap_or(DEFAULT_DISTORTION);
                if !(0.0..1.0).contains(&distortion) {
                    return Err(invalid(format!("distortion must lie in [0, 1), got {distortion}")));
                }
                MeshFamily::Triangular { distortion }
            };
            Ok(MeshChoice::Generated { family, levels })
        }
        other => Err(invalid(format!("unknown mesh type \"{other}\" (expected triangular, cartesian or file)"))),
    }
}

fn resolve_picard(spec: Option<&PicardSpec>) -> Result<PicardConfig, CliError> {
    let mut cfg = PicardConfig::default();
    let Some(spec) = spec else { return Ok(cfg) };
    if let Some(tol) = spec.tol {
        if !(tol > 0.0) {
            return Err(invalid(format!("picard.tol must be positive, got {tol}")));
        }
        cfg.tolerance = tol;
    }
    if let Some(m) = spec.max_iters {
        if m == 0 {
            return Err(invalid("picard.max_iters must be at least 1"));
        }
        cfg.max_iters = m;
    }
    if let Some(w) = spec.relaxation {
        if !(w > 0.0 && w <= 1.0) {
            return Err(invalid(format!("picard.relaxation must lie in (0, 1], got {w}")));
        }
        cfg.relaxation = w;
        cfg.min_relaxation = cfg.min_relaxation.min(w);
    }
    if let Some(d) = spec.anderson_depth {
        cfg.anderson_depth = d;
    }
    if let Some(c) = spec.condense {
        cfg.condense = c;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(json: &str) -> Result<RunConfig, CliError> {
        RunConfig::resolve(&RawConfig::parse(json)?, None)
    }

    #[test]
    fn defaults_follow_the_command() {
        let c = resolve(r#"{"command": "convergence"}"#).unwrap();
        assert_eq!((c.r, c.s, c.delta, c.mu, c.nu, c.yasuda_a, c.k), (2.0, 2.0, 1.0, 1.0, 1.0, 2.0, 1));
        assert_eq!(
            c.mesh,
            MeshChoice::Generated {
                family: MeshFamily::Triangular { distortion: DEFAULT_DISTORTION },
                levels: vec![8, 16, 32, 64]
            }
        );
        assert_eq!(c.picard.tolerance, 1e-10);
        let c = resolve(r#"{"command": "cavity"}"#).unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.mu, 0.002);
        assert_eq!(c.mesh, MeshChoice::Generated { family: MeshFamily::Cartesian, levels: vec![32] });
        assert_eq!(c.problem, ProblemKind::Cavity);
    }

    #[test]
    fn yasuda_exponent_defaults_to_r() {
        let c = resolve(r#"{"command": "solve", "r": 1.8}"#).unwrap();
        assert_eq!(c.yasuda_a, 1.8);
    }

    #[test]
    fn full_configuration_parses() {
        let c = resolve(
            r#"{"command": "convergence", "r": 1.5, "s": 2.5, "delta": 0.5, "mu": 2, "nu": 0.5, "yasuda_a": 2,
                "k": 2, "mesh": {"type": "cartesian", "n": [4, 8]}, "quad_order": 9,
                "picard": {"tol": 1e-8, "max_iters": 30, "relaxation": 0.5}, "output_dir": "out"}"#,
        )
        .unwrap();
        assert_eq!((c.r, c.s, c.delta, c.mu, c.nu, c.yasuda_a, c.k), (1.5, 2.5, 0.5, 2.0, 0.5, 2.0, 2));
        assert_eq!(c.quad_order, Some(9));
        assert_eq!((c.picard.tolerance, c.picard.max_iters, c.picard.relaxation), (1e-8, 30, 0.5));
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.convergence().unwrap().levels, vec![4, 8]);
    }

    #[test]
    fn reynolds_sets_viscosity() {
        let c = resolve(r#"{"command": "cavity", "reynolds": 400}"#).unwrap();
        assert_eq!(c.mu, 2.0 / 400.0);
        assert!(resolve(r#"{"command": "cavity", "reynolds": 400, "mu": 1}"#).is_err());
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let msg = |json: &str| match resolve(json) {
            Err(CliError::Config(m)) => m,
            other => panic!("expected a configuration error, got {other:?}"),
        };
        assert_eq!(msg(r#"{"command": "convergence", "k": 0}"#), "k must be ≥ 1");
        msg(r#"{"command": "convergence", "r": 1.0}"#);
        msg(r#"{"command": "convergence", "bogus": 1}"#);
        msg(r#"{"command": "convergence", "mesh": {"type": "hex"}}"#);
        msg(r#"{"command": "convergence", "mesh": {"type": "file"}}"#);
        msg(r#"{"command": "convergence", "mesh": {"n": 0}}"#);
        msg(r#"{"command": "solve", "mesh": {"n": [4, 8]}}"#);
        msg(r#"{"command": "convergence", "picard": {"relaxation": 1.5}}"#);
        msg(r#"{"command": "convergence", "picard": {"tol": 0}}"#);
        msg(r#"{"command": "convergence", "k": 2, "quad_order": 3}"#);
        msg(r#"{"r": 2}"#);
        msg("not json");
    }

    #[test]
    fn explicit_command_overrides_file() {
        let raw = RawConfig::parse(r#"{"command": "solve"}"#).unwrap();
        assert_eq!(RunConfig::resolve(&raw, Some(Command::Cavity)).unwrap().command, Command::Cavity);
    }
}
