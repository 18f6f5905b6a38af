use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hho_cli::commands::{cmd_check, run};
use hho_cli::config::{Command, RawConfig, RunConfig};
use hho_cli::{CliError, EXIT_NOT_CONVERGED, EXIT_OK};

#[derive(Parser)]
#[command(name = "hho-ns", version, about = "HHO solver for generalized Navier-Stokes flows")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the admissibility conditions and predicted convergence rates.
    Check {
        /// Viscous exponent, e.g. 3/2 or 1.5.
        #[arg(long, value_parser = parse_number)]
        r: f64,
        /// Convective exponent.
        #[arg(long, value_parser = parse_number)]
        s: f64,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
    },
    /// Run the command named in a JSON configuration file.
    Run { config: PathBuf },
    /// Manufactured-solution convergence study.
    Convergence(Overrides),
    /// Lid-driven cavity.
    Cavity(Overrides),
    /// Single solve.
    Solve(Overrides),
}

#[derive(clap::Args)]
struct Overrides {
    /// JSON configuration; defaults are used when omitted.
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

/// Accepts decimals and fractions such as `9/5`.
fn parse_number(s: &str) -> Result<f64, String> {
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("invalid number \"{t}\": {e}"));
    match s.split_once('/') {
        Some((a, b)) => {
            let d = parse(b)?;
            if d == 0.0 {
                return Err("zero denominator".into());
            }
            Ok(parse(a)? / d)
        }
        None => parse(s),
    }
}

fn execute(cli: Cli) -> Result<(String, bool), CliError> {
    let (raw, command, out) = match cli.command {
        Cmd::Check { r, s, k, d } => return Ok((cmd_check(r, s, d, k)?.to_string(), true)),
        Cmd::Run { config } => (RawConfig::read(&config)?, None, None),
        Cmd::Convergence(o) => load(o, Command::Convergence)?,
        Cmd::Cavity(o) => load(o, Command::Cavity)?,
        Cmd::Solve(o) => load(o, Command::Solve)?,
    };
    let mut cfg = RunConfig::resolve(&raw, command)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    run(&cfg)
}

fn load(o: Overrides, command: Command) -> Result<(RawConfig, Option<Command>, Option<PathBuf>), CliError> {
    let raw = match &o.config {
        Some(p) => RawConfig::read(p)?,
        None => RawConfig::default(),
    };
    Ok((raw, Some(command), o.output_dir))
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok((summary, converged)) => {
            println!("{summary}");
            if converged {
                ExitCode::from(EXIT_OK as u8)
            } else {
                eprintln!("error: the nonlinear solver did not converge");
                ExitCode::from(EXIT_NOT_CONVERGED as u8)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
