//! Batch driver for the static vacuum solvers and verifiers.
//!
//! Every subcommand reads a [`RunConfig`] (TOML file plus command-line overrides), writes
//! CSV profiles and a JSON report into the output directory and exits with a category
//! code: 0 success, 2 configuration, 3 numerical failure, 4 trust-region exit, 5 internal
//! invariant violation. Reports embed the configuration hash and the producing versions
//! and contain no timestamps, so identical inputs give byte-identical reports.

// Negated comparisons are used deliberately so that NaN inputs fail validation, and the
// numerical kernels index several parallel arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod output;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use output::{exit_code, kind, Failure, OutDir, Report, Versions};
use staticvac::{Error, Result};
use std::path::PathBuf;

/// Command-line interface.
#[derive(Debug, Parser)]
#[command(name = "staticvac", version, about = "Static vacuum extensions of Schwarzschild boundary data")]
pub struct Cli {
    /// Shared options.
    #[command(flatten)]
    pub common: Common,
    /// Subcommand.
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand; each overrides the configuration file.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Boundary radius in units of the mass.
    #[arg(long, global = true)]
    pub n: Option<f64>,
    /// Background mass.
    #[arg(long, global = true)]
    pub m0: Option<f64>,
    /// Decay rate.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Angular band.
    #[arg(long, global = true)]
    pub lmax: Option<usize>,
    /// Radial nodes.
    #[arg(long, global = true)]
    pub nr: Option<usize>,
    /// Solver tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Iteration cap.
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the background Dirichlet problem mode by mode.
    Elliptic {
        /// Use a manufactured solution with known forcing.
        #[arg(long)]
        manufactured: bool,
        /// Restrict to one mode.
        #[arg(long, num_args = 2, value_names = ["L", "M"], allow_hyphen_values = true)]
        mode: Option<Vec<i64>>,
        /// Unit boundary value in the selected mode, no forcing.
        #[arg(long)]
        homogeneous: bool,
    },
    /// Solve the full problem for perturbed Schwarzschild data.
    Solve,
    /// Check Legendre identities and uniform bounds.
    VerifyLegendre {
        /// Largest degree.
        #[arg(long)]
        ell_max: Option<usize>,
    },
    /// Sample the mode estimates with random data.
    VerifyEstimates {
        /// Samples per degree.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Evaluate the weighted Hardy inequality on the background.
    VerifyHardy {
        /// Weight exponent.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Scan the kernel candidates of every degree.
    KernelScan {
        /// Blow-up threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// End of the scan in boundary radii.
        #[arg(long)]
        r_max: Option<f64>,
    },
    /// Extend conformal Killing generators and check them on the background.
    Ckv {
        /// Generators (`rotation-x|y|z`, `boost-x|y|z`, `all`).
        #[arg(long, num_args = 1..)]
        basis: Option<Vec<String>>,
    },
}

impl Command {
    /// Report name of the subcommand.
    pub fn name(&self) -> &'static str {
        match self {
            Command::Elliptic { .. } => "elliptic",
            Command::Solve => "solve",
            Command::VerifyLegendre { .. } => "verify-legendre",
            Command::VerifyEstimates { .. } => "verify-estimates",
            Command::VerifyHardy { .. } => "verify-hardy",
            Command::KernelScan { .. } => "kernel-scan",
            Command::Ckv { .. } => "ckv",
        }
    }
}

/// Builds the effective configuration from the file and the overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let c = &cli.common;
    macro_rules! set {
        ($src:expr, $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(c.n, cfg.n);
    set!(c.m0, cfg.m0);
    set!(c.delta, cfg.delta);
    set!(c.lmax, cfg.l_max);
    set!(c.nr, cfg.n_r);
    set!(c.tol, cfg.tol);
    set!(c.max_iter, cfg.max_iter);
    set!(c.seed, cfg.seed);
    match &cli.command {
        Command::Elliptic { manufactured, mode, homogeneous } => {
            cfg.elliptic.manufactured |= *manufactured;
            cfg.elliptic.homogeneous |= *homogeneous;
            if let Some(v) = mode {
                if v[0] < 0 {
                    return Err(Error::Config(format!("mode degree must be non-negative, got {}", v[0])));
                }
                cfg.elliptic.mode = Some((v[0] as usize, v[1]));
            }
        }
        Command::Solve => {}
        Command::VerifyLegendre { ell_max } => set!(ell_max, cfg.legendre.ell_max),
        Command::VerifyEstimates { samples } => set!(samples, cfg.estimates.samples),
        Command::VerifyHardy { tau } => set!(tau, cfg.hardy.tau),
        Command::KernelScan { threshold, r_max } => {
            set!(threshold, cfg.kernel.threshold);
            set!(r_max, cfg.kernel.r_max);
        }
        Command::Ckv { basis } => set!(basis, cfg.ckv.basis),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(command: &Command, cfg: &RunConfig, out: &OutDir) -> Result<serde_json::Value> {
    match command {
        Command::Elliptic { .. } => commands::elliptic(cfg, out),
        Command::Solve => commands::solve(cfg, out),
        Command::VerifyLegendre { .. } => commands::verify_legendre(cfg, out),
        Command::VerifyEstimates { .. } => commands::verify_estimates(cfg, out),
        Command::VerifyHardy { .. } => commands::verify_hardy(cfg, out),
        Command::KernelScan { .. } => commands::kernel(cfg, out),
        Command::Ckv { .. } => commands::ckv(cfg, out),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let name = cli.command.name();
    let cfg = match effective_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("staticvac {name}: {e}");
            return exit_code(&e);
        }
    };
    let out = match OutDir::create(&cli.common.out) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("staticvac {name}: {e}");
            return exit_code(&e);
        }
    };
    let outcome = dispatch(&cli.command, &cfg, &out);
    let (result, error, code) = match outcome {
        Ok(v) => (Some(v), None, 0),
        Err(e) => {
            eprintln!("staticvac {name}: {e}");
            let code = exit_code(&e);
            (None, Some(Failure { kind: kind(&e), message: e.to_string(), exit_code: code }), code)
        }
    };
    let report = Report {
        command: name,
        status: if code == 0 { "ok" } else { "failed" },
        config_hash: cfg.hash(),
        versions: Versions::current(),
        config: &cfg,
        result,
        error,
    };
    match out.write_report(&format!("{name}.json"), &report) {
        Ok(_) => code,
        Err(e) => {
            eprintln!("staticvac {name}: {e}");
            exit_code(&e)
        }
    }
}
