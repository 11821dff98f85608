//! Report and profile writers.

use crate::config::RunConfig;
use serde::Serialize;
use staticvac::sphharm::{mode_lm, n_modes};
use staticvac::{Error, Result};
use std::path::{Path, PathBuf};

/// Versions of the crates that produced a report.
#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    /// Solver library.
    pub staticvac: &'static str,
    /// Command-line driver.
    pub cli: &'static str,
}

impl Versions {
    /// Versions of this build.
    pub fn current() -> Self {
        Self { staticvac: staticvac::VERSION, cli: env!("CARGO_PKG_VERSION") }
    }
}

/// Failure description embedded in a report.
#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    /// Error category.
    pub kind: &'static str,
    /// Human-readable message.
    pub message: String,
    /// Process exit code.
    pub exit_code: i32,
}

/// A machine-readable run report.
#[derive(Debug, Clone, Serialize)]
pub struct Report<'a> {
    /// Subcommand.
    pub command: &'a str,
    /// `"ok"` or `"failed"`.
    pub status: &'static str,
    /// SHA-256 of the canonical configuration.
    pub config_hash: String,
    /// Producing versions.
    pub versions: Versions,
    /// The effective configuration.
    pub config: &'a RunConfig,
    /// Command-specific results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    /// Failure details.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<Failure>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Invariant(format!("cannot write {}: {e}", path.display()))
}

/// Output directory handle.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    /// Creates the directory if needed.
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    /// Path of a file in the directory.
    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes a report as pretty JSON.
    pub fn write_report(&self, name: &str, report: &Report<'_>) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(report).map_err(|e| io_err(&path, e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    /// Writes a profile table with columns `r, l0m0, l1m-1, …`; `coeff(i, k)` is the
    /// coefficient of mode index `k` at node `i`.
    pub fn write_profile(&self, name: &str, r: &[f64], l_max: usize, coeff: impl Fn(usize, usize) -> f64) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        let mut header = vec!["r".to_string()];
        header.extend((0..n_modes(l_max)).map(|k| {
            let (l, m) = mode_lm(k);
            format!("l{l}m{m}")
        }));
        w.write_record(&header).map_err(|e| io_err(&path, e))?;
        for (i, ri) in r.iter().enumerate() {
            let mut row = vec![format!("{ri:e}")];
            row.extend((0..n_modes(l_max)).map(|k| format!("{:e}", coeff(i, k))));
            w.write_record(&row).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    /// Writes an arbitrary table.
    pub fn write_table(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(header).map_err(|e| io_err(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

/// Exit code of an error category: 2 configuration, 3 numerical failure, 4 trust region,
/// 5 internal invariant violation.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::TrustRegion(_) => 4,
        Error::Invariant(_) => 5,
        _ => 3,
    }
}

/// Short category name of an error.
pub fn kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::Config(_) => "config",
        Error::Shape(_) => "shape",
        Error::Convergence(_) => "convergence",
        Error::Inadmissible(_) => "inadmissible",
        Error::IllConditioned(_) => "ill-conditioned",
        Error::Divergence(_) => "divergence",
        Error::TrustRegion(_) => "trust-region",
        Error::Invariant(_) => "invariant",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_categories() {
        assert_eq!(exit_code(&Error::Config(String::new())), 2);
        assert_eq!(exit_code(&Error::Convergence(String::new())), 3);
        assert_eq!(exit_code(&Error::Divergence(String::new())), 3);
        assert_eq!(exit_code(&Error::TrustRegion(String::new())), 4);
        assert_eq!(exit_code(&Error::Invariant(String::new())), 5);
    }

    #[test]
    fn profile_header_labels_modes() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(dir.path()).unwrap();
        let p = out.write_profile("p.csv", &[1.0, 2.0], 1, |i, k| (i * 10 + k) as f64).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, "r,l0m0,l1m-1,l1m0,l1m1");
        assert_eq!(text.lines().count(), 3);
    }
}
