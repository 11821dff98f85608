//! Run configuration: a TOML file with flat physical parameters and one optional block per
//! subcommand, overridable from the command line.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use staticvac::{Background, Error, Perturbation, RadialGrid, Result};
use std::path::Path;

/// Largest supported angular band.
pub const MAX_L: usize = 32;
/// Largest supported number of radial nodes.
pub const MAX_NODES: usize = 400;
/// Smallest supported number of radial nodes.
pub const MIN_NODES: usize = 16;

/// Settings of the `elliptic` subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipticBlock {
    /// Solve a manufactured problem with known solution instead of the configured data.
    pub manufactured: bool,
    /// Restrict to one mode `(ℓ, m)`.
    pub mode: Option<(usize, i64)>,
    /// Solve with zero forcing and unit boundary value in the selected mode.
    pub homogeneous: bool,
}

/// Settings of `verify-legendre`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LegendreBlock {
    /// Largest degree.
    pub ell_max: usize,
    /// Arguments at which the identities are checked.
    pub z: Vec<f64>,
}

impl Default for LegendreBlock {
    fn default() -> Self {
        Self { ell_max: 50, z: vec![1.5, 2.0, 10.0, 1e3] }
    }
}

/// Settings of `verify-estimates`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatesBlock {
    /// Random samples per degree.
    pub samples: usize,
}

impl Default for EstimatesBlock {
    fn default() -> Self {
        Self { samples: 4 }
    }
}

/// Settings of `verify-hardy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardyBlock {
    /// Weight exponent `τ > 0`.
    pub tau: f64,
}

impl Default for HardyBlock {
    fn default() -> Self {
        Self { tau: 1.0 }
    }
}

/// Settings of `kernel-scan`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelBlock {
    /// Blow-up threshold for `|a|`.
    pub threshold: f64,
    /// End of the scan in units of the boundary radius.
    pub r_max: f64,
}

impl Default for KernelBlock {
    fn default() -> Self {
        Self { threshold: 1e6, r_max: 1e3 }
    }
}

/// Settings of `ckv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CkvBlock {
    /// Generator names (`rotation-x|y|z`, `boost-x|y|z`) or `all`.
    pub basis: Vec<String>,
}

impl Default for CkvBlock {
    fn default() -> Self {
        Self { basis: vec!["all".into()] }
    }
}

/// Complete configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Boundary radius in units of the mass.
    pub n: f64,
    /// Background mass.
    pub m0: f64,
    /// Decay rate of the weighted spaces.
    pub delta: f64,
    /// Angular band.
    pub l_max: usize,
    /// Number of radial nodes.
    pub n_r: usize,
    /// Cut radius (default: `10³` boundary radii).
    pub r_cut: Option<f64>,
    /// Solver tolerance.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Seed of every random sample.
    pub seed: u64,
    /// Trust radius of the nonlinear solver.
    pub trust_radius: f64,
    /// Boundary-data perturbations.
    pub perturbation: Vec<Perturbation>,
    /// `elliptic` settings.
    pub elliptic: EllipticBlock,
    /// `verify-legendre` settings.
    pub legendre: LegendreBlock,
    /// `verify-estimates` settings.
    pub estimates: EstimatesBlock,
    /// `verify-hardy` settings.
    pub hardy: HardyBlock,
    /// `kernel-scan` settings.
    pub kernel: KernelBlock,
    /// `ckv` settings.
    pub ckv: CkvBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 3.0,
            m0: 1.0,
            delta: staticvac::spaces::DEFAULT_DELTA,
            l_max: 4,
            n_r: 128,
            r_cut: None,
            tol: 1e-10,
            max_iter: 20,
            seed: 0,
            trust_radius: staticvac::nonlinear::DEFAULT_TRUST_RADIUS,
            perturbation: Vec::new(),
            elliptic: EllipticBlock::default(),
            legendre: LegendreBlock::default(),
            estimates: EstimatesBlock::default(),
            hardy: HardyBlock::default(),
            kernel: KernelBlock::default(),
            ckv: CkvBlock::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Parses TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("malformed configuration: {e}")))
    }

    /// Checks every documented constraint.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.n > 2.0) || !self.n.is_finite() {
            return bad(format!("n must exceed 2, got {}", self.n));
        }
        if !(self.m0 > 0.0) || !self.m0.is_finite() {
            return bad(format!("m0 must be positive, got {}", self.m0));
        }
        if !(self.delta > -1.0 && self.delta <= -0.5) {
            return bad(format!("delta must lie in (-1, -0.5], got {}", self.delta));
        }
        if !(2..=MAX_L).contains(&self.l_max) {
            return bad(format!("l_max must lie in [2, {MAX_L}], got {}", self.l_max));
        }
        if !(MIN_NODES..=MAX_NODES).contains(&self.n_r) {
            return bad(format!("n_r must lie in [{MIN_NODES}, {MAX_NODES}], got {}", self.n_r));
        }
        if let Some(rc) = self.r_cut {
            if !(rc > self.n * self.m0) {
                return bad(format!("r_cut {rc} must exceed the boundary radius {}", self.n * self.m0));
            }
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.trust_radius > 0.0) {
            return bad(format!("trust_radius must be positive, got {}", self.trust_radius));
        }
        for p in &self.perturbation {
            if p.l > self.l_max || p.m.unsigned_abs() as usize > p.l || !p.amplitude.is_finite() {
                return bad(format!("perturbation {p:?} is not a mode of the band l_max = {}", self.l_max));
            }
        }
        if let Some((l, m)) = self.elliptic.mode {
            if l > self.l_max || m.unsigned_abs() as usize > l {
                return bad(format!("elliptic mode ({l}, {m}) is not in the band l_max = {}", self.l_max));
            }
        }
        if self.elliptic.homogeneous && self.elliptic.mode.is_none() {
            return bad("elliptic.homogeneous requires elliptic.mode".into());
        }
        if !(self.hardy.tau > 0.0) {
            return bad(format!("hardy.tau must be positive, got {}", self.hardy.tau));
        }
        if !(self.kernel.threshold > 0.0) || !(self.kernel.r_max > 1.0) {
            return bad("kernel.threshold must be positive and kernel.r_max must exceed 1".into());
        }
        if self.legendre.z.iter().any(|z| !(*z > 1.0)) {
            return bad("legendre.z values must exceed 1".into());
        }
        if self.estimates.samples == 0 {
            return bad("estimates.samples must be at least 1".into());
        }
        Ok(())
    }

    /// The background.
    pub fn background(&self) -> Result<Background> {
        Background::new(self.m0, self.n)
    }

    /// The radial grid.
    pub fn grid(&self, bg: &Background) -> Result<RadialGrid> {
        match self.r_cut {
            Some(rc) => RadialGrid::new(bg, self.n_r, rc),
            None => RadialGrid::with_default_cut(bg, self.n_r),
        }
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configuration serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}
