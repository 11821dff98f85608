//! Error type shared by every solver and verifier in the crate.

use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Each variant maps onto one of the command-line exit categories: configuration
/// problems, numerical failures, trust-region exits and internal invariant violations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// A configuration value violates its documented constraints.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Input arrays disagree in shape.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A series, quadrature or iteration did not reach the requested tolerance.
    #[error("convergence failure: {0}")]
    Convergence(String),
    /// Data violates a decay or admissibility requirement.
    #[error("inadmissible data: {0}")]
    Inadmissible(String),
    /// A linear system was singular or too ill-conditioned to trust.
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),
    /// The nonlinear iteration diverged.
    #[error("divergence: {0}")]
    Divergence(String),
    /// Data lie outside the configured perturbative trust region.
    #[error("outside trust region: {0}")]
    TrustRegion(String),
    /// An internal consistency check failed.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
