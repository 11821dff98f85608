//! Static vacuum extensions of Schwarzschild boundary data.
//!
//! The crate solves the static vacuum Einstein equations outside a prescribed inner
//! boundary, perturbatively around the spatial Schwarzschild metric written in geodesic
//! gauge `g = dr² + r(r−2m)γ`. The pieces are:
//!
//! * [`schwarzschild`] – the radial background and its derived quantities,
//! * [`legendre`] – Legendre functions with uniform bounds,
//! * [`sphharm`] – spectral calculus on the round sphere,
//! * [`spaces`] – radial grids and weighted norms,
//! * [`elliptic`] – mode-by-mode radial ODE solvers,
//! * [`geometry`] – metrics in geodesic gauge and their curvature,
//! * [`linearized`] – the linearized boundary-value problem,
//! * [`ckvf`] – conformal Killing fields and their radial extension,
//! * [`nonlinear`] – the full problem by a frozen-Jacobian iteration.

// Negated comparisons are used deliberately so that NaN inputs fail validation, and the
// numerical kernels index several parallel arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ckvf;
pub mod elliptic;
pub mod error;
pub mod geometry;
pub mod legendre;
pub mod linearized;
pub mod nonlinear;
mod ode;
pub mod schwarzschild;
pub mod spaces;
pub mod sphharm;

pub use error::{Error, Result};
pub use geometry::{BartnikData, FoliatedMetric};
pub use linearized::{LinearizedData, LinearizedSolver};
pub use nonlinear::{Perturbation, PerturbationTarget, SolveOptions, SolveReport};
pub use schwarzschild::Background;
pub use spaces::{RadialGrid, RadialScalar};
pub use sphharm::{ScalarField, SphGrid, SymTensor};

/// Crate version, embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
