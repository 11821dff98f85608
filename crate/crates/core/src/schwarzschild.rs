//! Closed-form quantities of the conformal Schwarzschild background.
//!
//! In geodesic gauge the conformally rescaled Schwarzschild metric reads
//! `g_sc = dr² + r(r − 2m₀) γ_{S²}` on `r ≥ n·m₀`, with potential
//! `u_sc = ln √(1 − 2m₀/r)`. Everything here is evaluated lazily from closed
//! forms so that the values can serve as exactness anchors for the other modules.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Background parameters: mass `m0` and radius ratio `n`, boundary at `r0 = n·m0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// Mass parameter (length units), strictly positive.
    pub m0: f64,
    /// Boundary radius in units of `m0`, strictly greater than 2.
    pub n: f64,
}

/// Pointwise background values at a radius `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundValues {
    /// Radius at which the values were evaluated.
    pub r: f64,
    /// `u_sc = ln √(1 − 2m₀/r)`.
    pub u: f64,
    /// `∂_r u_sc = m₀ / (r(r − 2m₀))`.
    pub du: f64,
    /// `∂²_r u_sc`.
    pub d2u: f64,
    /// Mean curvature of the level sphere, `2(r − m₀)/(r(r − 2m₀))`.
    pub tr_k: f64,
    /// `∂_r trK_sc`.
    pub dtr_k: f64,
    /// Angular metric factor `r(r − 2m₀)` so that `g_sc(r) = r(r−2m₀) γ_{S²}`.
    pub area_factor: f64,
}

impl Background {
    /// Validates and constructs a background.
    pub fn new(m0: f64, n: f64) -> Result<Self> {
        if !(m0 > 0.0 && m0.is_finite()) {
            return Err(Error::Config(format!("m0 must be positive, got {m0}")));
        }
        if !(n > 2.0 && n.is_finite()) {
            return Err(Error::Config(format!("n must exceed 2, got {n}")));
        }
        Ok(Self { m0, n })
    }

    /// Boundary radius `n·m0`.
    pub fn r0(&self) -> f64 {
        self.n * self.m0
    }

    /// Scale `n(n−2)m₀²` of the boundary sphere metric `γ_sc = n(n−2)m₀² γ_{S²}`.
    pub fn boundary_area_factor(&self) -> f64 {
        self.n * (self.n - 2.0) * self.m0 * self.m0
    }

    fn check(&self, r: f64) -> Result<()> {
        // Allow a relative rounding slack at the boundary node.
        if !(r >= self.r0() * (1.0 - 1e-14)) || !r.is_finite() {
            return Err(Error::Domain(format!(
                "radius {r} lies inside the boundary r0 = {}",
                self.r0()
            )));
        }
        Ok(())
    }

    /// Evaluates every background quantity at radius `r ≥ n·m0`.
    pub fn eval(&self, r: f64) -> Result<BackgroundValues> {
        self.check(r)?;
        let m = self.m0;
        let q = r * (r - 2.0 * m);
        let du = m / q;
        let dq = 2.0 * (r - m);
        Ok(BackgroundValues {
            r,
            u: 0.5 * (1.0 - 2.0 * m / r).ln(),
            du,
            d2u: -m * dq / (q * q),
            tr_k: dq / q,
            dtr_k: (2.0 * q - dq * dq) / (q * q),
            area_factor: q,
        })
    }

    /// `u_sc(r)`; panics only through [`Background::eval`]'s domain check being skipped,
    /// so callers on validated grids may use it directly.
    pub fn u(&self, r: f64) -> f64 {
        0.5 * (1.0 - 2.0 * self.m0 / r).ln()
    }

    /// `∂_r u_sc(r) = m₀/(r(r−2m₀))`.
    pub fn du(&self, r: f64) -> f64 {
        self.m0 / (r * (r - 2.0 * self.m0))
    }

    /// `trK_sc(r) = 2(r−m₀)/(r(r−2m₀))`.
    pub fn tr_k(&self, r: f64) -> f64 {
        2.0 * (r - self.m0) / (r * (r - 2.0 * self.m0))
    }

    /// `r(r−2m₀)`.
    pub fn area_factor(&self, r: f64) -> f64 {
        r * (r - 2.0 * self.m0)
    }

    /// Integrating factor `L(r) = exp ∫_{r0}^r trK_sc = r(r−2m₀)/(n(n−2)m₀²)`.
    pub fn transport_factor(&self, r: f64) -> f64 {
        self.area_factor(r) / self.boundary_area_factor()
    }

    /// Boundary mean curvature of the physical Schwarzschild sphere, `2√(1−2/n)/(n m₀)`.
    pub fn boundary_mean_curvature(&self) -> f64 {
        2.0 * (1.0 - 2.0 / self.n).sqrt() / self.r0()
    }

    /// Physical lapse `f_sc = e^{u_sc} = √(1 − 2m₀/r)`.
    pub fn lapse(&self, r: f64) -> f64 {
        (1.0 - 2.0 * self.m0 / r).sqrt()
    }

    /// `z = r/m₀ − 1`, the argument of the radial Legendre functions.
    pub fn z_of_r(&self, r: f64) -> f64 {
        r / self.m0 - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn boundary_values_for_unit_mass() {
        let bg = Background::new(1.0, 3.0).unwrap();
        let v = bg.eval(3.0).unwrap();
        assert_relative_eq!(v.tr_k, 4.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(v.u, (1.0f64 / 3.0).sqrt().ln(), epsilon = 1e-15);
        assert_relative_eq!(v.du, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn far_field_mean_curvature_is_flat() {
        let bg = Background::new(1.0, 3.0).unwrap();
        let r = 1e6;
        assert!((bg.tr_k(r) * r / 2.0 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_parameters_and_radii() {
        assert!(Background::new(1.0, 2.0).is_err());
        assert!(Background::new(0.0, 3.0).is_err());
        let bg = Background::new(1.0, 3.0).unwrap();
        assert!(matches!(bg.eval(2.5), Err(Error::Domain(_))));
    }

    #[test]
    fn potential_is_harmonic_along_the_radius() {
        let bg = Background::new(0.7, 2.3).unwrap();
        for &r in &[bg.r0(), 2.0, 5.0, 40.0, 1e3] {
            let v = bg.eval(r.max(bg.r0())).unwrap();
            let lap = v.d2u + v.tr_k * v.du;
            assert!(lap.abs() <= 1e-15 * v.d2u.abs().max(1e-300) * 10.0 + 1e-18);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let bg = Background::new(1.3, 3.5).unwrap();
        let r = 7.0;
        let h = 1e-5;
        let fd = |f: &dyn Fn(f64) -> f64| (f(r + h) - f(r - h)) / (2.0 * h);
        let v = bg.eval(r).unwrap();
        assert_relative_eq!(v.du, fd(&|s| bg.u(s)), max_relative = 1e-8);
        assert_relative_eq!(v.d2u, fd(&|s| bg.du(s)), max_relative = 1e-7);
        assert_relative_eq!(v.dtr_k, fd(&|s| bg.tr_k(s)), max_relative = 1e-7);
    }

    #[test]
    fn transport_factor_integrates_mean_curvature() {
        let bg = Background::new(1.0, 3.0).unwrap();
        // ∫ trK = ln(r(r−2m)) + const
        let r = 11.0;
        let expected = (bg.area_factor(r) / bg.area_factor(bg.r0())).ln();
        assert_relative_eq!(bg.transport_factor(r).ln(), expected, epsilon = 1e-14);
        assert_relative_eq!(bg.transport_factor(bg.r0()), 1.0, epsilon = 1e-15);
    }
}
