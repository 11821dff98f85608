//! Legendre functions `P_ℓ`, `Q_ℓ` on `(1, ∞)` normalized so that
//! `z^{−ℓ} P_ℓ(z) → 1` and `z^{ℓ+1} Q_ℓ(z) → 1` as `z → ∞`.
//!
//! `P_ℓ` is the terminating Frobenius sum `Σ a_k z^{ℓ−k}`; `Q_ℓ` is the convergent
//! series `Σ b_k z^{−ℓ−1−k}`. Both are also available in *scaled* form
//! (`P̂ = z^{−ℓ}P`, `Q̂ = z^{ℓ+1}Q`) together with two `z`-derivatives, which is what the
//! radial solvers consume: the scaled functions stay of moderate size for every degree,
//! so products such as `P_ℓ(z)Q_ℓ(t)` can be formed without overflow.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Below this argument the `Q` series converges slowly and a backward recurrence is used.
pub const SERIES_SWITCH: f64 = 1.2;
/// Default relative tolerance for the `Q` series.
pub const DEFAULT_TOL: f64 = 1e-16;
const MAX_TERMS: usize = 400_000;
/// Cancellation factor of the finite `P` sum above which the forward recurrence is used.
const P_CANCELLATION_LIMIT: f64 = 1e6;

/// A function value together with its first derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegendreValue {
    /// Function value.
    pub value: f64,
    /// First derivative in `z`.
    pub deriv: f64,
}

/// Scaled function with two derivatives: `v(z)`, `v'(z)`, `v''(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scaled {
    /// Value of the scaled function.
    pub v: f64,
    /// First derivative.
    pub d1: f64,
    /// Second derivative.
    pub d2: f64,
}

fn check_z(z: f64) -> Result<()> {
    if !(z > 1.0) || !z.is_finite() {
        return Err(Error::Domain(format!("Legendre argument must exceed 1, got {z}")));
    }
    Ok(())
}

/// Coefficients `a_0..a_ℓ` of the terminating expansion `P_ℓ(z) = Σ a_k z^{ℓ−k}`.
pub fn p_coefficients(ell: usize) -> Vec<f64> {
    let l = ell as f64;
    let mut a = vec![0.0; ell + 1];
    a[0] = 1.0;
    for k in 2..=ell {
        let kf = k as f64;
        a[k] = (l - kf + 2.0) * (l - kf + 1.0) / (kf * kf - kf * (2.0 * l + 1.0)) * a[k - 2];
    }
    a
}

/// Ratio `b_k / b_{k−2}` of the `Q_ℓ` series coefficients.
fn q_ratio(ell: usize, k: usize) -> f64 {
    let (l, kf) = (ell as f64, k as f64);
    (l + kf - 1.0) * (l + kf) / (kf * (2.0 * l + kf + 1.0))
}

/// Factor relating the classical first-kind function to the normalized one:
/// `P_ℓ = p_normalization(ℓ) · 𝐏_ℓ`, equal to `√π Γ(ℓ+1) / (2^ℓ Γ(ℓ+½))`.
pub fn p_normalization(ell: usize) -> f64 {
    (1..=ell).fold(1.0, |acc, k| acc * k as f64 / (2.0 * k as f64 - 1.0))
}

/// Factor relating the classical second-kind function to the normalized one:
/// `Q_ℓ = q_normalization(ℓ) · 𝐐_ℓ`, equal to `2^{ℓ+1} Γ(ℓ+3/2) / (√π Γ(ℓ+1))`.
pub fn q_normalization(ell: usize) -> f64 {
    (1..=ell).fold(1.0, |acc, k| acc * (2.0 * k as f64 + 1.0) / k as f64)
}

/// Classical Legendre polynomial `𝐏_ℓ(z)` and derivative by the forward three-term
/// recurrence (stable for the dominant solution).
pub fn classical_p(ell: usize, z: f64) -> LegendreValue {
    let (mut p0, mut p1) = (1.0, z);
    if ell == 0 {
        return LegendreValue { value: 1.0, deriv: 0.0 };
    }
    for k in 1..ell {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * z * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let l = ell as f64;
    LegendreValue { value: p1, deriv: l * (z * p1 - p0) / (z * z - 1.0) }
}

/// Classical second-kind function `𝐐_ℓ(z)`, `z > 1`, with derivative, by Miller's
/// backward recurrence normalized against `𝐐_0 = artanh(1/z)`.
pub fn classical_q(ell: usize, z: f64) -> Result<LegendreValue> {
    check_z(z)?;
    let q0 = (1.0 / z).atanh();
    if ell == 0 {
        return Ok(LegendreValue { value: q0, deriv: -1.0 / (z * z - 1.0) });
    }
    let zeta2 = (z + (z * z - 1.0).sqrt()).powi(2);
    let extra = (45.0 / zeta2.ln()).ceil() as usize + 20;
    let top = ell + extra;
    if top > MAX_TERMS {
        return Err(Error::Convergence(format!(
            "backward recurrence for Q_{ell}({z}) needs {top} steps"
        )));
    }
    // q[k] holds an unnormalized multiple of 𝐐_k for k ≤ ell (plus k = ell−1 kept).
    let (mut qk1, mut qk) = (0.0_f64, 1e-280_f64);
    let mut q_ell = 0.0;
    let mut q_ellm1 = 0.0;
    for k in (1..=top).rev() {
        let kf = k as f64;
        let qkm1 = ((2.0 * kf + 1.0) * z * qk - (kf + 1.0) * qk1) / kf;
        qk1 = qk;
        qk = qkm1;
        if k == ell {
            q_ell = qk1;
            q_ellm1 = qk;
        }
        if qk.abs() > 1e250 {
            qk /= 1e250;
            qk1 /= 1e250;
            q_ell /= 1e250;
            q_ellm1 /= 1e250;
        }
    }
    let scale = q0 / qk;
    let (v, vm1) = (q_ell * scale, q_ellm1 * scale);
    let l = ell as f64;
    Ok(LegendreValue { value: v, deriv: l * (z * v - vm1) / (z * z - 1.0) })
}

/// Scaled first-kind function `P̂_ℓ(z) = z^{−ℓ}P_ℓ(z)` with two derivatives.
pub fn p_scaled(ell: usize, z: f64) -> Result<Scaled> {
    check_z(z)?;
    let a = p_coefficients(ell);
    let iz = 1.0 / z;
    let (mut v, mut d1, mut d2, mut abs_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut pw = 1.0; // z^{-k}
    for (k, &ak) in a.iter().enumerate() {
        let kf = k as f64;
        v += ak * pw;
        abs_sum += (ak * pw).abs();
        d1 -= kf * ak * pw * iz;
        d2 += kf * (kf + 1.0) * ak * pw * iz * iz;
        pw *= iz;
    }
    if abs_sum <= P_CANCELLATION_LIMIT * v.abs() {
        return Ok(Scaled { v, d1, d2 });
    }
    // Heavy cancellation: rebuild from the classical recurrence.
    let l = ell as f64;
    let c = classical_p(ell, z);
    let norm = p_normalization(ell);
    let p = norm * c.value;
    let dp = norm * c.deriv;
    let d2p = (l * (l + 1.0) * p - 2.0 * z * dp) / (z * z - 1.0);
    let s = z.powf(-l);
    Ok(Scaled {
        v: s * p,
        d1: s * (dp - l * p * iz),
        d2: s * (d2p - 2.0 * l * dp * iz + l * (l + 1.0) * p * iz * iz),
    })
}

/// Scaled second-kind function `Q̂_ℓ(z) = z^{ℓ+1}Q_ℓ(z)` with two derivatives.
///
/// `tol` is the relative truncation tolerance of the series (applied to `Q̂`).
pub fn q_scaled(ell: usize, z: f64, tol: f64) -> Result<Scaled> {
    check_z(z)?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let l = ell as f64;
    if z < SERIES_SWITCH {
        let c = classical_q(ell, z)?;
        let norm = q_normalization(ell);
        let q = norm * c.value;
        let dq = norm * c.deriv;
        let d2q = (l * (l + 1.0) * q - 2.0 * z * dq) / (z * z - 1.0);
        let s = z.powf(l + 1.0);
        let iz = 1.0 / z;
        return Ok(Scaled {
            v: s * q,
            d1: s * (dq + (l + 1.0) * q * iz),
            d2: s * (d2q + 2.0 * (l + 1.0) * dq * iz + l * (l + 1.0) * q * iz * iz),
        });
    }
    let iz = 1.0 / z;
    let w = iz * iz;
    let (mut v, mut d1, mut d2) = (1.0, 0.0, 0.0);
    let mut b = 1.0;
    let mut pw = 1.0; // z^{-k}
    let mut k = 0usize;
    // Beyond this index the coefficient ratio b_k/b_{k−2} is below one, so the
    // remaining terms are dominated by a geometric series with ratio w.
    let monotone_from = (l * l - l - 4.0).max(0.0) / 2.0 + 2.0;
    loop {
        k += 2;
        if k > MAX_TERMS {
            return Err(Error::Convergence(format!(
                "Q_{ell}({z}) series did not reach tolerance {tol:e}"
            )));
        }
        b *= q_ratio(ell, k);
        pw *= w;
        let kf = k as f64;
        let term = b * pw;
        v += term;
        d1 -= kf * term * iz;
        d2 += kf * (kf + 1.0) * term * iz * iz;
        if kf >= monotone_from {
            // Tail of the derivative series is bounded by the same geometric argument with
            // polynomially growing factors; require the next few terms to be negligible too.
            let tail = term * w / (1.0 - w);
            let weight = 1.0 + (kf + 2.0) * (kf + 3.0) * iz * iz;
            if tail * weight <= tol * v {
                break;
            }
        }
    }
    Ok(Scaled { v, d1, d2 })
}

/// `P_ℓ(z)` and `P'_ℓ(z)` in the normalized convention (exact finite sum).
pub fn legendre_p(ell: usize, z: f64) -> Result<LegendreValue> {
    let s = p_scaled(ell, z)?;
    let l = ell as f64;
    let zl = z.powf(l);
    Ok(LegendreValue { value: zl * s.v, deriv: zl * (s.d1 + l * s.v / z) })
}

/// `Q_ℓ(z)` and `Q'_ℓ(z)` in the normalized convention.
pub fn legendre_q(ell: usize, z: f64, tol: f64) -> Result<LegendreValue> {
    let s = q_scaled(ell, z, tol)?;
    let l = ell as f64;
    let zl = z.powf(-(l + 1.0));
    Ok(LegendreValue { value: zl * s.v, deriv: zl * (s.d1 - (l + 1.0) * s.v / z) })
}

/// Both Legendre functions and their derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegendrePair {
    /// Degree ℓ.
    pub ell: usize,
    /// Evaluation point.
    pub z: f64,
    /// `P_ℓ(z)`.
    pub p: f64,
    /// `Q_ℓ(z)`.
    pub q: f64,
    /// `P'_ℓ(z)`.
    pub dp: f64,
    /// `Q'_ℓ(z)`.
    pub dq: f64,
}

impl LegendrePair {
    /// Evaluates the pair at `z`.
    pub fn eval(ell: usize, z: f64, tol: f64) -> Result<Self> {
        let p = legendre_p(ell, z)?;
        let q = legendre_q(ell, z, tol)?;
        Ok(Self { ell, z, p: p.value, q: q.value, dp: p.deriv, dq: q.deriv })
    }

    /// Signed Wronskian constant `(P Q' − P' Q)(z² − 1)`, equal to `−(2ℓ+1)`.
    ///
    /// Evaluated from the scaled functions so that it is accurate for every degree.
    pub fn wronskian(&self) -> f64 {
        signed_wronskian(self.ell, self.z, DEFAULT_TOL).unwrap_or(f64::NAN)
    }
}

/// Signed Wronskian `(P_ℓ Q'_ℓ − P'_ℓ Q_ℓ)(z²−1)` computed from the scaled functions.
pub fn signed_wronskian(ell: usize, z: f64, tol: f64) -> Result<f64> {
    let p = p_scaled(ell, z)?;
    let q = q_scaled(ell, z, tol)?;
    let l = ell as f64;
    // P = z^ℓ P̂, Q = z^{−ℓ−1} Q̂ ⇒ PQ' − P'Q = z^{−1}[P̂Q̂' − P̂'Q̂ − (2ℓ+1)P̂Q̂/z].
    let w = (p.v * q.d1 - p.d1 * q.v - (2.0 * l + 1.0) * p.v * q.v / z) / z;
    Ok(w * (z * z - 1.0))
}

/// Residual of the Legendre equation `(z²−1)y'' + 2zy' − ℓ(ℓ+1)y`, relative to the size
/// of its largest term, for the scaled representation `y = z^s ŷ`.
pub fn ode_relative_residual(ell: usize, z: f64, f: Scaled, power: f64) -> f64 {
    let l = ell as f64;
    let s = power;
    let y = f.v;
    let dy = f.d1 + s * f.v / z;
    let d2y = f.d2 + 2.0 * s * f.d1 / z + s * (s - 1.0) * f.v / (z * z);
    let t1 = (z * z - 1.0) * d2y;
    let t2 = 2.0 * z * dy;
    let t3 = l * (l + 1.0) * y;
    (t1 + t2 - t3).abs() / t1.abs().max(t2.abs()).max(t3.abs()).max(f64::MIN_POSITIVE)
}

/// One maximum of a uniform-bound ratio and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioMax {
    /// Maximum ratio over the scanned range.
    pub max: f64,
    /// Degree attaining the maximum.
    pub ell: usize,
    /// Argument attaining the maximum.
    pub z: f64,
    /// Maximum over degrees up to half the range (doubling-stability reference).
    pub max_lower_half: f64,
}

impl RatioMax {
    fn new() -> Self {
        Self { max: 0.0, ell: 0, z: f64::NAN, max_lower_half: 0.0 }
    }
    fn push(&mut self, v: f64, ell: usize, z: f64, lower: bool) {
        if v > self.max {
            self.max = v;
            self.ell = ell;
            self.z = z;
        }
        if lower && v > self.max_lower_half {
            self.max_lower_half = v;
        }
    }
    /// Whether the maximum is finite and at most twice the lower-half maximum.
    pub fn stable(&self) -> bool {
        self.max.is_finite() && self.max <= 2.0 * self.max_lower_half
    }
}

/// Report of the uniform bounds `z^{−ℓ}|P_ℓ| ≤ Cρ^{−ℓ}`, `z^{ℓ+1}|Q_ℓ| ≤ Cρ^{ℓ}` and their
/// derivative versions, with `ρ = 2z/(z+√(z²−1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformBoundReport {
    /// Largest degree scanned.
    pub ell_max: usize,
    /// Lower end of the argument range.
    pub r: f64,
    /// Ratio for `P_ℓ`.
    pub p: RatioMax,
    /// Ratio for `Q_ℓ`.
    pub q: RatioMax,
    /// Ratio for `P'_ℓ` (divided by ℓ).
    pub dp: RatioMax,
    /// Ratio for `Q'_ℓ` (divided by ℓ).
    pub dq: RatioMax,
}

impl UniformBoundReport {
    /// All four maxima finite and stable under doubling of the degree range.
    pub fn all_stable(&self) -> bool {
        self.p.stable() && self.q.stable() && self.dp.stable() && self.dq.stable()
    }
}

/// Scans `1 ≤ ℓ ≤ ell_max` over `z_grid ⊂ [R, ∞)` and reports the largest ratio of each
/// function to its uniform bound profile.
pub fn verify_uniform_bounds(ell_max: usize, z_grid: &[f64], r: f64) -> Result<UniformBoundReport> {
    if !(r > 1.0) {
        return Err(Error::Domain(format!("R must exceed 1, got {r}")));
    }
    if let Some(&z) = z_grid.iter().find(|&&z| z < r) {
        return Err(Error::Domain(format!("grid point {z} lies below R = {r}")));
    }
    let mut rep = UniformBoundReport {
        ell_max,
        r,
        p: RatioMax::new(),
        q: RatioMax::new(),
        dp: RatioMax::new(),
        dq: RatioMax::new(),
    };
    for ell in 1..=ell_max {
        let lower = 2 * ell <= ell_max;
        let l = ell as f64;
        for &z in z_grid {
            let rho = 2.0 * z / (z + (z * z - 1.0).sqrt());
            let ps = p_scaled(ell, z)?;
            let qs = q_scaled(ell, z, DEFAULT_TOL)?;
            // z^{-ℓ}P = P̂ ; z^{ℓ+1}Q = Q̂ ; z^{-(ℓ-1)}P' = zP̂' + ℓP̂ ; z^{ℓ+2}Q' = zQ̂' − (ℓ+1)Q̂.
            let rho_l = rho.powf(l);
            rep.p.push(ps.v.abs() * rho_l, ell, z, lower);
            rep.q.push(qs.v.abs() / rho_l, ell, z, lower);
            rep.dp.push((z * ps.d1 + l * ps.v).abs() * rho_l / l, ell, z, lower);
            rep.dq.push((z * qs.d1 - (l + 1.0) * qs.v).abs() / rho_l / l, ell, z, lower);
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn low_degree_closed_forms() {
        assert_eq!(legendre_p(1, 3.7).unwrap().value, 3.7);
        let p2 = legendre_p(2, 2.0).unwrap().value;
        assert!((p2 - 11.0 / 3.0).abs() <= 4.0 * f64::EPSILON);
        let q0 = legendre_q(0, 3.0, DEFAULT_TOL).unwrap().value;
        assert!((q0 - 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn q1_matches_rescaled_classical_closed_form() {
        let z: f64 = 2.0;
        let classical = z * (1.0 / z).atanh() - 1.0;
        let q1 = legendre_q(1, z, 1e-15).unwrap().value;
        assert_relative_eq!(q1, 3.0 * classical, max_relative = 1e-14);
    }

    #[test]
    fn p5_matches_rescaled_classical_recurrence() {
        let z = 1.5;
        let oracle = p_normalization(5) * classical_p(5, z).value;
        assert_relative_eq!(legendre_p(5, z).unwrap().value, oracle, max_relative = 1e-14);
    }

    #[test]
    fn both_branches_of_q_agree_near_switch() {
        for ell in [0, 1, 4, 17, 40] {
            let z = SERIES_SWITCH + 1e-3;
            let series = q_scaled(ell, z, 1e-17).unwrap();
            let c = classical_q(ell, z).unwrap();
            let rec = q_normalization(ell) * c.value * z.powf(ell as f64 + 1.0);
            assert_relative_eq!(series.v, rec, max_relative = 1e-11);
        }
    }

    #[test]
    fn normalized_limits() {
        for ell in [0, 3, 12] {
            let z = 1e7;
            assert_relative_eq!(q_scaled(ell, z, 1e-16).unwrap().v, 1.0, max_relative = 1e-12);
            assert_relative_eq!(p_scaled(ell, z).unwrap().v, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn wronskian_magnitude() {
        for ell in [0usize, 1, 5, 20, 50] {
            for z in [1.05, 1.5, 2.0, 10.0, 1e3] {
                let w = signed_wronskian(ell, z, 1e-17).unwrap();
                assert_relative_eq!(w, -(2.0 * ell as f64 + 1.0), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn q_decreases_after_scaling() {
        for ell in [0, 2, 9] {
            let mut prev = f64::INFINITY;
            for z in [1.1, 1.3, 2.0, 5.0, 50.0] {
                let q = q_scaled(ell, z, 1e-16).unwrap();
                assert!(q.v > 0.0 && q.v < prev);
                prev = q.v;
            }
        }
    }

    #[test]
    fn rejects_argument_at_or_below_one() {
        assert!(legendre_p(2, 1.0).is_err());
        assert!(legendre_q(2, 0.5, 1e-12).is_err());
    }

    #[test]
    fn rejects_non_positive_tolerance() {
        assert!(matches!(q_scaled(2, 1.3, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn uniform_bound_scan_small() {
        let rep = verify_uniform_bounds(1, &[2.0], 2.0).unwrap();
        assert!(rep.p.max > 0.0 && rep.q.max > 0.0 && rep.dp.max > 0.0 && rep.dq.max > 0.0);
    }
}
