//! Conformal Killing fields of the boundary sphere and their radial extension.
//!
//! A conformal Killing field `X̄` of the round sphere is extended to the exterior as
//! `X∞ = f(r)(div_γX̄)∂_r + h(r)X̄`, with `X̄` constant along the radial lines. On the
//! background `dr² + φ²γ`, `φ² = r(r − 2m₀)`, this field is conformal Killing exactly when
//!
//! `f'' − ((r − m₀)/φ²)f' + (2m₀²/φ⁴)f = 0`, `h' = 2f/φ²`,
//!
//! with `f(n·m₀) = 0`, `f'(n·m₀) = ½`, `h(n·m₀) = 1` fixing the boundary behaviour. For
//! rotations (Killing fields of `γ`) the extension is trivial, `f ≡ 0`, `h ≡ 1`.
//!
//! The module also evaluates the conformal Lie derivative of a vector field on a foliated
//! metric, and a Hardy-type contraction estimate that rules out decaying conformal
//! Killing fields near Schwarzschild.

use crate::error::{Error, Result};
use crate::geometry::FoliatedMetric;
use crate::schwarzschild::Background;
use crate::spaces::{chained_hardy_radial, composite_gauss, RadialGrid, RadialScalar};
use crate::sphharm::{ck_generator, ck_raw_field, CkKind, Deriv2, ScalarField, SphGrid, SymGrid, TangentField, VecGrid};
use nalgebra::Matrix6;
use crate::ode::dense_samples;
use ode_solvers::System;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

type State3 = ode_solvers::Vector3<f64>;

/// Relative tolerance of the extension integrator.
pub const EXTENSION_RTOL: f64 = 1e-12;

/// Radial extension of one of the six conformal Killing generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkExtension {
    /// Generator index `0..6` (rotations `0..3`, boosts `3..6`).
    pub index: usize,
    /// Generator kind.
    pub kind: CkKind,
    /// Whether the generator is Killing (a rotation).
    pub killing: bool,
    /// Background mass.
    pub m: f64,
    /// Radii.
    pub r: Vec<f64>,
    /// `f`.
    pub f: Vec<f64>,
    /// `f'`.
    pub df: Vec<f64>,
    /// `h`.
    pub h: Vec<f64>,
    /// `h'`.
    pub dh: Vec<f64>,
}

/// The extension system in `t = ln(r/r₀)` with state `(f, r·f', h)`.
struct ExtensionOde {
    m: f64,
    r0: f64,
}

impl System<f64, State3> for ExtensionOde {
    fn system(&self, t: f64, y: &State3, dy: &mut State3) {
        let r = self.r0 * t.exp();
        let m = self.m;
        let p2 = r * (r - 2.0 * m);
        let (f, p) = (y[0], y[1]);
        dy[0] = p;
        dy[1] = p + r * (r - m) / p2 * p - 2.0 * m * m * r * r / (p2 * p2) * f;
        dy[2] = 2.0 * r * f / p2;
    }
}

/// Integrates the extension ODEs for generator `index` at the given radii (the first
/// radius must be the boundary `n·m₀`). Rotations return the trivial extension.
pub fn extend_ck_at(index: usize, bg: &Background, radii: &[f64]) -> Result<CkExtension> {
    if index >= 6 {
        return Err(Error::Domain(format!("conformal Killing index must be below 6, got {index}")));
    }
    let r0 = bg.r0();
    if radii.first().is_none_or(|&r| (r - r0).abs() > 1e-12 * r0) {
        return Err(Error::Domain("radii must start at the boundary".into()));
    }
    if radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("radii must be strictly increasing".into()));
    }
    let (kind, _) = ck_generator(index);
    let n = radii.len();
    let mut ext = CkExtension {
        index,
        kind,
        killing: kind == CkKind::Rotation,
        m: bg.m0,
        r: radii.to_vec(),
        f: vec![0.0; n],
        df: vec![0.0; n],
        h: vec![1.0; n],
        dh: vec![0.0; n],
    };
    if ext.killing {
        return Ok(ext);
    }
    let ode_t = |r: f64| (r / r0).ln();
    let mut y = State3::new(0.0, 0.5 * r0, 1.0);
    ext.df[0] = 0.5;
    for i in 1..n {
        let (t0, t1) = (ode_t(radii[i - 1]), ode_t(radii[i]));
        let out = dense_samples(ExtensionOde { m: bg.m0, r0 }, t0, t1 - t0, 1, y, EXTENSION_RTOL, 1e-14 * r0)
            .map_err(|e| Error::Convergence(format!("extension step to r = {} failed: {e}", radii[i])))?;
        y = out[1].1;
        let r = radii[i];
        ext.f[i] = y[0];
        ext.df[i] = y[1] / r;
        ext.h[i] = y[2];
        ext.dh[i] = 2.0 * y[0] / (r * (r - 2.0 * bg.m0));
    }
    Ok(ext)
}

/// Integrates the extension ODEs on the nodes of a radial grid.
pub fn extend_ck(index: usize, bg: &Background, grid: &RadialGrid) -> Result<CkExtension> {
    extend_ck_at(index, bg, &grid.r)
}

/// The six extensions on a grid.
pub fn extend_all(bg: &Background, grid: &RadialGrid) -> Result<Vec<CkExtension>> {
    (0..6).into_par_iter().map(|i| extend_ck(i, bg, grid)).collect()
}

impl CkExtension {
    /// Least-squares slope of `ln|f|` against `ln r` over nodes in `[r_lo, r_hi]`.
    pub fn growth_slope(&self, r_lo: f64, r_hi: f64) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .r
            .iter()
            .zip(&self.f)
            .filter(|(r, f)| **r >= r_lo && **r <= r_hi && f.abs() > 0.0)
            .map(|(r, f)| (r.ln(), f.abs().ln()))
            .collect();
        if pts.len() < 2 {
            return Err(Error::Domain(format!("fewer than two nonzero samples in [{r_lo}, {r_hi}]")));
        }
        let k = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Ok(sxy / sxx)
    }

    /// `h − (2f' − 2f(r − m)/φ²)`: the first integral linking `h` to `f` (zero for exact
    /// extensions), maximal absolute value relative to `max|h|`.
    pub fn first_integral_defect(&self) -> f64 {
        let m = self.m;
        let scale = self.h.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        self.r
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let p2 = r * (r - 2.0 * m);
                (self.h[i] - 2.0 * self.df[i] + 2.0 * self.f[i] * (r - m) / p2).abs() / scale
            })
            .fold(0.0, f64::max)
    }

    /// The extended field `X∞` at the nodes, with the generator normalized as in
    /// [`ck_raw_field`].
    pub fn vector_field(&self, l_max: usize) -> FoliatedVector {
        let lm = l_max.max(1);
        let base = ck_raw_field(self.index, lm);
        let div = base.divergence();
        let n = self.r.len();
        let mut radial = RadialScalar::zeros(n, lm);
        for i in 0..n {
            for k in 0..div.c.len() {
                radial.val[(i, k)] = self.f[i] * div.c[k];
                radial.d1[(i, k)] = self.df[i] * div.c[k];
            }
        }
        FoliatedVector {
            radial,
            tangential: self.h.iter().map(|h| base.scaled(*h)).collect(),
            d_tangential: self.dh.iter().map(|h| base.scaled(*h)).collect(),
        }
    }

    /// `ℒ_{∂_r}X∞` on the boundary as `(radial coefficient of div_γX̄, tangential factor)`;
    /// the exact values are `(½, 0)` for boosts and `(0, 0)` for rotations.
    pub fn boundary_radial_derivative(&self) -> (f64, f64) {
        if self.killing {
            (0.0, self.dh[0])
        } else {
            (self.df[0], self.dh[0])
        }
    }
}

/// Gram matrix of the boundary traces of six extensions, in `L²(n²m₀²γ)`, with both the
/// radial and the tangential parts of `X∞` on `r = n·m₀`.
pub fn boundary_trace_gram(exts: &[CkExtension], r0: f64) -> Result<Matrix6<f64>> {
    if exts.len() != 6 {
        return Err(Error::Shape(format!("expected 6 extensions, got {}", exts.len())));
    }
    let s2 = r0 * r0;
    let traces: Vec<(ScalarField, TangentField)> = exts
        .iter()
        .map(|e| {
            let base = ck_raw_field(e.index, 1);
            (base.divergence().scaled(e.f[0]), base.scaled(e.h[0]))
        })
        .collect();
    let mut gram = Matrix6::zeros();
    for i in 0..6 {
        for j in 0..6 {
            let radial: f64 = traces[i].0.c.iter().zip(&traces[j].0.c).map(|(a, b)| a * b).sum();
            // Tangential vectors: |X|²_{s²γ} = s²|X|²_γ, area element s².
            gram[(i, j)] = s2 * radial + s2 * s2 * traces[i].1.inner(&traces[j].1);
        }
    }
    Ok(gram)
}

/// A vector field `X = X^r∂_r + X^T` on a foliated metric, sampled at the grid nodes:
/// `X^r` as radial scalar coefficients (values and `∂_r`), `X^T` as unit-frame potentials
/// of the tangential vector and of its `∂_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoliatedVector {
    /// `X^r` and `∂_rX^r`.
    pub radial: RadialScalar,
    /// `X^T` per node.
    pub tangential: Vec<TangentField>,
    /// `∂_rX^T` per node.
    pub d_tangential: Vec<TangentField>,
}

impl FoliatedVector {
    /// The zero field.
    pub fn zeros(n_r: usize, l_max: usize) -> Self {
        let lm = l_max.max(1);
        Self {
            radial: RadialScalar::zeros(n_r, lm),
            tangential: vec![TangentField::zeros(lm); n_r],
            d_tangential: vec![TangentField::zeros(lm); n_r],
        }
    }
}

/// `ℒ_Xg` on one leaf, split into the radial–radial, mixed and tangential blocks (frame
/// components relative to the unit round metric), with its trace part and norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalLieLeaf {
    /// Radius.
    pub r: f64,
    /// `(ℒ_Xg)_rr`.
    pub rr: Vec<f64>,
    /// `(ℒ_Xg)_ra`.
    pub ra: VecGrid,
    /// `(ℒ_Xg)_ab`.
    pub ab: SymGrid,
    /// `(2/3)·div_gX` (the trace part is this times `g`).
    pub trace_part: Vec<f64>,
    /// Pointwise `|𝒟_gX|_g` (norm of the traceless part).
    pub traceless_norm: Vec<f64>,
    /// Pointwise `|ℒ_Xg|_g`.
    pub lie_norm: Vec<f64>,
    /// Pointwise `|X|_g / r`, the natural scale of `∇X`.
    pub x_scale: Vec<f64>,
}

impl ConformalLieLeaf {
    /// Mixed traceless component `𝒟_gX(V, ∂_r)` for a tangential vector `V` (the mixed
    /// block is unaffected by removing the trace).
    pub fn mixed_contraction(&self, v: &VecGrid) -> Vec<f64> {
        (0..self.rr.len()).map(|p| self.ra.t[p] * v.t[p] + self.ra.p[p] * v.p[p]).collect()
    }
}

fn inv2(m: [[f64; 2]; 2]) -> Result<Deriv2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det > 0.0) {
        return Err(Error::Inadmissible("leaf metric not positive definite".into()));
    }
    Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn sym_norm_sq(gi: &Deriv2, a: [[f64; 2]; 2]) -> f64 {
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    s += gi[i][k] * gi[j][l] * a[i][j] * a[k][l];
                }
            }
        }
    }
    s
}

/// Conformal Lie derivative `𝒟_gX` = traceless part of `ℒ_Xg` at every node.
///
/// For `g = dr² + g_r`: `(ℒ_Xg)_rr = 2∂_rX^r`, `(ℒ_Xg)_ra = g_ab∂_rX^b + ∂_aX^r`,
/// `(ℒ_Xg)_ab = X^r∂_rg_ab + (ℒ_{X^T}g_r)_ab`, the last evaluated with the round
/// connection.
pub fn conformal_lie(metric: &FoliatedMetric, sph: &SphGrid, x: &FoliatedVector) -> Result<Vec<ConformalLieLeaf>> {
    let n_r = metric.grid.len();
    if x.radial.n_r() != n_r || x.tangential.len() != n_r || x.d_tangential.len() != n_r {
        return Err(Error::Shape(format!("vector field sampled on a different grid than the metric ({n_r} nodes)")));
    }
    let band = sph.deriv_band();
    (0..n_r)
        .into_par_iter()
        .map(|i| {
            let leaf = metric.leaf(sph, i)?;
            let np = sph.n_points();
            let xr = sph.synthesize(&x.radial.at(i))?;
            let dxr = sph.synthesize(&x.radial.d1_at(i))?;
            let grad_xr = sph.gradient(&x.radial.at(i))?;
            let xt = sph.synth_tangent(&x.tangential[i])?;
            let dxt = sph.synth_tangent(&x.d_tangential[i])?;
            let dx = sph.cov_deriv_vector(&xt, band)?;
            let dg = sph.cov_deriv_sym(&leaf.g, band)?;
            let mut rr = vec![0.0; np];
            let mut ra = VecGrid { t: vec![0.0; np], p: vec![0.0; np] };
            let mut ab = SymGrid::round(np, 0.0);
            let (mut trace_part, mut traceless_norm, mut lie_norm) = (vec![0.0; np], vec![0.0; np], vec![0.0; np]);
            let mut x_scale = vec![0.0; np];
            for p in 0..np {
                let g = leaf.g.at(p);
                let gi = inv2(g)?;
                let rg = leaf.dg.at(p);
                let v = [xt.t[p], xt.p[p]];
                let dv = [dxt.t[p], dxt.p[p]];
                let gx = [grad_xr.t[p], grad_xr.p[p]];
                let mixed: [f64; 2] = std::array::from_fn(|a| g[a][0] * dv[0] + g[a][1] * dv[1] + gx[a]);
                let tang: [[f64; 2]; 2] = std::array::from_fn(|a| {
                    std::array::from_fn(|b| {
                        let mut s = xr[p] * rg[a][b];
                        for c in 0..2 {
                            s += v[c] * dg[p][c][a][b] + g[c][b] * dx[p][a][c] + g[a][c] * dx[p][b][c];
                        }
                        s
                    })
                });
                let lrr = 2.0 * dxr[p];
                let tr = lrr + (0..2).map(|a| (0..2).map(|b| gi[a][b] * tang[a][b]).sum::<f64>()).sum::<f64>();
                let third = tr / 3.0;
                let mixed_sq = (0..2).map(|a| (0..2).map(|b| gi[a][b] * mixed[a] * mixed[b]).sum::<f64>()).sum::<f64>();
                let tl: [[f64; 2]; 2] = std::array::from_fn(|a| std::array::from_fn(|b| tang[a][b] - third * g[a][b]));
                traceless_norm[p] = ((lrr - third).powi(2) + 2.0 * mixed_sq + sym_norm_sq(&gi, tl)).sqrt();
                lie_norm[p] = (lrr * lrr + 2.0 * mixed_sq + sym_norm_sq(&gi, tang)).sqrt();
                let xt_sq = (0..2).map(|a| (0..2).map(|b| g[a][b] * v[a] * v[b]).sum::<f64>()).sum::<f64>();
                x_scale[p] = (xr[p] * xr[p] + xt_sq).sqrt() / leaf.r;
                trace_part[p] = third;
                rr[p] = lrr;
                ra.t[p] = mixed[0];
                ra.p[p] = mixed[1];
                ab.tt[p] = tang[0][0];
                ab.tp[p] = 0.5 * (tang[0][1] + tang[1][0]);
                ab.pp[p] = tang[1][1];
            }
            Ok(ConformalLieLeaf { r: leaf.r, rr, ra, ab, trace_part, traceless_norm, lie_norm, x_scale })
        })
        .collect()
}

/// `max_p |𝒟_gX|_g / max_p |X|_g/r`, maximized over leaves with `r ≤ r_limit` (0 for
/// `X = 0`). Normalizing leaf by leaf by the size of `X` keeps the measure meaningful
/// for Killing fields (where `ℒ_Xg` itself vanishes) and for growing fields.
pub fn conformal_killing_residual(leaves: &[ConformalLieLeaf], r_limit: f64) -> f64 {
    let mut worst = 0.0_f64;
    for l in leaves.iter().filter(|l| l.r <= r_limit) {
        let num = l.traceless_norm.iter().fold(0.0_f64, |a, v| a.max(*v));
        let den = l.x_scale.iter().fold(0.0_f64, |a, v| a.max(*v));
        worst = worst.max(if den > 0.0 { num / den } else { num });
    }
    worst
}

/// One sampled field in the nonexistence check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionSample {
    /// `∫ r^{−2δ−3}(|Z|² + r²|∇Z|²) dV`.
    pub lhs: f64,
    /// `C(δ)∫ r^{−2δ+3}|∇³Z|² dV` (chained Hardy bound of `lhs`).
    pub hardy_rhs: f64,
    /// `∫ r^{−2δ+3}(|∇Ric|²|Z|² + |Ric|²|∇Z|²) dV`.
    pub curvature_term: f64,
    /// `lhs ≤ hardy_rhs`.
    pub hardy_holds: bool,
    /// `curvature_term ≤ K(R)·lhs`.
    pub curvature_holds: bool,
}

/// Hardy-contraction report ruling out decaying conformal Killing fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoCkReport {
    /// Inner radius `R`.
    pub r_inner: f64,
    /// Decay rate.
    pub delta: f64,
    /// Chained Hardy constant `C(δ)`.
    pub hardy_constant: f64,
    /// `K(R) = sup_{r>R} r⁴(|Ric|² + r²|∇Ric|²)` of the background.
    pub curvature_sup: f64,
    /// `‖γ∞ − γ‖` of the metric.
    pub epsilon: f64,
    /// `C(δ)(K(R) + ε²)`, with the structure constant of the third-derivative identity
    /// for conformal Killing fields normalized to one.
    pub factor: f64,
    /// `factor < 1`: a decaying conformal Killing field on `[R, ∞)` must vanish.
    pub certified: bool,
    /// Per-sample chain checks.
    pub samples: Vec<ContractionSample>,
}

/// `(|Ric|², |∇Ric|²)` of `dr² + r(r − 2m)γ`, whose Ricci tensor is `2m²/φ⁴ dr²`.
pub fn background_ricci_sq(m: f64, r: f64) -> (f64, f64) {
    let phi2 = r * (r - 2.0 * m);
    let a = 2.0 * m * m / (phi2 * phi2);
    let da = -4.0 * m * m * 2.0 * (r - m) / (phi2 * phi2 * phi2);
    let s = (r - m) / phi2;
    // Ric = a dr² (tangential part b = 0): |∇Ric|² = a'² + 2b'² + 4s²(a − b)².
    (a * a, da * da + 4.0 * s * s * a * a)
}

/// Measures the contraction factor on `[r_inner, r_cut]` and evaluates the two steps of
/// the chain `lhs ≤ C(δ)∫r^{−2δ+3}|∇³Z|²` and `∫r^{−2δ+3}(|∇Ric|²|Z|² + |Ric|²|∇Z|²) ≤
/// K(R)·lhs` for radial sample profiles `z(r) = [Z, Z', Z'', Z''']` supported in the range.
pub fn no_ck_decaying_check(
    metric: &FoliatedMetric,
    samples: &[&(dyn Fn(f64) -> [f64; 4] + Sync)],
    delta: f64,
    r_inner: f64,
) -> Result<NoCkReport> {
    if !(delta < 0.0) {
        return Err(Error::Domain(format!("decay rate must be negative, got {delta}")));
    }
    let m = metric.base_mass;
    let r_max = metric.grid.r_cut;
    if !(r_inner >= metric.grid.r0 && r_inner < r_max) {
        return Err(Error::Domain(format!("inner radius {r_inner} outside [{}, {r_max})", metric.grid.r0)));
    }
    let (xs, ws) = composite_gauss(r_inner, r_max, 400, 8);
    let curvature_sup = xs
        .iter()
        .map(|&r| {
            let (ric, dric) = background_ricci_sq(m, r);
            r.powi(4) * (ric + r * r * dric)
        })
        .fold(0.0, f64::max);
    let epsilon = metric.gamma_inf.l2_norm();
    let mut hardy_constant = 0.0;
    let mut out = Vec::with_capacity(samples.len());
    for z in samples {
        let h = chained_hardy_radial(m, *z, delta, r_inner, r_max)?;
        hardy_constant = h.constant;
        let mut curvature_term = 0.0;
        for (&r, &w) in xs.iter().zip(&ws) {
            let [f, f1, _, _] = z(r);
            let (ric, dric) = background_ricci_sq(m, r);
            let dv = 4.0 * std::f64::consts::PI * r * (r - 2.0 * m) * w;
            curvature_term += r.powf(-2.0 * delta + 3.0) * (dric * f * f + ric * f1 * f1) * dv;
        }
        out.push(ContractionSample {
            lhs: h.lhs,
            hardy_rhs: h.constant * h.rhs,
            curvature_term,
            hardy_holds: h.lhs <= h.constant * h.rhs * (1.0 + 1e-8),
            curvature_holds: curvature_term <= curvature_sup * h.lhs * (1.0 + 1e-8),
        });
    }
    if samples.is_empty() {
        let t = [-2.0 * delta - 1.0, -2.0 * delta + 1.0, -2.0 * delta + 3.0];
        hardy_constant = (1.0 + 4.0 / t[0].powi(2)) * (4.0 / t[1].powi(2)) * (4.0 / t[2].powi(2));
    }
    let factor = hardy_constant * (curvature_sup + epsilon * epsilon);
    Ok(NoCkReport {
        r_inner,
        delta,
        hardy_constant,
        curvature_sup,
        epsilon,
        factor,
        certified: factor < 1.0,
        samples: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::{bump, RadialGrid};
    use crate::sphharm::SymTensor;

    fn bg() -> Background {
        Background::new(1.0, 3.0).unwrap()
    }

    /// `f = Aφ² + B(r − m)φ` with `f(r₀) = 0`, `f'(r₀) = ½`.
    fn closed_form(m: f64, n: f64) -> impl Fn(f64) -> (f64, f64, f64) {
        let r0 = n * m;
        let phi0 = (r0 * (r0 - 2.0 * m)).sqrt();
        // Value row: A φ0² + B (r0 − m) φ0 = 0; slope row: 2A(r0 − m) + B(φ0² + (r0 − m)²)/φ0 = ½.
        let (a11, a12) = (phi0 * phi0, (r0 - m) * phi0);
        let (a21, a22) = (2.0 * (r0 - m), (phi0 * phi0 + (r0 - m).powi(2)) / phi0);
        let det = a11 * a22 - a12 * a21;
        let (a, b) = (-a12 * 0.5 / det, a11 * 0.5 / det);
        move |r: f64| {
            let phi = (r * (r - 2.0 * m)).sqrt();
            let f = a * phi * phi + b * (r - m) * phi;
            let df = 2.0 * a * (r - m) + b * (phi * phi + (r - m).powi(2)) / phi;
            let h = 1.0 + 2.0 * a * (r - r0) + 2.0 * b * (phi - phi0);
            (f, df, h)
        }
    }

    #[test]
    fn rotations_extend_trivially() {
        let grid = RadialGrid::with_default_cut(&bg(), 64).unwrap();
        for i in 0..3 {
            let e = extend_ck(i, &bg(), &grid).unwrap();
            assert!(e.killing);
            assert!(e.f.iter().all(|v| *v == 0.0) && e.h.iter().all(|v| *v == 1.0));
            assert_eq!(e.boundary_radial_derivative(), (0.0, 0.0));
        }
    }

    #[test]
    fn boost_extension_matches_closed_form() {
        for (m, n) in [(1.0, 3.0), (0.5, 2.5), (2.0, 6.0)] {
            let b = Background::new(m, n).unwrap();
            let grid = RadialGrid::with_default_cut(&b, 128).unwrap();
            let e = extend_ck(4, &b, &grid).unwrap();
            assert_eq!(e.df[0], 0.5);
            assert_eq!((e.f[0], e.h[0]), (0.0, 1.0));
            let exact = closed_form(m, n);
            let fmax = e.f.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            for (i, &r) in grid.r.iter().enumerate() {
                let (f, df, h) = exact(r);
                assert!((e.f[i] - f).abs() < 1e-9 * fmax, "m={m} n={n} r={r}: {} vs {f}", e.f[i]);
                assert!((e.df[i] - df).abs() < 1e-9 * (1.0 + df.abs()), "r={r}");
                assert!((e.h[i] - h).abs() < 1e-9 * (1.0 + h.abs()), "r={r}");
            }
            assert!(e.first_integral_defect() < 1e-9);
        }
    }

    #[test]
    fn boost_growth_is_quadratic() {
        let grid = RadialGrid::with_default_cut(&bg(), 256).unwrap();
        for i in 3..6 {
            let e = extend_ck(i, &bg(), &grid).unwrap();
            let slope = e.growth_slope(1e2, 1e3).unwrap();
            assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let b = bg();
        assert!(extend_ck_at(6, &b, &[3.0, 4.0]).is_err());
        assert!(extend_ck_at(3, &b, &[3.5, 4.0]).is_err());
        assert!(extend_ck_at(3, &b, &[3.0, 3.0]).is_err());
    }

    #[test]
    fn extensions_are_conformal_killing_on_the_background() {
        let b = bg();
        let grid = RadialGrid::with_default_cut(&b, 48).unwrap();
        let metric = FoliatedMetric::schwarzschild(&b, grid.clone(), 2).unwrap();
        let sph = SphGrid::new(4).unwrap();
        for i in 0..6 {
            let e = extend_ck(i, &b, &grid).unwrap();
            let x = e.vector_field(2);
            let leaves = conformal_lie(&metric, &sph, &x).unwrap();
            let res = conformal_killing_residual(&leaves, f64::INFINITY);
            assert!(res < 1e-7, "generator {i}: {res}");
            let div = sph.synthesize(&ck_raw_field(i, 1).divergence()).unwrap();
            for (k, l) in leaves.iter().enumerate() {
                let r = l.r;
                let expected = e.f[k] * b.tr_k(r) + e.h[k];
                let scale = l.lie_norm.iter().fold(0.0_f64, |a, v| a.max(*v));
                for p in 0..div.len() {
                    let want = if e.killing { 0.0 } else { expected * div[p] };
                    assert!((l.trace_part[p] - want).abs() <= 1e-8 * scale.max(1.0), "i={i} r={r}");
                }
            }
        }
    }

    #[test]
    fn mixed_traceless_component_vanishes_on_the_boundary() {
        let b = bg();
        let grid = RadialGrid::with_default_cut(&b, 32).unwrap();
        let metric = FoliatedMetric::schwarzschild(&b, grid.clone(), 2).unwrap();
        let sph = SphGrid::new(4).unwrap();
        for i in 0..6 {
            let e = extend_ck(i, &b, &grid).unwrap();
            let leaves = conformal_lie(&metric, &sph, &e.vector_field(2)).unwrap();
            let xbar = sph.synth_tangent(&ck_raw_field(i, 1)).unwrap();
            let c = leaves[0].mixed_contraction(&xbar);
            assert!(c.iter().all(|v| v.abs() < 1e-10), "generator {i}");
            let (df, dh) = e.boundary_radial_derivative();
            assert_eq!(dh, 0.0);
            assert_eq!(df, if e.killing { 0.0 } else { 0.5 });
        }
    }

    #[test]
    fn zero_field_has_zero_lie_derivative() {
        let b = bg();
        let grid = RadialGrid::with_default_cut(&b, 16).unwrap();
        let metric = FoliatedMetric::schwarzschild(&b, grid.clone(), 2).unwrap();
        let sph = SphGrid::new(4).unwrap();
        let leaves = conformal_lie(&metric, &sph, &FoliatedVector::zeros(16, 2)).unwrap();
        assert_eq!(conformal_killing_residual(&leaves, f64::INFINITY), 0.0);
        assert!(leaves.iter().all(|l| l.lie_norm.iter().all(|v| *v == 0.0)));
        assert!(conformal_lie(&metric, &sph, &FoliatedVector::zeros(15, 2)).is_err());
    }

    #[test]
    fn non_killing_field_is_detected() {
        // A purely radial field X = Y₁₀∂_r is not conformal Killing.
        let b = bg();
        let grid = RadialGrid::with_default_cut(&b, 16).unwrap();
        let metric = FoliatedMetric::schwarzschild(&b, grid.clone(), 2).unwrap();
        let sph = SphGrid::new(4).unwrap();
        let mut x = FoliatedVector::zeros(16, 2);
        for i in 0..16 {
            x.radial.val[(i, 2)] = 1.0;
        }
        let res = conformal_killing_residual(&conformal_lie(&metric, &sph, &x).unwrap(), f64::INFINITY);
        assert!(res > 0.1, "{res}");
    }

    #[test]
    fn extensions_span_six_dimensions() {
        let b = bg();
        let grid = RadialGrid::with_default_cut(&b, 32).unwrap();
        let exts = extend_all(&b, &grid).unwrap();
        let gram = boundary_trace_gram(&exts, b.r0()).unwrap();
        let diag: f64 = (0..6).map(|i| gram[(i, i)]).product();
        assert!(gram.determinant() > 1e-6 * diag, "{gram}");
        assert!(boundary_trace_gram(&exts[..5], b.r0()).is_err());
    }

    #[test]
    fn background_ricci_matches_warped_product_formula() {
        // Ric_rr = −2φ''/φ for dr² + φ²γ; tangential part 1 − φ'² − φφ'' vanishes.
        let m = 1.3;
        for r in [3.0, 7.0, 40.0] {
            let phi = |r: f64| (r * (r - 2.0 * m)).sqrt();
            let dphi = |r: f64| (r - m) / phi(r);
            let h = 1e-4;
            let p0 = phi(r);
            let d1 = (phi(r + h) - phi(r - h)) / (2.0 * h);
            let d2 = (dphi(r + h) - dphi(r - h)) / (2.0 * h);
            let (ric, _) = background_ricci_sq(m, r);
            assert!(((-2.0 * d2 / p0).powi(2) - ric).abs() < 1e-5 * ric);
            assert!((1.0 - d1 * d1 - p0 * d2).abs() < 1e-5);
        }
    }

    #[test]
    fn contraction_factor_certifies_no_decaying_ck_field() {
        let b = bg();
        let grid = RadialGrid::with_default_cut(&b, 32).unwrap();
        let metric = FoliatedMetric::schwarzschild(&b, grid, 2).unwrap();
        let delta = -0.75;
        let mut factors = Vec::new();
        for r_inner in [6.0, 12.0, 24.0, 48.0] {
            let rep = no_ck_decaying_check(&metric, &[], delta, r_inner).unwrap();
            assert_eq!(rep.epsilon, 0.0);
            factors.push(rep.factor);
            if r_inner >= 12.0 {
                assert!(rep.certified, "R = {r_inner}: factor {}", rep.factor);
            }
        }
        // K(R) ~ R^{-4}, well inside the C·R^{2δ} budget.
        for w in factors.windows(2) {
            assert!(w[1] < w[0] * 2f64.powf(2.0 * delta));
        }
    }

    #[test]
    fn contraction_chain_holds_for_compact_samples() {
        let b = bg();
        let grid = RadialGrid::with_default_cut(&b, 32).unwrap();
        let metric = FoliatedMetric::schwarzschild(&b, grid, 2).unwrap();
        let z1 = |r: f64| bump(r, 30.0, 10.0);
        let z2 = |r: f64| {
            let (a, c) = (bump(r, 20.0, 5.0), bump(r, 60.0, 25.0));
            std::array::from_fn(|k| 0.7 * a[k] - 1.9 * c[k])
        };
        let zero = |_r: f64| [0.0; 4];
        let rep = no_ck_decaying_check(&metric, &[&z1, &z2, &zero], -0.75, 8.0).unwrap();
        for s in &rep.samples[..2] {
            assert!(s.lhs > 0.0 && s.hardy_holds && s.curvature_holds, "{s:?}");
        }
        let z = rep.samples[2];
        assert_eq!((z.lhs, z.hardy_rhs, z.curvature_term), (0.0, 0.0, 0.0));
    }

    #[test]
    fn perturbed_boundary_metric_enters_the_factor() {
        let b = bg();
        let grid = RadialGrid::with_default_cut(&b, 16).unwrap();
        let mut gi = SymTensor::zeros(2);
        gi.iso.c[6] = 0.01;
        let metric = FoliatedMetric::schwarzschild(&b, grid, 2).unwrap().with_perturbation(gi, |_| {
            let z = SymTensor::zeros(2);
            (z.clone(), z.clone(), z)
        });
        let rep = no_ck_decaying_check(&metric, &[], -0.75, 20.0).unwrap();
        assert!(rep.epsilon > 0.0);
        assert!((rep.factor - rep.hardy_constant * (rep.curvature_sup + rep.epsilon.powi(2))).abs() < 1e-15);
        assert!(no_ck_decaying_check(&metric, &[], 0.5, 20.0).is_err());
        assert!(no_ck_decaying_check(&metric, &[], -0.75, 1.0).is_err());
    }
}
