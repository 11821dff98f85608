//! Mode-by-mode solver for the Dirichlet problem of the background Laplacian.
//!
//! A scalar `ũ = Σ a_{ℓm}(r) Y_{ℓm}` solves `Δ_{g_sc}ũ − μ²m₀²/(r(r−2m₀))² ũ = F` with
//! `ũ|_{r=n·m₀} = h` when every coefficient solves
//! `r(r−2m₀)a'' + 2(r−m₀)a' − [ℓ(ℓ+1) + μ²m₀²/(r(r−2m₀))]a = r(r−2m₀)b`, `a(n·m₀) = c`.
//! In `z = r/m₀ − 1` this is the associated Legendre equation of order μ. Solutions are
//! built by variation of parameters from a growing/decaying homogeneous pair, evaluated
//! in the scaled forms `ĝ = z^{−ℓ}g`, `d̂ = z^{ℓ+1}d`, so that no power of `z` ever
//! overflows; the spherical Laplacian mode `ℓ = 0, μ = 0` uses two exact quadratures
//! with the decay condition imposed in closed form.

use crate::error::{Error, Result};
use crate::legendre::{p_scaled, q_scaled, Scaled, DEFAULT_TOL};
use crate::schwarzschild::Background;
use crate::spaces::{fit_tail, tail_window, RadialGrid, RadialScalar, SegmentQuad, SEGMENT_POINTS};
use crate::sphharm::{mode_index, mode_lm, n_modes, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Radial profile of one spherical-harmonic coefficient with two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeProfile {
    /// Degree.
    pub l: usize,
    /// Order.
    pub m: i64,
    /// Values at the grid nodes.
    pub a: Vec<f64>,
    /// First radial derivative.
    pub da: Vec<f64>,
    /// Second radial derivative.
    pub d2a: Vec<f64>,
}

impl ModeProfile {
    /// Largest deviation between `a''` and the differentiation matrix applied to `a'`,
    /// relative to `max|a''|`, over nodes with `r ≤ r_limit`.
    pub fn stack_consistency(&self, grid: &RadialGrid, r_limit: f64) -> f64 {
        let d = grid.deriv(&self.da);
        let scale = self.d2a.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        grid.r
            .iter()
            .enumerate()
            .filter(|(_, r)| **r <= r_limit)
            .map(|(i, _)| (d[i] - self.d2a[i]).abs() / scale)
            .fold(0.0, f64::max)
    }
}

/// Radial operator of the mode equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeOperator {
    /// The background Laplacian (`μ = 0`).
    Laplacian,
    /// The Laplacian shifted by `−4m₀²/(r(r−2m₀))²` (`μ = 2`).
    Shifted,
}

impl ModeOperator {
    fn mu_sq(self) -> f64 {
        match self {
            ModeOperator::Laplacian => 0.0,
            ModeOperator::Shifted => 4.0,
        }
    }
}

/// Scaled homogeneous pair at one point: `(ĝ, ĝ', d̂, d̂')`.
fn pair_scaled(l: usize, op: ModeOperator, z: f64) -> Result<[f64; 4]> {
    match (op, l) {
        (ModeOperator::Laplacian, _) => {
            let p = p_scaled(l, z)?;
            let q = q_scaled(l, z, DEFAULT_TOL)?;
            Ok([p.v, p.d1, q.v, q.d1])
        }
        (ModeOperator::Shifted, 0) => {
            let e = z * z - 1.0;
            Ok([(z * z + 1.0) / e, -4.0 * z / (e * e), z * z / e, -2.0 * z / (e * e)])
        }
        (ModeOperator::Shifted, 1) => {
            let e = z * z - 1.0;
            Ok([(z * z - 3.0) / e, 4.0 * z / (e * e), z * z / e, -2.0 * z / (e * e)])
        }
        (ModeOperator::Shifted, _) => {
            let lf = l as f64;
            let p: Scaled = p_scaled(l, z)?;
            let q: Scaled = q_scaled(l, z, DEFAULT_TOL)?;
            let (a, b) = (lf * (lf - 1.0), (lf + 1.0) * (lf + 2.0));
            Ok([
                a * p.v - 2.0 * z * p.d1,
                (a - 2.0) * p.d1 - 2.0 * z * p.d2,
                b * q.v - 2.0 * z * q.d1,
                (b - 2.0) * q.d1 - 2.0 * z * q.d2,
            ])
        }
    }
}

/// Constant `(g d' − g' d)(z² − 1)` of the homogeneous pair, from the scaled values.
fn pair_wronskian(l: usize, z: f64, s: &[f64; 4]) -> f64 {
    let [g, dg, d, dd] = *s;
    (z * z - 1.0) / z * (g * dd - dg * d - (2.0 * l as f64 + 1.0) * g * d / z)
}

/// Homogeneous pair tabulated on a grid for one degree.
#[derive(Debug, Clone)]
pub struct PairTable {
    /// Degree.
    pub l: usize,
    /// Operator.
    pub op: ModeOperator,
    /// Wronskian constant `(g d' − g' d)(z² − 1)`.
    pub wronskian: f64,
    nodes: Vec<[f64; 4]>,
    sub: Vec<[f64; 4]>,
}

/// Mode solver bound to a background and a radial grid.
#[derive(Debug, Clone)]
pub struct ModeSolver {
    /// Background.
    pub bg: Background,
    /// Radial grid.
    pub grid: RadialGrid,
    sq: SegmentQuad,
    z_nodes: Vec<f64>,
    z_sub: Vec<f64>,
}

impl ModeSolver {
    /// Prepares quadrature data for the grid.
    pub fn new(bg: Background, grid: RadialGrid) -> Result<Self> {
        if (grid.r0 - bg.r0()).abs() > 1e-12 * bg.r0() {
            return Err(Error::Config("radial grid does not start at n·m₀".into()));
        }
        let sq = grid.segment_quadrature(SEGMENT_POINTS);
        let z_nodes = grid.r.iter().map(|r| r / bg.m0 - 1.0).collect();
        let z_sub = sq.r.iter().map(|r| r / bg.m0 - 1.0).collect();
        Ok(Self { bg, grid, sq, z_nodes, z_sub })
    }

    /// Segment quadrature used by the solver.
    pub fn quadrature(&self) -> &SegmentQuad {
        &self.sq
    }

    /// Tabulates the homogeneous pair of degree `l`.
    pub fn pair_table(&self, l: usize, op: ModeOperator) -> Result<PairTable> {
        let nodes = self.z_nodes.iter().map(|&z| pair_scaled(l, op, z)).collect::<Result<Vec<_>>>()?;
        let sub = self.z_sub.iter().map(|&z| pair_scaled(l, op, z)).collect::<Result<Vec<_>>>()?;
        let wronskian = pair_wronskian(l, self.z_nodes[0], &nodes[0]);
        Ok(PairTable { l, op, wronskian, nodes, sub })
    }

    /// Decaying homogeneous solution normalized to 1 at the boundary, with derivatives.
    pub fn decaying(&self, table: &PairTable) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.bg.m0;
        let lf = table.l as f64;
        let z0 = self.z_nodes[0];
        let d0 = table.nodes[0][2];
        let mut a = Vec::with_capacity(self.grid.len());
        let mut da = Vec::with_capacity(self.grid.len());
        for (i, &z) in self.z_nodes.iter().enumerate() {
            let [_, _, d, dd] = table.nodes[i];
            let s = (z0 / z).powf(lf + 1.0) / d0;
            a.push(s * d);
            da.push(s * (dd - (lf + 1.0) * d / z) / m);
        }
        let d2a = self.second_derivative(table.l, table.op, &a, &da, &vec![0.0; a.len()]);
        (a, da, d2a)
    }

    fn second_derivative(&self, l: usize, op: ModeOperator, a: &[f64], da: &[f64], b: &[f64]) -> Vec<f64> {
        let m = self.bg.m0;
        let ll = (l * (l + 1)) as f64;
        self.grid
            .r
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let e = r * (r - 2.0 * m);
                let v = ll + op.mu_sq() * m * m / e;
                (e * b[i] + v * a[i] - 2.0 * (r - m) * da[i]) / e
            })
            .collect()
    }

    /// Solves one mode: `b` holds the right-hand side at the nodes, `c` the boundary value.
    pub fn solve_with(&self, table: &PairTable, b: &[f64], c: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if b.len() != self.grid.len() {
            return Err(Error::Shape(format!("rhs has {} entries, grid has {}", b.len(), self.grid.len())));
        }
        if table.op == ModeOperator::Laplacian && table.l == 0 {
            return self.solve_spherical(b, c);
        }
        let m = self.bg.m0;
        let l = table.l;
        let lf = l as f64;
        let n = self.grid.len();
        let g = self.sq.g;
        let zero = b.iter().all(|v| *v == 0.0);
        let mut s_acc = vec![0.0; n];
        let mut t_acc = vec![0.0; n];
        if !zero {
            let bq = self.sq.values(b);
            let fq: Vec<f64> = self.sq.r.iter().zip(&bq).map(|(r, v)| r * (r - 2.0 * m) * v).collect();
            let fn_: Vec<f64> = self.grid.r.iter().zip(b).map(|(r, v)| r * (r - 2.0 * m) * v).collect();
            s_acc[n - 1] = self.tail_s(table, &fn_)?;
            let mut seg_s = vec![0.0; n - 1];
            let mut seg_t = vec![0.0; n - 1];
            for s in 0..n - 1 {
                let (zi, zj) = (self.z_nodes[s], self.z_nodes[s + 1]);
                for q in 0..g {
                    let k = s * g + q;
                    let t = self.z_sub[k];
                    let w = self.sq.w[k] / m;
                    let [gh, _, dh, _] = table.sub[k];
                    seg_s[s] += w * dh * (zi / t).powf(lf) * fq[k] / t;
                    seg_t[s] += w * gh * (t / zj).powf(lf) * fq[k] / zj;
                }
            }
            for s in (0..n - 1).rev() {
                let ratio = self.z_nodes[s] / self.z_nodes[s + 1];
                s_acc[s] = ratio.powf(lf) * s_acc[s + 1] + seg_s[s];
            }
            for s in 0..n - 1 {
                let ratio = self.z_nodes[s] / self.z_nodes[s + 1];
                t_acc[s + 1] = ratio.powf(lf + 1.0) * t_acc[s] + seg_t[s];
            }
        }
        let wc = table.wronskian;
        let z0 = self.z_nodes[0];
        let d0 = table.nodes[0][2];
        let c_term = c - table.nodes[0][0] * s_acc[0] / wc;
        let mut a = vec![0.0; n];
        let mut da = vec![0.0; n];
        for i in 0..n {
            let z = self.z_nodes[i];
            let [gh, dgh, dh, ddh] = table.nodes[i];
            let decay = (z0 / z).powf(lf + 1.0) / d0;
            let dd_full = ddh - (lf + 1.0) * dh / z;
            a[i] = c_term * decay * dh + (gh * s_acc[i] + dh * t_acc[i]) / wc;
            let hz = c_term * decay * dd_full + ((dgh + lf * gh / z) * s_acc[i] + dd_full * t_acc[i]) / wc;
            da[i] = hz / m;
        }
        let d2a = self.second_derivative(l, table.op, &a, &da, b);
        Ok((a, da, d2a))
    }

    /// Semi-infinite part `∫_{z_N}^∞ d̂(t)(z_N/t)^ℓ f(t)/t dt` from a power-law fit of `f`.
    fn tail_s(&self, table: &PairTable, f_nodes: &[f64]) -> Result<f64> {
        let n = f_nodes.len();
        let scale = f_nodes.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let fit = fit_tail(&self.z_nodes, f_nodes, tail_window(n));
        if !fit.valid || f_nodes[n - 1].abs() <= 1e-12 * scale {
            return Ok(0.0);
        }
        let lf = table.l as f64;
        if fit.exponent >= -1e-6 {
            return Err(Error::Divergence(format!(
                "right-hand side of mode ℓ={} does not decay (fitted exponent {:.3} of r(r−2m₀)b)",
                table.l, fit.exponent
            )));
        }
        let tail = table.nodes[n - 1][2] * fit.weighted_moment(lf);
        if table.l >= 2 && tail.abs() < 1e-14 {
            return Ok(0.0);
        }
        Ok(tail)
    }

    /// Spherical Laplacian mode by two quadratures with the decay condition in closed form:
    /// `r(r−2m)a' = K + ∫_{r0}^r s(s−2m)b`, `a = −(K + B(r))λ(r) − ∫_r^∞ s(s−2m)b λ(s) ds`,
    /// `λ(r) = ln(r/(r−2m))/(2m)`.
    fn solve_spherical(&self, b: &[f64], c: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let m = self.bg.m0;
        let lam = |r: f64| (r / (r - 2.0 * m)).ln() / (2.0 * m);
        let n = self.grid.len();
        let (bb, jj) = if b.iter().all(|v| *v == 0.0) {
            (vec![0.0; n], vec![0.0; n])
        } else {
            let bq = self.sq.values(b);
            let fq: Vec<f64> = self.sq.r.iter().zip(&bq).map(|(r, v)| r * (r - 2.0 * m) * v).collect();
            let jq: Vec<f64> = self.sq.r.iter().zip(&fq).map(|(r, v)| v * lam(*r)).collect();
            let jn: Vec<f64> = self.grid.r.iter().zip(b).map(|(r, v)| r * (r - 2.0 * m) * v * lam(*r)).collect();
            let scale = jn.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let fit = fit_tail(&self.grid.r, &jn, tail_window(n));
            let tail = if !fit.valid || jn[n - 1].abs() <= 1e-12 * scale {
                0.0
            } else if fit.exponent >= -1.0 - 1e-6 {
                return Err(Error::Divergence(format!(
                    "right-hand side of the spherical mode decays too slowly (fitted exponent {:.3})",
                    fit.exponent - 1.0
                )));
            } else {
                fit.integral_beyond()
            };
            (self.sq.cumulative(&fq), self.sq.cumulative_back(&jq, tail))
        };
        let k = -(c + jj[0]) / lam(self.grid.r0);
        let mut a = vec![0.0; n];
        let mut da = vec![0.0; n];
        for (i, &r) in self.grid.r.iter().enumerate() {
            a[i] = -(k + bb[i]) * lam(r) - jj[i];
            da[i] = (k + bb[i]) / (r * (r - 2.0 * m));
        }
        a[0] = c;
        let d2a = self.second_derivative(0, ModeOperator::Laplacian, &a, &da, b);
        Ok((a, da, d2a))
    }

    /// Solves the mode `(l, m)` of the Laplacian Dirichlet problem.
    pub fn solve_mode(&self, l: usize, m: i64, b: &[f64], c: f64) -> Result<ModeProfile> {
        self.solve_mode_op(l, m, ModeOperator::Laplacian, b, c)
    }

    /// Solves the mode `(l, m)` for either operator.
    pub fn solve_mode_op(&self, l: usize, m: i64, op: ModeOperator, b: &[f64], c: f64) -> Result<ModeProfile> {
        if m.unsigned_abs() as usize > l {
            return Err(Error::Domain(format!("|m| = {} exceeds ℓ = {l}", m.abs())));
        }
        let t = self.pair_table(l, op)?;
        let (a, da, d2a) = self.solve_with(&t, b, c).map_err(|e| tag_mode(e, l, m))?;
        Ok(ModeProfile { l, m, a, da, d2a })
    }

    /// Solves every mode of `Δũ − μ²… ũ = F`, `ũ|∂M = h`; modes run in parallel and are merged
    /// by mode index.
    pub fn solve_dirichlet_op(&self, op: ModeOperator, f: &RadialScalar, h: &ScalarField) -> Result<RadialScalar> {
        if f.n_r() != self.grid.len() {
            return Err(Error::Shape("right-hand side stacks do not match the grid".into()));
        }
        let l_max = f.l_max.max(h.l_max);
        let results: Vec<Result<Vec<(usize, ModeProfile)>>> = (0..=l_max)
            .into_par_iter()
            .map(|l| {
                let table = self.pair_table(l, op)?;
                let mut out = Vec::with_capacity(2 * l + 1);
                for m in -(l as i64)..=(l as i64) {
                    let b: Vec<f64> = if l <= f.l_max {
                        f.val.column(mode_index(l, m)).iter().copied().collect()
                    } else {
                        vec![0.0; self.grid.len()]
                    };
                    let c = if l <= h.l_max { h.get(l, m) } else { 0.0 };
                    let (a, da, d2a) = self.solve_with(&table, &b, c).map_err(|e| tag_mode(e, l, m))?;
                    out.push((mode_index(l, m), ModeProfile { l, m, a, da, d2a }));
                }
                Ok(out)
            })
            .collect();
        let mut u = RadialScalar::zeros(self.grid.len(), l_max);
        for r in results {
            for (k, p) in r? {
                for i in 0..self.grid.len() {
                    u.val[(i, k)] = p.a[i];
                    u.d1[(i, k)] = p.da[i];
                    u.d2[(i, k)] = p.d2a[i];
                }
            }
        }
        Ok(u)
    }

    /// Solves `Δ_{g_sc}ũ = F`, `ũ|∂M = h`.
    pub fn solve_dirichlet(&self, f: &RadialScalar, h: &ScalarField) -> Result<RadialScalar> {
        self.solve_dirichlet_op(ModeOperator::Laplacian, f, h)
    }

    /// Applies the mode operator to stacks: `a'' + trK a' − V a/(r(r−2m₀))` per mode.
    pub fn apply_op(&self, op: ModeOperator, u: &RadialScalar) -> RadialScalar {
        let m = self.bg.m0;
        let mut out = RadialScalar::zeros(u.n_r(), u.l_max);
        for k in 0..n_modes(u.l_max) {
            let l = mode_lm(k).0;
            let ll = (l * (l + 1)) as f64;
            for (i, &r) in self.grid.r.iter().enumerate() {
                let e = r * (r - 2.0 * m);
                let v = ll + op.mu_sq() * m * m / e;
                out.val[(i, k)] = u.d2[(i, k)] + 2.0 * (r - m) / e * u.d1[(i, k)] - v / e * u.val[(i, k)];
            }
        }
        out
    }
}

fn tag_mode(e: Error, l: usize, m: i64) -> Error {
    match e {
        Error::Divergence(s) => Error::Divergence(format!("mode (ℓ={l}, m={m}): {s}")),
        Error::Convergence(s) => Error::Convergence(format!("mode (ℓ={l}, m={m}): {s}")),
        Error::Domain(s) => Error::Domain(format!("mode (ℓ={l}, m={m}): {s}")),
        other => other,
    }
}

/// Worst constants of the mode estimates at one degree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeRatios {
    /// Degree.
    pub l: usize,
    /// Largest LHS/RHS of the integral estimate over samples.
    pub h_ratio: f64,
    /// Largest LHS/RHS of the supremum estimate over samples.
    pub c_ratio: f64,
}

/// Report of [`verify_mode_estimates`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Weight exponent.
    pub delta: f64,
    /// Samples per degree.
    pub samples: usize,
    /// Per-degree worst ratios.
    pub per_degree: Vec<DegreeRatios>,
    /// Largest integral-estimate ratio over `ℓ ≥ 1` in the lower half of the degrees.
    pub h_lower_max: f64,
    /// Same over the upper half.
    pub h_upper_max: f64,
    /// Largest supremum-estimate ratio over the lower half.
    pub c_lower_max: f64,
    /// Same over the upper half.
    pub c_upper_max: f64,
    /// Whether both upper-half maxima stay within 1.5× the lower-half maxima.
    pub uniform: bool,
}

fn weighted_sq(sq: &SegmentQuad, grid: &RadialGrid, f: &[f64], sigma: f64) -> f64 {
    let pw = -2.0 * sigma - 1.0;
    let fq = sq.values(f);
    let body: f64 = sq.integrate(&fq.iter().zip(&sq.r).map(|(v, r)| r.powf(pw) * v * v).collect::<Vec<_>>());
    let nodes: Vec<f64> = grid.r.iter().zip(f).map(|(r, v)| r.powf(pw) * v * v).collect();
    let fit = fit_tail(&grid.r, &nodes, tail_window(grid.len()));
    let tail = if fit.valid && fit.exponent < -1.0 { fit.integral_beyond() } else { 0.0 };
    body + tail
}

fn weighted_sup(grid: &RadialGrid, f: &[f64], sigma: f64) -> f64 {
    grid.r.iter().zip(f).map(|(r, v)| r.powf(-2.0 * sigma) * v * v).fold(0.0, f64::max)
}

/// Both sides of the integral and supremum mode estimates for one profile.
pub fn estimate_sides(solver: &ModeSolver, p: &ModeProfile, b: &[f64], c: f64, delta: f64) -> ([f64; 2], [f64; 2]) {
    let (g, sq) = (&solver.grid, &solver.sq);
    let w = 1.0 + (p.l * (p.l + 1)) as f64;
    let h_lhs = weighted_sq(sq, g, &p.d2a, delta - 2.0)
        + w * weighted_sq(sq, g, &p.da, delta - 1.0)
        + w * w * weighted_sq(sq, g, &p.a, delta);
    let h_rhs = weighted_sq(sq, g, b, delta - 2.0) + w.powf(1.5) * c * c;
    let c_lhs = weighted_sup(g, &p.d2a, delta - 2.0) + w * weighted_sup(g, &p.da, delta - 1.0) + w * w * weighted_sup(g, &p.a, delta);
    let c_rhs = weighted_sup(g, b, delta - 2.0) + w * w * c * c;
    ([h_lhs, h_rhs], [c_lhs, c_rhs])
}

fn ratio(s: [f64; 2]) -> f64 {
    if s[0] == 0.0 && s[1] == 0.0 {
        0.0
    } else {
        s[0] / s[1]
    }
}

/// Random mode data `(b, c)`: `b = Σ βⱼ (r₀/r)^{pⱼ}` with decay rates strictly inside the
/// `δ − 2` class and `βⱼ, c` uniform in `[−1, 1]`.
pub fn random_mode_data(grid: &RadialGrid, delta: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let base = 2.0 - delta;
    let rates = [base + 0.25, base + 0.75, base + 1.75];
    let betas: Vec<f64> = rates.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c = rng.gen_range(-1.0..1.0);
    let b = grid
        .r
        .iter()
        .map(|r| rates.iter().zip(&betas).map(|(p, bj)| bj * (grid.r0 / r).powf(*p)).sum())
        .collect();
    (b, c)
}

/// Evaluates both sides of the integral and supremum mode estimates for random data at
/// every degree `ℓ ≤ ℓ_max`, and compares the worst ratios of the upper and lower halves.
pub fn verify_mode_estimates(solver: &ModeSolver, l_max: usize, samples: usize, delta: f64, seed: u64) -> Result<EstimateReport> {
    if !(delta > -1.0 && delta < -0.5) {
        return Err(Error::Config(format!("δ = {delta} outside (−1, −1/2)")));
    }
    if l_max < 2 {
        return Err(Error::Config("ℓ_max must be at least 2".into()));
    }
    let per_degree: Vec<DegreeRatios> = (0..=l_max)
        .into_par_iter()
        .map(|l| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (l as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let table = solver.pair_table(l, ModeOperator::Laplacian)?;
            let (mut hr, mut cr) = (0.0_f64, 0.0_f64);
            for _ in 0..samples {
                let (b, c) = random_mode_data(&solver.grid, delta, &mut rng);
                let (a, da, d2a) = solver.solve_with(&table, &b, c)?;
                let p = ModeProfile { l, m: 0, a, da, d2a };
                let (h, cc) = estimate_sides(solver, &p, &b, c, delta);
                hr = hr.max(ratio(h));
                cr = cr.max(ratio(cc));
            }
            Ok(DegreeRatios { l, h_ratio: hr, c_ratio: cr })
        })
        .collect::<Result<Vec<_>>>()?;
    let half = l_max / 2;
    let max_over = |lo: usize, hi: usize, f: &dyn Fn(&DegreeRatios) -> f64| {
        per_degree.iter().filter(|d| d.l >= lo && d.l <= hi).map(f).fold(0.0, f64::max)
    };
    let h_lower_max = max_over(1, half, &|d| d.h_ratio);
    let h_upper_max = max_over(half + 1, l_max, &|d| d.h_ratio);
    let c_lower_max = max_over(1, half, &|d| d.c_ratio);
    let c_upper_max = max_over(half + 1, l_max, &|d| d.c_ratio);
    Ok(EstimateReport {
        delta,
        samples,
        per_degree,
        h_lower_max,
        h_upper_max,
        c_lower_max,
        c_upper_max,
        uniform: h_upper_max <= 1.5 * h_lower_max && c_upper_max <= 1.5 * c_lower_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legendre::legendre_q;
    use approx::assert_relative_eq;

    fn solver(n_r: usize) -> ModeSolver {
        let bg = Background::new(1.0, 3.0).unwrap();
        let grid = RadialGrid::with_default_cut(&bg, n_r).unwrap();
        ModeSolver::new(bg, grid).unwrap()
    }

    #[test]
    fn homogeneous_degree_one_is_second_kind_function() {
        let s = solver(96);
        let c = legendre_q(1, 2.0, DEFAULT_TOL).unwrap().value;
        let p = s.solve_mode(1, 0, &vec![0.0; s.grid.len()], c).unwrap();
        for (i, r) in s.grid.r.iter().enumerate() {
            let q = legendre_q(1, r - 1.0, DEFAULT_TOL).unwrap();
            assert_relative_eq!(p.a[i], q.value, max_relative = 1e-12);
            assert_relative_eq!(p.da[i], q.deriv, max_relative = 1e-11);
        }
    }

    #[test]
    fn spherical_slope_from_decay_condition() {
        let s = solver(64);
        let p = s.solve_mode(0, 0, &vec![0.0; s.grid.len()], 1.0).unwrap();
        assert_relative_eq!(p.da[0], -2.0 / (3.0 * 3f64.ln()), max_relative = 1e-13);
        // a = ln(r/(r−2))/ln 3.
        for (i, r) in s.grid.r.iter().enumerate() {
            assert_relative_eq!(p.a[i], (r / (r - 2.0)).ln() / 3f64.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let s = solver(32);
        for l in [0, 1, 5] {
            for op in [ModeOperator::Laplacian, ModeOperator::Shifted] {
                let p = s.solve_mode_op(l, 0, op, &vec![0.0; s.grid.len()], 0.0).unwrap();
                assert!(p.a.iter().chain(&p.da).chain(&p.d2a).all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn shifted_pairs_have_constant_wronskian() {
        let s = solver(32);
        for l in [0usize, 1, 2, 3, 7, 20] {
            let t = s.pair_table(l, ModeOperator::Shifted).unwrap();
            for (i, &z) in s.z_nodes.iter().enumerate().step_by(5) {
                assert_relative_eq!(pair_wronskian(l, z, &t.nodes[i]), t.wronskian, max_relative = 1e-10);
            }
        }
        assert_relative_eq!(s.pair_table(0, ModeOperator::Shifted).unwrap().wronskian, -1.0, max_relative = 1e-14);
        assert_relative_eq!(s.pair_table(1, ModeOperator::Shifted).unwrap().wronskian, -3.0, max_relative = 1e-14);
    }

    #[test]
    fn shifted_homogeneous_solution_solves_equation() {
        let s = solver(128);
        for l in [0usize, 1, 2, 6] {
            let t = s.pair_table(l, ModeOperator::Shifted).unwrap();
            let (a, da, d2a) = s.decaying(&t);
            let p = ModeProfile { l, m: 0, a, da: da.clone(), d2a };
            assert!(p.stack_consistency(&s.grid, 100.0) < 1e-8, "ℓ={l}");
            let num = s.grid.deriv(&p.a);
            for i in 0..40 {
                assert!((num[i] - da[i]).abs() < 1e-8 * da[0].abs(), "ℓ={l}");
            }
        }
    }

    fn manufactured(l: usize, op: ModeOperator, f: impl Fn(f64) -> [f64; 3]) -> (Vec<f64>, Vec<f64>, ModeProfile) {
        let s = solver(200);
        let mu2 = op.mu_sq();
        let exact: Vec<[f64; 3]> = s.grid.r.iter().map(|&r| f(r)).collect();
        let b: Vec<f64> = s
            .grid
            .r
            .iter()
            .zip(&exact)
            .map(|(&r, e)| {
                let q = r * (r - 2.0);
                e[2] + 2.0 * (r - 1.0) / q * e[1] - ((l * (l + 1)) as f64 + mu2 / q) / q * e[0]
            })
            .collect();
        let p = s.solve_mode_op(l, 0, op, &b, exact[0][0]).unwrap();
        (exact.iter().map(|e| e[0]).collect(), s.grid.r.clone(), p)
    }

    #[test]
    fn manufactured_mode_solutions_are_recovered() {
        for op in [ModeOperator::Laplacian, ModeOperator::Shifted] {
            for l in [0usize, 1, 2, 4] {
                let (exact, r, p) = manufactured(l, op, |r| {
                    let e = (-(r - 3.0)).exp();
                    [e, -e, e]
                });
                for i in 0..r.len() {
                    assert!((p.a[i] - exact[i]).abs() * r[i].powf(0.75) < 1e-9, "{op:?} ℓ={l} r={} got {} want {}", r[i], p.a[i], exact[i]);
                }
                let (exact, r, p) = manufactured(l, op, |r| [r.powf(-2.0), -2.0 * r.powf(-3.0), 6.0 * r.powf(-4.0)]);
                for i in 0..r.len() {
                    assert!((p.a[i] - exact[i]).abs() * r[i].powf(0.75) < 1e-8, "{op:?} ℓ={l} r={} got {} want {}", r[i], p.a[i], exact[i]);
                }
            }
        }
    }

    #[test]
    fn non_decaying_rhs_is_rejected() {
        let s = solver(64);
        let b: Vec<f64> = s.grid.r.iter().map(|r| 1.0 / r).collect();
        assert!(matches!(s.solve_mode(2, 0, &b, 0.0), Err(Error::Divergence(_))));
        assert!(matches!(s.solve_mode(0, 0, &b, 0.0), Err(Error::Divergence(_))));
    }

    #[test]
    fn estimate_sides_vanish_for_zero_data() {
        let s = solver(48);
        let z = vec![0.0; s.grid.len()];
        let p = s.solve_mode(3, 0, &z, 0.0).unwrap();
        let (h, c) = estimate_sides(&s, &p, &z, 0.0, -0.75);
        assert_eq!((h, c), ([0.0, 0.0], [0.0, 0.0]));
    }

    #[test]
    fn estimate_ratio_is_finite_for_degree_one() {
        let s = solver(96);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (b, c) = random_mode_data(&s.grid, -0.75, &mut rng);
        let p = s.solve_mode(1, 0, &b, c).unwrap();
        let (h, cc) = estimate_sides(&s, &p, &b, c, -0.75);
        assert!(ratio(h).is_finite() && ratio(h) > 0.0);
        assert!(ratio(cc).is_finite() && ratio(cc) > 0.0);
    }
}
