//! Kinematics of foliated metrics `dr² + g(r)` and the reduced static vacuum equations.
//!
//! A metric is stored as a perturbation of a reference family,
//! `g(r) = r(r − 2m_b)γ + r²(γ̃∞ + h̃(r))`, where `γ` is the round metric, `m_b ≥ 0` a
//! base mass (`m_b = 0` is the flat cone), and `γ̃∞`, `h̃(r)` are band-limited symmetric
//! tensors with `h̃` carried together with its first two radial derivatives. In the
//! notation `g(r) = r²(γ∞ + h(r))` this is `γ∞ = γ + γ̃∞`, `h = −(2m_b/r)γ + h̃`.
//!
//! Everything angular is evaluated on a [`SphGrid`] in the orthonormal round frame.
//! With `K = ½∂_r g`, `trK = g^{ab}K_ab` and `K̂ = K − ½trK·g`, the reduced equations of a
//! static vacuum written as `(M, dr² + g(r), u)` with `Ric = 2du⊗du` are
//!
//! * `Δ_g u = ∂²_r u + trK ∂_r u + Δ̸_{g(r)}u = 0`,
//! * `∂_r trK + ½trK² + |K̂|² + 2(∂_r u)² = 0`,
//! * `∂_r K̂ − |K̂|²g + 2d̸u⊗d̸u − |d̸u|²g = 0` (the Lie derivative is the plain radial
//!   derivative of the chart components; the expression is automatically `g`-traceless),
//!
//! and on the boundary the Gauss and Codazzi constraints
//! `2|d̸u|² − 2(∂_r u)² − |K̂|² − R_{∂M} + ½trK² = 0`, `2∂_r u·d̸u − div K̂ + ½d̸trK = 0`.
//! The signs are those for which the Schwarzschild pair has vanishing residuals.

use crate::error::{Error, Result};
use crate::schwarzschild::Background;
use crate::spaces::{fit_tail, tail_window, RadialGrid, RadialScalar, SEGMENT_POINTS};
use crate::sphharm::{ck_projection_grid, CkBasis, Deriv2, MetricOps, ScalarField, SphGrid, SymGrid, SymTensor, TangentField, VecGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Boundary data: a metric `γ_𝔅` on the sphere and a mean curvature `trK_𝔅`.
#[derive(Debug, Clone, PartialEq)]
pub struct BartnikData {
    /// Boundary metric.
    pub gamma: SymTensor,
    /// Boundary mean curvature.
    pub tr_k: ScalarField,
}

/// Data induced on `r = n·m₀` by the Schwarzschild solution of mass `m₀`:
/// `γ_𝔅 = (n·m₀)²γ`, `trK_𝔅 = 2√(1 − 2/n)/(n·m₀)`.
pub fn schwarzschild_bartnik_data(bg: &Background, l_max: usize) -> BartnikData {
    let r0 = bg.r0();
    let h = 2.0 * (1.0 - 2.0 / bg.n).sqrt() / r0;
    BartnikData {
        gamma: SymTensor::round(l_max, r0 * r0),
        tr_k: ScalarField::single(l_max, 0, 0, h * (4.0 * std::f64::consts::PI).sqrt()),
    }
}

/// Foliated metric `dr² + r(r − 2m_b)γ + r²(γ̃∞ + h̃(r))` on the nodes of a radial grid.
#[derive(Debug, Clone)]
pub struct FoliatedMetric {
    /// Base mass `m_b ≥ 0`.
    pub base_mass: f64,
    /// Radial grid.
    pub grid: RadialGrid,
    /// Angular band of the perturbation.
    pub l_max: usize,
    /// `γ̃∞`.
    pub gamma_inf: SymTensor,
    /// `h̃` per node.
    pub h: Vec<SymTensor>,
    /// `∂_r h̃` per node.
    pub dh: Vec<SymTensor>,
    /// `∂²_r h̃` per node.
    pub d2h: Vec<SymTensor>,
}

/// One leaf `S_r` with its metric, second fundamental form and radial derivatives, on the
/// angular grid.
#[derive(Debug, Clone)]
pub struct Leaf {
    /// Radius.
    pub r: f64,
    /// `g(r)`.
    pub g: SymGrid,
    /// `∂_r g`.
    pub dg: SymGrid,
    /// `∂²_r g`.
    pub d2g: SymGrid,
    /// Inverse metric per point.
    pub ginv: Vec<Deriv2>,
    /// `trK`.
    pub tr_k: Vec<f64>,
    /// `∂_r trK`.
    pub dtr_k: Vec<f64>,
    /// `K̂`.
    pub khat: SymGrid,
    /// `∂_r K̂` (chart components).
    pub dkhat: SymGrid,
    /// `|K̂|²_g`.
    pub khat_sq: Vec<f64>,
}

fn inv2(m: [[f64; 2]; 2]) -> Option<Deriv2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det > 0.0) || !(m[0][0] > 0.0) {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn contract(gi: &Deriv2, t: [[f64; 2]; 2]) -> f64 {
    gi[0][0] * t[0][0] + gi[0][1] * t[0][1] + gi[1][0] * t[1][0] + gi[1][1] * t[1][1]
}

fn norm_sq(gi: &Deriv2, a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> f64 {
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    s += gi[i][k] * gi[j][l] * a[i][j] * b[k][l];
                }
            }
        }
    }
    s
}

impl Leaf {
    /// Builds the leaf from `g`, `∂g`, `∂²g`.
    pub fn from_metric(r: f64, g: SymGrid, dg: SymGrid, d2g: SymGrid) -> Result<Self> {
        let n = g.tt.len();
        let mut ginv = Vec::with_capacity(n);
        let (mut tr_k, mut dtr_k, mut khat_sq) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut khat = SymGrid::round(n, 0.0);
        let mut dkhat = SymGrid::round(n, 0.0);
        for p in 0..n {
            let gi = inv2(g.at(p)).ok_or_else(|| Error::Inadmissible(format!("g(r={r}) not positive definite at point {p}")))?;
            let (gm, dgm, d2gm) = (g.at(p), dg.at(p), d2g.at(p));
            let t = 0.5 * contract(&gi, dgm);
            // ∂(g^{ab})= −2K^{ab}, so ∂trK = ½g:∂²g − ¼|∂g|².
            let dt = 0.5 * contract(&gi, d2gm) - 0.5 * norm_sq(&gi, dgm, dgm);
            let kh = |a: usize, b: usize| 0.5 * dgm[a][b] - 0.5 * t * gm[a][b];
            let dkh = |a: usize, b: usize| 0.5 * d2gm[a][b] - 0.5 * dt * gm[a][b] - 0.5 * t * dgm[a][b];
            khat.tt[p] = kh(0, 0);
            khat.tp[p] = kh(0, 1);
            khat.pp[p] = kh(1, 1);
            dkhat.tt[p] = dkh(0, 0);
            dkhat.tp[p] = dkh(0, 1);
            dkhat.pp[p] = dkh(1, 1);
            khat_sq[p] = norm_sq(&gi, khat.at(p), khat.at(p));
            tr_k[p] = t;
            dtr_k[p] = dt;
            ginv.push(gi);
        }
        Ok(Self { r, g, dg, d2g, ginv, tr_k, dtr_k, khat, dkhat, khat_sq })
    }

    /// Builds the leaf from `g = aγ + P` with a round reference profile `a(r) > 0` (values
    /// `[a, ∂a, ∂²a]`), the perturbation `[P, ∂P]` and `[Q, ∂Q]` for `Q = ∂P − (∂a/a)P`.
    ///
    /// Since `K̂` is the `g`-traceless part of `½∂g` and that part is blind to multiples of
    /// `g`, it is formed from `Q` alone; supplying `Q` directly lets the caller avoid the
    /// cancellation between `∂P` and `(∂a/a)P`, so `K̂` and `∂K̂` carry round-off relative
    /// to the perturbation.
    pub fn from_reference(r: f64, a: [f64; 3], p: [&SymGrid; 2], qs: [&SymGrid; 2]) -> Result<Self> {
        if !(a[0] > 0.0) {
            return Err(Error::Inadmissible(format!("reference profile {} not positive at r = {r}", a[0])));
        }
        let n = p[0].tt.len();
        let c = a[1] / a[0];
        let dc = a[2] / a[0] - c * c;
        let g = SymGrid::round(n, a[0]).lin_comb(1.0, p[0], 1.0);
        let dg = SymGrid::round(n, a[1]).lin_comb(1.0, p[1], 1.0);
        // ∂²P = ∂Q + ∂c·P + c∂P.
        let d2g = SymGrid::round(n, a[2]).lin_comb(1.0, qs[1], 1.0).lin_comb(1.0, p[0], dc).lin_comb(1.0, p[1], c);
        let mut ginv = Vec::with_capacity(n);
        let (mut tr_k, mut dtr_k, mut khat_sq) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut khat = SymGrid::round(n, 0.0);
        let mut dkhat = SymGrid::round(n, 0.0);
        for pt in 0..n {
            let gm = g.at(pt);
            let gi = inv2(gm).ok_or_else(|| Error::Inadmissible(format!("g(r={r}) not positive definite at point {pt}")))?;
            let (qm, dq, dgm) = (qs[0].at(pt), qs[1].at(pt), dg.at(pt));
            // trK = c + δt with δt = ½g:Q, and ∂(g^{ab}) = −g^{ac}∂g_cd g^{db}.
            let dt = 0.5 * contract(&gi, qm);
            let ddt = 0.5 * contract(&gi, dq) - 0.5 * norm_sq(&gi, dgm, qm);
            let kh = |i: usize, j: usize| 0.5 * qm[i][j] - 0.5 * dt * gm[i][j];
            let dkh = |i: usize, j: usize| 0.5 * dq[i][j] - 0.5 * ddt * gm[i][j] - 0.5 * dt * dgm[i][j];
            khat.tt[pt] = kh(0, 0);
            khat.tp[pt] = kh(0, 1);
            khat.pp[pt] = kh(1, 1);
            dkhat.tt[pt] = dkh(0, 0);
            dkhat.tp[pt] = dkh(0, 1);
            dkhat.pp[pt] = dkh(1, 1);
            khat_sq[pt] = norm_sq(&gi, khat.at(pt), khat.at(pt));
            tr_k[pt] = c + dt;
            dtr_k[pt] = dc + ddt;
            ginv.push(gi);
        }
        Ok(Self { r, g, dg, d2g, ginv, tr_k, dtr_k, khat, dkhat, khat_sq })
    }

    /// `|ω|²_g` of a one-form.
    pub fn covector_norm_sq(&self, w: &VecGrid) -> Vec<f64> {
        self.ginv
            .iter()
            .enumerate()
            .map(|(p, gi)| gi[0][0] * w.t[p] * w.t[p] + 2.0 * gi[0][1] * w.t[p] * w.p[p] + gi[1][1] * w.p[p] * w.p[p])
            .collect()
    }
}

impl FoliatedMetric {
    /// Reference metric with zero perturbation and base mass `m_b`.
    pub fn reference(base_mass: f64, grid: RadialGrid, l_max: usize) -> Result<Self> {
        if !(base_mass >= 0.0) || 2.0 * base_mass >= grid.r0 {
            return Err(Error::Config(format!("base mass {base_mass} incompatible with r0 = {}", grid.r0)));
        }
        let z = SymTensor::zeros(l_max);
        let n = grid.len();
        Ok(Self { base_mass, grid, l_max, gamma_inf: z.clone(), h: vec![z.clone(); n], dh: vec![z.clone(); n], d2h: vec![z; n] })
    }

    /// The conformal Schwarzschild metric `dr² + r(r − 2m₀)γ`.
    pub fn schwarzschild(bg: &Background, grid: RadialGrid, l_max: usize) -> Result<Self> {
        Self::reference(bg.m0, grid, l_max)
    }

    /// The flat cone `dr² + r²γ`.
    pub fn flat(grid: RadialGrid, l_max: usize) -> Result<Self> {
        Self::reference(0.0, grid, l_max)
    }

    /// Sets the perturbation from a closure `r → (h̃, ∂h̃, ∂²h̃)`.
    pub fn with_perturbation(mut self, gamma_inf: SymTensor, f: impl Fn(f64) -> (SymTensor, SymTensor, SymTensor)) -> Self {
        self.gamma_inf = gamma_inf;
        for (i, &r) in self.grid.r.iter().enumerate() {
            let (a, b, c) = f(r);
            self.h[i] = a;
            self.dh[i] = b;
            self.d2h[i] = c;
        }
        self
    }

    fn assemble(&self, sph: &SphGrid, r: f64, h: &SymTensor, dh: &SymTensor, d2h: &SymTensor) -> Result<Leaf> {
        let m = self.base_mass;
        let tot = self.gamma_inf.lin_comb(1.0, h, 1.0);
        let s0 = sph.synth_sym(&tot)?;
        let s1 = sph.synth_sym(dh)?;
        let s2 = sph.synth_sym(d2h)?;
        let n = sph.n_points();
        let comb = |c: f64, terms: &[(f64, &SymGrid)]| {
            let mut out = SymGrid::round(n, c);
            for (k, t) in terms {
                out = out.lin_comb(1.0, t, *k);
            }
            out
        };
        // With P = r²T and c = ∂φ²/φ²: Q = r²∂T + βT, β = 2r − cr² = −2mr/(r − 2m).
        let beta = -2.0 * m * r / (r - 2.0 * m);
        let dbeta = 4.0 * m * m / ((r - 2.0 * m) * (r - 2.0 * m));
        let p0 = comb(0.0, &[(r * r, &s0)]);
        let p1 = comb(0.0, &[(2.0 * r, &s0), (r * r, &s1)]);
        let q0 = comb(0.0, &[(beta, &s0), (r * r, &s1)]);
        let q1 = comb(0.0, &[(dbeta, &s0), (2.0 * r + beta, &s1), (r * r, &s2)]);
        Leaf::from_reference(r, [r * (r - 2.0 * m), 2.0 * (r - m), 2.0], [&p0, &p1], [&q0, &q1])
    }

    /// Leaf at node `i`.
    pub fn leaf(&self, sph: &SphGrid, i: usize) -> Result<Leaf> {
        self.assemble(sph, self.grid.r[i], &self.h[i], &self.dh[i], &self.d2h[i])
    }

    /// Leaf at an arbitrary radius in range (perturbation interpolated barycentrically).
    pub fn leaf_at(&self, sph: &SphGrid, r: f64) -> Result<Leaf> {
        let w = self.grid.interp_matrix(&[r]);
        let mix = |v: &[SymTensor]| {
            let mut acc = SymTensor::zeros(self.l_max);
            for (j, t) in v.iter().enumerate() {
                let c = w[(0, j)];
                if c != 0.0 {
                    acc = acc.lin_comb(1.0, t, c);
                }
            }
            acc
        };
        self.assemble(sph, r, &mix(&self.h), &mix(&self.dh), &mix(&self.d2h))
    }

    /// Leaves at every node (computed in parallel).
    pub fn leaves(&self, sph: &SphGrid) -> Result<Vec<Leaf>> {
        (0..self.grid.len()).into_par_iter().map(|i| self.leaf(sph, i)).collect()
    }
}

/// `trK` and `K̂` at every node.
pub fn second_fundamental_form(metric: &FoliatedMetric, sph: &SphGrid) -> Result<Vec<(Vec<f64>, SymGrid)>> {
    Ok(metric.leaves(sph)?.into_iter().map(|l| (l.tr_k, l.khat)).collect())
}

/// Stacks of the Schwarzschild potential `u_sc = ½ln(1 − 2m₀/r)` (a pure `ℓ = 0` field).
pub fn schwarzschild_potential(bg: &Background, grid: &RadialGrid, l_max: usize) -> RadialScalar {
    let y0 = (4.0 * std::f64::consts::PI).sqrt();
    RadialScalar::from_fn(grid, l_max, |r, l, _| {
        if l == 0 {
            let v = bg.eval(r).expect("grid inside the exterior");
            (y0 * v.u, y0 * v.du, y0 * v.d2u)
        } else {
            (0.0, 0.0, 0.0)
        }
    })
}

/// Grid samples of `u`, `∂_r u`, `∂²_r u` and the round gradient `d̸u` at node `i`.
struct PotentialSamples {
    du: Vec<f64>,
    d2u: Vec<f64>,
    grad: VecGrid,
}

fn potential_samples(sph: &SphGrid, u: &RadialScalar, i: usize) -> Result<PotentialSamples> {
    let f = u.at(i);
    Ok(PotentialSamples { du: sph.synthesize(&u.d1_at(i))?, d2u: sph.synthesize(&u.d2_at(i))?, grad: sph.gradient(&f)? })
}

/// `Δ_g u = ∂²_r u + trK ∂_r u + Δ̸_{g(r)}u` on the angular grid at every node.
pub fn laplacian_grid(metric: &FoliatedMetric, sph: &SphGrid, u: &RadialScalar) -> Result<Vec<Vec<f64>>> {
    check_stacks(metric, u)?;
    let band = sph.deriv_band();
    (0..metric.grid.len())
        .into_par_iter()
        .map(|i| {
            let leaf = metric.leaf(sph, i)?;
            let ops = MetricOps::new(sph, leaf.g.clone(), band)?;
            let ang = ops.laplacian(&u.at(i))?;
            let s = potential_samples(sph, u, i)?;
            Ok((0..sph.n_points()).map(|p| s.d2u[p] + leaf.tr_k[p] * s.du[p] + ang[p]).collect())
        })
        .collect()
}

/// `Δ_g u` analysed to degree `l_out` at every node (values only).
pub fn laplacian(metric: &FoliatedMetric, sph: &SphGrid, u: &RadialScalar, l_out: usize) -> Result<RadialScalar> {
    let grid_vals = laplacian_grid(metric, sph, u)?;
    analyse_nodes(sph, &grid_vals, l_out, metric.grid.len())
}

fn analyse_nodes(sph: &SphGrid, vals: &[Vec<f64>], l_out: usize, n_r: usize) -> Result<RadialScalar> {
    let mut out = RadialScalar::zeros(n_r, l_out);
    for (i, v) in vals.iter().enumerate() {
        let f = sph.analyze(v, l_out)?;
        for (k, c) in f.c.iter().enumerate() {
            out.val[(i, k)] = *c;
        }
    }
    Ok(out)
}

fn check_stacks(metric: &FoliatedMetric, u: &RadialScalar) -> Result<()> {
    if u.n_r() != metric.grid.len() {
        return Err(Error::Shape(format!("potential has {} nodes, metric {}", u.n_r(), metric.grid.len())));
    }
    Ok(())
}

/// Residuals of the two radial transport equations at one node.
#[derive(Debug, Clone)]
pub struct TransportResidual {
    /// Radius.
    pub r: f64,
    /// `∂_r trK + ½trK² + |K̂|² + 2(∂_r u)²`.
    pub mean_curvature: Vec<f64>,
    /// `∂_r K̂ − |K̂|²g + 2d̸u⊗d̸u − |d̸u|²g`.
    pub traceless: SymGrid,
}

/// Evaluates the transport residuals at every node.
pub fn transport_step_residuals(metric: &FoliatedMetric, sph: &SphGrid, u: &RadialScalar) -> Result<Vec<TransportResidual>> {
    check_stacks(metric, u)?;
    (0..metric.grid.len())
        .into_par_iter()
        .map(|i| {
            let leaf = metric.leaf(sph, i)?;
            let s = potential_samples(sph, u, i)?;
            Ok(transport_at(&leaf, &s))
        })
        .collect()
}

fn transport_at(leaf: &Leaf, s: &PotentialSamples) -> TransportResidual {
    let n = leaf.tr_k.len();
    let grad_sq = leaf.covector_norm_sq(&s.grad);
    let mean_curvature = (0..n)
        .map(|p| leaf.dtr_k[p] + 0.5 * leaf.tr_k[p] * leaf.tr_k[p] + leaf.khat_sq[p] + 2.0 * s.du[p] * s.du[p])
        .collect();
    let traceless = SymGrid::from_fn(n, |p| {
        let (dk, g) = (leaf.dkhat.at(p), leaf.g.at(p));
        let w = [s.grad.t[p], s.grad.p[p]];
        let mut out = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                out[a][b] = dk[a][b] - leaf.khat_sq[p] * g[a][b] + 2.0 * w[a] * w[b] - grad_sq[p] * g[a][b];
            }
        }
        out
    });
    TransportResidual { r: leaf.r, mean_curvature, traceless }
}

/// Boundary residuals of the reduced equations.
#[derive(Debug, Clone)]
pub struct ConstraintResidual {
    /// Gauss constraint `2|d̸u|² − 2(∂_r u)² − |K̂|² − R(e^{2u}γ_𝔅) + ½trK²`.
    pub gauss: ScalarField,
    /// Codazzi constraint `2∂_r u·d̸u − div K̂ + ½d̸trK` (a one-form).
    pub codazzi: TangentField,
    /// Projection of the Codazzi residual on the conformal Killing fields of `g(r₀)`.
    pub ck_component: [f64; 6],
    /// Metric matching `e^{−2u}g(r₀) − γ_𝔅`.
    pub metric_match: SymTensor,
    /// Mean-curvature matching `trK − 2∂_r u − e^{−u}trK_𝔅`.
    pub mean_curvature_match: ScalarField,
    /// Largest absolute grid value over all four residuals.
    pub max_abs: f64,
}

/// Evaluates the boundary constraints and matching conditions at `r = r₀`, analysed to
/// degree `l_out`.
pub fn boundary_constraints(
    metric: &FoliatedMetric,
    sph: &SphGrid,
    u: &RadialScalar,
    data: &BartnikData,
    l_out: usize,
) -> Result<ConstraintResidual> {
    check_stacks(metric, u)?;
    let band = sph.deriv_band();
    let leaf = metric.leaf(sph, 0)?;
    let s = potential_samples(sph, u, 0)?;
    let n = sph.n_points();
    let u0 = sph.synthesize(&u.at(0))?;
    let gb = sph.synth_sym(&data.gamma)?;
    let conf = SymGrid {
        tt: (0..n).map(|p| (2.0 * u0[p]).exp() * gb.tt[p]).collect(),
        tp: (0..n).map(|p| (2.0 * u0[p]).exp() * gb.tp[p]).collect(),
        pp: (0..n).map(|p| (2.0 * u0[p]).exp() * gb.pp[p]).collect(),
    };
    let r_bdy = MetricOps::new(sph, conf, band)?.scalar_curvature()?;
    let grad_sq = leaf.covector_norm_sq(&s.grad);
    let gauss_g: Vec<f64> = (0..n)
        .map(|p| 2.0 * grad_sq[p] - 2.0 * s.du[p] * s.du[p] - leaf.khat_sq[p] - r_bdy[p] + 0.5 * leaf.tr_k[p] * leaf.tr_k[p])
        .collect();
    let codazzi_g = codazzi_at(sph, &leaf, &s, band)?;
    let basis = CkBasis::for_metric(sph, &leaf.g)?;
    let ck_component = ck_projection_grid(sph, &leaf.g, &codazzi_g, &basis)?;
    let mm = SymGrid::from_fn(n, |p| {
        let e = (-2.0 * u0[p]).exp();
        let (g, b) = (leaf.g.at(p), gb.at(p));
        [[e * g[0][0] - b[0][0], e * g[0][1] - b[0][1]], [e * g[1][0] - b[1][0], e * g[1][1] - b[1][1]]]
    });
    let tb = sph.synthesize(&data.tr_k)?;
    let hm: Vec<f64> = (0..n).map(|p| leaf.tr_k[p] - 2.0 * s.du[p] - (-u0[p]).exp() * tb[p]).collect();
    let max_abs = [
        gauss_g.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
        codazzi_g.t.iter().chain(&codazzi_g.p).fold(0.0_f64, |a, v| a.max(v.abs())),
        mm.max_abs(),
        hm.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok(ConstraintResidual {
        gauss: sph.analyze(&gauss_g, l_out)?,
        codazzi: sph.analyze_tangent(&codazzi_g, l_out)?,
        ck_component,
        metric_match: sph.analyze_sym(&mm, l_out)?,
        mean_curvature_match: sph.analyze(&hm, l_out)?,
        max_abs,
    })
}

fn codazzi_at(sph: &SphGrid, leaf: &Leaf, s: &PotentialSamples, band: usize) -> Result<VecGrid> {
    let ops = MetricOps::new(sph, leaf.g.clone(), band)?;
    let div = ops.div_sym(&leaf.khat)?;
    let trk = sph.analyze(&leaf.tr_k, band)?;
    let dtrk = sph.gradient(&trk)?;
    let n = sph.n_points();
    Ok(VecGrid {
        t: (0..n).map(|p| 2.0 * s.du[p] * s.grad.t[p] - div.t[p] + 0.5 * dtrk.t[p]).collect(),
        p: (0..n).map(|p| 2.0 * s.du[p] * s.grad.p[p] - div.p[p] + 0.5 * dtrk.p[p]).collect(),
    })
}

/// Sup-norms of the Gauss and Codazzi constraints of every interior leaf, with the
/// intrinsic curvature of `g(r)` in place of the boundary curvature.
pub fn interior_constraints(metric: &FoliatedMetric, sph: &SphGrid, u: &RadialScalar) -> Result<Vec<(f64, f64, f64)>> {
    check_stacks(metric, u)?;
    let band = sph.deriv_band();
    (0..metric.grid.len())
        .into_par_iter()
        .map(|i| {
            let leaf = metric.leaf(sph, i)?;
            let s = potential_samples(sph, u, i)?;
            let ops = MetricOps::new(sph, leaf.g.clone(), band)?;
            let rc = ops.scalar_curvature()?;
            let grad_sq = leaf.covector_norm_sq(&s.grad);
            let gauss = (0..sph.n_points())
                .map(|p| 2.0 * grad_sq[p] - 2.0 * s.du[p] * s.du[p] - leaf.khat_sq[p] - rc[p] + 0.5 * leaf.tr_k[p] * leaf.tr_k[p])
                .fold(0.0_f64, |a, v| a.max(v.abs()));
            let cod = codazzi_at(sph, &leaf, &s, band)?;
            let cn = leaf.covector_norm_sq(&cod).into_iter().fold(0.0_f64, |a, v| a.max(v.sqrt()));
            Ok((leaf.r, gauss, cn))
        })
        .collect()
}

/// Output of [`ah_transport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AhReport {
    /// Radii.
    pub r: Vec<f64>,
    /// `L(r) = exp∫_{r₀}^r trK` at the first angular point.
    pub transport_factor: Vec<f64>,
    /// `sup |A|_{g(r)}` per node.
    pub a_sup: Vec<f64>,
    /// `sup |H|` per node.
    pub h_sup: Vec<f64>,
    /// Fitted decay exponent of `sup|A|` (−∞ when `A ≡ 0`).
    pub a_exponent: f64,
    /// Fitted decay exponent of `sup|H|` (−∞ when `H` vanishes to round-off).
    pub h_exponent: f64,
    /// Whether `|A| = O(r⁻³)` and `H = O(r⁻²)` per the fits.
    pub decay_ok: bool,
}

/// Transports a boundary one-form `ω` by `∂_r A = −trK·A` and `∂_r H + trK·H = 2div A`:
/// `A = ω/L`, `H = L⁻¹∫_{r₀}^r L·2div A`, with `L = exp∫_{r₀}^r trK` per angular point.
pub fn ah_transport(metric: &FoliatedMetric, sph: &SphGrid, omega: &TangentField) -> Result<AhReport> {
    let band = sph.deriv_band();
    let leaves = metric.leaves(sph)?;
    let n = sph.n_points();
    let nr = metric.grid.len();
    let m = metric.base_mass;
    let grid = &metric.grid;
    let sq = grid.segment_quadrature(SEGMENT_POINTS);
    let base = |r: f64| 2.0 * (r - m) / (r * (r - 2.0 * m));
    let base_int = |r: f64| (r * (r - 2.0 * m) / (grid.r0 * (grid.r0 - 2.0 * m))).ln();
    // ln L per point: analytic base part plus quadrature of the decaying remainder.
    let mut ln_l = vec![vec![0.0; n]; nr];
    for p in 0..n {
        let rem: Vec<f64> = leaves.iter().map(|lf| lf.tr_k[p] - base(lf.r)).collect();
        let c = sq.cumulative(&sq.values(&rem));
        for i in 0..nr {
            ln_l[i][p] = c[i] + base_int(grid.r[i]);
        }
    }
    let w = sph.synth_tangent(omega)?;
    let mut a_sup = vec![0.0; nr];
    let mut src = vec![vec![0.0; nr]; n];
    for i in 0..nr {
        let a = VecGrid {
            t: (0..n).map(|p| w.t[p] * (-ln_l[i][p]).exp()).collect(),
            p: (0..n).map(|p| w.p[p] * (-ln_l[i][p]).exp()).collect(),
        };
        a_sup[i] = leaves[i].covector_norm_sq(&a).into_iter().fold(0.0_f64, |x, v| x.max(v.sqrt()));
        let ops = MetricOps::new(sph, leaves[i].g.clone(), band)?;
        let da = sph.cov_deriv_vector(&a, band)?;
        for p in 0..n {
            let v = [a.t[p], a.p[p]];
            let mut div = 0.0;
            for x in 0..2 {
                for y in 0..2 {
                    let mut d = da[p][x][y];
                    for c in 0..2 {
                        d -= ops.chr[p][c][x][y] * v[c];
                    }
                    div += ops.ginv[p][x][y] * d;
                }
            }
            src[p][i] = ln_l[i][p].exp() * 2.0 * div;
        }
    }
    let mut h_sup = vec![0.0_f64; nr];
    for (p, sp) in src.iter().enumerate() {
        let c = sq.cumulative(&sq.values(sp));
        for i in 0..nr {
            h_sup[i] = h_sup[i].max((c[i] * (-ln_l[i][p]).exp()).abs());
        }
    }
    let fit_exp = |v: &[f64]| {
        let scale = v.iter().fold(0.0_f64, |a, x| a.max(*x));
        if scale < 1e-13 {
            return f64::NEG_INFINITY;
        }
        let f = fit_tail(&grid.r, v, tail_window(nr));
        if f.valid { f.exponent } else { f64::NEG_INFINITY }
    };
    let (a_exponent, h_exponent) = (fit_exp(&a_sup), fit_exp(&h_sup));
    Ok(AhReport {
        r: grid.r.clone(),
        transport_factor: ln_l.iter().map(|v| v[0].exp()).collect(),
        a_sup,
        h_sup,
        a_exponent,
        h_exponent,
        decay_ok: a_exponent <= -3.0 + 1e-2 && h_exponent <= -2.0 + 1e-2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphharm::{ck_raw_field, TracelessTensor};
    use approx::assert_relative_eq;

    fn setup(n_r: usize) -> (Background, RadialGrid, SphGrid) {
        let bg = Background::new(1.0, 3.0).unwrap();
        (bg, RadialGrid::with_default_cut(&bg, n_r).unwrap(), SphGrid::new(6).unwrap())
    }

    #[test]
    fn schwarzschild_kinematics() {
        let (bg, grid, sph) = setup(24);
        let g = FoliatedMetric::schwarzschild(&bg, grid, 4).unwrap();
        for (i, (trk, kh)) in second_fundamental_form(&g, &sph).unwrap().iter().enumerate() {
            let r = g.grid.r[i];
            for v in trk {
                assert_relative_eq!(*v, bg.tr_k(r), max_relative = 1e-13);
            }
            assert!(kh.max_abs() < 1e-12 * r);
        }
    }

    #[test]
    fn flat_cone_kinematics() {
        let (_, grid, sph) = setup(16);
        let g = FoliatedMetric::flat(grid, 4).unwrap();
        for (i, (trk, kh)) in second_fundamental_form(&g, &sph).unwrap().iter().enumerate() {
            assert!(trk.iter().all(|v| (v - 2.0 / g.grid.r[i]).abs() < 1e-14));
            assert!(kh.max_abs() < 1e-12);
        }
    }

    #[test]
    fn mean_curvature_matches_finite_differences() {
        let (bg, grid, sph) = setup(24);
        let pert = |r: f64| {
            let mut t = SymTensor::zeros(4);
            t.iso.c[crate::sphharm::mode_index(2, 1)] = 0.05 * 9.0 / (r * r);
            t.tf.e.c[crate::sphharm::mode_index(3, -2)] = 0.02 * 3.0 / r;
            t
        };
        let dpert = |r: f64| pert(r + 1e-5 * r).lin_comb(1.0, &pert(r - 1e-5 * r), -1.0).scaled(1.0 / (2e-5 * r));
        let g = FoliatedMetric::schwarzschild(&bg, grid, 4).unwrap().with_perturbation(SymTensor::zeros(4), |r| {
            let d2 = pert(r + 1e-4 * r).lin_comb(1.0, &pert(r), -2.0).lin_comb(1.0, &pert(r - 1e-4 * r), 1.0).scaled(1.0 / (1e-4 * r).powi(2));
            (pert(r), dpert(r), d2)
        });
        for i in [0, 5, 11] {
            let r = g.grid.r[i];
            let leaf = g.leaf(&sph, i).unwrap();
            let eps = 1e-6 * r;
            let (up, dn) = (g.leaf_at(&sph, r + eps).unwrap(), g.leaf_at(&sph, r - eps).unwrap());
            for p in (0..sph.n_points()).step_by(7) {
                let fd = |s: &SymGrid, t: &SymGrid| (s.tt[p] - t.tt[p]) / (2.0 * eps);
                let dg_fd = fd(&up.g, &dn.g);
                assert!((dg_fd - leaf.dg.tt[p]).abs() < 1e-8 * leaf.dg.tt[p].abs().max(1.0));
                // trK from finite-difference ∂g.
                let dgm = [[dg_fd, (up.g.tp[p] - dn.g.tp[p]) / (2.0 * eps)], [(up.g.tp[p] - dn.g.tp[p]) / (2.0 * eps), (up.g.pp[p] - dn.g.pp[p]) / (2.0 * eps)]];
                let trk_fd = 0.5 * contract(&leaf.ginv[p], dgm);
                assert!((trk_fd - leaf.tr_k[p]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn kinematic_identity_dg_equals_trk_g_plus_two_khat() {
        let (bg, grid, sph) = setup(16);
        let g = FoliatedMetric::schwarzschild(&bg, grid, 4).unwrap().with_perturbation(SymTensor::round(4, 0.01), |r| {
            let mut t = SymTensor::zeros(4);
            t.tf = TracelessTensor::zeros(4);
            t.tf.b.c[crate::sphharm::mode_index(2, 0)] = 0.1 / r;
            let d = t.scaled(-1.0 / r);
            let d2 = t.scaled(2.0 / (r * r));
            (t, d, d2)
        });
        for i in 0..g.grid.len() {
            let l = g.leaf(&sph, i).unwrap();
            for p in 0..sph.n_points() {
                let (gm, km, dg) = (l.g.at(p), l.khat.at(p), l.dg.at(p));
                for a in 0..2 {
                    for b in 0..2 {
                        assert!((dg[a][b] - l.tr_k[p] * gm[a][b] - 2.0 * km[a][b]).abs() < 1e-10 * g.grid.r[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn background_is_harmonic_and_solves_transport() {
        let (bg, grid, sph) = setup(32);
        let g = FoliatedMetric::schwarzschild(&bg, grid.clone(), 4).unwrap();
        let u = schwarzschild_potential(&bg, &grid, 4);
        for v in laplacian_grid(&g, &sph, &u).unwrap() {
            assert!(v.iter().all(|x| x.abs() < 1e-10));
        }
        for t in transport_step_residuals(&g, &sph, &u).unwrap() {
            assert!(t.mean_curvature.iter().all(|x| x.abs() < 1e-10));
            assert!(t.traceless.max_abs() < 1e-10);
        }
        let data = schwarzschild_bartnik_data(&bg, 4);
        let c = boundary_constraints(&g, &sph, &u, &data, 4).unwrap();
        assert!(c.max_abs < 1e-9, "{}", c.max_abs);
        assert!(c.ck_component.iter().all(|v| v.abs() < 1e-9));
        for (_, ga, co) in interior_constraints(&g, &sph, &u).unwrap() {
            assert!(ga < 1e-9 && co < 1e-9);
        }
    }

    #[test]
    fn flat_harmonic_function() {
        let (_, grid, sph) = setup(24);
        let g = FoliatedMetric::flat(grid.clone(), 3).unwrap();
        let y0 = (4.0 * std::f64::consts::PI).sqrt();
        let u = RadialScalar::from_fn(&grid, 3, |r, l, _| if l == 0 { (y0 / r, -y0 / (r * r), 2.0 * y0 / r.powi(3)) } else { (0.0, 0.0, 0.0) });
        for v in laplacian_grid(&g, &sph, &u).unwrap() {
            assert!(v.iter().all(|x| x.abs() < 1e-12));
        }
        let z = RadialScalar::zeros(grid.len(), 3);
        for t in transport_step_residuals(&g, &sph, &z).unwrap() {
            assert!(t.mean_curvature.iter().all(|x| x.abs() < 1e-12));
            assert!(t.traceless.max_abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_matches_mode_equation() {
        let (bg, grid, sph) = setup(24);
        let g = FoliatedMetric::schwarzschild(&bg, grid.clone(), 3).unwrap();
        let d = -0.75;
        let k10 = crate::sphharm::mode_index(1, 0);
        let u = RadialScalar::from_fn(&grid, 3, |r, l, m| {
            if (l, m) == (1, 0) { (r.powf(d), d * r.powf(d - 1.0), d * (d - 1.0) * r.powf(d - 2.0)) } else { (0.0, 0.0, 0.0) }
        });
        let lap = laplacian(&g, &sph, &u, 3).unwrap();
        for (i, &r) in grid.r.iter().enumerate() {
            let e = r * (r - 2.0);
            let want = (e * d * (d - 1.0) * r.powf(d - 2.0) + 2.0 * (r - 1.0) * d * r.powf(d - 1.0) - 2.0 * r.powf(d)) / e;
            assert_relative_eq!(lap.val[(i, k10)], want, max_relative = 1e-10);
        }
    }

    #[test]
    fn linearized_mean_curvature_transport() {
        let (bg, grid, sph) = setup(24);
        let g = FoliatedMetric::schwarzschild(&bg, grid.clone(), 3).unwrap();
        let eps = 1e-6;
        let d = -0.75;
        let k10 = crate::sphharm::mode_index(1, 0);
        let mut u = schwarzschild_potential(&bg, &grid, 3);
        for (i, &r) in grid.r.iter().enumerate() {
            u.val[(i, k10)] = eps * r.powf(d);
            u.d1[(i, k10)] = eps * d * r.powf(d - 1.0);
        }
        let res = transport_step_residuals(&g, &sph, &u).unwrap();
        let y10 = sph.synthesize(&ScalarField::single(3, 1, 0, 1.0)).unwrap();
        for (i, t) in res.iter().enumerate() {
            let r = grid.r[i];
            for p in (0..sph.n_points()).step_by(5) {
                let want = 4.0 * bg.du(r) * eps * d * r.powf(d - 1.0) * y10[p];
                assert!((t.mean_curvature[p] - want).abs() < 1e-3 * eps * r.powf(d - 2.0));
            }
        }
    }

    #[test]
    fn matching_conditions_respond_linearly() {
        let (bg, grid, sph) = setup(16);
        let g = FoliatedMetric::schwarzschild(&bg, grid.clone(), 3).unwrap();
        let data = schwarzschild_bartnik_data(&bg, 3);
        let eps = 1e-7;
        let mut u = schwarzschild_potential(&bg, &grid, 3);
        let k = crate::sphharm::mode_index(2, 1);
        for i in 0..grid.len() {
            u.val[(i, k)] = eps;
        }
        let c = boundary_constraints(&g, &sph, &u, &data, 3).unwrap();
        let e0 = (-2.0 * bg.u(bg.r0())).exp() * bg.area_factor(bg.r0());
        assert_relative_eq!(c.metric_match.iso.get(2, 1), -2.0 * eps * e0, max_relative = 1e-5);
        let mut shifted = data.clone();
        shifted.tr_k.c[0] += eps * (4.0 * std::f64::consts::PI).sqrt();
        let u = schwarzschild_potential(&bg, &grid, 3);
        let c = boundary_constraints(&g, &sph, &u, &shifted, 3).unwrap();
        let want = -(-bg.u(bg.r0())).exp() * eps * (4.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(c.mean_curvature_match.c[0], want, max_relative = 1e-6);
    }

    #[test]
    fn ah_transport_of_rotation() {
        let (bg, grid, sph) = setup(48);
        let g = FoliatedMetric::schwarzschild(&bg, grid.clone(), 3).unwrap();
        let zero = ah_transport(&g, &sph, &TangentField::zeros(3)).unwrap();
        assert!(zero.a_sup.iter().chain(&zero.h_sup).all(|v| *v == 0.0));
        let rot = ck_raw_field(1, 3);
        let rep = ah_transport(&g, &sph, &rot).unwrap();
        for (i, &r) in grid.r.iter().enumerate() {
            assert_relative_eq!(rep.transport_factor[i], r * (r - 2.0) / 3.0, max_relative = 1e-10);
            assert!(rep.h_sup[i] < 1e-12);
        }
        assert!(rep.decay_ok, "{} {}", rep.a_exponent, rep.h_exponent);
    }
}
