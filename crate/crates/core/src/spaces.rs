//! Compactified radial grid on `[n·m₀, R_cut]` and the weighted norms built on it.
//!
//! Nodes are Chebyshev–Gauss–Lobatto points in `x = 1 − n·m₀/r ∈ [0, x_cut]`; functions
//! analytic in `1/r` (all decaying solutions of the radial problems) are resolved
//! spectrally. Integrals against known analytic kernels use Gauss rules on every
//! inter-node segment with the profile interpolated barycentrically, and semi-infinite
//! integrals are closed with a power-law tail fitted to the far nodes.

use crate::error::{Error, Result};
use crate::schwarzschild::Background;
use crate::geometry::FoliatedMetric;
use crate::sphharm::{mode_lm, n_modes, ScalarField, SphGrid};
use gauss_quad::legendre::GaussLegendre;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::num::NonZeroUsize;

/// Default ratio `R_cut / (n·m₀)`.
pub const DEFAULT_CUT_FACTOR: f64 = 1e3;
/// Default number of Gauss points per segment.
pub const SEGMENT_POINTS: usize = 8;
/// Default radial node count; resolves `r^δ` derivatives to 10⁻⁶ for δ ∈ [−3, 0].
pub const DEFAULT_NODES: usize = 256;
/// Default weight exponent δ of the function spaces.
pub const DEFAULT_DELTA: f64 = -0.75;

/// Chebyshev–Gauss–Lobatto radial grid.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    /// Boundary radius `n·m₀`.
    pub r0: f64,
    /// Truncation radius.
    pub r_cut: f64,
    /// `x_cut = 1 − r0/R_cut`.
    pub x_cut: f64,
    /// Chebyshev variable `ξ ∈ [−1, 1]` per node (ascending).
    pub xi: Vec<f64>,
    /// Compactified coordinate per node.
    pub x: Vec<f64>,
    /// Radius per node.
    pub r: Vec<f64>,
    /// `d/dr` differentiation matrix.
    pub d1: DMatrix<f64>,
    /// `d²/dr²` differentiation matrix.
    pub d2: DMatrix<f64>,
    /// Clenshaw–Curtis weights for `∫ f dr` over `[r0, R_cut]`.
    pub w: Vec<f64>,
    bary: Vec<f64>,
}

impl RadialGrid {
    /// Grid with `n_r` nodes on `[n·m₀, r_cut]`.
    pub fn new(bg: &Background, n_r: usize, r_cut: f64) -> Result<Self> {
        Self::from_radii(bg.r0(), n_r, r_cut)
    }

    /// Grid with the default truncation `R_cut = 10³·n·m₀`.
    pub fn with_default_cut(bg: &Background, n_r: usize) -> Result<Self> {
        Self::new(bg, n_r, DEFAULT_CUT_FACTOR * bg.r0())
    }

    /// Grid on `[r0, r_cut]`.
    pub fn from_radii(r0: f64, n_r: usize, r_cut: f64) -> Result<Self> {
        if n_r < 4 {
            return Err(Error::Config(format!("need at least 4 radial nodes, got {n_r}")));
        }
        if !(r0 > 0.0) || !(r_cut > r0) || !r_cut.is_finite() {
            return Err(Error::Config(format!("invalid radial range [{r0}, {r_cut}]")));
        }
        let nn = n_r - 1;
        let x_cut = 1.0 - r0 / r_cut;
        let xi: Vec<f64> = (0..n_r).map(|j| -(std::f64::consts::PI * j as f64 / nn as f64).cos()).collect();
        let x: Vec<f64> = xi.iter().map(|s| 0.5 * x_cut * (s + 1.0)).collect();
        let r: Vec<f64> = x.iter().map(|xv| r0 / (1.0 - xv)).collect();
        let c = |j: usize| if j == 0 || j == nn { 2.0 } else { 1.0 };
        let mut dxi = DMatrix::<f64>::zeros(n_r, n_r);
        for i in 0..n_r {
            let mut diag = 0.0;
            for j in 0..n_r {
                if i != j {
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    let v = c(i) / c(j) * sign / (xi[i] - xi[j]);
                    dxi[(i, j)] = v;
                    diag -= v;
                }
            }
            dxi[(i, i)] = diag;
        }
        // d/dr = (dx/dr)(dξ/dx) d/dξ with dx/dr = r0/r², dξ/dx = 2/x_cut.
        let mut d1 = dxi * (2.0 / x_cut);
        for i in 0..n_r {
            let s = r0 / (r[i] * r[i]);
            for j in 0..n_r {
                d1[(i, j)] *= s;
            }
        }
        let d2 = &d1 * &d1;
        let cc = clenshaw_curtis(n_r);
        let w: Vec<f64> = (0..n_r).map(|i| cc[i] * 0.5 * x_cut * r[i] * r[i] / r0).collect();
        let bary: Vec<f64> = (0..n_r)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                s / c(j)
            })
            .collect();
        Ok(Self { r0, r_cut, x_cut, xi, x, r, d1, d2, w, bary })
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.r.len()
    }

    /// Always false (grids have at least four nodes).
    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// `∫_{r0}^{R_cut} f dr` by Clenshaw–Curtis.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.w).map(|(a, b)| a * b).sum()
    }

    /// `df/dr` at the nodes.
    pub fn deriv(&self, f: &[f64]) -> Vec<f64> {
        mat_vec(&self.d1, f)
    }

    /// `d²f/dr²` at the nodes.
    pub fn deriv2(&self, f: &[f64]) -> Vec<f64> {
        mat_vec(&self.d2, f)
    }

    /// Compactified coordinate of a radius.
    pub fn x_of_r(&self, r: f64) -> f64 {
        1.0 - self.r0 / r
    }

    /// Barycentric interpolation matrix from the nodes to arbitrary radii in range.
    pub fn interp_matrix(&self, radii: &[f64]) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::<f64>::zeros(radii.len(), n);
        for (k, &rv) in radii.iter().enumerate() {
            let s = 2.0 * self.x_of_r(rv) / self.x_cut - 1.0;
            if let Some(j) = self.xi.iter().position(|&q| (q - s).abs() < 1e-15) {
                m[(k, j)] = 1.0;
                continue;
            }
            let mut den = 0.0;
            for j in 0..n {
                let t = self.bary[j] / (s - self.xi[j]);
                m[(k, j)] = t;
                den += t;
            }
            for j in 0..n {
                m[(k, j)] /= den;
            }
        }
        m
    }

    /// Interpolates node values at one radius.
    pub fn interpolate(&self, f: &[f64], r: f64) -> f64 {
        let m = self.interp_matrix(&[r]);
        (0..self.len()).map(|j| m[(0, j)] * f[j]).sum()
    }

    /// Gauss rule with `g` points on every inter-node segment.
    pub fn segment_quadrature(&self, g: usize) -> SegmentQuad {
        let gl = GaussLegendre::new(NonZeroUsize::new(g.max(1)).expect("g ≥ 1"));
        let pairs = gl.as_node_weight_pairs();
        let n = self.len();
        let mut r = Vec::with_capacity((n - 1) * g);
        let mut w = Vec::with_capacity((n - 1) * g);
        for i in 0..n - 1 {
            let (xa, xb) = (self.x[i], self.x[i + 1]);
            let mut seg: Vec<(f64, f64)> = pairs.iter().map(|&(t, wt)| {
                let xv = 0.5 * (xa + xb) + 0.5 * (xb - xa) * t;
                let rv = self.r0 / (1.0 - xv);
                (rv, wt * 0.5 * (xb - xa) * rv * rv / self.r0)
            }).collect();
            seg.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
            for (rv, wv) in seg {
                r.push(rv);
                w.push(wv);
            }
        }
        let interp = self.interp_matrix(&r);
        SegmentQuad { g, r, w, interp }
    }
}

fn mat_vec(m: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * f[j]).sum()).collect()
}

/// Clenshaw–Curtis weights on `[−1, 1]` for `n` Chebyshev–Lobatto nodes.
pub fn clenshaw_curtis(n: usize) -> Vec<f64> {
    let nn = n - 1;
    let mut w = vec![0.0; n];
    let nf = nn as f64;
    let mut v = vec![1.0; nn.saturating_sub(1)];
    if nn.is_multiple_of(2) {
        w[0] = 1.0 / (nf * nf - 1.0);
        w[nn] = w[0];
        for k in 1..nn / 2 {
            for (i, vi) in v.iter_mut().enumerate() {
                let th = std::f64::consts::PI * (i + 1) as f64 / nf;
                *vi -= 2.0 * (2.0 * k as f64 * th).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
        for (i, vi) in v.iter_mut().enumerate() {
            let th = std::f64::consts::PI * (i + 1) as f64 / nf;
            *vi -= (nf * th).cos() / (nf * nf - 1.0);
        }
    } else {
        w[0] = 1.0 / (nf * nf);
        w[nn] = w[0];
        for k in 1..=(nn - 1) / 2 {
            for (i, vi) in v.iter_mut().enumerate() {
                let th = std::f64::consts::PI * (i + 1) as f64 / nf;
                *vi -= 2.0 * (2.0 * k as f64 * th).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
    }
    for i in 1..nn {
        w[i] = 2.0 * v[i - 1] / nf;
    }
    w
}

/// Per-segment Gauss rule with the interpolation matrix from the grid nodes.
#[derive(Debug, Clone)]
pub struct SegmentQuad {
    /// Points per segment.
    pub g: usize,
    /// Quadrature radii (ascending, segment by segment).
    pub r: Vec<f64>,
    /// Weights for `∫ … dr`.
    pub w: Vec<f64>,
    /// Node → quadrature-point interpolation.
    pub interp: DMatrix<f64>,
}

impl SegmentQuad {
    /// Interpolates node values onto the quadrature points.
    pub fn values(&self, f: &[f64]) -> Vec<f64> {
        mat_vec(&self.interp, f)
    }

    /// Number of segments.
    pub fn n_segments(&self) -> usize {
        self.r.len() / self.g
    }

    /// Forward cumulative integral at the nodes: `∫_{r0}^{r_i} k(r) f(r) dr`, where `fq`
    /// holds `k·f` at the quadrature points.
    pub fn cumulative(&self, fq: &[f64]) -> Vec<f64> {
        let ns = self.n_segments();
        let mut out = vec![0.0; ns + 1];
        for s in 0..ns {
            let seg: f64 = (0..self.g).map(|q| fq[s * self.g + q] * self.w[s * self.g + q]).sum();
            out[s + 1] = out[s] + seg;
        }
        out
    }

    /// Backward cumulative integral `∫_{r_i}^{R_cut} (…) dr` plus a constant tail.
    pub fn cumulative_back(&self, fq: &[f64], tail: f64) -> Vec<f64> {
        let ns = self.n_segments();
        let mut out = vec![0.0; ns + 1];
        out[ns] = tail;
        for s in (0..ns).rev() {
            let seg: f64 = (0..self.g).map(|q| fq[s * self.g + q] * self.w[s * self.g + q]).sum();
            out[s] = out[s + 1] + seg;
        }
        out
    }

    /// Total integral.
    pub fn integrate(&self, fq: &[f64]) -> f64 {
        fq.iter().zip(&self.w).map(|(a, b)| a * b).sum()
    }
}

/// Far-field fit `f ≈ f_end·(r/r_end)^p·(1 + d/r − d/r_end)` over the last nodes.
///
/// The `1/r` correction absorbs the leading subdominant term of profiles analytic in
/// `1/r`, which a pure power law would fold into a biased exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// Exponent `p`.
    pub exponent: f64,
    /// Fitted value at the last node.
    pub value_at_end: f64,
    /// Coefficient `d` of the `1/r` correction.
    pub correction: f64,
    /// Radius of the last node.
    pub r_end: f64,
    /// Largest relative misfit over the fitted nodes.
    pub misfit: f64,
    /// False when the profile is numerically zero or changes sign on the fit window.
    pub valid: bool,
}

impl TailFit {
    /// `∫_{R}^{∞} (R/t)^s f(t) dt/t` with `R = r_end`, to first order in the correction.
    /// Requires `s > p`.
    pub fn weighted_moment(&self, s: f64) -> f64 {
        if !self.valid || self.value_at_end == 0.0 {
            return 0.0;
        }
        if s <= self.exponent {
            return f64::INFINITY * self.value_at_end.signum();
        }
        let p = self.exponent;
        let d_r = self.correction / self.r_end;
        // f(t) = f_end (t/R)^p (1 + d/t − d/R).
        self.value_at_end * ((1.0 - d_r) / (s - p) + d_r / (s + 1.0 - p))
    }

    /// `∫_{r_end}^{∞} f dr` (`±∞` if not integrable).
    pub fn integral_beyond(&self) -> f64 {
        self.r_end * self.weighted_moment(-1.0)
    }
}

/// Fits the far-field model of [`TailFit`] to the last `k` entries of `(r, f)`.
pub fn fit_tail(r: &[f64], f: &[f64], k: usize) -> TailFit {
    let n = r.len();
    let k = k.clamp(2, n);
    let idx: Vec<usize> = (n - k..n).collect();
    let scale = f.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let sign = f[n - 1].signum();
    let ok = scale > 0.0 && idx.iter().all(|&i| f[i] != 0.0 && f[i].signum() == sign && f[i].abs() > 1e-300);
    let r_end = r[n - 1];
    if !ok {
        return TailFit { exponent: f64::NEG_INFINITY, value_at_end: 0.0, correction: 0.0, r_end, misfit: 0.0, valid: false };
    }
    // Least squares for ln|f| = a + p ln r + d/r (d dropped with fewer than 4 points).
    let cols = if k >= 4 { 3 } else { 2 };
    let mut ata = nalgebra::DMatrix::<f64>::zeros(cols, cols);
    let mut aty = nalgebra::DVector::<f64>::zeros(cols);
    for &i in &idx {
        let row = [1.0, (r[i] / r_end).ln(), r_end / r[i] - 1.0];
        let y = f[i].abs().ln();
        for a in 0..cols {
            aty[a] += row[a] * y;
            for b in 0..cols {
                ata[(a, b)] += row[a] * row[b];
            }
        }
    }
    let sol = match ata.clone().lu().solve(&aty) {
        Some(v) => v,
        None => return TailFit { exponent: f64::NEG_INFINITY, value_at_end: 0.0, correction: 0.0, r_end, misfit: 0.0, valid: false },
    };
    let (c0, p) = (sol[0], sol[1]);
    let e = if cols == 3 { sol[2] } else { 0.0 };
    let model = |rv: f64| c0 + p * (rv / r_end).ln() + e * (r_end / rv - 1.0);
    let misfit = idx.iter().map(|&i| ((model(r[i]) - f[i].abs().ln()).exp() - 1.0).abs()).fold(0.0, f64::max);
    // exp(e(R/r − 1)) ≈ 1 + d/r − d/R with d = e·R.
    TailFit { exponent: p, value_at_end: sign * c0.exp(), correction: e * r_end, r_end, misfit, valid: true }
}

/// Default number of far nodes used for tail fits.
pub fn tail_window(n: usize) -> usize {
    (n / 8).max(4).min(n)
}

/// Radial stacks of a scalar field: per node, harmonic coefficients of the value and its
/// first two radial derivatives. Rows are nodes, columns are modes.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialScalar {
    /// Angular band.
    pub l_max: usize,
    /// Values.
    pub val: DMatrix<f64>,
    /// First radial derivatives.
    pub d1: DMatrix<f64>,
    /// Second radial derivatives.
    pub d2: DMatrix<f64>,
}

impl RadialScalar {
    /// All-zero stacks.
    pub fn zeros(n_r: usize, l_max: usize) -> Self {
        let z = DMatrix::zeros(n_r, n_modes(l_max));
        Self { l_max, val: z.clone(), d1: z.clone(), d2: z }
    }

    /// Number of radial nodes.
    pub fn n_r(&self) -> usize {
        self.val.nrows()
    }

    /// Angular field of the values at node `i`.
    pub fn at(&self, i: usize) -> ScalarField {
        ScalarField { l_max: self.l_max, c: self.val.row(i).iter().copied().collect() }
    }

    /// Angular field of the first derivative at node `i`.
    pub fn d1_at(&self, i: usize) -> ScalarField {
        ScalarField { l_max: self.l_max, c: self.d1.row(i).iter().copied().collect() }
    }

    /// Angular field of the second derivative at node `i`.
    pub fn d2_at(&self, i: usize) -> ScalarField {
        ScalarField { l_max: self.l_max, c: self.d2.row(i).iter().copied().collect() }
    }

    /// `α·self + β·other`.
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        Self {
            l_max: self.l_max,
            val: &self.val * alpha + &other.val * beta,
            d1: &self.d1 * alpha + &other.d1 * beta,
            d2: &self.d2 * alpha + &other.d2 * beta,
        }
    }

    /// Builds stacks from a closure `(r, l, m) → (a, a', a'')`.
    pub fn from_fn(grid: &RadialGrid, l_max: usize, f: impl Fn(f64, usize, i64) -> (f64, f64, f64)) -> Self {
        let mut s = Self::zeros(grid.len(), l_max);
        for (i, &r) in grid.r.iter().enumerate() {
            for k in 0..n_modes(l_max) {
                let (l, m) = mode_lm(k);
                let (a, b, c) = f(r, l, m);
                s.val[(i, k)] = a;
                s.d1[(i, k)] = b;
                s.d2[(i, k)] = c;
            }
        }
        s
    }

    /// Replaces the derivative stacks by spectral differentiation of the values.
    pub fn differentiate(&mut self, grid: &RadialGrid) {
        self.d1 = &grid.d1 * &self.val;
        self.d2 = &grid.d2 * &self.val;
    }

    /// Largest absolute value entry.
    pub fn max_abs(&self) -> f64 {
        self.val.amax()
    }
}

/// Result of a weighted-norm evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    /// The norm (square root of `squared`).
    pub value: f64,
    /// Squared norm including the tail estimate.
    pub squared: f64,
    /// Tail contribution beyond `R_cut` (H-norms only).
    pub tail: f64,
    /// Fitted radial exponent of the integrand (H) or of the weighted profile (C).
    pub exponent: f64,
    /// True when the integral does not converge at infinity.
    pub divergent: bool,
    /// Per-mode squared contributions.
    pub per_mode: Vec<f64>,
    /// Radius of the supremum (C-norms only).
    pub argmax_r: Option<f64>,
    /// True when δ sits on the endpoint −½ of the admissible range.
    pub endpoint_delta: bool,
}

fn stack_order(field: &RadialScalar, t: usize) -> Result<Vec<&DMatrix<f64>>> {
    if t > 2 {
        return Err(Error::Domain(format!("radial order {t} exceeds available derivative stacks")));
    }
    Ok([&field.val, &field.d1, &field.d2][..=t].to_vec())
}

fn angular_weight(l: usize, k: u32) -> f64 {
    (1.0 + (l * (l + 1)) as f64).powi(k as i32)
}

/// `‖u‖²_{H,t,k,δ} = Σ_{t'≤t} ∫ r^{−2δ−1+2t'} ‖∂_r^{t'}u(r)‖²_{H^k(S²)} dr`, with the
/// semi-infinite part closed by a fitted power law.
pub fn weighted_h_norm(grid: &RadialGrid, field: &RadialScalar, t: usize, k: u32, delta: f64) -> Result<NormReport> {
    let stacks = stack_order(field, t)?;
    let sq = grid.segment_quadrature(SEGMENT_POINTS);
    let nm = field.val.ncols();
    let mut per_mode = vec![0.0; nm];
    let mut integrand_nodes = vec![0.0; grid.len()];
    for (tp, st) in stacks.iter().enumerate() {
        let pw = -2.0 * delta - 1.0 + 2.0 * tp as f64;
        for (col, pm) in per_mode.iter_mut().enumerate() {
            let aw = angular_weight(mode_lm(col).0, k);
            let node: Vec<f64> = st.column(col).iter().copied().collect();
            if node.iter().all(|v| *v == 0.0) {
                continue;
            }
            let q = sq.values(&node);
            let fq: Vec<f64> = q.iter().zip(&sq.r).map(|(a, r)| r.powf(pw) * a * a).collect();
            *pm += aw * sq.integrate(&fq);
            for (i, r) in grid.r.iter().enumerate() {
                integrand_nodes[i] += aw * r.powf(pw) * node[i] * node[i];
            }
        }
    }
    let body: f64 = per_mode.iter().sum();
    let fit = fit_tail(&grid.r, &integrand_nodes, tail_window(grid.len()));
    let (tail, divergent, exponent) = if fit.valid {
        let div = fit.exponent >= -1.0 - 1e-6;
        (if div { f64::INFINITY } else { fit.integral_beyond() }, div, fit.exponent)
    } else {
        (0.0, false, f64::NEG_INFINITY)
    };
    let squared = body + if divergent { 0.0 } else { tail };
    Ok(NormReport {
        value: squared.max(0.0).sqrt(),
        squared,
        tail,
        exponent,
        divergent,
        per_mode,
        argmax_r: None,
        endpoint_delta: (delta + 0.5).abs() < 1e-12,
    })
}

/// `‖u‖²_{C,t,k,δ} = Σ_{t'≤t} sup_r r^{−2δ+2t'} ‖∂_r^{t'}u(r)‖²_{H^k(S²)}` over the nodes;
/// `argmax_r` reports where the `t' = 0` term peaks.
pub fn weighted_c_norm(grid: &RadialGrid, field: &RadialScalar, t: usize, k: u32, delta: f64) -> Result<NormReport> {
    let stacks = stack_order(field, t)?;
    let nm = field.val.ncols();
    let mut total = 0.0;
    let mut argmax = None;
    let mut per_mode = vec![0.0_f64; nm];
    let mut last_profile = vec![0.0; grid.len()];
    for (tp, st) in stacks.iter().enumerate() {
        let pw = -2.0 * delta + 2.0 * tp as f64;
        let mut best = (0.0_f64, grid.r[0]);
        for (i, r) in grid.r.iter().enumerate() {
            let mut s = 0.0;
            for col in 0..nm {
                let v = st[(i, col)];
                let c = angular_weight(mode_lm(col).0, k) * r.powf(pw) * v * v;
                s += c;
                per_mode[col] = per_mode[col].max(c);
            }
            if tp == 0 {
                last_profile[i] = s;
            }
            if s > best.0 {
                best = (s, *r);
            }
        }
        if tp == 0 && best.0 > 0.0 {
            argmax = Some(best.1);
        }
        total += best.0;
    }
    let fit = fit_tail(&grid.r, &last_profile, tail_window(grid.len()));
    Ok(NormReport {
        value: total.sqrt(),
        squared: total,
        tail: 0.0,
        exponent: if fit.valid { fit.exponent } else { f64::NEG_INFINITY },
        divergent: fit.valid && fit.exponent > 1e-6,
        per_mode,
        argmax_r: argmax,
        endpoint_delta: (delta + 0.5).abs() < 1e-12,
    })
}

/// Polynomial bump `(1 − s²)^5` on `|r − centre| < width`, with three derivatives
/// (a `C⁴` compactly supported test profile).
pub fn bump(r: f64, centre: f64, width: f64) -> [f64; 4] {
    let s = (r - centre) / width;
    if s.abs() >= 1.0 {
        return [0.0; 4];
    }
    let q = 1.0 - s * s;
    let w = 1.0 / width;
    let f = q.powi(5);
    // d/ds q^5 = −10 s q^4; d²/ds² = −10 q^4 + 80 s² q³; d³ = 240 s q³ − 480 s³ q².
    let f1 = -10.0 * s * q.powi(4);
    let f2 = -10.0 * q.powi(4) + 80.0 * s * s * q.powi(3);
    let f3 = 240.0 * s * q.powi(3) - 480.0 * s.powi(3) * q * q;
    [f, f1 * w, f2 * w * w, f3 * w * w * w]
}

/// Result of a Hardy-inequality evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyReport {
    /// `∫ r^{τ−2}|T|² dV`.
    pub lhs: f64,
    /// `∫ r^{τ}|∇T|² dV`.
    pub rhs: f64,
    /// Constant multiplying the right-hand side.
    pub constant: f64,
    /// `lhs / (constant·rhs)` (0 when both vanish).
    pub ratio: f64,
    /// Smallest admissible inner radius for the metric.
    pub r_min_admissible: f64,
    /// Whether `ratio ≤ 1 + 10⁻⁸`.
    pub holds: bool,
}

fn hardy_ratio(lhs: f64, rhs: f64, constant: f64) -> f64 {
    if lhs == 0.0 && rhs == 0.0 {
        0.0
    } else {
        lhs / (constant * rhs)
    }
}

/// Composite Gauss rule on `[a, b]`: `panels` panels of `g` points.
pub fn composite_gauss(a: f64, b: f64, panels: usize, g: usize) -> (Vec<f64>, Vec<f64>) {
    let gl = GaussLegendre::new(NonZeroUsize::new(g).expect("g ≥ 1"));
    let h = (b - a) / panels as f64;
    let mut x = Vec::with_capacity(panels * g);
    let mut w = Vec::with_capacity(panels * g);
    for p in 0..panels {
        let (lo, hi) = (a + p as f64 * h, a + (p + 1) as f64 * h);
        for &(t, wt) in gl.as_node_weight_pairs() {
            x.push(0.5 * (lo + hi) + 0.5 * (hi - lo) * t);
            w.push(0.5 * (hi - lo) * wt);
        }
    }
    (x, w)
}

/// Smallest radius `R₀` beyond which `|r(trK − 2/r)| ≤ 1` at every angular point.
pub fn hardy_inner_radius(metric: &FoliatedMetric, sph: &SphGrid) -> Result<f64> {
    let excess = |r: f64, tr_k: &[f64]| tr_k.iter().map(|t| (r * (t - 2.0 / r)).abs()).fold(0.0, f64::max) - 1.0;
    let leaves = metric.leaves(sph)?;
    let last_bad = leaves.iter().rposition(|l| excess(l.r, &l.tr_k) > 0.0);
    let Some(i) = last_bad else { return Ok(metric.grid.r0) };
    if i + 1 >= leaves.len() {
        return Err(Error::Domain("mean curvature never approaches 2/r on the grid".into()));
    }
    let (mut lo, mut hi) = (leaves[i].r, leaves[i + 1].r);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if excess(mid, &metric.leaf_at(sph, mid)?.tr_k) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Single-step Hardy inequality `∫ r^{τ−2}|T|² dV_g ≤ (4/τ²)∫ r^τ|∇T|² dV_g` for a scalar
/// `T` supported in `[r_min, r_max] × S²`, evaluated by composite Gauss quadrature in `r`
/// and the angular grid rule, with `|∇T|² = (∂_rT)² + |d̸T|²_{g(r)}` and
/// `dV_g = √det g(r) dr dσ`. `field(r)` returns the harmonic coefficients of `T` and
/// `∂_rT` at radius `r`.
pub fn hardy_check(
    metric: &FoliatedMetric,
    sph: &SphGrid,
    field: &dyn Fn(f64) -> (ScalarField, ScalarField),
    tau: f64,
    r_min: f64,
    r_max: f64,
) -> Result<HardyReport> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("Hardy exponent must be positive, got {tau}")));
    }
    if !(r_max > r_min) || r_max > metric.grid.r_cut {
        return Err(Error::Domain(format!("invalid integration range [{r_min}, {r_max}]")));
    }
    let r_adm = hardy_inner_radius(metric, sph)?;
    if r_min < r_adm {
        return Err(Error::Domain(format!("inner radius {r_min} below admissible {r_adm}")));
    }
    let (xs, ws) = composite_gauss(r_min, r_max, 120, 8);
    let n = sph.n_points();
    let parts: Vec<(f64, f64)> = xs
        .iter()
        .zip(&ws)
        .map(|(&r, &w)| {
            let leaf = metric.leaf_at(sph, r)?;
            let (t, dt) = field(r);
            let tv = sph.synthesize(&t)?;
            let dtv = sph.synthesize(&dt)?;
            let grad = sph.gradient(&t)?;
            let gsq = leaf.covector_norm_sq(&grad);
            let mu: Vec<f64> = (0..n).map(|p| (leaf.g.tt[p] * leaf.g.pp[p] - leaf.g.tp[p].powi(2)).sqrt()).collect();
            let l: Vec<f64> = (0..n).map(|p| tv[p] * tv[p] * mu[p]).collect();
            let rr: Vec<f64> = (0..n).map(|p| (dtv[p] * dtv[p] + gsq[p]) * mu[p]).collect();
            Ok((w * r.powf(tau - 2.0) * sph.integrate(&l), w * r.powf(tau) * sph.integrate(&rr)))
        })
        .collect::<Result<_>>()?;
    let lhs: f64 = parts.iter().map(|p| p.0).sum();
    let rhs: f64 = parts.iter().map(|p| p.1).sum();
    let constant = 4.0 / (tau * tau);
    let ratio = hardy_ratio(lhs, rhs, constant);
    Ok(HardyReport { lhs, rhs, constant, ratio, r_min_admissible: r_adm, holds: ratio <= 1.0 + 1e-8 })
}

/// Chained Hardy inequality for radial scalar fields on the warped metric
/// `dr² + r(r−2m)γ` (`m = 0` is flat space):
/// `∫ r^{−2δ−3}(|Z|² + r²|∇Z|²) ≤ C(δ) ∫ r^{−2δ+3}|∇³Z|²`, with
/// `C(δ) = (1 + 4/τ₁²)(4/τ₂²)(4/τ₃²)`, `τ_j = −2δ−1, −2δ+1, −2δ+3`.
///
/// `z(r)` returns `[Z, Z', Z'', Z''']`; integrals run over `[r_min, r_max]`, which must
/// contain the support.
pub fn chained_hardy_radial(
    m: f64,
    z: &dyn Fn(f64) -> [f64; 4],
    delta: f64,
    r_min: f64,
    r_max: f64,
) -> Result<HardyReport> {
    let r_adm = if m > 0.0 { 4.0 * m } else { 0.0 };
    if r_min < r_adm {
        return Err(Error::Domain(format!("inner radius {r_min} below admissible {r_adm}")));
    }
    let taus = [-2.0 * delta - 1.0, -2.0 * delta + 1.0, -2.0 * delta + 3.0];
    if taus[0] <= 0.0 {
        return Err(Error::Domain(format!("δ = {delta} gives non-positive Hardy exponent")));
    }
    let constant = (1.0 + 4.0 / taus[0].powi(2)) * (4.0 / taus[1].powi(2)) * (4.0 / taus[2].powi(2));
    let (xs, ws) = composite_gauss(r_min, r_max, 400, 8);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for (&r, &w) in xs.iter().zip(&ws) {
        let [f, f1, f2, f3] = z(r);
        let phi2 = r * (r - 2.0 * m);
        let s = (r - m) / phi2; // φ'/φ
        let ds = (phi2 - 2.0 * (r - m).powi(2)) / (phi2 * phi2);
        // Hessian = A dr² + B g_ang with A = Z'', B = s Z'; its covariant derivative has
        // squared norm A'² + 2B'² + 4s²(A − B)².
        let (a, b) = (f2, s * f1);
        let (da, db) = (f3, ds * f1 + s * f2);
        let grad2 = f1 * f1;
        let third2 = da * da + 2.0 * db * db + 4.0 * s * s * (a - b).powi(2);
        let dv = 4.0 * std::f64::consts::PI * phi2 * w;
        lhs += (r.powf(-2.0 * delta - 3.0) * (f * f + r * r * grad2)) * dv;
        rhs += r.powf(-2.0 * delta + 3.0) * third2 * dv;
    }
    let ratio = hardy_ratio(lhs, rhs, constant);
    Ok(HardyReport { lhs, rhs, constant, ratio, r_min_admissible: r_adm, holds: ratio <= 1.0 + 1e-8 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bg() -> Background {
        Background::new(1.0, 3.0).unwrap()
    }

    #[test]
    fn differentiates_powers() {
        let g = RadialGrid::with_default_cut(&bg(), 256).unwrap();
        for d in [-3.0, -2.5, -2.0, -1.5, -1.0, -0.75, -0.5, -0.25] {
            let f: Vec<f64> = g.r.iter().map(|r| r.powf(d)).collect();
            let df = g.deriv(&f);
            for (i, r) in g.r.iter().enumerate() {
                if *r < 0.5 * g.r_cut {
                    let want = d * r.powf(d - 1.0);
                    assert!((df[i] - want).abs() <= 1e-6 * want.abs(), "δ={d} r={r}");
                }
            }
        }
    }

    #[test]
    fn quadrature_of_decaying_powers() {
        let g = RadialGrid::with_default_cut(&bg(), 48).unwrap();
        let f: Vec<f64> = g.r.iter().map(|r| r.powi(-3)).collect();
        let want = 0.5 * (g.r0.powi(-2) - g.r_cut.powi(-2));
        assert_relative_eq!(g.integrate(&f), want, max_relative = 1e-12);
    }

    #[test]
    fn clenshaw_curtis_integrates_polynomials() {
        for n in [5, 6, 17] {
            let w = clenshaw_curtis(n);
            let s: f64 = w.iter().sum();
            assert_relative_eq!(s, 2.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn segment_cumulative_integral() {
        let g = RadialGrid::with_default_cut(&bg(), 40).unwrap();
        let sq = g.segment_quadrature(8);
        let fq: Vec<f64> = sq.r.iter().map(|r| r.powf(-2.5)).collect();
        let c = sq.cumulative(&fq);
        for (i, r) in g.r.iter().enumerate() {
            let want = (g.r0.powf(-1.5) - r.powf(-1.5)) / 1.5;
            assert!((c[i] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn interpolation_reproduces_analytic_profiles() {
        let g = RadialGrid::with_default_cut(&bg(), 40).unwrap();
        let f: Vec<f64> = g.r.iter().map(|r| 1.0 / (r - 1.0)).collect();
        for r in [3.1, 7.7, 120.0, 2900.0] {
            assert_relative_eq!(g.interpolate(&f, r), 1.0 / (r - 1.0), max_relative = 1e-12);
        }
    }

    #[test]
    fn tail_fit_recovers_exponent() {
        let r: Vec<f64> = (1..20).map(|i| 10.0 * i as f64).collect();
        let f: Vec<f64> = r.iter().map(|v| 3.0 * v.powf(-2.2)).collect();
        let fit = fit_tail(&r, &f, 6);
        assert_relative_eq!(fit.exponent, -2.2, max_relative = 1e-10);
        let want = 3.0 * 190f64.powf(-1.2) / 1.2;
        assert_relative_eq!(fit.integral_beyond(), want, max_relative = 1e-10);
        // Subdominant 1/r term is absorbed by the correction.
        let r: Vec<f64> = (1..40).map(|i| 100.0 * i as f64).collect();
        let f: Vec<f64> = r.iter().map(|v| v.powi(-3) * (1.0 + 2.0 / v)).collect();
        let fit = fit_tail(&r, &f, 8);
        let rn = 3900.0_f64;
        let want = 0.5 * rn.powi(-2) + 2.0 / 3.0 * rn.powi(-3);
        assert_relative_eq!(fit.integral_beyond(), want, max_relative = 1e-6);
    }

    #[test]
    fn h_norm_borderline_power_is_flagged_divergent() {
        let g = RadialGrid::with_default_cut(&bg(), 96).unwrap();
        let delta = DEFAULT_DELTA;
        let u = RadialScalar::from_fn(&g, 0, |r, _, _| (r.powf(delta), 0.0, 0.0));
        let rep = weighted_h_norm(&g, &u, 0, 0, delta).unwrap();
        assert!(rep.divergent);
    }

    #[test]
    fn h_norm_of_subcritical_power_matches_closed_form() {
        let g = RadialGrid::with_default_cut(&bg(), 160).unwrap();
        let (delta, eps) = (DEFAULT_DELTA, 0.1);
        let u = RadialScalar::from_fn(&g, 0, |r, _, _| (r.powf(delta - eps), 0.0, 0.0));
        let rep = weighted_h_norm(&g, &u, 0, 0, delta).unwrap();
        let want = g.r0.powf(-2.0 * eps) / (2.0 * eps);
        assert!(!rep.divergent);
        assert_relative_eq!(rep.squared, want, max_relative = 1e-4);
    }

    #[test]
    fn zero_field_norms_vanish() {
        let g = RadialGrid::with_default_cut(&bg(), 32).unwrap();
        let u = RadialScalar::zeros(g.len(), 3);
        assert_eq!(weighted_h_norm(&g, &u, 2, 1, -0.75).unwrap().value, 0.0);
        assert_eq!(weighted_c_norm(&g, &u, 2, 1, -0.75).unwrap().value, 0.0);
    }

    #[test]
    fn c_norm_examples() {
        let g = RadialGrid::with_default_cut(&bg(), 32).unwrap();
        let delta = -0.75;
        let u = RadialScalar::from_fn(&g, 0, |r, _, _| (r.powf(delta), 0.0, 0.0));
        let rep = weighted_c_norm(&g, &u, 0, 0, delta).unwrap();
        assert_relative_eq!(rep.value, 1.0, max_relative = 1e-12);
        let u = RadialScalar::from_fn(&g, 0, |r, _, _| (r.powf(delta) * (1.0 + 1.0 / r), 0.0, 0.0));
        let rep = weighted_c_norm(&g, &u, 0, 0, delta).unwrap();
        assert_eq!(rep.argmax_r, Some(g.r0));
    }

    #[test]
    fn hardy_inner_radius_of_schwarzschild() {
        let grid = RadialGrid::with_default_cut(&bg(), 64).unwrap();
        let sph = SphGrid::new(4).unwrap();
        let g = FoliatedMetric::schwarzschild(&bg(), grid, 4).unwrap();
        // r(trK − 2/r) = 2m/(r − 2m) ≤ 1 iff r ≥ 4m.
        assert_relative_eq!(hardy_inner_radius(&g, &sph).unwrap(), 4.0, max_relative = 1e-10);
        let flat = FoliatedMetric::flat(RadialGrid::with_default_cut(&bg(), 16).unwrap(), 4).unwrap();
        assert_eq!(hardy_inner_radius(&flat, &sph).unwrap(), 3.0);
    }

    #[test]
    fn single_step_hardy_holds_for_angular_bumps() {
        let grid = RadialGrid::with_default_cut(&bg(), 64).unwrap();
        let sph = SphGrid::new(4).unwrap();
        let g = FoliatedMetric::schwarzschild(&bg(), grid, 4).unwrap();
        let field = |r: f64| {
            let b = bump(r, 12.0, 7.0);
            let mut t = ScalarField::zeros(4);
            let mut dt = ScalarField::zeros(4);
            for (k, amp) in [(0usize, 1.0), (2, -0.4), (7, 0.3), (15, 0.8)] {
                t.c[k] = amp * b[0];
                dt.c[k] = amp * b[1];
            }
            (t, dt)
        };
        for tau in [0.5, 1.0, 2.5] {
            let rep = hardy_check(&g, &sph, &field, tau, 4.0, 20.0).unwrap();
            assert!(rep.holds && rep.ratio > 0.0, "{rep:?}");
        }
        assert!(hardy_check(&g, &sph, &field, 0.5, 3.5, 20.0).is_err());
    }

    #[test]
    fn chained_hardy_holds_for_bump() {
        let z = |r: f64| bump(r, 30.0, 10.0);
        let rep = chained_hardy_radial(1.0, &z, -0.75, 4.0, 60.0).unwrap();
        assert!(rep.holds && rep.ratio > 0.0, "{rep:?}");
        assert!(chained_hardy_radial(1.0, &z, -0.75, 3.5, 60.0).is_err());
    }
}
