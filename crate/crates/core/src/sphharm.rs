//! Real spherical-harmonic calculus on the unit sphere.
//!
//! Scalars are expanded in real orthonormal harmonics `Y_lm` (index `l² + l + m`).
//! Tangent one-forms are represented by an electric (gradient) and a magnetic (curl)
//! potential, `ω = ∇E + n×∇B`; traceless symmetric tensors by the potentials of
//! `T = (∇∇E)ᵀᶠ + (ε·∇∇B)ᵀᶠ`. In this representation every rotation-invariant angular
//! operator is a per-degree multiplier.
//!
//! Grid values are stored in the orthonormal frame `(e_θ, e_φ)` of the unit round metric.
//! Covariant derivatives of tangent tensors are computed through their Cartesian
//! components in `R³` (each a smooth scalar on the sphere), and operators of a general
//! metric use the difference tensor against the round connection.

use crate::error::{Error, Result};
use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::num::NonZeroUsize;

/// Number of real harmonics with degree at most `l_max`.
pub const fn n_modes(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Flat index of the real harmonic `(l, m)`, `|m| ≤ l`.
pub fn mode_index(l: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= l);
    ((l * l + l) as i64 + m) as usize
}

/// Inverse of [`mode_index`].
pub fn mode_lm(idx: usize) -> (usize, i64) {
    let l = (idx as f64).sqrt().floor() as usize;
    let l = if (l + 1) * (l + 1) <= idx { l + 1 } else { l };
    (l, idx as i64 - (l * l + l) as i64)
}

/// Divergence multipliers of traceless tensors on the unit sphere, per degree:
/// `div T^E(Φ) = λ_l ∇Φ` and `div T^B(Ψ) = λ_l n×∇Ψ` for a degree-`l` potential.
///
/// These constants were measured with [`SphGrid::measure_div_multipliers`] and are
/// pinned by a regression test.
pub const DIV_MULTIPLIERS: [f64; 65] = [
    0.0, 0.0, -2.0, -5.0, -9.0, -14.0, -20.0, -27.0, -35.0, -44.0, -54.0, -65.0, -77.0,
    -90.0, -104.0, -119.0, -135.0, -152.0, -170.0, -189.0, -209.0, -230.0, -252.0, -275.0,
    -299.0, -324.0, -350.0, -377.0, -405.0, -434.0, -464.0, -495.0, -527.0, -560.0, -594.0,
    -629.0, -665.0, -702.0, -740.0, -779.0, -819.0, -860.0, -902.0, -945.0, -989.0, -1034.0,
    -1080.0, -1127.0, -1175.0, -1224.0, -1274.0, -1325.0, -1377.0, -1430.0, -1484.0,
    -1539.0, -1595.0, -1652.0, -1710.0, -1769.0, -1829.0, -1890.0, -1952.0, -2015.0,
    -2079.0,
];

/// Largest degree supported by the frozen multiplier table.
pub const MAX_DEGREE: usize = DIV_MULTIPLIERS.len() - 1;

/// `∫|T^E(Y_lm)|² dσ` on the unit sphere, `½(l−1)l(l+1)(l+2)`.
pub fn traceless_norm_sq(l: usize) -> f64 {
    let l = l as f64;
    0.5 * (l - 1.0) * l * (l + 1.0) * (l + 2.0)
}

/// Scalar field on the sphere given by its real harmonic coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    /// Truncation degree.
    pub l_max: usize,
    /// Coefficients indexed by [`mode_index`].
    pub c: Vec<f64>,
}

impl ScalarField {
    /// The zero field of band `l_max`.
    pub fn zeros(l_max: usize) -> Self {
        Self { l_max, c: vec![0.0; n_modes(l_max)] }
    }

    /// The field `amp·Y_lm` in band `l_max`.
    pub fn single(l_max: usize, l: usize, m: i64, amp: f64) -> Self {
        let mut f = Self::zeros(l_max);
        f.c[mode_index(l, m)] = amp;
        f
    }

    /// Wraps a coefficient vector, checking its length.
    pub fn from_coeffs(l_max: usize, c: Vec<f64>) -> Result<Self> {
        if c.len() != n_modes(l_max) {
            return Err(Error::Shape(format!(
                "expected {} coefficients for l_max = {l_max}, got {}",
                n_modes(l_max),
                c.len()
            )));
        }
        Ok(Self { l_max, c })
    }

    /// Coefficient of `Y_lm` (zero above the band).
    pub fn get(&self, l: usize, m: i64) -> f64 {
        if l > self.l_max {
            0.0
        } else {
            self.c[mode_index(l, m)]
        }
    }

    /// Re-banded copy: truncated or zero-padded to `l_max`.
    pub fn with_band(&self, l_max: usize) -> Self {
        let mut out = Self::zeros(l_max);
        let n = n_modes(l_max.min(self.l_max));
        out.c[..n].copy_from_slice(&self.c[..n]);
        out
    }

    /// `α·self + β·other` (bands must agree).
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        debug_assert_eq!(self.l_max, other.l_max);
        let c = self.c.iter().zip(&other.c).map(|(a, b)| alpha * a + beta * b).collect();
        Self { l_max: self.l_max, c }
    }

    /// Multiplies every coefficient by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { l_max: self.l_max, c: self.c.iter().map(|v| s * v).collect() }
    }

    /// Applies a per-degree multiplier.
    pub fn map_degree(&self, f: impl Fn(usize) -> f64) -> Self {
        let c = self.c.iter().enumerate().map(|(i, v)| v * f(mode_lm(i).0)).collect();
        Self { l_max: self.l_max, c }
    }

    /// Round-sphere Laplace–Beltrami operator: `c_lm ↦ −l(l+1)c_lm`.
    pub fn laplace_beltrami(&self) -> Self {
        self.map_degree(|l| -((l * (l + 1)) as f64))
    }

    /// `L²` norm on the unit sphere (the Euclidean norm of the coefficients).
    pub fn l2_norm(&self) -> f64 {
        self.c.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        self.c.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Sobolev-type norm `(Σ (1+l(l+1))^k c_lm²)^{1/2}`.
    pub fn hk_norm(&self, k: u32) -> f64 {
        self.c
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let l = mode_lm(i).0 as f64;
                (1.0 + l * (l + 1.0)).powi(k as i32) * v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Tangent one-form `∇E + n×∇B` on the unit sphere, held as its two potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentField {
    /// Electric (gradient) potential.
    pub e: ScalarField,
    /// Magnetic (curl) potential.
    pub b: ScalarField,
}

impl TangentField {
    /// The zero field.
    pub fn zeros(l_max: usize) -> Self {
        Self { e: ScalarField::zeros(l_max), b: ScalarField::zeros(l_max) }
    }

    /// Gradient of a scalar.
    pub fn gradient(f: &ScalarField) -> Self {
        Self { e: f.clone(), b: ScalarField::zeros(f.l_max) }
    }

    /// `α·self + β·other`.
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        Self { e: self.e.lin_comb(alpha, &other.e, beta), b: self.b.lin_comb(alpha, &other.b, beta) }
    }

    /// Multiplies by a constant.
    pub fn scaled(&self, s: f64) -> Self {
        Self { e: self.e.scaled(s), b: self.b.scaled(s) }
    }

    /// Re-banded copy.
    pub fn with_band(&self, l_max: usize) -> Self {
        Self { e: self.e.with_band(l_max), b: self.b.with_band(l_max) }
    }

    /// Round-sphere `L²` inner product `∫⟨self, other⟩ dσ`.
    pub fn inner(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.e.c.len().min(other.e.c.len()) {
            let l = mode_lm(i).0 as f64;
            s += l * (l + 1.0) * (self.e.c[i] * other.e.c[i] + self.b.c[i] * other.b.c[i]);
        }
        s
    }

    /// Round-sphere `L²` norm.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Divergence on the unit sphere (a scalar): `ΔE`.
    pub fn divergence(&self) -> ScalarField {
        self.e.laplace_beltrami()
    }

    /// Parts of degree one (conformal Killing content) and degree at least two.
    pub fn split_degree_one(&self) -> (Self, Self) {
        let low = self.e.map_degree(|l| f64::from(u8::from(l == 1)));
        let lowb = self.b.map_degree(|l| f64::from(u8::from(l == 1)));
        let hi = self.e.map_degree(|l| f64::from(u8::from(l >= 2)));
        let hib = self.b.map_degree(|l| f64::from(u8::from(l >= 2)));
        (Self { e: low, b: lowb }, Self { e: hi, b: hib })
    }
}

/// Traceless symmetric tensor `T^E(E) + T^B(B)` on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracelessTensor {
    /// Electric potential (degrees ≥ 2 are significant).
    pub e: ScalarField,
    /// Magnetic potential (degrees ≥ 2 are significant).
    pub b: ScalarField,
}

impl TracelessTensor {
    /// The zero tensor.
    pub fn zeros(l_max: usize) -> Self {
        Self { e: ScalarField::zeros(l_max), b: ScalarField::zeros(l_max) }
    }

    /// `α·self + β·other`.
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        Self { e: self.e.lin_comb(alpha, &other.e, beta), b: self.b.lin_comb(alpha, &other.b, beta) }
    }

    /// Multiplies by a constant.
    pub fn scaled(&self, s: f64) -> Self {
        Self { e: self.e.scaled(s), b: self.b.scaled(s) }
    }

    /// Round-sphere `L²` norm `(∫|T|² dσ)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.e.c.len() {
            let n = traceless_norm_sq(mode_lm(i).0);
            s += n * (self.e.c[i].powi(2) + self.b.c[i].powi(2));
        }
        s.sqrt()
    }

    /// Divergence with respect to `s²γ` (covariant components): `λ_l/s²` per potential.
    pub fn divergence(&self, radius: f64) -> Result<TangentField> {
        let inv = 1.0 / (radius * radius);
        check_band(self.e.l_max)?;
        Ok(TangentField {
            e: self.e.map_degree(|l| DIV_MULTIPLIERS[l] * inv),
            b: self.b.map_degree(|l| DIV_MULTIPLIERS[l] * inv),
        })
    }
}

fn check_band(l_max: usize) -> Result<()> {
    if l_max > MAX_DEGREE {
        return Err(Error::Domain(format!("degree {l_max} exceeds supported maximum {MAX_DEGREE}")));
    }
    Ok(())
}

/// Symmetric tensor `iso·γ + T^E(e) + T^B(b)` on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymTensor {
    /// Half the round trace.
    pub iso: ScalarField,
    /// Traceless part.
    pub tf: TracelessTensor,
}

impl SymTensor {
    /// The zero tensor.
    pub fn zeros(l_max: usize) -> Self {
        Self { iso: ScalarField::zeros(l_max), tf: TracelessTensor::zeros(l_max) }
    }

    /// `c·γ` for a constant `c`.
    pub fn round(l_max: usize, c: f64) -> Self {
        let mut t = Self::zeros(l_max);
        t.iso.c[0] = c * (4.0 * PI).sqrt();
        t
    }

    /// `α·self + β·other`.
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        Self { iso: self.iso.lin_comb(alpha, &other.iso, beta), tf: self.tf.lin_comb(alpha, &other.tf, beta) }
    }

    /// Multiplies by a constant.
    pub fn scaled(&self, s: f64) -> Self {
        Self { iso: self.iso.scaled(s), tf: self.tf.scaled(s) }
    }

    /// Round-sphere `L²` norm.
    pub fn l2_norm(&self) -> f64 {
        (2.0 * self.iso.l2_norm().powi(2) + self.tf.l2_norm().powi(2)).sqrt()
    }
}

/// Tangent vector/one-form samples in the orthonormal frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VecGrid {
    /// `e_θ` component.
    pub t: Vec<f64>,
    /// `e_φ` component.
    pub p: Vec<f64>,
}

/// Symmetric 2-tensor samples in the orthonormal frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymGrid {
    /// `θθ` component.
    pub tt: Vec<f64>,
    /// `θφ` component.
    pub tp: Vec<f64>,
    /// `φφ` component.
    pub pp: Vec<f64>,
}

impl SymGrid {
    /// Component `(a, b)` at point `p`.
    #[inline]
    pub fn at(&self, p: usize) -> [[f64; 2]; 2] {
        [[self.tt[p], self.tp[p]], [self.tp[p], self.pp[p]]]
    }

    /// Constant multiple of the round metric.
    pub fn round(n: usize, c: f64) -> Self {
        Self { tt: vec![c; n], tp: vec![0.0; n], pp: vec![c; n] }
    }

    /// Builds a field from per-point matrices.
    pub fn from_fn(n: usize, f: impl Fn(usize) -> [[f64; 2]; 2]) -> Self {
        let mut s = Self { tt: vec![0.0; n], tp: vec![0.0; n], pp: vec![0.0; n] };
        for p in 0..n {
            let m = f(p);
            s.tt[p] = m[0][0];
            s.tp[p] = 0.5 * (m[0][1] + m[1][0]);
            s.pp[p] = m[1][1];
        }
        s
    }

    /// `α·self + β·other`.
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        let f = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect();
        Self { tt: f(&self.tt, &other.tt), tp: f(&self.tp, &other.tp), pp: f(&self.pp, &other.pp) }
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.tt.iter().chain(&self.tp).chain(&self.pp).fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Per-point derivative of a tangent vector: `[a][b] = ∇_a v_b`.
pub type Deriv2 = [[f64; 2]; 2];
/// Per-point derivative of a symmetric tensor: `[c][a][b] = ∇_c T_ab`.
pub type Deriv3 = [[[f64; 2]; 2]; 2];

#[derive(Clone, Copy)]
enum Table {
    Scalar,
    Grad,
    Tensor,
}

/// Gauss–Legendre × equiangular quadrature grid with precomputed harmonic tables.
#[derive(Debug, Clone)]
pub struct SphGrid {
    /// Truncation degree the grid is built for.
    pub l_max: usize,
    /// Highest degree the tables cover (`n_theta − 1`).
    pub l_an: usize,
    /// Number of colatitude nodes.
    pub n_theta: usize,
    /// Number of longitude nodes.
    pub n_phi: usize,
    /// `cos θ_j`.
    pub x: Vec<f64>,
    /// `θ_j`.
    pub theta: Vec<f64>,
    /// `sin θ_j`.
    pub sin_t: Vec<f64>,
    /// Gauss weights in `cos θ`.
    pub w: Vec<f64>,
    /// `φ_k`.
    pub phi: Vec<f64>,
    tri: usize,
    p: Vec<f64>,
    dp: Vec<f64>,
    pos: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    cos_mp: Vec<f64>,
    sin_mp: Vec<f64>,
    e_t: Vec<[f64; 3]>,
    e_p: Vec<[f64; 3]>,
}

#[inline]
fn tri_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

impl SphGrid {
    /// Default grid for band `l_max`: `n_θ = 3l_max/2 + 6`, `n_φ = 2n_θ` (products of two
    /// band-limited fields are analysed exactly up to degree `l_max`).
    pub fn new(l_max: usize) -> Result<Self> {
        let n_theta = 3 * l_max / 2 + 6;
        Self::with_sizes(l_max, n_theta, 2 * n_theta)
    }

    /// Grid with explicit sizes; requires `n_θ ≥ l_max + 1`, `n_φ ≥ 2l_max + 1`.
    pub fn with_sizes(l_max: usize, n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < l_max + 1 || n_phi < 2 * l_max + 1 {
            return Err(Error::Config(format!(
                "grid {n_theta}×{n_phi} too small for l_max = {l_max}"
            )));
        }
        let l_an = n_theta - 1;
        let gl = GaussLegendre::new(NonZeroUsize::new(n_theta).expect("n_theta > 0"));
        let mut pairs: Vec<(f64, f64)> = gl.as_node_weight_pairs().to_vec();
        // Order from the north pole (x = cos θ decreasing).
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite nodes"));
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let theta: Vec<f64> = x.iter().map(|v| v.acos()).collect();
        let sin_t: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
        let phi: Vec<f64> = (0..n_phi).map(|k| 2.0 * PI * k as f64 / n_phi as f64).collect();
        let tri = tri_index(l_an, l_an) + 1;
        let nt = n_theta;
        let (mut p, mut dp, mut pos, mut u, mut v) =
            (vec![0.0; nt * tri], vec![0.0; nt * tri], vec![0.0; nt * tri], vec![0.0; nt * tri], vec![0.0; nt * tri]);
        for j in 0..nt {
            let (xj, sj) = (x[j], sin_t[j]);
            let row = normalized_plm(l_an, xj, sj);
            let cot = xj / sj;
            for l in 0..=l_an {
                let lf = l as f64;
                for m in 0..=l {
                    let mf = m as f64;
                    let val = row[tri_index(l, m)];
                    let prev = if l > m { row[tri_index(l - 1, m)] } else { 0.0 };
                    let coef = if l > m {
                        ((2.0 * lf + 1.0) * (lf - mf) * (lf + mf) / (2.0 * lf - 1.0)).sqrt()
                    } else {
                        0.0
                    };
                    let d = (lf * xj * val - coef * prev) / sj;
                    let idx = j * tri + tri_index(l, m);
                    p[idx] = val;
                    dp[idx] = d;
                    pos[idx] = mf * val / sj;
                    u[idx] = (-0.5 * lf * (lf + 1.0) + mf * mf / (sj * sj)) * val - cot * d;
                    v[idx] = mf * (d - cot * val) / sj;
                }
            }
        }
        let mm = l_an + 1;
        let mut cos_mp = vec![0.0; n_phi * mm];
        let mut sin_mp = vec![0.0; n_phi * mm];
        for k in 0..n_phi {
            for m in 0..mm {
                cos_mp[k * mm + m] = (m as f64 * phi[k]).cos();
                sin_mp[k * mm + m] = (m as f64 * phi[k]).sin();
            }
        }
        let mut e_t = Vec::with_capacity(nt * n_phi);
        let mut e_p = Vec::with_capacity(nt * n_phi);
        for j in 0..nt {
            for &ph in &phi {
                let (sp, cp) = ph.sin_cos();
                e_t.push([x[j] * cp, x[j] * sp, -sin_t[j]]);
                e_p.push([-sp, cp, 0.0]);
            }
        }
        Ok(Self {
            l_max, l_an, n_theta, n_phi, x, theta, sin_t, w, phi, tri, p, dp, pos, u, v, cos_mp,
            sin_mp, e_t, e_p,
        })
    }

    /// Number of grid points.
    pub fn n_points(&self) -> usize {
        self.n_theta * self.n_phi
    }

    /// `(θ, φ)` of point `p`.
    pub fn point(&self, p: usize) -> (f64, f64) {
        (self.theta[p / self.n_phi], self.phi[p % self.n_phi])
    }

    /// Unit normal (position vector) at point `p`.
    pub fn normal(&self, p: usize) -> [f64; 3] {
        let (j, k) = (p / self.n_phi, p % self.n_phi);
        let (sp, cp) = self.phi[k].sin_cos();
        [self.sin_t[j] * cp, self.sin_t[j] * sp, self.x[j]]
    }

    /// Frame vectors `(e_θ, e_φ)` at point `p` in Cartesian components.
    pub fn frame(&self, p: usize) -> ([f64; 3], [f64; 3]) {
        (self.e_t[p], self.e_p[p])
    }

    /// `∫ f dσ` over the unit sphere.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        let dphi = 2.0 * PI / self.n_phi as f64;
        let mut s = 0.0;
        for j in 0..self.n_theta {
            let row: f64 = f[j * self.n_phi..(j + 1) * self.n_phi].iter().sum();
            s += self.w[j] * row;
        }
        s * dphi
    }

    /// Samples a closure `f(θ, φ)` on the grid.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.n_points()).map(|p| {
            let (t, ph) = self.point(p);
            f(t, ph)
        }).collect()
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n_points() {
            return Err(Error::Shape(format!(
                "grid has {} points, field has {}",
                self.n_points(),
                f.len()
            )));
        }
        Ok(())
    }

    fn check_out(&self, l_out: usize) -> Result<()> {
        if l_out > self.l_an || 2 * l_out >= self.n_phi {
            return Err(Error::Shape(format!("analysis degree {l_out} not supported by this grid")));
        }
        Ok(())
    }

    fn tables(&self, t: Table) -> (&[f64], Option<&[f64]>) {
        match t {
            Table::Scalar => (&self.p, None),
            Table::Grad => (&self.dp, Some(&self.pos)),
            Table::Tensor => (&self.u, Some(&self.v)),
        }
    }

    /// `f1 = Σ c A trig`, `f2 = Σ c B trig'` where `trig'` is the longitude derivative
    /// pattern (`cos → −sin`, `sin → cos`, scaled by √2 like `trig`).
    fn synth_pair(&self, c: &ScalarField, t: Table) -> Result<(Vec<f64>, Vec<f64>)> {
        if c.l_max > self.l_an {
            return Err(Error::Shape(format!(
                "field band {} exceeds grid table degree {}",
                c.l_max, self.l_an
            )));
        }
        let (ta, tb) = self.tables(t);
        let lm = c.l_max;
        let mm = self.l_an + 1;
        let nt = self.n_theta;
        let sq2 = std::f64::consts::SQRT_2;
        // Fourier coefficients per latitude: a*_m multiplies cos, b*_m multiplies sin.
        let mut a1 = vec![0.0; nt * mm];
        let mut b1 = vec![0.0; nt * mm];
        let mut a2 = vec![0.0; nt * mm];
        let mut b2 = vec![0.0; nt * mm];
        for j in 0..nt {
            let base = j * self.tri;
            for m in 0..=lm {
                let (mut sa_c, mut sa_s, mut sb_c, mut sb_s) = (0.0, 0.0, 0.0, 0.0);
                for l in m..=lm {
                    let ti = base + tri_index(l, m);
                    let cc = c.c[mode_index(l, m as i64)];
                    let cs = if m > 0 { c.c[mode_index(l, -(m as i64))] } else { 0.0 };
                    sa_c += cc * ta[ti];
                    sa_s += cs * ta[ti];
                    if let Some(tb) = tb {
                        sb_c += cc * tb[ti];
                        sb_s += cs * tb[ti];
                    }
                }
                if m == 0 {
                    a1[j * mm] = sa_c;
                } else {
                    a1[j * mm + m] = sq2 * sa_c;
                    b1[j * mm + m] = sq2 * sa_s;
                    b2[j * mm + m] = -sq2 * sb_c;
                    a2[j * mm + m] = sq2 * sb_s;
                }
            }
        }
        let f1 = self.fourier_synth(&a1, &b1, lm);
        let f2 = if tb.is_some() { self.fourier_synth(&a2, &b2, lm) } else { vec![0.0; self.n_points()] };
        Ok((f1, f2))
    }

    fn fourier_synth(&self, a: &[f64], b: &[f64], m_max: usize) -> Vec<f64> {
        let mm = self.l_an + 1;
        let mut f = vec![0.0; self.n_points()];
        for j in 0..self.n_theta {
            for k in 0..self.n_phi {
                let mut s = a[j * mm];
                for m in 1..=m_max {
                    s += a[j * mm + m] * self.cos_mp[k * mm + m] + b[j * mm + m] * self.sin_mp[k * mm + m];
                }
                f[j * self.n_phi + k] = s;
            }
        }
        f
    }

    fn fourier_analyze(&self, f: &[f64], m_max: usize) -> (Vec<f64>, Vec<f64>) {
        let mm = self.l_an + 1;
        let dphi = 2.0 * PI / self.n_phi as f64;
        let mut a = vec![0.0; self.n_theta * mm];
        let mut b = vec![0.0; self.n_theta * mm];
        for j in 0..self.n_theta {
            for m in 0..=m_max {
                let (mut sc, mut ss) = (0.0, 0.0);
                for k in 0..self.n_phi {
                    let v = f[j * self.n_phi + k];
                    sc += v * self.cos_mp[k * mm + m];
                    ss += v * self.sin_mp[k * mm + m];
                }
                a[j * mm + m] = sc * dphi;
                b[j * mm + m] = ss * dphi;
            }
        }
        (a, b)
    }

    /// `∫ [f1·A·Y-trig + f2·B·trig'] dσ` for every mode up to `l_out`.
    fn inner_pair(&self, f1: &[f64], f2: Option<&[f64]>, l_out: usize, t: Table) -> Result<ScalarField> {
        self.check_len(f1)?;
        self.check_out(l_out)?;
        let (ta, tb) = self.tables(t);
        let mm = self.l_an + 1;
        let sq2 = std::f64::consts::SQRT_2;
        let (a1, b1) = self.fourier_analyze(f1, l_out);
        let second = match (f2, tb) {
            (Some(f2), Some(_)) => {
                self.check_len(f2)?;
                Some(self.fourier_analyze(f2, l_out))
            }
            _ => None,
        };
        let mut out = ScalarField::zeros(l_out);
        for j in 0..self.n_theta {
            let wj = self.w[j];
            let base = j * self.tri;
            for m in 0..=l_out {
                let (fa, fb) = (a1[j * mm + m], b1[j * mm + m]);
                let (ga, gb) = second.as_ref().map_or((0.0, 0.0), |(a2, b2)| (a2[j * mm + m], b2[j * mm + m]));
                for l in m..=l_out {
                    let ti = base + tri_index(l, m);
                    let av = ta[ti];
                    let bv = tb.map_or(0.0, |tb| tb[ti]);
                    if m == 0 {
                        out.c[mode_index(l, 0)] += wj * av * fa;
                    } else {
                        out.c[mode_index(l, m as i64)] += wj * sq2 * (av * fa - bv * gb);
                        out.c[mode_index(l, -(m as i64))] += wj * sq2 * (av * fb + bv * ga);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Grid values of a scalar field.
    pub fn synthesize(&self, f: &ScalarField) -> Result<Vec<f64>> {
        Ok(self.synth_pair(f, Table::Scalar)?.0)
    }

    /// Harmonic coefficients up to degree `l_out` of grid samples.
    pub fn analyze(&self, values: &[f64], l_out: usize) -> Result<ScalarField> {
        self.inner_pair(values, None, l_out, Table::Scalar)
    }

    /// Grid values (orthonormal frame) of a tangent one-form.
    pub fn synth_tangent(&self, f: &TangentField) -> Result<VecGrid> {
        let (ge1, ge2) = self.synth_pair(&f.e, Table::Grad)?;
        let (gb1, gb2) = self.synth_pair(&f.b, Table::Grad)?;
        Ok(VecGrid {
            t: ge1.iter().zip(&gb2).map(|(a, b)| a - b).collect(),
            p: ge2.iter().zip(&gb1).map(|(a, b)| a + b).collect(),
        })
    }

    /// Gradient of a scalar field on the grid.
    pub fn gradient(&self, f: &ScalarField) -> Result<VecGrid> {
        let (t, p) = self.synth_pair(f, Table::Grad)?;
        Ok(VecGrid { t, p })
    }

    /// Potentials up to degree `l_out` of a tangent field given on the grid.
    pub fn analyze_tangent(&self, v: &VecGrid, l_out: usize) -> Result<TangentField> {
        let e = self.inner_pair(&v.t, Some(&v.p), l_out, Table::Grad)?;
        let neg_t: Vec<f64> = v.t.iter().map(|x| -x).collect();
        let b = self.inner_pair(&v.p, Some(&neg_t), l_out, Table::Grad)?;
        let norm = |l: usize| if l == 0 { 0.0 } else { 1.0 / (l * (l + 1)) as f64 };
        Ok(TangentField { e: e.map_degree(norm), b: b.map_degree(norm) })
    }

    /// Grid values of a traceless tensor.
    pub fn synth_traceless(&self, t: &TracelessTensor) -> Result<SymGrid> {
        let (e1, e2) = self.synth_pair(&t.e, Table::Tensor)?;
        let (b1, b2) = self.synth_pair(&t.b, Table::Tensor)?;
        let tt: Vec<f64> = e1.iter().zip(&b2).map(|(a, b)| a - b).collect();
        let tp: Vec<f64> = e2.iter().zip(&b1).map(|(a, b)| a + b).collect();
        let pp = tt.iter().map(|v| -v).collect();
        Ok(SymGrid { tt, tp, pp })
    }

    /// Potentials up to degree `l_out` of the traceless part of a grid tensor.
    pub fn analyze_traceless(&self, s: &SymGrid, l_out: usize) -> Result<TracelessTensor> {
        let d: Vec<f64> = s.tt.iter().zip(&s.pp).map(|(a, b)| a - b).collect();
        let o: Vec<f64> = s.tp.iter().map(|v| 2.0 * v).collect();
        let neg_d: Vec<f64> = d.iter().map(|v| -v).collect();
        let e = self.inner_pair(&d, Some(&o), l_out, Table::Tensor)?;
        let b = self.inner_pair(&o, Some(&neg_d), l_out, Table::Tensor)?;
        let norm = |l: usize| if l < 2 { 0.0 } else { 1.0 / traceless_norm_sq(l) };
        Ok(TracelessTensor { e: e.map_degree(norm), b: b.map_degree(norm) })
    }

    /// Grid values of a symmetric tensor.
    pub fn synth_sym(&self, t: &SymTensor) -> Result<SymGrid> {
        let mut g = self.synth_traceless(&t.tf)?;
        let iso = self.synthesize(&t.iso)?;
        for (p, v) in iso.iter().enumerate() {
            g.tt[p] += v;
            g.pp[p] += v;
        }
        Ok(g)
    }

    /// Decomposition up to degree `l_out` of a grid symmetric tensor.
    pub fn analyze_sym(&self, s: &SymGrid, l_out: usize) -> Result<SymTensor> {
        let half_tr: Vec<f64> = s.tt.iter().zip(&s.pp).map(|(a, b)| 0.5 * (a + b)).collect();
        Ok(SymTensor { iso: self.analyze(&half_tr, l_out)?, tf: self.analyze_traceless(s, l_out)? })
    }

    /// Default analysis band for derivative computations of nonlinear grid data.
    pub fn deriv_band(&self) -> usize {
        self.l_an.min((self.n_phi - 1) / 2)
    }

    /// Gradients of a batch of scalar grid fields (analysed to `band`).
    fn grads(&self, fields: &[Vec<f64>], band: usize) -> Result<Vec<VecGrid>> {
        fields.iter().map(|f| {
            let c = self.analyze(f, band)?;
            self.gradient(&c)
        }).collect()
    }

    /// Round covariant derivative `∇_a v_b` of a tangent field sampled on the grid.
    pub fn cov_deriv_vector(&self, v: &VecGrid, band: usize) -> Result<Vec<Deriv2>> {
        let n = self.n_points();
        let mut cart = vec![vec![0.0; n]; 3];
        for p in 0..n {
            for i in 0..3 {
                cart[i][p] = v.t[p] * self.e_t[p][i] + v.p[p] * self.e_p[p][i];
            }
        }
        let g = self.grads(&cart, band)?;
        let mut out = vec![[[0.0; 2]; 2]; n];
        for p in 0..n {
            let eb = [self.e_t[p], self.e_p[p]];
            for b in 0..2 {
                for i in 0..3 {
                    out[p][0][b] += g[i].t[p] * eb[b][i];
                    out[p][1][b] += g[i].p[p] * eb[b][i];
                }
            }
        }
        Ok(out)
    }

    /// Round covariant derivative `∇_c T_ab` of a symmetric tensor sampled on the grid.
    pub fn cov_deriv_sym(&self, t: &SymGrid, band: usize) -> Result<Vec<Deriv3>> {
        let n = self.n_points();
        const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        let mut cart = vec![vec![0.0; n]; 6];
        for p in 0..n {
            let eb = [self.e_t[p], self.e_p[p]];
            let tm = t.at(p);
            for (q, &(i, j)) in PAIRS.iter().enumerate() {
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        s += tm[a][b] * eb[a][i] * eb[b][j];
                    }
                }
                cart[q][p] = s;
            }
        }
        let g = self.grads(&cart, band)?;
        let mut out = vec![[[[0.0; 2]; 2]; 2]; n];
        for p in 0..n {
            let eb = [self.e_t[p], self.e_p[p]];
            for (q, &(i, j)) in PAIRS.iter().enumerate() {
                let (gt, gp) = (g[q].t[p], g[q].p[p]);
                for a in 0..2 {
                    for b in 0..2 {
                        let w = if i == j {
                            eb[a][i] * eb[b][j]
                        } else {
                            eb[a][i] * eb[b][j] + eb[a][j] * eb[b][i]
                        };
                        out[p][0][a][b] += gt * w;
                        out[p][1][a][b] += gp * w;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Round Hessian `∇_a∇_b f` of a scalar field.
    pub fn hessian(&self, f: &ScalarField, band: usize) -> Result<Vec<Deriv2>> {
        let g = self.gradient(f)?;
        self.cov_deriv_vector(&g, band)
    }

    /// Round divergence of a tangent field on the grid.
    pub fn divergence_vector(&self, v: &VecGrid, band: usize) -> Result<Vec<f64>> {
        Ok(self.cov_deriv_vector(v, band)?.iter().map(|d| d[0][0] + d[1][1]).collect())
    }

    /// Round divergence `(div T)_b = ∇^a T_ab` of a symmetric tensor on the grid.
    pub fn divergence_sym(&self, t: &SymGrid, band: usize) -> Result<VecGrid> {
        let d = self.cov_deriv_sym(t, band)?;
        Ok(VecGrid {
            t: d.iter().map(|x| x[0][0][0] + x[1][1][0]).collect(),
            p: d.iter().map(|x| x[0][0][1] + x[1][1][1]).collect(),
        })
    }

    /// Measures the per-degree divergence multipliers of traceless tensors by applying
    /// the grid divergence to `T^E(Y_l0)` and reading off the gradient coefficient.
    pub fn measure_div_multipliers(&self, l_top: usize) -> Result<Vec<f64>> {
        let band = self.deriv_band();
        let mut out = vec![0.0; l_top + 1];
        for (l, slot) in out.iter_mut().enumerate().skip(2) {
            let mut t = TracelessTensor::zeros(l_top);
            t.e.c[mode_index(l, 0)] = 1.0;
            let g = self.synth_traceless(&t)?;
            let div = self.divergence_sym(&g, band)?;
            let tf = self.analyze_tangent(&div, l_top)?;
            *slot = tf.e.c[mode_index(l, 0)];
        }
        Ok(out)
    }
}

/// Orthonormal associated Legendre functions `P̃_l^m(cos θ)` (no Condon–Shortley phase),
/// normalized so that `2π ∫ (P̃_l^m)² d cosθ = 1`; returned in triangular order.
pub fn normalized_plm(l_max: usize, x: f64, s: f64) -> Vec<f64> {
    let mut out = vec![0.0; tri_index(l_max, l_max) + 1];
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            let mf = m as f64;
            pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
        }
        out[tri_index(m, m)] = pmm;
        if m < l_max {
            let mf = m as f64;
            out[tri_index(m + 1, m)] = (2.0 * mf + 3.0).sqrt() * x * pmm;
        }
        for l in (m + 2)..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            out[tri_index(l, m)] = a * (x * out[tri_index(l - 1, m)] - b * out[tri_index(l - 2, m)]);
        }
    }
    out
}

/// Which of the six conformal Killing generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CkKind {
    /// Rotation `n×∇Y_1m` (Killing).
    Rotation,
    /// Conformal boost `∇Y_1m`.
    Boost,
}

/// The six conformal Killing fields: index `i = 0..3` rotations, `3..6` boosts, with
/// `m = i mod 3 − 1`.
pub fn ck_generator(i: usize) -> (CkKind, i64) {
    let kind = if i < 3 { CkKind::Rotation } else { CkKind::Boost };
    (kind, (i % 3) as i64 - 1)
}

/// Unit-sphere potentials of the raw generator `i` (not normalized).
pub fn ck_raw_field(i: usize, l_max: usize) -> TangentField {
    let (kind, m) = ck_generator(i);
    let y = ScalarField::single(l_max.max(1), 1, m, 1.0);
    match kind {
        CkKind::Rotation => TangentField { e: ScalarField::zeros(l_max.max(1)), b: y },
        CkKind::Boost => TangentField { e: y, b: ScalarField::zeros(l_max.max(1)) },
    }
}

/// `L²(γ)`-orthonormal basis of conformal Killing vector fields of a boundary metric.
///
/// Fields are vector fields whose components (in the unit orthonormal frame) are those
/// of the raw generators combined through `coeffs` (`Y_i = Σ_j coeffs[i][j] X_j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkBasis {
    /// Mixing matrix from raw generators to orthonormal fields (lower triangular).
    pub coeffs: [[f64; 6]; 6],
    /// Radius when the metric is the round `radius²γ`; `None` for a general metric.
    pub radius: Option<f64>,
}

impl CkBasis {
    /// Basis for the round metric `radius²γ` (closed-form Gram matrix `2·radius⁴·I`).
    pub fn round(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("radius must be positive, got {radius}")));
        }
        let c = 1.0 / (radius * radius * std::f64::consts::SQRT_2);
        let mut coeffs = [[0.0; 6]; 6];
        for (i, row) in coeffs.iter_mut().enumerate() {
            row[i] = c;
        }
        Ok(Self { coeffs, radius: Some(radius) })
    }

    /// Basis orthonormalized (Gram–Cholesky) under `∫ g(X, Y) dσ_g` for a metric sampled
    /// on the grid (frame components relative to the unit round metric).
    pub fn for_metric(grid: &SphGrid, g: &SymGrid) -> Result<Self> {
        let n = grid.n_points();
        let raw: Vec<VecGrid> = (0..6).map(|i| grid.synth_tangent(&ck_raw_field(i, 1))).collect::<Result<_>>()?;
        let mut gram = nalgebra::Matrix6::<f64>::zeros();
        let mu: Vec<f64> = (0..n).map(|p| (g.tt[p] * g.pp[p] - g.tp[p] * g.tp[p]).sqrt()).collect();
        for i in 0..6 {
            for j in 0..=i {
                let f: Vec<f64> = (0..n)
                    .map(|p| {
                        let (a, b) = ([raw[i].t[p], raw[i].p[p]], [raw[j].t[p], raw[j].p[p]]);
                        let gm = g.at(p);
                        let mut s = 0.0;
                        for x in 0..2 {
                            for y in 0..2 {
                                s += gm[x][y] * a[x] * b[y];
                            }
                        }
                        s * mu[p]
                    })
                    .collect();
                let v = grid.integrate(&f);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let chol = gram.cholesky().ok_or_else(|| Error::IllConditioned("CK Gram matrix not positive".into()))?;
        let linv = chol.l().try_inverse().ok_or_else(|| Error::IllConditioned("CK Gram factor singular".into()))?;
        let mut coeffs = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                coeffs[i][j] = linv[(i, j)];
            }
        }
        Ok(Self { coeffs, radius: None })
    }

    /// Vector field `Y_i` as unit-frame potentials.
    pub fn field(&self, i: usize, l_max: usize) -> TangentField {
        let mut out = TangentField::zeros(l_max.max(1));
        for j in 0..6 {
            let c = self.coeffs[i][j];
            if c != 0.0 {
                out = out.lin_comb(1.0, &ck_raw_field(j, l_max.max(1)), c);
            }
        }
        out
    }

    /// The one-form `γ(Σ κ_i Y_i, ·)` for the round metric, as unit potentials.
    pub fn lowered_combination(&self, kappa: &[f64; 6], l_max: usize) -> Result<TangentField> {
        let s = self.radius.ok_or_else(|| Error::Domain("lowering needs a round basis".into()))?;
        let mut out = TangentField::zeros(l_max.max(1));
        for (i, k) in kappa.iter().enumerate() {
            out = out.lin_comb(1.0, &self.field(i, l_max), s * s * k);
        }
        Ok(out)
    }
}

/// `∫ Y_i(rhs) dσ_γ` for a one-form `rhs` and a round basis of radius `s`
/// (`= s²·⟨Y_i, rhs⟩` in unit-sphere coefficients).
pub fn ck_projection(rhs: &TangentField, basis: &CkBasis) -> Result<[f64; 6]> {
    let s = basis.radius.ok_or_else(|| Error::Domain("coefficient projection needs a round basis".into()))?;
    let mut out = [0.0; 6];
    for (i, o) in out.iter_mut().enumerate() {
        *o = s * s * basis.field(i, rhs.e.l_max).inner(&rhs.with_band(rhs.e.l_max.max(1)));
    }
    Ok(out)
}

/// Grid version of [`ck_projection`] for a general basis: `∫ Y_i^a rhs_a dσ_g`.
pub fn ck_projection_grid(grid: &SphGrid, g: &SymGrid, rhs: &VecGrid, basis: &CkBasis) -> Result<[f64; 6]> {
    let n = grid.n_points();
    let mut out = [0.0; 6];
    for (i, o) in out.iter_mut().enumerate() {
        let y = grid.synth_tangent(&basis.field(i, 1))?;
        let f: Vec<f64> = (0..n)
            .map(|p| {
                let mu = (g.tt[p] * g.pp[p] - g.tp[p] * g.tp[p]).sqrt();
                (y.t[p] * rhs.t[p] + y.p[p] * rhs.p[p]) * mu
            })
            .collect();
        *o = grid.integrate(&f);
    }
    Ok(out)
}

/// Splits a one-form into its conformal Killing component (coefficients in the round
/// basis of `radius`) and returns the unique traceless tensor whose divergence with
/// respect to `radius²γ` is the remainder.
pub fn div_traceless_inverse(rhs: &TangentField, radius: f64) -> Result<(TracelessTensor, [f64; 6])> {
    check_band(rhs.e.l_max)?;
    let basis = CkBasis::round(radius)?;
    let kappa = ck_projection(rhs, &basis)?;
    let s2 = radius * radius;
    let mut t = TracelessTensor::zeros(rhs.e.l_max);
    for i in 0..rhs.e.c.len() {
        let l = mode_lm(i).0;
        if l < 2 {
            continue;
        }
        let lam = DIV_MULTIPLIERS[l] / s2;
        if lam.abs() < 1e-14 {
            return Err(Error::IllConditioned(format!("divergence multiplier vanishes at degree {l}")));
        }
        t.e.c[i] = rhs.e.c[i] / lam;
        t.b.c[i] = rhs.b.c[i] / lam;
    }
    Ok((t, kappa))
}

/// Operators of a general (positive definite) metric on the sphere, built from its
/// frame components via the difference tensor to the round connection.
#[derive(Debug, Clone)]
pub struct MetricOps<'a> {
    grid: &'a SphGrid,
    band: usize,
    /// Metric samples.
    pub g: SymGrid,
    /// Inverse metric per point.
    pub ginv: Vec<Deriv2>,
    /// Density `√det g` relative to the round measure.
    pub mu: Vec<f64>,
    /// Round derivative `∇̊_c g_ab`.
    pub dg: Vec<Deriv3>,
    /// Difference tensor `C^c_ab` stored as `[c][a][b]`.
    pub chr: Vec<Deriv3>,
}

impl<'a> MetricOps<'a> {
    /// Precomputes inverse, density and difference tensor.
    pub fn new(grid: &'a SphGrid, g: SymGrid, band: usize) -> Result<Self> {
        let n = grid.n_points();
        let mut ginv = vec![[[0.0; 2]; 2]; n];
        let mut mu = vec![0.0; n];
        for p in 0..n {
            let det = g.tt[p] * g.pp[p] - g.tp[p] * g.tp[p];
            if !(det > 0.0) || !(g.tt[p] > 0.0) {
                return Err(Error::Inadmissible(format!("metric not positive definite at grid point {p}")));
            }
            ginv[p] = [[g.pp[p] / det, -g.tp[p] / det], [-g.tp[p] / det, g.tt[p] / det]];
            mu[p] = det.sqrt();
        }
        let dg = grid.cov_deriv_sym(&g, band)?;
        let mut chr = vec![[[[0.0; 2]; 2]; 2]; n];
        for p in 0..n {
            for c in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let mut s = 0.0;
                        for d in 0..2 {
                            s += ginv[p][c][d] * (dg[p][a][b][d] + dg[p][b][a][d] - dg[p][d][a][b]);
                        }
                        chr[p][c][a][b] = 0.5 * s;
                    }
                }
            }
        }
        Ok(Self { grid, band, g, ginv, mu, dg, chr })
    }

    /// Number of grid points.
    pub fn n_points(&self) -> usize {
        self.mu.len()
    }

    /// `g^{ab} T_ab`.
    pub fn trace(&self, t: &SymGrid) -> Vec<f64> {
        (0..self.n_points())
            .map(|p| {
                let gi = self.ginv[p];
                gi[0][0] * t.tt[p] + 2.0 * gi[0][1] * t.tp[p] + gi[1][1] * t.pp[p]
            })
            .collect()
    }

    /// `|T|²_g = g^{ac}g^{bd}T_ab T_cd`.
    pub fn norm_sq(&self, t: &SymGrid) -> Vec<f64> {
        (0..self.n_points())
            .map(|p| {
                let gi = self.ginv[p];
                let tm = t.at(p);
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        for c in 0..2 {
                            for d in 0..2 {
                                s += gi[a][c] * gi[b][d] * tm[a][b] * tm[c][d];
                            }
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// `|ω|²_g = g^{ab}ω_a ω_b`.
    pub fn covector_norm_sq(&self, w: &VecGrid) -> Vec<f64> {
        (0..self.n_points())
            .map(|p| {
                let gi = self.ginv[p];
                gi[0][0] * w.t[p] * w.t[p] + 2.0 * gi[0][1] * w.t[p] * w.p[p] + gi[1][1] * w.p[p] * w.p[p]
            })
            .collect()
    }

    /// Laplace–Beltrami operator `Δ_g u` of a band-limited scalar.
    pub fn laplacian(&self, u: &ScalarField) -> Result<Vec<f64>> {
        let du = self.grid.gradient(u)?;
        let h = self.grid.hessian(u, self.band)?;
        Ok(self.laplacian_from(&du, &h))
    }

    /// `Δ_g u` from its round gradient and Hessian.
    pub fn laplacian_from(&self, du: &VecGrid, hess: &[Deriv2]) -> Vec<f64> {
        (0..self.n_points())
            .map(|p| {
                let gi = self.ginv[p];
                let d = [du.t[p], du.p[p]];
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        let mut h = hess[p][a][b];
                        for c in 0..2 {
                            h -= self.chr[p][c][a][b] * d[c];
                        }
                        s += gi[a][b] * h;
                    }
                }
                s
            })
            .collect()
    }

    /// Divergence `(div_g K)_b = g^{ac}∇_c K_ab` of a symmetric tensor (a one-form).
    pub fn div_sym(&self, k: &SymGrid) -> Result<VecGrid> {
        let dk = self.grid.cov_deriv_sym(k, self.band)?;
        let n = self.n_points();
        let mut out = VecGrid { t: vec![0.0; n], p: vec![0.0; n] };
        for p in 0..n {
            let gi = self.ginv[p];
            let km = k.at(p);
            let cr = &self.chr[p];
            let mut res = [0.0; 2];
            for (b, rb) in res.iter_mut().enumerate() {
                let mut s = 0.0;
                for a in 0..2 {
                    for c in 0..2 {
                        let mut d = dk[p][c][a][b];
                        for e in 0..2 {
                            d -= cr[e][c][a] * km[e][b] + cr[e][c][b] * km[a][e];
                        }
                        s += gi[a][c] * d;
                    }
                }
                *rb = s;
            }
            out.t[p] = res[0];
            out.p[p] = res[1];
        }
        Ok(out)
    }

    /// Scalar curvature of the metric.
    pub fn scalar_curvature(&self) -> Result<Vec<f64>> {
        let n = self.n_points();
        let mut vfield = VecGrid { t: vec![0.0; n], p: vec![0.0; n] };
        let mut rest = vec![0.0; n];
        let ln_mu: Vec<f64> = self.mu.iter().map(|m| m.ln()).collect();
        for p in 0..n {
            let gi = self.ginv[p];
            let cr = &self.chr[p];
            let mut v = [0.0; 2];
            for (c, vc) in v.iter_mut().enumerate() {
                for a in 0..2 {
                    for b in 0..2 {
                        *vc += gi[a][b] * cr[c][a][b];
                    }
                }
            }
            vfield.t[p] = v[0];
            vfield.p[p] = v[1];
            let mut s = gi[0][0] + gi[1][1];
            for c in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        for d in 0..2 {
                            for e in 0..2 {
                                s += cr[c][a][b] * gi[a][d] * gi[b][e] * self.dg[p][c][d][e];
                            }
                        }
                    }
                }
            }
            for a in 0..2 {
                for b in 0..2 {
                    let mut q = 0.0;
                    for c in 0..2 {
                        for d in 0..2 {
                            q += cr[c][c][d] * cr[d][a][b] - cr[c][a][d] * cr[d][c][b];
                        }
                    }
                    s += gi[a][b] * q;
                }
            }
            rest[p] = s;
        }
        let divv = self.grid.divergence_vector(&vfield, self.band)?;
        let lnmu_c = self.grid.analyze(&ln_mu, self.band)?;
        let hess = self.grid.hessian(&lnmu_c, self.band)?;
        Ok((0..n)
            .map(|p| {
                let gi = self.ginv[p];
                let mut gh = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        gh += gi[a][b] * hess[p][a][b];
                    }
                }
                rest[p] + divv[p] - gh
            })
            .collect())
    }

    /// Area measure density integrated: `∫ f dσ_g`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        let w: Vec<f64> = f.iter().zip(&self.mu).map(|(a, b)| a * b).collect();
        self.grid.integrate(&w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(l_max: usize, l_min: usize, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = ScalarField::zeros(l_max);
        for i in 0..f.c.len() {
            if mode_lm(i).0 >= l_min {
                f.c[i] = rng.gen_range(-1.0..1.0);
            }
        }
        f
    }

    #[test]
    fn mode_index_round_trip() {
        for i in 0..200 {
            let (l, m) = mode_lm(i);
            assert_eq!(mode_index(l, m), i);
        }
    }

    #[test]
    fn constant_has_expected_coefficient() {
        let g = SphGrid::new(6).unwrap();
        let c = g.analyze(&vec![1.0; g.n_points()], 6).unwrap();
        assert_relative_eq!(c.c[0], (4.0 * PI).sqrt(), max_relative = 1e-13);
        assert!(c.c[1..].iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn y21_samples_have_unit_coefficient() {
        let g = SphGrid::new(6).unwrap();
        // Real Y_21 = √(15/4π) sinθ cosθ cosφ in this convention.
        let vals = g.sample(|t, p| (15.0 / (4.0 * PI)).sqrt() * t.sin() * t.cos() * p.cos());
        let c = g.analyze(&vals, 6).unwrap();
        for (i, v) in c.c.iter().enumerate() {
            let want = if i == mode_index(2, 1) { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-13, "mode {:?}: {v}", mode_lm(i));
        }
    }

    #[test]
    fn scalar_round_trip() {
        let g = SphGrid::new(16).unwrap();
        let f = random_field(16, 0, 1);
        let back = g.analyze(&g.synthesize(&f).unwrap(), 16).unwrap();
        let err = back.lin_comb(1.0, &f, -1.0).max_abs();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn tangent_and_traceless_round_trips() {
        let g = SphGrid::new(12).unwrap();
        let tf = TangentField { e: random_field(12, 1, 2), b: random_field(12, 1, 3) };
        let back = g.analyze_tangent(&g.synth_tangent(&tf).unwrap(), 12).unwrap();
        assert!(back.lin_comb(1.0, &tf, -1.0).l2_norm() < 1e-11);
        let tt = TracelessTensor { e: random_field(12, 2, 4), b: random_field(12, 2, 5) };
        let back = g.analyze_traceless(&g.synth_traceless(&tt).unwrap(), 12).unwrap();
        assert!(back.lin_comb(1.0, &tt, -1.0).l2_norm() < 1e-10);
    }

    #[test]
    fn hodge_parts_are_orthogonal() {
        let g = SphGrid::new(10).unwrap();
        let tf = TangentField { e: random_field(10, 1, 6), b: random_field(10, 1, 7) };
        let v = g.synth_tangent(&tf).unwrap();
        let sq: Vec<f64> = v.t.iter().zip(&v.p).map(|(a, b)| a * a + b * b).collect();
        assert_relative_eq!(g.integrate(&sq), tf.l2_norm().powi(2), max_relative = 1e-12);
    }

    #[test]
    fn traceless_norm_matches_quadrature() {
        let g = SphGrid::new(10).unwrap();
        let tt = TracelessTensor { e: random_field(10, 2, 8), b: random_field(10, 2, 9) };
        let s = g.synth_traceless(&tt).unwrap();
        let sq: Vec<f64> = (0..g.n_points()).map(|p| s.tt[p].powi(2) + 2.0 * s.tp[p].powi(2) + s.pp[p].powi(2)).collect();
        assert_relative_eq!(g.integrate(&sq), tt.l2_norm().powi(2), max_relative = 1e-11);
    }

    #[test]
    fn laplacian_eigenvalues() {
        let f = ScalarField::single(4, 1, 0, 1.0).laplace_beltrami();
        assert_eq!(f.get(1, 0), -2.0);
        let f = ScalarField::single(4, 3, 2, 1.0).laplace_beltrami();
        assert_eq!(f.get(3, 2), -12.0);
        assert_eq!(ScalarField::single(4, 0, 0, 1.0).laplace_beltrami().max_abs(), 0.0);
    }

    #[test]
    fn measured_multipliers_match_frozen_table() {
        let g = SphGrid::new(24).unwrap();
        let measured = g.measure_div_multipliers(24).unwrap();
        for l in 2..=24 {
            assert!((measured[l] - DIV_MULTIPLIERS[l]).abs() < 1e-9 * DIV_MULTIPLIERS[l].abs(), "l={l}: {}", measured[l]);
        }
    }

    #[test]
    fn divergence_of_magnetic_tensor_uses_same_multiplier() {
        let g = SphGrid::new(10).unwrap();
        let tt = TracelessTensor { e: ScalarField::zeros(10), b: random_field(10, 2, 10) };
        let div = g.divergence_sym(&g.synth_traceless(&tt).unwrap(), g.deriv_band()).unwrap();
        let got = g.analyze_tangent(&div, 10).unwrap();
        let want = tt.divergence(1.0).unwrap();
        assert!(got.lin_comb(1.0, &want, -1.0).l2_norm() < 1e-9 * want.l2_norm());
    }

    #[test]
    fn degree_one_gradients_are_conformal_killing() {
        let g = SphGrid::new(6).unwrap();
        for m in -1..=1 {
            let y = ScalarField::single(6, 1, m, 1.0);
            let h = g.hessian(&y, g.deriv_band()).unwrap();
            let tf: f64 = h.iter().map(|d| (0.5 * (d[0][0] - d[1][1])).abs().max(d[0][1].abs())).fold(0.0, f64::max);
            assert!(tf < 1e-10, "{tf}");
            // ∇(div X) = −2X for X = ∇Y_1m on the unit sphere.
            let x = g.gradient(&y).unwrap();
            let div = g.divergence_vector(&x, g.deriv_band()).unwrap();
            let gd = g.gradient(&g.analyze(&div, 6).unwrap()).unwrap();
            for p in 0..g.n_points() {
                assert!((gd.t[p] + 2.0 * x.t[p]).abs() < 1e-9 && (gd.p[p] + 2.0 * x.p[p]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ck_projection_properties() {
        let basis = CkBasis::round(1.7).unwrap();
        let l = 6;
        for i in 0..6 {
            let proj = ck_projection(&basis.field(i, l).scaled(1.7 * 1.7), &basis).unwrap();
            for (j, v) in proj.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
        let hi = TangentField { e: random_field(l, 2, 11), b: random_field(l, 2, 12) };
        assert!(ck_projection(&hi, &basis).unwrap().iter().all(|v| v.abs() < 1e-12));
        let grad = TangentField::gradient(&ScalarField::single(l, 1, 0, 0.3));
        let proj = ck_projection(&grad, &basis).unwrap();
        for (j, v) in proj.iter().enumerate() {
            if j == 4 {
                assert!(v.abs() > 0.1);
            } else {
                assert!(v.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn general_metric_basis_agrees_with_round_formula() {
        let g = SphGrid::new(4).unwrap();
        let s = 2.3;
        let round = CkBasis::round(s).unwrap();
        let general = CkBasis::for_metric(&g, &SymGrid::round(g.n_points(), s * s)).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((round.coeffs[i][j] - general.coeffs[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_inverse_round_trip() {
        let l = 10;
        let t0 = TracelessTensor { e: random_field(l, 2, 13), b: random_field(l, 2, 14) };
        let rhs = t0.divergence(1.3).unwrap();
        let (t, kappa) = div_traceless_inverse(&rhs, 1.3).unwrap();
        assert!(t.lin_comb(1.0, &t0, -1.0).l2_norm() < 1e-12 * t0.l2_norm());
        assert!(kappa.iter().all(|k| k.abs() < 1e-14));
        let basis = CkBasis::round(1.3).unwrap();
        let ck = basis.lowered_combination(&[0.1, -0.2, 0.3, 0.4, 0.0, -0.5], l).unwrap();
        let (t, kappa) = div_traceless_inverse(&ck, 1.3).unwrap();
        assert_eq!(t.l2_norm(), 0.0);
        for (k, want) in kappa.iter().zip([0.1, -0.2, 0.3, 0.4, 0.0, -0.5]) {
            assert!((k - want).abs() < 1e-13);
        }
        let (t, kappa) = div_traceless_inverse(&TangentField::zeros(l), 1.3).unwrap();
        assert_eq!(t.l2_norm(), 0.0);
        assert_eq!(kappa, [0.0; 6]);
    }

    #[test]
    fn round_metric_operators() {
        let g = SphGrid::new(8).unwrap();
        let s2 = 3.0;
        let ops = MetricOps::new(&g, SymGrid::round(g.n_points(), s2), g.deriv_band()).unwrap();
        let r = ops.scalar_curvature().unwrap();
        assert!(r.iter().all(|v| (v - 2.0 / s2).abs() < 1e-11));
        let u = random_field(8, 0, 15);
        let lap = ops.laplacian(&u).unwrap();
        let want = g.synthesize(&u.laplace_beltrami().scaled(1.0 / s2)).unwrap();
        for (a, b) in lap.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn conformal_metric_curvature() {
        let g = SphGrid::new(12).unwrap();
        let phi = random_field(4, 0, 16).scaled(0.05);
        let phig = g.synthesize(&phi.with_band(12)).unwrap();
        let e2: Vec<f64> = phig.iter().map(|v| (2.0 * v).exp()).collect();
        let metric = SymGrid { tt: e2.clone(), tp: vec![0.0; e2.len()], pp: e2.clone() };
        let ops = MetricOps::new(&g, metric, g.deriv_band()).unwrap();
        let r = ops.scalar_curvature().unwrap();
        let lap = g.synthesize(&phi.laplace_beltrami().with_band(12)).unwrap();
        let err = (0..g.n_points()).map(|p| (r[p] - (2.0 - 2.0 * lap[p]) / e2[p]).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        let total: Vec<f64> = r.clone();
        assert_relative_eq!(ops.integrate(&total), 8.0 * PI, max_relative = 1e-6);
    }

    #[test]
    fn traceless_perturbation_curvature_is_linearized_formula() {
        let g = SphGrid::new(10).unwrap();
        let eps = 1e-6;
        let mut t = TracelessTensor::zeros(10);
        t.e.c[mode_index(3, 1)] = 1.0;
        let tg = g.synth_traceless(&t).unwrap();
        let metric = SymGrid::round(g.n_points(), 1.0).lin_comb(1.0, &tg, eps);
        let r = MetricOps::new(&g, metric, g.deriv_band()).unwrap().scalar_curvature().unwrap();
        let y = g.synthesize(&ScalarField::single(10, 3, 1, 1.0)).unwrap();
        let coef = -DIV_MULTIPLIERS[3] * 12.0;
        let err = (0..g.n_points()).map(|p| ((r[p] - 2.0) / eps - coef * y[p]).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3 * coef, "{err}");
    }
}
