//! The linearized boundary-value problem at the Schwarzschild background.
//!
//! The unknowns are a potential perturbation `ũ`, a metric perturbation
//! `g̃ = r²(γ̃∞ + h̃(r))` of the leaves, and a conformal Killing one-form `ω̃` on the
//! boundary (the channel absorbing the cokernel of the divergence on traceless tensors).
//! With `φ² = r(r−2m₀)`, `v = m₀/φ²`, `k = 2(r−m₀)/φ²` and `s² = n(n−2)m₀²`, the
//! linearized rows are
//!
//! * `A = Δũ + v·trK̃`,
//! * `B = ∂_r trK̃ + k·trK̃ + 4v·∂_r ũ`,
//! * `C = ∂_r K̂̃`,
//! * `E = (4 − 2ℓ(ℓ+1))ũ/s² − 4v∂_rũ + k·trK̃` on the boundary,
//! * `F = 2v·d̸ũ − div_{s²γ}K̂̃ + ½d̸trK̃ + ω̃` on the boundary,
//! * `G = (n/(n−2))g̃ − 2n²m₀²ũγ` on the boundary,
//! * `H = trK̃ − 2∂_rũ + (2/(n·m₀))ũ` on the boundary,
//!
//! where `trK̃ = φ⁻²(iso ∂g̃ − k·iso g̃)` and `K̂̃ = ½(tf ∂g̃ − k·tf g̃)`.
//!
//! Eliminating `trK̃` leaves a nonlocal problem for `ũ` alone:
//! `Δũ − 4m₀²ũ/φ⁴ + β·2n(n−2)m₀³/φ⁴ = ψ` with `β = ∂_rũ(r₀) + (4−n)ũ(r₀)/(n(n−2)m₀)`,
//! and the boundary relation `(2/(n·m₀))∂_rũ − (ℓ(ℓ+1) − 2/n)ũ/s² = Γ/2`. Per mode the
//! general decaying solution is a particular solution plus two homogeneous pieces, fixed
//! by a 2×2 system. The remaining unknowns then follow by radial quadratures.

use crate::elliptic::{ModeOperator, ModeSolver, PairTable};
use crate::error::{Error, Result};
use crate::schwarzschild::Background;
use crate::spaces::{fit_tail, tail_window, weighted_c_norm, RadialGrid, RadialScalar, SegmentQuad};
use crate::sphharm::{
    ck_projection, div_traceless_inverse, mode_index, mode_lm, n_modes, CkBasis, ScalarField, SymTensor, TangentField,
    TracelessTensor,
};
use nalgebra::{DMatrix, Matrix2, Vector2};
use crate::ode::dense_samples;
use ode_solvers::System;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest acceptable condition number of a per-mode boundary system.
pub const MAX_CONDITION: f64 = 1e10;

/// Right-hand side of the linearized system: radial rows `A`, `B`, `C` and boundary rows
/// `E`, `F`, `G`, `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedData {
    /// Angular band.
    pub l_max: usize,
    /// Potential row (values only).
    pub a: RadialScalar,
    /// Mean-curvature transport row (values only).
    pub b: RadialScalar,
    /// Traceless transport row, one tensor per node.
    pub c: Vec<TracelessTensor>,
    /// Gauss row.
    pub e: ScalarField,
    /// Codazzi row.
    pub f: TangentField,
    /// Metric matching row.
    pub g: SymTensor,
    /// Mean-curvature matching row.
    pub h: ScalarField,
}

/// One solved mode: index, radial profile with two derivatives, boundary coefficient.
type ModeColumn = (usize, [Vec<f64>; 3], f64);

/// Weighted sizes of the seven rows, in the order `A, B, C, E, F, G, H`.
pub type RowNorms = [f64; 7];

/// Names of the rows, matching [`RowNorms`].
pub const ROW_NAMES: [&str; 7] = ["A", "B", "C", "E", "F", "G", "H"];

impl LinearizedData {
    /// All rows zero.
    pub fn zeros(n_r: usize, l_max: usize) -> Self {
        Self {
            l_max,
            a: RadialScalar::zeros(n_r, l_max),
            b: RadialScalar::zeros(n_r, l_max),
            c: vec![TracelessTensor::zeros(l_max); n_r],
            e: ScalarField::zeros(l_max),
            f: TangentField::zeros(l_max),
            g: SymTensor::zeros(l_max),
            h: ScalarField::zeros(l_max),
        }
    }

    /// `α·self + β·other`.
    pub fn lin_comb(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        Self {
            l_max: self.l_max,
            a: self.a.lin_comb(alpha, &other.a, beta),
            b: self.b.lin_comb(alpha, &other.b, beta),
            c: self.c.iter().zip(&other.c).map(|(x, y)| x.lin_comb(alpha, y, beta)).collect(),
            e: self.e.lin_comb(alpha, &other.e, beta),
            f: self.f.lin_comb(alpha, &other.f, beta),
            g: self.g.lin_comb(alpha, &other.g, beta),
            h: self.h.lin_comb(alpha, &other.h, beta),
        }
    }

    /// Checks that every row carries the declared band and the grid's node count.
    pub fn check(&self, n_r: usize) -> Result<()> {
        let l = self.l_max;
        let bands = [
            self.a.l_max,
            self.b.l_max,
            self.e.l_max,
            self.f.e.l_max,
            self.f.b.l_max,
            self.g.iso.l_max,
            self.g.tf.e.l_max,
            self.g.tf.b.l_max,
            self.h.l_max,
        ];
        if bands.iter().any(|b| *b != l) || self.c.iter().any(|t| t.e.l_max != l || t.b.l_max != l) {
            return Err(Error::Shape(format!("linearized data rows do not all carry band {l}")));
        }
        if self.a.n_r() != n_r || self.b.n_r() != n_r || self.c.len() != n_r {
            return Err(Error::Shape(format!("linearized data rows do not have {n_r} nodes")));
        }
        Ok(())
    }

    /// Weighted sizes of the rows: radial rows in the sup norm `sup r^{2−δ}|·|` (the
    /// `δ − 2` decay class), boundary rows in the coefficient `L²` norm.
    pub fn row_norms(&self, grid: &RadialGrid, delta: f64) -> Result<RowNorms> {
        let cn = |s: &RadialScalar| weighted_c_norm(grid, s, 0, 0, delta - 2.0).map(|r| r.value);
        let (ce, cb) = traceless_stacks(&self.c, self.l_max);
        Ok([
            cn(&self.a)?,
            cn(&self.b)?,
            (cn(&ce)?.powi(2) + cn(&cb)?.powi(2)).sqrt(),
            self.e.l2_norm(),
            self.f.l2_norm(),
            self.g.l2_norm(),
            self.h.l2_norm(),
        ])
    }

    /// Largest row of `self − other`, relative to the largest row of `other`.
    pub fn relative_distance(&self, other: &Self, grid: &RadialGrid, delta: f64) -> Result<f64> {
        let d = self.lin_comb(1.0, other, -1.0).row_norms(grid, delta)?;
        let s = other.row_norms(grid, delta)?;
        let scale = s.iter().fold(0.0_f64, |a, v| a.max(*v));
        let num = d.iter().fold(0.0_f64, |a, v| a.max(*v));
        Ok(if scale > 0.0 { num / scale } else { num })
    }

    /// Fitted far-field exponents of the radial rows `A`, `B`, `C` (largest over modes;
    /// `−∞` for identically vanishing rows).
    pub fn decay_exponents(&self, grid: &RadialGrid) -> [f64; 3] {
        let worst = |m: &DMatrix<f64>| {
            let mut e = f64::NEG_INFINITY;
            for col in m.column_iter() {
                let v: Vec<f64> = col.iter().copied().collect();
                let scale = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
                if scale == 0.0 || v[v.len() - 1].abs() <= 1e-13 * scale {
                    continue;
                }
                let fit = fit_tail(&grid.r, &v, tail_window(v.len()));
                if fit.valid {
                    e = e.max(fit.exponent);
                }
            }
            e
        };
        let (ce, cb) = traceless_stacks(&self.c, self.l_max);
        [worst(&self.a.val), worst(&self.b.val), worst(&ce.val).max(worst(&cb.val))]
    }
}

/// Potentials of a per-node traceless tensor sequence as two value stacks.
pub(crate) fn traceless_stacks(c: &[TracelessTensor], l_max: usize) -> (RadialScalar, RadialScalar) {
    let mut e = RadialScalar::zeros(c.len(), l_max);
    let mut b = RadialScalar::zeros(c.len(), l_max);
    for (i, t) in c.iter().enumerate() {
        for k in 0..n_modes(l_max) {
            e.val[(i, k)] = t.e.c[k];
            b.val[(i, k)] = t.b.c[k];
        }
    }
    (e, b)
}

/// Perturbation `(ũ, g̃, ω̃)` of the background with `g̃ = r²(γ̃∞ + h̃(r))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedState {
    /// `ũ` with two radial derivatives.
    pub u: RadialScalar,
    /// `γ̃∞`.
    pub gamma_inf: SymTensor,
    /// `h̃` per node.
    pub h: Vec<SymTensor>,
    /// `∂_r h̃` per node.
    pub dh: Vec<SymTensor>,
    /// `∂²_r h̃` per node.
    pub d2h: Vec<SymTensor>,
    /// Conformal Killing one-form on the boundary.
    pub omega: TangentField,
}

impl LinearizedState {
    /// The zero perturbation.
    pub fn zeros(n_r: usize, l_max: usize) -> Self {
        let z = SymTensor::zeros(l_max);
        Self {
            u: RadialScalar::zeros(n_r, l_max),
            gamma_inf: z.clone(),
            h: vec![z.clone(); n_r],
            dh: vec![z.clone(); n_r],
            d2h: vec![z; n_r],
            omega: TangentField::zeros(l_max),
        }
    }
}

/// Output of the nonlocal scalar solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalSolution {
    /// `ũ` with two radial derivatives.
    pub u: RadialScalar,
    /// The nonlocal coupling scalar `β` per mode.
    pub beta: Vec<f64>,
    /// Condition number of the boundary system per degree.
    pub condition: Vec<f64>,
}

/// Full solution of the linearized system.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSolution {
    /// The perturbation.
    pub state: LinearizedState,
    /// `trK̃` (values and first derivative).
    pub tr_k: RadialScalar,
    /// `K̂̃` per node.
    pub khat: Vec<TracelessTensor>,
    /// Coefficients of `ω̃` in the orthonormal conformal Killing basis of `s²γ`.
    pub omega_coeffs: [f64; 6],
    /// Decoupled source `ψ`.
    pub psi: RadialScalar,
    /// Decoupled boundary source `Γ`.
    pub gamma: ScalarField,
    /// Nonlocal coupling scalar per mode.
    pub beta: Vec<f64>,
    /// Condition number of the boundary system per degree.
    pub condition: Vec<f64>,
}

/// Per-degree homogeneous pieces and boundary system.
#[derive(Debug, Clone)]
struct DegreeSystem {
    table: PairTable,
    /// Solution of `Lw = −2n(n−2)m₀³/φ⁴`, `w(r₀) = 0`.
    wk: [Vec<f64>; 3],
    /// Decaying homogeneous solution, `1` at `r₀`.
    wh: [Vec<f64>; 3],
    matrix: Matrix2<f64>,
    condition: f64,
}

/// Inverse of the linearized operator at the Schwarzschild background on a fixed grid
/// and band.
#[derive(Debug, Clone)]
pub struct LinearizedSolver {
    /// Mode solver (background and grid).
    pub solver: ModeSolver,
    /// Angular band.
    pub l_max: usize,
    degrees: Vec<DegreeSystem>,
}

/// Scalars of the background used by the linearized rows.
#[derive(Debug, Clone, Copy)]
struct Coefficients {
    m: f64,
    n: f64,
    r0: f64,
    s2: f64,
    sigma: f64,
}

impl Coefficients {
    fn new(bg: &Background) -> Self {
        let (m, n) = (bg.m0, bg.n);
        Self { m, n, r0: bg.r0(), s2: n * (n - 2.0) * m * m, sigma: 2.0 / (n * m) }
    }
    fn phi2(&self, r: f64) -> f64 {
        r * (r - 2.0 * self.m)
    }
    fn v(&self, r: f64) -> f64 {
        self.m / self.phi2(r)
    }
    fn k(&self, r: f64) -> f64 {
        2.0 * (r - self.m) / self.phi2(r)
    }
    fn kappa(&self, r: f64) -> f64 {
        let p = self.phi2(r);
        2.0 * self.n * (self.n - 2.0) * self.m.powi(3) / (p * p)
    }
    /// `(4 − n)/(n(n−2)m₀)`.
    fn q(&self) -> f64 {
        (4.0 - self.n) / (self.n * (self.n - 2.0) * self.m)
    }
    /// `(ℓ(ℓ+1) − 2/n)/s²`.
    fn q_l(&self, l: usize) -> f64 {
        ((l * (l + 1)) as f64 - 2.0 / self.n) / self.s2
    }
}

/// Column-wise forward cumulative integrals `∫_{r₀}^{r_i} w(r)f(r) dr` of node stacks.
fn cumulative_cols(sq: &SegmentQuad, m: &DMatrix<f64>, weight: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    let wq: Vec<f64> = sq.r.iter().map(|r| weight(*r)).collect();
    for (k, col) in m.column_iter().enumerate() {
        if col.iter().all(|v| *v == 0.0) {
            continue;
        }
        let v: Vec<f64> = col.iter().copied().collect();
        let fq: Vec<f64> = sq.values(&v).iter().zip(&wq).map(|(a, b)| a * b).collect();
        for (i, c) in sq.cumulative(&fq).into_iter().enumerate() {
            out[(i, k)] = c;
        }
    }
    out
}

/// Symmetric tensor stacks: rows are nodes, columns modes of `iso`, `tf.e`, `tf.b`.
#[derive(Debug, Clone)]
struct SymStack {
    iso: DMatrix<f64>,
    e: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl SymStack {
    fn zeros(n_r: usize, l_max: usize) -> Self {
        let z = DMatrix::zeros(n_r, n_modes(l_max));
        Self { iso: z.clone(), e: z.clone(), b: z }
    }
    fn from_tensors(t: &[SymTensor], l_max: usize) -> Self {
        let mut s = Self::zeros(t.len(), l_max);
        for (i, x) in t.iter().enumerate() {
            for k in 0..n_modes(l_max) {
                s.iso[(i, k)] = x.iso.c[k];
                s.e[(i, k)] = x.tf.e.c[k];
                s.b[(i, k)] = x.tf.b.c[k];
            }
        }
        s
    }
    fn at(&self, i: usize, l_max: usize) -> SymTensor {
        let row = |m: &DMatrix<f64>| ScalarField { l_max, c: m.row(i).iter().copied().collect() };
        SymTensor { iso: row(&self.iso), tf: TracelessTensor { e: row(&self.e), b: row(&self.b) } }
    }
}

impl LinearizedSolver {
    /// Prepares the homogeneous pieces and boundary systems of every degree `≤ l_max`.
    ///
    /// Fails with [`Error::IllConditioned`] when a boundary system's condition number
    /// exceeds [`MAX_CONDITION`] (a decaying kernel would be near).
    pub fn new(bg: Background, grid: RadialGrid, l_max: usize) -> Result<Self> {
        let solver = ModeSolver::new(bg, grid)?;
        let co = Coefficients::new(&bg);
        let neg_kappa: Vec<f64> = solver.grid.r.iter().map(|r| -co.kappa(*r)).collect();
        let degrees = (0..=l_max)
            .into_par_iter()
            .map(|l| {
                let table = solver.pair_table(l, ModeOperator::Shifted)?;
                let (a, da, d2a) = solver.solve_with(&table, &neg_kappa, 0.0)?;
                let (h, dh, d2h) = solver.decaying(&table);
                let (wk1, wh1) = (da[0], dh[0]);
                let matrix = Matrix2::new(1.0 - wk1, -(co.q() + wh1), co.sigma * wk1, co.sigma * wh1 - co.q_l(l));
                let sv = matrix.singular_values();
                let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
                if !(condition <= MAX_CONDITION) {
                    return Err(Error::IllConditioned(format!(
                        "boundary system of degree {l} has condition number {condition:.3e}"
                    )));
                }
                Ok(DegreeSystem { table, wk: [a, da, d2a], wh: [h, dh, d2h], matrix, condition })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { solver, l_max, degrees })
    }

    /// Background.
    pub fn background(&self) -> &Background {
        &self.solver.bg
    }

    /// Radial grid.
    pub fn grid(&self) -> &RadialGrid {
        &self.solver.grid
    }

    /// Condition numbers of the boundary systems, per degree.
    pub fn condition_numbers(&self) -> Vec<f64> {
        self.degrees.iter().map(|d| d.condition).collect()
    }

    fn check_band(&self, l: usize) -> Result<()> {
        if l != self.l_max {
            return Err(Error::Shape(format!("field band {l} differs from solver band {}", self.l_max)));
        }
        Ok(())
    }

    /// `∫_{r₀}^r φ²B` per mode at the nodes.
    fn b_integral(&self, b: &RadialScalar) -> DMatrix<f64> {
        let co = Coefficients::new(&self.solver.bg);
        cumulative_cols(self.solver.quadrature(), &b.val, |r| co.phi2(r))
    }

    /// Decoupled sources: `ψ = A − (m₀/φ⁴)∫_{r₀}^r φ²B − (n(n−2)m₀³/φ⁴)H` and
    /// `Γ = E − 2(n−1)/(n(n−2)m₀)·H`.
    pub fn build_psi_gamma(&self, data: &LinearizedData) -> Result<(RadialScalar, ScalarField)> {
        self.check_band(data.l_max)?;
        data.check(self.grid().len())?;
        let co = Coefficients::new(&self.solver.bg);
        let bint = self.b_integral(&data.b);
        let mut psi = RadialScalar::zeros(self.grid().len(), self.l_max);
        for (i, &r) in self.grid().r.iter().enumerate() {
            let p4 = co.phi2(r).powi(2);
            for k in 0..n_modes(self.l_max) {
                psi.val[(i, k)] = data.a.val[(i, k)]
                    - co.m / p4 * bint[(i, k)]
                    - co.n * (co.n - 2.0) * co.m.powi(3) / p4 * data.h.c[k];
            }
        }
        let k0 = 2.0 * (co.n - 1.0) / (co.n * (co.n - 2.0) * co.m);
        Ok((psi, data.e.lin_comb(1.0, &data.h, -k0)))
    }

    /// Solves the nonlocal scalar problem for `ũ` given `ψ` and `Γ`.
    pub fn solve_nonlocal(&self, psi: &RadialScalar, gamma: &ScalarField) -> Result<NonlocalSolution> {
        self.check_band(psi.l_max)?;
        self.check_band(gamma.l_max)?;
        let co = Coefficients::new(&self.solver.bg);
        let n_r = self.grid().len();
        let per_degree: Vec<Result<Vec<ModeColumn>>> = self
            .degrees
            .par_iter()
            .enumerate()
            .map(|(l, d)| {
                let lu = d.matrix.lu();
                let mut out = Vec::with_capacity(2 * l + 1);
                for m in -(l as i64)..=(l as i64) {
                    let k = mode_index(l, m);
                    let b: Vec<f64> = psi.val.column(k).iter().copied().collect();
                    let (a, da, d2a) = self.solver.solve_with(&d.table, &b, 0.0)?;
                    let rhs = Vector2::new(da[0], 0.5 * gamma.c[k] - co.sigma * da[0]);
                    let x = lu
                        .solve(&rhs)
                        .ok_or_else(|| Error::IllConditioned(format!("boundary system of degree {l} is singular")))?;
                    let (beta, c) = (x[0], x[1]);
                    let comb = |p: &[f64], wk: &[f64], wh: &[f64]| -> Vec<f64> {
                        (0..n_r).map(|i| p[i] + beta * wk[i] + c * wh[i]).collect()
                    };
                    let u = [comb(&a, &d.wk[0], &d.wh[0]), comb(&da, &d.wk[1], &d.wh[1]), comb(&d2a, &d.wk[2], &d.wh[2])];
                    out.push((k, u, beta));
                }
                Ok(out)
            })
            .collect();
        let mut u = RadialScalar::zeros(n_r, self.l_max);
        let mut beta = vec![0.0; n_modes(self.l_max)];
        for r in per_degree {
            for (k, stacks, b) in r? {
                for i in 0..n_r {
                    u.val[(i, k)] = stacks[0][i];
                    u.d1[(i, k)] = stacks[1][i];
                    u.d2[(i, k)] = stacks[2][i];
                }
                beta[k] = b;
            }
        }
        Ok(NonlocalSolution { u, beta, condition: self.condition_numbers() })
    }

    /// Recovers `trK̃`, `ω̃`, `K̂̃` and `g̃` from `ũ` and the data by radial quadratures.
    pub fn reconstruct(&self, nl: &NonlocalSolution, data: &LinearizedData) -> Result<LinearizedSolution> {
        self.check_band(data.l_max)?;
        data.check(self.grid().len())?;
        let co = Coefficients::new(&self.solver.bg);
        let grid = self.grid();
        let sq = self.solver.quadrature();
        let (n_r, nm, lm) = (grid.len(), n_modes(self.l_max), self.l_max);
        let u = &nl.u;
        let (u0, du0) = (u.at(0), u.d1_at(0));
        let s = co.s2.sqrt();
        let v0 = co.v(co.r0);

        // Mean curvature.
        let trk_b = data.h.lin_comb(1.0, &du0, 2.0).lin_comb(1.0, &u0, -co.sigma);
        let bint = self.b_integral(&data.b);
        let mut tr_k = RadialScalar::zeros(n_r, lm);
        for (i, &r) in grid.r.iter().enumerate() {
            let p2 = co.phi2(r);
            for k in 0..nm {
                let t = (co.s2 * trk_b.c[k] - 4.0 * co.m * (u.val[(i, k)] - u0.c[k]) + bint[(i, k)]) / p2;
                tr_k.val[(i, k)] = t;
                tr_k.d1[(i, k)] = data.b.val[(i, k)] - co.k(r) * t - 4.0 * co.v(r) * u.d1[(i, k)];
            }
        }

        // Conformal Killing channel and initial traceless curvature.
        let forcing = u0.lin_comb(2.0 * v0, &trk_b, 0.5);
        let rest = data.f.lin_comb(1.0, &TangentField::gradient(&forcing), -1.0);
        let (omega, _) = rest.split_degree_one();
        let omega_coeffs = ck_projection(&omega, &CkBasis::round(s)?)?;
        let (khat0, leftover) = div_traceless_inverse(&omega.lin_comb(1.0, &rest, -1.0), s)?;
        let scale = rest.l2_norm().max(f64::MIN_POSITIVE);
        if leftover.iter().any(|v| v.abs() > 1e-10 * scale * co.s2) {
            return Err(Error::Invariant(format!("conformal Killing content not absorbed: {leftover:?}")));
        }
        let (ce, cb) = traceless_stacks(&data.c, lm);
        let ie = cumulative_cols(sq, &ce.val, |_| 1.0);
        let ib = cumulative_cols(sq, &cb.val, |_| 1.0);
        let khat: Vec<TracelessTensor> = (0..n_r)
            .map(|i| TracelessTensor {
                e: ScalarField { l_max: lm, c: (0..nm).map(|k| khat0.e.c[k] + ie[(i, k)]).collect() },
                b: ScalarField { l_max: lm, c: (0..nm).map(|k| khat0.b.c[k] + ib[(i, k)]).collect() },
            })
            .collect();

        // Metric: w = ∂_r(g̃/φ²) = 2K̂̃/φ² + trK̃·γ, g̃ = φ²(c₀ + ∫w).
        let mut w = SymStack::zeros(n_r, lm);
        let mut dw = SymStack::zeros(n_r, lm);
        for (i, &r) in grid.r.iter().enumerate() {
            let p2 = co.phi2(r);
            for k in 0..nm {
                w.iso[(i, k)] = tr_k.val[(i, k)];
                w.e[(i, k)] = 2.0 * khat[i].e.c[k] / p2;
                w.b[(i, k)] = 2.0 * khat[i].b.c[k] / p2;
                dw.iso[(i, k)] = tr_k.d1[(i, k)];
                dw.e[(i, k)] = 2.0 * (ce.val[(i, k)] - co.k(r) * khat[i].e.c[k]) / p2;
                dw.b[(i, k)] = 2.0 * (cb.val[(i, k)] - co.k(r) * khat[i].b.c[k]) / p2;
            }
        }
        let big_w =
            SymStack { iso: cumulative_cols(sq, &w.iso, |_| 1.0), e: cumulative_cols(sq, &w.e, |_| 1.0), b: cumulative_cols(sq, &w.b, |_| 1.0) };
        // Modes at round-off, relative to the whole velocity stack or absolutely (the
        // velocity has units of inverse length), carry no tail.
        let noise = 1e-12 * [&w.iso, &w.e, &w.b].iter().map(|m| m.amax()).fold(0.0_f64, f64::max) + f64::EPSILON / grid.r0;
        let tail = |m: &DMatrix<f64>, k: usize| -> Result<f64> {
            let col: Vec<f64> = m.column(k).iter().copied().collect();
            let scale = col.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if scale <= noise || col[n_r - 1].abs() <= 1e-14 * scale {
                return Ok(0.0);
            }
            let fit = fit_tail(&grid.r, &col, tail_window(n_r));
            if !fit.valid {
                return Ok(0.0);
            }
            if fit.exponent >= -1.0 - 1e-6 {
                return Err(Error::Inadmissible(format!(
                    "metric velocity of mode {:?} decays too slowly (exponent {:.3})",
                    mode_lm(k),
                    fit.exponent
                )));
            }
            Ok(fit.integral_beyond())
        };
        let f = (co.n - 2.0) / co.n;
        let mut c0 = SymTensor::zeros(lm);
        let mut gamma_inf = SymTensor::zeros(lm);
        for k in 0..nm {
            c0.iso.c[k] = f * (2.0 * co.n * co.n * co.m * co.m * u0.c[k] + data.g.iso.c[k]) / co.s2;
            c0.tf.e.c[k] = f * data.g.tf.e.c[k] / co.s2;
            c0.tf.b.c[k] = f * data.g.tf.b.c[k] / co.s2;
            gamma_inf.iso.c[k] = c0.iso.c[k] + big_w.iso[(n_r - 1, k)] + tail(&w.iso, k)?;
            gamma_inf.tf.e.c[k] = c0.tf.e.c[k] + big_w.e[(n_r - 1, k)] + tail(&w.e, k)?;
            gamma_inf.tf.b.c[k] = c0.tf.b.c[k] + big_w.b[(n_r - 1, k)] + tail(&w.b, k)?;
        }
        let mut h = Vec::with_capacity(n_r);
        let mut dh = Vec::with_capacity(n_r);
        let mut d2h = Vec::with_capacity(n_r);
        for (i, &r) in grid.r.iter().enumerate() {
            let x = c0.lin_comb(1.0, &big_w.at(i, lm), 1.0);
            let (wi, dwi) = (w.at(i, lm), dw.at(i, lm));
            let lapse2 = 1.0 - 2.0 * co.m / r;
            h.push(x.lin_comb(lapse2, &gamma_inf, -1.0));
            dh.push(x.lin_comb(2.0 * co.m / (r * r), &wi, lapse2));
            d2h.push(x.scaled(-4.0 * co.m / r.powi(3)).lin_comb(1.0, &wi, 4.0 * co.m / (r * r)).lin_comb(1.0, &dwi, lapse2));
        }
        let (psi, gamma) = self.build_psi_gamma(data)?;
        Ok(LinearizedSolution {
            state: LinearizedState { u: u.clone(), gamma_inf, h, dh, d2h, omega },
            tr_k,
            khat,
            omega_coeffs,
            psi,
            gamma,
            beta: nl.beta.clone(),
            condition: nl.condition.clone(),
        })
    }

    /// Solves the linearized system for the given data.
    pub fn solve(&self, data: &LinearizedData) -> Result<LinearizedSolution> {
        let (psi, gamma) = self.build_psi_gamma(data)?;
        let nl = self.solve_nonlocal(&psi, &gamma)?;
        self.reconstruct(&nl, data)
    }

    /// Evaluates the seven linearized rows on a perturbation.
    pub fn apply_dphi(&self, st: &LinearizedState) -> Result<LinearizedData> {
        let lm = self.l_max;
        self.check_band(st.u.l_max)?;
        let co = Coefficients::new(&self.solver.bg);
        let grid = self.grid();
        let (n_r, nm) = (grid.len(), n_modes(lm));
        if st.u.n_r() != n_r || st.h.len() != n_r || st.dh.len() != n_r || st.d2h.len() != n_r {
            return Err(Error::Shape(format!("perturbation does not have {n_r} nodes")));
        }
        let h = SymStack::from_tensors(&st.h, lm);
        let dh = SymStack::from_tensors(&st.dh, lm);
        let d2h = SymStack::from_tensors(&st.d2h, lm);
        let gi = SymStack::from_tensors(std::slice::from_ref(&st.gamma_inf), lm);
        let mut out = LinearizedData::zeros(n_r, lm);
        let mut tr0 = vec![0.0; nm];
        let mut khat0 = TracelessTensor::zeros(lm);
        let mut g0 = SymTensor::zeros(lm);
        for (i, &r) in grid.r.iter().enumerate() {
            let (p2, k, v) = (co.phi2(r), co.k(r), co.v(r));
            // With g̃ = r²X, X = γ̃∞ + h̃: P = ∂g̃ − k·g̃ = r²X' − (2rm₀/(r−2m₀))X and
            // P' = r²X'' + (2r(r−3m₀)/(r−2m₀))X' + (4m₀²/(r−2m₀)²)X. Written this way no
            // O(1) terms cancel at large r.
            let (c1, c2, c0) = (2.0 * r * (r - 3.0 * co.m) / (r - 2.0 * co.m), 2.0 * r * co.m / (r - 2.0 * co.m), 4.0 * co.m * co.m / (r - 2.0 * co.m).powi(2));
            let parts = |m0: &DMatrix<f64>, g: &DMatrix<f64>, m1: &DMatrix<f64>, m2: &DMatrix<f64>, kk: usize| {
                let x = g[(0, kk)] + m0[(i, kk)];
                let (x1, x2) = (m1[(i, kk)], m2[(i, kk)]);
                (r * r * x, r * r * x1 - c2 * x, r * r * x2 + c1 * x1 + c0 * x)
            };
            let mut row_c = TracelessTensor::zeros(lm);
            for kk in 0..nm {
                let ll = (mode_lm(kk).0 * (mode_lm(kk).0 + 1)) as f64;
                let (g, p, q) = parts(&h.iso, &gi.iso, &dh.iso, &d2h.iso, kk);
                let t = p / p2;
                let dt = -k * t + q / p2;
                let (a, a1, a2) = (st.u.val[(i, kk)], st.u.d1[(i, kk)], st.u.d2[(i, kk)]);
                out.a.val[(i, kk)] = a2 + k * a1 - ll / p2 * a + v * t;
                out.b.val[(i, kk)] = dt + k * t + 4.0 * v * a1;
                let (e, ep, eq) = parts(&h.e, &gi.e, &dh.e, &d2h.e, kk);
                let (b, bp, bq) = parts(&h.b, &gi.b, &dh.b, &d2h.b, kk);
                row_c.e.c[kk] = 0.5 * eq;
                row_c.b.c[kk] = 0.5 * bq;
                if i == 0 {
                    tr0[kk] = t;
                    khat0.e.c[kk] = 0.5 * ep;
                    khat0.b.c[kk] = 0.5 * bp;
                    g0.iso.c[kk] = g;
                    g0.tf.e.c[kk] = e;
                    g0.tf.b.c[kk] = b;
                }
            }
            out.c[i] = row_c;
        }
        let (u0, du0) = (st.u.at(0), st.u.d1_at(0));
        let tr0 = ScalarField { l_max: lm, c: tr0 };
        let (k0, v0) = (co.k(co.r0), co.v(co.r0));
        out.e = u0
            .map_degree(|l| (4.0 - 2.0 * (l * (l + 1)) as f64) / co.s2)
            .lin_comb(1.0, &du0, -4.0 * v0)
            .lin_comb(1.0, &tr0, k0);
        let grad = TangentField::gradient(&u0.lin_comb(2.0 * v0, &tr0, 0.5));
        out.f = grad.lin_comb(1.0, &khat0.divergence(co.s2.sqrt())?, -1.0).lin_comb(1.0, &st.omega.with_band(lm), 1.0);
        let nn = co.n / (co.n - 2.0);
        out.g = g0.scaled(nn);
        for kk in 0..nm {
            out.g.iso.c[kk] -= 2.0 * co.n * co.n * co.m * co.m * u0.c[kk];
        }
        out.h = tr0.lin_comb(1.0, &du0, -2.0).lin_comb(1.0, &u0, co.sigma);
        Ok(out)
    }
}

/// Outcome of the outward integration of one kernel candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelVerdict {
    /// `|a|` crossed the blow-up threshold before the end of the scan.
    BlowUp,
    /// The trajectory tends to a nonzero limit or grows, but stayed below the threshold.
    NonDecaying,
    /// The trajectory decays: a kernel element would exist.
    Decaying,
}

/// Scan result for one degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMode {
    /// Degree.
    pub l: usize,
    /// Initial value `a(1)` (for `C = 1`).
    pub alpha: f64,
    /// Initial slope `a'(1)`.
    pub beta: f64,
    /// Verdict.
    pub verdict: KernelVerdict,
    /// Radius at which `|a|` first exceeded the threshold.
    pub r_threshold: Option<f64>,
    /// Final radius reached.
    pub r_end: f64,
    /// `a(r_end)`.
    pub a_end: f64,
    /// `a(r_end)/r_end^ℓ`: the coefficient of the growing solution.
    pub growth_coefficient: f64,
    /// The auxiliary profiles `f_ℓ`, `f'_ℓ`, `g̃_ℓ` stay negative on the scan nodes.
    pub sign_chain: bool,
    /// Largest auxiliary-profile value on the scan nodes (must be negative).
    pub sign_margin: f64,
    /// For `ℓ = 0`: largest relative deviation from the closed-form trajectory and from
    /// the closed-form auxiliary profile.
    pub closed_form_error: Option<f64>,
    /// For `ℓ = 0`: the closed-form limit at infinity.
    pub limit: Option<f64>,
}

/// Kernel scan over degrees `0..=l_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelScanReport {
    /// Boundary position in units of `m₀`.
    pub n: f64,
    /// Largest degree.
    pub l_max: usize,
    /// Blow-up threshold.
    pub threshold: f64,
    /// End of the scan (radius in units of `r₀`).
    pub r_max: f64,
    /// Per-degree results.
    pub modes: Vec<KernelMode>,
    /// No degree admits a decaying trajectory.
    pub no_kernel: bool,
    /// Every degree `ℓ ≥ 1` crossed the threshold.
    pub all_blow_up: bool,
    /// Every sign check held.
    pub sign_chain_ok: bool,
}

/// Initial data `(a(1), a'(1))` of the degree-`ℓ` kernel candidate normalized to a unit
/// forcing coefficient; `None` when the normalization is singular (`ℓ = 0` at `n = 3`).
pub fn kernel_initial_data(n: f64, l: usize) -> Option<(f64, f64)> {
    let ll = (l * (l + 1)) as f64;
    let den = n * (2.0 - ll) - 6.0;
    if den.abs() < 1e-12 {
        return None;
    }
    let alpha = n * n / den;
    Some((alpha, n * n * (n * ll - 2.0) / (den * 2.0 * (n - 2.0))))
}

/// Closed-form spherical kernel candidate with `a'(1) = c` and its derivative, in units
/// where the boundary sits at `r = 1`:
/// `a = −c(−2 + n + 6r − 3nr − 2nr² + n²r²)/(r(nr − 2))`.
pub fn spherical_kernel_profile(n: f64, c: f64, r: f64) -> (f64, f64) {
    let p = -2.0 + n + 6.0 * r - 3.0 * n * r - 2.0 * n * r * r + n * n * r * r;
    let dp = 6.0 - 3.0 * n - 4.0 * n * r + 2.0 * n * n * r;
    let q = r * (n * r - 2.0);
    let dq = 2.0 * n * r - 2.0;
    (-c * p / q, -c * (dp * q - p * dq) / (q * q))
}

/// Closed-form spherical auxiliary profile `g̃₀ = −n(r − 1)/(2(r − 2/n))`.
pub fn spherical_auxiliary_profile(n: f64, r: f64) -> f64 {
    -n * (r - 1.0) / (2.0 * (r - 2.0 / n))
}

/// `r(r−2/n)a'' + 2(r−1/n)a' − (4/(n²r(r−2/n)) + ℓ(ℓ+1))a = σ/(r(r−2/n))` written in
/// `t = ln r` for the state `(a, da/dt)`.
struct ScaledModeOde {
    n: f64,
    ll: f64,
    source: f64,
}

type State2 = ode_solvers::Vector2<f64>;

impl System<f64, State2> for ScaledModeOde {
    fn system(&self, t: f64, y: &State2, dy: &mut State2) {
        let r = t.exp();
        let e = r * (r - 2.0 / self.n);
        let pot = 4.0 / (self.n * self.n * e) + self.ll;
        let a_r = y[1] / r;
        let a_rr = (self.source / e + pot * y[0] - 2.0 * (r - 1.0 / self.n) * a_r) / e;
        dy[0] = y[1];
        dy[1] = r * r * a_rr + y[1];
    }
}

/// Integrates the scaled mode equation on `[1, r_max]`, returning `(r, a, a')` at
/// log-spaced output radii.
fn integrate_scaled(n: f64, l: usize, source: f64, a0: f64, da0: f64, r_max: f64, samples: usize) -> Result<Vec<(f64, f64, f64)>> {
    let ode = ScaledModeOde { n, ll: (l * (l + 1)) as f64, source };
    let dt = r_max.ln() / samples as f64;
    let out = dense_samples(ode, 0.0, dt, samples, State2::new(a0, da0), 1e-12, 1e-14)
        .map_err(|e| Error::Convergence(format!("kernel integration (ℓ={l}): {e}")))?;
    Ok(out
        .into_iter()
        .map(|(t, y)| {
            let r = t.exp();
            (r, y[0], y[1] / r)
        })
        .collect())
}

/// Integrates every kernel candidate of degree `≤ l_max` outward from the boundary
/// (scaled to `r = 1`) and classifies it, together with the sign checks of the
/// auxiliary profiles used in the uniqueness argument.
pub fn kernel_scan(n: f64, l_max: usize, threshold: f64, r_max: f64) -> Result<KernelScanReport> {
    if !(n > 2.0) || !(threshold > 0.0) || !(r_max > 1.0) {
        return Err(Error::Config(format!("kernel scan needs n > 2, threshold > 0, r_max > 1 (got {n}, {threshold}, {r_max})")));
    }
    const SAMPLES: usize = 600;
    let modes = (0..=l_max)
        .into_par_iter()
        .map(|l| -> Result<KernelMode> {
            let aux = integrate_scaled(n, l, 1.0, 0.0, -n * n / (2.0 * (n - 2.0)), r_max, SAMPLES)?;
            let mut margin = aux.iter().skip(1).map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            if l == 0 {
                let c = 1.0;
                let (a0, da0) = spherical_kernel_profile(n, c, 1.0);
                let src = -2.0 * c * (n - 2.0) * (n - 3.0) / (n * n);
                let traj = integrate_scaled(n, 0, src, a0, da0, r_max, SAMPLES)?;
                let mut err = 0.0_f64;
                for &(r, a, _) in &traj {
                    let exact = spherical_kernel_profile(n, c, r).0;
                    err = err.max((a - exact).abs() / exact.abs().max(1.0));
                }
                for &(r, g, _) in &aux {
                    let exact = spherical_auxiliary_profile(n, r);
                    err = err.max((g - exact).abs() / exact.abs().max(1.0));
                }
                let limit = -c * (n * n - 2.0 * n) / n;
                let &(r_end, a_end, _) = traj.last().expect("integration output");
                let verdict = if limit.abs() > 1e-12 { KernelVerdict::NonDecaying } else { KernelVerdict::Decaying };
                let r_threshold = traj.iter().find(|p| p.1.abs() > threshold).map(|p| p.0);
                return Ok(KernelMode {
                    l,
                    alpha: a0,
                    beta: da0,
                    verdict: if r_threshold.is_some() { KernelVerdict::BlowUp } else { verdict },
                    r_threshold,
                    r_end,
                    a_end,
                    growth_coefficient: a_end,
                    sign_chain: margin < 0.0,
                    sign_margin: margin,
                    closed_form_error: Some(err),
                    limit: Some(limit),
                });
            }
            let (alpha, beta) = kernel_initial_data(n, l).expect("nonsingular for ℓ ≥ 1");
            let traj = integrate_scaled(n, l, 1.0, alpha, beta, r_max, SAMPLES)?;
            let f = integrate_scaled(n, l, -4.0 * alpha / (n * n), alpha, 0.0, r_max, SAMPLES)?;
            for p in f.iter().skip(1) {
                margin = margin.max(p.1).max(p.2);
            }
            let r_threshold = traj.iter().find(|p| p.1.abs() > threshold).map(|p| p.0);
            let &(r_end, a_end, _) = traj.last().expect("integration output");
            let growth = a_end / r_end.powi(l as i32);
            // A decaying trajectory would have a vanishing growth coefficient relative to
            // its boundary size.
            let verdict = if r_threshold.is_some() {
                KernelVerdict::BlowUp
            } else if growth.abs() > 1e-6 * alpha.abs().max(beta.abs()) {
                KernelVerdict::NonDecaying
            } else {
                KernelVerdict::Decaying
            };
            Ok(KernelMode {
                l,
                alpha,
                beta,
                verdict,
                r_threshold,
                r_end,
                a_end,
                growth_coefficient: growth,
                sign_chain: margin < 0.0,
                sign_margin: margin,
                closed_form_error: None,
                limit: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let no_kernel = modes.iter().all(|m| m.verdict != KernelVerdict::Decaying);
    let all_blow_up = modes.iter().filter(|m| m.l >= 1).all(|m| m.verdict == KernelVerdict::BlowUp);
    let sign_chain_ok = modes.iter().all(|m| m.sign_chain);
    Ok(KernelScanReport { n, l_max, threshold, r_max, modes, no_kernel, all_blow_up, sign_chain_ok })
}
