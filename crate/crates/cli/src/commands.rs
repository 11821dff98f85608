//! Subcommand implementations. Each returns its JSON result and writes its profiles into
//! the output directory; nothing is written when a command fails.

use crate::config::RunConfig;
use crate::output::OutDir;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use staticvac::ckvf::{conformal_killing_residual, conformal_lie, extend_ck};
use staticvac::elliptic::{verify_mode_estimates, ModeOperator, ModeSolver};
use staticvac::legendre::{legendre_p, legendre_q, ode_relative_residual, p_scaled, q_scaled, signed_wronskian, verify_uniform_bounds, DEFAULT_TOL};
use staticvac::linearized::{kernel_scan, KernelVerdict};
use staticvac::nonlinear::{assemble_physical, perturbed_data, solve as solve_nonlinear, SolveOptions};
use staticvac::spaces::{bump, hardy_check, hardy_inner_radius, weighted_c_norm};
use staticvac::sphharm::{mode_index, n_modes, CkKind};
use staticvac::{Error, FoliatedMetric, RadialScalar, Result, ScalarField, SphGrid};

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Invariant(format!("report serialization failed: {e}")))
}

/// Solves the background Dirichlet problem mode by mode.
///
/// * manufactured: a random decaying solution with known forcing; reports the relative
///   weighted residual and error,
/// * homogeneous mode `(ℓ, m)`: unit boundary value in one mode and no forcing; the profile
///   is compared with `Q_ℓ(z)/Q_ℓ(z₀)`,
/// * otherwise: zero forcing with boundary values given by the perturbation amplitudes.
pub fn elliptic(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let bg = cfg.background()?;
    let grid = cfg.grid(&bg)?;
    let solver = ModeSolver::new(bg, grid.clone())?;
    let lm = cfg.l_max;
    let n_r = grid.len();
    let w = cfg.delta - 2.0;
    let norm = |s: &RadialScalar, d: f64| weighted_c_norm(&grid, s, 0, 0, d).map(|r| r.value);
    let selected = |l: usize, m: i64| cfg.elliptic.mode.is_none_or(|sel| sel == (l, m));

    let (f, h, exact) = if cfg.elliptic.manufactured {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let coeffs: Vec<(f64, f64)> = (0..n_modes(lm)).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let r0 = grid.r0;
        let exact = RadialScalar::from_fn(&grid, lm, |r, l, m| {
            if !selected(l, m) {
                return (0.0, 0.0, 0.0);
            }
            let (c, d) = coeffs[mode_index(l, m)];
            let (p, q) = ((l + 1) as f64, (l + 2) as f64);
            let x = r0 / r;
            let v = c * x.powf(p) + d * x.powf(q);
            let dv = -(c * p * x.powf(p) + d * q * x.powf(q)) / r;
            let d2v = (c * p * (p + 1.0) * x.powf(p) + d * q * (q + 1.0) * x.powf(q)) / (r * r);
            (v, dv, d2v)
        });
        let f = solver.apply_op(ModeOperator::Laplacian, &exact);
        let h = exact.at(0);
        (f, h, Some(exact))
    } else {
        let mut h = ScalarField::zeros(lm);
        if cfg.elliptic.homogeneous {
            let (l, m) = cfg.elliptic.mode.expect("validated");
            h.c[mode_index(l, m)] = 1.0;
        } else {
            for p in cfg.perturbation.iter().filter(|p| selected(p.l, p.m)) {
                h.c[mode_index(p.l, p.m)] += p.amplitude;
            }
        }
        (RadialScalar::zeros(n_r, lm), h, None)
    };

    let u = solver.solve_dirichlet(&f, &h)?;
    let residual = solver.apply_op(ModeOperator::Laplacian, &u).lin_comb(1.0, &f, -1.0);
    let f_norm = norm(&f, w)?;
    let h_norm = h.c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let u_norm = norm(&u, cfg.delta)?;
    let residual_abs = norm(&residual, w)?;
    let boundary_error = (0..n_modes(lm)).map(|k| (u.val[(0, k)] - h.c[k]).abs()).fold(0.0, f64::max);
    let data_norm = f_norm + h_norm;
    let mut result = json!({
        "mode": cfg.elliptic.mode,
        "manufactured": cfg.elliptic.manufactured,
        "homogeneous": cfg.elliptic.homogeneous,
        "residual_Cnorm": if f_norm > 0.0 { residual_abs / f_norm } else { residual_abs },
        "residual_Cnorm_absolute": residual_abs,
        "boundary_error": boundary_error,
        "solution_Cnorm": u_norm,
        "data_norm": data_norm,
        "estimate_ratio": if data_norm > 0.0 { u_norm / data_norm } else { 0.0 },
    });
    if let Some(ex) = &exact {
        let err = norm(&u.lin_comb(1.0, ex, -1.0), cfg.delta)?;
        let scale = norm(ex, cfg.delta)?;
        result["error_Cnorm"] = json!(if scale > 0.0 { err / scale } else { err });
    }
    if cfg.elliptic.homogeneous {
        let (l, m) = cfg.elliptic.mode.expect("validated");
        let k = mode_index(l, m);
        let q0 = legendre_q(l, bg.z_of_r(grid.r0), DEFAULT_TOL)?.value;
        let mut dev = 0.0_f64;
        for (i, &r) in grid.r.iter().enumerate() {
            let q = legendre_q(l, bg.z_of_r(r), DEFAULT_TOL)?.value / q0;
            dev = dev.max((u.val[(i, k)] - q).abs());
        }
        result["q_table_deviation"] = json!(dev);
    }
    out.write_profile("elliptic.csv", &grid.r, lm, |i, k| u.val[(i, k)])?;
    Ok(result)
}

/// Runs the nonlinear solver on Schwarzschild data plus the configured perturbations.
pub fn solve(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let bg = cfg.background()?;
    let grid = cfg.grid(&bg)?;
    let lm = cfg.l_max;
    let data = perturbed_data(&bg, lm, &cfg.perturbation)?;
    let opts = SolveOptions { tol: cfg.tol, max_iter: cfg.max_iter, trust_radius: cfg.trust_radius, delta: cfg.delta };
    let (state, report) = solve_nonlinear(&data, &bg, grid.clone(), lm, &opts)?;
    let sph = SphGrid::new(lm)?;
    let phys = assemble_physical(&state, &sph)?;
    let r = &grid.r;
    out.write_profile("potential.csv", r, lm, |i, k| state.u.val[(i, k)])?;
    out.write_profile("lapse.csv", r, lm, |i, k| phys.lapse[i].c[k])?;
    out.write_profile("metric_rr.csv", r, lm, |i, k| phys.radial[i].c[k])?;
    out.write_profile("metric_trace.csv", r, lm, |i, k| phys.metric[i].iso.c[k])?;
    out.write_profile("metric_tf_e.csv", r, lm, |i, k| phys.metric[i].tf.e.c[k])?;
    out.write_profile("metric_tf_b.csv", r, lm, |i, k| phys.metric[i].tf.b.c[k])?;
    let mut v = to_value(&report)?;
    v["converged"] = json!(report.converged);
    v["mass"] = json!(report.adm_mass);
    Ok(v)
}

/// Checks the Legendre identities and uniform bounds.
pub fn verify_legendre(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let lb = &cfg.legendre;
    let mut worst_ode = 0.0_f64;
    let mut worst_w = 0.0_f64;
    let mut rows = Vec::new();
    for ell in 0..=lb.ell_max {
        for &z in &lb.z {
            let l = ell as f64;
            let rp = ode_relative_residual(ell, z, p_scaled(ell, z)?, l);
            let rq = ode_relative_residual(ell, z, q_scaled(ell, z, DEFAULT_TOL)?, -(l + 1.0));
            let w = signed_wronskian(ell, z, DEFAULT_TOL)?;
            let wdev = (w.abs() - (2.0 * l + 1.0)).abs() / (2.0 * l + 1.0);
            worst_ode = worst_ode.max(rp).max(rq);
            worst_w = worst_w.max(wdev);
            rows.push(vec![ell.to_string(), format!("{z:e}"), format!("{rp:e}"), format!("{rq:e}"), format!("{w:e}")]);
        }
    }
    out.write_table("legendre.csv", &["l", "z", "ode_residual_p", "ode_residual_q", "wronskian"], &rows)?;
    let p2 = legendre_p(2, 2.0)?.value;
    let q0 = legendre_q(0, 3.0, DEFAULT_TOL)?.value;
    let r = cfg.n - 1.0;
    let zs: Vec<f64> = (0..40).map(|j| r * 10f64.powf(3.0 * j as f64 / 39.0)).collect();
    let bounds = verify_uniform_bounds(lb.ell_max.max(2), &zs, r)?;
    Ok(json!({
        "max_ode_residual": worst_ode,
        "max_wronskian_deviation": worst_w,
        "p2_at_2": p2,
        "p2_at_2_error": (p2 - 11.0 / 3.0).abs(),
        "q0_at_3": q0,
        "q0_at_3_error": (q0 - 0.5 * 2f64.ln()).abs(),
        "uniform_bounds": to_value(&bounds)?,
        "uniform_bounds_stable": bounds.all_stable(),
    }))
}

/// Samples the integral and supremum mode estimates with random data.
pub fn verify_estimates(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let bg = cfg.background()?;
    let grid = cfg.grid(&bg)?;
    let solver = ModeSolver::new(bg, grid)?;
    let rep = verify_mode_estimates(&solver, cfg.l_max, cfg.estimates.samples, cfg.delta, cfg.seed)?;
    let rows: Vec<Vec<String>> =
        rep.per_degree.iter().map(|d| vec![d.l.to_string(), format!("{:e}", d.h_ratio), format!("{:e}", d.c_ratio)]).collect();
    out.write_table("estimates.csv", &["l", "h_ratio", "c_ratio"], &rows)?;
    to_value(&rep)
}

/// Evaluates the weighted Hardy inequality on the background for compactly supported
/// test fields in several modes.
pub fn verify_hardy(cfg: &RunConfig, _out: &OutDir) -> Result<Value> {
    let bg = cfg.background()?;
    let grid = cfg.grid(&bg)?;
    let lm = cfg.l_max;
    let metric = FoliatedMetric::schwarzschild(&bg, grid.clone(), lm)?;
    let sph = SphGrid::new(lm)?;
    let r_adm = hardy_inner_radius(&metric, &sph)?;
    let (r_min, r_max) = (r_adm, (8.0 * r_adm).min(grid.r_cut));
    let (centre, width) = (0.5 * (r_min + r_max), 0.5 * (r_max - r_min));
    let tau = cfg.hardy.tau;
    let mut samples = Vec::new();
    for (l, m) in [(0usize, 0i64), (1, 1), (2, -1), (lm, 0)] {
        let field = move |r: f64| {
            let b = bump(r, centre, width);
            (ScalarField::single(lm, l, m, b[0]), ScalarField::single(lm, l, m, b[1]))
        };
        let rep = hardy_check(&metric, &sph, &field, tau, r_min, r_max)?;
        samples.push(json!({ "l": l, "m": m, "report": to_value(&rep)? }));
    }
    let ratio = samples.iter().map(|s| s["report"]["ratio"].as_f64().unwrap_or(f64::NAN)).fold(0.0, f64::max);
    Ok(json!({ "tau": tau, "r_min": r_min, "r_max": r_max, "ratio": ratio, "holds": ratio <= 1.0 + 1e-8, "samples": samples }))
}

fn verdict_name(v: KernelVerdict) -> &'static str {
    match v {
        KernelVerdict::BlowUp => "blowup",
        KernelVerdict::NonDecaying => "no-kernel",
        KernelVerdict::Decaying => "kernel",
    }
}

/// Integrates every kernel candidate outward and tabulates the verdicts.
pub fn kernel(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let rep = kernel_scan(cfg.n, cfg.l_max, cfg.kernel.threshold, cfg.kernel.r_max)?;
    let rows: Vec<Vec<String>> = rep
        .modes
        .iter()
        .map(|m| vec![m.l.to_string(), verdict_name(m.verdict).to_string(), format!("{:e}", m.a_end), m.sign_chain.to_string()])
        .collect();
    out.write_table("kernel.csv", &["l", "verdict", "a_end", "sign_chain"], &rows)?;
    let mut v = to_value(&rep)?;
    v["verdicts"] = json!(rep.modes.iter().map(|m| verdict_name(m.verdict)).collect::<Vec<_>>());
    Ok(v)
}

/// Generator indices for a basis name.
pub fn ck_indices(name: &str) -> Result<Vec<usize>> {
    // Real harmonics: Y₁,₋₁ ∝ y, Y₁₀ ∝ z, Y₁₁ ∝ x; index = 3·kind + m + 1.
    let axis = |a: &str| match a {
        "y" => Some(0),
        "z" => Some(1),
        "x" => Some(2),
        _ => None,
    };
    match name {
        "all" => Ok((0..6).collect()),
        _ => {
            let parsed = name
                .strip_prefix("rotation-")
                .and_then(axis)
                .or_else(|| name.strip_prefix("boost-").and_then(axis).map(|i| i + 3));
            parsed.map(|i| vec![i]).ok_or_else(|| Error::Config(format!("unknown conformal Killing generator '{name}'")))
        }
    }
}

/// Extends the selected conformal Killing generators and checks them on the background.
pub fn ckv(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let mut indices = Vec::new();
    for b in &cfg.ckv.basis {
        for i in ck_indices(b)? {
            if !indices.contains(&i) {
                indices.push(i);
            }
        }
    }
    let bg = cfg.background()?;
    let grid = cfg.grid(&bg)?;
    let metric = FoliatedMetric::schwarzschild(&bg, grid.clone(), 2)?;
    let sph = SphGrid::new(4)?;
    let (lo, hi) = (1e2 * bg.m0, 1e3 * bg.m0);
    let mut gens = Vec::new();
    let mut rows = Vec::new();
    for &i in &indices {
        let e = extend_ck(i, &bg, &grid)?;
        let leaves = conformal_lie(&metric, &sph, &e.vector_field(2))?;
        let residual = conformal_killing_residual(&leaves, f64::INFINITY);
        let f_zero = e.f.iter().all(|v| *v == 0.0);
        let h_one = e.h.iter().all(|v| *v == 1.0);
        let slope = if e.killing || grid.r_cut < hi { None } else { Some(e.growth_slope(lo, hi)?) };
        gens.push(json!({
            "index": i,
            "kind": match e.kind { CkKind::Rotation => "rotation", CkKind::Boost => "boost" },
            "killing": e.killing,
            "f_identically_zero": f_zero,
            "h_identically_one": h_one,
            "df_at_boundary": e.df[0],
            "growth_slope": slope,
            "first_integral_defect": e.first_integral_defect(),
            "ck_residual": residual,
        }));
        for (k, &r) in e.r.iter().enumerate() {
            rows.push(vec![i.to_string(), format!("{r:e}"), format!("{:e}", e.f[k]), format!("{:e}", e.df[k]), format!("{:e}", e.h[k]), format!("{:e}", e.dh[k])]);
        }
    }
    out.write_table("ckv.csv", &["index", "r", "f", "df", "h", "dh"], &rows)?;
    let max_res = gens.iter().map(|g| g["ck_residual"].as_f64().unwrap_or(f64::NAN)).fold(0.0, f64::max);
    Ok(json!({ "generators": gens, "max_ck_residual": max_res }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_names_map_to_indices() {
        assert_eq!(ck_indices("rotation-z").unwrap(), vec![1]);
        assert_eq!(ck_indices("boost-x").unwrap(), vec![5]);
        assert_eq!(ck_indices("all").unwrap().len(), 6);
        assert!(matches!(ck_indices("twist-z"), Err(Error::Config(_))));
    }
}
