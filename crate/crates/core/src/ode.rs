//! Dense sampling of explicit Runge–Kutta solutions.

use crate::error::{Error, Result};
use nalgebra::{allocator::Allocator, DefaultAllocator, Dim, OVector};
use ode_solvers::{Dopri5, System};

/// Integrates `y' = F(t, y)` from `t0` with Dopri5 and returns the solution at
/// `t0 + k·dt`, `k = 0..=samples`.
///
/// The integration runs one output interval past the last requested time and that extra
/// sample is discarded: the integrator's final dense-output sample may be extrapolated
/// from a step that has not reached the endpoint.
pub(crate) fn dense_samples<D, F>(
    f: F,
    t0: f64,
    dt: f64,
    samples: usize,
    y0: OVector<f64, D>,
    rtol: f64,
    atol: f64,
) -> Result<Vec<(f64, OVector<f64, D>)>>
where
    D: Dim,
    F: System<f64, OVector<f64, D>>,
    OVector<f64, D>: std::ops::Mul<f64, Output = OVector<f64, D>>,
    DefaultAllocator: Allocator<D>,
{
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("output spacing must be positive, got {dt}")));
    }
    let t_end = t0 + (samples + 1) as f64 * dt;
    let mut solver = Dopri5::new(f, t0, t_end, dt, y0, rtol, atol);
    solver.integrate().map_err(|e| Error::Convergence(e.to_string()))?;
    let (xs, ys) = solver.results().get();
    if xs.len() < samples + 1 {
        return Err(Error::Convergence(format!("integrator returned {} of {} samples", xs.len(), samples + 1)));
    }
    Ok(xs.iter().zip(ys).take(samples + 1).map(|(t, y)| (*t, y.clone())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ode_solvers::Vector2;

    struct Rotation;

    impl System<f64, Vector2<f64>> for Rotation {
        fn system(&self, _t: f64, y: &Vector2<f64>, dy: &mut Vector2<f64>) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn samples_match_exact_solution_including_the_last() {
        for samples in [1, 2, 7, 50] {
            let dt = 3.0 / samples as f64;
            let out = dense_samples(Rotation, 0.5, dt, samples, Vector2::new(0.5f64.sin(), 0.5f64.cos()), 1e-12, 1e-14).unwrap();
            assert_eq!(out.len(), samples + 1);
            for (k, (t, y)) in out.iter().enumerate() {
                assert!((t - (0.5 + k as f64 * dt)).abs() < 1e-12);
                assert!((y[0] - t.sin()).abs() < 1e-10 && (y[1] - t.cos()).abs() < 1e-10, "samples={samples} k={k}");
            }
        }
    }

    #[test]
    fn rejects_non_positive_spacing() {
        assert!(dense_samples(Rotation, 0.0, 0.0, 3, Vector2::new(0.0, 1.0), 1e-10, 1e-12).is_err());
    }
}
