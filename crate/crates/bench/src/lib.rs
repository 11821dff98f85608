//! Benchmark helpers: standard problem instances shared by the benches.

use staticvac::nonlinear::{perturbed_data, NonlinearState};
use staticvac::{Background, BartnikData, Perturbation, PerturbationTarget, RadialGrid};

/// The `n = 3`, `m₀ = 1` background with a default-cut grid of `n_r` nodes.
pub fn background_grid(n_r: usize) -> (Background, RadialGrid) {
    let bg = Background::new(1.0, 3.0).expect("valid background");
    let grid = RadialGrid::with_default_cut(&bg, n_r).expect("valid grid");
    (bg, grid)
}

/// Schwarzschild boundary data with a small quadrupole metric perturbation.
pub fn quadrupole_data(bg: &Background, l_max: usize, amplitude: f64) -> BartnikData {
    let p = Perturbation { l: 2, m: 0, amplitude, target: PerturbationTarget::Metric };
    perturbed_data(bg, l_max, &[p]).expect("perturbation inside the band")
}

/// The Schwarzschild state on the grid.
pub fn background_state(bg: &Background, grid: &RadialGrid, l_max: usize) -> NonlinearState {
    NonlinearState::background(bg, grid.clone(), l_max).expect("valid state")
}
