use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use staticvac::elliptic::ModeSolver;
use staticvac::legendre::{legendre_q, DEFAULT_TOL};
use staticvac::linearized::LinearizedData;
use staticvac::nonlinear::{residual, solve, SolveOptions};
use staticvac::spaces::DEFAULT_DELTA;
use staticvac::sphharm::mode_index;
use staticvac::{LinearizedSolver, RadialScalar, ScalarField, SphGrid};
use staticvac_bench::{background_grid, background_state, quadrupole_data};

fn legendre(c: &mut Criterion) {
    let mut g = c.benchmark_group("legendre_q");
    for ell in [1usize, 16, 50] {
        g.bench_with_input(BenchmarkId::from_parameter(ell), &ell, |b, &ell| {
            b.iter(|| legendre_q(black_box(ell), black_box(1.7), DEFAULT_TOL).unwrap())
        });
    }
    g.finish();
}

fn dirichlet(c: &mut Criterion) {
    let mut g = c.benchmark_group("dirichlet_solve");
    g.sample_size(20);
    for l_max in [4usize, 16, 32] {
        let (bg, grid) = background_grid(128);
        let solver = ModeSolver::new(bg, grid.clone()).unwrap();
        let f = RadialScalar::zeros(grid.len(), l_max);
        let mut h = ScalarField::zeros(l_max);
        h.c.iter_mut().enumerate().for_each(|(k, v)| *v = 1.0 / (1 + k) as f64);
        g.bench_with_input(BenchmarkId::from_parameter(l_max), &l_max, |b, _| b.iter(|| solver.solve_dirichlet(&f, &h).unwrap()));
    }
    g.finish();
}

fn linearized(c: &mut Criterion) {
    let mut g = c.benchmark_group("linearized_solve");
    g.sample_size(10);
    for l_max in [4usize, 8] {
        let (bg, grid) = background_grid(96);
        let solver = LinearizedSolver::new(bg, grid.clone(), l_max).unwrap();
        let mut data = LinearizedData::zeros(grid.len(), l_max);
        data.h.c[0] = 1e-3;
        data.g.iso.c[mode_index(2, 0)] = 1e-3;
        g.bench_with_input(BenchmarkId::from_parameter(l_max), &l_max, |b, _| b.iter(|| solver.solve(&data).unwrap()));
    }
    g.finish();
}

fn nonlinear(c: &mut Criterion) {
    let mut g = c.benchmark_group("nonlinear");
    g.sample_size(10);
    let l_max = 4;
    let (bg, grid) = background_grid(96);
    let data = quadrupole_data(&bg, l_max, 1e-4);
    let sph = SphGrid::new(l_max).unwrap();
    let state = background_state(&bg, &grid, l_max);
    g.bench_function("residual", |b| b.iter(|| residual(&data, &state, &sph, l_max, DEFAULT_DELTA).unwrap()));
    g.bench_function("solve_quadrupole", |b| b.iter(|| solve(&data, &bg, grid.clone(), l_max, &SolveOptions::default()).unwrap()));
    g.finish();
}

criterion_group!(benches, legendre, dirichlet, linearized, nonlinear);
criterion_main!(benches);
