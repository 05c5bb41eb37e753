//! Throughput of the data-parallel inner loops: path simulation and the 2-D
//! penalty march, on the default rayon pool versus a single-thread pool.
//!
//! With the `parallel` feature disabled the crate runs its sequential
//! fallback and only that variant is measured. Results are identical across
//! variants by construction; only wall time differs.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use stockloan::boundary1d::SolverOptions;
use stockloan::filter::simulate;
use stockloan::grid::Grid2D;
use stockloan::vi2d::solve_vi_2d;
use stockloan::ModelParams;

fn params() -> ModelParams {
    ModelParams::new(0.15, 0.01, 0.08, 0.03, 100.0, 1.0).unwrap()
}

fn run_simulate() -> f64 {
    let p = params();
    let bundle = simulate(&p, 100.0, 0.5, 0.005, 200, 4_000, 42).unwrap();
    bundle.x(bundle.n_paths() - 1, bundle.n_nodes() - 1)
}

fn run_solve_2d() -> f64 {
    let p = params();
    let grid = Grid2D::new(2.0, 800.0, 128, 41, 1.0, 96, 100.0).unwrap();
    let s = solve_vi_2d(&p, &grid, 0.0, &SolverOptions::default()).unwrap();
    s.value(0, 20, 64)
}

#[cfg(feature = "parallel")]
fn single_thread_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool")
}

fn bench_simulate(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate-4k-paths");
    group.bench_function("default-pool", |b| b.iter(|| black_box(run_simulate())));
    #[cfg(feature = "parallel")]
    {
        let pool = single_thread_pool();
        group.bench_function("single-thread", |b| {
            b.iter(|| pool.install(|| black_box(run_simulate())))
        });
    }
    group.finish();
}

fn bench_solve_2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve2d-128x41x96");
    group.sample_size(10);
    group.bench_function("default-pool", |b| b.iter(|| black_box(run_solve_2d())));
    #[cfg(feature = "parallel")]
    {
        let pool = single_thread_pool();
        group.bench_function("single-thread", |b| {
            b.iter(|| pool.install(|| black_box(run_solve_2d())))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_simulate, bench_solve_2d);
criterion_main!(benches);
