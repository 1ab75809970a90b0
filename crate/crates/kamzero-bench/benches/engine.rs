use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use kamzero::kam::kam_step;
use kamzero::matrix::{op_norm, solve_dense};
use kamzero::{solve_homological, RunOptions, C64};
use kamzero_bench::{problem, step_params, test_matrix};

fn bracket(c: &mut Criterion) {
    let p = problem();
    let r = &p.r0;
    let low = r.split_low_high().0;
    c.bench_function("bracket R0 x R0low", |b| b.iter(|| black_box(r.bracket(&low).unwrap())));
}

fn homological(c: &mut Criterion) {
    let p = problem();
    let low = p.r0.split_low_high().0;
    let params = step_params();
    c.bench_function("homological solve", |b| b.iter(|| black_box(solve_homological(&p.n0, &low, &params).unwrap())));
}

fn step(c: &mut Criterion) {
    let p = problem();
    let params = step_params();
    let opts = RunOptions::default();
    let mut g = c.benchmark_group("kam");
    g.sample_size(10);
    g.bench_function("kam_step m=1", |b| b.iter(|| black_box(kam_step(&p.n0, &p.r0, &params, &opts).unwrap())));
    g.finish();
}

fn dense(c: &mut Criterion) {
    for n in [6, 24] {
        let m = test_matrix(n);
        let rhs = vec![C64::new(1.0, 0.0); n];
        c.bench_function(&format!("op_norm {n}x{n}"), |b| b.iter(|| black_box(op_norm(&m))));
        c.bench_function(&format!("solve {n}x{n}"), |b| b.iter(|| black_box(solve_dense(&m, &rhs).unwrap())));
    }
}

criterion_group!(benches, bracket, homological, step, dense);
criterion_main!(benches);
