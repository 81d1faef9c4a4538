use std::hint::black_box;
use std::sync::Arc;

use cellshock::{integrate, solve_profile, C64, CoupledBurgers, EvansFunction, ScalarBurgers, SimConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn profiles(c: &mut Criterion) {
    let scalar = ScalarBurgers { c: 0.4, d: 0.7 };
    c.bench_function("profile/burgers", |b| b.iter(|| solve_profile(&scalar, black_box(0.0), 20.0, 2000).unwrap()));
    let tuned = CoupledBurgers::tuned();
    c.bench_function("profile/coupled", |b| b.iter(|| solve_profile(&tuned, black_box(0.1), 10.0, 4000).unwrap()));
}

fn evans(c: &mut Criterion) {
    let sys = Arc::new(CoupledBurgers::tuned());
    let profile = Arc::new(solve_profile(sys.as_ref(), 0.1, 10.0, 4000).unwrap());
    let d = EvansFunction::new(sys, profile).unwrap();
    c.bench_function("evans/coupled", |b| b.iter(|| d.evans(black_box(0.3), black_box(C64::new(0.01, -6.0))).unwrap()));
}

fn simulate(c: &mut Criterion) {
    let sys = ScalarBurgers { c: 0.4, d: 0.7 };
    let profile = solve_profile(&sys, 0.0, 20.0, 2000).unwrap();
    let cfg = SimConfig { half_length: Some(20.0), n1: 401, n2: 16, t_final: 1.0, output_every: 0.5, ..SimConfig::default() };
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    group.bench_function("burgers_unit_time", |b| b.iter(|| integrate(&sys, &profile, black_box(&cfg)).unwrap()));
    group.finish();
}

criterion_group!(benches, profiles, evans, simulate);
criterion_main!(benches);
