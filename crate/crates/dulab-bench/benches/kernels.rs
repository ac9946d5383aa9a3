use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dulab::circuits::build_floquet;
use dulab::geometry::{HalfInt, SubsystemSpec};
use dulab::opent::DoubledState;
use dulab::replica::build_t2;
use dulab::scrambling::{single_site_probe, two_point_lightcone};
use dulab::seed::sample_rng;
use dulab::C64;

fn gates(c: &mut Criterion) {
    let u = build_floquet(0.5, 10, &mut sample_rng(1, 0)).unwrap();
    c.bench_function("floquet power rows L=10 t=1", |b| b.iter(|| black_box(u.power_rows(1).unwrap())));
}

fn purity(c: &mut Criterion) {
    let u = build_floquet(0.5, 8, &mut sample_rng(1, 0)).unwrap();
    let s = DoubledState::new(&u, 2).unwrap();
    let (x, y) = (SubsystemSpec::input([0, 1, 2]), SubsystemSpec::output([3, 4, 5]));
    c.bench_function("purity L=8 |A|=6", |b| b.iter(|| black_box(s.purity(&[&x, &y]).unwrap())));
}

fn transfer(c: &mut Criterion) {
    let t2 = build_t2(0.5, HalfInt::int(-1)).unwrap();
    let v: Vec<C64> = (0..t2.reduced_dim()).map(|k| C64::new(1.0 / (k + 1) as f64, 0.0)).collect();
    c.bench_function("T2(-1) reduced apply", |b| b.iter(|| black_box(t2.apply_reduced(&v))));
    c.bench_function("T2(-2) build", |b| b.iter(|| black_box(build_t2(0.5, HalfInt::int(-2)).unwrap())));
}

fn scrambling(c: &mut Criterion) {
    let u = build_floquet(0.5, 12, &mut sample_rng(1, 0)).unwrap();
    let (x, y) = (SubsystemSpec::input([0]), SubsystemSpec::output([6]));
    c.bench_function("light-cone two-point L=12 t=3", |b| {
        b.iter(|| black_box(two_point_lightcone(&u, 3, &x, &y).unwrap()))
    });
    let small = build_floquet(0.5, 8, &mut sample_rng(1, 0)).unwrap();
    c.bench_function("single-site probe L=8 t<=3", |b| b.iter(|| black_box(single_site_probe(&small, 0, 3).unwrap())));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = gates, purity, transfer, scrambling
}
criterion_main!(benches);
