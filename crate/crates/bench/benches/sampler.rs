//! Benchmarks of the hot paths: the mollified control evaluation, a single
//! controlled trajectory, and a small batch estimate.

use criterion::{criterion_group, criterion_main, Criterion};
use exitprob::rng::CounterRng;
use exitprob::sampler::{simulate_trajectory, SimConfig};
use exitprob::subsolution::{MRule, SchemeKind, SchemeParams, SubsolutionSet};
use exitprob::{ExitDomain, ProcessModel};
use std::hint::black_box;

fn linear_set(kind: SchemeKind, eps: f64, horizon: f64) -> SubsolutionSet {
    let model = ProcessModel::linear(1.0, 1.0).unwrap();
    let domain = ExitDomain::two_sided(&model, -1.0, 1.0).unwrap();
    let params = SchemeParams::new(1.0, 1.0, eps, horizon, 1.0, MRule::Fixed(4.0), None).unwrap();
    SubsolutionSet::new(kind, model, domain, params).unwrap()
}

fn bench_control(c: &mut Criterion) {
    let set = linear_set(SchemeKind::MollifiedLinear, 0.13, 5.0);
    let mut points = Vec::new();
    for i in 0..64 {
        let t = 4.9 * (i as f64) / 63.0;
        let x = -0.9 + 1.8 * ((i * 7 % 64) as f64) / 63.0;
        points.push((t, x));
    }
    c.bench_function("mollified control, 64 points", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for &(t, x) in &points {
                acc += set.control(black_box(t), black_box(x));
            }
            black_box(acc)
        })
    });
}

fn bench_trajectory(c: &mut Criterion) {
    let set = linear_set(SchemeKind::MollifiedLinear, 0.13, 5.0);
    let config = SimConfig {
        eps: 0.13,
        horizon: 5.0,
        dt: 1e-3,
        n: 1,
        seed: 7,
        cell: 0,
    };
    let mut traj = 0u64;
    c.bench_function("one controlled trajectory (T=5, dt=1e-3)", |b| {
        b.iter(|| {
            traj += 1;
            let mut rng = CounterRng::for_trajectory(config.seed, config.cell, traj);
            black_box(simulate_trajectory(&set, &config, &mut rng).unwrap())
        })
    });
}

fn bench_quasipotential_control(c: &mut Criterion) {
    let set = linear_set(SchemeKind::QuasipotentialOnly, 0.13, 5.0);
    c.bench_function("quasipotential control, 64 points", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for i in 0..64 {
                let x = -0.9 + 1.8 * (i as f64) / 63.0;
                acc += set.control(black_box(1.0), black_box(x));
            }
            black_box(acc)
        })
    });
}

criterion_group!(
    benches,
    bench_control,
    bench_trajectory,
    bench_quasipotential_control
);
criterion_main!(benches);
