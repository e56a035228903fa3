use std::hint::black_box;

use compclust::intensity::IntensityField;
use compclust::kcross::{kcross_inhom_renormalized, r_grid};
use compclust::sampler2::{build_weight_table, hungarian_mode, mh_step2, Chain2, ProposalKind, WeightTable};
use compclust::synth::simulate_model;
use compclust::{BipartiteMatching, ModelParams, ObservationWindow, PointPattern, UniformDensity};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pattern(lambda: f64, side: f64) -> PointPattern {
    let w = ObservationWindow::square(side).unwrap();
    let params = ModelParams::new(1.0, vec![0.5, 0.5], lambda).unwrap();
    let g = UniformDensity::new(w.clone());
    simulate_model(&params, &g, &w, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().pattern
}

fn table(x: &PointPattern) -> WeightTable {
    let w = x.window().clone();
    let params = ModelParams::new(1.0, vec![0.5, 0.5], 400.0).unwrap();
    build_weight_table(x, &params, &UniformDensity::new(w), Some(6.0)).unwrap()
}

fn mh_step(c: &mut Criterion) {
    let x = pattern(400.0, 40.0);
    let t = table(&x);
    let mut group = c.benchmark_group("mh_step2");
    for (name, kind) in [
        ("p1", ProposalKind::P1 { delta: 1e-3 }),
        ("p2", ProposalKind::P2),
        ("p3", ProposalKind::P3),
        ("p4", ProposalKind::P4),
    ] {
        let mut chain = Chain2::new(&t, kind, BipartiteMatching::empty(t.n_red(), t.n_blue())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        chain.run(10_000, &mut rng);
        group.bench_function(name, |b| b.iter(|| black_box(mh_step2(&mut chain, &mut rng))));
    }
    group.finish();
}

fn hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian_mode");
    for lambda in [100.0, 400.0] {
        let x = pattern(lambda, 40.0);
        let t = table(&x);
        group.bench_with_input(BenchmarkId::from_parameter(t.n_red()), &t, |b, t| b.iter(|| hungarian_mode(black_box(t))));
    }
    group.finish();
}

fn kcross(c: &mut Criterion) {
    let x = pattern(400.0, 40.0);
    let n = x.counts_by_mark();
    let fields: Vec<IntensityField> = n
        .iter()
        .map(|&c| IntensityField::constant(x.window(), c as f64 / x.window().area(), 0.5).unwrap())
        .collect();
    let r = r_grid(10.0, 256);
    c.bench_function("kcross_inhom", |b| b.iter(|| kcross_inhom_renormalized(black_box(&x), &fields, &r).unwrap()));
}

criterion_group!(benches, mh_step, hungarian, kcross);
criterion_main!(benches);
