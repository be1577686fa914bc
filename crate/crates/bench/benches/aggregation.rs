use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedomg::aggregator::{aggregate_round, AggregationConfig};
use fedomg::oracle::random_instance;
use fedomg::simplex::project_to_simplex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("project_to_simplex");
    for n in [10, 100, 1000] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &v, |b, v| {
            b.iter(|| project_to_simplex(black_box(v)).unwrap())
        });
    }
    group.finish();
}

fn aggregation(c: &mut Criterion) {
    let mut group = c.benchmark_group("aggregate_round");
    let cfg = AggregationConfig::default();
    for (u, m) in [(10, 1024), (10, 65_536), (100, 1024)] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grads = random_instance(&mut rng, u, m);
        group.bench_with_input(BenchmarkId::new(format!("U{u}"), m), &grads, |b, g| {
            b.iter(|| aggregate_round(black_box(g), &cfg, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, projection, aggregation);
criterion_main!(benches);
