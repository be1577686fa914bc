use criterion::{criterion_group, criterion_main, Criterion};
use fedomg::data::{gen_blobs, BlobsConfig};
use fedomg::models::{init_params, loss_and_grad, sgd_epoch, ModelSpec};
use std::hint::black_box;

fn mlp(c: &mut Criterion) {
    let data = gen_blobs(&BlobsConfig::new(4, 250, 3)).unwrap();
    let spec = ModelSpec::mlp1(2, 32, 4);
    let theta = init_params(&spec, 0);
    c.bench_function("mlp1_loss_and_grad_1000", |b| {
        b.iter(|| loss_and_grad(&spec, black_box(&theta), &data).unwrap())
    });
    c.bench_function("mlp1_sgd_epoch_1000_bs32", |b| {
        b.iter(|| sgd_epoch(&spec, black_box(&theta), &data, 0.05, 32, 7).unwrap())
    });
}

criterion_group!(benches, mlp);
criterion_main!(benches);
