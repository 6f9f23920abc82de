use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gpm_bench::{filled_bank, low_rank_matrix, pixel_batch, pmnist_mlp, random_matrix, small_conv};
use gpm_core::gpm::project_gradients;
use gpm_core::linalg::{orthonormalize_columns, svd};
use gpm_core::nn::{im2col, ConvGeometry, Target};
use gpm_core::Shape;

fn bench_svd(c: &mut Criterion) {
    let mut group = c.benchmark_group("svd");
    group.sample_size(10);
    for (rows, cols, rank) in [(100, 300, 100), (784, 300, 300), (784, 300, 40)] {
        let a = low_rank_matrix(rows, cols, rank, 7);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{rows}x{cols}_rank{rank}")), &a, |b, a| {
            b.iter(|| svd(black_box(a)).unwrap())
        });
    }
    group.finish();
}

fn bench_matmul(c: &mut Criterion) {
    let a = random_matrix(300, 784, 1);
    let b = random_matrix(784, 100, 2);
    c.bench_function("matmul_300x784x100", |bench| bench.iter(|| black_box(&a).matmul(black_box(&b))));
}

fn bench_qr(c: &mut Criterion) {
    let a = random_matrix(784, 200, 3);
    c.bench_function("orthonormalize_784x200", |b| b.iter(|| orthonormalize_columns(black_box(&a))));
}

fn bench_im2col(c: &mut Criterion) {
    let mut group = c.benchmark_group("im2col");
    for (channels, side) in [(1, 28), (16, 14), (32, 7)] {
        let g = ConvGeometry::new(Shape::new(channels, side, side), 16, 3, 1, 1).unwrap();
        let input = random_matrix(1, channels * side * side, 4).into_vec();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{channels}x{side}x{side}_k3")), &input, |b, input| {
            b.iter(|| im2col(black_box(input), &g).unwrap())
        });
    }
    group.finish();
}

fn bench_projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("project_gradients");
    for (name, net, classes) in [("mlp", pmnist_mlp(), 10), ("small_conv", small_conv(), 2)] {
        let x = pixel_batch(10, net.input_shape().len(), 5);
        let labels: Vec<usize> = (0..10).map(|i| i % classes).collect();
        let (logits, cache) = net.forward(&x, 0).unwrap();
        let (_, grads) = net.backward(&logits, Target::Classes(&labels), &cache).unwrap();
        let bank = filled_bank(&net, 0.5);
        group.bench_function(name, |b| b.iter(|| project_gradients(black_box(&grads), &bank).unwrap()));
    }
    group.finish();
}

criterion_group!(kernels, bench_svd, bench_matmul, bench_qr, bench_im2col, bench_projection);
criterion_main!(kernels);
