use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use eigenprint_bench::{rand_image, rand_tensor, rand_vec};
use eigenprint_core::gradient::{gradient_sobel, mask_convolve, Boundary, SOBEL_X};
use eigenprint_core::nn::layers::{conv_backward, conv_forward, maxpool_forward, pad_batch};
use eigenprint_core::svd::{gram, jacobi_eigh, svd_via_gram, FeatureMatrix, JACOBI_TOL};

fn bench_gradient(c: &mut Criterion) {
    let img = rand_image(266, 266, 1);
    c.bench_function("sobel_gradient_266", |b| b.iter(|| gradient_sobel(&img).unwrap()));
    c.bench_function("mask_convolve_266", |b| {
        b.iter(|| mask_convolve(&img, &SOBEL_X, Boundary::Replicate))
    });
}

fn bench_conv(c: &mut Criterion) {
    // second desk-scale conv block: 32 -> 32 channels, 5x5 kernel, 32x32 maps
    let input = rand_tensor(&[8, 32, 32, 32], 2);
    let weights = rand_tensor(&[32, 32, 5, 5], 3);
    let bias = vec![0.0; 32];
    c.bench_function("conv2_forward_batch8", |b| {
        b.iter(|| conv_forward(&input, &weights, &bias, 1, 1).unwrap())
    });

    let padded = pad_batch(&input, 1).unwrap();
    let dout = conv_forward(&input, &weights, &bias, 1, 1).unwrap();
    c.bench_function("conv2_backward_batch8", |b| {
        b.iter(|| conv_backward(&padded, &weights, &dout, 1, 1).unwrap())
    });

    c.bench_function("maxpool_batch8", |b| b.iter(|| maxpool_forward(&input, 2, 2).unwrap()));
}

fn bench_svd(c: &mut Criterion) {
    // desk-scale feature matrix: 64x64 maps as columns of 32 channels
    let x = FeatureMatrix::from_vec(4096, 32, rand_vec(4096 * 32, 5)).unwrap();
    c.bench_function("gram_4096x32", |b| b.iter(|| gram(&x)));
    c.bench_function("svd_via_gram_4096x32", |b| b.iter(|| svd_via_gram(&x).unwrap()));

    let g = gram(&FeatureMatrix::from_vec(128, 128, rand_vec(128 * 128, 7)).unwrap());
    c.bench_function("jacobi_eigh_128", |b| {
        b.iter_batched(|| g.clone(), |g| jacobi_eigh(&g, 128, JACOBI_TOL).unwrap(), BatchSize::LargeInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_gradient, bench_conv, bench_svd
}
criterion_main!(benches);
