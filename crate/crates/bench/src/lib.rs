//! Shared helpers for the kernel benchmarks.

use eigenprint_core::image::GrayImage;
use eigenprint_core::tensor::Tensor;

/// Deterministic pseudo-random buffer for benchmark inputs.
pub fn rand_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

pub fn rand_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let data = rand_vec(width * height, seed).iter().map(|v| (v + 1.0) * 127.5).collect();
    GrayImage::from_vec(width, height, data).unwrap()
}

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::from_vec(shape, rand_vec(shape.iter().product(), seed)).unwrap()
}
