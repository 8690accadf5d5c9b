//! Shared fixtures for the benchmarks.

use memgan_core::crossbar::DeviceConfig;
use memgan_core::mapper::{LayerShape, MappedLayer};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
}

pub fn random_map(c: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn((c, h, w), || r.random_range(-1.0..1.0))
}

/// A layer with random weights on 32x32 crossbars.
pub fn layer(shape: LayerShape, device: DeviceConfig, seed: u64) -> MappedLayer {
    let km = random_matrix(shape.kernel_rows(), shape.kernel_cols(), seed);
    MappedLayer::with_kernel_matrix(shape, device, km.view()).expect("valid bench layer")
}
