//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softpose::augment::intrinsics_from_hfov;
use softpose::rotation::sample_uniform;
use softpose::{
    build_grid, default_merge_tolerance, encode_multi, CameraIntrinsics, GrayImage, KernelParams, OrientationGrid,
    Quaternion, SoftAssignment,
};

pub fn grid(m: usize) -> OrientationGrid {
    build_grid(m, default_merge_tolerance(m)).expect("valid grid")
}

pub fn random_labels(n: usize, seed: u64) -> Vec<Quaternion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_uniform(&mut rng)).collect()
}

/// Equal-mass activations around two random orientations.
pub fn two_lobe(grid: &OrientationGrid, params: &KernelParams, seed: u64) -> SoftAssignment {
    let q = random_labels(2, seed);
    encode_multi(grid, &[(q[0], 0.5), (q[1], 0.5)], params).expect("valid labels")
}

/// Horizontal intensity ramp.
pub fn ramp_image(width: u32, height: u32) -> GrayImage {
    let pixels = (0..height)
        .flat_map(|_| (0..width).map(move |u| (u * 255 / width.max(1)) as u8))
        .collect();
    GrayImage::new(width, height, pixels).expect("matching size")
}

pub fn camera(width: u32, height: u32) -> CameraIntrinsics {
    intrinsics_from_hfov(width, height, 90f64.to_radians()).expect("valid intrinsics")
}
