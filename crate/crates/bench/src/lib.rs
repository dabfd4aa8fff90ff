//! Inputs shared by the criterion benchmarks.

use hsdrive_core::fcn::FeatureMap;
use hsdrive_core::{HyperCube, Stage};

/// Deterministic pseudo-random values in `[0, 1)` from a 64-bit mix.
fn hash01(i: u64) -> f32 {
    let mut z = i.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 24) as f32
}

/// Normalized cube, ready for inference.
pub fn cube(height: usize, width: usize, bands: usize) -> HyperCube {
    cube_at(height, width, bands, Stage::Normalized)
}

/// Cube tagged with `stage`, for feeding a single preprocessing step.
pub fn cube_at(height: usize, width: usize, bands: usize, stage: Stage) -> HyperCube {
    let mut i = 0u64;
    HyperCube::from_fn(height, width, bands, stage, |_, _, _| {
        i += 1;
        hash01(i)
    })
    .expect("values lie in [0, 1)")
}

pub fn feature_map(channels: usize, height: usize, width: usize) -> FeatureMap {
    let mut i = 1u64 << 32;
    FeatureMap::from_fn(channels, height, width, |_, _, _| {
        i += 1;
        hash01(i) - 0.5
    })
}

pub fn kernel(len: usize) -> Vec<f32> {
    (0..len as u64).map(|i| hash01(i + (1 << 40)) - 0.5).collect()
}
