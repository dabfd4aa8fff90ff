#![allow(dead_code)]

use hsdrive_core::hypercube::synth::{SceneClass, SceneSpec};

/// A 40×60 scene inside a 208×304 frame.
pub fn small_spec() -> SceneSpec {
    SceneSpec {
        height: 40,
        width: 60,
        frame_height: 208,
        frame_width: 304,
        ..SceneSpec::default()
    }
}

pub fn flat(value: f32) -> Vec<f32> {
    vec![value; 25]
}

/// Vegetation background with road and road marks, all with flat spectra.
pub fn three_flat_classes(levels: [f32; 3]) -> Vec<SceneClass> {
    vec![
        SceneClass::with_signature(3, flat(levels[0])),
        SceneClass::with_signature(1, flat(levels[1])),
        SceneClass::with_signature(2, flat(levels[2])),
    ]
}
