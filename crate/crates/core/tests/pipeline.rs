mod common;

use hsdrive_core::hypercube::synth::{render, SceneClass};
use hsdrive_core::preprocess::{
    crop, demosaic, reflectance_correct, run_pipeline, Normalization, PreprocessConfig, STAGE_NAMES,
};
use hsdrive_core::{CalibrationSet, RawMosaicFrame};
use proptest::prelude::*;

fn small_config() -> PreprocessConfig {
    PreprocessConfig::default()
}

fn crop_small(frame: &RawMosaicFrame, offset: (usize, usize)) -> RawMosaicFrame {
    hsdrive_core::preprocess::crop_region(frame, offset, (200, 300)).unwrap()
}

#[test]
fn demosaic_inverts_the_mosaic() {
    let spec = common::small_spec();
    let scene = render(&spec, 5).unwrap();
    let cal = &scene.calibration;
    let (raw, dark, white) = (
        crop_small(&scene.raw, spec.crop_offset),
        crop_small(&cal.dark, spec.crop_offset),
        crop_small(&cal.white, spec.crop_offset),
    );
    let refl = reflectance_correct(&raw, &dark, &white, 1e-6).unwrap();
    let cube = demosaic(&refl, &cal.layout).unwrap();
    assert_eq!((cube.height(), cube.width(), cube.bands()), (40, 60, 25));
    // the only loss is rounding raw counts to integers
    let step = 1.0 / (spec.white_level - spec.dark_level - 2 * spec.reference_jitter) as f32;
    for (a, b) in cube.data().iter().zip(scene.truth.data()) {
        assert!((a - b).abs() <= step, "{a} vs {b}");
    }
}

#[test]
fn full_frame_pipeline_shape_and_stages() {
    let spec = hsdrive_core::hypercube::SceneSpec::default();
    let (raw, _, cal) = hsdrive_core::hypercube::synth_scene(&spec, 0).unwrap();
    let (cube, timing) = run_pipeline(&raw, &cal, &small_config()).unwrap();
    assert_eq!((cube.height(), cube.width(), cube.bands()), (216, 409, 25));
    let names: Vec<&str> = timing.stages.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, STAGE_NAMES);
    assert!((timing.total() - timing.stages.iter().map(|s| s.1).sum::<f64>()).abs() < 1e-12);
    assert_eq!(crop(&raw, (4, 1)).unwrap().height(), 1080);
}

#[test]
fn pipeline_is_deterministic() {
    let spec = hsdrive_core::hypercube::SceneSpec::default();
    let (raw, _, cal) = hsdrive_core::hypercube::synth_scene(&spec, 1).unwrap();
    let (a, _) = run_pipeline(&raw, &cal, &small_config()).unwrap();
    let (b, _) = run_pipeline(&raw, &cal, &small_config()).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn noiseless_single_class_recovers_signature_shape() {
    let sig: Vec<f32> = (0..25).map(|b| 0.2 + 0.6 * (b as f32 / 24.0)).collect();
    let spec = hsdrive_core::hypercube::SceneSpec {
        classes: vec![SceneClass::with_signature(1, sig.clone())],
        noise_sigma: 0.0,
        illumination_gradient: 0.3,
        ..hsdrive_core::hypercube::SceneSpec::default()
    };
    let (raw, _, cal) = hsdrive_core::hypercube::synth_scene(&spec, 9).unwrap();
    let config = PreprocessConfig {
        normalization: Normalization::PerPixelMax,
        ..PreprocessConfig::default()
    };
    let (cube, _) = run_pipeline(&raw, &cal, &config).unwrap();
    let peak = sig.iter().cloned().fold(0.0, f32::max);
    for px in cube.pixels() {
        for (v, s) in px.iter().zip(&sig) {
            assert!((v - s / peak).abs() < 2e-3, "{v} vs {}", s / peak);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn arbitrary_counts_stay_in_unit_range(seed in any::<u64>(), dark_hi in 0u16..2000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (1088, 2048);
        let mut frame = |lo: u16, hi: u16| {
            RawMosaicFrame::new(h, w, (0..h * w).map(|_| rng.random_range(lo..=hi)).collect()).unwrap()
        };
        let raw = frame(0, u16::MAX);
        let dark = frame(0, dark_hi);
        let white = frame(0, u16::MAX);
        let cal = CalibrationSet::new(dark, white, Default::default(), (4, 1)).unwrap();
        for normalization in [Normalization::PerBandMinmax, Normalization::PerPixelMax] {
            let config = PreprocessConfig { normalization, ..PreprocessConfig::default() };
            let (cube, _) = run_pipeline(&raw, &cal, &config).unwrap();
            prop_assert!(cube.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }
}
