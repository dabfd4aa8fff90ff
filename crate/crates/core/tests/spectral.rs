mod common;

use hsdrive_core::hypercube::{remap_labels, synth_scene, SceneSpec};
use hsdrive_core::preprocess::{run_pipeline, PreprocessConfig};
use hsdrive_core::spectral::{
    accuracy, elm_predict, elm_train, labeled_spectra, pca_fit, pca_project, select_bands,
    DEFAULT_ELM_LAMBDA,
};
use hsdrive_core::{ClassScheme, HyperCube, LabelMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Preprocessed default scene with five-class labels.
fn scene(seed: u64) -> (HyperCube, LabelMap) {
    let spec = SceneSpec::default();
    let (raw, labels, cal) = synth_scene(&spec, seed).unwrap();
    let (cube, _) = run_pipeline(&raw, &cal, &PreprocessConfig::default()).unwrap();
    (cube, remap_labels(&labels, &ClassScheme::five_class()).unwrap())
}

/// Every `step`-th labeled pixel, split alternately into train and test.
fn split(x: Vec<Vec<f32>>, y: Vec<u8>, step: usize) -> [(Vec<Vec<f32>>, Vec<u8>); 2] {
    let mut out: [(Vec<Vec<f32>>, Vec<u8>); 2] = Default::default();
    for (i, (xi, yi)) in x.into_iter().zip(y).enumerate().step_by(step) {
        let part = &mut out[(i / step) % 2];
        part.0.push(xi);
        part.1.push(yi);
    }
    out
}

fn elm_accuracy(cube: &HyperCube, labels: &LabelMap, hidden: usize) -> f64 {
    let (x, y) = labeled_spectra(cube, labels).unwrap();
    let [(xt, yt), (xv, yv)] = split(x, y, 23);
    let model = elm_train(&xt, &yt, 5, hidden, DEFAULT_ELM_LAMBDA, 1).unwrap();
    accuracy(&elm_predict(&model, &xv).unwrap(), &yv)
}

#[test]
fn elm_training_accuracy_grows_with_hidden_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // three concentric rings: capacity-limited rather than noise-limited
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..600 {
        let c = i % 3;
        let r = 0.25 * (c + 1) as f32 + rng.random_range(-0.05..0.05);
        let t = rng.random_range(0.0..std::f32::consts::TAU);
        x.push(vec![r * t.cos(), r * t.sin()]);
        y.push(c as u8);
    }
    let mut last = 0.0;
    for hidden in [10, 20, 50, 100] {
        let model = elm_train(&x, &y, 3, hidden, 1e-6, 11).unwrap();
        let acc = accuracy(&elm_predict(&model, &x).unwrap(), &y);
        println!("hidden {hidden}: training accuracy {acc:.4}");
        assert!(acc >= last, "hidden {hidden}: {acc} < {last}");
        last = acc;
    }
    assert!(last > 0.8);
}

#[test]
fn pca_preserves_variance_and_reconstructs() {
    let (cube, labels) = scene(4);
    let (x, _) = labeled_spectra(&cube, &labels).unwrap();
    let x: Vec<Vec<f32>> = x.into_iter().step_by(7).collect();
    let basis = pca_fit(&x).unwrap();

    let n = x.len() as f64;
    let mut trace = 0.0;
    for b in 0..25 {
        let m = x.iter().map(|v| v[b] as f64).sum::<f64>() / n;
        trace += x.iter().map(|v| (v[b] as f64 - m).powi(2)).sum::<f64>() / (n - 1.0);
    }
    let total: f64 = basis.variances.iter().sum();
    assert!((total - trace).abs() < 1e-8, "{total} vs {trace}");
    assert!(basis.variances.windows(2).all(|w| w[0] >= w[1]));

    for (i, a) in basis.components.iter().enumerate() {
        for (j, b) in basis.components.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot - want).abs() < 1e-10);
        }
    }

    for v in x.iter().take(200) {
        let v64: Vec<f64> = v.iter().map(|&t| t as f64).collect();
        let back = basis.reconstruct(&basis.project(&v64, 25));
        for (a, b) in back.iter().zip(&v64) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

#[test]
fn band_count_study_shape() {
    let (cube, labels) = scene(6);
    let (x, _) = labeled_spectra(&cube, &labels).unwrap();
    let basis = pca_fit(&x.iter().step_by(11).cloned().collect::<Vec<_>>()).unwrap();

    let all = elm_accuracy(&cube, &labels, 100);
    let pc1 = elm_accuracy(&pca_project(&cube, &basis, 1).unwrap(), &labels, 100);
    let singles: Vec<f64> = (0..25)
        .step_by(6)
        .map(|b| elm_accuracy(&select_bands(&cube, &[b]).unwrap(), &labels, 100))
        .collect();
    let mean_single = singles.iter().sum::<f64>() / singles.len() as f64;
    println!("all bands {all:.4}, PC1 {pc1:.4}, single bands {singles:.4?}");
    assert!(pc1 >= mean_single, "PC1 {pc1} below mean single band {mean_single}");
    assert!(all >= pc1);
}
