mod common;

use hsdrive_core::eval::{class_stats, default_epsilon, jm_distance, jm_matrix, ClassStats};
use hsdrive_core::hypercube::synth::render;
use hsdrive_core::hypercube::{remap_labels, SceneSpec};
use hsdrive_core::preprocess::{run_pipeline, PreprocessConfig};
use hsdrive_core::spectral::{accuracy, elm_predict, elm_train, labeled_spectra};
use hsdrive_core::{ClassScheme, HyperCube, LabelMap};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use common::three_flat_classes;

struct Gauss2 {
    mean: [f64; 2],
    /// Lower Cholesky factor of the covariance.
    l: [[f64; 2]; 2],
}

impl Gauss2 {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let a = rng.random_range(0.3..1.5);
        let c = rng.random_range(0.3..1.5);
        Self {
            mean: [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
            l: [[a, 0.0], [rng.random_range(-0.8..0.8), c]],
        }
    }

    fn cov(&self) -> [[f64; 2]; 2] {
        let l = self.l;
        [
            [l[0][0] * l[0][0], l[0][0] * l[1][0]],
            [l[0][0] * l[1][0], l[1][0] * l[1][0] + l[1][1] * l[1][1]],
        ]
    }

    fn pdf(&self, x: [f64; 2]) -> f64 {
        let s = self.cov();
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let (dx, dy) = (x[0] - self.mean[0], x[1] - self.mean[1]);
        let q = (s[1][1] * dx * dx - 2.0 * s[0][1] * dx * dy + s[0][0] * dy * dy) / det;
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        [
            self.mean[0] + self.l[0][0] * z0,
            self.mean[1] + self.l[1][0] * z0 + self.l[1][1] * z1,
        ]
    }

    fn stats(&self) -> ClassStats {
        let s = self.cov();
        ClassStats::new(
            1000,
            DVector::from_row_slice(&self.mean),
            DMatrix::from_row_slice(2, 2, &[s[0][0], s[0][1], s[1][0], s[1][1]]),
        )
        .unwrap()
    }
}

/// `2·(1 − ∫√(pq))` with the coefficient estimated by sampling the mixture
/// `m = (p+q)/2`, where `√(pq)/m ≤ 1` keeps the estimator's variance small.
fn monte_carlo_jm(p: &Gauss2, q: &Gauss2, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        let x = if i % 2 == 0 { p.sample(rng) } else { q.sample(rng) };
        let (a, b) = (p.pdf(x), q.pdf(x));
        sum += (a * b).sqrt() / (0.5 * (a + b));
    }
    2.0 * (1.0 - sum / n as f64)
}

#[test]
fn closed_form_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..5 {
        let (p, q) = (Gauss2::random(&mut rng), Gauss2::random(&mut rng));
        let closed = jm_distance(&p.stats(), &q.stats(), 1e-12).unwrap();
        let mc = monte_carlo_jm(&p, &q, 1_000_000, &mut rng);
        assert!((closed - mc).abs() < 0.02, "closed {closed} vs sampled {mc}");
    }
}

fn flat_scene(levels: [f32; 3], noise: f32, seed: u64) -> (HyperCube, LabelMap) {
    let spec = SceneSpec {
        classes: three_flat_classes(levels),
        noise_sigma: noise,
        // a shared gain ramp would separate classes by where they sit
        illumination_gradient: 0.0,
        // enough pixels per class for stable 25-D covariances
        height: 160,
        width: 300,
        frame_height: 808,
        frame_width: 1508,
        ..SceneSpec::default()
    };
    let scene = render(&spec, seed).unwrap();
    let labels = remap_labels(&scene.labels, &ClassScheme::three_class()).unwrap();
    // noisy reflectance straight from the renderer
    (scene.truth, labels)
}

fn min_pairwise_jm(cube: &HyperCube, labels: &LabelMap) -> (f64, f64) {
    let stats = class_stats(&[(cube, labels)], 3).unwrap();
    let m = jm_matrix(&stats, default_epsilon(&stats)).unwrap();
    let vals: Vec<f64> = m.iter().flatten().flatten().copied().collect();
    (
        vals.iter().cloned().fold(f64::INFINITY, f64::min),
        vals.iter().cloned().fold(0.0, f64::max),
    )
}

fn holdout_accuracy(cube: &HyperCube, labels: &LabelMap) -> f64 {
    let (x, y) = labeled_spectra(cube, labels).unwrap();
    let (mut xt, mut yt, mut xv, mut yv) = (vec![], vec![], vec![], vec![]);
    for (i, (xi, yi)) in x.into_iter().zip(y).enumerate() {
        if i % 2 == 0 {
            xt.push(xi);
            yt.push(yi);
        } else {
            xv.push(xi);
            yv.push(yi);
        }
    }
    let model = elm_train(&xt, &yt, 3, 50, 1e-3, 5).unwrap();
    accuracy(&elm_predict(&model, &xv).unwrap(), &yv)
}

#[test]
fn separability_orders_accuracy() {
    let (hi_cube, hi_labels) = flat_scene([0.15, 0.5, 0.85], 0.02, 1);
    let (lo_cube, lo_labels) = flat_scene([0.5, 0.505, 0.51], 0.05, 1);
    let (hi_min, _) = min_pairwise_jm(&hi_cube, &hi_labels);
    let (_, lo_max) = min_pairwise_jm(&lo_cube, &lo_labels);
    assert!(hi_min >= 1.9, "separable scene min JM {hi_min}");
    assert!(lo_max <= 1.0, "confusable scene max JM {lo_max}");
    let (hi_acc, lo_acc) = (
        holdout_accuracy(&hi_cube, &hi_labels),
        holdout_accuracy(&lo_cube, &lo_labels),
    );
    println!("JM >= {hi_min:.3}: accuracy {hi_acc:.4}; JM <= {lo_max:.3}: accuracy {lo_acc:.4}");
    assert!(hi_acc > lo_acc);
}

#[test]
fn preprocessed_default_scene_has_finite_jm() {
    let spec = SceneSpec::default();
    let scene = render(&spec, 2).unwrap();
    let (cube, _) = run_pipeline(&scene.raw, &scene.calibration, &PreprocessConfig::default()).unwrap();
    let labels = remap_labels(&scene.labels, &ClassScheme::five_class()).unwrap();
    let stats = class_stats(&[(&cube, &labels)], 5).unwrap();
    let m = jm_matrix(&stats, default_epsilon(&stats)).unwrap();
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i == j {
                assert!(v.is_none());
            } else {
                let v = v.expect("all five classes present");
                assert!((0.0..=2.0).contains(&v));
                assert_eq!(Some(v), m[j][i]);
            }
        }
    }
}
