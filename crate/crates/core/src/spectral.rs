//! Purely spectral baselines: the per-pixel MLP, an extreme learning machine
//! reference classifier, band selection and PCA band reduction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::fcn::{run_graph, to_score_map, FeatureMap, ModelSpec, WeightStore};
use crate::hypercube::{HyperCube, LabelMap, Stage, IGNORE};
use crate::patchwork::{argmax, ScoreMap};

/// Layer sizes of the reference MLP for `classes` outputs.
pub fn mlp_sizes(classes: usize) -> Vec<usize> {
    vec![25, 25, 100, 100, classes]
}

/// Classifies every pixel spectrum of `cube` with the MLP held in `weights`.
pub fn mlp_forward(weights: &WeightStore, cube: &HyperCube) -> Result<ScoreMap> {
    let sizes = match ModelSpec::from_store(weights)? {
        ModelSpec::Mlp(sizes) => sizes,
        ModelSpec::UNet(_) => bail!(Weight, "store holds a U-Net, not an MLP"),
    };
    if sizes[0] != cube.bands() {
        bail!(
            Weight,
            "MLP expects {} input bands, cube has {}",
            sizes[0],
            cube.bands()
        );
    }
    let graph = ModelSpec::Mlp(sizes).graph()?;
    let probs = run_graph(&graph, weights, FeatureMap::from_cube(cube), |_, _| {})?;
    Ok(to_score_map(&probs))
}

/// Labeled spectra of a cube, ignore pixels dropped.
pub fn labeled_spectra(cube: &HyperCube, labels: &LabelMap) -> Result<(Vec<Vec<f32>>, Vec<u8>)> {
    if (cube.height(), cube.width()) != (labels.height(), labels.width()) {
        bail!(Data, "cube and label map differ in size");
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (px, &l) in cube.pixels().zip(labels.labels()) {
        if l != IGNORE {
            x.push(px.to_vec());
            y.push(l);
        }
    }
    Ok((x, y))
}

fn to_matrix<S: AsRef<[f32]>>(x: &[S]) -> Result<DMatrix<f64>> {
    let n = x.len();
    let b = x.first().map(|r| r.as_ref().len()).unwrap_or(0);
    if n == 0 || b == 0 {
        bail!(Data, "no samples");
    }
    if x.iter().any(|r| r.as_ref().len() != b) {
        bail!(Data, "samples differ in length");
    }
    Ok(DMatrix::from_fn(n, b, |i, j| x[i].as_ref()[j] as f64))
}

/// Extreme learning machine: a fixed random sigmoid layer followed by a
/// ridge-regression readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ElmModel {
    /// `hidden × bands`.
    pub input_weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    /// `hidden × classes`.
    pub output_weights: DMatrix<f64>,
    pub lambda: f64,
}

impl ElmModel {
    pub fn hidden(&self) -> usize {
        self.biases.len()
    }

    pub fn classes(&self) -> usize {
        self.output_weights.ncols()
    }

    fn hidden_layer(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x * self.input_weights.transpose();
        for mut row in h.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.biases.iter()) {
                *v = 1.0 / (1.0 + (-(*v + b)).exp());
            }
        }
        h
    }
}

pub const DEFAULT_ELM_LAMBDA: f64 = 1e-3;

/// Fits an ELM. Input weights and biases are drawn uniformly from `(−1, 1)`
/// in neuron order, so a larger `hidden` extends a smaller model's layer.
pub fn elm_train<S: AsRef<[f32]>>(
    x: &[S],
    y: &[u8],
    classes: usize,
    hidden: usize,
    lambda: f64,
    seed: u64,
) -> Result<ElmModel> {
    let xm = to_matrix(x)?;
    if y.len() != xm.nrows() {
        bail!(Data, "{} labels for {} samples", y.len(), xm.nrows());
    }
    if classes == 0 || xm.nrows() < classes {
        bail!(Data, "need at least one sample per class ({} < {classes})", xm.nrows());
    }
    if let Some(&bad) = y.iter().find(|&&l| l as usize >= classes) {
        bail!(Data, "label {bad} out of range for {classes} classes");
    }
    if hidden == 0 || !(lambda >= 0.0) {
        bail!(Config, "hidden size must be positive and lambda non-negative");
    }
    let bands = xm.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input_weights = DMatrix::zeros(hidden, bands);
    let mut biases = DVector::zeros(hidden);
    for j in 0..hidden {
        for k in 0..bands {
            input_weights[(j, k)] = rng.random_range(-1.0..1.0);
        }
        biases[j] = rng.random_range(-1.0..1.0);
    }
    let mut model = ElmModel {
        input_weights,
        biases,
        output_weights: DMatrix::zeros(hidden, classes),
        lambda,
    };
    let h = model.hidden_layer(&xm);
    let targets = DMatrix::from_fn(y.len(), classes, |i, c| f64::from(y[i] as usize == c));
    let gram = h.transpose() * &h + DMatrix::identity(hidden, hidden) * lambda;
    let rhs = h.transpose() * targets;
    let chol = gram.cholesky().ok_or_else(|| {
        crate::Error::Numeric("ELM normal equations are singular; use lambda > 0".into())
    })?;
    model.output_weights = chol.solve(&rhs);
    if model.output_weights.iter().any(|v| !v.is_finite()) {
        bail!(Numeric, "ELM solve produced non-finite weights");
    }
    Ok(model)
}

pub fn elm_predict<S: AsRef<[f32]>>(model: &ElmModel, x: &[S]) -> Result<Vec<u8>> {
    let xm = to_matrix(x)?;
    if xm.ncols() != model.input_weights.ncols() {
        bail!(
            Data,
            "model expects {} bands, samples have {}",
            model.input_weights.ncols(),
            xm.ncols()
        );
    }
    let scores = model.hidden_layer(&xm) * &model.output_weights;
    Ok(scores
        .row_iter()
        .map(|row| {
            let v: Vec<f32> = row.iter().map(|&s| s as f32).collect();
            argmax(&v) as u8
        })
        .collect())
}

/// Fraction of samples where `pred == truth`.
pub fn accuracy(pred: &[u8], truth: &[u8]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

/// Keeps the listed bands in the given order.
pub fn select_bands(cube: &HyperCube, indices: &[usize]) -> Result<HyperCube> {
    if indices.is_empty() {
        bail!(Config, "no bands selected");
    }
    let mut seen = vec![false; cube.bands()];
    for &i in indices {
        if i >= cube.bands() {
            bail!(Config, "band {i} out of range for {} bands", cube.bands());
        }
        if std::mem::replace(&mut seen[i], true) {
            bail!(Config, "band {i} selected twice");
        }
    }
    let data = cube
        .pixels()
        .flat_map(|px| indices.iter().map(move |&i| px[i]))
        .collect();
    HyperCube::new(cube.height(), cube.width(), indices.len(), data, cube.stage())
}

/// Principal axes of a set of spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub means: Vec<f64>,
    /// Orthonormal components, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component (non-increasing).
    pub variances: Vec<f64>,
}

impl PcaBasis {
    pub fn dims(&self) -> usize {
        self.means.len()
    }

    pub fn project(&self, x: &[f64], k: usize) -> Vec<f64> {
        self.components[..k]
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x.iter().zip(&self.means))
                    .map(|(ci, (xi, mi))| ci * (xi - mi))
                    .sum()
            })
            .collect()
    }

    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.means.clone();
        for (s, c) in scores.iter().zip(&self.components) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += s * ci;
            }
        }
        out
    }
}

/// Sample covariance (`n − 1` denominator) and its eigendecomposition.
pub fn pca_fit<S: AsRef<[f32]>>(x: &[S]) -> Result<PcaBasis> {
    let xm = to_matrix(x)?;
    let (n, b) = (xm.nrows(), xm.ncols());
    if n < 2 {
        bail!(Data, "PCA needs at least two samples");
    }
    let means: Vec<f64> = (0..b).map(|j| xm.column(j).mean()).collect();
    let mut centred = xm;
    for (j, m) in means.iter().enumerate() {
        centred.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut components = Vec::with_capacity(b);
    let mut variances = Vec::with_capacity(b);
    for i in order {
        let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let lead = c
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        variances.push(eig.eigenvalues[i].max(0.0));
    }
    Ok(PcaBasis {
        means,
        components,
        variances,
    })
}

/// Projects every spectrum onto the first `k` components.
pub fn pca_project(cube: &HyperCube, basis: &PcaBasis, k: usize) -> Result<HyperCube> {
    if k == 0 || k > basis.components.len() {
        bail!(Config, "k = {k} outside 1..={}", basis.components.len());
    }
    if cube.bands() != basis.dims() {
        bail!(Data, "basis has {} dims, cube {} bands", basis.dims(), cube.bands());
    }
    let mut data = Vec::with_capacity(cube.height() * cube.width() * k);
    let mut buf = vec![0f64; cube.bands()];
    for px in cube.pixels() {
        for (b, &v) in buf.iter_mut().zip(px) {
            *b = v as f64;
        }
        data.extend(basis.project(&buf, k).into_iter().map(|v| v as f32));
    }
    let stage = match cube.stage() {
        Stage::Normalized => Stage::Filtered,
        s => s,
    };
    HyperCube::new(cube.height(), cube.width(), k, data, stage)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two interleaved 1-D classes separable by a threshold at 0.5.
    fn toy_1d() -> (Vec<Vec<f32>>, Vec<u8>) {
        let x: Vec<Vec<f32>> = (0..40).map(|i| vec![i as f32 / 39.0]).collect();
        let y = x.iter().map(|v| u8::from(v[0] > 0.5)).collect();
        (x, y)
    }

    #[test]
    fn elm_fits_separable_toy() {
        let (x, y) = toy_1d();
        let model = elm_train(&x, &y, 2, 50, 1e-6, 7).unwrap();
        let pred = elm_predict(&model, &x).unwrap();
        // brute-force check against the threshold rule
        for (p, xi) in pred.iter().zip(&x) {
            assert_eq!(*p, u8::from(xi[0] > 0.5), "x = {}", xi[0]);
        }
    }

    #[test]
    fn elm_deterministic() {
        let (x, y) = toy_1d();
        let a = elm_train(&x, &y, 2, 20, 1e-3, 3).unwrap();
        let b = elm_train(&x, &y, 2, 20, 1e-3, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn elm_ridge_limit() {
        let (x, y) = toy_1d();
        let model = elm_train(&x, &y, 2, 20, 1e12, 3).unwrap();
        assert!(model.output_weights.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn elm_singular_without_ridge() {
        // identical samples make the hidden gram matrix rank one
        let x = vec![vec![0.3f32]; 10];
        let y: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let err = elm_train(&x, &y, 2, 5, 0.0, 1).unwrap_err();
        assert!(matches!(err, crate::Error::Numeric(_)));
    }

    #[test]
    fn elm_input_checks() {
        let (x, y) = toy_1d();
        assert!(elm_train(&x, &y[..10], 2, 5, 1e-3, 0).is_err());
        assert!(elm_train(&x[..1], &y[..1], 2, 5, 1e-3, 0).is_err());
        assert!(elm_train(&x, &y, 1, 5, 1e-3, 0).is_err());
    }

    #[test]
    fn band_selection() {
        let cube = HyperCube::from_fn(2, 2, 25, Stage::Normalized, |r, c, b| {
            ((r * 2 + c) * 25 + b) as f32 / 100.0
        })
        .unwrap();
        let all: Vec<usize> = (0..25).collect();
        assert_eq!(select_bands(&cube, &all).unwrap(), cube);
        let some = select_bands(&cube, &[7, 3]).unwrap();
        assert_eq!(some.pixel(1, 0), &[cube.get(1, 0, 7), cube.get(1, 0, 3)]);
        assert!(matches!(select_bands(&cube, &[1, 1]), Err(crate::Error::Config(_))));
        assert!(select_bands(&cube, &[25]).is_err());
    }

    #[test]
    fn pca_rank_one() {
        let x: Vec<Vec<f32>> = (0..30)
            .map(|i| {
                let t = i as f32 / 10.0;
                vec![t, 2.0 * t, -t]
            })
            .collect();
        let basis = pca_fit(&x).unwrap();
        assert!(basis.variances[0] > 0.1);
        assert!(basis.variances[1..].iter().all(|v| v.abs() < 1e-9));
        // sign convention: largest |coefficient| is positive
        let c = &basis.components[0];
        let lead = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(lead > 0.0);
    }

    #[test]
    fn pca_projection_dims() {
        let cube = HyperCube::from_fn(3, 4, 25, Stage::Normalized, |r, c, b| {
            ((r + 1) * (b + 1) + c) as f32 / 200.0
        })
        .unwrap();
        let (x, _) = labeled_spectra(&cube, &LabelMap::filled(3, 4, 0)).unwrap();
        let basis = pca_fit(&x).unwrap();
        let p = pca_project(&cube, &basis, 2).unwrap();
        assert_eq!(p.bands(), 2);
        assert!(pca_project(&cube, &basis, 26).is_err());
    }
}
