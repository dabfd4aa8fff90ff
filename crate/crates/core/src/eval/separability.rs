use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{bail, Result};
use crate::hypercube::{HyperCube, LabelMap, IGNORE};

/// Gaussian summary of one class's spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub count: u64,
    pub mean: DVector<f64>,
    /// Sample covariance (`n − 1` denominator).
    pub cov: DMatrix<f64>,
}

impl ClassStats {
    pub fn new(count: u64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            bail!(Data, "covariance does not match mean of length {}", mean.len());
        }
        Ok(Self { count, mean, cov })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Clone)]
struct Accum {
    n: u64,
    origin: Option<Vec<f64>>,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
}

impl Accum {
    fn new(b: usize) -> Self {
        Self {
            n: 0,
            origin: None,
            sum: DVector::zeros(b),
            outer: DMatrix::zeros(b, b),
        }
    }

    fn push(&mut self, x: &[f32]) {
        // shifting by the first sample keeps the one-pass covariance stable
        let origin = self
            .origin
            .get_or_insert_with(|| x.iter().map(|&v| v as f64).collect());
        let d = DVector::from_iterator(x.len(), x.iter().zip(origin.iter()).map(|(&v, o)| v as f64 - o));
        self.sum += &d;
        self.outer.ger(1.0, &d, &d, 1.0);
        self.n += 1;
    }

    fn finish(self) -> ClassStats {
        let b = self.sum.len();
        let Some(origin) = self.origin else {
            return ClassStats {
                count: 0,
                mean: DVector::zeros(b),
                cov: DMatrix::zeros(b, b),
            };
        };
        let n = self.n as f64;
        let shifted_mean = &self.sum / n;
        let mean = &shifted_mean + DVector::from_vec(origin);
        let cov = if self.n > 1 {
            (&self.outer - &shifted_mean * shifted_mean.transpose() * n) / (n - 1.0)
        } else {
            DMatrix::zeros(b, b)
        };
        // symmetrize away rounding asymmetry
        let cov = (&cov + cov.transpose()) * 0.5;
        ClassStats {
            count: self.n,
            mean,
            cov,
        }
    }
}

/// Per-class mean and covariance over all labeled pixels of the given
/// cube/label pairs. Classes without pixels get `count = 0`.
pub fn class_stats(samples: &[(&HyperCube, &LabelMap)], classes: usize) -> Result<Vec<ClassStats>> {
    let Some((first, _)) = samples.first() else {
        bail!(Data, "no cubes given");
    };
    let bands = first.bands();
    for (cube, labels) in samples {
        if cube.bands() != bands {
            bail!(Data, "cubes differ in band count");
        }
        if (cube.height(), cube.width()) != (labels.height(), labels.width()) {
            bail!(Data, "cube and label map differ in size");
        }
        labels.validate(classes)?;
    }
    let accs: Vec<Accum> = (0..classes)
        .into_par_iter()
        .map(|c| {
            let mut acc = Accum::new(bands);
            for (cube, labels) in samples {
                for (px, &l) in cube.pixels().zip(labels.labels()) {
                    if l != IGNORE && l as usize == c {
                        acc.push(px);
                    }
                }
            }
            acc
        })
        .collect();
    Ok(accs.into_iter().map(Accum::finish).collect())
}

/// `1e−6 × mean(trace Σ) / B` over classes with at least two pixels.
pub fn default_epsilon(stats: &[ClassStats]) -> f64 {
    let used: Vec<&ClassStats> = stats.iter().filter(|s| s.count >= 2).collect();
    if used.is_empty() {
        return 1e-12;
    }
    let b = used[0].dims().max(1) as f64;
    let mean_trace = used.iter().map(|s| s.cov.trace()).sum::<f64>() / used.len() as f64;
    let eps = 1e-6 * mean_trace / b;
    if eps > 0.0 {
        eps
    } else {
        1e-12
    }
}

fn logdet_chol(m: DMatrix<f64>) -> Result<(f64, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let Some(ch) = m.cholesky() else {
        bail!(Numeric, "regularized covariance is not positive definite");
    };
    let ld = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !ld.is_finite() {
        bail!(Numeric, "non-finite log-determinant");
    }
    Ok((ld, ch))
}

/// Bhattacharyya distance between two Gaussians with `ε·I` added to every
/// covariance.
pub fn bhattacharyya(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
    eps: f64,
) -> Result<f64> {
    let b = mu1.len();
    if mu2.len() != b || cov1.shape() != (b, b) || cov2.shape() != (b, b) {
        bail!(Data, "Gaussian dimensions differ");
    }
    if !(eps > 0.0) {
        bail!(Config, "epsilon must be positive, got {eps}");
    }
    let reg = DMatrix::<f64>::identity(b, b) * eps;
    let avg = (cov1 + cov2) * 0.5 + &reg;
    let (ld, ch) = logdet_chol(avg)?;
    let (ld1, _) = logdet_chol(cov1 + &reg)?;
    let (ld2, _) = logdet_chol(cov2 + &reg)?;
    let d = mu1 - mu2;
    let quad = d.dot(&ch.solve(&d));
    let dist = quad / 8.0 + 0.5 * (ld - 0.5 * (ld1 + ld2));
    if !dist.is_finite() {
        bail!(Numeric, "non-finite Bhattacharyya distance");
    }
    Ok(dist.max(0.0))
}

/// Jeffreys–Matusita distance `2·(1 − e^{−B})`, in `[0, 2]`.
pub fn jm_distance(a: &ClassStats, b: &ClassStats, eps: f64) -> Result<f64> {
    if a.count < 2 || b.count < 2 {
        bail!(Data, "each class needs at least two pixels");
    }
    let bd = bhattacharyya(&a.mean, &a.cov, &b.mean, &b.cov, eps)?;
    Ok((2.0 * (1.0 - (-bd).exp())).clamp(0.0, 2.0))
}

/// Pairwise JM distances; `None` on the diagonal and for classes with fewer
/// than two pixels.
pub fn jm_matrix(stats: &[ClassStats], eps: f64) -> Result<Vec<Vec<Option<f64>>>> {
    let c = stats.len();
    let mut m = vec![vec![None; c]; c];
    for i in 0..c {
        for j in i + 1..c {
            if stats[i].count >= 2 && stats[j].count >= 2 {
                let d = jm_distance(&stats[i], &stats[j], eps)?;
                m[i][j] = Some(d);
                m[j][i] = Some(d);
            }
        }
    }
    Ok(m)
}

/// CSV with a header row of class names, one row per class (empty diagonal)
/// and a final `Mean` row averaging each column's off-diagonal entries.
pub fn jm_csv(matrix: &[Vec<Option<f64>>], names: &[&str]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    let mut out = String::new();
    out.push_str("class");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (name, row) in names.iter().zip(matrix) {
        out.push_str(name);
        for &v in row {
            out.push(',');
            out.push_str(&fmt(v));
        }
        out.push('\n');
    }
    out.push_str("Mean");
    for j in 0..names.len() {
        let vals: Vec<f64> = matrix.iter().filter_map(|r| r[j]).collect();
        let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        out.push(',');
        out.push_str(&fmt(mean));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::Stage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gauss_1d(mu: f64, var: f64) -> ClassStats {
        ClassStats::new(100, DVector::from_element(1, mu), DMatrix::from_element(1, 1, var)).unwrap()
    }

    #[test]
    fn closed_form_1d() {
        let jm = jm_distance(&gauss_1d(0.0, 1.0), &gauss_1d(2.0, 1.0), 1e-12).unwrap();
        assert!((jm - 2.0 * (1.0 - (-0.5f64).exp())).abs() < 1e-9);
        assert!((jm - 0.7869).abs() < 1e-4);
        let far = jm_distance(&gauss_1d(0.0, 1.0), &gauss_1d(100.0, 1.0), 1e-12).unwrap();
        assert!((far - 2.0).abs() < 1e-6);
        let same = jm_distance(&gauss_1d(0.3, 2.0), &gauss_1d(0.3, 2.0), 1e-9).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let b = rng.random_range(1..6);
            let mk = |rng: &mut ChaCha8Rng| {
                let a = DMatrix::from_fn(b, b, |_, _| rng.random_range(-1.0..1.0));
                let mean = DVector::from_fn(b, |_, _| rng.random_range(-3.0..3.0));
                ClassStats::new(10, mean, &a * a.transpose()).unwrap()
            };
            let (s, t) = (mk(&mut rng), mk(&mut rng));
            let ab = jm_distance(&s, &t, 1e-6).unwrap();
            let ba = jm_distance(&t, &s, 1e-6).unwrap();
            assert_eq!(ab, ba);
            assert!((0.0..=2.0).contains(&ab));
        }
    }

    #[test]
    fn degenerate_inputs() {
        let few = ClassStats::new(1, DVector::zeros(1), DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(
            jm_distance(&few, &gauss_1d(0.0, 1.0), 1e-6),
            Err(crate::Error::Data(_))
        ));
        let neg = ClassStats::new(5, DVector::zeros(1), DMatrix::from_element(1, 1, -1.0)).unwrap();
        assert!(matches!(
            jm_distance(&neg, &gauss_1d(0.0, 1.0), 1e-6),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn stats_from_cube() {
        // class 0 spectra are (t, 2t), class 1 constant, one ignored pixel
        let cube = HyperCube::from_fn(2, 3, 2, Stage::Filtered, |r, c, b| {
            if r == 0 {
                c as f32 * (b + 1) as f32
            } else {
                0.5
            }
        })
        .unwrap();
        let labels = LabelMap::new(2, 3, vec![0, 0, 0, 1, 1, IGNORE]).unwrap();
        let s = class_stats(&[(&cube, &labels)], 3).unwrap();
        assert_eq!(s[0].count, 3);
        assert!((s[0].mean[0] - 1.0).abs() < 1e-12 && (s[0].mean[1] - 2.0).abs() < 1e-12);
        assert!((s[0].cov[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((s[0].cov[(0, 1)] - 2.0).abs() < 1e-12);
        assert!((s[0].cov[(1, 1)] - 4.0).abs() < 1e-12);
        assert_eq!(s[1].count, 2);
        assert!(s[1].cov.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(s[2].count, 0);
        let m = jm_matrix(&s, default_epsilon(&s)).unwrap();
        assert!(m[0][1].is_some() && m[0][2].is_none() && m[1][1].is_none());
    }

    #[test]
    fn csv_layout() {
        let m = vec![vec![None, Some(1.5)], vec![Some(1.5), None]];
        let csv = jm_csv(&m, &["Road", "Sky"]);
        assert_eq!(csv, "class,Road,Sky\nRoad,,1.5000\nSky,1.5000,\nMean,1.5000,1.5000\n");
    }
}
