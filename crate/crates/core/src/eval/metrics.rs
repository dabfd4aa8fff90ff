use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::hypercube::{LabelMap, IGNORE};

/// `C×C` pixel counts; entry `(i, j)` counts ground truth `i` predicted `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            bail!(Data, "{} counts for {classes} classes", counts.len());
        }
        Ok(Self { classes, counts })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            bail!(Data, "confusion matrix must be square");
        }
        Self::from_counts(c, rows.concat())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.get(i, i)
    }

    /// Row sum: pixels whose ground truth is `i`.
    pub fn support(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(i, j)).sum()
    }

    pub fn false_negatives(&self, i: usize) -> u64 {
        self.support(i) - self.tp(i)
    }

    pub fn false_positives(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(j, i)).sum::<u64>() - self.tp(i)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.tp(i)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            bail!(Data, "cannot merge {} and {} class matrices", self.classes, other.classes);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Counts every pixel whose ground truth is not ignore.
pub fn confusion(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<ConfusionMatrix> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        bail!(
            Data,
            "prediction is {}x{}, ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        );
    }
    let pairs: Vec<(u8, u8)> = gt
        .labels()
        .iter()
        .copied()
        .zip(pred.labels().iter().copied())
        .collect();
    pairs
        .par_chunks(1 << 14)
        .map(|chunk| {
            let mut cm = ConfusionMatrix::zeros(classes);
            for &(t, p) in chunk {
                if t == IGNORE {
                    continue;
                }
                if t as usize >= classes || p as usize >= classes {
                    bail!(Data, "label pair ({t}, {p}) out of range for {classes} classes");
                }
                cm.counts[t as usize * classes + p as usize] += 1;
            }
            Ok(cm)
        })
        .try_reduce(
            || ConfusionMatrix::zeros(classes),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub iou: f64,
}

pub type Aggregate = ClassMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub supports: Vec<u64>,
    /// Normalized weights used for the weighted aggregate.
    pub class_weights: Vec<f64>,
    pub overall: Aggregate,
    pub mean: Aggregate,
    pub weighted: Aggregate,
}

fn ratio(tp: u64, other: u64) -> f64 {
    match (tp, other) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => tp as f64 / (tp + other) as f64,
    }
}

/// `w_i ∝ 1/support_i`, normalized to sum to one; zero-support classes get
/// weight zero.
pub fn inverse_frequency_weights(supports: &[f64]) -> Result<Vec<f64>> {
    if supports.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        bail!(Config, "reference supports must be finite and non-negative");
    }
    let inv: Vec<f64> = supports
        .iter()
        .map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 })
        .collect();
    let sum: f64 = inv.iter().sum();
    if sum == 0.0 {
        bail!(Config, "reference supports are all zero");
    }
    Ok(inv.into_iter().map(|v| v / sum).collect())
}

fn combine(per_class: &[ClassMetrics], weights: &[f64]) -> Aggregate {
    let dot = |f: fn(&ClassMetrics) -> f64| per_class.iter().zip(weights).map(|(m, w)| w * f(m)).sum();
    Aggregate {
        accuracy: dot(|m| m.accuracy),
        precision: dot(|m| m.precision),
        iou: dot(|m| m.iou),
    }
}

/// Per-class accuracy (recall), precision and IoU with overall
/// (support-weighted), mean and weighted aggregates. `reference_supports`
/// are class frequencies from a reference distribution; the weighted
/// aggregate uses their normalized inverses.
pub fn metrics(cm: &ConfusionMatrix, reference_supports: &[f64]) -> Result<MetricsReport> {
    let c = cm.classes();
    if reference_supports.len() != c {
        bail!(Config, "{} reference supports for {c} classes", reference_supports.len());
    }
    let class_weights = inverse_frequency_weights(reference_supports)?;
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|i| {
            let (tp, fneg, fpos) = (cm.tp(i), cm.false_negatives(i), cm.false_positives(i));
            ClassMetrics {
                accuracy: ratio(tp, fneg),
                precision: ratio(tp, fpos),
                iou: ratio(tp, fneg + fpos),
            }
        })
        .collect();
    let supports: Vec<u64> = (0..c).map(|i| cm.support(i)).collect();
    let n = cm.total();
    let uniform = vec![1.0 / c as f64; c];
    let overall = if n == 0 {
        combine(&per_class, &uniform)
    } else {
        let w: Vec<f64> = supports.iter().map(|&s| s as f64 / n as f64).collect();
        combine(&per_class, &w)
    };
    Ok(MetricsReport {
        mean: combine(&per_class, &uniform),
        weighted: combine(&per_class, &class_weights),
        overall,
        per_class,
        supports,
        class_weights,
    })
}

impl MetricsReport {
    /// Aligned text table in percent: one row per class, then Overall, Mean
    /// and Weighted.
    pub fn to_table(&self, class_names: &[&str]) -> String {
        let names: Vec<String> = (0..self.per_class.len())
            .map(|i| {
                class_names
                    .get(i)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("class {i}"))
            })
            .collect();
        let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:width$}  {:>9}  {:>9}  {:>9}",
            "", "Accuracy", "Precision", "IoU"
        );
        let mut row = |name: &str, m: &ClassMetrics| {
            let _ = writeln!(
                out,
                "{name:width$}  {:>9.2}  {:>9.2}  {:>9.2}",
                100.0 * m.accuracy,
                100.0 * m.precision,
                100.0 * m.iou
            );
        };
        for (name, m) in names.iter().zip(&self.per_class) {
            row(name, m);
        }
        row("Overall", &self.overall);
        row("Mean", &self.mean);
        row("Weighted", &self.weighted);
        out
    }
}
