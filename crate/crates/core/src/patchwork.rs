//! Overlapped patch tiling for fully convolutional inference.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::hypercube::{HyperCube, LabelMap};

/// Square patch placement over an `H×W` image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch: usize,
    pub height: usize,
    pub width: usize,
    pub row_starts: Vec<usize>,
    pub col_starts: Vec<usize>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.row_starts.len() * self.col_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Patch origins in row-major order.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_starts
            .iter()
            .flat_map(move |&r| self.col_starts.iter().map(move |&c| (r, c)))
    }

    /// Number of patches covering each pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cover = vec![0u32; self.height * self.width];
        for (r0, c0) in self.origins() {
            for r in r0..r0 + self.patch {
                for c in c0..c0 + self.patch {
                    cover[r * self.width + c] += 1;
                }
            }
        }
        cover
    }
}

fn axis_starts(dim: usize, patch: usize, n: usize, axis: &str) -> Result<Vec<usize>> {
    if n == 0 {
        bail!(Config, "{axis}: at least one patch is required");
    }
    if patch == 0 || patch > dim {
        bail!(Config, "{axis}: patch {patch} does not fit in {dim}");
    }
    if n * patch < dim {
        bail!(Config, "{axis}: {n} patches of {patch} cannot cover {dim}");
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    let span = dim - patch;
    if n - 1 > span {
        bail!(Config, "{axis}: {n} patches over {dim} would repeat start positions");
    }
    let denom = 2 * (n - 1);
    // round(i·span/(n−1)) with halves rounded up, in integers
    Ok((0..n).map(|i| (2 * i * span + (n - 1)) / denom).collect())
}

/// Evenly spaced, overlapping `n_rows × n_cols` grid of `patch`-sized tiles.
pub fn plan_grid(
    height: usize,
    width: usize,
    patch: usize,
    n_rows: usize,
    n_cols: usize,
) -> Result<PatchGrid> {
    Ok(PatchGrid {
        patch,
        height,
        width,
        row_starts: axis_starts(height, patch, n_rows, "rows")?,
        col_starts: axis_starts(width, patch, n_cols, "cols")?,
    })
}

/// Copies out every grid patch, row-major.
pub fn extract(cube: &HyperCube, grid: &PatchGrid) -> Result<Vec<HyperCube>> {
    if (cube.height(), cube.width()) != (grid.height, grid.width) {
        bail!(
            Data,
            "cube {}x{} does not match grid {}x{}",
            cube.height(),
            cube.width(),
            grid.height,
            grid.width
        );
    }
    let (p, bands) = (grid.patch, cube.bands());
    let row_len = p * bands;
    Ok(grid
        .origins()
        .map(|(r0, c0)| {
            let mut data = Vec::with_capacity(p * row_len);
            for r in r0..r0 + p {
                let start = (r * cube.width() + c0) * bands;
                data.extend_from_slice(&cube.data()[start..start + row_len]);
            }
            HyperCube::from_parts_unchecked(p, p, bands, data, cube.stage())
        })
        .collect())
}

/// Per-pixel class probabilities, stored pixel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
}

impl ScoreMap {
    pub const SUM_TOLERANCE: f32 = 1e-5;

    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if classes == 0 || data.len() != height * width * classes {
            bail!(Data, "score payload does not match {height}x{width}x{classes}");
        }
        for px in data.chunks_exact(classes) {
            if px.iter().any(|v| !(0.0..=1.0).contains(v)) {
                bail!(Data, "score outside [0, 1]");
            }
            let sum: f32 = px.iter().sum();
            if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
                bail!(Data, "pixel scores sum to {sum}");
            }
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        classes: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * classes);
        Self {
            height,
            width,
            classes,
            data,
        }
    }

    /// Constant map holding `scores` at every pixel.
    pub fn uniform(height: usize, width: usize, scores: &[f32]) -> Result<Self> {
        let data = scores
            .iter()
            .copied()
            .cycle()
            .take(height * width * scores.len())
            .collect();
        Self::new(height, width, scores.len(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.classes;
        &self.data[start..start + self.classes]
    }

    pub fn pixels(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.classes)
    }

    /// Views the map as a normalized cube (one band per class).
    pub fn to_cube(&self) -> HyperCube {
        HyperCube::from_parts_unchecked(
            self.height,
            self.width,
            self.classes,
            self.data.clone(),
            crate::hypercube::Stage::Normalized,
        )
    }
}

/// Averages overlapping patch scores back onto the full image.
///
/// Overlaps are blended by the arithmetic mean of probabilities, accumulated
/// in `f64`, then each pixel is renormalized to sum to one.
pub fn stitch(patch_scores: &[ScoreMap], grid: &PatchGrid) -> Result<ScoreMap> {
    if patch_scores.len() != grid.len() {
        bail!(
            Data,
            "{} patch score maps for a {}-patch grid",
            patch_scores.len(),
            grid.len()
        );
    }
    let classes = patch_scores.first().map(ScoreMap::classes).unwrap_or(0);
    let p = grid.patch;
    for s in patch_scores {
        if (s.height, s.width, s.classes) != (p, p, classes) {
            bail!(
                Data,
                "patch score {}x{}x{} does not match {p}x{p}x{classes}",
                s.height,
                s.width,
                s.classes
            );
        }
    }
    let (h, w) = (grid.height, grid.width);
    let mut sums = vec![0f64; h * w * classes];
    let mut counts = vec![0u32; h * w];
    for ((r0, c0), scores) in grid.origins().zip(patch_scores) {
        for pr in 0..p {
            for pc in 0..p {
                let px = (r0 + pr) * w + c0 + pc;
                counts[px] += 1;
                let acc = &mut sums[px * classes..(px + 1) * classes];
                for (a, &v) in acc.iter_mut().zip(scores.pixel(pr, pc)) {
                    *a += v as f64;
                }
            }
        }
    }
    let mut data = Vec::with_capacity(h * w * classes);
    for (acc, &n) in sums.chunks_exact(classes).zip(&counts) {
        if n == 0 {
            bail!(Data, "grid leaves pixels uncovered");
        }
        let mean: Vec<f64> = acc.iter().map(|a| a / n as f64).collect();
        let total: f64 = mean.iter().sum();
        if total > 0.0 {
            data.extend(mean.iter().map(|m| (m / total) as f32));
        } else {
            data.extend(std::iter::repeat_n(1.0 / classes as f32, classes));
        }
    }
    Ok(ScoreMap::from_parts_unchecked(h, w, classes, data))
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_map(scores: &ScoreMap) -> LabelMap {
    let labels = scores.pixels().map(|px| argmax(px) as u8).collect();
    LabelMap::new(scores.height, scores.width, labels).expect("dims match")
}

#[inline]
pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
