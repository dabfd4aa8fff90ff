//! Frames, cubes and label maps.

mod hsc;
mod labels;
pub(crate) mod pgm;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub use hsc::{load_cube, read_cube, save_cube, write_cube};
pub use labels::{remap_labels, ClassScheme, SchemeName, SOURCE_CLASSES};
pub use pgm::{load_labels, load_raw, save_labels, save_preview, save_raw, write_atomic, PALETTE};
pub use synth::{synth_scene, SceneSpec};

/// Label value for pixels excluded from training and evaluation.
pub const IGNORE: u8 = 255;

/// Side of the spectral macropixel.
pub const MOSAIC: usize = 5;

/// Number of spectral bands of the mosaic sensor.
pub const BANDS: usize = MOSAIC * MOSAIC;

/// Single-plane 16-bit sensor frame carrying the 5×5 spectral mosaic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMosaicFrame {
    height: usize,
    width: usize,
    data: Vec<u16>,
    pub exposure_tag: String,
}

impl RawMosaicFrame {
    pub fn new(height: usize, width: usize, data: Vec<u16>) -> Result<Self> {
        if height < MOSAIC || width < MOSAIC {
            bail!(Data, "frame {height}x{width} is smaller than one macropixel");
        }
        if data.len() != height * width {
            bail!(
                Data,
                "frame data has {} samples, expected {}",
                data.len(),
                height * width
            );
        }
        Ok(Self {
            height,
            width,
            data,
            exposure_tag: String::new(),
        })
    }

    pub fn filled(height: usize, width: usize, value: u16) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.exposure_tag = tag.into();
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }
}

/// Real-valued single plane, the output of reflectance correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Assignment of intra-macropixel offsets `(dr, dc)` to band indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u8>>", into = "Vec<Vec<u8>>")]
pub struct BandLayout([[u8; MOSAIC]; MOSAIC]);

impl BandLayout {
    /// Row-major layout: offset `(dr, dc)` holds band `5·dr + dc`.
    ///
    /// This is not validated against the real sensor's filter arrangement.
    pub fn row_major() -> Self {
        let mut cells = [[0u8; MOSAIC]; MOSAIC];
        for (dr, row) in cells.iter_mut().enumerate() {
            for (dc, cell) in row.iter_mut().enumerate() {
                *cell = (dr * MOSAIC + dc) as u8;
            }
        }
        Self(cells)
    }

    pub fn new(cells: [[u8; MOSAIC]; MOSAIC]) -> Result<Self> {
        let mut seen = [false; BANDS];
        for &b in cells.iter().flatten() {
            let b = b as usize;
            if b >= BANDS || seen[b] {
                bail!(Config, "band layout is not a bijection onto 0..{BANDS}");
            }
            seen[b] = true;
        }
        Ok(Self(cells))
    }

    #[inline]
    pub fn band_at(&self, dr: usize, dc: usize) -> usize {
        self.0[dr][dc] as usize
    }

    /// Inverse lookup: the `(dr, dc)` offset sampled by `band`.
    pub fn offset_of(&self, band: usize) -> (usize, usize) {
        for dr in 0..MOSAIC {
            for dc in 0..MOSAIC {
                if self.band_at(dr, dc) == band {
                    return (dr, dc);
                }
            }
        }
        unreachable!("layout is a bijection")
    }
}

impl Default for BandLayout {
    fn default() -> Self {
        Self::row_major()
    }
}

impl TryFrom<Vec<Vec<u8>>> for BandLayout {
    type Error = crate::Error;

    fn try_from(rows: Vec<Vec<u8>>) -> Result<Self> {
        if rows.len() != MOSAIC || rows.iter().any(|r| r.len() != MOSAIC) {
            bail!(Config, "band layout must be {MOSAIC}x{MOSAIC}");
        }
        let mut cells = [[0u8; MOSAIC]; MOSAIC];
        for (dst, src) in cells.iter_mut().zip(&rows) {
            dst.copy_from_slice(src);
        }
        Self::new(cells)
    }
}

impl From<BandLayout> for Vec<Vec<u8>> {
    fn from(layout: BandLayout) -> Self {
        layout.0.iter().map(|r| r.to_vec()).collect()
    }
}

/// Dark and white reference frames plus the sensor geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub dark: RawMosaicFrame,
    pub white: RawMosaicFrame,
    pub layout: BandLayout,
    pub crop_offset: (usize, usize),
}

impl CalibrationSet {
    pub fn new(
        dark: RawMosaicFrame,
        white: RawMosaicFrame,
        layout: BandLayout,
        crop_offset: (usize, usize),
    ) -> Result<Self> {
        if dark.height() != white.height() || dark.width() != white.width() {
            bail!(
                Data,
                "dark {}x{} and white {}x{} frames differ in size",
                dark.height(),
                dark.width(),
                white.height(),
                white.width()
            );
        }
        Ok(Self {
            dark,
            white,
            layout,
            crop_offset,
        })
    }
}

/// Processing stage of a [`HyperCube`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Reflectance,
    Aligned,
    Filtered,
    Normalized,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::Reflectance => 0,
            Stage::Aligned => 1,
            Stage::Filtered => 2,
            Stage::Normalized => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Stage::Reflectance,
            1 => Stage::Aligned,
            2 => Stage::Filtered,
            3 => Stage::Normalized,
            _ => return None,
        })
    }
}

/// `H×W×B` cube stored pixel-interleaved: `data[(r·W + c)·B + b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
    stage: Stage,
}

impl HyperCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f32>,
        stage: Stage,
    ) -> Result<Self> {
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(bands));
        if expected != Some(data.len()) {
            bail!(
                Data,
                "cube payload has {} values, expected {height}x{width}x{bands}",
                data.len()
            );
        }
        if bands == 0 {
            bail!(Data, "cube has no bands");
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            bail!(Data, "cube contains non-finite value {v}");
        }
        if stage == Stage::Normalized && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            bail!(Data, "normalized cube has values outside [0, 1]");
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
            stage,
        })
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: f32, stage: Stage) -> Self {
        Self::new(
            height,
            width,
            bands,
            vec![value; height * width * bands],
            stage,
        )
        .expect("constant cube is valid")
    }

    /// Builds a cube from `f(row, col, band)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        stage: Stage,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * bands);
        for r in 0..height {
            for c in 0..width {
                for b in 0..bands {
                    data.push(f(r, c, b));
                }
            }
        }
        Self::new(height, width, bands, data, stage)
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f32>,
        stage: Stage,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * bands);
        Self {
            height,
            width,
            bands,
            data,
            stage,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    /// Spectrum of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.data[start..start + self.bands]
    }

    /// Iterator over all spectra in row-major pixel order.
    pub fn pixels(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.bands)
    }

    /// Copies band `b` out as a dense `H×W` plane.
    pub fn band_plane(&self, band: usize) -> Vec<f32> {
        self.pixels().map(|px| px[band]).collect()
    }
}

/// Per-pixel class indices with [`IGNORE`] marking unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            bail!(
                Data,
                "label map has {} entries, expected {height}x{width}",
                labels.len()
            );
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Checks that every non-ignore label is below `classes`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        if let Some(&bad) = self
            .labels
            .iter()
            .find(|&&l| l != IGNORE && l as usize >= classes)
        {
            bail!(Data, "label {bad} out of range for {classes} classes");
        }
        Ok(())
    }

    /// Pixel count per class, ignore excluded.
    pub fn class_counts(&self, classes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; classes];
        for &l in &self.labels {
            if l != IGNORE && (l as usize) < classes {
                counts[l as usize] += 1;
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_rejects_duplicates() {
        let mut cells = [[0u8; 5]; 5];
        for (i, c) in cells.iter_mut().flatten().enumerate() {
            *c = i as u8;
        }
        assert!(BandLayout::new(cells).is_ok());
        cells[4][4] = 0;
        assert!(BandLayout::new(cells).is_err());
    }

    #[test]
    fn layout_offset_inverse() {
        let layout = BandLayout::row_major();
        for b in 0..BANDS {
            let (dr, dc) = layout.offset_of(b);
            assert_eq!(layout.band_at(dr, dc), b);
        }
    }

    #[test]
    fn layout_json_roundtrip() {
        let layout = BandLayout::row_major();
        let json = serde_json::to_string(&layout).unwrap();
        let back: BandLayout = serde_json::from_str(&json).unwrap();
        assert_eq!(layout, back);
        assert!(serde_json::from_str::<BandLayout>("[[0,1],[2,3]]").is_err());
    }

    #[test]
    fn frame_invariants() {
        assert!(RawMosaicFrame::new(4, 10, vec![0; 40]).is_err());
        assert!(RawMosaicFrame::new(5, 5, vec![0; 24]).is_err());
        assert!(RawMosaicFrame::new(5, 5, vec![0; 25]).is_ok());
    }

    #[test]
    fn normalized_cube_must_be_unit_range() {
        assert!(HyperCube::new(1, 1, 2, vec![0.0, 1.5], Stage::Normalized).is_err());
        assert!(HyperCube::new(1, 1, 2, vec![0.0, 1.5], Stage::Filtered).is_ok());
        assert!(HyperCube::new(1, 1, 2, vec![0.0, f32::NAN], Stage::Filtered).is_err());
    }

    #[test]
    fn label_validation() {
        let map = LabelMap::new(1, 3, vec![0, 2, IGNORE]).unwrap();
        assert!(map.validate(3).is_ok());
        assert!(map.validate(2).is_err());
        assert_eq!(map.class_counts(3), vec![1, 0, 1]);
    }
}
