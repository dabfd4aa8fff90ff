use crate::error::{bail, Result};
use crate::hypercube::HyperCube;

/// Channel-major activation tensor: `data[(ch·H + r)·W + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            bail!(
                Data,
                "feature map payload {} does not match {channels}x{height}x{width}",
                data.len()
            );
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for ch in 0..channels {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(ch, r, c));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Transposes a pixel-interleaved cube into channel-major layout.
    pub fn from_cube(cube: &HyperCube) -> Self {
        let (h, w, b) = (cube.height(), cube.width(), cube.bands());
        let plane = h * w;
        let mut data = vec![0f32; b * plane];
        for (px, spectrum) in cube.pixels().enumerate() {
            for (band, &v) in spectrum.iter().enumerate() {
                data[band * plane + px] = v;
            }
        }
        Self {
            channels: b,
            height: h,
            width: w,
            data,
        }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn plane(&self, ch: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[ch * n..(ch + 1) * n]
    }

    #[inline]
    pub fn get(&self, ch: usize, row: usize, col: usize) -> f32 {
        self.data[(ch * self.height + row) * self.width + col]
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Channel-wise concatenation, `self` first.
    pub fn concat(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if (self.height, self.width) != (other.height, other.width) {
            bail!(
                Data,
                "cannot concatenate {}x{} with {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            );
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(FeatureMap {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }
}
