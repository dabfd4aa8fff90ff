//! Raw mosaic frame to normalized cube.
//!
//! Stages run in a fixed order: crop, reflectance correction, partial
//! demosaicing, band alignment, spatial (median) filtering, band
//! normalization. Each stage is a pure function and is exposed on its own.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::hypercube::{
    BandLayout, CalibrationSet, HyperCube, Plane, RawMosaicFrame, Stage, BANDS, MOSAIC,
};

/// Cropped frame size; 1080/5 × 2045/5 gives the 216×409 cube.
pub const CROP_HEIGHT: usize = 1080;
pub const CROP_WIDTH: usize = 2045;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    PerBandMinmax,
    PerPixelMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Off,
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub crop_offset: (usize, usize),
    pub median_kernel: usize,
    pub normalization: Normalization,
    pub alignment: Alignment,
    /// Minimum usable `W − D`, as a fraction of the 16-bit full scale.
    pub epsilon_ref: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            crop_offset: (4, 1),
            median_kernel: 3,
            normalization: Normalization::PerBandMinmax,
            alignment: Alignment::Bilinear,
            epsilon_ref: 1e-6,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_kernel % 2 == 0 {
            bail!(Config, "median kernel must be odd, got {}", self.median_kernel);
        }
        if !(self.epsilon_ref > 0.0 && self.epsilon_ref.is_finite()) {
            bail!(Config, "epsilon_ref must be positive");
        }
        Ok(())
    }
}

/// Stage names in reporting order.
pub const STAGE_NAMES: [&str; 6] = [
    "Image cropping",
    "Reflectance correction",
    "Partial demosaicing",
    "Band alignment",
    "Spatial filtering",
    "Band normalization",
];

/// Wall-clock time per pipeline stage in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stages: Vec<(String, f64)>,
}

impl StageTiming {
    pub fn push(&mut self, name: &str, ms: f64) {
        self.stages.push((name.to_string(), ms));
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|(_, ms)| ms).sum()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.stages.iter().find(|(n, _)| n == name).map(|&(_, ms)| ms)
    }
}

/// Cuts the canonical 1080×2045 window at `offset`.
pub fn crop(frame: &RawMosaicFrame, offset: (usize, usize)) -> Result<RawMosaicFrame> {
    crop_region(frame, offset, (CROP_HEIGHT, CROP_WIDTH))
}

pub fn crop_region(
    frame: &RawMosaicFrame,
    (row, col): (usize, usize),
    (height, width): (usize, usize),
) -> Result<RawMosaicFrame> {
    if row + height > frame.height() || col + width > frame.width() {
        bail!(
            Config,
            "crop {height}x{width} at ({row},{col}) exceeds frame {}x{}",
            frame.height(),
            frame.width()
        );
    }
    let mut data = Vec::with_capacity(height * width);
    for r in row..row + height {
        let start = r * frame.width() + col;
        data.extend_from_slice(&frame.data()[start..start + width]);
    }
    let mut out = RawMosaicFrame::new(height, width, data)?;
    out.exposure_tag = frame.exposure_tag.clone();
    Ok(out)
}

/// `R = clamp((I − D)/(W − D), 0, 1)`; cells with `W − D` below the guard
/// read 0.
pub fn reflectance_correct(
    frame: &RawMosaicFrame,
    dark: &RawMosaicFrame,
    white: &RawMosaicFrame,
    epsilon_ref: f64,
) -> Result<Plane> {
    let dims = (frame.height(), frame.width());
    if (dark.height(), dark.width()) != dims || (white.height(), white.width()) != dims {
        bail!(
            Data,
            "reflectance inputs differ in size: frame {:?}, dark {:?}, white {:?}",
            dims,
            (dark.height(), dark.width()),
            (white.height(), white.width())
        );
    }
    let guard = epsilon_ref * u16::MAX as f64;
    let data = frame
        .data()
        .par_iter()
        .zip(dark.data().par_iter())
        .zip(white.data().par_iter())
        .map(|((&i, &d), &w)| {
            let span = w as f64 - d as f64;
            if span < guard {
                0.0
            } else {
                ((i as f64 - d as f64) / span).clamp(0.0, 1.0) as f32
            }
        })
        .collect();
    Ok(Plane {
        height: dims.0,
        width: dims.1,
        data,
    })
}

/// One sample per band per macropixel; resolution is not restored.
pub fn demosaic(frame: &Plane, layout: &BandLayout) -> Result<HyperCube> {
    if frame.height % MOSAIC != 0 || frame.width % MOSAIC != 0 {
        bail!(
            Data,
            "frame {}x{} is not a whole number of {MOSAIC}x{MOSAIC} macropixels",
            frame.height,
            frame.width
        );
    }
    let (h, w) = (frame.height / MOSAIC, frame.width / MOSAIC);
    let mut data = vec![0f32; h * w * BANDS];
    data.par_chunks_mut(w * BANDS)
        .enumerate()
        .for_each(|(r, row)| {
            for c in 0..w {
                let px = &mut row[c * BANDS..(c + 1) * BANDS];
                for dr in 0..MOSAIC {
                    for dc in 0..MOSAIC {
                        px[layout.band_at(dr, dc)] = frame.get(MOSAIC * r + dr, MOSAIC * c + dc);
                    }
                }
            }
        });
    Ok(HyperCube::from_parts_unchecked(
        h,
        w,
        BANDS,
        data,
        Stage::Reflectance,
    ))
}

/// Bilinear sample with replicated borders.
#[inline]
fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| plane[r * w + c] as f64;
    let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
    let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
    (top * (1.0 - ty) + bottom * ty) as f32
}

/// Co-registers bands by shifting each one toward the macropixel centre.
///
/// A band sampled at offset `(dr, dc)` is resampled at
/// `(r + (2 − dr)/5, c + (2 − dc)/5)`.
pub fn align_bands(cube: &HyperCube, layout: &BandLayout) -> Result<HyperCube> {
    if cube.stage() != Stage::Reflectance {
        bail!(Data, "band alignment expects a reflectance cube, got {:?}", cube.stage());
    }
    if cube.bands() != BANDS {
        bail!(Data, "band alignment needs {BANDS} bands, got {}", cube.bands());
    }
    let (h, w) = (cube.height(), cube.width());
    let centre = (MOSAIC / 2) as f64;
    let planes: Vec<Vec<f32>> = (0..BANDS)
        .into_par_iter()
        .map(|b| {
            let src = cube.band_plane(b);
            let (dr, dc) = layout.offset_of(b);
            let (sy, sx) = (
                (centre - dr as f64) / MOSAIC as f64,
                (centre - dc as f64) / MOSAIC as f64,
            );
            if sy == 0.0 && sx == 0.0 {
                return src;
            }
            let mut out = Vec::with_capacity(h * w);
            for r in 0..h {
                for c in 0..w {
                    out.push(bilinear(&src, h, w, r as f64 + sy, c as f64 + sx));
                }
            }
            out
        })
        .collect();
    Ok(interleave(h, w, &planes, Stage::Aligned))
}

fn interleave(h: usize, w: usize, planes: &[Vec<f32>], stage: Stage) -> HyperCube {
    let bands = planes.len();
    let mut data = vec![0f32; h * w * bands];
    for (b, plane) in planes.iter().enumerate() {
        for (px, &v) in plane.iter().enumerate() {
            data[px * bands + b] = v;
        }
    }
    HyperCube::from_parts_unchecked(h, w, bands, data, stage)
}

/// Integer key with the same order as `f32::total_cmp`.
fn order_key(v: f32) -> i32 {
    let b = v.to_bits() as i32;
    b ^ (((b >> 31) as u32) >> 1) as i32
}

fn from_order_key(k: i32) -> f32 {
    f32::from_bits((k ^ (((k >> 31) as u32) >> 1) as i32) as u32)
}

fn sort3(a: i32, b: i32, c: i32) -> (i32, i32, i32) {
    let (lo, hi) = (a.min(b), a.max(b));
    (lo.min(c), hi.min(c).max(lo), hi.max(c))
}

/// 3×3 median as the median of (max of column minima, median of column
/// medians, min of column maxima), with each column triple sorted once.
fn median3_plane(src: &[f32], h: usize, w: usize) -> Vec<f32> {
    let keys: Vec<i32> = src.iter().map(|&v| order_key(v)).collect();
    let (mut lo, mut mid, mut hi) = (vec![0i32; w], vec![0i32; w], vec![0i32; w]);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let row = |y: usize| &keys[y * w..(y + 1) * w];
        let (up, here, down) = (row(r.saturating_sub(1)), row(r), row((r + 1).min(h - 1)));
        for c in 0..w {
            (lo[c], mid[c], hi[c]) = sort3(up[c], here[c], down[c]);
        }
        for c in 0..w {
            let (l, rr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let a = lo[l].max(lo[c]).max(lo[rr]);
            let b = sort3(mid[l], mid[c], mid[rr]).1;
            let z = hi[l].min(hi[c]).min(hi[rr]);
            out.push(from_order_key(sort3(a, b, z).1));
        }
    }
    out
}

fn median_plane(src: &[f32], h: usize, w: usize, k: usize) -> Vec<f32> {
    if k == 3 {
        median3_plane(src, h, w)
    } else {
        median_select(src, h, w, k)
    }
}

fn median_select(src: &[f32], h: usize, w: usize, k: usize) -> Vec<f32> {
    let half = (k / 2) as isize;
    let mut window = Vec::with_capacity(k * k);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            window.clear();
            for dy in -half..=half {
                let y = (r + dy).clamp(0, h as isize - 1) as usize;
                for dx in -half..=half {
                    let x = (c + dx).clamp(0, w as isize - 1) as usize;
                    window.push(src[y * w + x]);
                }
            }
            let mid = window.len() / 2;
            let (_, m, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
            out.push(*m);
        }
    }
    out
}

/// Per-band `k×k` median with replicated borders.
pub fn median_filter(cube: &HyperCube, k: usize) -> Result<HyperCube> {
    if k % 2 == 0 {
        bail!(Config, "median kernel must be odd, got {k}");
    }
    if !matches!(cube.stage(), Stage::Aligned | Stage::Reflectance) {
        bail!(Data, "median filter expects an aligned or reflectance cube");
    }
    let (h, w) = (cube.height(), cube.width());
    if k == 1 {
        return Ok(HyperCube::from_parts_unchecked(
            h,
            w,
            cube.bands(),
            cube.data().to_vec(),
            Stage::Filtered,
        ));
    }
    let planes: Vec<Vec<f32>> = (0..cube.bands())
        .into_par_iter()
        .map(|b| median_plane(&cube.band_plane(b), h, w, k))
        .collect();
    Ok(interleave(h, w, &planes, Stage::Filtered))
}

/// Maps a filtered cube into `[0, 1]`.
pub fn normalize(cube: &HyperCube, mode: Normalization) -> Result<HyperCube> {
    if cube.stage() != Stage::Filtered {
        bail!(Data, "normalization expects a filtered cube, got {:?}", cube.stage());
    }
    let bands = cube.bands();
    let mut data = cube.data().to_vec();
    match mode {
        Normalization::PerBandMinmax => {
            let mut lo = vec![f32::INFINITY; bands];
            let mut hi = vec![f32::NEG_INFINITY; bands];
            for px in cube.pixels() {
                for (b, &v) in px.iter().enumerate() {
                    lo[b] = lo[b].min(v);
                    hi[b] = hi[b].max(v);
                }
            }
            for px in data.chunks_exact_mut(bands) {
                for (b, v) in px.iter_mut().enumerate() {
                    let span = hi[b] - lo[b];
                    *v = if span > 0.0 {
                        ((*v - lo[b]) / span).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                }
            }
        }
        Normalization::PerPixelMax => {
            for px in data.chunks_exact_mut(bands) {
                let max = px.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                for v in px.iter_mut() {
                    *v = if max > 0.0 {
                        (*v / max).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    HyperCube::new(cube.height(), cube.width(), bands, data, Stage::Normalized)
}

/// Runs all six stages, timing each.
pub fn run_pipeline(
    raw: &RawMosaicFrame,
    calib: &CalibrationSet,
    config: &PreprocessConfig,
) -> Result<(HyperCube, StageTiming)> {
    config.validate()?;
    let mut timing = StageTiming::default();
    let mut clock = Instant::now();
    let mut lap = |timing: &mut StageTiming, i: usize| {
        let now = Instant::now();
        timing.push(STAGE_NAMES[i], (now - clock).as_secs_f64() * 1e3);
        clock = now;
    };

    let frame = crop(raw, config.crop_offset)?;
    let dark = crop(&calib.dark, config.crop_offset)?;
    let white = crop(&calib.white, config.crop_offset)?;
    lap(&mut timing, 0);

    let refl = reflectance_correct(&frame, &dark, &white, config.epsilon_ref)?;
    lap(&mut timing, 1);

    let cube = demosaic(&refl, &calib.layout)?;
    lap(&mut timing, 2);

    let cube = match config.alignment {
        Alignment::Bilinear => align_bands(&cube, &calib.layout)?,
        Alignment::Off => cube,
    };
    lap(&mut timing, 3);

    let cube = median_filter(&cube, config.median_kernel)?;
    lap(&mut timing, 4);

    let cube = normalize(&cube, config.normalization)?;
    lap(&mut timing, 5);

    Ok((cube, timing))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(h: usize, w: usize, f: impl Fn(usize, usize) -> u16) -> RawMosaicFrame {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        RawMosaicFrame::new(h, w, data).unwrap()
    }

    #[test]
    fn median3_fast_path_matches_selection() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for (h, w) in [(1, 1), (1, 5), (4, 1), (7, 9), (16, 11)] {
            // few distinct values so ties and signed zeros are common
            let src: Vec<f32> = (0..h * w)
                .map(|_| [-0.0, 0.0, 0.25, -1.5, 3.0, 1e-30][rng.random_range(0..6)])
                .collect();
            let fast = median3_plane(&src, h, w);
            let slow = median_select(&src, h, w, 3);
            assert!(fast.iter().zip(&slow).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        for v in [f32::MIN, -1.0, -0.0, 0.0, f32::MIN_POSITIVE, 7.5, f32::MAX] {
            assert_eq!(from_order_key(order_key(v)).to_bits(), v.to_bits());
        }
    }

    #[test]
    fn crop_canonical() {
        let frame = raw(1088, 2048, |r, c| (r * 7 + c) as u16);
        let out = crop(&frame, (4, 1)).unwrap();
        assert_eq!((out.height(), out.width()), (1080, 2045));
        assert_eq!(out.get(0, 0), frame.get(4, 1));
        assert_eq!(out.get(1079, 2044), frame.get(1083, 2045));
    }

    #[test]
    fn crop_out_of_range() {
        let frame = RawMosaicFrame::filled(1088, 2048, 9).unwrap();
        assert!(matches!(crop(&frame, (9, 0)), Err(crate::Error::Config(_))));
        assert!(matches!(crop(&frame, (0, 4)), Err(crate::Error::Config(_))));
        let out = crop(&frame, (8, 3)).unwrap();
        assert!(out.data().iter().all(|&v| v == 9));
    }

    #[test]
    fn reflectance_targets() {
        let d = RawMosaicFrame::filled(5, 5, 1000).unwrap();
        let w = RawMosaicFrame::filled(5, 5, 3000).unwrap();
        let white = reflectance_correct(&w, &d, &w, 1e-6).unwrap();
        assert!(white.data.iter().all(|&v| v == 1.0));
        let dark = reflectance_correct(&d, &d, &w, 1e-6).unwrap();
        assert!(dark.data.iter().all(|&v| v == 0.0));
        let mid = RawMosaicFrame::filled(5, 5, 2000).unwrap();
        let half = reflectance_correct(&mid, &d, &w, 1e-6).unwrap();
        assert!(half.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn reflectance_guard_and_clamp() {
        let d = RawMosaicFrame::filled(5, 5, 1000).unwrap();
        let w = raw(5, 5, |r, _| if r == 0 { 1000 } else { 2000 });
        let i = RawMosaicFrame::filled(5, 5, 2500).unwrap();
        let out = reflectance_correct(&i, &d, &w, 1e-6).unwrap();
        assert!(out.data[..5].iter().all(|&v| v == 0.0));
        assert!(out.data[5..].iter().all(|&v| v == 1.0));
        let small = RawMosaicFrame::filled(6, 5, 0).unwrap();
        assert!(matches!(
            reflectance_correct(&small, &d, &w, 1e-6),
            Err(crate::Error::Data(_))
        ));
    }

    #[test]
    fn demosaic_direct_indexing() {
        let plane = Plane::from_fn(10, 15, |r, c| (5 * (r % 5) + c % 5) as f32);
        let cube = demosaic(&plane, &BandLayout::row_major()).unwrap();
        assert_eq!((cube.height(), cube.width(), cube.bands()), (2, 3, 25));
        for px in cube.pixels() {
            for (b, &v) in px.iter().enumerate() {
                assert_eq!(v, b as f32);
            }
        }
        assert!(demosaic(&Plane::from_fn(10, 14, |_, _| 0.0), &BandLayout::row_major()).is_err());
    }

    #[test]
    fn demosaic_canonical_dims() {
        let plane = Plane::from_fn(1080, 2045, |_, _| 0.25);
        let cube = demosaic(&plane, &BandLayout::row_major()).unwrap();
        assert_eq!((cube.height(), cube.width(), cube.bands()), (216, 409, 25));
        assert!(cube.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn alignment_shifts() {
        let layout = BandLayout::row_major();
        let cube =
            HyperCube::from_fn(12, 16, 25, Stage::Reflectance, |r, c, b| {
                if b == 12 {
                    (r * 16 + c) as f32
                } else {
                    c as f32
                }
            })
            .unwrap();
        let out = align_bands(&cube, &layout).unwrap();
        assert_eq!(out.stage(), Stage::Aligned);
        // centre band (2,2) is untouched
        for r in 0..12 {
            for c in 0..16 {
                assert_eq!(out.get(r, c, 12), cube.get(r, c, 12));
            }
        }
        // band at (2,0) sees a +0.4 column shift of the ramp
        let b = layout.band_at(2, 0);
        for r in 1..11 {
            for c in 1..14 {
                assert!((out.get(r, c, b) - (c as f32 + 0.4)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn alignment_keeps_constants() {
        let cube = HyperCube::filled(6, 7, 25, 0.3, Stage::Reflectance);
        let out = align_bands(&cube, &BandLayout::row_major()).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
    }

    #[test]
    fn median_cases() {
        let cube = HyperCube::from_fn(3, 3, 1, Stage::Aligned, |r, c, _| {
            if (r, c) == (1, 1) {
                9.0
            } else {
                0.0
            }
        })
        .unwrap();
        assert_eq!(median_filter(&cube, 3).unwrap().get(1, 1, 0), 0.0);
        let id = median_filter(&cube, 1).unwrap();
        assert_eq!(id.data(), cube.data());
        assert_eq!(id.stage(), Stage::Filtered);
        assert!(matches!(median_filter(&cube, 2), Err(crate::Error::Config(_))));
        let flat = HyperCube::filled(5, 5, 2, 0.7, Stage::Reflectance);
        assert_eq!(median_filter(&flat, 5).unwrap().data(), flat.data());
    }

    #[test]
    fn median_idempotent_on_piecewise_constant() {
        let cube = HyperCube::from_fn(20, 20, 1, Stage::Aligned, |r, c, _| {
            if r < 10 && c < 12 {
                0.2
            } else {
                0.8
            }
        })
        .unwrap();
        let once = median_filter(&cube, 3).unwrap();
        let back = HyperCube::new(20, 20, 1, once.data().to_vec(), Stage::Aligned).unwrap();
        let twice = median_filter(&back, 3).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn normalize_minmax() {
        let vals = [0.2f32, 0.45, 0.7];
        let cube = HyperCube::from_fn(1, 3, 2, Stage::Filtered, |_, c, b| {
            if b == 0 {
                vals[c]
            } else {
                0.6
            }
        })
        .unwrap();
        let out = normalize(&cube, Normalization::PerBandMinmax).unwrap();
        assert!((out.get(0, 1, 0) - 0.5).abs() < 1e-6);
        assert_eq!(out.get(0, 0, 0), 0.0);
        assert_eq!(out.get(0, 2, 0), 1.0);
        assert!((0..3).all(|c| out.get(0, c, 1) == 0.0));
    }

    #[test]
    fn normalize_per_pixel() {
        let cube = HyperCube::from_fn(1, 2, 5, Stage::Filtered, |_, c, b| {
            if c == 0 {
                0.1 * (b + 1) as f32
            } else {
                0.0
            }
        })
        .unwrap();
        let out = normalize(&cube, Normalization::PerPixelMax).unwrap();
        assert_eq!(out.get(0, 0, 4), 1.0);
        assert!((out.get(0, 0, 0) - 0.2).abs() < 1e-6);
        assert!(out.pixel(0, 1).iter().all(|&v| v == 0.0));
        let wrong = HyperCube::filled(1, 1, 1, 0.5, Stage::Aligned);
        assert!(normalize(&wrong, Normalization::PerPixelMax).is_err());
    }

    #[test]
    fn config_json_keys() {
        let json = r#"{"crop_offset":[4,1],"median_kernel":5,"normalization":"per_pixel_max",
                       "alignment":"off","epsilon_ref":1e-5}"#;
        let cfg: PreprocessConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.median_kernel, 5);
        assert_eq!(cfg.alignment, Alignment::Off);
        assert!(serde_json::from_str::<PreprocessConfig>(r#"{"median":3}"#).is_err());
        let partial: PreprocessConfig = serde_json::from_str(r#"{"median_kernel":1}"#).unwrap();
        assert_eq!(partial.crop_offset, (4, 1));
    }
}
