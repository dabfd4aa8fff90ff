//! Seeded synthetic driving scenes rendered through the mosaic sensor.
//!
//! A scene is painted at cube resolution from simple primitives (sky band,
//! road trapezoid, lane-mark stripes, vegetation and object blobs), each
//! class carrying a 25-point reflectance signature. The reflectance cube is
//! then rendered into a 16-bit mosaic frame between synthetic dark and white
//! reference levels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::labels::{ROAD, ROAD_MARKS, SKY, VEGETATION};
use super::{
    BandLayout, CalibrationSet, HyperCube, LabelMap, RawMosaicFrame, Stage, BANDS, IGNORE,
    MOSAIC,
};
use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneClass {
    /// Source class ID in `1..=10`.
    pub id: u8,
    /// Reflectance per band in `[0, 1]`; generated from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Vec<f32>>,
}

impl SceneClass {
    pub fn new(id: u8) -> Self {
        Self {
            id,
            signature: None,
        }
    }

    pub fn with_signature(id: u8, signature: Vec<f32>) -> Self {
        Self {
            id,
            signature: Some(signature),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Cube rows.
    pub height: usize,
    /// Cube columns.
    pub width: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub crop_offset: (usize, usize),
    pub layout: BandLayout,
    /// The first class fills the background; the rest are painted on top.
    pub classes: Vec<SceneClass>,
    /// Additive Gaussian noise on reflectance.
    pub noise_sigma: f32,
    /// Relative illumination drop from the left to the right image edge.
    pub illumination_gradient: f32,
    pub mark_stripes: usize,
    pub blobs_per_class: usize,
    pub dark_level: u16,
    pub white_level: u16,
    /// Peak-to-peak fixed-pattern variation of the reference frames, in counts.
    pub reference_jitter: u16,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 216,
            width: 409,
            frame_height: 1088,
            frame_width: 2048,
            crop_offset: (4, 1),
            layout: BandLayout::row_major(),
            classes: [6, SKY, ROAD, ROAD_MARKS, VEGETATION, 4]
                .into_iter()
                .map(SceneClass::new)
                .collect(),
            noise_sigma: 0.01,
            illumination_gradient: 0.1,
            mark_stripes: 3,
            blobs_per_class: 2,
            dark_level: 1024,
            white_level: 52_000,
            reference_jitter: 400,
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            bail!(Config, "scene spec lists no classes");
        }
        let mut seen = [false; 11];
        for class in &self.classes {
            if !(1..=10).contains(&class.id) {
                bail!(Config, "scene class id {} outside 1..=10", class.id);
            }
            if std::mem::replace(&mut seen[class.id as usize], true) {
                bail!(Config, "scene class id {} listed twice", class.id);
            }
            if let Some(sig) = &class.signature {
                if sig.len() != BANDS || sig.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    bail!(
                        Config,
                        "signature of class {} must have {BANDS} values in [0, 1]",
                        class.id
                    );
                }
            }
        }
        if self.height < 8 || self.width < 8 {
            bail!(Config, "scene must be at least 8x8");
        }
        if self.crop_offset.0 + MOSAIC * self.height > self.frame_height
            || self.crop_offset.1 + MOSAIC * self.width > self.frame_width
        {
            bail!(Config, "scene does not fit inside the frame at the crop offset");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            bail!(Config, "noise sigma must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.illumination_gradient) {
            bail!(Config, "illumination gradient must lie in [0, 1)");
        }
        if self.dark_level as u32 + 2 * self.reference_jitter as u32 >= self.white_level as u32 {
            bail!(Config, "white level must exceed dark level plus jitter");
        }
        Ok(())
    }
}

/// Everything a synthetic scene produces, including the noiseless-geometry
/// reflectance cube it was rendered from.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub raw: RawMosaicFrame,
    /// Source class IDs with a one-pixel ignore ring at region boundaries.
    pub labels: LabelMap,
    pub calibration: CalibrationSet,
    pub truth: HyperCube,
    /// Signatures actually used, in `spec.classes` order.
    pub signatures: Vec<Vec<f32>>,
}

/// Renders `spec` deterministically for `seed`.
pub fn synth_scene(
    spec: &SceneSpec,
    seed: u64,
) -> Result<(RawMosaicFrame, LabelMap, CalibrationSet)> {
    let scene = render(spec, seed)?;
    Ok((scene.raw, scene.labels, scene.calibration))
}

/// Piecewise-linear signature through five random knots.
fn random_signature(rng: &mut ChaCha8Rng) -> Vec<f32> {
    const KNOTS: usize = 5;
    let knots: Vec<f32> = (0..KNOTS).map(|_| rng.random_range(0.1..0.9)).collect();
    let step = (BANDS - 1) as f32 / (KNOTS - 1) as f32;
    (0..BANDS)
        .map(|b| {
            let x = b as f32 / step;
            let i = (x.floor() as usize).min(KNOTS - 2);
            let t = x - i as f32;
            knots[i] * (1.0 - t) + knots[i + 1] * t
        })
        .collect()
}

fn paint_ellipse(map: &mut [u8], w: usize, h: usize, cy: f32, cx: f32, ry: f32, rx: f32, v: u8) {
    let r0 = (cy - ry).floor().max(0.0) as usize;
    let r1 = ((cy + ry).ceil() as usize).min(h - 1);
    let c0 = (cx - rx).floor().max(0.0) as usize;
    let c1 = ((cx + rx).ceil() as usize).min(w - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let dy = (r as f32 - cy) / ry;
            let dx = (c as f32 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                map[r * w + c] = v;
            }
        }
    }
}

/// Paints the class-index map (indices into `spec.classes`).
fn paint_regions(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (h, w) = (spec.height, spec.width);
    let mut map = vec![0u8; h * w];
    let horizon = (h as f32 * 0.3).round() as usize;
    let road_half = |r: usize| {
        let t = (r.saturating_sub(horizon)) as f32 / (h - horizon).max(1) as f32;
        (0.08 + 0.37 * t) * w as f32
    };
    let cx = w as f32 / 2.0;

    for (idx, class) in spec.classes.iter().enumerate().skip(1) {
        let v = idx as u8;
        match class.id {
            SKY => map[..horizon * w].fill(v),
            ROAD => {
                for r in horizon..h {
                    let half = road_half(r);
                    let c0 = (cx - half).round().max(0.0) as usize;
                    let c1 = ((cx + half).round() as usize).min(w);
                    map[r * w + c0..r * w + c1].fill(v);
                }
            }
            ROAD_MARKS => {
                let n = spec.mark_stripes.max(1);
                let top = horizon + (h - horizon) / 6;
                for i in 0..n {
                    let frac = 2.0 * (i + 1) as f32 / (n + 1) as f32 - 1.0;
                    for r in top..h {
                        let half = road_half(r);
                        let centre = cx + 0.7 * frac * half;
                        let sw = (0.04 * half).max(1.5);
                        let c0 = (centre - sw).round().max(0.0) as usize;
                        let c1 = ((centre + sw).round() as usize).min(w);
                        map[r * w + c0..r * w + c1].fill(v);
                    }
                }
            }
            _ => {
                // Vegetation hugs the image sides; other objects scatter below the horizon.
                for k in 0..spec.blobs_per_class.max(1) {
                    let ry = rng.random_range(0.06..0.12) * h as f32 + 3.0;
                    let rx = rng.random_range(0.04..0.09) * w as f32 + 3.0;
                    let cy = rng.random_range(horizon as f32..h as f32 - ry.min(h as f32 / 4.0));
                    let cx = if class.id == VEGETATION {
                        let side = if k % 2 == 0 { 0.08 } else { 0.92 };
                        side * w as f32 + rng.random_range(-0.03..0.03) * w as f32
                    } else {
                        rng.random_range(0.1..0.9) * w as f32
                    };
                    paint_ellipse(&mut map, w, h, cy, cx, ry, rx, v);
                }
            }
        }
    }
    map
}

/// Weak labeling: pixels with a differently-labeled 4-neighbour are ignored.
fn boundary_ring(regions: &[u8], h: usize, w: usize) -> Vec<bool> {
    let mut ring = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let v = regions[r * w + c];
            let differs = (r > 0 && regions[(r - 1) * w + c] != v)
                || (r + 1 < h && regions[(r + 1) * w + c] != v)
                || (c > 0 && regions[r * w + c - 1] != v)
                || (c + 1 < w && regions[r * w + c + 1] != v);
            ring[r * w + c] = differs;
        }
    }
    ring
}

/// Full render, exposing the reflectance cube and signatures as well.
pub fn render(spec: &SceneSpec, seed: u64) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height, spec.width);

    let signatures: Vec<Vec<f32>> = spec
        .classes
        .iter()
        .map(|c| {
            let generated = random_signature(&mut rng);
            c.signature.clone().unwrap_or(generated)
        })
        .collect();

    let regions = paint_regions(spec, &mut rng);
    let ring = boundary_ring(&regions, h, w);
    let labels: Vec<u8> = regions
        .iter()
        .zip(&ring)
        .map(|(&idx, &edge)| if edge { IGNORE } else { spec.classes[idx as usize].id })
        .collect();
    for class in &spec.classes {
        if !labels.contains(&class.id) {
            bail!(
                Config,
                "class {} has no labeled pixels at {h}x{w}; enlarge the scene",
                class.id
            );
        }
    }

    let noise = Normal::new(0.0f32, spec.noise_sigma.max(f32::MIN_POSITIVE))
        .map_err(|e| crate::Error::Config(e.to_string()))?;
    let mut truth = Vec::with_capacity(h * w * BANDS);
    for r in 0..h {
        for c in 0..w {
            let gain = 1.0 - spec.illumination_gradient * c as f32 / (w - 1) as f32;
            let sig = &signatures[regions[r * w + c] as usize];
            for &s in sig {
                let n = if spec.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                truth.push((s * gain + n).clamp(0.0, 1.0));
            }
        }
    }
    let truth = HyperCube::new(h, w, BANDS, truth, Stage::Reflectance)?;

    let (fh, fw) = (spec.frame_height, spec.frame_width);
    let jitter = spec.reference_jitter;
    let dark: Vec<u16> = (0..fh * fw)
        .map(|_| spec.dark_level + rng.random_range(0..=jitter))
        .collect();
    let white: Vec<u16> = (0..fh * fw)
        .map(|_| spec.white_level - rng.random_range(0..=jitter))
        .collect();

    let mut raw = dark.clone();
    let (or, oc) = spec.crop_offset;
    for r in 0..h {
        for c in 0..w {
            let px = truth.pixel(r, c);
            for dr in 0..MOSAIC {
                for dc in 0..MOSAIC {
                    let i = (or + MOSAIC * r + dr) * fw + oc + MOSAIC * c + dc;
                    let (d, wh) = (dark[i] as f32, white[i] as f32);
                    let v = d + px[spec.layout.band_at(dr, dc)] * (wh - d);
                    raw[i] = v.round().clamp(0.0, u16::MAX as f32) as u16;
                }
            }
        }
    }

    let tag = format!("synthetic seed={seed}");
    let raw = RawMosaicFrame::new(fh, fw, raw)?.with_tag(tag);
    let calibration = CalibrationSet::new(
        RawMosaicFrame::new(fh, fw, dark)?.with_tag("dark"),
        RawMosaicFrame::new(fh, fw, white)?.with_tag("white"),
        spec.layout,
        spec.crop_offset,
    )?;
    Ok(SynthScene {
        raw,
        labels: LabelMap::new(h, w, labels)?,
        calibration,
        truth,
        signatures,
    })
}
