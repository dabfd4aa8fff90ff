//! Post-training INT8 quantization with power-of-two scales.
//!
//! A value `x` with fraction bits `f` is stored as `round(x·2^f)`. Batch norm
//! is folded into the preceding convolution first. Activations are quantized
//! at the output of each weighted layer (after its ReLU, if any) and named
//! after that layer; biases live at the accumulator fraction
//! `f_weight + f_input`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::fcn::{
    conv::softmax_hwc, fold_batchnorm, run_graph, FeatureMap, Layer, LayerGraph, Tensor, TensorData,
    WeightStore,
};
use crate::hypercube::{HyperCube, LabelMap, IGNORE};
use crate::patchwork::ScoreMap;

pub const MIN_FRACTION: i32 = -32;
pub const MAX_FRACTION: i32 = 32;
/// Activation name used for the network input.
pub const INPUT: &str = "input";

/// Fraction bits per weight tensor (`<layer>.w`) and per activation
/// (`input` or a weighted layer name).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantParams {
    pub weights: BTreeMap<String, i32>,
    pub activations: BTreeMap<String, i32>,
}

/// Largest `f` with `127·2^(−f) ≥ maxabs`, clamped to ±32; 7 for zero.
pub fn fraction_for(maxabs: f64) -> i32 {
    if !(maxabs > 0.0) {
        return 7;
    }
    let mut f = (127.0 / maxabs).log2().floor() as i32;
    // guard against log2 landing one step off near exact powers of two
    while f > MIN_FRACTION && 127.0 * 2f64.powi(-f) < maxabs {
        f -= 1;
    }
    while f < MAX_FRACTION && 127.0 * 2f64.powi(-(f + 1)) >= maxabs {
        f += 1;
    }
    f.clamp(MIN_FRACTION, MAX_FRACTION)
}

fn round_away(x: f64) -> f64 {
    // f64::round already rounds half away from zero
    x.round()
}

/// `clamp(round(x·2^f), −128, 127)`.
pub fn quantize_value(x: f32, f: i32) -> i8 {
    round_away(x as f64 * 2f64.powi(f)).clamp(-128.0, 127.0) as i8
}

pub fn dequantize_value(q: i32, f: i32) -> f32 {
    (q as f64 * 2f64.powi(-f)) as f32
}

/// Rounding right shift by `s` (half away from zero); left shift for `s < 0`.
pub fn shift_round(v: i64, s: i32) -> i64 {
    if s <= 0 {
        v << (-s).min(62)
    } else if s >= 63 {
        0
    } else {
        let half = 1i64 << (s - 1);
        if v >= 0 {
            (v + half) >> s
        } else {
            -((-v + half) >> s)
        }
    }
}

/// Index of the layer whose output is the activation point of each weighted
/// layer: the following ReLU if there is one, else the layer itself.
fn activation_points(graph: &LayerGraph) -> BTreeMap<usize, String> {
    let mut points = BTreeMap::new();
    for (i, layer) in graph.layers.iter().enumerate() {
        if layer.is_weighted() {
            let at = if graph.layers.get(i + 1) == Some(&Layer::Relu) {
                i + 1
            } else {
                i
            };
            points.insert(at, layer.name().unwrap().to_string());
        }
    }
    points
}

/// Measures weight and activation ranges over `patches` with the float
/// network (batch norm folded) and derives fraction bits.
pub fn calibrate(graph: &LayerGraph, weights: &WeightStore, patches: &[HyperCube]) -> Result<QuantParams> {
    if patches.is_empty() {
        bail!(Config, "calibration needs at least one patch");
    }
    let (fg, fw) = fold_batchnorm(graph, weights)?;
    let mut params = QuantParams::default();
    for layer in fg.weighted_layers() {
        let name = format!("{}.w", layer.name().unwrap());
        let maxabs = match fw.get(&name).map(|t| &t.data) {
            Some(TensorData::F32(v)) => v.iter().fold(0f64, |m, &x| m.max(x.abs() as f64)),
            _ => bail!(Weight, "missing float tensor {name:?}"),
        };
        params.weights.insert(name, fraction_for(maxabs));
    }
    let points = activation_points(&fg);
    let mut maxabs: BTreeMap<String, f64> = BTreeMap::new();
    for patch in patches {
        let input = FeatureMap::from_cube(patch);
        let m = maxabs.entry(INPUT.to_string()).or_default();
        *m = m.max(input.max_abs() as f64);
        run_graph(&fg, &fw, input, |i, t| {
            if let Some(name) = points.get(&i) {
                let m = maxabs.entry(name.clone()).or_default();
                *m = m.max(t.max_abs() as f64);
            }
        })?;
    }
    params.activations = maxabs
        .into_iter()
        .map(|(k, m)| (k, fraction_for(m)))
        .collect();
    Ok(params)
}

/// Input fraction of every weighted layer, following max-pool (unchanged),
/// skips and concatenation (both sides requantized to the smaller fraction).
fn input_fractions(graph: &LayerGraph, act: impl Fn(&str) -> Result<i32>) -> Result<BTreeMap<String, i32>> {
    let mut cur = act(INPUT)?;
    let mut stack = Vec::new();
    let mut out = BTreeMap::new();
    for layer in &graph.layers {
        match layer {
            Layer::Conv { name, .. } | Layer::UpConv { name, .. } => {
                out.insert(name.clone(), cur);
                cur = act(name)?;
            }
            Layer::SaveSkip => stack.push(cur),
            Layer::Concat => {
                let skip = stack
                    .pop()
                    .ok_or_else(|| crate::Error::Config("concat without saved skip".into()))?;
                cur = cur.min(skip);
            }
            _ => {}
        }
    }
    Ok(out)
}

fn weight_dims(layer: &Layer) -> Vec<usize> {
    match *layer {
        Layer::Conv {
            c_in, c_out, kernel, ..
        } => vec![c_out, c_in, kernel, kernel],
        Layer::UpConv { c_in, c_out, .. } => vec![c_in, c_out, 2, 2],
        _ => unreachable!(),
    }
}

fn c_out(layer: &Layer) -> usize {
    match *layer {
        Layer::Conv { c_out, .. } | Layer::UpConv { c_out, .. } => c_out,
        _ => unreachable!(),
    }
}

/// Converts float weights to i8 weights and i32 biases, recording every
/// fraction in the metadata (`qf.<tensor>`, `qf.act.<layer>`).
pub fn quantize_weights(graph: &LayerGraph, weights: &WeightStore, params: &QuantParams) -> Result<WeightStore> {
    let (fg, fw) = if graph.has_batchnorm() {
        fold_batchnorm(graph, weights)?
    } else {
        (graph.clone(), weights.clone())
    };
    let act = |name: &str| -> Result<i32> {
        match params.activations.get(name) {
            Some(&f) => Ok(f),
            None => bail!(Config, "no activation fraction for {name:?}"),
        }
    };
    let f_in = input_fractions(&fg, act)?;
    let mut out = WeightStore::new();
    out.metadata = fw
        .metadata
        .iter()
        .filter(|(k, _)| !k.starts_with("qf."))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    out.set_meta(format!("qf.act.{INPUT}"), act(INPUT)?);
    for layer in fg.weighted_layers() {
        let name = layer.name().unwrap();
        let dims = weight_dims(layer);
        let (wname, bname) = (format!("{name}.w"), format!("{name}.b"));
        let Some(&fwt) = params.weights.get(&wname) else {
            bail!(Config, "no weight fraction for {wname:?}");
        };
        let fb = fwt + f_in[name];
        let w = fw.f32_tensor(&wname, &dims)?;
        let b = fw.f32_tensor(&bname, &[c_out(layer)])?;
        let wq = w.iter().map(|&x| quantize_value(x, fwt)).collect();
        let bq = b
            .iter()
            .map(|&x| round_away(x as f64 * 2f64.powi(fb)).clamp(i32::MIN as f64, i32::MAX as f64) as i32)
            .collect();
        let dims32 = dims.iter().map(|&d| d as u32).collect();
        out.insert(wname.clone(), Tensor::new(dims32, TensorData::I8(wq))?)?;
        out.insert(bname.clone(), Tensor::new(vec![c_out(layer) as u32], TensorData::I32(bq))?)?;
        out.set_meta(format!("qf.{wname}"), fwt);
        out.set_meta(format!("qf.{bname}"), fb);
        out.set_meta(format!("qf.act.{name}"), act(name)?);
    }
    Ok(out)
}

/// Calibrates and quantizes in one step.
pub fn quantize_model(
    graph: &LayerGraph,
    weights: &WeightStore,
    patches: &[HyperCube],
) -> Result<(QuantParams, WeightStore)> {
    let params = calibrate(graph, weights, patches)?;
    let q = quantize_weights(graph, weights, &params)?;
    Ok((params, q))
}

/// Integer activation map, channel-major.
#[derive(Debug, Clone, PartialEq, Eq)]
struct QMap {
    channels: usize,
    height: usize,
    width: usize,
    frac: i32,
    data: Vec<i8>,
}

impl QMap {
    fn requantize(&self, frac: i32, stats: &mut SaturationStats) -> QMap {
        if frac == self.frac {
            return self.clone();
        }
        let data = self
            .data
            .iter()
            .map(|&v| stats.clamp(shift_round(v as i64, self.frac - frac)))
            .collect();
        QMap {
            frac,
            data,
            ..*self
        }
    }
}

/// Count of activation values clipped to the i8 range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationStats {
    pub saturated: u64,
    pub total: u64,
}

impl SaturationStats {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.saturated as f64 / self.total as f64
        }
    }

    fn clamp(&mut self, v: i64) -> i8 {
        self.total += 1;
        if !(-128..=127).contains(&v) {
            self.saturated += 1;
        }
        v.clamp(-128, 127) as i8
    }
}

/// Integer cross-correlation with "same" zero padding; returns accumulators.
fn conv_int(x: &QMap, w: &[i8], c_out: usize, k: usize, bias: &[i32]) -> Vec<i64> {
    let (h, wd, c_in) = (x.height, x.width, x.channels);
    let pad = k / 2;
    let n = h * wd;
    let mut out = vec![0i64; c_out * n];
    out.par_chunks_mut(n).enumerate().for_each(|(co, acc)| {
        acc.fill(bias[co] as i64);
        for ci in 0..c_in {
            let plane = &x.data[ci * n..(ci + 1) * n];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((co * c_in + ci) * k + ky) * k + kx] as i64;
                    if wv == 0 {
                        continue;
                    }
                    let x0 = pad.saturating_sub(kx);
                    let x1 = (wd + pad).saturating_sub(kx).min(wd);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in 0..h {
                        let iy = y + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let row = &plane[(iy - pad) * wd..(iy - pad + 1) * wd];
                        let ix0 = x0 + kx - pad;
                        let a = &mut acc[y * wd + x0..y * wd + x1];
                        for (o, &v) in a.iter_mut().zip(&row[ix0..ix0 + (x1 - x0)]) {
                            *o += wv * v as i64;
                        }
                    }
                }
            }
        }
    });
    out
}

fn up_conv_int(x: &QMap, w: &[i8], c_out: usize, bias: &[i32]) -> Vec<i64> {
    let (h, wd, c_in) = (x.height, x.width, x.channels);
    let ow = 2 * wd;
    let mut out = vec![0i64; c_out * 4 * h * wd];
    out.par_chunks_mut(4 * h * wd).enumerate().for_each(|(co, acc)| {
        acc.fill(bias[co] as i64);
        for ci in 0..c_in {
            let plane = &x.data[ci * h * wd..(ci + 1) * h * wd];
            for ky in 0..2 {
                for kx in 0..2 {
                    let wv = w[((ci * c_out + co) * 2 + ky) * 2 + kx] as i64;
                    for y in 0..h {
                        let orow = (2 * y + ky) * ow;
                        for xx in 0..wd {
                            acc[orow + 2 * xx + kx] += wv * plane[y * wd + xx] as i64;
                        }
                    }
                }
            }
        }
    });
    out
}

fn max_pool_int(x: &QMap) -> Result<QMap> {
    let (h, w) = (x.height, x.width);
    if h % 2 != 0 || w % 2 != 0 {
        bail!(Data, "max pooling needs even dims, got {h}x{w}");
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut data = Vec::with_capacity(x.channels * oh * ow);
    for ch in 0..x.channels {
        let p = &x.data[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                data.push(p[i].max(p[i + 1]).max(p[i + w]).max(p[i + w + 1]));
            }
        }
    }
    Ok(QMap {
        height: oh,
        width: ow,
        data,
        ..*x
    })
}

fn meta_fraction(store: &WeightStore, key: &str) -> Result<i32> {
    let Some(v) = store.meta(key) else {
        bail!(Weight, "missing quantization metadata {key:?}");
    };
    match v.parse::<i32>() {
        Ok(f) if (2 * MIN_FRACTION..=2 * MAX_FRACTION).contains(&f) => Ok(f),
        _ => bail!(Weight, "bad quantization metadata {key}={v:?}"),
    }
}

/// Integer-only inference. `graph` may still contain batch norm; it is
/// dropped because `qweights` hold folded convolutions.
pub fn forward_quantized(graph: &LayerGraph, qweights: &WeightStore, patch: &HyperCube) -> Result<ScoreMap> {
    forward_quantized_with_stats(graph, qweights, patch).map(|(s, _)| s)
}

pub fn forward_quantized_with_stats(
    graph: &LayerGraph,
    qweights: &WeightStore,
    patch: &HyperCube,
) -> Result<(ScoreMap, SaturationStats)> {
    let graph = graph.without_batchnorm();
    if patch.bands() != graph.in_channels {
        bail!(
            Data,
            "input has {} bands, graph expects {}",
            patch.bands(),
            graph.in_channels
        );
    }
    let m = graph.spatial_multiple;
    if patch.height() % m != 0 || patch.width() % m != 0 {
        bail!(Data, "input {}x{} is not a multiple of {m}", patch.height(), patch.width());
    }
    let f_in = meta_fraction(qweights, &format!("qf.act.{INPUT}"))?;
    let mut stats = SaturationStats::default();
    let input = FeatureMap::from_cube(patch);
    let mut x = QMap {
        channels: input.channels,
        height: input.height,
        width: input.width,
        frac: f_in,
        data: input.data.iter().map(|&v| quantize_value(v, f_in)).collect(),
    };
    let mut skips: Vec<QMap> = Vec::new();
    let mut logits: Option<FeatureMap> = None;
    for (i, layer) in graph.layers.iter().enumerate() {
        match layer {
            Layer::Conv { name, .. } | Layer::UpConv { name, .. } => {
                let dims = weight_dims(layer);
                let co = c_out(layer);
                let w = qweights.i8_tensor(&format!("{name}.w"), &dims)?;
                let b = qweights.i32_tensor(&format!("{name}.b"), &[co])?;
                let fw = meta_fraction(qweights, &format!("qf.{name}.w"))?;
                let fb = meta_fraction(qweights, &format!("qf.{name}.b"))?;
                if fb != fw + x.frac {
                    bail!(
                        Weight,
                        "bias fraction of {name} is {fb}, expected {}",
                        fw + x.frac
                    );
                }
                let (acc, oh, ow) = match layer {
                    Layer::Conv { c_in, kernel, .. } => {
                        if *c_in != x.channels {
                            bail!(Data, "{name} expects {c_in} channels, got {}", x.channels);
                        }
                        (conv_int(&x, w, co, *kernel, b), x.height, x.width)
                    }
                    _ => (up_conv_int(&x, w, co, b), 2 * x.height, 2 * x.width),
                };
                if graph.layers.get(i + 1) == Some(&Layer::Softmax) {
                    let scale = 2f64.powi(-fb);
                    let data = acc.iter().map(|&a| (a as f64 * scale) as f32).collect();
                    logits = Some(FeatureMap::new(co, oh, ow, data)?);
                    continue;
                }
                let fo = meta_fraction(qweights, &format!("qf.act.{name}"))?;
                let relu = graph.layers.get(i + 1) == Some(&Layer::Relu);
                let data = acc
                    .iter()
                    .map(|&a| {
                        let v = shift_round(a, fb - fo);
                        stats.clamp(if relu { v.max(0) } else { v })
                    })
                    .collect();
                x = QMap {
                    channels: co,
                    height: oh,
                    width: ow,
                    frac: fo,
                    data,
                };
            }
            Layer::Relu => x.data.iter_mut().for_each(|v| *v = (*v).max(0)),
            Layer::MaxPool => x = max_pool_int(&x)?,
            Layer::SaveSkip => skips.push(x.clone()),
            Layer::Concat => {
                let skip = skips
                    .pop()
                    .ok_or_else(|| crate::Error::Config("concat without saved skip".into()))?;
                if (skip.height, skip.width) != (x.height, x.width) {
                    bail!(Data, "concat of mismatched spatial dims");
                }
                let f = skip.frac.min(x.frac);
                let a = skip.requantize(f, &mut stats);
                let b = x.requantize(f, &mut stats);
                let mut data = a.data;
                data.extend_from_slice(&b.data);
                x = QMap {
                    channels: a.channels + b.channels,
                    frac: f,
                    data,
                    ..b
                };
            }
            Layer::Softmax => {}
            Layer::BatchNorm { .. } => unreachable!(),
        }
    }
    let Some(logits) = logits else {
        bail!(Config, "graph does not end in a weighted layer followed by softmax");
    };
    let hwc = softmax_hwc(&logits);
    Ok((
        ScoreMap::from_parts_unchecked(logits.height, logits.width, logits.channels, hwc),
        stats,
    ))
}

/// Fraction of pixels, labeled in both maps, where the labels agree.
/// Returns 1.0 when no pixel is labeled in both.
pub fn agreement(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        bail!(
            Data,
            "label maps differ in size: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        );
    }
    let (mut same, mut total) = (0u64, 0u64);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        if x != IGNORE && y != IGNORE {
            total += 1;
            same += u64::from(x == y);
        }
    }
    Ok(if total == 0 { 1.0 } else { same as f64 / total as f64 })
}
