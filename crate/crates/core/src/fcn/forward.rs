use super::conv::{self, KernelShape};
use super::graph::{Layer, LayerGraph};
use super::weights::{Tensor, WeightStore};
use super::FeatureMap;
use crate::error::{bail, Result};
use crate::hypercube::HyperCube;
use crate::patchwork::ScoreMap;

/// Expected tensor shapes for every parameter of `graph`, in graph order.
pub fn tensor_shapes(graph: &LayerGraph) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for layer in &graph.layers {
        match layer {
            Layer::Conv {
                name,
                c_in,
                c_out,
                kernel,
            } => {
                out.push((format!("{name}.w"), vec![*c_out, *c_in, *kernel, *kernel]));
                out.push((format!("{name}.b"), vec![*c_out]));
            }
            Layer::UpConv { name, c_in, c_out } => {
                out.push((format!("{name}.w"), vec![*c_in, *c_out, 2, 2]));
                out.push((format!("{name}.b"), vec![*c_out]));
            }
            Layer::BatchNorm { name, channels } => {
                for p in ["gamma", "beta", "mean", "var"] {
                    out.push((format!("{name}.{p}"), vec![*channels]));
                }
            }
            _ => {}
        }
    }
    out
}

/// Runs `graph` on a channel-major input, calling `observe(layer_index, out)`
/// after every layer. Returns the final activation (probabilities when the
/// graph ends in softmax, laid out channel-major).
pub fn run_graph(
    graph: &LayerGraph,
    weights: &WeightStore,
    input: FeatureMap,
    mut observe: impl FnMut(usize, &FeatureMap),
) -> Result<FeatureMap> {
    if input.channels != graph.in_channels {
        bail!(
            Data,
            "input has {} channels, graph expects {}",
            input.channels,
            graph.in_channels
        );
    }
    let m = graph.spatial_multiple;
    if input.height % m != 0 || input.width % m != 0 {
        bail!(
            Data,
            "input {}x{} is not a multiple of {m}",
            input.height,
            input.width
        );
    }
    let mut x = input;
    let mut skips: Vec<FeatureMap> = Vec::new();
    for (i, layer) in graph.layers.iter().enumerate() {
        x = match layer {
            Layer::Conv {
                name,
                c_in,
                c_out,
                kernel,
            } => {
                let shape = KernelShape {
                    c_out: *c_out,
                    c_in: *c_in,
                    k_h: *kernel,
                    k_w: *kernel,
                };
                let w = weights.f32_tensor(&format!("{name}.w"), &[*c_out, *c_in, *kernel, *kernel])?;
                let b = weights.f32_tensor(&format!("{name}.b"), &[*c_out])?;
                conv::conv2d(&x, w, shape, b, kernel / 2)?
            }
            Layer::UpConv { name, c_in, c_out } => {
                let w = weights.f32_tensor(&format!("{name}.w"), &[*c_in, *c_out, 2, 2])?;
                let b = weights.f32_tensor(&format!("{name}.b"), &[*c_out])?;
                conv::up_conv2x2(&x, w, *c_out, b)?
            }
            Layer::BatchNorm { name, channels } => {
                let get = |p: &str| weights.f32_tensor(&format!("{name}.{p}"), &[*channels]);
                let (g, b, mu, var) = (get("gamma")?, get("beta")?, get("mean")?, get("var")?);
                conv::batch_norm(&mut x, g, b, mu, var, graph.bn_epsilon);
                x
            }
            Layer::Relu => {
                conv::relu(&mut x);
                x
            }
            Layer::MaxPool => conv::max_pool2x2(&x)?,
            Layer::SaveSkip => {
                skips.push(x.clone());
                x
            }
            Layer::Concat => {
                let skip = skips
                    .pop()
                    .ok_or_else(|| crate::Error::Config("concat without saved skip".into()))?;
                skip.concat(&x)?
            }
            Layer::Softmax => {
                let hwc = conv::softmax_hwc(&x);
                let (c, n) = (x.channels, x.plane_len());
                let mut chw = vec![0f32; c * n];
                for px in 0..n {
                    for ch in 0..c {
                        chw[ch * n + px] = hwc[px * c + ch];
                    }
                }
                FeatureMap::new(c, x.height, x.width, chw)?
            }
        };
        observe(i, &x);
    }
    Ok(x)
}

/// Converts channel-major probabilities into a [`ScoreMap`].
pub(crate) fn to_score_map(probs: &FeatureMap) -> ScoreMap {
    let (c, n) = (probs.channels, probs.plane_len());
    let mut data = vec![0f32; n * c];
    for ch in 0..c {
        for (px, &v) in probs.plane(ch).iter().enumerate() {
            data[px * c + ch] = v;
        }
    }
    ScoreMap::from_parts_unchecked(probs.height, probs.width, c, data)
}

/// Float inference on one patch; returns per-pixel class probabilities.
pub fn forward(graph: &LayerGraph, weights: &WeightStore, patch: &HyperCube) -> Result<ScoreMap> {
    if !matches!(graph.layers.last(), Some(Layer::Softmax)) {
        bail!(Config, "graph does not end in softmax");
    }
    let probs = run_graph(graph, weights, FeatureMap::from_cube(patch), |_, _| {})?;
    Ok(to_score_map(&probs))
}

/// Folds every conv→BN pair into the convolution. Returns the BN-free graph
/// and a store holding only conv/up-conv weights.
pub fn fold_batchnorm(graph: &LayerGraph, weights: &WeightStore) -> Result<(LayerGraph, WeightStore)> {
    let mut out = WeightStore::new();
    out.metadata = weights.metadata.clone();
    let mut last_weighted: Option<&Layer> = None;
    for layer in &graph.layers {
        match layer {
            Layer::Conv {
                name,
                c_in,
                c_out,
                kernel,
            } => {
                let dims = [*c_out, *c_in, *kernel, *kernel];
                let w = weights.f32_tensor(&format!("{name}.w"), &dims)?;
                let b = weights.f32_tensor(&format!("{name}.b"), &[*c_out])?;
                out.insert(format!("{name}.w"), Tensor::f32(&dims, w.to_vec())?)?;
                out.insert(format!("{name}.b"), Tensor::f32(&[*c_out], b.to_vec())?)?;
                last_weighted = Some(layer);
            }
            Layer::UpConv { name, c_in, c_out } => {
                let dims = [*c_in, *c_out, 2, 2];
                let w = weights.f32_tensor(&format!("{name}.w"), &dims)?;
                let b = weights.f32_tensor(&format!("{name}.b"), &[*c_out])?;
                out.insert(format!("{name}.w"), Tensor::f32(&dims, w.to_vec())?)?;
                out.insert(format!("{name}.b"), Tensor::f32(&[*c_out], b.to_vec())?)?;
                last_weighted = Some(layer);
            }
            Layer::BatchNorm { name, channels } => {
                let get = |p: &str| weights.f32_tensor(&format!("{name}.{p}"), &[*channels]);
                let (g, beta, mu, var) = (get("gamma")?, get("beta")?, get("mean")?, get("var")?);
                let Some(prev) = last_weighted.take() else {
                    bail!(Config, "batch norm {name} does not follow a convolution");
                };
                let scale: Vec<f64> = (0..*channels)
                    .map(|c| g[c] as f64 / (var[c] as f64 + graph.bn_epsilon as f64).sqrt())
                    .collect();
                let prev_name = prev.name().unwrap();
                let (wname, bname) = (format!("{prev_name}.w"), format!("{prev_name}.b"));
                let wt = out.get(&wname).unwrap().clone();
                let bt = out.get(&bname).unwrap().clone();
                let mut w = match wt.data {
                    super::TensorData::F32(v) => v,
                    _ => unreachable!(),
                };
                let mut b = match bt.data {
                    super::TensorData::F32(v) => v,
                    _ => unreachable!(),
                };
                // scale each output channel of the preceding kernel
                match prev {
                    Layer::Conv { c_out, .. } => {
                        let per = w.len() / c_out;
                        for (co, chunk) in w.chunks_exact_mut(per).enumerate() {
                            chunk.iter_mut().for_each(|v| *v = (*v as f64 * scale[co]) as f32);
                        }
                    }
                    Layer::UpConv { c_in, c_out, .. } => {
                        for ci in 0..*c_in {
                            for co in 0..*c_out {
                                for k in 0..4 {
                                    let i = (ci * c_out + co) * 4 + k;
                                    w[i] = (w[i] as f64 * scale[co]) as f32;
                                }
                            }
                        }
                    }
                    _ => unreachable!(),
                }
                for c in 0..*channels {
                    b[c] = (scale[c] * (b[c] as f64 - mu[c] as f64) + beta[c] as f64) as f32;
                }
                out.set(wname, Tensor::new(wt.dims, super::TensorData::F32(w))?);
                out.set(bname, Tensor::new(bt.dims, super::TensorData::F32(b))?);
            }
            _ => {}
        }
    }
    Ok((graph.without_batchnorm(), out))
}
