//! Fully convolutional segmentation network.

pub mod conv;
mod forward;
mod graph;
mod tensor;
pub mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use conv::{conv2d, KernelShape};
pub use forward::{fold_batchnorm, forward, run_graph, tensor_shapes};
pub(crate) use forward::to_score_map;
pub use graph::{build_mlp, build_unet, Layer, LayerGraph, UNetConfig};
pub use tensor::FeatureMap;
pub use weights::{load_weights, save_weights, DType, Tensor, TensorData, WeightStore};

use crate::error::{bail, Result};

/// Network family stored in an HSWT file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    UNet(UNetConfig),
    Mlp(Vec<usize>),
}

impl ModelSpec {
    pub fn graph(&self) -> Result<LayerGraph> {
        match self {
            ModelSpec::UNet(cfg) => build_unet(cfg),
            ModelSpec::Mlp(sizes) => build_mlp(sizes),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelSpec::UNet(cfg) => cfg.classes,
            ModelSpec::Mlp(sizes) => *sizes.last().unwrap(),
        }
    }

    /// Recovers the architecture from tensor shapes (and the `patch` and
    /// `bn_epsilon` metadata keys when present).
    pub fn from_store(store: &WeightStore) -> Result<Self> {
        let lead = |name: &str, axis: usize| -> Result<usize> {
            store
                .get(name)
                .and_then(|t| t.dims.get(axis))
                .map(|&d| d as usize)
                .ok_or_else(|| crate::Error::Weight(format!("cannot read dims of {name:?}")))
        };
        if store.contains("enc1.conv1.w") {
            let depth = (1..)
                .take_while(|k| store.contains(&format!("enc{k}.conv1.w")))
                .count();
            let mut cfg = UNetConfig {
                in_bands: lead("enc1.conv1.w", 1)?,
                filters: lead("enc1.conv1.w", 0)?,
                classes: lead("final.w", 0)?,
                depth,
                ..UNetConfig::default()
            };
            if let Some(p) = store.meta("patch") {
                cfg.patch = p
                    .parse()
                    .map_err(|_| crate::Error::Weight(format!("bad patch metadata {p:?}")))?;
            }
            if let Some(e) = store.meta("bn_epsilon") {
                cfg.bn_epsilon = e
                    .parse()
                    .map_err(|_| crate::Error::Weight(format!("bad bn_epsilon metadata {e:?}")))?;
            }
            cfg.validate()?;
            Ok(ModelSpec::UNet(cfg))
        } else if store.contains("fc1.w") {
            if let Some(act) = store.meta("mlp.activation") {
                if act != "relu" {
                    bail!(Weight, "unsupported MLP activation {act:?}");
                }
            }
            let mut sizes = vec![lead("fc1.w", 1)?];
            for k in 1.. {
                let name = format!("fc{k}.w");
                if !store.contains(&name) {
                    break;
                }
                sizes.push(lead(&name, 0)?);
            }
            Ok(ModelSpec::Mlp(sizes))
        } else {
            bail!(Weight, "store holds neither U-Net nor MLP tensors")
        }
    }

    pub fn write_metadata(&self, store: &mut WeightStore) {
        match self {
            ModelSpec::UNet(cfg) => {
                store.set_meta("arch", "unet");
                store.set_meta("patch", cfg.patch);
                store.set_meta("bn_epsilon", cfg.bn_epsilon);
            }
            ModelSpec::Mlp(_) => {
                store.set_meta("arch", "mlp");
                store.set_meta("mlp.activation", "relu");
            }
        }
    }
}

/// He-uniform weights, small biases and mildly perturbed BN statistics.
pub fn random_weights(graph: &LayerGraph, seed: u64) -> Result<WeightStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for layer in &graph.layers {
        match layer {
            Layer::Conv {
                name,
                c_in,
                c_out,
                kernel,
            } => {
                let fan_in = (c_in * kernel * kernel) as f32;
                let bound = (6.0 / fan_in).sqrt();
                let n = c_out * c_in * kernel * kernel;
                let w = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                let b = (0..*c_out).map(|_| rng.random_range(-0.05..0.05)).collect();
                store.insert(format!("{name}.w"), Tensor::f32(&[*c_out, *c_in, *kernel, *kernel], w)?)?;
                store.insert(format!("{name}.b"), Tensor::f32(&[*c_out], b)?)?;
            }
            Layer::UpConv { name, c_in, c_out } => {
                let bound = (6.0 / *c_in as f32).sqrt();
                let w = (0..c_in * c_out * 4)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                let b = (0..*c_out).map(|_| rng.random_range(-0.05..0.05)).collect();
                store.insert(format!("{name}.w"), Tensor::f32(&[*c_in, *c_out, 2, 2], w)?)?;
                store.insert(format!("{name}.b"), Tensor::f32(&[*c_out], b)?)?;
            }
            Layer::BatchNorm { name, channels } => {
                let c = *channels;
                let mut draw = |lo: f32, hi: f32| -> Vec<f32> {
                    (0..c).map(|_| rng.random_range(lo..hi)).collect()
                };
                let (g, b, m, v) = (
                    draw(0.8, 1.2),
                    draw(-0.1, 0.1),
                    draw(-0.1, 0.1),
                    draw(0.5, 1.5),
                );
                store.insert(format!("{name}.gamma"), Tensor::f32(&[c], g)?)?;
                store.insert(format!("{name}.beta"), Tensor::f32(&[c], b)?)?;
                store.insert(format!("{name}.mean"), Tensor::f32(&[c], m)?)?;
                store.insert(format!("{name}.var"), Tensor::f32(&[c], v)?)?;
            }
            _ => {}
        }
    }
    Ok(store)
}

/// All-zero weights with identity batch norm; `final_bias` goes on the last
/// weighted layer.
pub fn constant_bias_weights(graph: &LayerGraph, final_bias: &[f32]) -> Result<WeightStore> {
    let mut store = WeightStore::new();
    let shapes = tensor_shapes(graph);
    let last_bias = graph
        .weighted_layers()
        .last()
        .and_then(Layer::name)
        .map(|n| format!("{n}.b"));
    for (name, dims) in shapes {
        let n: usize = dims.iter().product();
        let data = if Some(&name) == last_bias.as_ref() {
            if final_bias.len() != n {
                bail!(Config, "final bias needs {n} values");
            }
            final_bias.to_vec()
        } else if name.ends_with(".gamma") || name.ends_with(".var") {
            vec![1.0; n]
        } else {
            vec![0.0; n]
        };
        store.insert(name, Tensor::f32(&dims, data)?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{HyperCube, Stage};

    fn random_patch(h: usize, w: usize, b: usize, seed: u64) -> HyperCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HyperCube::from_fn(h, w, b, Stage::Normalized, |_, _, _| rng.random_range(0.0..1.0))
            .unwrap()
    }

    #[test]
    fn constant_bias_softmax() {
        let graph = build_unet(&UNetConfig::default()).unwrap();
        let weights = constant_bias_weights(&graph, &[1.0, 2.0, 3.0]).unwrap();
        let patch = random_patch(128, 128, 25, 1);
        let out = forward(&graph, &weights, &patch).unwrap();
        assert_eq!((out.height(), out.width(), out.classes()), (128, 128, 3));
        for px in out.pixels() {
            for (a, b) in px.iter().zip([0.0900, 0.2447, 0.6652]) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn random_weights_give_distributions() {
        let cfg = UNetConfig {
            patch: 32,
            ..UNetConfig::default()
        };
        let graph = build_unet(&cfg).unwrap();
        let weights = random_weights(&graph, 3).unwrap();
        let out = forward(&graph, &weights, &random_patch(32, 32, 25, 2)).unwrap();
        for px in out.pixels() {
            let s: f32 = px.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn missing_tensor_is_weight_error() {
        let graph = build_unet(&UNetConfig::default()).unwrap();
        let mut weights = random_weights(&graph, 0).unwrap();
        weights.remove("dec1.bn2.var");
        let err = forward(&graph, &weights, &random_patch(16, 16, 25, 0)).unwrap_err();
        assert!(matches!(err, crate::Error::Weight(_)));
    }

    #[test]
    fn folding_matches_unfolded() {
        let cfg = UNetConfig {
            patch: 32,
            ..UNetConfig::default()
        };
        let graph = build_unet(&cfg).unwrap();
        let weights = random_weights(&graph, 9).unwrap();
        let (fg, fw) = fold_batchnorm(&graph, &weights).unwrap();
        assert!(!fg.has_batchnorm());
        let x = FeatureMap::from_cube(&random_patch(32, 32, 25, 4));
        let mut a = Vec::new();
        let mut b = Vec::new();
        run_graph(&graph, &weights, x.clone(), |i, t| {
            if graph.layers[i] == Layer::Relu {
                a.push(t.clone())
            }
        })
        .unwrap();
        run_graph(&fg, &fw, x, |i, t| {
            if fg.layers[i] == Layer::Relu {
                b.push(t.clone())
            }
        })
        .unwrap();
        assert_eq!(a.len(), b.len());
        for (ta, tb) in a.iter().zip(&b) {
            for (x, y) in ta.data.iter().zip(&tb.data) {
                assert!((x - y).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn model_spec_roundtrip() {
        let cfg = UNetConfig {
            classes: 5,
            patch: 64,
            ..UNetConfig::default()
        };
        let graph = build_unet(&cfg).unwrap();
        let mut store = random_weights(&graph, 1).unwrap();
        ModelSpec::UNet(cfg.clone()).write_metadata(&mut store);
        assert_eq!(ModelSpec::from_store(&store).unwrap(), ModelSpec::UNet(cfg));

        let sizes = vec![25, 25, 100, 100, 3];
        let store = random_weights(&build_mlp(&sizes).unwrap(), 1).unwrap();
        assert_eq!(ModelSpec::from_store(&store).unwrap(), ModelSpec::Mlp(sizes));
        assert!(ModelSpec::from_store(&WeightStore::new()).is_err());
    }
}
