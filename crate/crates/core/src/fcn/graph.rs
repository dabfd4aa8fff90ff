//! Layer graphs for the U-Net and the per-pixel MLP, with parameter and MAC
//! accounting.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_bands: usize,
    pub classes: usize,
    pub depth: usize,
    pub filters: usize,
    pub patch: usize,
    pub bn_epsilon: f32,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_bands: 25,
            classes: 3,
            depth: 2,
            filters: 8,
            patch: 128,
            bn_epsilon: 1e-5,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.filters == 0 || self.in_bands == 0 || self.classes == 0 {
            bail!(Config, "depth, filters, bands and classes must all be positive");
        }
        if self.depth > 16 {
            bail!(Config, "encoder depth {} is unreasonably deep", self.depth);
        }
        let stride = 1usize << self.depth;
        if self.patch == 0 || self.patch % stride != 0 {
            bail!(
                Config,
                "patch {} is not divisible by 2^{} = {stride}",
                self.patch,
                self.depth
            );
        }
        if !(self.bn_epsilon > 0.0) {
            bail!(Config, "batch-norm epsilon must be positive");
        }
        Ok(())
    }
}

/// One step of a layer graph. Weighted layers carry the tensor-name prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// Cross-correlation with `kernel×kernel` taps, zero "same" padding, bias.
    Conv {
        name: String,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    },
    BatchNorm {
        name: String,
        channels: usize,
    },
    Relu,
    /// 2×2 window, stride 2.
    MaxPool,
    /// Transposed convolution, 2×2 kernel, stride 2, bias.
    UpConv {
        name: String,
        c_in: usize,
        c_out: usize,
    },
    /// Pushes the current activation for a later [`Layer::Concat`].
    SaveSkip,
    /// Pops the saved activation and concatenates `[skip, current]`.
    Concat,
    Softmax,
}

impl Layer {
    pub fn name(&self) -> Option<&str> {
        match self {
            Layer::Conv { name, .. } | Layer::BatchNorm { name, .. } | Layer::UpConv { name, .. } => {
                Some(name)
            }
            _ => None,
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::UpConv { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub layers: Vec<Layer>,
    pub in_channels: usize,
    pub classes: usize,
    pub bn_epsilon: f32,
    /// Input height and width must be multiples of this.
    pub spatial_multiple: usize,
}

fn push_block(layers: &mut Vec<Layer>, prefix: &str, c_in: usize, c_out: usize) {
    for (i, cin) in [(1, c_in), (2, c_out)] {
        layers.push(Layer::Conv {
            name: format!("{prefix}.conv{i}"),
            c_in: cin,
            c_out,
            kernel: 3,
        });
        layers.push(Layer::BatchNorm {
            name: format!("{prefix}.bn{i}"),
            channels: c_out,
        });
        layers.push(Layer::Relu);
    }
}

/// The modified U-Net: two conv3×3+BN+ReLU per block, `depth` pooled encoder
/// levels, a bridge, transposed-conv decoder levels with skip concatenation,
/// and a 1×1 classifier with softmax.
pub fn build_unet(config: &UNetConfig) -> Result<LayerGraph> {
    config.validate()?;
    let nf = config.filters;
    let mut layers = Vec::new();
    let mut channels = config.in_bands;
    for level in 1..=config.depth {
        let width = nf << (level - 1);
        push_block(&mut layers, &format!("enc{level}"), channels, width);
        layers.push(Layer::SaveSkip);
        layers.push(Layer::MaxPool);
        channels = width;
    }
    let bridge = nf << config.depth;
    push_block(&mut layers, "bridge", channels, bridge);
    channels = bridge;
    for level in (1..=config.depth).rev() {
        let width = nf << (level - 1);
        layers.push(Layer::UpConv {
            name: format!("dec{level}.up"),
            c_in: channels,
            c_out: width,
        });
        layers.push(Layer::Concat);
        push_block(&mut layers, &format!("dec{level}"), 2 * width, width);
        channels = width;
    }
    layers.push(Layer::Conv {
        name: "final".into(),
        c_in: channels,
        c_out: config.classes,
        kernel: 1,
    });
    layers.push(Layer::Softmax);
    Ok(LayerGraph {
        layers,
        in_channels: config.in_bands,
        classes: config.classes,
        bn_epsilon: config.bn_epsilon,
        spatial_multiple: 1 << config.depth,
    })
}

/// Fully connected `sizes[0] → … → sizes[n]` network as a chain of 1×1
/// convolutions with ReLU between layers and softmax at the end.
pub fn build_mlp(sizes: &[usize]) -> Result<LayerGraph> {
    if sizes.len() < 3 {
        bail!(Config, "an MLP needs input, at least one hidden layer and output");
    }
    if sizes.contains(&0) {
        bail!(Config, "MLP layer sizes must be positive");
    }
    let mut layers = Vec::new();
    let n = sizes.len() - 1;
    for (i, pair) in sizes.windows(2).enumerate() {
        layers.push(Layer::Conv {
            name: format!("fc{}", i + 1),
            c_in: pair[0],
            c_out: pair[1],
            kernel: 1,
        });
        if i + 1 < n {
            layers.push(Layer::Relu);
        }
    }
    layers.push(Layer::Softmax);
    Ok(LayerGraph {
        layers,
        in_channels: sizes[0],
        classes: sizes[n],
        bn_epsilon: 1e-5,
        spatial_multiple: 1,
    })
}

impl LayerGraph {
    pub fn weighted_layers(&self) -> impl Iterator<Item = &Layer> {
        self.layers.iter().filter(|l| l.is_weighted())
    }

    pub fn batchnorm_layers(&self) -> impl Iterator<Item = &Layer> {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::BatchNorm { .. }))
    }

    /// `(trainable, non_trainable)`. BN contributes γ, β as trainable and the
    /// running mean and variance as non-trainable.
    pub fn param_count(&self) -> (u64, u64) {
        let mut trainable = 0u64;
        let mut frozen = 0u64;
        for layer in &self.layers {
            match *layer {
                Layer::Conv {
                    c_in, c_out, kernel, ..
                } => trainable += (kernel * kernel * c_in * c_out + c_out) as u64,
                Layer::UpConv { c_in, c_out, .. } => trainable += (4 * c_in * c_out + c_out) as u64,
                Layer::BatchNorm { channels, .. } => {
                    trainable += 2 * channels as u64;
                    frozen += 2 * channels as u64;
                }
                _ => {}
            }
        }
        (trainable, frozen)
    }

    /// Convolution multiply-accumulates for an `(H, W)` input:
    /// `k_h·k_w·C_in·C_out·H_out·W_out` per weighted layer.
    pub fn mac_count(&self, (height, width): (usize, usize)) -> u64 {
        let (mut h, mut w) = (height as u64, width as u64);
        let mut stack = Vec::new();
        let mut total = 0u64;
        for layer in &self.layers {
            match *layer {
                Layer::Conv {
                    c_in, c_out, kernel, ..
                } => total += (kernel * kernel * c_in * c_out) as u64 * h * w,
                Layer::UpConv { c_in, c_out, .. } => {
                    h *= 2;
                    w *= 2;
                    total += (4 * c_in * c_out) as u64 * h * w;
                }
                Layer::MaxPool => {
                    h /= 2;
                    w /= 2;
                }
                Layer::SaveSkip => stack.push((h, w)),
                Layer::Concat => {
                    stack.pop();
                }
                _ => {}
            }
        }
        total
    }

    /// The same graph with batch-norm layers removed (after folding).
    pub fn without_batchnorm(&self) -> LayerGraph {
        LayerGraph {
            layers: self
                .layers
                .iter()
                .filter(|l| !matches!(l, Layer::BatchNorm { .. }))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    pub fn has_batchnorm(&self) -> bool {
        self.batchnorm_layers().next().is_some()
    }
}
