//! Raw 5×5-mosaic hyperspectral frames to segmented label maps.
//!
//! The crate is organized along the processing chain:
//!
//! - [`hypercube`]: frames, cubes, label maps, file formats and a synthetic
//!   scene generator.
//! - [`preprocess`]: crop, reflectance correction, partial demosaicing, band
//!   alignment, median filtering and band normalization.
//! - [`patchwork`]: overlapped patch grids, extraction and stitching.
//! - [`fcn`]: the small U-Net, its layer graph, float inference and the
//!   HSWT weight container.
//! - [`spectral`]: per-pixel baselines (MLP, ELM) and band reduction.
//! - [`quant`]: power-of-two INT8 post-training quantization.
//! - [`eval`]: confusion-matrix metrics and Jeffreys–Matusita separability.
//! - [`bench`]: latency and FPS harness.
//! - [`segment`]: whole-image segmentation on top of the above.

pub mod bench;
pub mod error;
pub mod eval;
pub mod fcn;
pub mod hypercube;
pub mod patchwork;
pub mod preprocess;
pub mod quant;
pub mod segment;
pub mod spectral;

pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, MetricsReport};
pub use fcn::{FeatureMap, LayerGraph, UNetConfig, WeightStore};
pub use hypercube::{
    BandLayout, CalibrationSet, ClassScheme, HyperCube, LabelMap, RawMosaicFrame, Stage, IGNORE,
};
pub use patchwork::{PatchGrid, ScoreMap};
pub use preprocess::{PreprocessConfig, StageTiming};
