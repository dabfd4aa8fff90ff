//! Whole-image segmentation with a loaded model.

use rayon::prelude::*;

use crate::error::{bail, Result};
use crate::fcn::{forward, FeatureMap, LayerGraph, ModelSpec, WeightStore};
use crate::hypercube::HyperCube;
use crate::patchwork::{extract, plan_grid, stitch, PatchGrid, ScoreMap};
use crate::quant::forward_quantized;

/// Patch layout used for images larger than one patch.
pub const DEFAULT_GRID: (usize, usize) = (3, 6);

/// A network ready for inference, float or quantized.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub graph: LayerGraph,
    pub weights: WeightStore,
}

impl Model {
    pub fn new(weights: WeightStore) -> Result<Self> {
        let spec = ModelSpec::from_store(&weights)?;
        let graph = spec.graph()?;
        Ok(Self {
            spec,
            graph,
            weights,
        })
    }

    pub fn is_quantized(&self) -> bool {
        self.weights.is_quantized()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes()
    }

    /// Patch side for U-Nets; `None` for pixel-wise models.
    pub fn patch(&self) -> Option<usize> {
        match &self.spec {
            ModelSpec::UNet(cfg) => Some(cfg.patch),
            ModelSpec::Mlp(_) => None,
        }
    }

    /// Runs the network on one input (a patch, or a whole cube for MLPs).
    pub fn infer(&self, input: &HyperCube) -> Result<ScoreMap> {
        if self.is_quantized() {
            forward_quantized(&self.graph, &self.weights, input)
        } else {
            forward(&self.graph, &self.weights, input)
        }
    }
}

/// Grid for `model` over an `height×width` image.
pub fn grid_for(model: &Model, height: usize, width: usize, rows: usize, cols: usize) -> Result<PatchGrid> {
    let Some(p) = model.patch() else {
        bail!(Config, "pixel-wise models are not tiled");
    };
    plan_grid(height, width, p, rows, cols)
}

/// Class probabilities for every pixel of `cube`. U-Nets are tiled on
/// `grid`, run per patch in parallel and stitched; pixel-wise models run on
/// the whole cube.
pub fn segment(model: &Model, cube: &HyperCube, grid: Option<&PatchGrid>) -> Result<ScoreMap> {
    if model.patch().is_none() {
        let input = FeatureMap::from_cube(cube);
        if input.channels != model.graph.in_channels {
            bail!(
                Data,
                "cube has {} bands, model expects {}",
                input.channels,
                model.graph.in_channels
            );
        }
        return model.infer(cube);
    }
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = grid_for(model, cube.height(), cube.width(), DEFAULT_GRID.0, DEFAULT_GRID.1)?;
            &owned
        }
    };
    let patches = extract(cube, grid)?;
    let scores = patches
        .par_iter()
        .map(|p| model.infer(p))
        .collect::<Result<Vec<_>>>()?;
    stitch(&scores, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::{build_mlp, build_unet, constant_bias_weights, random_weights, UNetConfig};
    use crate::hypercube::Stage;
    use crate::patchwork::argmax_map;

    fn cube(h: usize, w: usize) -> HyperCube {
        HyperCube::from_fn(h, w, 25, Stage::Normalized, |r, c, b| {
            ((r * 7 + c * 3 + b) % 11) as f32 / 10.0
        })
        .unwrap()
    }

    #[test]
    fn constant_model_over_grid() {
        let cfg = UNetConfig {
            patch: 16,
            ..UNetConfig::default()
        };
        let mut w = constant_bias_weights(&build_unet(&cfg).unwrap(), &[0.0, 3.0, 1.0]).unwrap();
        ModelSpec::UNet(cfg).write_metadata(&mut w);
        let model = Model::new(w).unwrap();
        let img = cube(30, 41);
        let grid = grid_for(&model, 30, 41, 2, 3).unwrap();
        let s = segment(&model, &img, Some(&grid)).unwrap();
        assert_eq!((s.height(), s.width(), s.classes()), (30, 41, 3));
        assert!(argmax_map(&s).labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn mlp_runs_on_whole_cube() {
        let sizes = vec![25, 25, 100, 100, 5];
        let w = random_weights(&build_mlp(&sizes).unwrap(), 2).unwrap();
        let model = Model::new(w).unwrap();
        assert_eq!(model.patch(), None);
        let s = segment(&model, &cube(9, 13), None).unwrap();
        assert_eq!((s.height(), s.width(), s.classes()), (9, 13, 5));
        assert!(segment(&model, &HyperCube::filled(2, 2, 3, 0.5, Stage::Normalized), None).is_err());
    }
}
