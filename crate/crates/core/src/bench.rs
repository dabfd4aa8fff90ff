//! Latency and throughput measurement.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::fcn::{build_mlp, build_unet, random_weights, ModelSpec, UNetConfig};
use crate::hypercube::synth::{synth_scene, SceneSpec};
use crate::hypercube::{CalibrationSet, HyperCube, RawMosaicFrame};
use crate::patchwork::{argmax_map, extract, stitch};
use crate::preprocess::{run_pipeline, PreprocessConfig, StageTiming};
use crate::quant::quantize_model;
use crate::segment::{grid_for, segment, Model, DEFAULT_GRID};
use crate::spectral::mlp_sizes;

pub const DEFAULT_WARMUP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    Preprocess,
    UnetFloat,
    UnetQuant,
    Mlp,
    EndToEnd,
}

impl Workload {
    pub const ALL: [Workload; 5] = [
        Workload::Preprocess,
        Workload::UnetFloat,
        Workload::UnetQuant,
        Workload::Mlp,
        Workload::EndToEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Workload::Preprocess => "preprocess",
            Workload::UnetFloat => "unet_float",
            Workload::UnetQuant => "unet_quant",
            Workload::Mlp => "mlp",
            Workload::EndToEnd => "end_to_end",
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Workload {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match Workload::ALL.into_iter().find(|w| w.name() == s) {
            Some(w) => Ok(w),
            None => bail!(Config, "unknown workload {s:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpsStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub min: f64,
}

/// Per-iteration FPS (`1000 / ms`) aggregated; the median of an even count
/// is the lower middle value.
pub fn fps_stats(times_ms: &[f64]) -> Result<FpsStats> {
    if times_ms.is_empty() {
        bail!(Data, "no timings");
    }
    if let Some(bad) = times_ms.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        bail!(Data, "timing {bad} ms is not positive");
    }
    let mut fps: Vec<f64> = times_ms.iter().map(|t| 1000.0 / t).collect();
    fps.sort_by(f64::total_cmp);
    Ok(FpsStats {
        mean: fps.iter().sum::<f64>() / fps.len() as f64,
        median: fps[(fps.len() - 1) / 2],
        max: fps[fps.len() - 1],
        min: fps[0],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub workload: String,
    pub iterations: usize,
    pub warmup: usize,
    pub times_ms: Vec<f64>,
    pub fps: FpsStats,
    /// Mean per-stage milliseconds followed by `Total`, when the workload
    /// reports stages.
    pub stages: Option<Vec<(String, f64)>>,
}

impl BenchReport {
    pub fn mean_ms(&self) -> f64 {
        self.times_ms.iter().sum::<f64>() / self.times_ms.len() as f64
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "workload {} ({} iterations, {} warmup)",
            self.workload, self.iterations, self.warmup
        );
        if let Some(stages) = &self.stages {
            let width = stages.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
            let _ = writeln!(out, "{:width$}  {:>10}", "Stage", "Time (ms)");
            for (name, ms) in stages {
                let _ = writeln!(out, "{name:width$}  {ms:>10.2}");
            }
        }
        let _ = writeln!(out, "{:>10}  {:>10}  {:>10}  {:>10}", "Mean", "Median", "Max", "Min");
        let f = &self.fps;
        let _ = writeln!(
            out,
            "{:>10.2}  {:>10.2}  {:>10.2}  {:>10.2}  FPS",
            f.mean, f.median, f.max, f.min
        );
        out
    }
}

/// Times `iters` calls of `run` after `warmup` untimed calls. `run` may
/// return a per-stage breakdown, which is averaged into the report.
pub fn bench_fn(
    name: &str,
    iters: usize,
    warmup: usize,
    mut run: impl FnMut() -> Result<Option<StageTiming>>,
) -> Result<BenchReport> {
    if iters == 0 {
        bail!(Config, "need at least one iteration");
    }
    for _ in 0..warmup {
        run()?;
    }
    let mut times = Vec::with_capacity(iters);
    let mut sums: Vec<(String, f64)> = Vec::new();
    for _ in 0..iters {
        let start = Instant::now();
        let stages = run()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        if let Some(t) = stages {
            if sums.is_empty() {
                sums = t.stages.iter().map(|(n, _)| (n.clone(), 0.0)).collect();
            }
            for ((_, acc), (_, ms)) in sums.iter_mut().zip(&t.stages) {
                *acc += ms;
            }
        }
    }
    // sub-microsecond closures can time as zero
    for t in &mut times {
        *t = t.max(1e-6);
    }
    let stages = (!sums.is_empty()).then(|| {
        let mut rows: Vec<(String, f64)> = sums
            .into_iter()
            .map(|(n, s)| (n, s / iters as f64))
            .collect();
        let total = rows.iter().map(|(_, ms)| ms).sum();
        rows.push(("Total".to_string(), total));
        rows
    });
    Ok(BenchReport {
        workload: name.to_string(),
        iterations: iters,
        warmup,
        fps: fps_stats(&times)?,
        times_ms: times,
        stages,
    })
}

/// Deterministic inputs for the standard workloads: one synthetic frame,
/// its calibration, the preprocessed cube and random-weight models.
pub struct Fixtures {
    pub raw: RawMosaicFrame,
    pub calib: CalibrationSet,
    pub config: PreprocessConfig,
    pub cube: HyperCube,
    pub unet: Model,
    pub unet_quant: Model,
    pub mlp: Model,
}

impl Fixtures {
    pub fn new(seed: u64) -> Result<Self> {
        let spec = SceneSpec::default();
        let (raw, _, calib) = synth_scene(&spec, seed)?;
        let config = PreprocessConfig {
            crop_offset: spec.crop_offset,
            ..PreprocessConfig::default()
        };
        let (cube, _) = run_pipeline(&raw, &calib, &config)?;

        let cfg = UNetConfig::default();
        let graph = build_unet(&cfg)?;
        let mut weights = random_weights(&graph, seed)?;
        ModelSpec::UNet(cfg.clone()).write_metadata(&mut weights);
        let grid = crate::patchwork::plan_grid(
            cube.height(),
            cube.width(),
            cfg.patch,
            DEFAULT_GRID.0,
            DEFAULT_GRID.1,
        )?;
        let calib_patches: Vec<HyperCube> = extract(&cube, &grid)?.into_iter().step_by(5).collect();
        let (_, qweights) = quantize_model(&graph, &weights, &calib_patches)?;

        let sizes = mlp_sizes(cfg.classes);
        let mut mlp = random_weights(&build_mlp(&sizes)?, seed)?;
        ModelSpec::Mlp(sizes).write_metadata(&mut mlp);
        Ok(Self {
            raw,
            calib,
            config,
            cube,
            unet: Model::new(weights)?,
            unet_quant: Model::new(qweights)?,
            mlp: Model::new(mlp)?,
        })
    }
}

/// Runs one workload on freshly built fixtures (seed 0).
pub fn run_bench(workload: Workload, n_iters: usize, warmup: usize) -> Result<BenchReport> {
    let fx = Fixtures::new(0)?;
    run_bench_with(&fx, workload, n_iters, warmup)
}

pub fn run_bench_with(fx: &Fixtures, workload: Workload, n_iters: usize, warmup: usize) -> Result<BenchReport> {
    let (h, w) = (fx.cube.height(), fx.cube.width());
    let grid = grid_for(&fx.unet, h, w, DEFAULT_GRID.0, DEFAULT_GRID.1)?;
    let name = workload.name();
    match workload {
        Workload::Preprocess => bench_fn(name, n_iters, warmup, || {
            let (_, timing) = run_pipeline(&fx.raw, &fx.calib, &fx.config)?;
            Ok(Some(timing))
        }),
        Workload::UnetFloat | Workload::UnetQuant => {
            let model = if workload == Workload::UnetFloat {
                &fx.unet
            } else {
                &fx.unet_quant
            };
            bench_fn(name, n_iters, warmup, || {
                argmax_map(&segment(model, &fx.cube, Some(&grid))?);
                Ok(None)
            })
        }
        Workload::Mlp => bench_fn(name, n_iters, warmup, || {
            argmax_map(&segment(&fx.mlp, &fx.cube, None)?);
            Ok(None)
        }),
        Workload::EndToEnd => bench_fn(name, n_iters, warmup, || {
            let (cube, mut timing) = run_pipeline(&fx.raw, &fx.calib, &fx.config)?;
            let mut clock = Instant::now();
            let mut lap = |timing: &mut StageTiming, stage: &str| {
                let now = Instant::now();
                timing.push(stage, (now - clock).as_secs_f64() * 1e3);
                clock = now;
            };
            let patches = extract(&cube, &grid)?;
            lap(&mut timing, "Patch extraction");
            let scores = {
                use rayon::prelude::*;
                patches
                    .par_iter()
                    .map(|p| fx.unet.infer(p))
                    .collect::<Result<Vec<_>>>()?
            };
            lap(&mut timing, "Inference");
            argmax_map(&stitch(&scores, &grid)?);
            lap(&mut timing, "Stitching");
            Ok(Some(timing))
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn fps_examples() {
        let s = fps_stats(&[100.0, 100.0, 100.0]).unwrap();
        assert_eq!((s.mean, s.median, s.max, s.min), (10.0, 10.0, 10.0, 10.0));
        let s = fps_stats(&[50.0, 100.0]).unwrap();
        assert_eq!((s.mean, s.median, s.max, s.min), (15.0, 10.0, 20.0, 10.0));
        let mut t = vec![100.0; 20];
        t[7] = 1000.0;
        assert_eq!(fps_stats(&t).unwrap().min, 1.0);
        let s = fps_stats(&[37.0]).unwrap();
        assert!(s.mean == s.median && s.median == s.max && s.max == s.min);
        assert!(matches!(fps_stats(&[]), Err(crate::Error::Data(_))));
        assert!(matches!(fps_stats(&[10.0, 0.0]), Err(crate::Error::Data(_))));
    }

    #[test]
    fn permutation_invariant() {
        let a = [12.0, 40.0, 7.5, 100.0, 33.0];
        let mut b = a;
        b.reverse();
        b.swap(0, 2);
        assert_eq!(fps_stats(&a).unwrap(), fps_stats(&b).unwrap());
    }

    #[test]
    fn workload_names() {
        for w in Workload::ALL {
            assert_eq!(w.name().parse::<Workload>().unwrap(), w);
        }
        assert!(matches!("gpu".parse::<Workload>(), Err(crate::Error::Config(_))));
    }

    #[test]
    fn sleep_stub_near_100_fps() {
        let r = bench_fn("sleep", 10, 1, || {
            std::thread::sleep(Duration::from_millis(10));
            Ok(None)
        })
        .unwrap();
        assert_eq!(r.times_ms.len(), 10);
        assert!((80.0..=120.0).contains(&r.fps.median), "median {}", r.fps.median);
        assert!(r.fps.min <= r.fps.median && r.fps.median <= r.fps.max);
    }

    #[test]
    fn stage_rows_average_and_total() {
        let mut n = 0.0;
        let r = bench_fn("staged", 2, 0, || {
            n += 1.0;
            let mut t = StageTiming::default();
            t.push("a", n);
            t.push("b", 2.0 * n);
            Ok(Some(t))
        })
        .unwrap();
        let stages = r.stages.clone().unwrap();
        assert_eq!(stages, vec![("a".into(), 1.5), ("b".into(), 3.0), ("Total".into(), 4.5)]);
        assert!(r.to_table().contains("Total"));
    }
}
