//! Subcommands of the `hsdrive` executable. Kept in a library so tests can
//! drive them without spawning processes.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hsdrive_core::bench::{run_bench_with, Fixtures, Workload, DEFAULT_WARMUP};
use hsdrive_core::eval::{class_stats, confusion, default_epsilon, jm_csv, jm_matrix, metrics};
use hsdrive_core::fcn::{build_mlp, build_unet, load_weights, random_weights, save_weights, ModelSpec};
use hsdrive_core::hypercube::synth::render;
use hsdrive_core::hypercube::{
    load_cube, load_labels, load_raw, remap_labels, save_cube, save_labels, save_preview, save_raw,
    write_atomic, SceneSpec, SchemeName,
};
use hsdrive_core::patchwork::{argmax_map, extract};
use hsdrive_core::quant::quantize_model;
use hsdrive_core::segment::{grid_for, segment, Model, DEFAULT_GRID};
use hsdrive_core::{
    BandLayout, CalibrationSet, ClassScheme, Error, HyperCube, LabelMap, PreprocessConfig, Result,
    UNetConfig,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use manifest::{manifest_path, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "hsdrive", version, about = "Hyperspectral road-scene segmentation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene: raw mosaic frame, source labels, calibration
    Synth(SynthArgs),
    /// Raw mosaic frame to a normalized 25-band cube
    Preprocess(PreprocessArgs),
    /// Write a randomly initialized U-Net or MLP weight file
    InitWeights(InitWeightsArgs),
    /// Segment a cube into a label map and class probabilities
    Infer(InferArgs),
    /// Post-training INT8 quantization of a float weight file
    Quantize(QuantizeArgs),
    /// Confusion-matrix metrics of a prediction against ground truth
    Eval(EvalArgs),
    /// Pairwise Jeffreys-Matusita distances between classes
    Separability(SeparabilityArgs),
    /// Latency and FPS of the standard workloads
    Bench(BenchArgs),
}

/// Whether a label file holds the ten source classes or scheme classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelFormat {
    Source,
    Mapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Unet,
    Mlp,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene description (JSON); defaults to the built-in 216x409 scene
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, env = "SPECDRIVE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw 16-bit mosaic frame (PGM)
    #[arg(long)]
    pub raw: PathBuf,
    /// Calibration directory (dark.pgm, white.pgm, calib.json)
    #[arg(long)]
    pub calib: PathBuf,
    /// Pipeline settings (JSON); flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Crop origin as ROW,COL; defaults to the calibration's
    #[arg(long, value_parser = parse_pair)]
    pub crop_offset: Option<(usize, usize)>,
    #[arg(long)]
    pub median_kernel: Option<usize>,
    /// per_band_minmax or per_pixel_max
    #[arg(long, value_parser = parse_serde::<hsdrive_core::preprocess::Normalization>)]
    pub normalization: Option<hsdrive_core::preprocess::Normalization>,
    /// bilinear or off
    #[arg(long, value_parser = parse_serde::<hsdrive_core::preprocess::Alignment>)]
    pub alignment: Option<hsdrive_core::preprocess::Alignment>,
    #[arg(long)]
    pub epsilon_ref: Option<f64>,
    /// Output cube (HSC)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitWeightsArgs {
    #[arg(long, value_enum, default_value_t = Arch::Unet)]
    pub arch: Arch,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 25)]
    pub bands: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 8)]
    pub filters: usize,
    #[arg(long, default_value_t = 128)]
    pub patch: usize,
    #[arg(long, env = "SPECDRIVE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output weight file (HSWT)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Input cube (HSC)
    #[arg(long)]
    pub cube: PathBuf,
    /// Weight file (HSWT), float or quantized
    #[arg(long)]
    pub weights: PathBuf,
    /// Output label map (PGM)
    #[arg(long)]
    pub out: PathBuf,
    /// Output class probabilities (HSC); defaults to OUT with an .hsc extension
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// Colorized preview (PPM)
    #[arg(long)]
    pub preview: Option<PathBuf>,
    /// Run integer inference; float weights are quantized on the input first
    #[arg(long)]
    pub quantized: bool,
    #[arg(long, default_value_t = DEFAULT_GRID.0)]
    pub grid_rows: usize,
    #[arg(long, default_value_t = DEFAULT_GRID.1)]
    pub grid_cols: usize,
    /// Threads for patch-level parallelism; defaults to all cores
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Float weight file (HSWT)
    #[arg(long)]
    pub weights: PathBuf,
    /// Directory of calibration cubes (*.hsc)
    #[arg(long)]
    pub calib_cubes: PathBuf,
    /// Output quantized weight file (HSWT)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID.0)]
    pub grid_rows: usize,
    #[arg(long, default_value_t = DEFAULT_GRID.1)]
    pub grid_cols: usize,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted label map (PGM, scheme classes)
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth label map (PGM)
    #[arg(long)]
    pub gt: PathBuf,
    /// three_class or five_class
    #[arg(long, default_value = "three_class", value_parser = parse_scheme)]
    pub scheme: SchemeName,
    #[arg(long, value_enum, default_value_t = LabelFormat::Source)]
    pub gt_format: LabelFormat,
    /// Label maps whose class supports set the weighted average; defaults
    /// to the ground truth
    #[arg(long)]
    pub reference_labels: Vec<PathBuf>,
    /// Metrics report (JSON)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeparabilityArgs {
    /// Directory of cubes (*.hsc)
    #[arg(long)]
    pub cubes: PathBuf,
    /// Directory of label maps named like the cubes (*.pgm)
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value = "three_class", value_parser = parse_scheme)]
    pub scheme: SchemeName,
    #[arg(long, value_enum, default_value_t = LabelFormat::Source)]
    pub label_format: LabelFormat,
    /// Diagonal loading of the class covariances; defaults to 1e-6 of the
    /// mean per-band variance
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Output matrix (CSV)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// preprocess, unet_float, unet_quant, mlp or end_to_end; all when omitted
    #[arg(long, value_parser = parse_workload)]
    pub workload: Vec<Workload>,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    pub warmup: usize,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, env = "SPECDRIVE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Reports (JSON)
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Process exit code for an error: 2 usage, 3 data or format, 4 numeric.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        Error::Format(_) | Error::Data(_) | Error::Weight(_) | Error::Io(_) => 3,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::InitWeights(a) => cmd_init_weights(&a),
        Command::Infer(a) => with_workers(a.workers, || cmd_infer(&a)),
        Command::Quantize(a) => with_workers(a.workers, || cmd_quantize(&a)),
        Command::Eval(a) => cmd_eval(&a),
        Command::Separability(a) => cmd_separability(&a),
        Command::Bench(a) => with_workers(a.workers, || cmd_bench(&a)),
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(0) => Err(Error::Config("--workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(f),
    }
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected ROW,COL")?;
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok((num(a)?, num(b)?))
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_scheme(s: &str) -> std::result::Result<SchemeName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_workload(s: &str) -> std::result::Result<Workload, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_json_value(path: &Path) -> Result<serde_json::Value> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn from_json_value<T: DeserializeOwned>(value: serde_json::Value, path: &Path) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_json_pretty(value: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

/// Sensor geometry stored next to the reference frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibFile {
    layout: BandLayout,
    crop_offset: (usize, usize),
}

pub fn load_calibration(dir: &Path) -> Result<CalibrationSet> {
    let meta_path = dir.join("calib.json");
    let meta: CalibFile = serde_json::from_slice(&fs::read(&meta_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    CalibrationSet::new(
        load_raw(dir.join("dark.pgm"))?,
        load_raw(dir.join("white.pgm"))?,
        meta.layout,
        meta.crop_offset,
    )
}

pub fn save_calibration(calib: &CalibrationSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_raw(&calib.dark, dir.join("dark.pgm"))?;
    save_raw(&calib.white, dir.join("white.pgm"))?;
    let meta = CalibFile {
        layout: calib.layout,
        crop_offset: calib.crop_offset,
    };
    write_atomic(&dir.join("calib.json"), &to_json_pretty(&meta))
}

/// Files in `dir` with extension `ext`, sorted by name.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::Data(format!("no .{ext} files in {}", dir.display())));
    }
    files.sort();
    Ok(files)
}

fn scheme_labels(path: &Path, scheme: &ClassScheme, format: LabelFormat) -> Result<LabelMap> {
    let labels = load_labels(path)?;
    match format {
        LabelFormat::Source => remap_labels(&labels, scheme),
        LabelFormat::Mapped => {
            labels.validate(scheme.classes())?;
            Ok(labels)
        }
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut manifest = RunManifest::start("synth");
    let spec = match &args.spec {
        Some(path) => {
            manifest.input("spec", path);
            from_json_value(read_json_value(path)?, path)?
        }
        None => SceneSpec::default(),
    };
    let scene = render(&spec, args.seed)?;
    fs::create_dir_all(&args.out)?;
    let (raw, labels, calib) = (
        args.out.join("raw.pgm"),
        args.out.join("labels.pgm"),
        args.out.join("calib"),
    );
    save_raw(&scene.raw, &raw)?;
    save_labels(&scene.labels, &labels)?;
    save_calibration(&scene.calibration, &calib)?;
    manifest.seed = Some(args.seed);
    manifest.config(&spec);
    manifest.output("raw", &raw);
    manifest.output("labels", &labels);
    manifest.output("calib", &calib);
    manifest.finish(&args.out)?;
    println!(
        "synth: {}x{} scene (seed {}) -> {}",
        spec.height,
        spec.width,
        args.seed,
        args.out.display()
    );
    Ok(())
}

/// Config file, then the calibration's crop origin unless the file sets
/// one, then flags.
fn resolve_preprocess(args: &PreprocessArgs, calib: &CalibrationSet) -> Result<PreprocessConfig> {
    let mut config = PreprocessConfig {
        crop_offset: calib.crop_offset,
        ..PreprocessConfig::default()
    };
    if let Some(path) = &args.config {
        let value = read_json_value(path)?;
        let sets_crop = value.get("crop_offset").is_some();
        let from_file: PreprocessConfig = from_json_value(value, path)?;
        config = PreprocessConfig {
            crop_offset: if sets_crop {
                from_file.crop_offset
            } else {
                calib.crop_offset
            },
            ..from_file
        };
    }
    if let Some(v) = args.crop_offset {
        config.crop_offset = v;
    }
    if let Some(v) = args.median_kernel {
        config.median_kernel = v;
    }
    if let Some(v) = args.normalization {
        config.normalization = v;
    }
    if let Some(v) = args.alignment {
        config.alignment = v;
    }
    if let Some(v) = args.epsilon_ref {
        config.epsilon_ref = v;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<()> {
    let mut manifest = RunManifest::start("preprocess");
    let calib = load_calibration(&args.calib)?;
    let config = resolve_preprocess(args, &calib)?;
    let raw = load_raw(&args.raw)?;
    let (cube, timing) = hsdrive_core::preprocess::run_pipeline(&raw, &calib, &config)?;
    save_cube(&cube, &args.out)?;
    manifest.config(&config);
    manifest.input("raw", &args.raw);
    manifest.input("calib", &args.calib);
    if let Some(p) = &args.config {
        manifest.input("config", p);
    }
    manifest.output("cube", &args.out);
    manifest.finish(&args.out)?;
    println!(
        "preprocess: {}x{}x{} cube in {:.1} ms -> {}",
        cube.height(),
        cube.width(),
        cube.bands(),
        timing.total(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_init_weights(args: &InitWeightsArgs) -> Result<()> {
    let mut manifest = RunManifest::start("init-weights");
    let (spec, graph) = match args.arch {
        Arch::Unet => {
            let cfg = UNetConfig {
                in_bands: args.bands,
                classes: args.classes,
                depth: args.depth,
                filters: args.filters,
                patch: args.patch,
                ..UNetConfig::default()
            };
            let graph = build_unet(&cfg)?;
            manifest.config(&cfg);
            (ModelSpec::UNet(cfg), graph)
        }
        Arch::Mlp => {
            let mut sizes = hsdrive_core::spectral::mlp_sizes(args.classes);
            sizes[0] = args.bands;
            let graph = build_mlp(&sizes)?;
            manifest.config(&sizes);
            (ModelSpec::Mlp(sizes), graph)
        }
    };
    let mut store = random_weights(&graph, args.seed)?;
    spec.write_metadata(&mut store);
    save_weights(&store, &args.out)?;
    manifest.seed = Some(args.seed);
    manifest.output("weights", &args.out);
    manifest.finish(&args.out)?;
    let (trainable, frozen) = graph.param_count();
    println!(
        "init-weights: {:?} with {} parameters ({frozen} non-trainable) -> {}",
        args.arch,
        trainable + frozen,
        args.out.display()
    );
    Ok(())
}

/// Calibration inputs for a model: every grid patch for U-Nets, whole
/// cubes for pixel-wise models.
fn calibration_inputs(model: &Model, cubes: &[HyperCube], rows: usize, cols: usize) -> Result<Vec<HyperCube>> {
    if model.patch().is_none() {
        return Ok(cubes.to_vec());
    }
    let mut patches = Vec::new();
    for cube in cubes {
        let grid = grid_for(model, cube.height(), cube.width(), rows, cols)?;
        patches.extend(extract(cube, &grid)?);
    }
    Ok(patches)
}

fn quantize(model: &Model, inputs: &[HyperCube]) -> Result<Model> {
    let (_, qweights) = quantize_model(&model.graph, &model.weights, inputs)?;
    Model::new(qweights)
}

pub fn cmd_infer(args: &InferArgs) -> Result<()> {
    let mut manifest = RunManifest::start("infer");
    let weights = load_weights(&args.weights)?;
    let cube = load_cube(&args.cube)?;
    let mut model = Model::new(weights)?;
    if args.quantized && !model.is_quantized() {
        let inputs = calibration_inputs(&model, std::slice::from_ref(&cube), args.grid_rows, args.grid_cols)?;
        model = quantize(&model, &inputs)?;
    }
    let grid = match model.patch() {
        Some(_) => Some(grid_for(&model, cube.height(), cube.width(), args.grid_rows, args.grid_cols)?),
        None => None,
    };
    let scores = segment(&model, &cube, grid.as_ref())?;
    let labels = argmax_map(&scores);

    let probs = args.probs.clone().unwrap_or_else(|| args.out.with_extension("hsc"));
    save_labels(&labels, &args.out)?;
    save_cube(&scores.to_cube(), &probs)?;
    if let Some(p) = &args.preview {
        save_preview(&labels, p)?;
        manifest.output("preview", p);
    }
    manifest.config(&serde_json::json!({
        "quantized": model.is_quantized(),
        "grid_rows": args.grid_rows,
        "grid_cols": args.grid_cols,
        "patches": grid.as_ref().map_or(0, |g| g.len()),
    }));
    manifest.input("cube", &args.cube);
    manifest.input("weights", &args.weights);
    manifest.output("labels", &args.out);
    manifest.output("probs", &probs);
    manifest.finish(&args.out)?;
    println!(
        "infer: {}x{} labels, {} classes{} -> {}",
        labels.height(),
        labels.width(),
        scores.classes(),
        if model.is_quantized() { ", int8" } else { "" },
        args.out.display()
    );
    Ok(())
}

pub fn cmd_quantize(args: &QuantizeArgs) -> Result<()> {
    let mut manifest = RunManifest::start("quantize");
    let model = Model::new(load_weights(&args.weights)?)?;
    if model.is_quantized() {
        return Err(Error::Weight(format!("{} is already quantized", args.weights.display())));
    }
    let cubes = list_files(&args.calib_cubes, "hsc")?
        .iter()
        .map(load_cube)
        .collect::<Result<Vec<_>>>()?;
    let inputs = calibration_inputs(&model, &cubes, args.grid_rows, args.grid_cols)?;
    let (params, qweights) = quantize_model(&model.graph, &model.weights, &inputs)?;
    save_weights(&qweights, &args.out)?;
    manifest.config(&params);
    manifest.input("weights", &args.weights);
    manifest.input("calib_cubes", &args.calib_cubes);
    manifest.output("weights", &args.out);
    manifest.finish(&args.out)?;
    println!(
        "quantize: {} calibration inputs, {} weight and {} activation scales -> {}",
        inputs.len(),
        params.weights.len(),
        params.activations.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    scheme: String,
    class_names: &'a [&'static str],
    confusion: &'a hsdrive_core::ConfusionMatrix,
    report: &'a hsdrive_core::MetricsReport,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::start("eval");
    let scheme = ClassScheme::new(args.scheme);
    let c = scheme.classes();
    let pred = load_labels(&args.pred)?;
    let gt = scheme_labels(&args.gt, &scheme, args.gt_format)?;
    let cm = confusion(&pred, &gt, c)?;

    let mut supports = vec![0.0; c];
    if args.reference_labels.is_empty() {
        for (k, s) in supports.iter_mut().enumerate() {
            *s = cm.support(k) as f64;
        }
    } else {
        for path in &args.reference_labels {
            let labels = scheme_labels(path, &scheme, args.gt_format)?;
            for (s, n) in supports.iter_mut().zip(labels.class_counts(c)) {
                *s += n as f64;
            }
            manifest.input("reference_labels", path);
        }
    }
    let report = metrics(&cm, &supports)?;
    print!("{}", report.to_table(&scheme.class_names));

    manifest.config(&serde_json::json!({
        "scheme": args.scheme.to_string(),
        "reference_supports": supports,
    }));
    manifest.input("pred", &args.pred);
    manifest.input("gt", &args.gt);
    if let Some(out) = &args.out {
        let doc = EvalOutput {
            scheme: args.scheme.to_string(),
            class_names: &scheme.class_names,
            confusion: &cm,
            report: &report,
        };
        write_atomic(out, &to_json_pretty(&doc))?;
        manifest.output("report", out);
        manifest.finish(out)?;
    }
    Ok(())
}

pub fn cmd_separability(args: &SeparabilityArgs) -> Result<()> {
    let mut manifest = RunManifest::start("separability");
    let scheme = ClassScheme::new(args.scheme);
    let mut pairs = Vec::new();
    for cube_path in list_files(&args.cubes, "hsc")? {
        let stem = cube_path.file_stem().unwrap_or_default();
        let label_path = args.labels.join(stem).with_extension("pgm");
        if !label_path.is_file() {
            return Err(Error::Data(format!(
                "no label map {} for cube {}",
                label_path.display(),
                cube_path.display()
            )));
        }
        pairs.push((load_cube(&cube_path)?, scheme_labels(&label_path, &scheme, args.label_format)?));
    }
    let refs: Vec<(&HyperCube, &LabelMap)> = pairs.iter().map(|(c, l)| (c, l)).collect();
    let stats = class_stats(&refs, scheme.classes())?;
    let eps = args.epsilon.unwrap_or_else(|| default_epsilon(&stats));
    let matrix = jm_matrix(&stats, eps)?;
    let csv = jm_csv(&matrix, &scheme.class_names);
    write_atomic(&args.out, csv.as_bytes())?;
    print!("{csv}");

    manifest.config(&serde_json::json!({
        "scheme": args.scheme.to_string(),
        "epsilon": eps,
        "pixels_per_class": stats.iter().map(|s| s.count).collect::<Vec<_>>(),
    }));
    manifest.input("cubes", &args.cubes);
    manifest.input("labels", &args.labels);
    manifest.output("matrix", &args.out);
    manifest.finish(&args.out)?;
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let mut manifest = RunManifest::start("bench");
    let workloads = if args.workload.is_empty() {
        Workload::ALL.to_vec()
    } else {
        args.workload.clone()
    };
    let fixtures = Fixtures::new(args.seed)?;
    let mut reports = Vec::new();
    for w in workloads {
        let report = run_bench_with(&fixtures, w, args.iters, args.warmup)?;
        println!("{}", report.to_table());
        reports.push(report);
    }
    if let Some(path) = &args.json {
        write_atomic(path, &to_json_pretty(&reports))?;
        manifest.seed = Some(args.seed);
        manifest.config(&serde_json::json!({
            "iters": args.iters,
            "warmup": args.warmup,
            "workers": args.workers.unwrap_or_else(rayon::current_num_threads),
        }));
        manifest.output("reports", path);
        manifest.finish(path)?;
    }
    Ok(())
}
