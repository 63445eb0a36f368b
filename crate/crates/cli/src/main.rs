//! Command-line front end: dataset generation, grasp optimization,
//! simulated evaluation, loss checking, visualization, and dataset mixing.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 no executable grasp.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use densegrasp::dataset::{concat_datasets, import_real, mix_datasets, DatasetStore};
use densegrasp::depth::DepthImage;
use densegrasp::error::Error;
use densegrasp::eval::{run_eval, EvalConfig, PipelineVariant, PredictionSource};
use densegrasp::grasp::GripperModel;
use densegrasp::labels::{AffordanceMap, OrientationBin};
use densegrasp::loss::{gradient_check, LabelTensor, PredictionTensor};
use densegrasp::mesh::{ShapeCategory, TriMesh};
use densegrasp::optimizer::{select_best, BinView, OptimizerConfig, ScoreMap};
use densegrasp::pipeline::{generate_dataset, GenerateConfig};
use densegrasp::viz::{draw_grasp, encode_rgb_png, overlay_map};

#[derive(Parser)]
#[command(name = "densegrasp", version, about = "Dense-label grasp dataset generation and grasp optimization")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grasp dataset.
    Generate(GenerateArgs),
    /// Refine the best grasp from a depth image and 16 affordance maps.
    Optimize(OptimizeArgs),
    /// Simulated evaluation with or without the grasp optimizer.
    Evaluate(EvaluateArgs),
    /// Loss value and finite-difference gradient report for a label map.
    LossCheck(LossCheckArgs),
    /// Overlay a sample's label map on its depth image.
    Viz(VizArgs),
    /// Mix a synthetic and a real dataset into one manifest.
    Mix(MixArgs),
    /// Import externally annotated scenes into the native dataset format.
    ImportReal(ImportRealArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Generation config JSON (flags below override it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenes to attempt.
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of OBJ models; defaults to the built-in primitive pool.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Write sparse center-pixel labels instead of augmented segments.
    #[arg(long)]
    no_augment: bool,
    /// Skip sensor noise at generation time (apply it at training instead).
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    out: PathBuf,
    /// Unrotated depth PNG (16-bit, 0.1 mm units). Requires --maps.
    #[arg(long, requires = "maps", conflicts_with_all = ["dataset", "scene"])]
    depth: Option<PathBuf>,
    /// Directory holding bin_00.png .. bin_15.png affordance/score maps.
    #[arg(long)]
    maps: Option<PathBuf>,
    /// Dataset directory (use with --scene).
    #[arg(long, requires = "scene")]
    dataset: Option<PathBuf>,
    /// Scene index within the dataset.
    #[arg(long)]
    scene: Option<usize>,
    /// Table depth for the standalone mode; defaults to the image maximum.
    #[arg(long)]
    background_mm: Option<f64>,
    /// Orthographic mm-per-pixel for the standalone mode.
    #[arg(long, default_value_t = 1.0)]
    pixel_pitch: f64,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    #[arg(long, default_value_t = 5.0)]
    edge_threshold: f64,
    #[arg(long, default_value_t = 85.0)]
    gripper_width: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    variant: PipelineVariant,
    #[arg(long)]
    scenes: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation config JSON (flags override).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    models: Option<PathBuf>,
    /// Directory of prediction score maps (scene_SSSS_bin_BB.png); defaults
    /// to ground-truth-driven maps.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<PipelineVariant, String> {
    match s {
        "with_go" | "with-go" => Ok(PipelineVariant::WithGo),
        "without_go" | "without-go" => Ok(PipelineVariant::WithoutGo),
        other => Err(format!("unknown variant {other:?} (use with_go or without_go)")),
    }
}

#[derive(Args)]
struct LossCheckArgs {
    /// Label-map PNG of a sample.
    #[arg(long)]
    sample: PathBuf,
    /// Seed for the random logits under test.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
}

#[derive(Args)]
struct VizArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Sample id (e.g. 000012).
    #[arg(long)]
    id: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Concatenate instead of interleaving.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportRealArgs {
    /// Directory of scene record JSON files.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Augment records that carry quality and width.
    #[arg(long)]
    augment: bool,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; normalize the exit code
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoExecutableGrasp(_) => 3,
        Error::InvalidConfig(_) => 1,
        _ => 2,
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Generate(args) => generate(args),
        Command::Optimize(args) => optimize(args),
        Command::Evaluate(args) => evaluate(args),
        Command::LossCheck(args) => loss_check(args),
        Command::Viz(args) => viz(args),
        Command::Mix(args) => mix(args),
        Command::ImportReal(args) => import_real_cmd(args),
    }
}

/// Load a model pool from a directory of OBJ files (recursive, sorted);
/// a parent directory named after a shape category tags its meshes.
fn load_pool(models: Option<&Path>) -> Result<Vec<Arc<TriMesh>>, Error> {
    let Some(dir) = models else {
        return Ok(densegrasp::primitives::builtin_pool().into_iter().map(Arc::new).collect());
    };
    let mut files = Vec::new();
    collect_obj_files(dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!("no .obj files under {}", dir.display())));
    }
    files
        .iter()
        .map(|path| {
            let category = path
                .parent()
                .and_then(|p| p.file_name())
                .and_then(|n| n.to_str())
                .and_then(|n| match n {
                    "spheroidal" => Some(ShapeCategory::Spheroidal),
                    "cuboidal" => Some(ShapeCategory::Cuboidal),
                    "cuplike" => Some(ShapeCategory::Cuplike),
                    "complicated" => Some(ShapeCategory::Complicated),
                    _ => None,
                })
                .unwrap_or(ShapeCategory::Complicated);
            Ok(Arc::new(TriMesh::load_obj(path)?.with_category(category)))
        })
        .collect()
}

fn collect_obj_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), Error> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_obj_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "obj") {
            out.push(path);
        }
    }
    Ok(())
}

fn write_resolved_config<T: serde::Serialize>(out: &Path, config: &T) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let mut bytes = serde_json::to_vec_pretty(config)?;
    bytes.push(b'\n');
    std::fs::write(out.join("config.json"), bytes)?;
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<(), Error> {
    let mut cfg: GenerateConfig = match &args.config {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => GenerateConfig::default(),
    };
    if let Some(scenes) = args.scenes {
        cfg.scenes = scenes;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_augment {
        cfg.augment = false;
    }
    if args.no_noise {
        cfg.noise_at_generation = false;
    }
    if cfg.scenes == 0 {
        return Err(Error::InvalidConfig("generate needs at least one scene".into()));
    }
    let pool = load_pool(args.models.as_deref())?;
    write_resolved_config(&args.out, &cfg)?;
    let manifest = generate_dataset(&cfg, &pool, &args.out)?;
    println!(
        "wrote {} samples ({} scenes attempted) to {}",
        manifest.samples.len(),
        cfg.scenes,
        args.out.display()
    );
    println!(
        "label totals: background {} negative {} positive {}",
        manifest.class_totals[0], manifest.class_totals[1], manifest.class_totals[2]
    );
    Ok(())
}

fn optimize(args: OptimizeArgs) -> Result<(), Error> {
    let gripper = GripperModel { max_width_mm: args.gripper_width, ..GripperModel::default() };
    let opt_cfg = OptimizerConfig { mu: args.mu, edge_threshold: args.edge_threshold, top_k: args.top_k };

    let (views, base_camera, base_depth) = if let Some(dataset) = &args.dataset {
        let scene = args.scene.expect("clap enforces --scene with --dataset");
        let (store, manifest) = DatasetStore::open(dataset)?;
        let entries: Vec<_> = manifest.samples.iter().filter(|e| e.scene == scene).collect();
        if entries.is_empty() {
            return Err(Error::InvalidConfig(format!("dataset has no samples for scene {scene}")));
        }
        let mut views = Vec::new();
        let mut base: Option<DepthImage> = None;
        for entry in entries {
            let sample = store.read_sample(entry)?;
            let bin = OrientationBin::new(entry.bin);
            if base.is_none() {
                // undo the bin rotation to recover the unrotated frame
                let mut b = densegrasp::depth::rotate_with_padding(
                    &sample.depth,
                    bin.rotation_angle_deg(),
                    densegrasp::depth::PaddingMode::AdaptiveDepth,
                );
                b.camera = sample.depth.camera.content_rotated(bin.rotation_angle_deg());
                base = Some(b);
            }
            views.push(BinView {
                bin,
                score: ScoreMap::from_affordance(&sample.map),
                depth: sample.depth,
            });
        }
        let base = base.unwrap();
        (views, base.camera.clone(), base)
    } else {
        let depth_path = args.depth.as_ref().ok_or_else(|| {
            Error::InvalidConfig("optimize needs either --depth with --maps or --dataset with --scene".into())
        })?;
        let maps_dir = args.maps.as_ref().expect("clap enforces --maps with --depth");
        let bytes = std::fs::read(depth_path)?;
        let (w, h, raw) = densegrasp::depth::decode_depth_png_raw(&bytes)?;
        let background = args
            .background_mm
            .unwrap_or_else(|| raw.iter().copied().max().unwrap_or(0) as f64 / densegrasp::depth::DEPTH_PNG_SCALE);
        let camera = densegrasp::camera::CameraModel::orthographic(args.pixel_pitch, w, h, background);
        let depth = DepthImage::decode_png(&bytes, background, camera)?;
        let mut views = Vec::new();
        for bin in OrientationBin::all() {
            let map_path = maps_dir.join(format!("bin_{:02}.png", bin.index));
            let map_bytes = std::fs::read(&map_path).map_err(|e| {
                Error::InvalidConfig(format!("missing map {}: {e}", map_path.display()))
            })?;
            let score = ScoreMap::from_rgb_png(&map_bytes)?;
            let rotated = densegrasp::labels::rotate_to_bin(&depth, bin);
            views.push(BinView { bin, score, depth: rotated });
        }
        let base_camera = depth.camera.clone();
        (views, base_camera, depth)
    };

    write_resolved_config(
        &args.out,
        &serde_json::json!({
            "operation": "optimize",
            "mu": args.mu,
            "edge_threshold": args.edge_threshold,
            "top_k": args.top_k,
            "gripper_width": args.gripper_width,
        }),
    )?;

    let grasp = select_best(&views, &base_camera, &gripper, &opt_cfg)?;
    let mut json = serde_json::to_vec_pretty(&grasp)?;
    json.push(b'\n');
    std::fs::write(args.out.join("grasp.json"), json)?;

    let mut overlay = densegrasp::viz::depth_to_gray(&base_depth);
    draw_grasp(&mut overlay, &grasp);
    std::fs::write(args.out.join("overlay.png"), encode_rgb_png(&overlay)?)?;
    println!(
        "grasp: bin {} center ({:.1}, {:.1}) px, theta {:.1} -> {:.1} deg, width {:.1} mm, score {:.3}",
        grasp.bin,
        grasp.center_px[0],
        grasp.center_px[1],
        grasp.theta_initial_deg,
        grasp.theta_refined_deg,
        grasp.width_mm,
        grasp.score
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), Error> {
    if args.scenes == 0 {
        return Err(Error::InvalidConfig("evaluate needs at least one scene".into()));
    }
    let mut cfg: EvalConfig = match &args.config {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => EvalConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.generate.seed = seed;
    }
    let pool = load_pool(args.models.as_deref())?;
    let predictions = args.predictions.as_ref().map(|dir| PredictionSource { dir: dir.clone() });

    write_resolved_config(&args.out, &serde_json::json!({
        "operation": "evaluate",
        "variant": args.variant,
        "scenes": args.scenes,
        "eval": serde_json::to_value(&cfg)?,
    }))?;

    let report = run_eval(&cfg, &pool, args.scenes, args.variant, predictions.as_ref())?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    std::fs::write(args.out.join("report.json"), json)?;

    println!("variant:      {:?}", report.variant);
    println!("trials:       {}", report.trials);
    println!("successes:    {}", report.successes);
    println!("success rate: {:.1}%", report.success_rate * 100.0);
    println!("skipped:      {} scene(s) rejected at generation", report.skipped_scenes);
    if !report.failure_histogram.is_empty() {
        println!("failures:");
        for (reason, count) in &report.failure_histogram {
            println!("  {reason:?}: {count}");
        }
    }
    Ok(())
}

fn loss_check(args: LossCheckArgs) -> Result<(), Error> {
    let bytes = std::fs::read(&args.sample)?;
    let map = AffordanceMap::decode_png(&bytes, OrientationBin::new(0))?;
    let labels = LabelTensor::from_map(&map);
    let mut rng = densegrasp::rng::substream(args.seed, "loss-check", 0);
    use rand::Rng;
    let logits: Vec<f64> = (0..labels.height * labels.width * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let pred = PredictionTensor::new(labels.height, labels.width, logits)?;
    let report = gradient_check(&pred, &labels, args.step)?;
    println!("sample:          {}", args.sample.display());
    println!("class counts:    {:?}", labels.counts);
    println!("loss:            {:.6}", report.loss);
    println!("max |grad|:      {:.3e}", report.max_abs_grad);
    println!("entries checked: {}", report.entries_checked);
    println!("max rel error:   {:.3e}", report.max_rel_error);
    println!(
        "gradient check:  {}",
        if report.max_rel_error <= 1e-4 { "PASS" } else { "FAIL" }
    );
    if report.max_rel_error > 1e-4 {
        return Err(Error::Corrupt(format!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_error
        )));
    }
    Ok(())
}

fn viz(args: VizArgs) -> Result<(), Error> {
    let (store, manifest) = DatasetStore::open(&args.dataset)?;
    let entry = manifest
        .samples
        .iter()
        .find(|e| e.id == args.id)
        .ok_or_else(|| Error::InvalidConfig(format!("no sample with id {}", args.id)))?;
    let sample = store.read_sample(entry)?;
    let overlay = overlay_map(&sample.depth, &sample.map, 0.45)?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("viz_{}.png", entry.id));
    std::fs::write(&path, encode_rgb_png(&overlay)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn mix(args: MixArgs) -> Result<(), Error> {
    let (_, synthetic) = DatasetStore::open(&args.synthetic)?;
    let (_, real) = DatasetStore::open(&args.real)?;
    let mixed = if args.sequential {
        concat_datasets(&synthetic, &args.synthetic, &real, &args.real)?
    } else {
        mix_datasets(&synthetic, &args.synthetic, &real, &args.real, args.fraction, args.seed)?
    };
    std::fs::create_dir_all(&args.out)?;
    write_resolved_config(&args.out, &serde_json::json!({
        "operation": "mix",
        "fraction": args.fraction,
        "seed": args.seed,
        "sequential": args.sequential,
    }))?;
    std::fs::write(args.out.join("manifest.json"), mixed.to_json()?)?;
    let mut by_provenance: BTreeMap<String, usize> = BTreeMap::new();
    for e in &mixed.samples {
        *by_provenance.entry(format!("{:?}", e.provenance)).or_default() += 1;
    }
    println!("mixed manifest: {} samples {:?}", mixed.samples.len(), by_provenance);
    Ok(())
}

fn import_real_cmd(args: ImportRealArgs) -> Result<(), Error> {
    let store = DatasetStore::create(&args.out)?;
    let manifest = import_real(&args.records, &store, args.augment)?;
    println!("imported {} samples to {}", manifest.samples.len(), args.out.display());
    Ok(())
}
