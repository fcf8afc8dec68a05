//! The pipeline stages as file-to-file commands.
//!
//! Every command loads and checks all of its inputs before it writes
//! anything. Stage outputs land in the configured output directory under
//! fixed names, so running the stages one by one produces the same files
//! as `run` with intermediates kept.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pvmap_core::camera::CameraFrame;
use pvmap_core::cloud::PointCloud;
use pvmap_core::correction::Correction;
use pvmap_core::detect::{FusedFrame, ModuleDetection};
use pvmap_core::evaluate::{evaluate, EvalReport};
use pvmap_core::fusion::GlobalStructure;
use pvmap_core::lift::{LiftedStructure, Lifter};
use pvmap_core::optimize::{ModulePose, OptimizedModel, PlantModel};
use pvmap_core::pipeline::{self, ImageSource, NoImages, PipelineOutput};
use pvmap_core::raster::ImageRaster;
use pvmap_core::simulate::{presets, render_scene, Scene};
use pvmap_core::structure::ImageStructure;

use crate::config::{Config, Paths};
use crate::error::{CliError, CliResult};
use crate::io;

pub const FUSED: &str = "fused.json";
pub const STRUCTURES: &str = "structures.json";
pub const CORRECTION_LOG: &str = "corrections.log";
pub const LIFTED: &str = "lifted.json";
pub const GLOBAL: &str = "global.json";
pub const MATCHED: &str = "matched.json";
pub const MODEL: &str = "model.json";
pub const RAW_POSES: &str = "raw_poses.json";
pub const GEOJSON: &str = "model.geojson";
pub const FUSION_REPORT: &str = "fusion_report.json";
pub const EVAL: &str = "eval.json";
pub const STATS: &str = "stats.csv";
pub const OVERLAYS: &str = "overlays";

/// Structures and lifts after cross-image repair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Matched {
    pub structures: Vec<ImageStructure>,
    pub lifted: Vec<LiftedStructure>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Flags {
    pub strict: bool,
    pub keep_intermediates: bool,
}

/// `<dir>/<frame_id>.ppm`, read on demand. Missing files mean no image.
pub struct ImageDir {
    dir: PathBuf,
}

impl ImageDir {
    pub fn new(dir: &Path) -> CliResult<Self> {
        if !dir.is_dir() {
            return Err(CliError::input(dir, "image directory does not exist"));
        }
        Ok(ImageDir { dir: dir.to_path_buf() })
    }

    fn path(&self, frame_id: &str) -> PathBuf {
        self.dir.join(format!("{frame_id}.ppm"))
    }

    /// Logs the frames that have no image.
    pub fn check(&self, frames: &[CameraFrame]) {
        let missing: Vec<&str> = frames
            .iter()
            .filter(|f| !self.path(&f.frame_id).is_file())
            .map(|f| f.frame_id.as_str())
            .collect();
        if !missing.is_empty() {
            log::warn!("no image for frames {}; their gap candidates count as bench gaps", missing.join(", "));
        }
    }
}

impl ImageSource for ImageDir {
    fn image(&self, frame_id: &str) -> pvmap_core::Result<Option<ImageRaster>> {
        let path = self.path(frame_id);
        if !path.is_file() {
            return Ok(None);
        }
        io::load_image(&path).map(Some).map_err(|e| pvmap_core::Error::Invalid {
            what: "image",
            reason: e.to_string(),
        })
    }
}

fn out_path(cfg: &Config, name: &str) -> CliResult<PathBuf> {
    Ok(cfg.output_dir()?.join(name))
}

fn load_cameras(cfg: &Config) -> CliResult<Vec<CameraFrame>> {
    io::load_camera_frames(cfg.require(&cfg.paths.cameras, "input.cameras")?)
}

fn load_cloud(cfg: &Config) -> CliResult<PointCloud> {
    io::load_point_cloud(cfg.require(&cfg.paths.cloud, "input.cloud")?)
}

fn load_detections(cfg: &Config) -> CliResult<Vec<ModuleDetection>> {
    io::load_detections(cfg.require(&cfg.paths.detections, "input.detections")?)
}

fn load_corrections(cfg: &Config) -> CliResult<Vec<Correction>> {
    cfg.paths.corrections.as_deref().map_or(Ok(Vec::new()), io::load_corrections)
}

fn images(cfg: &Config, frames: &[CameraFrame]) -> CliResult<Box<dyn ImageSource>> {
    Ok(match &cfg.paths.images {
        Some(dir) => {
            let d = ImageDir::new(dir)?;
            d.check(frames);
            Box::new(d)
        }
        None => {
            log::warn!("no image directory configured; every gap candidate counts as a bench gap");
            Box::new(NoImages)
        }
    })
}

fn intermediate<T: serde::de::DeserializeOwned>(cfg: &Config, name: &str, producer: &str) -> CliResult<T> {
    let path = out_path(cfg, name)?;
    if !path.is_file() {
        return Err(CliError::input(&path, format!("missing; run `{producer}` first")));
    }
    io::read_json(&path)
}

fn write_correction_log(cfg: &Config, lines: &[String]) -> CliResult<()> {
    for l in lines {
        log::info!("{l}");
    }
    if lines.is_empty() {
        return Ok(());
    }
    let mut text = lines.join("\n");
    text.push('\n');
    io::write_bytes(&out_path(cfg, CORRECTION_LOG)?, text.as_bytes())
}

fn strict_check(flags: Flags, gs: &GlobalStructure) -> CliResult<()> {
    let bad: Vec<String> = gs
        .report
        .flags
        .iter()
        .filter(|f| {
            matches!(
                f.kind,
                pvmap_core::fusion::FlagKind::IrreparableSector | pvmap_core::fusion::FlagKind::InconsistentGroup
            )
        })
        .map(|f| f.detail.clone())
        .collect();
    if flags.strict && !bad.is_empty() {
        return Err(CliError::Inconsistent(format!(
            "{} irreparable structure flags, first: {}",
            bad.len(),
            bad[0]
        )));
    }
    Ok(())
}

pub fn fuse_detections(cfg: &Config) -> CliResult<()> {
    let frames = load_cameras(cfg)?;
    let dets = load_detections(cfg)?;
    let fused = pipeline::stage_fuse(&frames, &dets, &cfg.pipeline.fuse)?;
    io::write_json(&out_path(cfg, FUSED)?, &fused)
}

pub fn infer(cfg: &Config) -> CliResult<()> {
    let frames = load_cameras(cfg)?;
    let fused: Vec<FusedFrame> = intermediate(cfg, FUSED, "fuse-detections")?;
    let corrections = load_corrections(cfg)?;
    let images = images(cfg, &frames)?;
    let (structures, log_lines) = pipeline::stage_infer(&frames, &fused, images.as_ref(), &corrections, &cfg.pipeline.structure)?;
    io::write_json(&out_path(cfg, STRUCTURES)?, &structures)?;
    write_correction_log(cfg, &log_lines)
}

pub fn lift(cfg: &Config) -> CliResult<()> {
    let frames = load_cameras(cfg)?;
    let cloud = load_cloud(cfg)?;
    let structures: Vec<ImageStructure> = intermediate(cfg, STRUCTURES, "infer")?;
    let lifter = Lifter::new(&cloud, cfg.pipeline.lift).map_err(|e| e.in_stage("lift", None))?;
    let lifted = pipeline::stage_lift(&frames, &structures, &lifter)?;
    io::write_json(&out_path(cfg, LIFTED)?, &lifted)
}

pub fn match_structures(cfg: &Config, flags: Flags) -> CliResult<()> {
    let frames = load_cameras(cfg)?;
    let cloud = load_cloud(cfg)?;
    let structures: Vec<ImageStructure> = intermediate(cfg, STRUCTURES, "infer")?;
    let lifted: Vec<LiftedStructure> = intermediate(cfg, LIFTED, "lift")?;
    let lifter = Lifter::new(&cloud, cfg.pipeline.lift).map_err(|e| e.in_stage("lift", None))?;
    let (gs, structures, lifted) = pipeline::stage_match(&frames, structures, lifted, &lifter, &cfg.pipeline.fusion)?;
    io::write_json(&out_path(cfg, GLOBAL)?, &gs)?;
    io::write_json(&out_path(cfg, MATCHED)?, &Matched { structures, lifted })?;
    io::write_json(&out_path(cfg, FUSION_REPORT)?, &gs.report)?;
    strict_check(flags, &gs)
}

fn write_model(cfg: &Config, opt: &OptimizedModel) -> CliResult<()> {
    for (bench, reason) in &opt.flags {
        log::warn!("bench {bench} keeps its averaged poses: {reason}");
    }
    io::write_json(&out_path(cfg, MODEL)?, &opt.model)?;
    io::write_json(&out_path(cfg, RAW_POSES)?, &opt.raw)?;
    io::write_json(&out_path(cfg, GEOJSON)?, &io::geojson(&opt.model))
}

pub fn optimize(cfg: &Config) -> CliResult<()> {
    let frames = load_cameras(cfg)?;
    let gs: GlobalStructure = intermediate(cfg, GLOBAL, "match")?;
    let origin = frames.first().ok_or_else(|| CliError::Config("camera list is empty".into()))?.geo_origin;
    let opt = pipeline::stage_optimize(&gs, origin, &cfg.pipeline.optimize)?;
    write_model(cfg, &opt)
}

fn eval_report(cfg: &Config, raw: &[ModulePose], model: &PlantModel) -> CliResult<EvalReport> {
    let truth = cfg.paths.truth.as_deref().map(io::load_truth).transpose()?;
    let reference = cfg.paths.reference.as_deref().map(io::load_model).transpose()?;
    if reference.is_some() && cfg.anchors.len() < 3 {
        return Err(CliError::Config("a reference model needs `evaluate.anchors` with at least 3 ids".into()));
    }
    Ok(evaluate(raw, model, reference.as_ref().map(|r| (r, cfg.anchors.as_slice())), truth.as_ref())?)
}

fn write_eval(cfg: &Config, report: &EvalReport) -> CliResult<()> {
    io::write_json(&out_path(cfg, EVAL)?, report)?;
    io::write_bytes(&out_path(cfg, STATS)?, io::stats_csv(report).as_bytes())
}

pub fn evaluate_model(cfg: &Config) -> CliResult<()> {
    let model = io::load_model(&out_path(cfg, MODEL)?)?;
    let raw = io::load_poses(&out_path(cfg, RAW_POSES)?)?;
    let report = eval_report(cfg, &raw, &model)?;
    write_eval(cfg, &report)
}

fn write_overlays(cfg: &Config, frames: &[CameraFrame], structures: &[ImageStructure], model: Option<&PlantModel>) -> CliResult<()> {
    let dir = out_path(cfg, OVERLAYS)?;
    for s in structures {
        let Some(frame) = frames.iter().find(|f| f.frame_id == s.frame_id) else {
            continue;
        };
        io::write_bytes(&dir.join(format!("{}.svg", s.frame_id)), io::overlay_svg(frame, s, model).as_bytes())?;
    }
    Ok(())
}

/// SVG overlays from the latest structures on disk, with the model's ids
/// when a model exists.
pub fn render_overlay(cfg: &Config) -> CliResult<()> {
    let frames = load_cameras(cfg)?;
    let structures = if out_path(cfg, MATCHED)?.is_file() {
        intermediate::<Matched>(cfg, MATCHED, "match")?.structures
    } else {
        intermediate::<Vec<ImageStructure>>(cfg, STRUCTURES, "infer")?
    };
    let model_path = out_path(cfg, MODEL)?;
    let model = model_path.is_file().then(|| io::load_model(&model_path)).transpose()?;
    write_overlays(cfg, &frames, &structures, model.as_ref())
}

/// The whole pipeline. Inputs are loaded up front and nothing is written
/// unless every stage succeeds.
pub fn run(cfg: &Config, flags: Flags) -> CliResult<PipelineOutput> {
    let frames = load_cameras(cfg)?;
    let dets = load_detections(cfg)?;
    let cloud = load_cloud(cfg)?;
    let corrections = load_corrections(cfg)?;
    let images = images(cfg, &frames)?;
    cfg.output_dir()?;
    cfg.pipeline.validate()?;
    let origin = frames.first().ok_or_else(|| CliError::Config("camera list is empty".into()))?.geo_origin;

    // The stages one by one rather than `run_pipeline`, so the pre-repair
    // structures and lifts can be kept exactly as the stage commands write them.
    let fused = pipeline::stage_fuse(&frames, &dets, &cfg.pipeline.fuse)?;
    let (structures, correction_log) = pipeline::stage_infer(&frames, &fused, images.as_ref(), &corrections, &cfg.pipeline.structure)?;
    let lifter = Lifter::new(&cloud, cfg.pipeline.lift).map_err(|e| e.in_stage("lift", None))?;
    let lifted = pipeline::stage_lift(&frames, &structures, &lifter)?;
    let kept = flags.keep_intermediates.then(|| (structures.clone(), lifted.clone()));
    let (global, structures, lifted) = pipeline::stage_match(&frames, structures, lifted, &lifter, &cfg.pipeline.fusion)?;
    let optimized = pipeline::stage_optimize(&global, origin, &cfg.pipeline.optimize)?;
    let report = eval_report(cfg, &optimized.raw, &optimized.model)?;

    if let Some((pre_structures, pre_lifted)) = kept {
        io::write_json(&out_path(cfg, FUSED)?, &fused)?;
        io::write_json(&out_path(cfg, STRUCTURES)?, &pre_structures)?;
        io::write_json(&out_path(cfg, LIFTED)?, &pre_lifted)?;
        io::write_json(&out_path(cfg, GLOBAL)?, &global)?;
        io::write_json(&out_path(cfg, MATCHED)?, &Matched { structures: structures.clone(), lifted: lifted.clone() })?;
    }
    write_correction_log(cfg, &correction_log)?;
    write_model(cfg, &optimized)?;
    io::write_json(&out_path(cfg, FUSION_REPORT)?, &global.report)?;
    write_eval(cfg, &report)?;
    write_overlays(cfg, &frames, &structures, Some(&optimized.model))?;
    strict_check(flags, &global)?;
    Ok(PipelineOutput {
        fused,
        structures,
        lifted,
        correction_log,
        global,
        optimized,
    })
}

/// Writes a simulated scene as pipeline inputs plus ground truth and a
/// ready-to-run config named `cfg_name`.
pub fn export_scene(scene: &Scene, cfg: &Config, dir: &Path, cfg_name: &str) -> CliResult<()> {
    io::write_camera_frames(&dir.join("cameras.json"), &scene.frames)?;
    io::write_point_cloud(&dir.join("cloud.txt"), &scene.cloud)?;
    io::write_detections(&dir.join("detections.json"), &scene.all_detections())?;
    for (i, f) in scene.frames.iter().enumerate() {
        io::write_image(&dir.join("images").join(format!("{}.ppm", f.frame_id)), &scene.render(i))?;
    }
    io::write_json(&dir.join("truth.json"), &pvmap_core::evaluate::TruthTable::from_scene(scene))?;
    io::write_json(&dir.join("scene.json"), &scene.spec)?;
    let mut cfg = cfg.clone();
    cfg.paths = Paths {
        cameras: Some(dir.join("cameras.json")),
        cloud: Some(dir.join("cloud.txt")),
        detections: Some(dir.join("detections.json")),
        images: Some(dir.join("images")),
        truth: Some(dir.join("truth.json")),
        output: Some(dir.join("out")),
        ..cfg.paths
    };
    io::write_bytes(&dir.join(cfg_name), cfg.to_text(dir).as_bytes())
}

pub fn simulate(preset: &str, seed: u64, dir: &Path) -> CliResult<()> {
    let unknown = || CliError::Config(format!("unknown preset `{preset}`; known: {}", presets::names().join(", ")));
    let spec = presets::scene(preset, seed).ok_or_else(unknown)?;
    let pipeline = presets::pipeline(preset, seed).ok_or_else(unknown)?;
    let scene = render_scene(&spec)?;
    let cfg = Config {
        pipeline,
        seed,
        simulate_preset: Some(preset.to_string()),
        ..Config::default()
    };
    export_scene(&scene, &cfg, dir, &format!("{preset}.cfg"))
}
