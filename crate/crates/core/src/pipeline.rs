//! The mapping pipeline as a sequence of in-memory stages.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::camera::{CameraFrame, GeoOrigin};
use crate::cloud::PointCloud;
use crate::correction::{apply_corrections, Correction};
use crate::detect::{fuse_frame, FuseConfig, FusedFrame, ModuleDetection};
use crate::error::{Error, Result};
use crate::fusion::{fuse_structures, FlagKind, FusionConfig, GlobalStructure, View};
use crate::lift::{lift_structure, LiftConfig, LiftedStructure, Lifter};
use crate::optimize::{build_plant_model, OptimizeConfig, OptimizedModel};
use crate::raster::ImageRaster;
use crate::structure::{build_structure, ImageStructure, LuminanceGapClassifier, StructureConfig};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PipelineConfig {
    pub fuse: FuseConfig,
    pub structure: StructureConfig,
    pub lift: LiftConfig,
    pub fusion: FusionConfig,
    pub optimize: OptimizeConfig,
}

impl PipelineConfig {
    pub fn new(rows_per_bench: usize) -> Self {
        PipelineConfig {
            fuse: FuseConfig::default(),
            structure: StructureConfig::new(rows_per_bench),
            lift: LiftConfig::default(),
            fusion: FusionConfig::default(),
            optimize: OptimizeConfig::default(),
        }
    }

    /// Uses one seed for every randomized stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.structure.seed = seed;
        self.optimize.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.fuse.validate()?;
        self.structure.validate()?;
        self.lift.validate()?;
        self.fusion.validate()?;
        self.optimize.validate()
    }
}

/// Source of the raw images used to classify gap candidates.
pub trait ImageSource {
    fn image(&self, frame_id: &str) -> Result<Option<ImageRaster>>;
}

/// No images: every gap candidate is taken as a bench gap.
pub struct NoImages;

impl ImageSource for NoImages {
    fn image(&self, _: &str) -> Result<Option<ImageRaster>> {
        Ok(None)
    }
}

impl<F: Fn(&str) -> Result<Option<ImageRaster>>> ImageSource for F {
    fn image(&self, frame_id: &str) -> Result<Option<ImageRaster>> {
        self(frame_id)
    }
}

fn frame_by_id<'a>(frames: &'a [CameraFrame], id: &str) -> Result<&'a CameraFrame> {
    frames
        .iter()
        .find(|f| f.frame_id == id)
        .ok_or_else(|| Error::invalid("frame reference", alloc::format!("no camera for frame `{id}`")))
}

/// Filters and fuses the detections of every camera frame. Detections of
/// frames without a camera are skipped with a warning.
pub fn stage_fuse(frames: &[CameraFrame], detections: &[ModuleDetection], cfg: &FuseConfig) -> Result<Vec<FusedFrame>> {
    let mut by_frame: BTreeMap<&str, Vec<ModuleDetection>> = frames.iter().map(|f| (f.frame_id.as_str(), Vec::new())).collect();
    let mut orphans = 0usize;
    for d in detections {
        match by_frame.get_mut(d.frame_id.as_str()) {
            Some(v) => v.push(d.clone()),
            None => orphans += 1,
        }
    }
    if orphans > 0 {
        log::warn!("{orphans} detections reference frames without a camera and are ignored");
    }
    frames
        .iter()
        .map(|f| {
            let dets = &by_frame[f.frame_id.as_str()];
            fuse_frame(&f.frame_id, dets, f.width as f64, f.height as f64, cfg).map_err(|e| e.in_stage("fuse-detections", Some(&f.frame_id)))
        })
        .collect()
}

/// Infers the layout of every image and applies the corrections.
pub fn stage_infer(
    frames: &[CameraFrame],
    fused: &[FusedFrame],
    images: &dyn ImageSource,
    corrections: &[Correction],
    cfg: &StructureConfig,
) -> Result<(Vec<ImageStructure>, Vec<String>)> {
    let classifier = LuminanceGapClassifier {
        darkness_ratio: cfg.darkness_ratio,
    };
    let mut out = Vec::with_capacity(fused.len());
    for ff in fused {
        let ctx = |e: Error| e.in_stage("infer", Some(&ff.frame_id));
        let frame = frame_by_id(frames, &ff.frame_id).map_err(ctx)?;
        let image = images.image(&ff.frame_id).map_err(ctx)?;
        if let Some(img) = &image {
            if img.width() != frame.width || img.height() != frame.height {
                return Err(ctx(Error::invalid(
                    "image",
                    alloc::format!("{}x{} raster for a {}x{} camera", img.width(), img.height(), frame.width, frame.height),
                )));
            }
        }
        let s = build_structure(ff, frame.width as f64, frame.height as f64, image.as_ref(), cfg, &classifier).map_err(ctx)?;
        out.push(s);
    }
    let log_lines = apply_corrections(&mut out, corrections).map_err(|e| e.in_stage("infer", None))?;
    Ok((out, log_lines))
}

pub fn stage_lift(frames: &[CameraFrame], structures: &[ImageStructure], lifter: &Lifter<'_>) -> Result<Vec<LiftedStructure>> {
    structures
        .iter()
        .map(|s| {
            let ctx = |e: Error| e.in_stage("lift", Some(&s.frame_id));
            let frame = frame_by_id(frames, &s.frame_id).map_err(ctx)?;
            lift_structure(s, frame, lifter).map_err(ctx)
        })
        .collect()
}

/// Cross-image fusion. Returns the global structure together with the
/// repaired per-image structures and their lifts, in frame-id order.
pub fn stage_match(
    frames: &[CameraFrame],
    structures: Vec<ImageStructure>,
    lifted: Vec<LiftedStructure>,
    lifter: &Lifter<'_>,
    cfg: &FusionConfig,
) -> Result<(GlobalStructure, Vec<ImageStructure>, Vec<LiftedStructure>)> {
    let mut views = Vec::with_capacity(structures.len());
    for (structure, lifted) in structures.into_iter().zip(lifted) {
        let frame = frame_by_id(frames, &structure.frame_id).map_err(|e| e.in_stage("match", Some(&structure.frame_id)))?;
        views.push(View {
            frame: frame.clone(),
            structure,
            lifted,
        });
    }
    let gs = fuse_structures(&mut views, lifter, cfg).map_err(|e| {
        let frame = match &e {
            Error::StructuralConflict { frame_id, .. } => Some(frame_id.clone()),
            _ => None,
        };
        e.in_stage("match", frame.as_deref())
    })?;
    let (s, l) = views.into_iter().map(|v| (v.structure, v.lifted)).unzip();
    Ok((gs, s, l))
}

pub fn stage_optimize(gs: &GlobalStructure, geo_origin: GeoOrigin, cfg: &OptimizeConfig) -> Result<OptimizedModel> {
    build_plant_model(gs, geo_origin, cfg).map_err(|e| e.in_stage("optimize", None))
}

/// Results of every stage of one pipeline run.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub fused: Vec<FusedFrame>,
    pub structures: Vec<ImageStructure>,
    pub lifted: Vec<LiftedStructure>,
    pub correction_log: Vec<String>,
    pub global: GlobalStructure,
    pub optimized: OptimizedModel,
}

impl PipelineOutput {
    /// Whether fusion flagged sectors it could not repair or reconcile.
    pub fn has_irreparable_flags(&self) -> bool {
        self.global
            .report
            .flags
            .iter()
            .any(|f| matches!(f.kind, FlagKind::IrreparableSector | FlagKind::InconsistentGroup))
    }
}

pub fn run_pipeline(
    frames: &[CameraFrame],
    detections: &[ModuleDetection],
    cloud: &PointCloud,
    images: &dyn ImageSource,
    corrections: &[Correction],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let geo_origin = frames.first().ok_or(Error::Empty("camera list"))?.geo_origin;
    let fused = stage_fuse(frames, detections, &cfg.fuse)?;
    let (structures, correction_log) = stage_infer(frames, &fused, images, corrections, &cfg.structure)?;
    let lifter = Lifter::new(cloud, cfg.lift).map_err(|e| e.in_stage("lift", None))?;
    let lifted = stage_lift(frames, &structures, &lifter)?;
    let (global, structures, lifted) = stage_match(frames, structures, lifted, &lifter, &cfg.fusion)?;
    let optimized = stage_optimize(&global, geo_origin, &cfg.optimize)?;
    Ok(PipelineOutput {
        fused,
        structures,
        lifted,
        correction_log,
        global,
        optimized,
    })
}
