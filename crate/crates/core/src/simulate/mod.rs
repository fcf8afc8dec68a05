//! Synthetic plants, flights, detections, images and point clouds with
//! complete ground truth.

pub mod cameras;
pub mod plant;
pub mod presets;
pub mod render;
pub mod surface;

use alloc::string::String;
use alloc::vec::Vec;

use crate::camera::CameraFrame;
use crate::cloud::PointCloud;
use crate::detect::{FuseConfig, ModuleDetection};
use crate::error::{Error, Result};
use crate::raster::ImageRaster;

pub use cameras::{plan_cameras, CameraParams};
pub use plant::{generate_plant, GroundTruthPlant, PlantParams, StructuralTuple, Terrain, TruthModule};
pub use render::{fully_visible, project_module, render_image, simulate_detections, FrameDetections, NoiseProfile};
pub use surface::{observed_plant, sample_cloud, warp_field, CloudLabel, CloudParams, WarpField};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneSpec {
    pub plant: PlantParams,
    pub camera: CameraParams,
    pub cloud: CloudParams,
    pub noise: NoiseProfile,
    pub plant_seed: u64,
    /// (frame id, module id) pairs that must go undetected.
    pub forced_drops: Vec<(String, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub plant: GroundTruthPlant,
    /// The plant displaced by the reconstruction warp; detections and
    /// images show this one.
    pub observed: GroundTruthPlant,
    pub frames: Vec<CameraFrame>,
    /// Parallel to `frames`.
    pub detections: Vec<FrameDetections>,
    pub cloud: PointCloud,
    /// Parallel to the cloud points.
    pub cloud_labels: Vec<CloudLabel>,
}

/// Generates the plant, plans the flight and renders detections and cloud.
/// Images are rendered on demand with [`Scene::render`].
pub fn render_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.noise.validate()?;
    let plant = generate_plant(&spec.plant, spec.plant_seed)?;
    let frames = plan_cameras(&plant, &spec.camera)?;
    for (f, m) in &spec.forced_drops {
        if !frames.iter().any(|fr| &fr.frame_id == f) || *m >= plant.modules.len() {
            return Err(Error::parameter("forced_drops", alloc::format!("({f}, {m}) references nothing")));
        }
    }
    let observed = observed_plant(&plant, &warp_field(&spec.noise));
    let detections = frames
        .iter()
        .map(|f| {
            let drops: Vec<usize> = spec.forced_drops.iter().filter(|(id, _)| *id == f.frame_id).map(|(_, m)| *m).collect();
            simulate_detections(&observed, f, &spec.noise, &drops)
        })
        .collect();
    let (cloud, cloud_labels) = sample_cloud(&plant, &spec.cloud, &spec.noise)?;
    Ok(Scene {
        spec: spec.clone(),
        plant,
        observed,
        frames,
        detections,
        cloud,
        cloud_labels,
    })
}

/// Gap-repair fixture: the module west of an interior bench gap of line 0
/// goes undetected in the one frame that shows the gap best. With
/// `all_rows` the module is dropped in every row of the bench, so the
/// gap cannot be recovered inside that image.
pub fn gap_drop_fixture(mut spec: SceneSpec, all_rows: bool) -> Result<SceneSpec> {
    let plant = generate_plant(&spec.plant, spec.plant_seed)?;
    let frames = plan_cameras(&plant, &spec.camera)?;
    let p = &plant.params;
    if p.benches_per_line < 2 {
        return Err(Error::parameter("benches_per_line", "the fixture needs a bench gap"));
    }
    let bench = p.benches_per_line / 2;
    let rows = if all_rows { p.rows_per_bench } else { 1 };
    let pairs: Vec<(usize, usize)> = (0..rows)
        .filter_map(|r| Some((*plant.modules_in_row(0, bench - 1, r).last()?, *plant.modules_in_row(0, bench, r).first()?)))
        .collect();
    // frame whose image center is closest to the gap among those showing it whole
    let gap = plant.modules[pairs[0].0].position;
    let frame = frames
        .iter()
        .filter(|f| {
            pairs.iter().all(|&(a, b)| {
                [a, b].iter().all(|&m| render::fully_visible(f, &plant.modules[m], p.module_along, p.module_across, 10.0))
            })
        })
        .min_by(|a, b| {
            let d = |f: &CameraFrame| (f.center.xy() - gap.xy()).norm();
            d(a).total_cmp(&d(b)).then(a.frame_id.cmp(&b.frame_id))
        })
        .ok_or(Error::Degenerate("no frame shows the fixture gap"))?;
    spec.forced_drops = pairs.iter().map(|&(a, _)| (frame.frame_id.clone(), a)).collect();
    Ok(spec)
}

impl Scene {
    pub fn all_detections(&self) -> Vec<ModuleDetection> {
        self.detections.iter().flat_map(|d| d.detections.iter().cloned()).collect()
    }

    pub fn render(&self, frame: usize) -> ImageRaster {
        render_image(&self.observed, &self.frames[frame])
    }

    pub fn frame_index(&self, frame_id: &str) -> Option<usize> {
        self.frames.iter().position(|f| f.frame_id == frame_id)
    }

    /// Ground-truth module of a detection record.
    pub fn truth_of(&self, frame_id: &str, detection_index: usize) -> Option<usize> {
        self.detections.get(self.frame_index(frame_id)?)?.truth.get(detection_index).copied()
    }

    /// Number of frames showing each module completely, `margin` pixels
    /// away from the border.
    pub fn visibility(&self, margin: f64) -> Vec<usize> {
        let p = &self.plant.params;
        self.observed
            .modules
            .iter()
            .map(|m| {
                self.frames
                    .iter()
                    .filter(|f| fully_visible(f, m, p.module_along, p.module_across, margin))
                    .count()
            })
            .collect()
    }

    /// Per module, the number of frames holding a detection of it that
    /// survives the edge filter.
    pub fn detected_views(&self, cfg: &FuseConfig) -> Vec<usize> {
        let mut frames_per_module: Vec<Vec<usize>> = alloc::vec![Vec::new(); self.plant.modules.len()];
        for (fi, (f, d)) in self.frames.iter().zip(&self.detections).enumerate() {
            let kept = crate::detect::discard_edge_detections(&d.detections, f.width as f64, f.height as f64, cfg.edge_margin);
            for det in kept {
                let m = d.truth[det.detection_index];
                if frames_per_module[m].last() != Some(&fi) {
                    frames_per_module[m].push(fi);
                }
            }
        }
        frames_per_module.iter().map(|v| v.len()).collect()
    }
}
