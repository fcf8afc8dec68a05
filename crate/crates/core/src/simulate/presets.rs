//! Desk-scale scenario presets patterned on two real plants: one with two
//! rows of portrait modules per bench, one with six rows of landscape
//! modules per bench.

use alloc::string::String;
use alloc::vec::Vec;

use crate::camera::GeoOrigin;

use crate::pipeline::PipelineConfig;

use super::cameras::CameraParams;
use super::plant::PlantParams;
use super::render::NoiseProfile;
use super::surface::CloudParams;
use super::SceneSpec;

pub const NAMES: [&str; 4] = ["pp1-desk", "pp2-desk", "zero-noise", "paper-noise"];

pub fn geo_origin() -> GeoOrigin {
    GeoOrigin {
        lat: 48.137,
        lon: 11.575,
        alt: 520.0,
    }
}

pub fn pp1_plant() -> PlantParams {
    PlantParams {
        lines: 3,
        benches_per_line: 9,
        rows_per_bench: 2,
        modules_per_row: alloc::vec![10],
        module_along: 1.0,
        module_across: 1.65,
        module_spacing: 0.02,
        row_spacing: 0.1,
        gap_factor: 1.45,
        gap_tolerance: 0.1,
        tilt_deg: 20.0,
        line_clearance: 5.0,
        mount_height: 1.2,
        terrain_slope: [0.01, -0.02],
        terrain_undulation: 0.3,
        terrain_wavelength: 40.0,
    }
}

pub fn pp1_camera() -> CameraParams {
    CameraParams {
        width: 1600,
        height: 1200,
        focal: 4000.0,
        altitude: 60.0,
        overlap: 0.5,
        geo_origin: geo_origin(),
    }
}

pub fn pp1_cloud() -> CloudParams {
    CloudParams {
        module_grid: [7, 11],
        terrain_step: 0.5,
        terrain_margin: 3.0,
    }
}

pub fn pp2_plant() -> PlantParams {
    PlantParams {
        lines: 3,
        benches_per_line: 3,
        rows_per_bench: 6,
        modules_per_row: alloc::vec![12],
        module_along: 1.57,
        module_across: 0.79,
        module_spacing: 0.02,
        row_spacing: 0.05,
        tilt_deg: 15.0,
        ..pp1_plant()
    }
}

pub fn pp2_camera() -> CameraParams {
    CameraParams {
        focal: 2260.0,
        ..pp1_camera()
    }
}

pub fn pp2_cloud() -> CloudParams {
    CloudParams {
        module_grid: [11, 5],
        ..pp1_cloud()
    }
}

/// Scenario by preset name. Plant presets come with zero noise; the noise
/// presets use the pp1-desk plant.
pub fn scene(name: &str, seed: u64) -> Option<SceneSpec> {
    let (plant, camera, cloud, noise) = match name {
        "pp1-desk" | "zero-noise" => (pp1_plant(), pp1_camera(), pp1_cloud(), NoiseProfile::zero(seed)),
        "pp2-desk" => (pp2_plant(), pp2_camera(), pp2_cloud(), NoiseProfile::zero(seed)),
        "paper-noise" => (pp1_plant(), pp1_camera(), pp1_cloud(), NoiseProfile::paper(seed)),
        _ => return None,
    };
    Some(SceneSpec {
        plant,
        camera,
        cloud,
        noise,
        plant_seed: seed,
        forced_drops: Vec::new(),
    })
}

/// Pipeline configuration matching a scenario preset. Neighbouring modules
/// of both plants sit about half a representative diagonal apart, so the
/// detector fusion separation is lowered to 0.3 diagonals; duplicate
/// detections of one module stay well inside that.
pub fn pipeline(name: &str, seed: u64) -> Option<PipelineConfig> {
    let spec = scene(name, seed)?;
    let mut cfg = PipelineConfig::new(spec.plant.rows_per_bench).with_seed(seed);
    cfg.fuse.fusion_min_sep = 0.3;
    Some(cfg)
}

/// Noise profile by preset name.
pub fn noise(name: &str, seed: u64) -> Option<NoiseProfile> {
    match name {
        "zero-noise" => Some(NoiseProfile::zero(seed)),
        "paper-noise" => Some(NoiseProfile::paper(seed)),
        _ => None,
    }
}

pub fn names() -> Vec<String> {
    NAMES.iter().map(|s| String::from(*s)).collect()
}
