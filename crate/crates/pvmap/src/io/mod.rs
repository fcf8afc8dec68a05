//! Readers and writers for every file the pipeline consumes or emits.

mod cameras;
mod cloud;
mod detections;
mod export;
mod ppm;

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use pvmap_core::correction::Correction;
use pvmap_core::evaluate::TruthTable;
use pvmap_core::optimize::{ModulePose, PlantModel};

use crate::error::{CliError, CliResult};

pub use cameras::{cameras_from_json, cameras_to_json, load_camera_frames, write_camera_frames, CameraRecord};
pub use cloud::{load_point_cloud, parse_point_cloud, write_point_cloud};
pub use detections::{detections_from_json, load_detections, write_detections, DetectionRecord};
pub use export::{geojson, model_csv, overlay_svg, stats_csv};
pub use ppm::{decode_ppm, encode_ppm, load_image, write_image};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::input(path, e.to_string()))
}

/// Pretty JSON with a trailing newline. Floats use the shortest text that
/// parses back to the same value.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory JSON serialization");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    write_bytes(path, to_json(value).as_bytes())
}

pub fn load_corrections(path: &Path) -> CliResult<Vec<Correction>> {
    read_json(path)
}

pub fn load_model(path: &Path) -> CliResult<PlantModel> {
    let model: PlantModel = read_json(path)?;
    let mut seen = std::collections::BTreeSet::new();
    for m in &model.modules {
        if !seen.insert(m.global_id) {
            return Err(CliError::input(path, format!("duplicate global_id {}", m.global_id)));
        }
        if !(m.position.iter().chain(m.normal.iter()).all(|v| v.is_finite())) {
            return Err(CliError::input(path, format!("module {} has non-finite pose", m.global_id)));
        }
    }
    Ok(model)
}

pub fn load_poses(path: &Path) -> CliResult<Vec<ModulePose>> {
    read_json(path)
}

pub fn load_truth(path: &Path) -> CliResult<TruthTable> {
    read_json(path)
}
