use std::path::Path;

use serde::{Deserialize, Serialize};

use pvmap_core::camera::{CameraFrame, GeoOrigin};
use pvmap_core::geom::{Mat3, Vec2, Vec3};

use crate::error::{CliError, CliResult};

/// One record of `cameras.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub center: [f64; 3],
    pub geo_origin: GeoOrigin,
}

impl From<&CameraFrame> for CameraRecord {
    fn from(f: &CameraFrame) -> Self {
        let m = &f.rotation;
        CameraRecord {
            frame_id: f.frame_id.clone(),
            width: f.width,
            height: f.height,
            focal_px: f.focal,
            cx: f.principal_point.x,
            cy: f.principal_point.y,
            r: [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            center: f.center.into(),
            geo_origin: f.geo_origin,
        }
    }
}

impl CameraRecord {
    pub fn to_frame(&self) -> CameraFrame {
        CameraFrame {
            frame_id: self.frame_id.clone(),
            width: self.width,
            height: self.height,
            focal: self.focal_px,
            principal_point: Vec2::new(self.cx, self.cy),
            rotation: Mat3::from_row_slice(&self.r),
            center: Vec3::from(self.center),
            geo_origin: self.geo_origin,
        }
    }
}

/// Parses and validates camera records; `path` only labels errors.
pub fn cameras_from_json(text: &str, path: &Path) -> CliResult<Vec<CameraFrame>> {
    let records: Vec<CameraRecord> = serde_json::from_str(text).map_err(|e| CliError::input(path, e.to_string()))?;
    let mut frames = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let f = r.to_frame();
        f.validate().map_err(|e| CliError::input(path, format!("record {i}: {e}")))?;
        if frames.iter().any(|g: &CameraFrame| g.frame_id == f.frame_id) {
            return Err(CliError::input(path, format!("record {i}: duplicate frame_id `{}`", f.frame_id)));
        }
        frames.push(f);
    }
    Ok(frames)
}

pub fn cameras_to_json(frames: &[CameraFrame]) -> String {
    let records: Vec<CameraRecord> = frames.iter().map(CameraRecord::from).collect();
    super::to_json(&records)
}

pub fn load_camera_frames(path: &Path) -> CliResult<Vec<CameraFrame>> {
    cameras_from_json(&super::read_text(path)?, path)
}

pub fn write_camera_frames(path: &Path, frames: &[CameraFrame]) -> CliResult<()> {
    super::write_bytes(path, cameras_to_json(frames).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: &str = r#"[{"frame_id": "f1", "width": 100, "height": 80, "focal_px": 50.0, "cx": 50.0, "cy": 40.0,
        "R": [1,0,0, 0,1,0, 0,0,1], "center": [0, 0, 100], "geo_origin": {"lat": 48.0, "lon": 16.0, "alt": 200.0}}]"#;

    #[test]
    fn identity_pose() {
        let f = cameras_from_json(IDENTITY, Path::new("c.json")).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].rotation, Mat3::identity());
        assert_eq!(f[0].center, Vec3::new(0.0, 0.0, 100.0));
    }

    #[test]
    fn reflection_is_rejected() {
        let text = IDENTITY.replace("0,0,1]", "0,0,-1]");
        let err = cameras_from_json(&text, Path::new("c.json")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn malformed_record_names_the_field() {
        let text = IDENTITY.replace("\"focal_px\": 50.0", "\"focal_px\": \"x\"");
        let err = cameras_from_json(&text, Path::new("c.json")).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn round_trip() {
        let f = cameras_from_json(IDENTITY, Path::new("c.json")).unwrap();
        assert_eq!(cameras_from_json(&cameras_to_json(&f), Path::new("c.json")).unwrap(), f);
    }
}
