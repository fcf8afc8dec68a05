use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pvmap_core::detect::{DetectorSource, ModuleDetection};
use pvmap_core::geom::{OrientedBox, Vec2};

use crate::error::{CliError, CliResult};

/// One record of `detections.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame_id: String,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub angle_rad: f64,
    pub score: f64,
    pub source: DetectorSource,
}

/// Parses detection records. Each detection's index is its position among
/// the records of its frame.
pub fn detections_from_json(text: &str, path: &Path) -> CliResult<Vec<ModuleDetection>> {
    let records: Vec<DetectionRecord> = serde_json::from_str(text).map_err(|e| CliError::input(path, e.to_string()))?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if !(r.w >= 0.0 && r.h >= 0.0) {
            return Err(CliError::input(path, format!("record {i}: negative box dimension")));
        }
        let bbox = OrientedBox::new(Vec2::new(r.cx, r.cy), r.w, r.h, r.angle_rad)
            .map_err(|e| CliError::input(path, format!("record {i}: {e}")))?;
        let k = counts.entry(r.frame_id.as_str()).or_default();
        out.push(ModuleDetection {
            bbox,
            source: r.source,
            frame_id: r.frame_id.clone(),
            detection_index: *k,
            score: r.score,
        });
        *k += 1;
    }
    Ok(out)
}

pub fn load_detections(path: &Path) -> CliResult<Vec<ModuleDetection>> {
    detections_from_json(&super::read_text(path)?, path)
}

/// Writes the detections in the given order, which must keep each frame's
/// detection indices ascending for a faithful reload.
pub fn write_detections(path: &Path, dets: &[ModuleDetection]) -> CliResult<()> {
    let records: Vec<DetectionRecord> = dets
        .iter()
        .map(|d| DetectionRecord {
            frame_id: d.frame_id.clone(),
            cx: d.bbox.center.x,
            cy: d.bbox.center.y,
            w: d.bbox.width,
            h: d.bbox.height,
            angle_rad: d.bbox.angle,
            score: d.score,
            source: d.source,
        })
        .collect();
    super::write_json(path, &records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list() {
        assert!(detections_from_json("[]", Path::new("d.json")).unwrap().is_empty());
    }

    #[test]
    fn single_record() {
        let text = r#"[{"frame_id": "f1", "cx": 100, "cy": 200, "w": 40, "h": 24, "angle_rad": 0.1, "score": 0.9, "source": "primary"}]"#;
        let d = detections_from_json(text, Path::new("d.json")).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].frame_id, "f1");
        assert_eq!(d[0].source, DetectorSource::Primary);
        assert_eq!(d[0].bbox.center, Vec2::new(100.0, 200.0));
        assert_eq!((d[0].bbox.width, d[0].bbox.height), (40.0, 24.0));
    }

    #[test]
    fn negative_dimension_is_rejected() {
        let text = r#"[{"frame_id": "f1", "cx": 1, "cy": 2, "w": -4, "h": 2, "angle_rad": 0, "score": 1, "source": "secondary"}]"#;
        assert!(detections_from_json(text, Path::new("d.json")).is_err());
    }

    #[test]
    fn indices_count_per_frame() {
        let rec = |f: &str| format!(r#"{{"frame_id": "{f}", "cx": 1, "cy": 2, "w": 4, "h": 2, "angle_rad": 0, "score": 1, "source": "primary"}}"#);
        let text = format!("[{}, {}, {}]", rec("a"), rec("b"), rec("a"));
        let d = detections_from_json(&text, Path::new("d.json")).unwrap();
        assert_eq!(d.iter().map(|d| d.detection_index).collect::<Vec<_>>(), vec![0, 0, 1]);
    }
}
