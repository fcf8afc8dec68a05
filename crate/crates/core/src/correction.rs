//! Manual edits applied to inferred image structures before lifting.

use alloc::string::String;
use alloc::vec::Vec;

use crate::detect::{DetectorSource, ModuleDetection};
use crate::error::{Error, Result};
use crate::geom::{OrientedBox, Vec2};
use crate::structure::{GapKeypoint, GapKind, ImageStructure, SectorEntry};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "op", rename_all = "snake_case"))]
pub enum Correction {
    /// Bench gap between row entries `after_in_row_index` and the next one.
    AddKeypoint {
        frame_id: String,
        row_index: usize,
        after_in_row_index: usize,
    },
    DeleteKeypoint { frame_id: String, keypoint_index: usize },
    /// New module with the representative box dimensions.
    AddModule { frame_id: String, center: Vec2, row_index: usize },
    /// Removes the detection with this input record index from its row.
    DeleteModule { frame_id: String, detection_index: usize },
}

impl Correction {
    pub fn frame_id(&self) -> &str {
        match self {
            Correction::AddKeypoint { frame_id, .. }
            | Correction::DeleteKeypoint { frame_id, .. }
            | Correction::AddModule { frame_id, .. }
            | Correction::DeleteModule { frame_id, .. } => frame_id,
        }
    }
}

fn reject(index: usize, reason: impl Into<String>) -> Error {
    Error::Correction {
        index,
        reason: reason.into(),
    }
}

fn apply_one(s: &mut ImageStructure, c: &Correction, index: usize) -> Result<()> {
    match c {
        Correction::AddKeypoint {
            row_index,
            after_in_row_index,
            ..
        } => {
            if *row_index >= s.rows.len() {
                return Err(reject(index, alloc::format!("row {row_index} does not exist")));
            }
            let entries = s.row_entries(*row_index);
            let i = *after_in_row_index;
            if i + 1 >= entries.len() {
                return Err(reject(index, alloc::format!("no entry follows position {i} in row {row_index}")));
            }
            let (left, right) = (entries[i], entries[i + 1]);
            s.keypoints.push(GapKeypoint {
                row: *row_index,
                left,
                right,
                midpoint: (s.entry_center(left) + s.entry_center(right)) * 0.5,
                kind: GapKind::BenchGap,
                synthetic: true,
            });
        }
        Correction::DeleteKeypoint { keypoint_index, .. } => {
            if *keypoint_index >= s.keypoints.len() {
                return Err(reject(index, alloc::format!("keypoint {keypoint_index} does not exist")));
            }
            s.keypoints.remove(*keypoint_index);
        }
        Correction::AddModule { center, row_index, .. } => {
            if *row_index >= s.rows.len() {
                return Err(reject(index, alloc::format!("row {row_index} does not exist")));
            }
            let rep = s.rep_box.ok_or_else(|| reject(index, "frame has no representative box"))?;
            let bbox = OrientedBox::new(*center, rep.width, rep.height, rep.angle).map_err(|e| reject(index, alloc::format!("{e}")))?;
            let detection_index = s.detections.iter().map(|d| d.detection_index + 1).max().unwrap_or(0);
            s.detections.push(ModuleDetection {
                bbox,
                source: DetectorSource::Primary,
                frame_id: s.frame_id.clone(),
                detection_index,
                score: 1.0,
            });
            let new = s.detections.len() - 1;
            let row = &mut s.rows[*row_index];
            let t = row.parameter(center);
            let dets = &s.detections;
            let pos = row.inliers.iter().position(|&i| row.parameter(&dets[i].bbox.center) > t).unwrap_or(row.inliers.len());
            row.inliers.insert(pos, new);
        }
        Correction::DeleteModule { detection_index, .. } => {
            let det = s
                .detections
                .iter()
                .position(|d| d.detection_index == *detection_index)
                .ok_or_else(|| reject(index, alloc::format!("detection {detection_index} does not exist")))?;
            let e = SectorEntry::Detection(det);
            if s.keypoints.iter().any(|k| k.left == e || k.right == e) {
                return Err(reject(index, alloc::format!("detection {detection_index} bounds a keypoint; delete the keypoint first")));
            }
            let mut found = false;
            for row in &mut s.rows {
                let before = row.inliers.len();
                row.inliers.retain(|&i| i != det);
                found |= row.inliers.len() != before;
            }
            if !found {
                return Err(reject(index, alloc::format!("detection {detection_index} is not assigned to a row")));
            }
        }
    }
    Ok(())
}

/// Applies corrections in order and rebuilds the sectors of every edited
/// frame. `structures` is left untouched if any correction is rejected.
pub fn apply_corrections(structures: &mut [ImageStructure], corrections: &[Correction]) -> Result<Vec<String>> {
    let mut work: Vec<ImageStructure> = structures.to_vec();
    let mut log_lines = Vec::new();
    for (index, c) in corrections.iter().enumerate() {
        let s = work
            .iter_mut()
            .find(|s| s.frame_id == c.frame_id())
            .ok_or_else(|| reject(index, alloc::format!("unknown frame `{}`", c.frame_id())))?;
        apply_one(s, c, index)?;
        s.rebuild_sectors();
        let line = alloc::format!("correction #{index} applied: {c:?}");
        log::info!("{line}");
        log_lines.push(line);
    }
    structures.clone_from_slice(&work);
    Ok(log_lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::FusedFrame;
    use crate::structure::{build_structure, LuminanceGapClassifier, StructureConfig};

    fn structure() -> ImageStructure {
        let dets: Vec<ModuleDetection> = (0..8)
            .map(|i| ModuleDetection {
                bbox: OrientedBox::new(Vec2::new(50.0 + 50.0 * i as f64, 100.0), 40.0, 24.0, 0.0).unwrap(),
                source: DetectorSource::Primary,
                frame_id: "f".into(),
                detection_index: i,
                score: 1.0,
            })
            .collect();
        let fused = FusedFrame {
            frame_id: "f".into(),
            rep_box: Some(OrientedBox::new(Vec2::zeros(), 40.0, 24.0, 0.0).unwrap()),
            detections: dets,
            stats: Default::default(),
        };
        build_structure(&fused, 500.0, 200.0, None, &StructureConfig::new(1), &LuminanceGapClassifier { darkness_ratio: 0.7 }).unwrap()
    }

    #[test]
    fn add_then_delete_keypoint() {
        let mut s = [structure()];
        assert_eq!(s[0].sectors.len(), 1);
        let add = Correction::AddKeypoint {
            frame_id: "f".into(),
            row_index: 0,
            after_in_row_index: 3,
        };
        apply_corrections(&mut s, &[add]).unwrap();
        assert_eq!(s[0].sectors.len(), 2);
        assert_eq!(s[0].sectors[0].entries.len(), 4);
        let del = Correction::DeleteKeypoint {
            frame_id: "f".into(),
            keypoint_index: 0,
        };
        apply_corrections(&mut s, &[del]).unwrap();
        assert_eq!(s[0].sectors.len(), 1);
    }

    #[test]
    fn module_edits() {
        let mut s = [structure()];
        let del = Correction::DeleteModule {
            frame_id: "f".into(),
            detection_index: 2,
        };
        let add = Correction::AddModule {
            frame_id: "f".into(),
            center: Vec2::new(145.0, 100.0),
            row_index: 0,
        };
        apply_corrections(&mut s, &[del, add]).unwrap();
        let e = &s[0].sectors[0].entries;
        assert_eq!(e.len(), 8);
        assert_eq!(e[2], SectorEntry::Detection(8));
    }

    #[test]
    fn bad_references_are_rejected_atomically() {
        let mut s = [structure()];
        let before = s.clone();
        let ok = Correction::AddKeypoint {
            frame_id: "f".into(),
            row_index: 0,
            after_in_row_index: 1,
        };
        let bad = Correction::DeleteKeypoint {
            frame_id: "nope".into(),
            keypoint_index: 0,
        };
        assert!(matches!(apply_corrections(&mut s, &[ok, bad]), Err(Error::Correction { index: 1, .. })));
        assert_eq!(s, before);
    }
}
