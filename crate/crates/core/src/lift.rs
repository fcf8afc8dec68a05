//! Lifting image observations onto the point cloud.

use alloc::string::String;
use alloc::vec::Vec;

use crate::camera::CameraFrame;
use crate::cloud::{raycast_cloud, CloudIndex, PointCloud, SurfaceSample};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::structure::{ImageStructure, SectorEntry};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LiftConfig {
    pub knn_k: usize,
    pub max_ray_residual: f64,
    pub voxel_cell_factor: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            knn_k: 5,
            max_ray_residual: 0.5,
            voxel_cell_factor: 2.0,
        }
    }
}

impl LiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::parameter("knn_k", "must be at least 1"));
        }
        if !(self.max_ray_residual > 0.0) {
            return Err(Error::parameter("max_ray_residual", "must be positive"));
        }
        if !(self.voxel_cell_factor > 0.0) {
            return Err(Error::parameter("voxel_cell_factor", "must be positive"));
        }
        Ok(())
    }
}

/// A cloud with its index, ready for ray queries.
pub struct Lifter<'a> {
    cloud: &'a PointCloud,
    index: CloudIndex,
    cfg: LiftConfig,
}

impl<'a> Lifter<'a> {
    pub fn new(cloud: &'a PointCloud, cfg: LiftConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Lifter {
            cloud,
            index: CloudIndex::build(cloud, cfg.voxel_cell_factor)?,
            cfg,
        })
    }

    pub fn lift_pixel(&self, frame: &CameraFrame, pixel: &Vec2) -> Result<SurfaceSample> {
        raycast_cloud(&frame.pixel_ray(pixel), self.cloud, &self.index, self.cfg.knn_k, self.cfg.max_ray_residual)
    }

    fn lift_or_skip(&self, frame: &CameraFrame, pixel: &Vec2, what: &str) -> Option<SurfaceSample> {
        match self.lift_pixel(frame, pixel) {
            Ok(s) => Some(s),
            Err(e) => {
                log::debug!("frame `{}`: {what} at ({:.1}, {:.1}) unlifted: {e}", frame.frame_id, pixel.x, pixel.y);
                None
            }
        }
    }
}

/// Surface samples for every observation of one image, parallel to the
/// structure's detection, hypothesis and keypoint lists. `None` marks an
/// unlifted observation.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LiftedStructure {
    pub frame_id: String,
    pub detections: Vec<Option<SurfaceSample>>,
    pub hypotheses: Vec<Option<SurfaceSample>>,
    pub keypoints: Vec<Option<SurfaceSample>>,
}

impl LiftedStructure {
    pub fn entry(&self, e: SectorEntry) -> Option<&SurfaceSample> {
        match e {
            SectorEntry::Detection(i) => self.detections.get(i)?.as_ref(),
            SectorEntry::Hypothesis(i) => self.hypotheses.get(i)?.as_ref(),
        }
    }

    /// Lifts observations added to `s` since this was computed.
    pub fn extend_to(&mut self, s: &ImageStructure, frame: &CameraFrame, lifter: &Lifter<'_>) {
        for d in &s.detections[self.detections.len()..] {
            self.detections.push(lifter.lift_or_skip(frame, &d.bbox.center, "module"));
        }
        for h in &s.hypothesized[self.hypotheses.len()..] {
            self.hypotheses.push(lifter.lift_or_skip(frame, &h.center, "hypothesis"));
        }
        for k in &s.keypoints[self.keypoints.len()..] {
            self.keypoints.push(lifter.lift_or_skip(frame, &k.midpoint, "keypoint"));
        }
    }
}

pub fn lift_structure(s: &ImageStructure, frame: &CameraFrame, lifter: &Lifter<'_>) -> Result<LiftedStructure> {
    if s.frame_id != frame.frame_id {
        return Err(Error::invalid(
            "lift input",
            alloc::format!("structure `{}` paired with camera `{}`", s.frame_id, frame.frame_id),
        ));
    }
    let mut l = LiftedStructure {
        frame_id: s.frame_id.clone(),
        detections: Vec::new(),
        hypotheses: Vec::new(),
        keypoints: Vec::new(),
    };
    l.extend_to(s, frame, lifter);
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::GeoOrigin;
    use crate::cloud::SurfacePoint;
    use crate::geom::{Mat3, Vec3};

    fn nadir(id: &str) -> CameraFrame {
        CameraFrame {
            frame_id: id.into(),
            width: 1000,
            height: 800,
            focal: 1000.0,
            principal_point: Vec2::new(500.0, 400.0),
            rotation: Mat3::identity(),
            center: Vec3::new(0.0, 0.0, 50.0),
            geo_origin: GeoOrigin { lat: 0.0, lon: 0.0, alt: 0.0 },
        }
    }

    // 0.1 m grid on z = 0 covering [-2, 2]^2
    fn plane() -> PointCloud {
        let mut pts = Vec::new();
        for i in -20..=20 {
            for j in -20..=20 {
                pts.push(SurfacePoint {
                    position: Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0),
                    normal: Vec3::z(),
                    color: [90; 3],
                });
            }
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn pixel_lifts_onto_the_plane_below() {
        let cloud = plane();
        let lifter = Lifter::new(&cloud, LiftConfig::default()).unwrap();
        let frame = nadir("a");
        let s = lifter.lift_pixel(&frame, &Vec2::new(500.0, 400.0)).unwrap();
        assert!(s.position.norm() < 0.05, "{:?}", s.position);
        assert!((s.normal - Vec3::z()).norm() < 1e-12);
        assert_eq!(s.support, 5);
        // 20 px right and 20 px down at 50 m altitude and f = 1000: (1, -1)
        let s = lifter.lift_pixel(&frame, &Vec2::new(520.0, 420.0)).unwrap();
        assert!((s.position - Vec3::new(1.0, -1.0, 0.0)).norm() < 0.05, "{:?}", s.position);
    }

    #[test]
    fn pixel_off_the_cloud_is_unlifted() {
        let cloud = plane();
        let lifter = Lifter::new(&cloud, LiftConfig::default()).unwrap();
        let err = lifter.lift_pixel(&nadir("a"), &Vec2::new(900.0, 400.0)).unwrap_err();
        assert!(matches!(err, Error::NoIntersection { .. }));
    }

    #[test]
    fn structure_and_camera_must_match() {
        let cloud = plane();
        let lifter = Lifter::new(&cloud, LiftConfig::default()).unwrap();
        let s = ImageStructure::empty("a", 1000.0, 800.0);
        assert!(lift_structure(&s, &nadir("b"), &lifter).is_err());
        let l = lift_structure(&s, &nadir("a"), &lifter).unwrap();
        assert!(l.detections.is_empty() && l.keypoints.is_empty());
    }
}
