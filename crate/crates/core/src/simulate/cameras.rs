//! Nadir flight planning.

use alloc::vec::Vec;

use crate::camera::{CameraFrame, GeoOrigin};
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec2, Vec3};

use super::plant::GroundTruthPlant;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraParams {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Flying height above the terrain at the plant center.
    pub altitude: f64,
    /// Forward and side overlap of neighboring footprints.
    pub overlap: f64,
    pub geo_origin: GeoOrigin,
}

impl CameraParams {
    /// Ground footprint (width, height) in meters.
    pub fn footprint(&self) -> (f64, f64) {
        (self.width as f64 * self.altitude / self.focal, self.height as f64 * self.altitude / self.focal)
    }
}

fn axis_centers(lo: f64, hi: f64, footprint: f64, overlap: f64) -> Vec<f64> {
    let extent = hi - lo;
    let mid = (lo + hi) / 2.0;
    if extent <= footprint {
        return alloc::vec![mid];
    }
    let step = footprint * (1.0 - overlap);
    let n = libm::ceil(extent / step) as usize + 1;
    let span = (n - 1) as f64 * step;
    (0..n).map(|i| mid - span / 2.0 + i as f64 * step).collect()
}

/// North-up nadir grid over the plant. Plants larger than one footprint
/// are flown with frame centers spanning the plant bounds, so neighboring
/// footprints share `overlap` of their extent along each axis. Frames are
/// numbered row by row from the north-west.
pub fn plan_cameras(plant: &GroundTruthPlant, cam: &CameraParams) -> Result<Vec<CameraFrame>> {
    if !(cam.overlap > 0.0 && cam.overlap < 1.0) {
        return Err(Error::parameter("overlap", "must lie in (0, 1)"));
    }
    if !(cam.focal > 0.0 && cam.altitude > 0.0) || cam.width == 0 || cam.height == 0 {
        return Err(Error::parameter("camera", "focal, altitude and image size must be positive"));
    }
    let (lo, hi) = plant.bounds_xy();
    let (fw, fh) = cam.footprint();
    let xs = axis_centers(lo[0], hi[0], fw, cam.overlap);
    let mut ys = axis_centers(lo[1], hi[1], fh, cam.overlap);
    ys.reverse();
    let (cx, cy) = ((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0);
    let z = plant.terrain.height(cx, cy) + cam.altitude;
    let mut frames = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let frame = CameraFrame {
                frame_id: alloc::format!("f{:03}", frames.len()),
                width: cam.width,
                height: cam.height,
                focal: cam.focal,
                principal_point: Vec2::new(cam.width as f64 / 2.0, cam.height as f64 / 2.0),
                rotation: Mat3::identity(),
                center: Vec3::new(x, y, z),
                geo_origin: cam.geo_origin,
            };
            frame.validate()?;
            frames.push(frame);
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::plant::{generate_plant, PlantParams};
    use crate::simulate::presets;

    fn cam(overlap: f64) -> CameraParams {
        CameraParams {
            overlap,
            ..presets::pp1_camera()
        }
    }

    #[test]
    fn small_plant_needs_one_frame() {
        let p = PlantParams {
            lines: 1,
            benches_per_line: 1,
            rows_per_bench: 1,
            modules_per_row: alloc::vec![3],
            ..presets::pp1_plant()
        };
        let plant = generate_plant(&p, 0).unwrap();
        assert_eq!(plan_cameras(&plant, &cam(0.5)).unwrap().len(), 1);
    }

    #[test]
    fn footprint_by_similar_triangles() {
        let c = CameraParams {
            width: 4000,
            height: 3000,
            focal: 3000.0,
            altitude: 80.0,
            ..cam(0.5)
        };
        assert!((c.footprint().0 - 106.666_666_666_666_67).abs() < 1e-9);
    }

    // Independent oracle: intersect the ground rectangles of neighboring
    // frames, obtained by back-projecting the image corners onto the plane
    // at the plant's ground height.
    #[test]
    fn neighboring_footprints_share_the_overlap() {
        let plant = generate_plant(&presets::pp1_plant(), 0).unwrap();
        let c = cam(0.5);
        let frames = plan_cameras(&plant, &c).unwrap();
        assert!(frames.len() > 1);
        let ground = frames[0].center.z - c.altitude;
        let rect = |f: &CameraFrame| {
            let a = f.pixel_ray(&Vec2::zeros());
            let b = f.pixel_ray(&Vec2::new(f.width as f64, f.height as f64));
            let hit = |r: crate::camera::Ray| r.at((ground - r.origin.z) / r.direction.z);
            let (p, q) = (hit(a), hit(b));
            ([p.x.min(q.x), p.y.min(q.y)], [p.x.max(q.x), p.y.max(q.y)])
        };
        let area = |r: &([f64; 2], [f64; 2])| (r.1[0] - r.0[0]) * (r.1[1] - r.0[1]);
        let mut checked = 0;
        for i in 0..frames.len() {
            for j in i + 1..frames.len() {
                let d = frames[i].center - frames[j].center;
                let (a, b) = (rect(&frames[i]), rect(&frames[j]));
                let neighbors = (d.x.abs() < 1e-9) != (d.y.abs() < 1e-9)
                    && d.x.abs() <= (a.1[0] - a.0[0]) * 0.5 + 1e-9
                    && d.y.abs() <= (a.1[1] - a.0[1]) * 0.5 + 1e-9;
                if !neighbors {
                    continue;
                }
                let w = a.1[0].min(b.1[0]) - a.0[0].max(b.0[0]);
                let h = a.1[1].min(b.1[1]) - a.0[1].max(b.0[1]);
                assert!(w * h >= 0.5 * area(&a) - 1e-6, "frames {i} and {j}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn rejects_bad_overlap() {
        let plant = generate_plant(&presets::pp1_plant(), 0).unwrap();
        assert!(plan_cameras(&plant, &cam(1.0)).is_err());
        assert!(plan_cameras(&plant, &cam(0.0)).is_err());
    }
}
