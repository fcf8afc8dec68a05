//! Calibrated pinhole cameras in a local East-North-Up frame.
//!
//! The camera looks down its local `-z` axis with `x` to the right of the
//! image and `y` towards the top of the image. `rotation` maps world
//! vectors into the camera frame, so the identity is a nadir view with
//! north at the top of the image.

use alloc::string::String;

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec2, Vec3};

/// Geodetic anchor of the ENU frame.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeoOrigin {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraFrame {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub principal_point: Vec2,
    pub rotation: Mat3,
    pub center: Vec3,
    pub geo_origin: GeoOrigin,
}

/// Half-line with unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate("zero ray direction"));
        }
        Ok(Ray {
            origin,
            direction: direction / n,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Ray parameter of the orthogonal projection of `p` and the
    /// perpendicular distance from `p` to the infinite line.
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        let d = p - self.origin;
        let t = d.dot(&self.direction);
        let perp = d - self.direction * t;
        (t, perp.norm())
    }

    /// Distance from `p` to the half-line (clamped at the origin).
    pub fn distance(&self, p: &Vec3) -> f64 {
        let (t, perp) = self.project(p);
        if t >= 0.0 {
            perp
        } else {
            (p - self.origin).norm()
        }
    }
}

impl CameraFrame {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::invalid("camera frame", alloc::format!("`{}`: focal must be positive", self.frame_id)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera frame", alloc::format!("`{}`: empty image size", self.frame_id)));
        }
        let pp = self.principal_point;
        if !(pp.x >= 0.0 && pp.x <= self.width as f64 && pp.y >= 0.0 && pp.y <= self.height as f64) {
            return Err(Error::invalid(
                "camera frame",
                alloc::format!("`{}`: principal point outside the image", self.frame_id),
            ));
        }
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Mat3::identity()).abs().max();
        if !(ortho <= 1e-6) || !((r.determinant() - 1.0).abs() <= 1e-6) {
            return Err(Error::invalid(
                "camera frame",
                alloc::format!("`{}`: rotation is not a proper orthonormal matrix", self.frame_id),
            ));
        }
        if !(self.center.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("camera frame", alloc::format!("`{}`: non-finite center", self.frame_id)));
        }
        Ok(())
    }

    /// World-space ray through the given pixel.
    pub fn pixel_ray(&self, pixel: &Vec2) -> Ray {
        let cam = Vec3::new(
            (pixel.x - self.principal_point.x) / self.focal,
            -(pixel.y - self.principal_point.y) / self.focal,
            -1.0,
        );
        let world = self.rotation.transpose() * cam;
        Ray {
            origin: self.center,
            direction: world.normalize(),
        }
    }

    /// Pixel coordinates of a world point, or `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<Vec2> {
        let cam = self.rotation * (p - self.center);
        if !(cam.z < 0.0) {
            return None;
        }
        let depth = -cam.z;
        Some(Vec2::new(
            self.principal_point.x + self.focal * cam.x / depth,
            self.principal_point.y - self.focal * cam.y / depth,
        ))
    }

    pub fn contains_pixel(&self, p: &Vec2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Rotation3;

    fn nadir() -> CameraFrame {
        CameraFrame {
            frame_id: "f".into(),
            width: 1000,
            height: 800,
            focal: 1200.0,
            principal_point: Vec2::new(500.0, 400.0),
            rotation: Mat3::identity(),
            center: Vec3::new(0.0, 0.0, 100.0),
            geo_origin: GeoOrigin::default(),
        }
    }

    #[test]
    fn principal_point_looks_down() {
        let c = nadir();
        let r = c.pixel_ray(&Vec2::new(500.0, 400.0));
        assert_abs_diff_eq!(r.direction, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
        assert_eq!(r.origin, c.center);
    }

    #[test]
    fn focal_offset_is_45_degrees() {
        let c = nadir();
        let r = c.pixel_ray(&Vec2::new(500.0 + 1200.0, 400.0));
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(r.direction, Vec3::new(s, 0.0, -s), epsilon = 1e-15);
    }

    #[test]
    fn image_up_is_north() {
        let c = nadir();
        let p = c.project(&Vec3::new(0.0, 10.0, 0.0)).unwrap();
        assert!(p.y < 400.0);
        let p = c.project(&Vec3::new(10.0, 0.0, 0.0)).unwrap();
        assert!(p.x > 500.0);
    }

    #[test]
    fn projection_round_trip() {
        let mut c = nadir();
        c.rotation = *Rotation3::from_euler_angles(0.1, -0.05, 0.7).matrix();
        c.center = Vec3::new(3.0, -4.0, 80.0);
        for p in [Vec3::new(1.0, 2.0, 0.5), Vec3::new(-10.0, 4.0, -2.0), Vec3::new(0.0, 0.0, 0.0)] {
            let px = c.project(&p).unwrap();
            let ray = c.pixel_ray(&px);
            assert!(ray.distance(&p) < 1e-9);
        }
    }

    #[test]
    fn reflection_is_rejected() {
        let mut c = nadir();
        c.rotation = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(c.validate().is_err());
        assert!(nadir().validate().is_ok());
    }
}
