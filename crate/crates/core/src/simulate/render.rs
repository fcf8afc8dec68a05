//! Synthetic detections and flat-shaded images.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::CameraFrame;
use crate::detect::{DetectorSource, ModuleDetection};
use crate::error::{Error, Result};
use crate::geom::{OrientedBox, Vec2, Vec3};
use crate::raster::ImageRaster;
use crate::structure::frame_seed;

use super::plant::{GroundTruthPlant, TruthModule};

pub const GROUND_RGB: [u8; 3] = [165, 160, 140];
pub const FRAME_RGB: [u8; 3] = [200, 200, 205];
pub const CELL_RGB: [u8; 3] = [30, 50, 110];
pub const GAP_RGB: [u8; 3] = [28, 28, 30];
/// Width of the bright module frame as a fraction of the module size.
pub const FRAME_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseProfile {
    /// Probability that a module is missed by both detectors in one frame.
    pub dropout: f64,
    /// Probability that only the secondary detector finds a module.
    pub primary_miss: f64,
    /// Probability that the secondary detector also reports a module the
    /// primary one found.
    pub secondary_duplicate: f64,
    pub center_jitter_px: f64,
    /// Relative standard deviation of box width and height.
    pub dimension_jitter: f64,
    /// Constant per-frame displacement of secondary detections.
    pub secondary_shift_px: f64,
    pub secondary_jitter_px: f64,
    pub cloud_noise: f64,
    /// Standard deviation of a height offset shared by all cloud points of
    /// one module, the depth bias SfM shows on glossy low-texture panels.
    pub surface_bias: f64,
    pub warp_amplitude: [f64; 3],
    pub warp_wavelength: f64,
    pub seed: u64,
}

impl NoiseProfile {
    pub fn zero(seed: u64) -> Self {
        NoiseProfile {
            dropout: 0.0,
            primary_miss: 0.0,
            secondary_duplicate: 0.0,
            center_jitter_px: 0.0,
            dimension_jitter: 0.0,
            secondary_shift_px: 0.0,
            secondary_jitter_px: 0.0,
            cloud_noise: 0.0,
            surface_bias: 0.0,
            warp_amplitude: [0.0; 3],
            warp_wavelength: 60.0,
            seed,
        }
    }

    pub fn paper(seed: u64) -> Self {
        NoiseProfile {
            dropout: 0.015,
            primary_miss: 0.15,
            secondary_duplicate: 0.8,
            center_jitter_px: 2.0,
            dimension_jitter: 0.03,
            secondary_shift_px: 1.5,
            secondary_jitter_px: 1.0,
            cloud_noise: 0.02,
            surface_bias: 0.05,
            warp_amplitude: [0.2, 0.2, 0.6],
            warp_wavelength: 30.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dropout", self.dropout),
            ("primary_miss", self.primary_miss),
            ("secondary_duplicate", self.secondary_duplicate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parameter(name, "must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("center_jitter_px", self.center_jitter_px),
            ("dimension_jitter", self.dimension_jitter),
            ("secondary_shift_px", self.secondary_shift_px),
            ("secondary_jitter_px", self.secondary_jitter_px),
            ("cloud_noise", self.cloud_noise),
            ("surface_bias", self.surface_bias),
            ("warp_amplitude", self.warp_amplitude[0].min(self.warp_amplitude[1]).min(self.warp_amplitude[2])),
        ] {
            if !(v >= 0.0) {
                return Err(Error::parameter(name, "must be non-negative"));
            }
        }
        if !(self.warp_wavelength > 0.0) {
            return Err(Error::parameter("warp_wavelength", "must be positive"));
        }
        Ok(())
    }
}

/// Projected module: box centered on the projected module center with the
/// size and orientation of the projected outline, and the outline itself.
pub fn project_module(frame: &CameraFrame, m: &TruthModule, along: f64, across: f64) -> Option<(OrientedBox, [Vec2; 4])> {
    let c = frame.project(&m.position)?;
    let q = m.corners(along, across);
    let mut quad = [Vec2::zeros(); 4];
    for (o, p) in quad.iter_mut().zip(q.iter()) {
        *o = frame.project(p)?;
    }
    let mut b = OrientedBox::from_quad(&quad).ok()?;
    b.center = c;
    Some((b, quad))
}

fn inside(frame: &CameraFrame, p: &Vec2, margin: f64) -> bool {
    p.x >= margin && p.y >= margin && p.x <= frame.width as f64 - margin && p.y <= frame.height as f64 - margin
}

/// Whether the whole module outline projects at least `margin` pixels
/// inside the image.
pub fn fully_visible(frame: &CameraFrame, m: &TruthModule, along: f64, across: f64, margin: f64) -> bool {
    project_module(frame, m, along, across).is_some_and(|(_, q)| q.iter().all(|p| inside(frame, p, margin)))
}

/// Detections of one frame and the ground-truth module of each record.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDetections {
    pub detections: Vec<ModuleDetection>,
    pub truth: Vec<usize>,
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).map_or(0.0, |n| n.sample(rng))
    } else {
        0.0
    }
}

/// Emits detections for every module whose projected center falls inside
/// the image, including modules cut by the image border. `forced_drops`
/// lists modules this frame must miss.
pub fn simulate_detections(plant: &GroundTruthPlant, frame: &CameraFrame, noise: &NoiseProfile, forced_drops: &[usize]) -> FrameDetections {
    let p = &plant.params;
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(&frame.frame_id, noise.seed ^ 0x00de_7ec7));
    let phi = rng.random_range(0.0..TAU);
    let shift = Vec2::new(libm::cos(phi), libm::sin(phi)) * noise.secondary_shift_px;
    let mut out = FrameDetections {
        detections: Vec::new(),
        truth: Vec::new(),
    };
    let emit = |out: &mut FrameDetections, rng: &mut ChaCha8Rng, b: &OrientedBox, src: DetectorSource, id: usize| {
        let (offset, jitter, score) = match src {
            DetectorSource::Primary => (Vec2::zeros(), noise.center_jitter_px, 0.9),
            DetectorSource::Secondary => (shift, libm::hypot(noise.center_jitter_px, noise.secondary_jitter_px), 0.7),
        };
        let d = Vec2::new(gaussian(rng, jitter), gaussian(rng, jitter));
        let w = b.width * (1.0 + gaussian(rng, noise.dimension_jitter));
        let h = b.height * (1.0 + gaussian(rng, noise.dimension_jitter));
        let Ok(bbox) = OrientedBox::new(b.center + offset + d, w.max(1e-3), h.max(1e-3), b.angle) else {
            return;
        };
        out.detections.push(ModuleDetection {
            bbox,
            source: src,
            frame_id: frame.frame_id.clone(),
            detection_index: out.detections.len(),
            score,
        });
        out.truth.push(id);
    };
    for m in &plant.modules {
        let Some((b, _)) = project_module(frame, m, p.module_along, p.module_across) else {
            continue;
        };
        if !inside(frame, &b.center, 0.0) {
            continue;
        }
        let dropped = rng.random::<f64>() < noise.dropout;
        let primary_missed = rng.random::<f64>() < noise.primary_miss;
        let duplicated = rng.random::<f64>() < noise.secondary_duplicate;
        if dropped || forced_drops.contains(&m.id) {
            continue;
        }
        if primary_missed {
            emit(&mut out, &mut rng, &b, DetectorSource::Secondary, m.id);
        } else {
            emit(&mut out, &mut rng, &b, DetectorSource::Primary, m.id);
            if duplicated {
                emit(&mut out, &mut rng, &b, DetectorSource::Secondary, m.id);
            }
        }
    }
    out
}

fn project_quad(frame: &CameraFrame, q: &[Vec3; 4]) -> Option<[Vec2; 4]> {
    let mut out = [Vec2::zeros(); 4];
    for (o, p) in out.iter_mut().zip(q.iter()) {
        *o = frame.project(p)?;
    }
    let (w, h) = (frame.width as f64, frame.height as f64);
    let off = out.iter().all(|p| p.x < 0.0) || out.iter().all(|p| p.y < 0.0) || out.iter().all(|p| p.x > w) || out.iter().all(|p| p.y > h);
    (!off).then_some(out)
}

/// Flat-shaded nadir image: ground, bright module frames around dark cell
/// areas, and very dark strips in the gaps between benches.
pub fn render_image(plant: &GroundTruthPlant, frame: &CameraFrame) -> ImageRaster {
    let p = &plant.params;
    let mut img = ImageRaster::filled(frame.width, frame.height, GROUND_RGB);
    for line in 0..p.lines {
        for bench in 1..p.benches_per_line {
            for row in 0..p.rows_per_bench {
                let left = plant.modules_in_row(line, bench - 1, row);
                let right = plant.modules_in_row(line, bench, row);
                let (Some(&l), Some(&r)) = (left.last(), right.first()) else {
                    continue;
                };
                let (a, b) = (&plant.modules[l], &plant.modules[r]);
                let la = a.corners(p.module_along, p.module_across);
                let rb = b.corners(p.module_along, p.module_across);
                if let Some(q) = project_quad(frame, &[la[1], rb[0], rb[3], la[2]]) {
                    img.fill_convex(&q, GAP_RGB);
                }
            }
        }
    }
    for m in &plant.modules {
        let outer = m.corners(p.module_along, p.module_across);
        let Some(q) = project_quad(frame, &outer) else {
            continue;
        };
        img.fill_convex(&q, FRAME_RGB);
        let k = 1.0 - 2.0 * FRAME_FRACTION;
        if let Some(q) = project_quad(frame, &m.corners(p.module_along * k, p.module_across * k)) {
            img.fill_convex(&q, CELL_RGB);
        }
    }
    img
}
