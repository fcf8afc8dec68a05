//! SfM-like point cloud of the plant: sampled surfaces, point noise and a
//! smooth low-frequency warp.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{PointCloud, SurfacePoint};
use crate::error::{Error, Result};
use crate::geom::{Vec2, Vec3};

use super::plant::GroundTruthPlant;
use super::render::{CELL_RGB, GAP_RGB, GROUND_RGB, NoiseProfile};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CloudParams {
    /// Odd sample counts per module (along, across). The center sample
    /// sits on the module center.
    pub module_grid: [usize; 2],
    pub terrain_step: f64,
    /// Terrain extends this far beyond the plant.
    pub terrain_margin: f64,
}

impl CloudParams {
    pub fn validate(&self) -> Result<()> {
        if self.module_grid.iter().any(|&n| n == 0 || n % 2 == 0) {
            return Err(Error::parameter("module_grid", "sample counts must be odd"));
        }
        if !(self.terrain_step > 0.0) || !(self.terrain_margin >= 0.0) {
            return Err(Error::parameter("terrain", "step must be positive and margin non-negative"));
        }
        Ok(())
    }
}

/// What a cloud point was sampled from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CloudLabel {
    Module(usize),
    Gap,
    Terrain,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Wave {
    direction: Vec2,
    wavenumber: f64,
    phase: f64,
    weight: f64,
}

/// Sum of a few horizontal sinusoids per axis. Each axis' weights sum to
/// one, so the displacement along an axis never exceeds its amplitude.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    amplitude: [f64; 3],
    waves: [Vec<Wave>; 3],
}

impl WarpField {
    pub fn new(amplitude: [f64; 3], wavelength: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut axis = || {
            let n = rng.random_range(2..=3);
            let mut waves: Vec<Wave> = (0..n)
                .map(|_| {
                    let a = rng.random_range(0.0..TAU);
                    Wave {
                        direction: Vec2::new(libm::cos(a), libm::sin(a)),
                        wavenumber: TAU / (wavelength * rng.random_range(1.0..2.0)),
                        phase: rng.random_range(0.0..TAU),
                        weight: rng.random_range(0.5..1.0),
                    }
                })
                .collect();
            let total: f64 = waves.iter().map(|w| w.weight).sum();
            for w in &mut waves {
                w.weight /= total;
            }
            waves
        };
        let waves = [axis(), axis(), axis()];
        WarpField { amplitude, waves }
    }

    pub fn displacement(&self, p: &Vec3) -> Vec3 {
        let xy = Vec2::new(p.x, p.y);
        let mut d = Vec3::zeros();
        for k in 0..3 {
            if self.amplitude[k] == 0.0 {
                continue;
            }
            let s: f64 = self.waves[k]
                .iter()
                .map(|w| w.weight * libm::sin(w.wavenumber * w.direction.dot(&xy) + w.phase))
                .sum();
            d[k] = self.amplitude[k] * s;
        }
        d
    }

    /// Upper bound on the warp's spatial derivative along any axis.
    pub fn max_slope(&self) -> f64 {
        (0..3)
            .map(|k| self.amplitude[k] * self.waves[k].iter().map(|w| w.weight * w.wavenumber).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn grid_offsets(n: usize, extent: f64) -> impl Iterator<Item = f64> {
    let step = extent / n as f64;
    let half = (n / 2) as isize;
    (-half..=half).map(move |i| i as f64 * step)
}

/// The reconstruction warp of a noise profile.
pub fn warp_field(noise: &NoiseProfile) -> WarpField {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ 0x3a7f_1e1d);
    WarpField::new(noise.warp_amplitude, noise.warp_wavelength, &mut rng)
}

/// The plant as seen in the reconstruction: every module shifted by the
/// warp at its center. Images and detections are generated from it, so
/// they agree with the warped cloud the way bundle-adjusted images agree
/// with their reconstruction.
pub fn observed_plant(plant: &GroundTruthPlant, warp: &WarpField) -> GroundTruthPlant {
    let mut out = plant.clone();
    for m in &mut out.modules {
        m.position += warp.displacement(&m.position);
    }
    out
}

/// Samples module surfaces, a column of points across every bench gap and
/// the exposed terrain, then applies point noise and the warp field.
pub fn sample_cloud(plant: &GroundTruthPlant, params: &CloudParams, noise: &NoiseProfile) -> Result<(PointCloud, Vec<CloudLabel>)> {
    params.validate()?;
    noise.validate()?;
    let p = &plant.params;
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for m in &plant.modules {
        for b in grid_offsets(params.module_grid[1], p.module_across) {
            for a in grid_offsets(params.module_grid[0], p.module_along) {
                pts.push(SurfacePoint {
                    position: m.position + m.along * a + m.across * b,
                    normal: m.normal,
                    color: CELL_RGB,
                });
                labels.push(CloudLabel::Module(m.id));
            }
        }
    }
    for line in 0..p.lines {
        for bench in 1..p.benches_per_line {
            for row in 0..p.rows_per_bench {
                let (Some(&l), Some(&r)) = (
                    plant.modules_in_row(line, bench - 1, row).last(),
                    plant.modules_in_row(line, bench, row).first(),
                ) else {
                    continue;
                };
                let (a, b) = (&plant.modules[l], &plant.modules[r]);
                let mid = (a.position + b.position) * 0.5;
                for o in grid_offsets(params.module_grid[1], p.module_across) {
                    pts.push(SurfacePoint {
                        position: mid + a.across * o,
                        normal: (a.normal + b.normal).normalize(),
                        color: GAP_RGB,
                    });
                    labels.push(CloudLabel::Gap);
                }
            }
        }
    }
    let (lo, hi) = plant.bounds_xy();
    let footprints = plant.bench_footprints();
    let pad = 0.25;
    let covered = |x: f64, y: f64| {
        footprints
            .iter()
            .any(|(a, b)| x >= a[0] - pad && x <= b[0] + pad && y >= a[1] - pad && y <= b[1] + pad)
    };
    let m = params.terrain_margin;
    let nx = libm::floor((hi[0] - lo[0] + 2.0 * m) / params.terrain_step) as usize + 1;
    let ny = libm::floor((hi[1] - lo[1] + 2.0 * m) / params.terrain_step) as usize + 1;
    for j in 0..ny {
        let y = hi[1] + m - j as f64 * params.terrain_step;
        for i in 0..nx {
            let x = lo[0] - m + i as f64 * params.terrain_step;
            if covered(x, y) {
                continue;
            }
            pts.push(SurfacePoint {
                position: Vec3::new(x, y, plant.terrain.height(x, y)),
                normal: plant.terrain.normal(x, y),
                color: GROUND_RGB,
            });
            labels.push(CloudLabel::Terrain);
        }
    }

    let warp = warp_field(noise);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ 0x00c1_0d0f_5a3d);
    let gauss = Normal::new(0.0, noise.cloud_noise).map_err(|_| Error::parameter("cloud_noise", "invalid"))?;
    let mut bias_rng = ChaCha8Rng::seed_from_u64(noise.seed ^ 0x5b1a_5e0f);
    let bias_gauss = Normal::new(0.0, noise.surface_bias).map_err(|_| Error::parameter("surface_bias", "invalid"))?;
    let bias: Vec<f64> = plant
        .modules
        .iter()
        .map(|_| if noise.surface_bias > 0.0 { bias_gauss.sample(&mut bias_rng) } else { 0.0 })
        .collect();
    for (s, label) in pts.iter_mut().zip(&labels) {
        let w = warp.displacement(&s.position);
        if noise.cloud_noise > 0.0 {
            let n = Vec3::new(gauss.sample(&mut rng), gauss.sample(&mut rng), gauss.sample(&mut rng));
            s.position += n;
        }
        if let CloudLabel::Module(id) = label {
            s.position.z += bias[*id];
        }
        s.position += w;
    }
    Ok((PointCloud::new(pts)?, labels))
}
