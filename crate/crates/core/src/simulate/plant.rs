//! Ground-truth plant layout.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Smooth terrain: a tilted plane with a gentle undulation.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Terrain {
    pub base: f64,
    pub slope: [f64; 2],
    pub undulation: f64,
    pub wavelength: f64,
    pub phase: [f64; 2],
}

impl Terrain {
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let k = TAU / self.wavelength;
        self.base
            + self.slope[0] * x
            + self.slope[1] * y
            + self.undulation * libm::sin(k * x + self.phase[0]) * libm::sin(k * y + self.phase[1])
    }

    pub fn normal(&self, x: f64, y: f64) -> Vec3 {
        let k = TAU / self.wavelength;
        let (sx, cx) = (libm::sin(k * x + self.phase[0]), libm::cos(k * x + self.phase[0]));
        let (sy, cy) = (libm::sin(k * y + self.phase[1]), libm::cos(k * y + self.phase[1]));
        let gx = self.slope[0] + self.undulation * k * cx * sy;
        let gy = self.slope[1] + self.undulation * k * sx * cy;
        Vec3::new(-gx, -gy, 1.0).normalize()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantParams {
    pub lines: usize,
    pub benches_per_line: usize,
    pub rows_per_bench: usize,
    /// Modules per row, cycled over the benches of a line.
    pub modules_per_row: Vec<usize>,
    /// Module extent along the row, meters.
    pub module_along: f64,
    /// Module extent across the row (on the tilted plane), meters.
    pub module_across: f64,
    /// Spacing between neighboring modules of a row.
    pub module_spacing: f64,
    /// Spacing between neighboring rows of a bench, on the tilted plane.
    pub row_spacing: f64,
    /// Center distance across a bench gap, in module pitches.
    pub gap_factor: f64,
    /// Relative spacing tolerance the gap must satisfy.
    pub gap_tolerance: f64,
    pub tilt_deg: f64,
    /// Horizontal clearance between neighboring lines.
    pub line_clearance: f64,
    /// Height of the bench center above the terrain.
    pub mount_height: f64,
    pub terrain_slope: [f64; 2],
    pub terrain_undulation: f64,
    pub terrain_wavelength: f64,
}

impl PlantParams {
    pub fn pitch(&self) -> f64 {
        self.module_along + self.module_spacing
    }

    pub fn validate(&self) -> Result<()> {
        if self.lines == 0 || self.benches_per_line == 0 || self.rows_per_bench == 0 {
            return Err(Error::parameter("plant", "line, bench and row counts must be at least 1"));
        }
        if self.modules_per_row.is_empty() || self.modules_per_row.contains(&0) {
            return Err(Error::parameter("modules_per_row", "needs at least one module per row"));
        }
        for (name, v) in [
            ("module_along", self.module_along),
            ("module_across", self.module_across),
            ("terrain_wavelength", self.terrain_wavelength),
        ] {
            if !(v > 0.0) {
                return Err(Error::parameter(name, "must be positive"));
            }
        }
        for (name, v) in [
            ("module_spacing", self.module_spacing),
            ("row_spacing", self.row_spacing),
            ("line_clearance", self.line_clearance),
            ("mount_height", self.mount_height),
            ("terrain_undulation", self.terrain_undulation),
        ] {
            if !(v >= 0.0) {
                return Err(Error::parameter(name, "must be non-negative"));
            }
        }
        if !(0.0..90.0).contains(&self.tilt_deg) {
            return Err(Error::parameter("tilt_deg", "must lie in [0, 90)"));
        }
        let th = self.gap_tolerance;
        if !(self.gap_factor > 1.0 + th && self.gap_factor < 2.0 * (1.0 - th)) {
            return Err(Error::parameter(
                "gap_factor",
                alloc::format!("{} pitches is outside the detectable gap band ({}, {})", self.gap_factor, 1.0 + th, 2.0 * (1.0 - th)),
            ));
        }
        if self.gap_factor * self.pitch() <= self.module_along {
            return Err(Error::parameter("gap_factor", "benches would overlap"));
        }
        Ok(())
    }
}

/// Structural identity of a module as the mapping pipeline labels it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StructuralTuple {
    pub line_id: usize,
    pub bench_id: usize,
    pub sector_id: usize,
    pub row_index: usize,
    pub in_row_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruthModule {
    pub id: usize,
    pub position: Vec3,
    pub normal: Vec3,
    /// Unit vector along the row (east).
    pub along: Vec3,
    /// Unit vector across the row, down the tilted plane (southwards).
    pub across: Vec3,
    /// Physical line, bench (within the line), row (within the bench) and
    /// position within the row.
    pub line: usize,
    pub bench: usize,
    pub row: usize,
    pub in_row: usize,
    pub tuple: StructuralTuple,
}

impl TruthModule {
    /// Corners in order north-west, north-east, south-east, south-west.
    pub fn corners(&self, along: f64, across: f64) -> [Vec3; 4] {
        let a = self.along * (along / 2.0);
        let c = self.across * (across / 2.0);
        [
            self.position - a - c,
            self.position + a - c,
            self.position + a + c,
            self.position - a + c,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruthPlant {
    pub params: PlantParams,
    pub terrain: Terrain,
    /// Ordered by line, bench, row, in-row position.
    pub modules: Vec<TruthModule>,
}

impl GroundTruthPlant {
    /// Index of the module at a physical position.
    pub fn find(&self, line: usize, bench: usize, row: usize, in_row: usize) -> Option<usize> {
        self.modules
            .iter()
            .position(|m| m.line == line && m.bench == bench && m.row == row && m.in_row == in_row)
    }

    pub fn modules_in_row(&self, line: usize, bench: usize, row: usize) -> Vec<usize> {
        self.modules
            .iter()
            .filter(|m| m.line == line && m.bench == bench && m.row == row)
            .map(|m| m.id)
            .collect()
    }

    /// Horizontal bounds (min, max) of all module corners.
    pub fn bounds_xy(&self) -> ([f64; 2], [f64; 2]) {
        let p = &self.params;
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for m in &self.modules {
            for c in m.corners(p.module_along, p.module_across) {
                lo = [lo[0].min(c.x), lo[1].min(c.y)];
                hi = [hi[0].max(c.x), hi[1].max(c.y)];
            }
        }
        (lo, hi)
    }

    /// Horizontal footprint rectangles (min, max) of every bench.
    pub fn bench_footprints(&self) -> Vec<([f64; 2], [f64; 2])> {
        let p = &self.params;
        let mut out = Vec::new();
        for line in 0..p.lines {
            for bench in 0..p.benches_per_line {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for m in self.modules.iter().filter(|m| m.line == line && m.bench == bench) {
                    for c in m.corners(p.module_along, p.module_across) {
                        lo = [lo[0].min(c.x), lo[1].min(c.y)];
                        hi = [hi[0].max(c.x), hi[1].max(c.y)];
                    }
                }
                out.push((lo, hi));
            }
        }
        out
    }
}

/// Lays out the plant: lines run west to east, line 0 is the northernmost,
/// bench 0 the westernmost and row 0 the northernmost (and highest) row of
/// its bench. Benches are tilted to face south and rest on the terrain.
pub fn generate_plant(params: &PlantParams, seed: u64) -> Result<GroundTruthPlant> {
    params.validate()?;
    let p = params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_91a7);
    let terrain = Terrain {
        base: 0.0,
        slope: p.terrain_slope,
        undulation: p.terrain_undulation,
        wavelength: p.terrain_wavelength,
        phase: [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)],
    };
    let tilt = p.tilt_deg.to_radians();
    let along = Vec3::x();
    let across = Vec3::new(0.0, -libm::cos(tilt), -libm::sin(tilt));
    let normal = Vec3::new(0.0, -libm::sin(tilt), libm::cos(tilt));
    let pitch = p.pitch();
    let row_pitch = p.module_across + p.row_spacing;
    let rpb = p.rows_per_bench;
    let depth = (rpb as f64 * p.module_across + (rpb - 1) as f64 * p.row_spacing) * libm::cos(tilt);
    let line_pitch = depth + p.line_clearance;

    let counts: Vec<usize> = (0..p.benches_per_line).map(|b| p.modules_per_row[b % p.modules_per_row.len()]).collect();
    let mut starts = Vec::with_capacity(counts.len());
    let mut x = 0.0;
    for &n in &counts {
        starts.push(x);
        x += (n - 1) as f64 * pitch + p.gap_factor * pitch;
    }
    let length = x - p.gap_factor * pitch;
    let x0 = -length / 2.0;
    let y0 = (p.lines - 1) as f64 * line_pitch / 2.0;

    let mut modules = Vec::new();
    for line in 0..p.lines {
        let yc = y0 - line as f64 * line_pitch;
        for (bench, (&n, &start)) in counts.iter().zip(&starts).enumerate() {
            let xc = x0 + start + (n - 1) as f64 * pitch / 2.0;
            let center = Vec3::new(xc, yc, terrain.height(xc, yc) + p.mount_height);
            for row in 0..rpb {
                let row_center = center + across * ((row as f64 - (rpb - 1) as f64 / 2.0) * row_pitch);
                for k in 0..n {
                    let position = row_center + along * ((k as f64 - (n - 1) as f64 / 2.0) * pitch);
                    let global_bench = line * p.benches_per_line + bench;
                    modules.push(TruthModule {
                        id: modules.len(),
                        position,
                        normal,
                        along,
                        across,
                        line,
                        bench,
                        row,
                        in_row: k,
                        tuple: StructuralTuple {
                            line_id: line * rpb + row,
                            bench_id: global_bench,
                            sector_id: global_bench * rpb + row,
                            row_index: row,
                            in_row_index: k,
                        },
                    });
                }
            }
        }
    }
    Ok(GroundTruthPlant {
        params: p.clone(),
        terrain,
        modules,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::presets;

    fn tiny() -> PlantParams {
        PlantParams {
            lines: 1,
            benches_per_line: 1,
            rows_per_bench: 1,
            modules_per_row: alloc::vec![3],
            ..presets::pp1_plant()
        }
    }

    #[test]
    fn single_row_is_collinear_and_pitch_spaced() {
        let plant = generate_plant(&tiny(), 1).unwrap();
        assert_eq!(plant.modules.len(), 3);
        let m = &plant.modules;
        let pitch = tiny().pitch();
        assert!(((m[1].position - m[0].position).norm() - pitch).abs() < 1e-12);
        assert!(((m[2].position - m[1].position).norm() - pitch).abs() < 1e-12);
        assert!((m[1].position - m[0].position).cross(&(m[2].position - m[0].position)).norm() < 1e-12);
    }

    #[test]
    fn preset_shapes() {
        let pp1 = generate_plant(&presets::pp1_plant(), 0).unwrap();
        assert_eq!(pp1.modules.len(), 3 * 9 * 2 * 10);
        assert!(pp1.modules.iter().all(|m| m.row < 2));
        let pp2 = generate_plant(&presets::pp2_plant(), 0).unwrap();
        assert_eq!(pp2.params.rows_per_bench, 6);
        assert!(pp2.modules.len() >= 600);
        let mut tuples: Vec<StructuralTuple> = pp2.modules.iter().map(|m| m.tuple).collect();
        tuples.sort();
        tuples.dedup();
        assert_eq!(tuples.len(), pp2.modules.len());
    }

    #[test]
    fn orientation_conventions() {
        let plant = generate_plant(&presets::pp1_plant(), 3).unwrap();
        let a = &plant.modules[plant.find(0, 0, 0, 0).unwrap()];
        let b = &plant.modules[plant.find(0, 0, 1, 0).unwrap()];
        let c = &plant.modules[plant.find(1, 0, 0, 0).unwrap()];
        let d = &plant.modules[plant.find(0, 1, 0, 0).unwrap()];
        assert!(a.position.y > b.position.y && a.position.z > b.position.z);
        assert!(a.position.y > c.position.y);
        assert!(a.position.x < d.position.x);
        assert!(a.normal.y < 0.0 && a.normal.z > 0.0);
    }

    #[test]
    fn gap_outside_band_is_rejected() {
        for g in [1.05, 1.85] {
            let p = PlantParams { gap_factor: g, ..tiny() };
            assert!(matches!(generate_plant(&p, 0), Err(Error::Parameter { .. })));
        }
    }

    #[test]
    fn terrain_normal_matches_finite_differences() {
        let plant = generate_plant(&presets::pp1_plant(), 5).unwrap();
        let t = plant.terrain;
        let (x, y, h) = (3.2, -7.1, 1e-5);
        let gx = (t.height(x + h, y) - t.height(x - h, y)) / (2.0 * h);
        let gy = (t.height(x, y + h) - t.height(x, y - h)) / (2.0 * h);
        let n = Vec3::new(-gx, -gy, 1.0).normalize();
        assert!((n - t.normal(x, y)).norm() < 1e-8);
    }
}
