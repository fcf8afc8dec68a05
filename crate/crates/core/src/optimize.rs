//! Model optimization: pose averaging, robust 3D row lines, bench axes and
//! uniform respacing of the modules along each row.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::GeoOrigin;
use crate::cloud::SurfaceSample;
use crate::error::{Error, Result};
use crate::fusion::{principal_direction, GlobalStructure};
use crate::geom::{canonical_direction3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizeConfig {
    pub ransac3d_threshold: f64,
    pub ransac3d_trials: usize,
    /// Fixed in-row pitch in meters; rows are then respaced about their
    /// centroid instead of between their end modules.
    pub enforce_pitch: Option<f64>,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            ransac3d_threshold: 0.15,
            ransac3d_trials: 500,
            enforce_pitch: None,
            seed: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ransac3d_threshold > 0.0) {
            return Err(Error::parameter("ransac3d_threshold", "must be positive"));
        }
        if self.ransac3d_trials == 0 {
            return Err(Error::parameter("ransac3d_trials", "must be at least 1"));
        }
        if let Some(p) = self.enforce_pitch {
            if !(p > 0.0) {
                return Err(Error::parameter("enforce_pitch", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Line3D {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Line3D {
    pub fn distance(&self, p: &Vec3) -> f64 {
        let d = p - self.origin;
        (d - self.direction * d.dot(&self.direction)).norm()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchAxis {
    pub bench_id: usize,
    pub p_bench: Vec3,
    pub d_bench: Vec3,
    /// (sector id, offset of the row from the axis).
    pub row_offsets: Vec<(usize, Vec3)>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModulePose {
    pub global_id: usize,
    pub position: Vec3,
    pub normal: Vec3,
    pub line_id: usize,
    pub bench_id: usize,
    pub sector_id: usize,
    pub row_index: usize,
    pub in_row_index: usize,
    pub n_detections: usize,
    /// (frame id, input record index) of each detection of the module.
    pub observations: Vec<(String, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantModel {
    pub modules: Vec<ModulePose>,
    pub benches: Vec<BenchAxis>,
    pub geo_origin: GeoOrigin,
}

/// Optimized model together with the averaged poses it started from.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizedModel {
    pub model: PlantModel,
    pub raw: Vec<ModulePose>,
    /// Benches left unoptimized, with the reason.
    pub flags: Vec<(usize, String)>,
}

/// Mean position and normalized mean normal of the observations.
pub fn average_module_pose(samples: &[SurfaceSample]) -> Result<(Vec3, Vec3)> {
    if samples.is_empty() {
        return Err(Error::Empty("module pose average"));
    }
    let n = samples.len() as f64;
    let p = samples.iter().fold(Vec3::zeros(), |a, s| a + s.position) / n;
    let m = samples.iter().fold(Vec3::zeros(), |a, s| a + s.normal);
    let norm = m.norm();
    if !(norm > 1e-12) {
        return Err(Error::Degenerate("observation normals cancel out"));
    }
    Ok((p, m / norm))
}

/// RANSAC line through 3D points refined by the principal direction of
/// the inliers. The origin is the inlier centroid and the direction points
/// towards +x.
pub fn fit_row_line_3d(points: &[Vec3], threshold: f64, trials: usize, rng: &mut ChaCha8Rng) -> Result<Line3D> {
    if points.len() < 2 {
        return Err(Error::invalid("3D row line", "needs at least two points"));
    }
    let mut best: Option<Vec<usize>> = None;
    if points.len() == 2 {
        best = Some(alloc::vec![0, 1]);
    } else {
        for _ in 0..trials {
            let a = rng.random_range(0..points.len());
            let mut b = rng.random_range(0..points.len() - 1);
            if b >= a {
                b += 1;
            }
            let d = points[b] - points[a];
            if !(d.norm() > 0.0) {
                continue;
            }
            let line = Line3D {
                origin: points[a],
                direction: d.normalize(),
            };
            let inl: Vec<usize> = (0..points.len()).filter(|&i| line.distance(&points[i]) <= threshold).collect();
            if best.as_ref().is_none_or(|b| inl.len() > b.len()) {
                best = Some(inl);
            }
        }
    }
    let inliers = best.ok_or(Error::Degenerate("all sampled point pairs coincide"))?;
    let pts: Vec<Vec3> = inliers.iter().map(|&i| points[i]).collect();
    let (origin, direction) = principal_direction(&pts).ok_or(Error::Degenerate("inliers coincide"))?;
    Ok(Line3D { origin, direction })
}

/// Bench axis from the row lines: sign-aligned mean direction and mean
/// origin, plus the perpendicular offset of each row origin.
pub fn bench_axis(lines: &[Line3D]) -> Result<(Vec3, Vec3, Vec<Vec3>)> {
    let first = lines.first().ok_or(Error::Empty("bench axis"))?.direction;
    let mut sum = Vec3::zeros();
    for l in lines {
        let d = if l.direction.dot(&first) < 0.0 { -l.direction } else { l.direction };
        if d.angle(&first) > 30f64.to_radians() {
            return Err(Error::Degenerate("bench rows deviate by more than 30 degrees"));
        }
        sum += d;
    }
    let d_bench = sum.normalize();
    let p_bench = lines.iter().fold(Vec3::zeros(), |a, l| a + l.origin) / lines.len() as f64;
    let offsets = lines
        .iter()
        .map(|l| {
            let o = l.origin - p_bench;
            o - d_bench * o.dot(&d_bench)
        })
        .collect();
    Ok((p_bench, d_bench, offsets))
}

/// Orthogonal projection of `p` onto the axis through `p_bench` along the
/// unit vector `d_bench`.
pub fn project_onto_axis(p: &Vec3, p_bench: &Vec3, d_bench: &Vec3) -> Vec3 {
    p_bench + d_bench * (p - p_bench).dot(d_bench)
}

/// Respaces one row uniformly along the axis. `slots` are the modules'
/// in-row indices (ascending). Returns the new positions, the shared row
/// normal and the row offset from the axis.
pub fn respace_row(
    positions: &[Vec3],
    normals: &[Vec3],
    slots: &[usize],
    p_bench: &Vec3,
    d_bench: &Vec3,
    pitch: Option<f64>,
) -> Result<(Vec<Vec3>, Vec3, Vec3)> {
    if positions.is_empty() {
        return Ok((Vec::new(), Vec3::z(), Vec3::zeros()));
    }
    let n = positions.len() as f64;
    let offset = positions.iter().fold(Vec3::zeros(), |a, p| a + (p - project_onto_axis(p, p_bench, d_bench))) / n;
    let normal_sum = normals.iter().fold(Vec3::zeros(), |a, v| a + v);
    if !(normal_sum.norm() > 1e-12) {
        return Err(Error::Degenerate("row normals cancel out"));
    }
    let normal = normal_sum.normalize();
    let t: Vec<f64> = positions.iter().map(|p| (p - p_bench).dot(d_bench)).collect();
    let new_t: Vec<f64> = if positions.len() == 1 {
        t.clone()
    } else if let Some(pitch) = pitch {
        let tc = t.iter().sum::<f64>() / n;
        let sc = slots.iter().map(|&s| s as f64).sum::<f64>() / n;
        slots.iter().map(|&s| tc + (s as f64 - sc) * pitch).collect()
    } else {
        let (s0, s1) = (slots[0] as f64, slots[slots.len() - 1] as f64);
        let (t0, t1) = (t[0], t[t.len() - 1]);
        let step = (t1 - t0) / (s1 - s0);
        slots.iter().map(|&s| t0 + (s as f64 - s0) * step).collect()
    };
    let out = new_t.iter().map(|&ti| p_bench + d_bench * ti + offset).collect();
    Ok((out, normal, offset))
}

/// Averages observations into raw poses and optimizes every bench.
pub fn build_plant_model(gs: &GlobalStructure, geo_origin: GeoOrigin, cfg: &OptimizeConfig) -> Result<OptimizedModel> {
    cfg.validate()?;
    let mut raw = Vec::with_capacity(gs.modules.len());
    for m in &gs.modules {
        let samples: Vec<SurfaceSample> = m.observations.iter().filter_map(|o| o.sample).collect();
        let (position, normal) = average_module_pose(&samples)?;
        raw.push(ModulePose {
            global_id: m.global_id,
            position,
            normal,
            line_id: m.line_id,
            bench_id: m.bench_id,
            sector_id: m.sector_id,
            row_index: m.row_index,
            in_row_index: m.in_row_index,
            n_detections: m.observations.len(),
            observations: m.observations.iter().map(|o| (o.frame_id.clone(), o.detection_index)).collect(),
        });
    }
    let mut optimized = raw.clone();
    let mut benches_out = Vec::new();
    let mut flags = Vec::new();

    // bench -> sector -> module indices ordered by in-row index
    let mut benches: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for (i, m) in raw.iter().enumerate() {
        benches.entry(m.bench_id).or_default().entry(m.sector_id).or_default().push(i);
    }
    for (&bench_id, rows) in &mut benches {
        for ids in rows.values_mut() {
            ids.sort_by_key(|&i| raw[i].in_row_index);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (bench_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut lines = Vec::new();
        let mut failure = None;
        for ids in rows.values() {
            if ids.len() < 2 {
                continue;
            }
            let pts: Vec<Vec3> = ids.iter().map(|&i| raw[i].position).collect();
            match fit_row_line_3d(&pts, cfg.ransac3d_threshold, cfg.ransac3d_trials, &mut rng) {
                Ok(l) => lines.push(l),
                Err(e) => failure = Some(alloc::format!("{e}")),
            }
        }
        let axis = match (failure, lines.is_empty()) {
            (Some(e), _) => Err(e),
            (None, true) => Err(String::from("no row with two or more modules")),
            (None, false) => bench_axis(&lines).map_err(|e| alloc::format!("{e}")),
        };
        let (p_bench, d_bench) = match axis {
            Ok((p, d, _)) => (p, d),
            Err(reason) => {
                log::warn!("bench {bench_id} left unoptimized: {reason}");
                flags.push((bench_id, reason));
                continue;
            }
        };
        let mut row_offsets = Vec::new();
        for (&sector_id, ids) in rows.iter() {
            let pos: Vec<Vec3> = ids.iter().map(|&i| raw[i].position).collect();
            let nor: Vec<Vec3> = ids.iter().map(|&i| raw[i].normal).collect();
            let slots: Vec<usize> = ids.iter().map(|&i| raw[i].in_row_index).collect();
            let (new_pos, normal, offset) = respace_row(&pos, &nor, &slots, &p_bench, &d_bench, cfg.enforce_pitch)?;
            for (&i, p) in ids.iter().zip(new_pos) {
                optimized[i].position = p;
                optimized[i].normal = normal;
            }
            row_offsets.push((sector_id, offset));
        }
        benches_out.push(BenchAxis {
            bench_id,
            p_bench,
            d_bench: canonical_direction3(d_bench),
            row_offsets,
        });
    }
    Ok(OptimizedModel {
        model: PlantModel {
            modules: optimized,
            benches: benches_out,
            geo_origin,
        },
        raw,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sample(p: Vec3, n: Vec3) -> SurfaceSample {
        SurfaceSample {
            position: p,
            normal: n,
            support: 1,
            residual: 0.0,
        }
    }

    #[test]
    fn pose_averaging() {
        let s = [sample(Vec3::zeros(), Vec3::x()), sample(Vec3::new(0.0, 0.0, 1.0), Vec3::y())];
        let (p, n) = average_module_pose(&s).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, 0.5));
        let h = core::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(n, Vec3::new(h, h, 0.0), epsilon = 1e-15);
        let (p, _) = average_module_pose(&s[..1]).unwrap();
        assert_eq!(p, Vec3::zeros());
        assert!(average_module_pose(&[sample(Vec3::zeros(), Vec3::z()), sample(Vec3::zeros(), -Vec3::z())]).is_err());
    }

    #[test]
    fn line_fit_rejects_outlier() {
        let mut pts: Vec<Vec3> = (0..8).map(|i| Vec3::new(i as f64, 2.0, 1.0)).collect();
        pts.push(Vec3::new(3.5, 3.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = fit_row_line_3d(&pts, 0.15, 500, &mut rng).unwrap();
        assert_abs_diff_eq!(l.direction, Vec3::x(), epsilon = 1e-12);
        assert_abs_diff_eq!(l.origin, Vec3::new(3.5, 2.0, 1.0), epsilon = 1e-12);
        let two = fit_row_line_3d(&[Vec3::new(1.0, 1.0, 0.0), Vec3::zeros()], 0.15, 500, &mut rng).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(two.direction, Vec3::new(s, s, 0.0), epsilon = 1e-12);
        assert!(fit_row_line_3d(&[Vec3::zeros(), Vec3::zeros(), Vec3::zeros()], 0.15, 50, &mut rng).is_err());
    }

    #[test]
    fn bench_axis_examples() {
        let a = Line3D {
            origin: Vec3::new(0.0, 1.0, 0.0),
            direction: Vec3::x(),
        };
        let b = Line3D {
            origin: Vec3::new(0.0, -1.0, 0.0),
            direction: -Vec3::x(),
        };
        let (p, d, off) = bench_axis(&[a, b]).unwrap();
        assert_eq!(p, Vec3::zeros());
        assert_eq!(d, Vec3::x());
        assert_eq!(off, alloc::vec![Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, -1.0, 0.0)]);
        let (_, _, off) = bench_axis(&[a, a]).unwrap();
        assert!(off.iter().all(|o| o.norm() == 0.0));
        let skew = Line3D {
            origin: Vec3::zeros(),
            direction: Vec3::new(1.0, 1.0, 0.0).normalize(),
        };
        assert!(bench_axis(&[a, skew]).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_onto_axis(&Vec3::new(3.0, 4.0, 5.0), &Vec3::zeros(), &Vec3::x()), Vec3::new(3.0, 0.0, 0.0));
        let pb = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(project_onto_axis(&pb, &pb, &Vec3::y()), pb);
    }

    #[test]
    fn respacing_examples() {
        let ts = [0.0, 0.9, 2.1, 3.0];
        let pos: Vec<Vec3> = ts.iter().map(|&t| Vec3::new(t, 0.5, 0.0)).collect();
        let nor = alloc::vec![Vec3::z(); 4];
        let (out, n, off) = respace_row(&pos, &nor, &[0, 1, 2, 3], &Vec3::zeros(), &Vec3::x(), None).unwrap();
        for (i, p) in out.iter().enumerate() {
            assert_abs_diff_eq!(*p, Vec3::new(i as f64, 0.5, 0.0), epsilon = 1e-12);
        }
        assert_eq!(n, Vec3::z());
        assert_eq!(off, Vec3::new(0.0, 0.5, 0.0));
        let (out, _, _) = respace_row(&pos, &nor, &[0, 1, 2, 3], &Vec3::zeros(), &Vec3::x(), Some(1.1)).unwrap();
        assert_abs_diff_eq!(out[1].x - out[0].x, 1.1, epsilon = 1e-12);
        let (one, _, _) = respace_row(&pos[1..2], &nor[..1], &[1], &Vec3::zeros(), &Vec3::x(), None).unwrap();
        assert_eq!(one[0], pos[1]);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_onto_axis(px in -50.0f64..50.0, py in -50.0f64..50.0, pz in -50.0f64..50.0,
                                               bx in -10.0f64..10.0, by in -10.0f64..10.0, bz in -10.0f64..10.0,
                                               dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in 0.1f64..1.0) {
            let d = Vec3::new(dx, dy, dz).normalize();
            let pb = Vec3::new(bx, by, bz);
            let p = Vec3::new(px, py, pz);
            let q = project_onto_axis(&p, &pb, &d);
            let scale = 1.0 + (q - pb).norm();
            prop_assert!((q - pb).cross(&d).norm() <= 1e-12 * scale);
            let qq = project_onto_axis(&q, &pb, &d);
            prop_assert!((qq - q).norm() <= 1e-12 * (1.0 + q.norm()));
        }

        #[test]
        fn respaced_rows_are_uniform(ts in proptest::collection::vec(-20.0f64..20.0, 2..15), y in -3.0f64..3.0) {
            let mut ts = ts;
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pos: Vec<Vec3> = ts.iter().map(|&t| Vec3::new(t, y, 0.1 * t)).collect();
            let nor = alloc::vec![Vec3::z(); pos.len()];
            let slots: Vec<usize> = (0..pos.len()).collect();
            let d = Vec3::new(1.0, 0.0, 0.1).normalize();
            let (out, _, off) = respace_row(&pos, &nor, &slots, &Vec3::zeros(), &d, None).unwrap();
            prop_assert!(off.dot(&d).abs() <= 1e-9);
            let gaps: Vec<f64> = out.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
            for g in &gaps {
                prop_assert!((g - gaps[0]).abs() < 1e-9);
            }
            let t = |p: &Vec3| p.dot(&d);
            prop_assert!((t(&out[0]) - t(&pos[0])).abs() < 1e-9);
            prop_assert!((t(&out[out.len() - 1]) - t(&pos[pos.len() - 1])).abs() < 1e-9);
        }
    }
}
