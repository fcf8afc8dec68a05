//! Point clouds, a uniform voxel-grid index, and ray/cloud intersection.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurfacePoint {
    pub position: Vec3,
    pub normal: Vec3,
    pub color: [u8; 3],
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Aabb { min: first, max: first };
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn expanded(&self, margin: f64) -> Self {
        let m = Vec3::repeat(margin);
        Aabb {
            min: self.min - m,
            max: self.max + m,
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Parameter interval where the infinite line of `ray` is inside the box.
    pub fn clip_ray(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let o = ray.origin[i];
            let d = ray.direction[i];
            if d == 0.0 {
                if o < self.min[i] || o > self.max[i] {
                    return None;
                }
                continue;
            }
            let a = (self.min[i] - o) / d;
            let b = (self.max[i] - o) / d;
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<SurfacePoint>,
    bounds: Aabb,
}

impl PointCloud {
    /// Validates unit normals and computes bounds. Empty clouds are rejected.
    pub fn new(points: Vec<SurfacePoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.position.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid("point cloud", alloc::format!("point {i}: non-finite position")));
            }
            let n = p.normal.norm();
            if !((n - 1.0).abs() <= 1e-6) {
                return Err(Error::invalid("point cloud", alloc::format!("point {i}: normal magnitude {n}")));
            }
        }
        let bounds = Aabb::from_points(points.iter().map(|p| &p.position)).ok_or(Error::Empty("point cloud"))?;
        Ok(PointCloud { points, bounds })
    }

    pub fn points(&self) -> &[SurfacePoint] {
        &self.points
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<SurfacePoint> {
        self.points
    }
}

/// Averaged cloud neighborhood hit by a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
    pub support: usize,
    pub residual: f64,
}

/// Closest cloud point to a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub index: usize,
    pub distance: f64,
    pub t: f64,
}

fn hit_order(a: &RayHit, b: &RayHit) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.t.total_cmp(&b.t))
        .then(a.index.cmp(&b.index))
}

/// Brute-force closest point to the ray among points in front of its origin.
pub fn nearest_to_ray_brute(positions: &[Vec3], ray: &Ray) -> Option<RayHit> {
    positions
        .iter()
        .enumerate()
        .filter_map(|(index, p)| {
            let (t, distance) = ray.project(p);
            (t >= 0.0).then_some(RayHit { index, distance, t })
        })
        .min_by(hit_order)
}

/// Brute-force k nearest points, ordered by (distance, index).
pub fn knn_brute(positions: &[Vec3], q: &Vec3, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = positions.iter().enumerate().map(|(i, p)| (i, (p - q).norm())).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Dense uniform voxel grid over the cloud bounds, stored in CSR form.
#[derive(Clone, Debug)]
pub struct CloudIndex {
    positions: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<u32>,
    entries: Vec<u32>,
    bounds: Aabb,
}

impl CloudIndex {
    /// Builds the grid with cell size `cell_factor` times the estimated
    /// mean point spacing.
    pub fn build(cloud: &PointCloud, cell_factor: f64) -> Result<Self> {
        if !(cell_factor > 0.0) {
            return Err(Error::parameter("voxel_cell_factor", "must be positive"));
        }
        let positions: Vec<Vec3> = cloud.points().iter().map(|p| p.position).collect();
        Ok(Self::from_positions(positions, *cloud.bounds(), cell_factor))
    }

    fn from_positions(positions: Vec<Vec3>, bounds: Aabb, cell_factor: f64) -> Self {
        let n = positions.len().max(1) as f64;
        let e = bounds.extent();
        let face = (e.x * e.y).max(e.y * e.z).max(e.x * e.z);
        let mut spacing = libm::sqrt(face / n);
        if !(spacing > 0.0) {
            spacing = e.max().max(1.0) / n;
        }
        let mut cell = (spacing * cell_factor).max(1e-9);
        let max_cells = (positions.len() * 4).max(4096) as f64;
        loop {
            let cells: f64 = (0..3).map(|i| libm::floor(e[i] / cell) + 1.0).product();
            if cells <= max_cells {
                break;
            }
            cell *= 1.25;
        }
        let dims = [0, 1, 2].map(|i| (libm::floor(e[i] / cell) as usize) + 1);
        let mut index = CloudIndex {
            positions,
            origin: bounds.min,
            cell,
            dims,
            cell_start: Vec::new(),
            entries: Vec::new(),
            bounds,
        };
        let total = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; total + 1];
        let cell_of: Vec<usize> = index.positions.iter().map(|p| index.linear(index.cell_coords(p))).collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0u32; index.positions.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            entries[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        index.cell_start = counts;
        index.entries = entries;
        index
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    fn cell_coords(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|i| {
            let c = libm::floor((p[i] - self.origin[i]) / self.cell);
            if c < 0.0 {
                0
            } else {
                (c as usize).min(self.dims[i] - 1)
            }
        })
    }

    fn linear(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn cell_points(&self, linear: usize) -> &[u32] {
        &self.entries[self.cell_start[linear] as usize..self.cell_start[linear + 1] as usize]
    }

    /// Exact closest point to the ray among points with non-negative ray
    /// parameter and perpendicular distance at most `max_residual`.
    /// Ties resolve to the smaller ray parameter, then the lower index.
    pub fn nearest_to_ray(&self, ray: &Ray, max_residual: f64) -> Option<RayHit> {
        let (t0, t1) = self.bounds.expanded(max_residual).clip_ray(ray)?;
        let t0 = t0.max(0.0);
        if t1 < t0 {
            return None;
        }
        let r = libm::ceil(max_residual / self.cell) as usize + 1;
        let steps = libm::ceil((t1 - t0) / self.cell) as usize;
        let mut cells: Vec<usize> = Vec::new();
        let mut last: Option<[usize; 3]> = None;
        for s in 0..=steps {
            let t = (t0 + s as f64 * self.cell).min(t1);
            let c = self.cell_coords(&ray.at(t));
            if last == Some(c) {
                continue;
            }
            last = Some(c);
            let lo = c.map(|v| v.saturating_sub(r));
            let hi = [0, 1, 2].map(|i| (c[i] + r).min(self.dims[i] - 1));
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        cells.push(self.linear([x, y, z]));
                    }
                }
            }
        }
        cells.sort_unstable();
        cells.dedup();
        let mut best: Option<RayHit> = None;
        for c in cells {
            for &i in self.cell_points(c) {
                let (t, distance) = ray.project(&self.positions[i as usize]);
                if t < 0.0 || distance > max_residual {
                    continue;
                }
                let hit = RayHit {
                    index: i as usize,
                    distance,
                    t,
                };
                if best.as_ref().is_none_or(|b| hit_order(&hit, b) == Ordering::Less) {
                    best = Some(hit);
                }
            }
        }
        best
    }

    /// Exact k nearest cloud points to `q`, ordered by (distance, index).
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.positions.len());
        if k == 0 {
            return Vec::new();
        }
        let c = self.cell_coords(q);
        let mut found: Vec<(usize, f64)> = Vec::new();
        let max_r = self.dims.iter().copied().max().unwrap_or(1);
        for r in 0..=max_r {
            let lo = c.map(|v| v.saturating_sub(r));
            let hi = [0, 1, 2].map(|i| (c[i] + r).min(self.dims[i] - 1));
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let ring = [x, y, z].iter().zip(c.iter()).map(|(&a, &b)| a.abs_diff(b)).max().unwrap_or(0);
                        if ring != r {
                            continue;
                        }
                        for &i in self.cell_points(self.linear([x, y, z])) {
                            found.push((i as usize, (self.positions[i as usize] - q).norm()));
                        }
                    }
                }
            }
            if found.len() >= k {
                found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                found.truncate(k);
                // distance from q to the nearest face of the scanned block
                // that still has unscanned cells behind it
                let mut bound = f64::INFINITY;
                for i in 0..3 {
                    if lo[i] > 0 {
                        bound = bound.min(q[i] - (self.origin[i] + lo[i] as f64 * self.cell));
                    }
                    if hi[i] + 1 < self.dims[i] {
                        bound = bound.min(self.origin[i] + (hi[i] + 1) as f64 * self.cell - q[i]);
                    }
                }
                if found[k - 1].1 < bound {
                    return found;
                }
            }
        }
        found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        found.truncate(k);
        found
    }
}

/// Intersects a ray with the cloud: finds the point closest to the ray,
/// then averages positions and normals of its `k` nearest neighbors
/// (itself included).
pub fn raycast_cloud(ray: &Ray, cloud: &PointCloud, index: &CloudIndex, k: usize, max_residual: f64) -> Result<SurfaceSample> {
    if k == 0 {
        return Err(Error::parameter("knn_k", "must be at least 1"));
    }
    let hit = match index.nearest_to_ray(ray, max_residual) {
        Some(h) => h,
        None => {
            let residual = nearest_to_ray_brute(index.positions(), ray).map_or(f64::INFINITY, |h| h.distance);
            return Err(Error::NoIntersection { residual });
        }
    };
    let neighbors = index.knn(&index.positions()[hit.index], k);
    let mut position = Vec3::zeros();
    let mut normal = Vec3::zeros();
    for &(i, _) in &neighbors {
        position += cloud.points()[i].position;
        normal += cloud.points()[i].normal;
    }
    let n = neighbors.len() as f64;
    let norm = normal.norm();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("neighborhood normals cancel out"));
    }
    Ok(SurfaceSample {
        position: position / n,
        normal: normal / norm,
        support: neighbors.len(),
        residual: hit.distance,
    })
}
