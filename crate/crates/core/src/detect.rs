//! Per-image detection filtering and fusion of the two detector outputs.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::{axial_median, overlap_ratio, OrientedBox, Vec2};
use crate::stats::median;

/// Which detector produced a box. The primary detector is the precise one;
/// the secondary detector only fills its gaps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DetectorSource {
    Primary,
    Secondary,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModuleDetection {
    pub bbox: OrientedBox,
    pub source: DetectorSource,
    pub frame_id: String,
    /// Record index of the detection within its frame in the input file.
    pub detection_index: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FuseConfig {
    pub overlap_threshold: f64,
    pub dim_tolerance: f64,
    pub fusion_min_sep: f64,
    pub edge_margin: f64,
}

impl Default for FuseConfig {
    fn default() -> Self {
        FuseConfig {
            overlap_threshold: 0.2,
            dim_tolerance: 0.4,
            fusion_min_sep: 0.5,
            edge_margin: 2.0,
        }
    }
}

impl FuseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return Err(Error::parameter("overlap_threshold", "must lie in [0, 1]"));
        }
        if !(self.dim_tolerance >= 0.0) {
            return Err(Error::parameter("dim_tolerance", "must be non-negative"));
        }
        if !(self.fusion_min_sep >= 0.0) {
            return Err(Error::parameter("fusion_min_sep", "must be non-negative"));
        }
        if !(self.edge_margin >= 0.0) {
            return Err(Error::parameter("edge_margin", "must be non-negative"));
        }
        Ok(())
    }
}

/// Keeps detections whose corners all lie at least `margin` inside the image.
pub fn discard_edge_detections(dets: &[ModuleDetection], width: f64, height: f64, margin: f64) -> Vec<ModuleDetection> {
    dets.iter()
        .filter(|d| {
            d.bbox
                .corners()
                .iter()
                .all(|c| c.x >= margin && c.x <= width - margin && c.y >= margin && c.y <= height - margin)
        })
        .cloned()
        .collect()
}

/// Removes both members of every pair whose overlap ratio (intersection
/// over the smaller area) exceeds `threshold`.
pub fn discard_overlapping(dets: &[ModuleDetection], threshold: f64) -> Vec<ModuleDetection> {
    let bounds: Vec<(Vec2, Vec2)> = dets.iter().map(|d| d.bbox.bounds()).collect();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| bounds[a].0.x.total_cmp(&bounds[b].0.x).then(a.cmp(&b)));
    let mut drop = alloc::vec![false; dets.len()];
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if bounds[j].0.x > bounds[i].1.x {
                break;
            }
            if overlap_ratio(&dets[i].bbox, &dets[j].bbox) > threshold {
                drop[i] = true;
                drop[j] = true;
            }
        }
    }
    dets.iter().zip(drop).filter(|(_, d)| !d).map(|(d, _)| d.clone()).collect()
}

/// Median-sized box: median width, median height and circular median angle.
/// The center is left at the origin.
pub fn representative_box(dets: &[ModuleDetection]) -> Result<OrientedBox> {
    if dets.is_empty() {
        return Err(Error::Empty("representative box"));
    }
    let widths: Vec<f64> = dets.iter().map(|d| d.bbox.width).collect();
    let heights: Vec<f64> = dets.iter().map(|d| d.bbox.height).collect();
    let angles: Vec<f64> = dets.iter().map(|d| d.bbox.angle).collect();
    OrientedBox::new(
        Vec2::zeros(),
        median(&widths).unwrap_or(0.0),
        median(&heights).unwrap_or(0.0),
        axial_median(&angles).unwrap_or(0.0),
    )
}

pub fn filter_by_dimensions(dets: &[ModuleDetection], rep: &OrientedBox, tol: f64) -> Vec<ModuleDetection> {
    let within = |v: f64, r: f64| v >= (1.0 - tol) * r && v <= (1.0 + tol) * r;
    dets.iter()
        .filter(|d| within(d.bbox.width, rep.width) && within(d.bbox.height, rep.height))
        .cloned()
        .collect()
}

/// All primary detections plus each secondary detection at least
/// `min_sep` representative diagonals away from every primary center.
pub fn fuse_detectors(
    primary: &[ModuleDetection],
    secondary: &[ModuleDetection],
    rep: &OrientedBox,
    min_sep: f64,
) -> Vec<ModuleDetection> {
    let limit = min_sep * rep.diagonal();
    let mut out: Vec<ModuleDetection> = primary.to_vec();
    for s in secondary {
        let isolated = primary.iter().all(|p| (p.bbox.center - s.bbox.center).norm() >= limit);
        if isolated {
            let mut s = s.clone();
            s.source = DetectorSource::Secondary;
            out.push(s);
        }
    }
    out
}

/// Detection counts through the filtering stages of one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FuseStats {
    pub input_primary: usize,
    pub input_secondary: usize,
    pub after_edge: usize,
    pub after_overlap: usize,
    pub after_dimensions: usize,
    pub fused_primary: usize,
    pub fused_secondary: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FusedFrame {
    pub frame_id: String,
    pub detections: Vec<ModuleDetection>,
    pub rep_box: Option<OrientedBox>,
    pub stats: FuseStats,
}

/// Runs the full per-image chain. Edge and overlap filtering are applied to
/// each detector separately; the representative box comes from the
/// filtered primary set (the secondary set if the primary one is empty).
pub fn fuse_frame(frame_id: &str, dets: &[ModuleDetection], width: f64, height: f64, cfg: &FuseConfig) -> Result<FusedFrame> {
    cfg.validate()?;
    let split = |src: DetectorSource| -> Vec<ModuleDetection> { dets.iter().filter(|d| d.source == src).cloned().collect() };
    let primary = split(DetectorSource::Primary);
    let secondary = split(DetectorSource::Secondary);
    let mut stats = FuseStats {
        input_primary: primary.len(),
        input_secondary: secondary.len(),
        ..FuseStats::default()
    };
    let stage = |set: &[ModuleDetection]| -> (Vec<ModuleDetection>, usize) {
        let e = discard_edge_detections(set, width, height, cfg.edge_margin);
        let n = e.len();
        (discard_overlapping(&e, cfg.overlap_threshold), n)
    };
    let (p, pe) = stage(&primary);
    let (s, se) = stage(&secondary);
    stats.after_edge = pe + se;
    stats.after_overlap = p.len() + s.len();
    let rep_source = if p.is_empty() { &s } else { &p };
    if rep_source.is_empty() {
        return Ok(FusedFrame {
            frame_id: frame_id.into(),
            detections: Vec::new(),
            rep_box: None,
            stats,
        });
    }
    let rep = representative_box(rep_source)?;
    let p = filter_by_dimensions(&p, &rep, cfg.dim_tolerance);
    let s = filter_by_dimensions(&s, &rep, cfg.dim_tolerance);
    stats.after_dimensions = p.len() + s.len();
    let fused = fuse_detectors(&p, &s, &rep, cfg.fusion_min_sep);
    stats.fused_primary = p.len();
    stats.fused_secondary = fused.len() - p.len();
    Ok(FusedFrame {
        frame_id: frame_id.into(),
        detections: fused,
        rep_box: Some(rep),
        stats,
    })
}
