//! In-image structure inference: rows, benches, bench gaps, missing-module
//! hypotheses and sectors.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detect::{FusedFrame, ModuleDetection};
use crate::error::{Error, Result};
use crate::geom::{fit_line_tls, Line2, OrientedBox, Vec2};
use crate::raster::ImageRaster;
use crate::stats::median;
use crate::union_find::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StructureConfig {
    pub rows_per_bench: usize,
    pub th: f64,
    pub n_max: usize,
    pub min_inliers: usize,
    pub ransac_trials: usize,
    pub darkness_ratio: f64,
    pub north_up: bool,
    pub seed: u64,
}

impl StructureConfig {
    pub fn new(rows_per_bench: usize) -> Self {
        StructureConfig {
            rows_per_bench,
            th: 0.1,
            n_max: 8,
            min_inliers: 4,
            ransac_trials: 500,
            darkness_ratio: 0.7,
            north_up: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows_per_bench == 0 {
            return Err(Error::parameter("rows_per_bench", "must be at least 1"));
        }
        if !(self.th > 0.0 && self.th < 1.0 / 3.0) {
            return Err(Error::parameter("th", "must lie in (0, 1/3)"));
        }
        if self.min_inliers < 3 {
            return Err(Error::parameter("min_inliers", "must be at least 3"));
        }
        if self.ransac_trials == 0 {
            return Err(Error::parameter("ransac_trials", "must be at least 1"));
        }
        if !(self.darkness_ratio > 0.0) {
            return Err(Error::parameter("darkness_ratio", "must be positive"));
        }
        Ok(())
    }
}

/// Row of module centers in one image.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RowLine {
    pub point: Vec2,
    pub direction: Vec2,
    /// Detection indices sorted by line parameter.
    pub inliers: Vec<usize>,
    /// Median spacing of consecutive inliers along the row.
    pub d_med: f64,
}

impl RowLine {
    pub fn line(&self) -> Line2 {
        Line2 {
            point: self.point,
            direction: self.direction,
        }
    }

    pub fn parameter(&self, p: &Vec2) -> f64 {
        self.direction.dot(&(p - self.point))
    }
}

/// Rows of one image that coincide under the Hausdorff test.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bench2D {
    /// Row indices ordered north to south.
    pub rows: Vec<usize>,
    pub valid: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SectorEntry {
    Detection(usize),
    Hypothesis(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GapKind {
    BenchGap,
    Rejected,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GapKeypoint {
    pub row: usize,
    pub left: SectorEntry,
    pub right: SectorEntry,
    pub midpoint: Vec2,
    pub kind: GapKind,
    /// Inserted by repair or a manual correction rather than detected.
    pub synthetic: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Hypothesis {
    pub row: usize,
    pub center: Vec2,
    /// Placeholder inserted by repair for a module missing next to a gap.
    pub placeholder: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SectorBound {
    Keypoint(usize),
    Edge,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sector {
    pub row: usize,
    pub entries: Vec<SectorEntry>,
    pub left: SectorBound,
    pub right: SectorBound,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageStructure {
    pub frame_id: String,
    pub width: f64,
    pub height: f64,
    pub detections: Vec<ModuleDetection>,
    pub rep_box: Option<OrientedBox>,
    pub d_med: Option<f64>,
    pub rows: Vec<RowLine>,
    pub benches: Vec<Bench2D>,
    pub keypoints: Vec<GapKeypoint>,
    pub hypothesized: Vec<Hypothesis>,
    pub sectors: Vec<Sector>,
}

impl ImageStructure {
    pub fn empty(frame_id: &str, width: f64, height: f64) -> Self {
        ImageStructure {
            frame_id: frame_id.into(),
            width,
            height,
            detections: Vec::new(),
            rep_box: None,
            d_med: None,
            rows: Vec::new(),
            benches: Vec::new(),
            keypoints: Vec::new(),
            hypothesized: Vec::new(),
            sectors: Vec::new(),
        }
    }

    pub fn entry_center(&self, e: SectorEntry) -> Vec2 {
        match e {
            SectorEntry::Detection(i) => self.detections[i].bbox.center,
            SectorEntry::Hypothesis(i) => self.hypothesized[i].center,
        }
    }

    /// Detections and hypotheses of a row ordered by line parameter.
    pub fn row_entries(&self, row: usize) -> Vec<SectorEntry> {
        let r = &self.rows[row];
        let mut entries: Vec<(f64, SectorEntry)> = r
            .inliers
            .iter()
            .map(|&i| (r.parameter(&self.detections[i].bbox.center), SectorEntry::Detection(i)))
            .chain(
                self.hypothesized
                    .iter()
                    .enumerate()
                    .filter(|(_, h)| h.row == row)
                    .map(|(i, h)| (r.parameter(&h.center), SectorEntry::Hypothesis(i))),
            )
            .collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        entries.into_iter().map(|(_, e)| e).collect()
    }

    /// Bench index and in-bench row position of a row in a valid bench.
    pub fn row_position(&self, row: usize) -> Option<(usize, usize)> {
        self.benches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.valid)
            .find_map(|(bi, b)| b.rows.iter().position(|&r| r == row).map(|p| (bi, p)))
    }

    /// Recomputes sectors from rows, hypotheses and bench-gap keypoints.
    pub fn rebuild_sectors(&mut self) {
        let mut sectors = Vec::new();
        for bench in self.benches.iter().filter(|b| b.valid) {
            for &row in &bench.rows {
                let entries = self.row_entries(row);
                if entries.is_empty() {
                    continue;
                }
                let mut cuts: Vec<(usize, usize)> = Vec::new();
                for (k, kp) in self.keypoints.iter().enumerate() {
                    if kp.row != row || kp.kind != GapKind::BenchGap {
                        continue;
                    }
                    let pos = entries.iter().position(|&e| e == kp.left);
                    match pos {
                        Some(p) if p + 1 < entries.len() && entries[p + 1] == kp.right => cuts.push((p + 1, k)),
                        _ => log::warn!(
                            "frame `{}`: keypoint {} does not separate consecutive row entries; ignored",
                            self.frame_id,
                            k
                        ),
                    }
                }
                cuts.sort();
                cuts.dedup_by_key(|c| c.0);
                let mut start = 0;
                let mut left = SectorBound::Edge;
                for (cut, k) in cuts {
                    sectors.push(Sector {
                        row,
                        entries: entries[start..cut].to_vec(),
                        left,
                        right: SectorBound::Keypoint(k),
                    });
                    start = cut;
                    left = SectorBound::Keypoint(k);
                }
                sectors.push(Sector {
                    row,
                    entries: entries[start..].to_vec(),
                    left,
                    right: SectorBound::Edge,
                });
            }
        }
        self.sectors = sectors;
    }
}

/// Deterministic per-frame seed.
pub fn frame_seed(frame_id: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in frame_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn inliers_of(line: &Line2, centers: &[Vec2], candidates: &[usize], threshold: f64) -> Vec<usize> {
    candidates.iter().copied().filter(|&i| line.distance(&centers[i]) <= threshold).collect()
}

/// Sequential RANSAC: extracts the best-supported line from the remaining
/// centers, removes its inliers and repeats until the best line has fewer
/// than `min_inliers` members.
pub fn fit_rows_ransac(
    centers: &[Vec2],
    rep: &OrientedBox,
    min_inliers: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<RowLine> {
    let threshold = 0.25 * rep.height;
    let mut remaining: Vec<usize> = (0..centers.len()).collect();
    let mut rows = Vec::new();
    while remaining.len() >= min_inliers.max(2) {
        let mut best: Option<Vec<usize>> = None;
        for _ in 0..trials {
            let a = rng.random_range(0..remaining.len());
            let mut b = rng.random_range(0..remaining.len() - 1);
            if b >= a {
                b += 1;
            }
            let (pa, pb) = (centers[remaining[a]], centers[remaining[b]]);
            let Ok(line) = Line2::new(pa, pb - pa) else { continue };
            let inl = inliers_of(&line, centers, &remaining, threshold);
            if best.as_ref().is_none_or(|b| inl.len() > b.len()) {
                best = Some(inl);
            }
        }
        let Some(mut inliers) = best else { break };
        if inliers.len() < min_inliers {
            break;
        }
        let mut line = None;
        for _ in 0..2 {
            let pts: Vec<Vec2> = inliers.iter().map(|&i| centers[i]).collect();
            let Some(fit) = fit_line_tls(&pts) else { break };
            let refined = inliers_of(&fit, centers, &remaining, threshold);
            if refined.len() < min_inliers {
                break;
            }
            line = Some(fit);
            inliers = refined;
        }
        let line = match line {
            Some(l) => {
                let pts: Vec<Vec2> = inliers.iter().map(|&i| centers[i]).collect();
                fit_line_tls(&pts).unwrap_or(l)
            }
            None => {
                let pts: Vec<Vec2> = inliers.iter().map(|&i| centers[i]).collect();
                match fit_line_tls(&pts) {
                    Some(l) => l,
                    None => break,
                }
            }
        };
        inliers.sort_by(|&a, &b| line.parameter(&centers[a]).total_cmp(&line.parameter(&centers[b])).then(a.cmp(&b)));
        let params: Vec<f64> = inliers.iter().map(|&i| line.parameter(&centers[i])).collect();
        let diffs: Vec<f64> = params.windows(2).map(|w| w[1] - w[0]).collect();
        remaining.retain(|i| !inliers.contains(i));
        rows.push(RowLine {
            point: line.point,
            direction: line.direction,
            inliers,
            d_med: median(&diffs).unwrap_or(0.0),
        });
    }
    rows
}

/// Hausdorff-style distance between two image lines, evaluated on the
/// points where each line crosses the image border.
pub fn hausdorff_line_distance(l: &Line2, k: &Line2, width: f64, height: f64) -> Result<f64> {
    let (l0, l1) = l.clip_to_rect(width, height)?;
    let (k0, k1) = k.clip_to_rect(width, height)?;
    Ok(k.distance(&l0).max(k.distance(&l1)).max(l.distance(&k0)).max(l.distance(&k1)))
}

/// Connected components of rows under `H <= 2 * rep.height`, ordered north
/// to south (top to bottom of a north-up image).
pub fn group_rows_into_benches(
    rows: &[RowLine],
    centers: &[Vec2],
    rep: &OrientedBox,
    width: f64,
    height: f64,
    rows_per_bench: usize,
    north_up: bool,
) -> Result<Vec<Bench2D>> {
    let mut uf = UnionFind::new(rows.len());
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if hausdorff_line_distance(&rows[i].line(), &rows[j].line(), width, height)? <= 2.0 * rep.height {
                uf.union(i, j);
            }
        }
    }
    let mean_y = |r: &RowLine| r.inliers.iter().map(|&i| centers[i].y).sum::<f64>() / r.inliers.len().max(1) as f64;
    let key = |r: usize| if north_up { mean_y(&rows[r]) } else { -mean_y(&rows[r]) };
    let mut benches: Vec<Bench2D> = uf
        .groups()
        .into_iter()
        .map(|mut members| {
            members.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
            Bench2D {
                valid: members.len() == rows_per_bench,
                rows: members,
            }
        })
        .collect();
    let bench_key = |b: &Bench2D| b.rows.iter().map(|&r| key(r)).sum::<f64>() / b.rows.len() as f64;
    benches.sort_by(|a, b| bench_key(a).total_cmp(&bench_key(b)).then(a.rows.cmp(&b.rows)));
    Ok(benches)
}

/// Positions `j` (between inliers `j` and `j + 1`) whose spacing lies in
/// the bench-gap band `((1+th) d_med, 2(1-th) d_med)`.
pub fn find_gap_candidates(row: &RowLine, centers: &[Vec2], th: f64) -> Vec<usize> {
    let params: Vec<f64> = row.inliers.iter().map(|&i| row.parameter(&centers[i])).collect();
    params
        .windows(2)
        .enumerate()
        .filter(|(_, w)| is_gap_spacing(w[1] - w[0], row.d_med, th))
        .map(|(j, _)| j)
        .collect()
}

pub fn is_gap_spacing(d: f64, d_med: f64, th: f64) -> bool {
    d > (1.0 + th) * d_med && d < 2.0 * (1.0 - th) * d_med
}

/// Number of modules missing in a spacing `d`, if one `n` in `1..=n_max`
/// satisfies `(1-th) d_med (n+1) < d < (1+th) d_med (n+1)`.
pub fn missing_count(d: f64, d_med: f64, th: f64, n_max: usize) -> Option<usize> {
    if !(d_med > 0.0) {
        return None;
    }
    (1..=n_max).find(|&n| {
        let k = (n + 1) as f64;
        d > (1.0 - th) * d_med * k && d < (1.0 + th) * d_med * k
    })
}

/// Evenly spaced hypothesized centers strictly between `a` and `b`.
pub fn hypothesize_between(a: Vec2, b: Vec2, n: usize) -> Vec<Vec2> {
    (1..=n).map(|k| a + (b - a) * (k as f64 / (n + 1) as f64)).collect()
}

/// Hypotheses for every consecutive pair of a row that is not in `skip`.
pub fn hypothesize_missing(row: &RowLine, centers: &[Vec2], skip: &[usize], th: f64, n_max: usize) -> Vec<Vec2> {
    let mut out = Vec::new();
    for j in 0..row.inliers.len().saturating_sub(1) {
        if skip.contains(&j) {
            continue;
        }
        let a = centers[row.inliers[j]];
        let b = centers[row.inliers[j + 1]];
        let d = row.parameter(&b) - row.parameter(&a);
        if let Some(n) = missing_count(d, row.d_med, th, n_max) {
            out.extend(hypothesize_between(a, b, n));
        }
    }
    out
}

/// Transition patch between two consecutive modules of a row: centered
/// between them, spanning the free space plus a tenth of a module on each
/// side, half a module high.
pub fn transition_patch(a: &Vec2, b: &Vec2, rep: &OrientedBox) -> Option<OrientedBox> {
    let d = (b - a).norm();
    let length = (d - rep.width) + 0.2 * rep.width;
    if !(length > 0.0) {
        return None;
    }
    let dir = b - a;
    OrientedBox::new((a + b) * 0.5, length, 0.5 * rep.height, libm::atan2(dir.y, dir.x)).ok()
}

/// Input to a gap classifier for one row.
pub struct RowGaps<'a> {
    pub row: &'a RowLine,
    pub centers: &'a [Vec2],
    pub rep: &'a OrientedBox,
    /// Positions of the gap candidates in the row's inlier sequence.
    pub candidates: &'a [usize],
    /// Positions of normal neighbor pairs.
    pub normal: &'a [usize],
}

/// Decides which gap candidates are real bench gaps.
pub trait GapClassifier {
    /// Luminance-like statistics of normal transitions for one row, used
    /// for the image-level fallback reference.
    fn normal_scores(&self, image: Option<&ImageRaster>, gaps: &RowGaps<'_>) -> Vec<f64>;

    /// One kind per candidate. `fallback` is the image-level reference used
    /// when a row has no usable normal transitions.
    fn classify(&self, image: Option<&ImageRaster>, gaps: &RowGaps<'_>, fallback: Option<f64>) -> Vec<GapKind>;
}

/// Compares the mean luminance of a candidate's transition patch against
/// the median of the row's normal transitions.
#[derive(Clone, Copy, Debug)]
pub struct LuminanceGapClassifier {
    pub darkness_ratio: f64,
}

impl LuminanceGapClassifier {
    fn patch_luminance(image: &ImageRaster, gaps: &RowGaps<'_>, j: usize) -> Option<f64> {
        let a = gaps.centers[gaps.row.inliers[j]];
        let b = gaps.centers[gaps.row.inliers[j + 1]];
        let patch = transition_patch(&a, &b, gaps.rep)?;
        image.patch_mean_luminance(&patch).ok()
    }
}

impl GapClassifier for LuminanceGapClassifier {
    fn normal_scores(&self, image: Option<&ImageRaster>, gaps: &RowGaps<'_>) -> Vec<f64> {
        match image {
            Some(img) => gaps.normal.iter().filter_map(|&j| Self::patch_luminance(img, gaps, j)).collect(),
            None => Vec::new(),
        }
    }

    fn classify(&self, image: Option<&ImageRaster>, gaps: &RowGaps<'_>, fallback: Option<f64>) -> Vec<GapKind> {
        let Some(img) = image else {
            return vec![GapKind::BenchGap; gaps.candidates.len()];
        };
        let reference = median(&self.normal_scores(image, gaps)).or(fallback);
        gaps.candidates
            .iter()
            .map(|&j| match (Self::patch_luminance(img, gaps, j), reference) {
                (Some(l), Some(r)) if l < self.darkness_ratio * r => GapKind::BenchGap,
                (Some(_), Some(_)) => GapKind::Rejected,
                (Some(_), None) => GapKind::BenchGap,
                (None, _) => {
                    log::warn!("gap candidate patch outside the raster; rejected");
                    GapKind::Rejected
                }
            })
            .collect()
    }
}

/// Full per-image inference from fused detections.
/// Carries bench gaps across the rows of each valid bench. A row whose
/// spacing at a sibling row's gap is too wide for adjacent modules gets the
/// gap keypoint, plus placeholders for the modules missing on either side.
pub fn propagate_bench_gaps(s: &mut ImageStructure, th: f64, n_max: usize) {
    let benches: Vec<Vec<usize>> = s.benches.iter().filter(|b| b.valid).map(|b| b.rows.clone()).collect();
    for rows in benches {
        for &ri in &rows {
            let sources: Vec<(Vec2, f64)> = s
                .keypoints
                .iter()
                .filter(|k| k.row != ri && rows.contains(&k.row) && k.kind == GapKind::BenchGap && !k.synthetic)
                .map(|k| {
                    let r = &s.rows[k.row];
                    let g = r.parameter(&s.entry_center(k.right)) - r.parameter(&s.entry_center(k.left));
                    (k.midpoint, g)
                })
                .collect();
            for (mid, g) in sources {
                let row = &s.rows[ri];
                let d = row.d_med;
                let tm = row.parameter(&mid);
                let t = |i: usize| row.parameter(&s.detections[i].bbox.center);
                let Some(j) = row.inliers.windows(2).position(|w| t(w[0]) < tm && t(w[1]) > tm) else {
                    continue;
                };
                let (a, b) = (row.inliers[j], row.inliers[j + 1]);
                let (ta, tb) = (t(a), t(b));
                if tb - ta <= (1.0 + th) * d || s.keypoints.iter().any(|k| k.row == ri && (ta..=tb).contains(&row.parameter(&k.midpoint))) {
                    continue;
                }
                let side = |span: f64| {
                    let k = libm::round((span - g / 2.0) / d).max(0.0);
                    ((span - g / 2.0 - k * d).abs() <= th * (k + 1.0) * d).then_some(k as usize)
                };
                let (Some(kl), Some(kr)) = (side(tm - ta), side(tb - tm)) else {
                    continue;
                };
                if kl + kr > n_max {
                    continue;
                }
                let (ca, cb, dir) = (s.detections[a].bbox.center, s.detections[b].bbox.center, row.direction);
                s.hypothesized.retain(|h| h.row != ri || !(ta..=tb).contains(&s.rows[ri].parameter(&h.center)));
                let mut push = |c: Vec2| {
                    s.hypothesized.push(Hypothesis {
                        row: ri,
                        center: c,
                        placeholder: true,
                    });
                    SectorEntry::Hypothesis(s.hypothesized.len() - 1)
                };
                let mut left = SectorEntry::Detection(a);
                for m in 1..=kl {
                    left = push(ca + dir * (m as f64 * d));
                }
                let mut right = SectorEntry::Detection(b);
                for m in 1..=kr {
                    right = push(cb - dir * (m as f64 * d));
                }
                s.keypoints.push(GapKeypoint {
                    row: ri,
                    left,
                    right,
                    midpoint: s.rows[ri].point + dir * tm,
                    kind: GapKind::BenchGap,
                    synthetic: true,
                });
            }
        }
    }
}

pub fn build_structure(
    fused: &FusedFrame,
    width: f64,
    height: f64,
    image: Option<&ImageRaster>,
    cfg: &StructureConfig,
    classifier: &dyn GapClassifier,
) -> Result<ImageStructure> {
    cfg.validate()?;
    let mut s = ImageStructure::empty(&fused.frame_id, width, height);
    s.detections = fused.detections.clone();
    s.rep_box = fused.rep_box;
    let Some(rep) = fused.rep_box else {
        return Ok(s);
    };
    let centers: Vec<Vec2> = s.detections.iter().map(|d| d.bbox.center).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(&fused.frame_id, cfg.seed));
    s.rows = fit_rows_ransac(&centers, &rep, cfg.min_inliers, cfg.ransac_trials, &mut rng);
    s.benches = group_rows_into_benches(&s.rows, &centers, &rep, width, height, cfg.rows_per_bench, cfg.north_up)?;
    s.d_med = median(&s.rows.iter().map(|r| r.d_med).collect::<Vec<_>>());

    let per_row: Vec<(Vec<usize>, Vec<usize>)> = s
        .rows
        .iter()
        .map(|row| {
            let cands = find_gap_candidates(row, &centers, cfg.th);
            let normal = (0..row.inliers.len().saturating_sub(1))
                .filter(|j| {
                    let d = row.parameter(&centers[row.inliers[j + 1]]) - row.parameter(&centers[row.inliers[*j]]);
                    d <= (1.0 + cfg.th) * row.d_med
                })
                .collect();
            (cands, normal)
        })
        .collect();
    let mut all_normal = Vec::new();
    for (row, (cands, normal)) in s.rows.iter().zip(&per_row) {
        let g = RowGaps {
            row,
            centers: &centers,
            rep: &rep,
            candidates: cands,
            normal,
        };
        all_normal.extend(classifier.normal_scores(image, &g));
    }
    let fallback = median(&all_normal);

    for (ri, (cands, normal)) in per_row.iter().enumerate() {
        let row = &s.rows[ri];
        let g = RowGaps {
            row,
            centers: &centers,
            rep: &rep,
            candidates: cands,
            normal,
        };
        let kinds = classifier.classify(image, &g, fallback);
        for (&j, kind) in cands.iter().zip(kinds) {
            let (a, b) = (row.inliers[j], row.inliers[j + 1]);
            s.keypoints.push(GapKeypoint {
                row: ri,
                left: SectorEntry::Detection(a),
                right: SectorEntry::Detection(b),
                midpoint: (centers[a] + centers[b]) * 0.5,
                kind,
                synthetic: false,
            });
        }
        for c in hypothesize_missing(row, &centers, cands, cfg.th, cfg.n_max) {
            s.hypothesized.push(Hypothesis {
                row: ri,
                center: c,
                placeholder: false,
            });
        }
    }
    propagate_bench_gaps(&mut s, cfg.th, cfg.n_max);
    s.rebuild_sectors();
    Ok(s)
}
