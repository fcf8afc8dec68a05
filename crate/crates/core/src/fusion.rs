//! Cross-image fusion: keypoint groups, global lines, sector groups with
//! repair of missing keypoints, hypothesis confirmation and global ids.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::camera::CameraFrame;
use crate::cloud::SurfaceSample;
use crate::error::{Error, Result};
use crate::geom::{canonical_direction3, Vec2, Vec3};
use crate::lift::{LiftedStructure, Lifter};
use crate::stats::median;
use crate::structure::{GapKeypoint, GapKind, Hypothesis, ImageStructure, SectorBound, SectorEntry};
use crate::union_find::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FusionConfig {
    pub dist_threshold: f64,
    /// Lifted detections of two images closer than this are taken as the
    /// same module; rows sharing two such modules belong to one line.
    pub match_radius: f64,
    pub th: f64,
    pub n_max: usize,
    pub max_repair_rounds: usize,
    /// Minimum overlap, as a fraction of the shorter sector, for sectors of
    /// neighboring rows to be assigned to one bench.
    pub bench_overlap: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            dist_threshold: 1.5,
            match_radius: 0.4,
            th: 0.1,
            n_max: 8,
            max_repair_rounds: 8,
            bench_overlap: 0.5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dist_threshold > 0.0) {
            return Err(Error::parameter("dist_threshold", "must be positive"));
        }
        if !(self.match_radius > 0.0) {
            return Err(Error::parameter("match_radius", "must be positive"));
        }
        if !(self.bench_overlap > 0.0 && self.bench_overlap <= 1.0) {
            return Err(Error::parameter("bench_overlap", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Everything known about one image when fusing.
#[derive(Clone, Debug)]
pub struct View {
    pub frame: CameraFrame,
    pub structure: ImageStructure,
    pub lifted: LiftedStructure,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KeypointGroup {
    pub group_id: usize,
    /// (frame id, keypoint index) pairs.
    pub members: Vec<(String, usize)>,
    pub centroid: Vec3,
    pub row_position: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GlobalLine {
    pub line_id: usize,
    /// (frame id, row index) pairs.
    pub rows: Vec<(String, usize)>,
    pub origin: Vec3,
    pub direction: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SectorMember {
    pub frame_id: String,
    pub sector: usize,
    /// Aligned position of the sector's first entry within the group.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SectorGroup {
    pub sector_id: usize,
    pub line_id: usize,
    pub bench_id: usize,
    pub row_index: usize,
    pub left_kg: Option<usize>,
    pub right_kg: Option<usize>,
    pub module_count: usize,
    pub members: Vec<SectorMember>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Observation {
    pub frame_id: String,
    /// Index into the frame's fused detection list.
    pub detection: usize,
    /// Input record index of the detection.
    pub detection_index: usize,
    pub sample: Option<SurfaceSample>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GlobalModule {
    pub global_id: usize,
    pub line_id: usize,
    pub bench_id: usize,
    pub sector_id: usize,
    pub row_index: usize,
    pub in_row_index: usize,
    pub observations: Vec<Observation>,
    /// Hypotheses from other images aligned with this module.
    pub hypothesis_support: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FlagKind {
    IrreparableSector,
    InconsistentGroup,
    UnplacedModule,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Flag {
    pub kind: FlagKind,
    pub frame_id: Option<String>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Repair {
    pub frame_id: String,
    pub row: usize,
    pub keypoint_group: usize,
    /// Number of row entries left of the inserted keypoint in the split sector.
    pub split_after: usize,
    pub placeholders_left: usize,
    pub placeholders_right: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FusionReport {
    pub keypoints_lifted: usize,
    pub keypoints_unlifted: usize,
    pub repairs: Vec<Repair>,
    pub flags: Vec<Flag>,
    pub unanchored_sectors: usize,
    pub excluded_sectors: usize,
    pub confirmed_hypotheses: usize,
    pub discarded_positions: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GlobalStructure {
    pub keypoint_groups: Vec<KeypointGroup>,
    pub lines: Vec<GlobalLine>,
    pub sector_groups: Vec<SectorGroup>,
    pub modules: Vec<GlobalModule>,
    pub report: FusionReport,
}

impl GlobalStructure {
    pub fn empty() -> Self {
        GlobalStructure {
            keypoint_groups: Vec::new(),
            lines: Vec::new(),
            sector_groups: Vec::new(),
            modules: Vec::new(),
            report: FusionReport::default(),
        }
    }

    /// Sector id of every grouped image sector, keyed by (frame id, sector).
    pub fn sector_ids(&self) -> BTreeMap<(String, usize), usize> {
        self.sector_groups
            .iter()
            .flat_map(|g| g.members.iter().map(move |m| ((m.frame_id.clone(), m.sector), g.sector_id)))
            .collect()
    }
}

/// Single-linkage clustering of 3D points under `distance <= threshold`.
/// Groups are sorted member lists ordered by smallest member.
pub fn group_keypoints(positions: &[Vec3], threshold: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| positions[a].x.total_cmp(&positions[b].x).then(a.cmp(&b)));
    let mut uf = UnionFind::new(positions.len());
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if positions[j].x - positions[i].x > threshold {
                break;
            }
            if (positions[i] - positions[j]).norm() <= threshold {
                uf.union(i, j);
            }
        }
    }
    uf.groups()
}

/// Splits each group by the in-bench row position of its members.
pub fn refine_by_row_position(groups: &[Vec<usize>], row_position: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for g in groups {
        let mut by_pos: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &m in g {
            by_pos.entry(row_position[m]).or_default().push(m);
        }
        out.extend(by_pos.into_values());
    }
    out.sort_by_key(|g| g[0]);
    out
}

/// Unites rows that share a keypoint group. `groups` lists, per keypoint
/// group, the (view, row) of each member. Returns the classes that contain
/// at least one keypoint, as sorted row lists.
pub fn assign_global_lines(groups: &[Vec<(usize, usize)>], frame_ids: &[String]) -> Result<Vec<Vec<(usize, usize)>>> {
    let rows: BTreeSet<(usize, usize)> = groups.iter().flatten().copied().collect();
    let rows: Vec<(usize, usize)> = rows.into_iter().collect();
    let idx = |r: &(usize, usize)| rows.binary_search(r).unwrap_or(0);
    let mut uf = UnionFind::new(rows.len());
    for g in groups {
        for w in g.windows(2) {
            uf.union(idx(&w[0]), idx(&w[1]));
        }
    }
    let mut lines = Vec::new();
    for class in uf.groups() {
        let members: Vec<(usize, usize)> = class.iter().map(|&i| rows[i]).collect();
        for w in members.windows(2) {
            if w[0].0 == w[1].0 {
                let frame_rows: Vec<usize> = members.iter().filter(|m| m.0 == w[0].0).map(|m| m.1).collect();
                return Err(Error::StructuralConflict {
                    frame_id: frame_ids.get(w[0].0).cloned().unwrap_or_default(),
                    rows: frame_rows,
                });
            }
        }
        lines.push(members);
    }
    Ok(lines)
}

/// Sector grouping by shared keypoint groups: sectors on the same side of a
/// keypoint group form a proto-group and proto-groups sharing a sector are
/// merged. `bounds` holds each sector's (left, right) keypoint group;
/// `same` lists further pairs of sectors known to coincide.
pub fn group_sectors(bounds: &[(Option<usize>, Option<usize>)], same: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(bounds.len());
    for &(a, b) in same {
        uf.union(a, b);
    }
    let mut first_left: BTreeMap<usize, usize> = BTreeMap::new();
    let mut first_right: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, (l, r)) in bounds.iter().enumerate() {
        // a sector right of group `l`
        if let Some(l) = l {
            let f = *first_right.entry(*l).or_insert(i);
            uf.union(f, i);
        }
        if let Some(r) = r {
            let f = *first_left.entry(*r).or_insert(i);
            uf.union(f, i);
        }
    }
    uf.groups()
}

/// Agreed module count and per-member alignment offsets of a sector group,
/// or the reason the group is inconsistent. Open sides (`None`) make a
/// member's count a lower bound aligned at its keypoint side. Without a
/// closed member, `estimate` (the count implied by the geometry) raises
/// the largest open count.
pub fn check_sector_group(
    bounds: &[(Option<usize>, Option<usize>)],
    counts: &[usize],
    estimate: Option<usize>,
) -> core::result::Result<(usize, Vec<usize>), String> {
    let kgs: BTreeSet<usize> = bounds.iter().flat_map(|(l, r)| [*l, *r]).flatten().collect();
    if kgs.len() > 2 {
        return Err(alloc::format!("sectors attached to {} keypoint groups", kgs.len()));
    }
    let closed: BTreeSet<usize> = bounds
        .iter()
        .zip(counts)
        .filter(|((l, r), _)| l.is_some() && r.is_some())
        .map(|(_, &c)| c)
        .collect();
    if closed.len() > 1 {
        return Err(alloc::format!("closed sectors disagree on module count: {closed:?}"));
    }
    let count = match closed.first() {
        Some(&c) => c,
        None => counts.iter().copied().max().unwrap_or(0).max(estimate.unwrap_or(0)),
    };
    let mut offsets = Vec::with_capacity(counts.len());
    for ((l, _), &n) in bounds.iter().zip(counts) {
        if n > count {
            return Err(alloc::format!("open sector holds {n} modules, more than the agreed {count}"));
        }
        offsets.push(if l.is_some() { 0 } else { count - n });
    }
    Ok((count, offsets))
}

/// Pairs of rows from different views that share at least two modules:
/// lifted detections within `radius` of each other. `points` holds
/// (position, view, row) of every lifted row detection.
pub fn rows_sharing_modules(points: &[(Vec3, usize, usize)], radius: f64) -> Vec<((usize, usize), (usize, usize))> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].0.x.total_cmp(&points[b].0.x).then(a.cmp(&b)));
    type RowKey = (usize, usize);
    let mut shared: BTreeMap<(RowKey, RowKey), usize> = BTreeMap::new();
    for (pos, &i) in order.iter().enumerate() {
        let (pi, vi, ri) = points[i];
        for &j in &order[pos + 1..] {
            let (pj, vj, rj) = points[j];
            if pj.x - pi.x > radius {
                break;
            }
            if vi != vj && (pi - pj).norm() <= radius {
                let key = if (vi, ri) < (vj, rj) { ((vi, ri), (vj, rj)) } else { ((vj, rj), (vi, ri)) };
                *shared.entry(key).or_default() += 1;
            }
        }
    }
    shared.into_iter().filter(|&(_, n)| n >= 2).map(|(k, _)| k).collect()
}

/// Principal direction of a point set (sign towards +x) and its centroid.
pub fn principal_direction(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    if cov.trace() <= 0.0 {
        return None;
    }
    let eig = SymmetricEigen::new(cov);
    let (mut best, mut val) = (0, f64::NEG_INFINITY);
    for i in 0..3 {
        if eig.eigenvalues[i] > val {
            val = eig.eigenvalues[i];
            best = i;
        }
    }
    Some((c, canonical_direction3(eig.eigenvectors.column(best).into_owned().normalize())))
}

struct Ctx {
    /// keypoint group of (view, keypoint)
    kg_of: BTreeMap<(usize, usize), usize>,
    /// line of (view, row)
    line_of: BTreeMap<(usize, usize), usize>,
    kg_centroid: Vec<Vec3>,
    kg_line: Vec<usize>,
    line_dir: Vec<Vec3>,
}

#[derive(Clone, Debug)]
struct MemberRef {
    view: usize,
    sector: usize,
    line: usize,
    left: Option<usize>,
    right: Option<usize>,
    count: usize,
}

fn bound_kg(ctx: &Ctx, view: usize, b: SectorBound) -> Option<usize> {
    match b {
        SectorBound::Keypoint(k) => ctx.kg_of.get(&(view, k)).copied(),
        SectorBound::Edge => None,
    }
}

/// Sectors of rows assigned to a line. Sectors without any keypoint group
/// are kept only when `floating` is set; otherwise they are counted as
/// unanchored.
fn collect_members(views: &[View], ctx: &Ctx, floating: bool, unanchored: &mut usize) -> Vec<MemberRef> {
    let mut out = Vec::new();
    *unanchored = 0;
    for (v, view) in views.iter().enumerate() {
        for (si, s) in view.structure.sectors.iter().enumerate() {
            let Some(&line) = ctx.line_of.get(&(v, s.row)) else {
                *unanchored += 1;
                continue;
            };
            let left = bound_kg(ctx, v, s.left);
            let right = bound_kg(ctx, v, s.right);
            if left.is_none() && right.is_none() && !floating {
                *unanchored += 1;
                continue;
            }
            out.push(MemberRef {
                view: v,
                sector: si,
                line,
                left,
                right,
                count: s.entries.len(),
            });
        }
    }
    out
}

/// Keypoint groups of the member's line that fall inside its extent.
fn missing_keypoints(views: &[View], ctx: &Ctx, m: &MemberRef) -> Vec<usize> {
    let view = &views[m.view];
    let d = ctx.line_dir[m.line];
    let t = |p: &Vec3| p.dot(&d);
    let sector = &view.structure.sectors[m.sector];
    let ts: Vec<f64> = sector.entries.iter().filter_map(|&e| view.lifted.entry(e)).map(|s| t(&s.position)).collect();
    let lo = match m.left {
        Some(k) => t(&ctx.kg_centroid[k]),
        None => ts.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let hi = match m.right {
        Some(k) => t(&ctx.kg_centroid[k]),
        None => ts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let mut missing: Vec<(f64, usize)> = (0..ctx.kg_centroid.len())
        .filter(|&k| ctx.kg_line[k] == m.line && Some(k) != m.left && Some(k) != m.right)
        .map(|k| (t(&ctx.kg_centroid[k]), k))
        .filter(|&(tk, _)| tk > lo && tk < hi)
        .collect();
    missing.sort_by(|a, b| a.0.total_cmp(&b.0));
    missing.into_iter().map(|(_, k)| k).collect()
}

struct SplitPlan {
    view: usize,
    row: usize,
    kg: usize,
    left_entry: SectorEntry,
    right_entry: SectorEntry,
    split_after: usize,
    k_left: usize,
    k_right: usize,
}

fn plan_split(views: &[View], ctx: &Ctx, m: &MemberRef, kg: usize, cfg: &FusionConfig) -> core::result::Result<SplitPlan, String> {
    let view = &views[m.view];
    let s = &view.structure;
    let sector = &s.sectors[m.sector];
    let row = &s.rows[sector.row];
    let d = ctx.line_dir[m.line];
    let tb = ctx.kg_centroid[kg].dot(&d);
    let ts: Vec<Option<f64>> = sector.entries.iter().map(|&e| view.lifted.entry(e).map(|x| x.position.dot(&d))).collect();
    let j = match ts.iter().rposition(|t| matches!(t, Some(t) if *t < tb)) {
        Some(i) => i + 1,
        None => return Err("no lifted module before the missing keypoint".into()),
    };
    if j >= ts.len() || ts[j..].iter().any(|t| matches!(t, Some(t) if *t <= tb)) {
        return Err("lifted modules do not separate at the missing keypoint".into());
    }
    let (Some(tl), Some(tr)) = (ts[j - 1], ts[j]) else {
        return Err("modules next to the missing keypoint are unlifted".into());
    };
    let spacing = row.parameter(&s.entry_center(sector.entries[j])) - row.parameter(&s.entry_center(sector.entries[j - 1]));
    let dm = row.d_med;
    let th = cfg.th;
    let m_missing = (0..=cfg.n_max)
        .find(|&k| {
            let k = k as f64;
            spacing > (1.0 + th) * dm + k * (1.0 - th) * dm && spacing < 2.0 * (1.0 - th) * dm + k * (1.0 + th) * dm
        })
        .ok_or_else(|| alloc::format!("spacing {spacing:.1} px does not fit a gap with missing modules (d_med {dm:.1} px)"))?;
    let gaps: Vec<f64> = ts
        .windows(2)
        .enumerate()
        .filter(|(i, _)| *i != j - 1)
        .filter_map(|(_, w)| Some((w[1]? - w[0]?).abs()))
        .collect();
    let (k_left, k_right) = if m_missing == 0 {
        (0, 0)
    } else {
        let pitch = median(&gaps).ok_or_else(|| String::from("sector too short to estimate the module pitch"))?;
        let skew = ((tb - tl) - (tr - tb)) / pitch;
        let kl = libm::round((m_missing as f64 + skew) * 0.5).clamp(0.0, m_missing as f64) as usize;
        (kl, m_missing - kl)
    };
    Ok(SplitPlan {
        view: m.view,
        row: sector.row,
        kg,
        left_entry: sector.entries[j - 1],
        right_entry: sector.entries[j],
        split_after: j,
        k_left,
        k_right,
    })
}

fn apply_split(view: &mut View, plan: &SplitPlan, lifter: &Lifter<'_>) -> usize {
    let s = &mut view.structure;
    let dir = s.rows[plan.row].direction;
    let dm = s.rows[plan.row].d_med;
    let cl = s.entry_center(plan.left_entry);
    let cr = s.entry_center(plan.right_entry);
    let mut left = plan.left_entry;
    let mut right = plan.right_entry;
    let push = |s: &mut ImageStructure, c: Vec2| {
        s.hypothesized.push(Hypothesis {
            row: plan.row,
            center: c,
            placeholder: true,
        });
        SectorEntry::Hypothesis(s.hypothesized.len() - 1)
    };
    for q in 1..=plan.k_left {
        left = push(s, cl + dir * (dm * q as f64));
    }
    for q in (1..=plan.k_right).rev() {
        let e = push(s, cr - dir * (dm * q as f64));
        if q == plan.k_right {
            right = e;
        }
    }
    let midpoint = (s.entry_center(left) + s.entry_center(right)) * 0.5;
    s.keypoints.push(GapKeypoint {
        row: plan.row,
        left,
        right,
        midpoint,
        kind: GapKind::BenchGap,
        synthetic: true,
    });
    s.rebuild_sectors();
    view.lifted.extend_to(&view.structure, &view.frame, lifter);
    view.structure.keypoints.len() - 1
}

/// Fuses lifted per-image structures into one global structure. Views are
/// processed in frame-id order; repairs modify the views in place.
pub fn fuse_structures(views: &mut [View], lifter: &Lifter<'_>, cfg: &FusionConfig) -> Result<GlobalStructure> {
    cfg.validate()?;
    views.sort_by(|a, b| a.frame.frame_id.cmp(&b.frame.frame_id));
    let frame_ids: Vec<String> = views.iter().map(|v| v.frame.frame_id.clone()).collect();
    let mut report = FusionReport::default();

    // keypoint groups
    let mut kps: Vec<(usize, usize)> = Vec::new();
    let mut kp_pos: Vec<Vec3> = Vec::new();
    let mut kp_rowpos: Vec<usize> = Vec::new();
    for (v, view) in views.iter().enumerate() {
        for (k, kp) in view.structure.keypoints.iter().enumerate() {
            if kp.kind != GapKind::BenchGap {
                continue;
            }
            let Some((_, rp)) = view.structure.row_position(kp.row) else { continue };
            match view.lifted.keypoints.get(k).and_then(|x| x.as_ref()) {
                Some(sample) => {
                    kps.push((v, k));
                    kp_pos.push(sample.position);
                    kp_rowpos.push(rp);
                    report.keypoints_lifted += 1;
                }
                None => report.keypoints_unlifted += 1,
            }
        }
    }
    let groups = refine_by_row_position(&group_keypoints(&kp_pos, cfg.dist_threshold), &kp_rowpos);

    // global lines
    let group_rows: Vec<Vec<(usize, usize)>> = groups
        .iter()
        .map(|g| {
            let mut rows: Vec<(usize, usize)> = g.iter().map(|&i| (kps[i].0, views[kps[i].0].structure.keypoints[kps[i].1].row)).collect();
            rows.sort();
            rows.dedup();
            rows
        })
        .collect();
    let mut row_points = Vec::new();
    for (v, view) in views.iter().enumerate() {
        for (r, row) in view.structure.rows.iter().enumerate() {
            for &i in &row.inliers {
                if let Some(s) = view.lifted.detections[i] {
                    row_points.push((s.position, v, r));
                }
            }
        }
    }
    let mut links = group_rows.clone();
    links.extend(rows_sharing_modules(&row_points, cfg.match_radius).into_iter().map(|(a, b)| alloc::vec![a, b]));
    let line_rows = assign_global_lines(&links, &frame_ids)?;
    let mut line_of = BTreeMap::new();
    for (l, rows) in line_rows.iter().enumerate() {
        for &r in rows {
            line_of.insert(r, l);
        }
    }
    let mut line_dir = Vec::new();
    let mut line_origin = Vec::new();
    let mut line_pitch = Vec::new();
    for rows in &line_rows {
        let pts: Vec<Vec3> = rows
            .iter()
            .flat_map(|&(v, r)| {
                let view = &views[v];
                view.structure.rows[r].inliers.iter().filter_map(move |&i| view.lifted.detections[i].map(|s| s.position))
            })
            .collect();
        let (o, d) = principal_direction(&pts).unwrap_or((pts.first().copied().unwrap_or_default(), Vec3::x()));
        line_origin.push(o);
        line_dir.push(d);
        let steps: Vec<f64> = rows
            .iter()
            .flat_map(|&(v, r)| {
                let view = &views[v];
                let ts: Vec<Option<f64>> = view.structure.rows[r].inliers.iter().map(|&i| view.lifted.detections[i].map(|s| s.position.dot(&d))).collect();
                ts.windows(2).filter_map(|w| Some((w[1]? - w[0]?).abs())).collect::<Vec<_>>()
            })
            .collect();
        line_pitch.push(median(&steps));
    }
    let mut kg_of = BTreeMap::new();
    let mut kg_centroid = Vec::new();
    let mut kg_line = Vec::new();
    for (g, members) in groups.iter().enumerate() {
        for &i in members {
            kg_of.insert(kps[i], g);
        }
        kg_centroid.push(members.iter().map(|&i| kp_pos[i]).fold(Vec3::zeros(), |a, p| a + p) / members.len() as f64);
        kg_line.push(line_of[&group_rows[g][0]]);
    }
    let mut ctx = Ctx {
        kg_of,
        line_of,
        kg_centroid,
        kg_line,
        line_dir,
    };

    // repair sectors that span a keypoint group missing in their image
    for _ in 0..cfg.max_repair_rounds {
        let members = collect_members(views, &ctx, false, &mut report.unanchored_sectors);
        let mut plans = Vec::new();
        for m in &members {
            let missing = missing_keypoints(views, &ctx, m);
            if missing.len() == 1 {
                if let Ok(p) = plan_split(views, &ctx, m, missing[0], cfg) {
                    plans.push(p);
                }
            }
        }
        if plans.is_empty() {
            break;
        }
        for p in plans {
            let k = apply_split(&mut views[p.view], &p, lifter);
            ctx.kg_of.insert((p.view, k), p.kg);
            report.repairs.push(Repair {
                frame_id: frame_ids[p.view].clone(),
                row: p.row,
                keypoint_group: p.kg,
                split_after: p.split_after,
                placeholders_left: p.k_left,
                placeholders_right: p.k_right,
            });
        }
    }

    // final grouping and verification
    let all = collect_members(views, &ctx, true, &mut report.unanchored_sectors);
    let mut members = Vec::new();
    for m in all {
        let missing = missing_keypoints(views, &ctx, &m);
        if missing.is_empty() {
            members.push(m);
            continue;
        }
        if m.left.is_none() && m.right.is_none() {
            report.unanchored_sectors += 1;
            continue;
        }
        let reason = if missing.len() > 1 {
            alloc::format!("spans {} keypoint groups missing in this image", missing.len())
        } else {
            match plan_split(views, &ctx, &m, missing[0], cfg) {
                Err(e) => e,
                Ok(_) => String::from("repair did not converge"),
            }
        };
        report.excluded_sectors += 1;
        report.flags.push(Flag {
            kind: FlagKind::IrreparableSector,
            frame_id: Some(frame_ids[m.view].clone()),
            detail: alloc::format!("sector {} (row {}): {reason}", m.sector, views[m.view].structure.sectors[m.sector].row),
        });
    }
    let bounds: Vec<(Option<usize>, Option<usize>)> = members.iter().map(|m| (m.left, m.right)).collect();
    // lifted extent of every member along its line
    let extents: Vec<Option<(f64, f64)>> = members
        .iter()
        .map(|m| {
            let view = &views[m.view];
            let d = ctx.line_dir[m.line];
            let ts: Vec<f64> = view.structure.sectors[m.sector]
                .entries
                .iter()
                .filter_map(|&e| view.lifted.entry(e))
                .map(|s| s.position.dot(&d))
                .collect();
            let lo = ts.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo <= hi).then_some((lo, hi))
        })
        .collect();
    let mut same = Vec::new();
    for a in 0..members.len() {
        for b in a + 1..members.len() {
            let (ma, mb) = (&members[a], &members[b]);
            if ma.line != mb.line || ma.view == mb.view {
                continue;
            }
            let (Some((a0, a1)), Some((b0, b1)), Some(p)) = (extents[a], extents[b], line_pitch[ma.line]) else {
                continue;
            };
            if a1.min(b1) - a0.max(b0) > -0.25 * p {
                same.push((a, b));
            }
        }
    }
    struct Draft {
        line: usize,
        members: Vec<usize>,
        offsets: Vec<usize>,
        count: usize,
        left: Option<usize>,
        right: Option<usize>,
    }
    let mut drafts = Vec::new();
    for g in group_sectors(&bounds, &same) {
        // sectors without keypoints join through their neighbours only
        let (g, floating): (Vec<usize>, Vec<usize>) = g.into_iter().partition(|&i| bounds[i] != (None, None));
        if g.is_empty() {
            report.unanchored_sectors += floating.len();
            continue;
        }
        let b: Vec<_> = g.iter().map(|&i| bounds[i]).collect();
        let c: Vec<usize> = g.iter().map(|&i| members[i].count).collect();
        // count implied by the modules next to both keypoint groups
        let side = |left: bool| {
            let ts: Vec<f64> = g
                .iter()
                .filter(|&&i| if left { bounds[i].0.is_some() } else { bounds[i].1.is_some() })
                .filter_map(|&i| extents[i].map(|e| if left { e.0 } else { e.1 }))
                .collect();
            crate::stats::mean(&ts)
        };
        let estimate = match (side(true), side(false), line_pitch[members[g[0]].line]) {
            (Some(lo), Some(hi), Some(p)) if hi > lo => Some(libm::round((hi - lo) / p) as usize + 1),
            _ => None,
        };
        match check_sector_group(&b, &c, estimate) {
            Ok((mut count, mut offsets)) => {
                let left = b.iter().find_map(|x| x.0);
                let right = b.iter().find_map(|x| x.1);
                let mut g = g;
                let pitch = line_pitch[members[g[0]].line];
                // first-slot position implied by the anchored members
                let starts: Vec<f64> = match pitch {
                    Some(p) => g.iter().zip(&offsets).filter_map(|(&i, &o)| extents[i].map(|e| e.0 - o as f64 * p)).collect(),
                    None => Vec::new(),
                };
                let placed: Vec<(usize, i64)> = match (crate::stats::mean(&starts), pitch) {
                    (Some(t0), Some(p)) => floating
                        .iter()
                        .filter_map(|&i| extents[i].map(|e| (i, libm::round((e.0 - t0) / p) as i64)))
                        .collect(),
                    _ => Vec::new(),
                };
                report.unanchored_sectors += floating.len() - placed.len();
                // without a left keypoint group the row may start earlier
                let shift = match left {
                    None => placed.iter().map(|x| -x.1).max().unwrap_or(0).max(0),
                    Some(_) => 0,
                };
                offsets.iter_mut().for_each(|o| *o += shift as usize);
                count += shift as usize;
                for (i, off) in placed {
                    let off = off + shift;
                    let end = off + members[i].count as i64;
                    if off < 0 || (right.is_some() && end > count as i64) {
                        report.unanchored_sectors += 1;
                        continue;
                    }
                    count = count.max(end as usize);
                    g.push(i);
                    offsets.push(off as usize);
                }
                drafts.push(Draft {
                    line: members[g[0]].line,
                    left,
                    right,
                    members: g,
                    offsets,
                    count,
                });
            }
            Err(reason) => {
                report.excluded_sectors += g.len();
                let list: Vec<String> = g.iter().map(|&i| alloc::format!("{}#{}", frame_ids[members[i].view], members[i].sector)).collect();
                report.flags.push(Flag {
                    kind: FlagKind::InconsistentGroup,
                    frame_id: None,
                    detail: alloc::format!("{reason}; sectors {}", list.join(", ")),
                });
            }
        }
    }

    // modules per draft group: aligned positions with at least one detection
    struct DraftModule {
        position_in_row: usize,
        observations: Vec<Observation>,
        hypotheses: usize,
        position: Vec3,
    }
    let mut modules: Vec<DraftModule> = Vec::new();
    let mut draft_modules: Vec<Vec<usize>> = Vec::new();
    for d in drafts.iter() {
        let mut slots: Vec<(Vec<Observation>, usize)> = (0..d.count).map(|_| (Vec::new(), 0)).collect();
        for (&mi, &off) in d.members.iter().zip(&d.offsets) {
            let m = &members[mi];
            let view = &views[m.view];
            for (i, &e) in view.structure.sectors[m.sector].entries.iter().enumerate() {
                let slot = &mut slots[off + i];
                match e {
                    SectorEntry::Detection(det) => slot.0.push(Observation {
                        frame_id: frame_ids[m.view].clone(),
                        detection: det,
                        detection_index: view.structure.detections[det].detection_index,
                        sample: view.lifted.detections[det],
                    }),
                    SectorEntry::Hypothesis(_) => slot.1 += 1,
                }
            }
        }
        let mut ids = Vec::new();
        for (pos, (obs, hyp)) in slots.into_iter().enumerate() {
            if obs.is_empty() {
                report.discarded_positions += 1;
                continue;
            }
            let placed: Vec<Vec3> = obs.iter().filter_map(|o| o.sample.map(|s| s.position)).collect();
            if placed.is_empty() {
                report.flags.push(Flag {
                    kind: FlagKind::UnplacedModule,
                    frame_id: None,
                    detail: alloc::format!("position {pos} of a sector group has no lifted detection"),
                });
                continue;
            }
            report.confirmed_hypotheses += hyp;
            ids.push(modules.len());
            modules.push(DraftModule {
                position_in_row: pos,
                position: placed.iter().fold(Vec3::zeros(), |a, p| a + p) / placed.len() as f64,
                observations: obs,
                hypotheses: hyp,
            });
        }
        draft_modules.push(ids);
    }

    // canonical ordering: lines north to south, then west to east; sector
    // chains along each line's direction
    let mean = |idx: &mut dyn Iterator<Item = Vec3>| {
        let (s, n) = idx.fold((Vec3::zeros(), 0usize), |(s, n), p| (s + p, n + 1));
        (n > 0).then(|| s / n as f64)
    };
    let draft_centroid: Vec<Option<Vec3>> = draft_modules.iter().map(|ids| mean(&mut ids.iter().map(|&i| modules[i].position))).collect();
    let mut line_centroid: BTreeMap<usize, Vec3> = BTreeMap::new();
    for l in 0..line_rows.len() {
        let mut it = drafts
            .iter()
            .enumerate()
            .filter(|(_, d)| d.line == l)
            .flat_map(|(di, _)| draft_modules[di].iter().map(|&i| modules[i].position));
        if let Some(c) = mean(&mut it) {
            line_centroid.insert(l, c);
        }
    }
    let mut line_order: Vec<usize> = line_centroid.keys().copied().collect();
    line_order.sort_by(|a, b| {
        let (ca, cb) = (line_centroid[a], line_centroid[b]);
        (-ca.y).total_cmp(&-cb.y).then(ca.x.total_cmp(&cb.x)).then(a.cmp(b))
    });
    let line_id: BTreeMap<usize, usize> = line_order.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut draft_order: Vec<usize> = (0..drafts.len()).filter(|&d| draft_centroid[d].is_some()).collect();
    draft_order.sort_by(|&a, &b| {
        let (la, lb) = (line_id[&drafts[a].line], line_id[&drafts[b].line]);
        let ta = draft_centroid[a].unwrap().dot(&ctx.line_dir[drafts[a].line]);
        let tb = draft_centroid[b].unwrap().dot(&ctx.line_dir[drafts[b].line]);
        la.cmp(&lb).then(ta.total_cmp(&tb)).then(a.cmp(&b))
    });
    let sector_of_draft: BTreeMap<usize, usize> = draft_order.iter().enumerate().map(|(i, &d)| (d, i)).collect();

    // benches: sector groups whose image sectors sit side by side in one
    // image bench
    let mut member_draft: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &d in &draft_order {
        for &mi in &drafts[d].members {
            member_draft.insert((members[mi].view, members[mi].sector), sector_of_draft[&d]);
        }
    }
    let mut bench_uf = UnionFind::new(draft_order.len());
    for (v, view) in views.iter().enumerate() {
        let s = &view.structure;
        for bench in s.benches.iter().filter(|b| b.valid) {
            let secs: Vec<(usize, usize)> = s
                .sectors
                .iter()
                .enumerate()
                .filter(|(_, sec)| bench.rows.contains(&sec.row))
                .filter_map(|(si, _)| member_draft.get(&(v, si)).map(|&g| (si, g)))
                .collect();
            for (a, &(sa, ga)) in secs.iter().enumerate() {
                for &(sb, gb) in &secs[a + 1..] {
                    if s.sectors[sa].row == s.sectors[sb].row || bench_uf.find(ga) == bench_uf.find(gb) {
                        continue;
                    }
                    let row = &s.rows[s.sectors[sa].row];
                    let interval = |si: usize| {
                        let ps: Vec<f64> = s.sectors[si].entries.iter().map(|&e| row.parameter(&s.entry_center(e))).collect();
                        let lo = ps.iter().copied().fold(f64::INFINITY, f64::min) - 0.5 * row.d_med;
                        let hi = ps.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 0.5 * row.d_med;
                        (lo, hi)
                    };
                    let (a0, a1) = interval(sa);
                    let (b0, b1) = interval(sb);
                    let overlap = a1.min(b1) - a0.max(b0);
                    let shorter = (a1 - a0).min(b1 - b0);
                    if shorter > 0.0 && overlap > cfg.bench_overlap * shorter {
                        bench_uf.union(ga, gb);
                    }
                }
            }
        }
    }
    let bench_groups = bench_uf.groups();
    let mut bench_of_sector = alloc::vec![0usize; draft_order.len()];
    for (b, g) in bench_groups.iter().enumerate() {
        for &sid in g {
            bench_of_sector[sid] = b;
        }
    }

    let mut sector_groups = Vec::new();
    let mut out_modules = Vec::new();
    let mut used_lines: BTreeSet<usize> = BTreeSet::new();
    for (sid, &d) in draft_order.iter().enumerate() {
        let draft = &drafts[d];
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &mi in &draft.members {
            let m = &members[mi];
            let s = &views[m.view].structure;
            if let Some((_, p)) = s.row_position(s.sectors[m.sector].row) {
                *votes.entry(p).or_default() += 1;
            }
        }
        let row_index = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&p, _)| p).unwrap_or(0);
        let lid = line_id[&draft.line];
        used_lines.insert(draft.line);
        sector_groups.push(SectorGroup {
            sector_id: sid,
            line_id: lid,
            bench_id: bench_of_sector[sid],
            row_index,
            left_kg: draft.left,
            right_kg: draft.right,
            module_count: draft.count,
            members: draft
                .members
                .iter()
                .zip(&draft.offsets)
                .map(|(&mi, &off)| SectorMember {
                    frame_id: frame_ids[members[mi].view].clone(),
                    sector: members[mi].sector,
                    offset: off,
                })
                .collect(),
        });
        for &mi in &draft_modules[d] {
            let m = &modules[mi];
            out_modules.push(GlobalModule {
                global_id: out_modules.len(),
                line_id: lid,
                bench_id: bench_of_sector[sid],
                sector_id: sid,
                row_index,
                in_row_index: m.position_in_row,
                observations: m.observations.clone(),
                hypothesis_support: m.hypotheses,
            });
        }
    }

    let keypoint_groups = groups
        .iter()
        .enumerate()
        .map(|(g, members)| {
            let mut list: Vec<(String, usize)> = members.iter().map(|&i| (frame_ids[kps[i].0].clone(), kps[i].1)).collect();
            for (&(v, k), &kg) in &ctx.kg_of {
                if kg == g && views[v].structure.keypoints[k].synthetic && !members.iter().any(|&i| kps[i] == (v, k)) {
                    list.push((frame_ids[v].clone(), k));
                }
            }
            KeypointGroup {
                group_id: g,
                members: list,
                centroid: ctx.kg_centroid[g],
                row_position: kp_rowpos[members[0]],
            }
        })
        .collect();
    let mut lines: Vec<GlobalLine> = line_order
        .iter()
        .map(|&l| GlobalLine {
            line_id: line_id[&l],
            rows: line_rows[l].iter().map(|&(v, r)| (frame_ids[v].clone(), r)).collect(),
            origin: line_origin[l],
            direction: ctx.line_dir[l],
        })
        .collect();
    lines.sort_by_key(|l| l.line_id);
    Ok(GlobalStructure {
        keypoint_groups,
        lines,
        sector_groups,
        modules: out_modules,
        report,
    })
}
