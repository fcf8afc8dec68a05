//! Evaluation: internal consistency, spacing statistics, comparison with a
//! reference model and scoring against simulator ground truth.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::optimize::{ModulePose, PlantModel};
use crate::simulate::StructuralTuple;
use crate::stats::FivePointStats;

pub type AxisStats = [Option<FivePointStats>; 3];

fn axis_stats(diffs: &[Vec3]) -> AxisStats {
    let axis = |k: usize| FivePointStats::from_samples(&diffs.iter().map(|d| d[k]).collect::<Vec<_>>());
    [axis(0), axis(1), axis(2)]
}

/// Signed per-axis differences (optimized − raw) over all modules.
pub fn internal_consistency(raw: &[ModulePose], optimized: &[ModulePose]) -> Result<AxisStats> {
    let before: BTreeMap<usize, &ModulePose> = raw.iter().map(|m| (m.global_id, m)).collect();
    if before.len() != optimized.len() {
        return Err(Error::invalid("pose sets", "raw and optimized poses cover different modules"));
    }
    let mut diffs = Vec::with_capacity(optimized.len());
    for m in optimized {
        let r = before
            .get(&m.global_id)
            .ok_or_else(|| Error::invalid("pose sets", alloc::format!("module {} has no raw pose", m.global_id)))?;
        diffs.push(m.position - r.position);
    }
    Ok(axis_stats(&diffs))
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpacingStats {
    /// Distances between in-row neighbors of a sector.
    pub row: Option<FivePointStats>,
    /// Distances between modules with equal in-row index in adjacent rows
    /// of a bench.
    pub column: Option<FivePointStats>,
}

pub fn spacing_stats(model: &PlantModel) -> SpacingStats {
    let mut by_sector: BTreeMap<usize, BTreeMap<usize, Vec3>> = BTreeMap::new();
    let mut by_bench: BTreeMap<(usize, usize, usize), Vec3> = BTreeMap::new();
    for m in &model.modules {
        by_sector.entry(m.sector_id).or_default().insert(m.in_row_index, m.position);
        by_bench.insert((m.bench_id, m.row_index, m.in_row_index), m.position);
    }
    let mut row = Vec::new();
    for slots in by_sector.values() {
        for (i, p) in slots {
            if let Some(q) = slots.get(&(i + 1)) {
                row.push((q - p).norm());
            }
        }
    }
    let mut column = Vec::new();
    for (&(b, r, i), p) in &by_bench {
        if let Some(q) = by_bench.get(&(b, r + 1, i)) {
            column.push((q - p).norm());
        }
    }
    SpacingStats {
        row: FivePointStats::from_samples(&row),
        column: FivePointStats::from_samples(&column),
    }
}

pub fn tuple_of(m: &ModulePose) -> StructuralTuple {
    StructuralTuple {
        line_id: m.line_id,
        bench_id: m.bench_id,
        sector_id: m.sector_id,
        row_index: m.row_index,
        in_row_index: m.in_row_index,
    }
}

/// Least-squares rigid transform (R, t) with `R * src + t ≈ dst`.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<(Mat3, Vec3)> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::invalid("alignment", "needs at least three point pairs"));
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let scale = src.iter().map(|s| (s - cs).norm_squared()).sum::<f64>().max(1e-300);
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if sv[1] <= 1e-12 * scale {
        return Err(Error::Degenerate("alignment anchors are collinear"));
    }
    let (u, vt) = (svd.u.ok_or(Error::Degenerate("svd failed"))?, svd.v_t.ok_or(Error::Degenerate("svd failed"))?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let r = v * fix * u.transpose();
    Ok((r, cd - r * cs))
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReferenceComparison {
    pub rotation: Mat3,
    pub translation: Vec3,
    /// (model global id, distance to the paired reference module).
    pub deviations: Vec<(usize, f64)>,
    /// Model modules without a reference module of the same tuple.
    pub unmatched: Vec<usize>,
    pub stats: Option<FivePointStats>,
}

/// Aligns the model to the reference with the anchor modules, pairs all
/// modules by structural tuple and summarizes the distances.
pub fn compare_to_reference(model: &PlantModel, reference: &PlantModel, anchors: &[usize]) -> Result<ReferenceComparison> {
    let refs: BTreeMap<StructuralTuple, Vec3> = reference.modules.iter().map(|m| (tuple_of(m), m.position)).collect();
    let by_id: BTreeMap<usize, &ModulePose> = model.modules.iter().map(|m| (m.global_id, m)).collect();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for a in anchors {
        let m = by_id
            .get(a)
            .ok_or_else(|| Error::invalid("anchor", alloc::format!("module {a} is not in the model")))?;
        let r = refs
            .get(&tuple_of(m))
            .ok_or_else(|| Error::invalid("anchor", alloc::format!("module {a} has no reference counterpart")))?;
        src.push(m.position);
        dst.push(*r);
    }
    let (rotation, translation) = kabsch(&src, &dst)?;
    let mut deviations = Vec::new();
    let mut unmatched = Vec::new();
    for m in &model.modules {
        match refs.get(&tuple_of(m)) {
            Some(r) => deviations.push((m.global_id, (rotation * m.position + translation - r).norm())),
            None => unmatched.push(m.global_id),
        }
    }
    if !unmatched.is_empty() {
        log::warn!("{} model modules have no reference counterpart", unmatched.len());
    }
    let stats = FivePointStats::from_samples(&deviations.iter().map(|d| d.1).collect::<Vec<_>>());
    Ok(ReferenceComparison {
        rotation,
        translation,
        deviations,
        unmatched,
        stats,
    })
}

/// Minimum-cost assignment of rows to columns (Hungarian method). Returns
/// the column of every row; the matrix must have at most as many rows as
/// columns.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    let inf = f64::INFINITY;
    let mut u = alloc::vec![0.0; n + 1];
    let mut v = alloc::vec![0.0; m + 1];
    let mut p = alloc::vec![0usize; m + 1];
    let mut way = alloc::vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = alloc::vec![inf; m + 1];
        let mut used = alloc::vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = alloc::vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Bijection between two label sets maximizing the number of agreeing
/// pairs. Labels left without a partner map to `None`.
pub fn best_relabeling(pairs: &[(usize, usize)]) -> BTreeMap<usize, Option<usize>> {
    let a: Vec<usize> = pairs.iter().map(|p| p.0).collect::<BTreeSet<_>>().into_iter().collect();
    let b: Vec<usize> = pairs.iter().map(|p| p.1).collect::<BTreeSet<_>>().into_iter().collect();
    let ai: BTreeMap<usize, usize> = a.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let bi: BTreeMap<usize, usize> = b.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let size = a.len().max(b.len());
    let mut counts = alloc::vec![alloc::vec![0.0; size]; size];
    for (x, y) in pairs {
        counts[ai[x]][bi[y]] -= 1.0;
    }
    let assign = hungarian(&counts);
    a.iter()
        .enumerate()
        .map(|(i, &x)| {
            let j = assign[i];
            (x, (j < b.len() && counts[i][j] < 0.0).then(|| b[j]))
        })
        .collect()
}

/// Ground truth of a simulated scene.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruthTable {
    pub modules: Vec<TruthRecord>,
    /// Ground-truth module of every detection record, per frame.
    pub detections: BTreeMap<String, Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruthRecord {
    pub id: usize,
    pub position: Vec3,
    pub tuple: StructuralTuple,
}

impl TruthTable {
    pub fn from_scene(scene: &crate::simulate::Scene) -> Self {
        TruthTable {
            modules: scene
                .plant
                .modules
                .iter()
                .map(|m| TruthRecord {
                    id: m.id,
                    position: m.position,
                    tuple: m.tuple,
                })
                .collect(),
            detections: scene
                .frames
                .iter()
                .zip(&scene.detections)
                .map(|(f, d)| (f.frame_id.clone(), d.truth.clone()))
                .collect(),
        }
    }
}

/// Model-to-truth correspondence from detection provenance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruthMapping {
    /// (index into the model's module list, truth module id).
    pub pairs: Vec<(usize, usize)>,
    /// Model modules duplicating an already mapped truth module or without
    /// any traceable observation.
    pub spurious: Vec<usize>,
}

/// Maps each model module to the truth module most of its observations
/// came from. When several model modules claim one truth module, the one
/// with the most votes keeps it.
pub fn map_to_truth(modules: &[ModulePose], truth: &TruthTable) -> TruthMapping {
    let mut claims: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    let mut out = TruthMapping::default();
    for (mi, m) in modules.iter().enumerate() {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for (f, d) in &m.observations {
            if let Some(&t) = truth.detections.get(f).and_then(|v| v.get(*d)) {
                *votes.entry(t).or_default() += 1;
            }
        }
        match votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
            Some((&t, &n)) => claims.entry(t).or_default().push((n, mi)),
            None => out.spurious.push(mi),
        }
    }
    for (t, mut c) in claims {
        c.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        out.pairs.push((c[0].1, t));
        out.spurious.extend(c[1..].iter().map(|x| x.1));
    }
    out.pairs.sort_unstable();
    out.spurious.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruthScores {
    pub total: usize,
    pub mapped: usize,
    pub spurious: usize,
    pub recall: f64,
    /// Fraction of mapped modules whose tuple is correct once line, bench
    /// and sector ids are relabeled by the best bijections.
    pub tuple_accuracy: f64,
    pub rmse: f64,
    /// Truth modules absent from the model.
    pub missed: Vec<usize>,
}

pub fn score_against_truth(model: &PlantModel, truth: &TruthTable) -> TruthScores {
    let mapping = map_to_truth(&model.modules, truth);
    let tmods: BTreeMap<usize, &TruthRecord> = truth.modules.iter().map(|t| (t.id, t)).collect();
    let pairs: Vec<(&ModulePose, &TruthRecord)> = mapping
        .pairs
        .iter()
        .filter_map(|&(mi, t)| Some((&model.modules[mi], *tmods.get(&t)?)))
        .collect();
    let relabel = |f: &dyn Fn(&StructuralTuple) -> usize| {
        best_relabeling(&pairs.iter().map(|(m, t)| (f(&tuple_of(m)), f(&t.tuple))).collect::<Vec<_>>())
    };
    let lines = relabel(&|t| t.line_id);
    let benches = relabel(&|t| t.bench_id);
    let sectors = relabel(&|t| t.sector_id);
    let correct = pairs
        .iter()
        .filter(|(m, t)| {
            lines[&m.line_id] == Some(t.tuple.line_id)
                && benches[&m.bench_id] == Some(t.tuple.bench_id)
                && sectors[&m.sector_id] == Some(t.tuple.sector_id)
                && m.row_index == t.tuple.row_index
                && m.in_row_index == t.tuple.in_row_index
        })
        .count();
    let sq: f64 = pairs.iter().map(|(m, t)| (m.position - t.position).norm_squared()).sum();
    let mapped_ids: BTreeSet<usize> = pairs.iter().map(|(_, t)| t.id).collect();
    let total = truth.modules.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    TruthScores {
        total,
        mapped: pairs.len(),
        spurious: mapping.spurious.len(),
        recall: ratio(pairs.len(), total),
        tuple_accuracy: ratio(correct, pairs.len()),
        rmse: if pairs.is_empty() { 0.0 } else { libm::sqrt(sq / pairs.len() as f64) },
        missed: truth.modules.iter().map(|t| t.id).filter(|id| !mapped_ids.contains(id)).collect(),
    }
}

/// Differences between the model's sectors and the true ones: every model
/// sector must hold exactly the modules of one true sector. Empty when the
/// partitions agree.
pub fn sector_mismatches(model: &PlantModel, truth: &TruthTable) -> Vec<String> {
    let mapping = map_to_truth(&model.modules, truth);
    let tsector: BTreeMap<usize, usize> = truth.modules.iter().map(|t| (t.id, t.tuple.sector_id)).collect();
    let mut model_to_truth: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut truth_to_model: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(mi, t) in &mapping.pairs {
        let (ms, ts) = (model.modules[mi].sector_id, tsector[&t]);
        model_to_truth.entry(ms).or_default().insert(ts);
        truth_to_model.entry(ts).or_default().insert(ms);
    }
    let mut out = Vec::new();
    for (ms, ts) in &model_to_truth {
        if ts.len() > 1 {
            out.push(alloc::format!("model sector {ms} spans true sectors {ts:?}"));
        }
    }
    for (ts, ms) in &truth_to_model {
        if ms.len() > 1 {
            out.push(alloc::format!("true sector {ts} split over model sectors {ms:?}"));
        }
    }
    let covered: BTreeSet<usize> = mapping.pairs.iter().map(|p| p.1).collect();
    for t in truth.modules.iter().filter(|t| !covered.contains(&t.id)) {
        out.push(alloc::format!("module {} of true sector {} is missing", t.id, t.tuple.sector_id));
    }
    if !mapping.spurious.is_empty() {
        out.push(alloc::format!("{} spurious modules", mapping.spurious.len()));
    }
    out
}

/// Per-axis absolute errors of the poses against their truth modules.
pub fn truth_errors(modules: &[ModulePose], truth: &TruthTable) -> [Vec<f64>; 3] {
    let mapping = map_to_truth(modules, truth);
    let tmods: BTreeMap<usize, &TruthRecord> = truth.modules.iter().map(|t| (t.id, t)).collect();
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for (mi, t) in mapping.pairs {
        if let Some(t) = tmods.get(&t) {
            let d = modules[mi].position - t.position;
            for k in 0..3 {
                out[k].push(d[k].abs());
            }
        }
    }
    out
}

/// Everything reported about one run.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub consistency: AxisStats,
    pub spacing: SpacingStats,
    pub reference: Option<FivePointStats>,
    pub truth: Option<TruthScores>,
}

pub fn evaluate(
    raw: &[ModulePose],
    model: &PlantModel,
    reference: Option<(&PlantModel, &[usize])>,
    truth: Option<&TruthTable>,
) -> Result<EvalReport> {
    Ok(EvalReport {
        consistency: internal_consistency(raw, &model.modules)?,
        spacing: spacing_stats(model),
        reference: match reference {
            Some((r, anchors)) => compare_to_reference(model, r, anchors)?.stats,
            None => None,
        },
        truth: truth.map(|t| score_against_truth(model, t)),
    })
}
