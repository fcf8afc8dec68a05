//! Derived exports: GeoJSON footprints, statistics CSV and SVG overlays.

use std::fmt::Write as _;

use serde_json::{json, Value};

use pvmap_core::camera::{CameraFrame, GeoOrigin};
use pvmap_core::evaluate::{spacing_stats, EvalReport};
use pvmap_core::geom::{OrientedBox, Vec3};
use pvmap_core::optimize::PlantModel;
use pvmap_core::stats::FivePointStats;
use pvmap_core::structure::{GapKind, ImageStructure, SectorEntry};

/// WGS84 equatorial radius used by the equirectangular projection.
const EARTH_RADIUS: f64 = 6_378_137.0;

/// ENU meters to `[lon, lat, alt]` about the origin.
pub fn enu_to_geodetic(p: &Vec3, o: &GeoOrigin) -> [f64; 3] {
    let lat = o.lat + (p.y / EARTH_RADIUS).to_degrees();
    let lon = o.lon + (p.x / (EARTH_RADIUS * o.lat.to_radians().cos())).to_degrees();
    [lon, lat, o.alt + p.z]
}

/// Module footprints as polygons. The model carries no module dimensions,
/// so every footprint is the pitch cell: the median in-row spacing along
/// the bench axis by the median row spacing across it.
pub fn geojson(model: &PlantModel) -> Value {
    let spacing = spacing_stats(model);
    let along = spacing.row.map_or(1.0, |s| s.median);
    let across = spacing.column.map_or(along, |s| s.median);
    let features: Vec<Value> = model
        .modules
        .iter()
        .map(|m| {
            let axis = model
                .benches
                .iter()
                .find(|b| b.bench_id == m.bench_id)
                .map_or(Vec3::x(), |b| b.d_bench);
            let side = m.normal.cross(&axis);
            let side = if side.norm() > 1e-9 { side.normalize() } else { Vec3::y() };
            let u = axis * (along / 2.0);
            let v = side * (across / 2.0);
            let c = m.position;
            let ring: Vec<[f64; 3]> = [c - u - v, c + u - v, c + u + v, c - u + v, c - u - v]
                .iter()
                .map(|p| enu_to_geodetic(p, &model.geo_origin))
                .collect();
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "global_id": m.global_id,
                    "line_id": m.line_id,
                    "bench_id": m.bench_id,
                    "sector_id": m.sector_id,
                    "row_index": m.row_index,
                    "in_row_index": m.in_row_index,
                    "n_detections": m.n_detections,
                },
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// One row per statistic: five-point rows fill `min..max`, scalar rows
/// fill `value`.
pub fn stats_csv(report: &EvalReport) -> String {
    let mut s = String::from("statistic,min,q1,median,q3,max,value\n");
    let mut five = |name: &str, st: &Option<FivePointStats>| match st {
        Some(f) => {
            let _ = writeln!(s, "{name},{:?},{:?},{:?},{:?},{:?},", f.min, f.q1, f.median, f.q3, f.max);
        }
        None => {
            let _ = writeln!(s, "{name},,,,,,");
        }
    };
    for (axis, st) in ["x", "y", "z"].iter().zip(&report.consistency) {
        five(&format!("consistency_{axis}"), st);
    }
    five("spacing_row", &report.spacing.row);
    five("spacing_column", &report.spacing.column);
    if report.reference.is_some() {
        five("reference_deviation", &report.reference);
    }
    if let Some(t) = &report.truth {
        for (name, v) in [("truth_total", t.total), ("truth_mapped", t.mapped), ("truth_spurious", t.spurious)] {
            let _ = writeln!(s, "{name},,,,,,{v}");
        }
        for (name, v) in [("truth_recall", t.recall), ("truth_tuple_accuracy", t.tuple_accuracy), ("truth_rmse", t.rmse)] {
            let _ = writeln!(s, "{name},,,,,,{v:?}");
        }
    }
    s
}

/// Per-row module CSV of the model, handy for spreadsheets.
pub fn model_csv(model: &PlantModel) -> String {
    let mut s = String::from("global_id,line_id,bench_id,sector_id,row_index,in_row_index,x,y,z,nx,ny,nz,n_detections\n");
    for m in &model.modules {
        let (p, n) = (m.position, m.normal);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            m.global_id, m.line_id, m.bench_id, m.sector_id, m.row_index, m.in_row_index, p.x, p.y, p.z, n.x, n.y, n.z, m.n_detections
        );
    }
    s
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22"];

fn polygon(s: &mut String, b: &OrientedBox, attrs: &str) {
    let pts: Vec<String> = b.corners().iter().map(|c| format!("{:.2},{:.2}", c.x, c.y)).collect();
    let _ = writeln!(s, r#"<polygon points="{}" {attrs}/>"#, pts.join(" "));
}

/// Image-space rendering of one frame's structure: detections colored by
/// sector, hypotheses dashed, row lines, gap keypoints (bench gaps red,
/// rejected candidates gray, synthetic ones hollow) and, with a model, the
/// global id of every module projected into the frame.
pub fn overlay_svg(frame: &CameraFrame, s: &ImageStructure, model: Option<&PlantModel>) -> String {
    let (w, h) = (frame.width, frame.height);
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r##"<title>{}</title>"##, frame.frame_id);
    let _ = writeln!(out, r##"<rect width="{w}" height="{h}" fill="#f4f4f0"/>"##);
    let mut sector_of = vec![None; s.detections.len()];
    for (k, sec) in s.sectors.iter().enumerate() {
        for e in &sec.entries {
            if let SectorEntry::Detection(i) = e {
                sector_of[*i] = Some(k);
            }
        }
    }
    for (i, d) in s.detections.iter().enumerate() {
        let color = sector_of[i].map_or("#999999", |k| PALETTE[k % PALETTE.len()]);
        polygon(&mut out, &d.bbox, &format!(r#"fill="{color}" fill-opacity="0.35" stroke="{color}" stroke-width="1""#));
    }
    if let Some(rep) = &s.rep_box {
        for hyp in &s.hypothesized {
            let b = OrientedBox { center: hyp.center, ..*rep };
            polygon(&mut out, &b, r##"fill="none" stroke="#d62728" stroke-width="1.5" stroke-dasharray="4 3""##);
        }
    }
    for row in &s.rows {
        if let Ok((a, b)) = row.line().clip_to_rect(w as f64, h as f64) {
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#444444" stroke-width="0.8"/>"##,
                a.x, a.y, b.x, b.y
            );
        }
    }
    for k in &s.keypoints {
        let color = match k.kind {
            GapKind::BenchGap => "#d62728",
            GapKind::Rejected => "#7f7f7f",
        };
        let fill = if k.synthetic { "none" } else { color };
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{fill}" stroke="{color}" stroke-width="2"/>"#,
            k.midpoint.x, k.midpoint.y
        );
    }
    if let Some(model) = model {
        for m in &model.modules {
            if let Some(p) = frame.project(&m.position) {
                if p.x >= 0.0 && p.y >= 0.0 && p.x <= w as f64 && p.y <= h as f64 {
                    let _ = writeln!(
                        out,
                        r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="middle" fill="black">{}</text>"#,
                        p.x, p.y, m.global_id
                    );
                }
            }
        }
    }
    out.push_str("</svg>\n");
    out
}
