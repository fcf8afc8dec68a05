use std::fmt::Write as _;
use std::path::Path;

use pvmap_core::cloud::{PointCloud, SurfacePoint};
use pvmap_core::geom::Vec3;

use crate::error::{CliError, CliResult};

/// Parses `x y z nx ny nz r g b` lines. Blank lines and `#` comments are
/// skipped. Normals off unit length by at most 1 % are renormalized.
pub fn parse_point_cloud(text: &str, path: &Path) -> CliResult<PointCloud> {
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| CliError::input(path, format!("line {}: {reason}", ln + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", fields.len())));
        }
        let mut v = [0.0f64; 6];
        for (k, f) in fields[..6].iter().enumerate() {
            v[k] = f.parse().map_err(|_| err(format!("field {} `{f}` is not a number", k + 1)))?;
            if !v[k].is_finite() {
                return Err(err(format!("point {}: non-finite field {}", points.len(), k + 1)));
            }
        }
        let mut color = [0u8; 3];
        for (k, f) in fields[6..].iter().enumerate() {
            color[k] = f.parse().map_err(|_| err(format!("color `{f}` is not in 0..=255")))?;
        }
        let mut normal = Vec3::new(v[3], v[4], v[5]);
        let n = normal.norm();
        if !(0.99..=1.01).contains(&n) {
            return Err(err(format!("point {}: normal magnitude {n}", points.len())));
        }
        if (n - 1.0).abs() > 1e-6 {
            normal /= n;
        }
        points.push(SurfacePoint {
            position: Vec3::new(v[0], v[1], v[2]),
            normal,
            color,
        });
    }
    if points.is_empty() {
        return Err(CliError::input(path, "point cloud is empty"));
    }
    PointCloud::new(points).map_err(|e| CliError::input(path, e.to_string()))
}

pub fn load_point_cloud(path: &Path) -> CliResult<PointCloud> {
    parse_point_cloud(&super::read_text(path)?, path)
}

/// Shortest round-trip decimal text per coordinate.
pub fn point_cloud_text(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 96);
    for p in cloud.points() {
        let (a, n, c) = (p.position, p.normal, p.color);
        let _ = writeln!(s, "{} {} {} {} {} {} {} {} {}", a.x, a.y, a.z, n.x, n.y, n.z, c[0], c[1], c[2]);
    }
    s
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> CliResult<()> {
    super::write_bytes(path, point_cloud_text(cloud).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> CliResult<PointCloud> {
        parse_point_cloud(s, Path::new("cloud.txt"))
    }

    #[test]
    fn single_point() {
        let c = parse("0 0 0 0 0 1 128 128 128\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.points()[0].normal, Vec3::z());
        assert_eq!(c.points()[0].color, [128; 3]);
    }

    #[test]
    fn short_normal_is_rejected() {
        assert!(parse("0 0 0 0 0 0.5 1 2 3").is_err());
    }

    #[test]
    fn nearly_unit_normal_is_renormalized() {
        let c = parse("0 0 0 0 0 1.005 1 2 3").unwrap();
        assert_eq!(c.points()[0].normal, Vec3::z());
    }

    #[test]
    fn empty_and_nan_are_rejected() {
        assert!(parse("# nothing\n\n").is_err());
        let e = parse("0 0 0 0 0 1 1 2 3\nNaN 0 0 0 0 1 1 2 3").unwrap_err().to_string();
        assert!(e.contains("point 1"), "{e}");
    }

    #[test]
    fn text_round_trip_is_exact() {
        let pts = vec![SurfacePoint {
            position: Vec3::new(0.1 + 0.2, -1.0 / 3.0, 1e-17),
            normal: Vec3::new(1.0, 2.0, 3.0).normalize(),
            color: [0, 127, 255],
        }];
        let c = PointCloud::new(pts).unwrap();
        assert_eq!(parse(&point_cloud_text(&c)).unwrap(), c);
    }
}
