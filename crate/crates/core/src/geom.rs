//! Planar geometry in image coordinates: oriented boxes, convex polygon
//! clipping, and infinite lines clipped to the image rectangle.
//!
//! Image coordinates are pixels with the origin at the top-left corner,
//! `x` to the right and `y` down.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Maps an axial angle (period π) into `(-π/2, π/2]`.
pub fn normalize_axial(angle: f64) -> f64 {
    let mut a = angle - PI * libm::floor((angle + FRAC_PI_2) / PI);
    // floor maps into [-π/2, π/2)
    if a <= -FRAC_PI_2 {
        a += PI;
    }
    a
}

/// Absolute difference between two axial angles, in `[0, π/2]`.
pub fn axial_distance(a: f64, b: f64) -> f64 {
    libm::fabs(normalize_axial(a - b))
}

/// Circular median of axial angles: the sample angle minimizing the summed
/// axial distance to all others. Ties resolve to the earliest sample.
pub fn axial_median(angles: &[f64]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &candidate in angles {
        let cost: f64 = angles.iter().map(|&a| axial_distance(a, candidate)).sum();
        match best {
            Some((c, _)) if c <= cost => {}
            _ => best = Some((cost, candidate)),
        }
    }
    best.map(|(_, a)| normalize_axial(a))
}

pub fn cross2(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Rotated rectangle in pixels. `angle` is the rotation of the width axis
/// from the image x-axis.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrientedBox {
    pub center: Vec2,
    pub width: f64,
    pub height: f64,
    pub angle: f64,
}

impl OrientedBox {
    pub fn new(center: Vec2, width: f64, height: f64, angle: f64) -> Result<Self> {
        let b = OrientedBox {
            center,
            width,
            height,
            angle: normalize_axial(angle),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::invalid(
                "oriented box",
                alloc::format!("non-positive dimensions {}x{}", self.width, self.height),
            ));
        }
        if !(self.center.x.is_finite() && self.center.y.is_finite() && self.angle.is_finite()) {
            return Err(Error::invalid("oriented box", "non-finite center or angle"));
        }
        if !(self.angle > -FRAC_PI_2 && self.angle <= FRAC_PI_2) {
            return Err(Error::invalid("oriented box", "angle outside (-pi/2, pi/2]"));
        }
        Ok(())
    }

    /// Unit vector along the width axis.
    pub fn width_axis(&self) -> Vec2 {
        Vec2::new(libm::cos(self.angle), libm::sin(self.angle))
    }

    pub fn height_axis(&self) -> Vec2 {
        Vec2::new(-libm::sin(self.angle), libm::cos(self.angle))
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn diagonal(&self) -> f64 {
        libm::hypot(self.width, self.height)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let u = self.width_axis() * (self.width * 0.5);
        let v = self.height_axis() * (self.height * 0.5);
        let c = self.center;
        [c - u - v, c + u - v, c + u + v, c - u + v]
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let corners = self.corners();
        let mut lo = corners[0];
        let mut hi = corners[0];
        for c in &corners[1..] {
            lo = lo.inf(c);
            hi = hi.sup(c);
        }
        (lo, hi)
    }

    /// Smallest rotated rectangle aligned with `first -> second` edge that
    /// summarizes a convex quadrilateral given in order.
    pub fn from_quad(q: &[Vec2; 4]) -> Result<Self> {
        let along = ((q[1] - q[0]) + (q[2] - q[3])) * 0.5;
        let width = along.norm();
        if width <= 0.0 {
            return Err(Error::Degenerate("quad with zero width"));
        }
        let height = polygon_area(q).abs() / width;
        let center = (q[0] + q[1] + q[2] + q[3]) * 0.25;
        OrientedBox::new(center, width, height, libm::atan2(along.y, along.x))
    }
}

/// Signed shoelace area; positive for counter-clockwise order in a y-up frame.
pub fn polygon_area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = &poly[i];
        let b = &poly[(i + 1) % poly.len()];
        acc += cross2(a, b);
    }
    acc * 0.5
}

/// Clips `subject` against the convex polygon `clip` (Sutherland–Hodgman).
/// Both polygons may be given in either winding order.
pub fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut clip_poly: Vec<Vec2> = clip.to_vec();
    if polygon_area(&clip_poly) < 0.0 {
        clip_poly.reverse();
    }
    let mut output: Vec<Vec2> = subject.to_vec();
    for i in 0..clip_poly.len() {
        if output.is_empty() {
            break;
        }
        let a = clip_poly[i];
        let b = clip_poly[(i + 1) % clip_poly.len()];
        let edge = b - a;
        let inside = |p: &Vec2| cross2(&edge, &(p - a)) >= 0.0;
        let input = core::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = inside(&cur);
            let prev_in = inside(&prev);
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(&prev, &cur, &a, &edge));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(&prev, &cur, &a, &edge));
            }
        }
    }
    output
}

fn segment_line_intersection(p: &Vec2, q: &Vec2, a: &Vec2, edge: &Vec2) -> Vec2 {
    let d = q - p;
    let denom = cross2(edge, &d);
    if denom == 0.0 {
        return *q;
    }
    let t = cross2(edge, &(a - p)) / denom;
    p + d * t
}

/// Area of the intersection of two oriented boxes.
pub fn intersection_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    if alo.x > bhi.x || blo.x > ahi.x || alo.y > bhi.y || blo.y > ahi.y {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.corners(), &b.corners())).abs()
}

/// Intersection area divided by the smaller box area.
pub fn overlap_ratio(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let smaller = a.area().min(b.area());
    if smaller <= 0.0 {
        return 0.0;
    }
    intersection_area(a, b) / smaller
}

/// Infinite 2D line through `point` with unit `direction`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line2 {
    pub point: Vec2,
    pub direction: Vec2,
}

impl Line2 {
    pub fn new(point: Vec2, direction: Vec2) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate("zero line direction"));
        }
        Ok(Line2 {
            point,
            direction: direction / n,
        })
    }

    /// Perpendicular distance from `p` to the infinite line.
    pub fn distance(&self, p: &Vec2) -> f64 {
        libm::fabs(cross2(&self.direction, &(p - self.point)))
    }

    pub fn parameter(&self, p: &Vec2) -> f64 {
        self.direction.dot(&(p - self.point))
    }

    pub fn at(&self, t: f64) -> Vec2 {
        self.point + self.direction * t
    }

    /// The two points where the line crosses the border of
    /// `[0, width] x [0, height]`, ordered by line parameter.
    pub fn clip_to_rect(&self, width: f64, height: f64) -> Result<(Vec2, Vec2)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let bounds = [(self.point.x, self.direction.x, width), (self.point.y, self.direction.y, height)];
        for (p, d, hi) in bounds {
            if d == 0.0 {
                if p < 0.0 || p > hi {
                    return Err(Error::LineOutsideImage { width, height });
                }
                continue;
            }
            let a = (0.0 - p) / d;
            let b = (hi - p) / d;
            let (lo, up) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(lo);
            t1 = t1.min(up);
        }
        if !(t1 > t0) {
            return Err(Error::LineOutsideImage { width, height });
        }
        Ok((self.at(t0), self.at(t1)))
    }
}

/// Orients a direction so that it points towards +x (ties: +y).
pub fn canonical_direction2(d: Vec2) -> Vec2 {
    if d.x < 0.0 || (d.x == 0.0 && d.y < 0.0) {
        -d
    } else {
        d
    }
}

pub fn canonical_direction3(d: Vec3) -> Vec3 {
    if d.x < 0.0 || (d.x == 0.0 && d.y < 0.0) || (d.x == 0.0 && d.y == 0.0 && d.z < 0.0) {
        -d
    } else {
        d
    }
}

/// Total-least-squares line through 2D points: centroid and principal
/// direction of the scatter.
pub fn fit_line_tls(points: &[Vec2]) -> Option<Line2> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec2::zeros(), |acc, p| acc + p) / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - centroid;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    if sxx + syy <= 0.0 {
        return None;
    }
    // principal axis angle of the 2x2 covariance
    let theta = 0.5 * libm::atan2(2.0 * sxy, sxx - syy);
    let dir = canonical_direction2(Vec2::new(libm::cos(theta), libm::sin(theta)));
    Some(Line2 {
        point: centroid,
        direction: dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn aabb(cx: f64, cy: f64, w: f64, h: f64) -> OrientedBox {
        OrientedBox::new(Vec2::new(cx, cy), w, h, 0.0).unwrap()
    }

    #[test]
    fn axial_normalization_range() {
        assert_abs_diff_eq!(normalize_axial(PI), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_axial(-FRAC_PI_2), FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_axial(FRAC_PI_2), FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_axial(0.75 * PI), -0.25 * PI, epsilon = 1e-12);
    }

    #[test]
    fn axial_median_wraps_around() {
        let m = axial_median(&[FRAC_PI_2 - 0.01, -FRAC_PI_2 + 0.02, FRAC_PI_2 - 0.03]).unwrap();
        assert!(axial_distance(m, FRAC_PI_2 - 0.01) < 1e-12);
    }

    #[test]
    fn identical_boxes_overlap_fully() {
        let a = aabb(0.0, 0.0, 10.0, 10.0);
        assert_abs_diff_eq!(overlap_ratio(&a, &a), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn offset_boxes_overlap_by_strip() {
        let a = aabb(0.0, 0.0, 10.0, 10.0);
        let b = aabb(9.0, 0.0, 10.0, 10.0);
        assert_abs_diff_eq!(intersection_area(&a, &b), 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(overlap_ratio(&a, &b), 0.10, epsilon = 1e-12);
    }

    #[test]
    fn rotated_square_inside_larger_square() {
        let big = aabb(0.0, 0.0, 100.0, 100.0);
        let small = OrientedBox::new(Vec2::zeros(), 10.0, 10.0, 0.3).unwrap();
        assert_abs_diff_eq!(intersection_area(&big, &small), 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(overlap_ratio(&big, &small), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn diamond_against_square_matches_analytic_area() {
        // square [-1,1]^2 against the same square rotated 45 degrees:
        // intersection is a regular octagon of area 8(sqrt2 - 1)
        let a = aabb(0.0, 0.0, 2.0, 2.0);
        let b = OrientedBox::new(Vec2::zeros(), 2.0, 2.0, core::f64::consts::FRAC_PI_4).unwrap();
        assert_abs_diff_eq!(intersection_area(&a, &b), 8.0 * (libm::sqrt(2.0) - 1.0), epsilon = 1e-9);
    }

    #[test]
    fn box_rejects_bad_dimensions() {
        assert!(OrientedBox::new(Vec2::zeros(), -1.0, 1.0, 0.0).is_err());
        assert!(OrientedBox::new(Vec2::zeros(), 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn quad_round_trip() {
        let b = OrientedBox::new(Vec2::new(50.0, 40.0), 30.0, 12.0, 0.2).unwrap();
        let q = b.corners();
        let back = OrientedBox::from_quad(&q).unwrap();
        assert_abs_diff_eq!(back.center, b.center, epsilon = 1e-9);
        assert_abs_diff_eq!(back.width, b.width, epsilon = 1e-9);
        assert_abs_diff_eq!(back.height, b.height, epsilon = 1e-9);
        assert_abs_diff_eq!(back.angle, b.angle, epsilon = 1e-12);
    }

    #[test]
    fn clip_line_on_image_border() {
        let l = Line2::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)).unwrap();
        let (a, b) = l.clip_to_rect(100.0, 100.0).unwrap();
        assert_eq!(a, Vec2::new(0.0, 0.0));
        assert_eq!(b, Vec2::new(100.0, 0.0));
        let outside = Line2::new(Vec2::new(0.0, 150.0), Vec2::new(1.0, 0.0)).unwrap();
        assert!(outside.clip_to_rect(100.0, 100.0).is_err());
    }

    #[test]
    fn tls_recovers_direction() {
        let pts: Vec<Vec2> = (0..10).map(|i| Vec2::new(i as f64, 2.0 * i as f64 + 1.0)).collect();
        let l = fit_line_tls(&pts).unwrap();
        let expect = Vec2::new(1.0, 2.0).normalize();
        assert_abs_diff_eq!(l.direction, expect, epsilon = 1e-12);
    }
}
