use alloc::vec::Vec;

use super::{Contour, GeometryError, Point};
use crate::math;

/// Rectangle of minimal area enclosing a point set.
///
/// `angle_deg` is the direction of the long side, clockwise from image-up,
/// reduced to `[0, 180)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RotatedRect {
    pub center: Point,
    pub width_px: f64,
    pub length_px: f64,
    pub angle_deg: f64,
}

impl RotatedRect {
    pub fn area(&self) -> f64 {
        self.width_px * self.length_px
    }

    /// Unit vector along the long side.
    pub fn length_axis(&self) -> Point {
        Point::new(0.0, -1.0).rotated_cw(self.angle_deg)
    }

    pub fn corners(&self) -> [Point; 4] {
        let u = self.length_axis().scale(self.length_px / 2.0);
        let v = Point::new(-u.y, u.x).scale(self.width_px / self.length_px.max(f64::MIN_POSITIVE));
        let c = self.center;
        [
            c.add(u).add(v),
            c.add(u).sub(v),
            c.sub(u).sub(v),
            c.sub(u).add(v),
        ]
    }
}

/// Convex hull by monotone chain, clockwise on screen, without collinear points.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Point, a: Point, b: Point| a.sub(o).cross(b.sub(o));
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() + 1);
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Image angle of an undirected axis, in `[0, 180)`.
fn axis_angle(d: Point) -> f64 {
    math::rem_euclid(math::to_degrees(math::atan2(d.x, -d.y)), 180.0)
}

/// Minimum-area enclosing rectangle of the contour points.
///
/// One side of the optimal rectangle is collinear with a hull edge, so each
/// hull edge is tried as a caliper direction.
pub fn min_area_rect(contour: &Contour) -> Result<RotatedRect, GeometryError> {
    min_area_rect_of_points(&contour.points)
}

pub fn min_area_rect_of_points(points: &[Point]) -> Result<RotatedRect, GeometryError> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(GeometryError::DegenerateContour);
    }
    let n = hull.len();
    // (area, long side, axis, umin, umax, vmin, vmax)
    let mut best: Option<(f64, f64, Point, f64, f64, f64, f64)> = None;
    for i in 0..n {
        let edge = hull[(i + 1) % n].sub(hull[i]);
        let len = edge.norm();
        if len == 0.0 {
            continue;
        }
        let u = edge.scale(1.0 / len);
        let v = Point::new(-u.y, u.x);
        let (mut umin, mut umax, mut vmin, mut vmax) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let pu = p.dot(u);
            let pv = p.dot(v);
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let area = (umax - umin) * (vmax - vmin);
        let long = (umax - umin).max(vmax - vmin);
        // equal areas (every side of a triangle, say) go to the longer rect,
        // which does not depend on how the input is rotated
        let better = best.as_ref().is_none_or(|b| {
            area < b.0 * (1.0 - 1e-9) || (area <= b.0 * (1.0 + 1e-9) && long > b.1 * (1.0 + 1e-9))
        });
        if better {
            best = Some((area, long, u, umin, umax, vmin, vmax));
        }
    }
    let (_, _, u, umin, umax, vmin, vmax) = best.ok_or(GeometryError::DegenerateContour)?;
    let v = Point::new(-u.y, u.x);
    let su = umax - umin;
    let sv = vmax - vmin;
    if su <= 0.0 || sv <= 0.0 {
        return Err(GeometryError::DegenerateContour);
    }
    let center = u
        .scale((umin + umax) / 2.0)
        .add(v.scale((vmin + vmax) / 2.0));
    let (au, av) = (axis_angle(u), axis_angle(v));
    let angle_deg = if math::abs(su - sv) <= 1e-9 * su.max(sv) {
        au.min(av)
    } else if su > sv {
        au
    } else {
        av
    };
    Ok(RotatedRect {
        center,
        width_px: su.min(sv),
        length_px: su.max(sv),
        angle_deg,
    })
}
