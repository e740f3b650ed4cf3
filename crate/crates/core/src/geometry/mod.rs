//! Contours, polygon metrics and the minimum-area enclosing rectangle.
//!
//! Contour points sit on pixel centres of border pixels, so a filled `w x h`
//! block traces to a polygon with area `(w - 1) * (h - 1)`.

mod rect;
mod trace;

use alloc::vec::Vec;

use crate::math;

pub use rect::{convex_hull, min_area_rect, min_area_rect_of_points, RotatedRect};
pub use trace::{trace_outer_contours, trace_outer_contours_with, ChainApprox};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        math::hypot(self.x, self.y)
    }

    pub fn distance(self, o: Point) -> f64 {
        self.sub(o).norm()
    }

    /// Rotates about the origin by `deg` degrees, clockwise as seen on screen
    /// (y axis pointing down).
    pub fn rotated_cw(self, deg: f64) -> Point {
        let (s, c) = (math::sin(math::to_radians(deg)), math::cos(math::to_radians(deg)));
        Point::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }
}

/// Winding direction as seen on screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Orientation {
    Cw,
    Ccw,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("contour needs at least 3 non-collinear points")]
    DegenerateContour,
    #[error("no contours to choose from")]
    NoContours,
}

/// Closed polyline; the last point connects back to the first.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Contour {
    pub points: Vec<Point>,
    pub orientation: Orientation,
}

impl Contour {
    /// Builds a contour, dropping consecutive duplicates and deriving the
    /// orientation from the signed area.
    pub fn from_points(mut points: Vec<Point>) -> Self {
        points.dedup();
        while points.len() > 1 && points.first() == points.last() {
            points.pop();
        }
        let orientation = if signed_area(&points) >= 0.0 {
            Orientation::Cw
        } else {
            Orientation::Ccw
        };
        Self {
            points,
            orientation,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Contour {
        Contour {
            points: self
                .points
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
            orientation: self.orientation,
        }
    }
}

/// Shoelace sum; positive for clockwise-on-screen polygons.
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// Length of the closed polyline through `points`.
pub fn closed_length(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    (0..n).map(|i| points[i].distance(points[(i + 1) % n])).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolygonMetrics {
    pub area_px2: f64,
    pub arc_length_px: f64,
}

pub fn polygon_metrics(contour: &Contour) -> Result<PolygonMetrics, GeometryError> {
    if contour.points.len() < 3 {
        return Err(GeometryError::DegenerateContour);
    }
    Ok(PolygonMetrics {
        area_px2: math::abs(signed_area(&contour.points)),
        arc_length_px: closed_length(&contour.points),
    })
}

/// Contour with the longest closed perimeter; ties go to the larger area,
/// then to the earlier contour.
pub fn largest_contour(contours: &[Contour]) -> Result<&Contour, GeometryError> {
    let mut best: Option<(&Contour, f64, f64)> = None;
    for c in contours {
        let len = closed_length(&c.points);
        let area = math::abs(signed_area(&c.points));
        let better = match best {
            None => true,
            Some((_, bl, ba)) => len > bl || (len == bl && area > ba),
        };
        if better {
            best = Some((c, len, area));
        }
    }
    best.map(|(c, _, _)| c).ok_or(GeometryError::NoContours)
}
