use alloc::string::String;
use alloc::vec::Vec;

use crate::calibrate::Conversion;
use crate::geometry::{closed_length, min_area_rect_of_points, Contour, GeometryError, Point, RotatedRect};

/// Number of uniformly spaced points every outline is resampled to.
pub const OUTLINE_POINTS: usize = 256;

/// Grave outline in centimetres: centroid at the origin, long axis vertical.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Outline {
    pub points: Vec<Point>,
    pub source_record_id: Option<String>,
}

impl Outline {
    pub fn centroid(&self) -> Point {
        mean(&self.points)
    }
}

fn mean(points: &[Point]) -> Point {
    points
        .iter()
        .fold(Point::default(), |acc, p| acc.add(*p))
        .scale(1.0 / points.len() as f64)
}

/// Scales the pixel contour to centimetres, turns the grave's long axis to
/// image-up, resamples to [`OUTLINE_POINTS`] points at equal arc-length
/// spacing and moves the point centroid to the origin.
pub fn normalize_outline(
    contour: &Contour,
    conversion: &Conversion,
    rect: &RotatedRect,
) -> Result<Outline, GeometryError> {
    if contour.points.len() < 3 || !(conversion.px_per_cm > 0.0) {
        return Err(GeometryError::DegenerateContour);
    }
    let inv = 1.0 / conversion.px_per_cm;
    let pivot = rect.center;
    let turned: Vec<Point> = contour
        .points
        .iter()
        .map(|p| p.sub(pivot).rotated_cw(-rect.angle_deg).scale(inv))
        .collect();
    let mut points = resample_closed(&turned, OUTLINE_POINTS)?;
    let c = mean(&points);
    for p in &mut points {
        *p = p.sub(c);
    }
    // resampling can cut hull corners and tilt the rect, or even make a
    // different rect the smallest; turn so the outline's own long axis is vertical
    if let Ok(r) = min_area_rect_of_points(&points) {
        let residual = if r.angle_deg > 90.0 { r.angle_deg - 180.0 } else { r.angle_deg };
        if residual != 0.0 {
            for p in &mut points {
                *p = p.rotated_cw(-residual);
            }
        }
    }
    Ok(Outline {
        points,
        source_record_id: None,
    })
}

/// `n` points spaced evenly by arc length along the closed polyline,
/// starting at its first vertex.
pub fn resample_closed(points: &[Point], n: usize) -> Result<Vec<Point>, GeometryError> {
    let total = closed_length(points);
    if points.len() < 2 || n == 0 || !(total > 0.0) {
        return Err(GeometryError::DegenerateContour);
    }
    let k = points.len();
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    let mut seg_len = points[0].distance(points[1 % k]);
    for i in 0..n {
        let target = i as f64 * step;
        while seg_start + seg_len < target && seg < k - 1 {
            seg_start += seg_len;
            seg += 1;
            seg_len = points[seg].distance(points[(seg + 1) % k]);
        }
        let a = points[seg];
        let b = points[(seg + 1) % k];
        let t = if seg_len > 0.0 {
            ((target - seg_start) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(a.add(b.sub(a).scale(t)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::ConversionSource;
    use crate::geometry::{min_area_rect, min_area_rect_of_points};
    use alloc::vec;

    fn conv(px_per_cm: f64) -> Conversion {
        Conversion {
            px_per_cm,
            source: ConversionSource::ScaleBar,
        }
    }

    fn rect_contour(w: f64, l: f64, angle: f64, c: Point) -> Contour {
        Contour::from_points(
            [(-w / 2., -l / 2.), (w / 2., -l / 2.), (w / 2., l / 2.), (-w / 2., l / 2.)]
                .iter()
                .map(|&(x, y)| Point::new(x, y).rotated_cw(angle).add(c))
                .collect(),
        )
    }

    fn axis_error(angle: f64) -> f64 {
        let a = angle.rem_euclid(180.0);
        a.min(180.0 - a)
    }

    #[test]
    fn square_is_scaled_and_centred() {
        let c = rect_contour(100.0, 100.0, 0.0, Point::new(300.0, 200.0));
        let r = min_area_rect(&c).unwrap();
        let o = normalize_outline(&c, &conv(2.0), &r).unwrap();
        assert_eq!(o.points.len(), OUTLINE_POINTS);
        let c0 = o.centroid();
        assert!(c0.x.abs() < 1e-9 && c0.y.abs() < 1e-9);
        let rr = min_area_rect_of_points(&o.points).unwrap();
        assert!((rr.width_px - 50.0).abs() < 1e-6 && (rr.length_px - 50.0).abs() < 1e-6);
    }

    #[test]
    fn rotated_rectangle_is_turned_upright() {
        let c = rect_contour(30.0, 80.0, 37.0, Point::new(500.0, 500.0));
        let r = min_area_rect(&c).unwrap();
        let o = normalize_outline(&c, &conv(1.0), &r).unwrap();
        let rr = min_area_rect_of_points(&o.points).unwrap();
        assert!(axis_error(rr.angle_deg) < 0.5, "{}", rr.angle_deg);
        assert!((rr.width_px - 30.0).abs() < 1e-6);
        assert!((rr.length_px - 80.0).abs() < 1e-6);
    }

    #[test]
    fn resampling_keeps_arc_length() {
        let pts: Vec<Point> = (0..37)
            .map(|i| {
                let t = i as f64 / 37.0 * core::f64::consts::TAU;
                let r = 40.0 + 9.0 * libm::sin(3.0 * t);
                Point::new(r * libm::cos(t), r * libm::sin(t))
            })
            .collect();
        let res = resample_closed(&pts, OUTLINE_POINTS).unwrap();
        let before = closed_length(&pts);
        let after = closed_length(&res);
        assert!((before - after).abs() / before < 0.002);
    }

    #[test]
    fn degenerate_inputs() {
        let c = Contour::from_points(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]);
        let r = RotatedRect {
            center: Point::default(),
            width_px: 1.0,
            length_px: 1.0,
            angle_deg: 0.0,
        };
        assert_eq!(
            normalize_outline(&c, &conv(1.0), &r),
            Err(GeometryError::DegenerateContour)
        );
    }
}
