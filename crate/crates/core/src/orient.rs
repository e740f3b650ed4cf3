//! North arrows, spine arrows and the bearings derived from them.
//!
//! One convention everywhere: degrees clockwise from image-up in y-down
//! pixel coordinates. Bearings subtract the north arrow's image angle, so
//! rotating a whole drawing leaves them unchanged.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{self, GeometryError, Point, RotatedRect};
use crate::math;
use crate::raster::{binarize_default, GrayRaster};

/// Width of the classifier's angle bins.
pub const NORTH_BIN_DEG: u32 = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OrientError {
    #[error("direction vector has zero length")]
    ZeroVector,
    #[error("sector width {0} does not divide 360")]
    InvalidSector(u32),
    #[error("angle classifier failed")]
    AdapterFailure,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NorthSource {
    Classifier,
    Geometric,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NorthArrow {
    pub detection_id: Option<u64>,
    /// Image angle the arrow points to, in `[0, 360)`.
    pub angle_deg: f64,
    pub bin_deg: u32,
    pub source: NorthSource,
}

impl NorthArrow {
    pub fn new(detection_id: Option<u64>, angle_deg: f64, source: NorthSource) -> Self {
        let angle_deg = math::rem_euclid(angle_deg, 360.0);
        Self {
            detection_id,
            angle_deg,
            bin_deg: nearest_bin(angle_deg),
            source,
        }
    }
}

/// Nearest multiple of 10 degrees, wrapped into `0..360`.
pub fn nearest_bin(angle_deg: f64) -> u32 {
    let b = math::round(angle_deg / NORTH_BIN_DEG as f64) as i64 * NORTH_BIN_DEG as i64;
    b.rem_euclid(360) as u32
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpineArrow {
    /// Pelvis end.
    pub start: Point,
    /// Skull end.
    pub end: Point,
}

impl SpineArrow {
    pub fn new(start: Point, end: Point) -> Result<Self, OrientError> {
        if start == end {
            return Err(OrientError::ZeroVector);
        }
        Ok(Self { start, end })
    }

    pub fn reversed(&self) -> Self {
        Self {
            start: self.end,
            end: self.start,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BearingKind {
    /// Directed, `[0, 360)`.
    Skeleton,
    /// Undirected axis, `[0, 180)`.
    GraveAxis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bearing {
    pub degrees: f64,
    pub kind: BearingKind,
}

/// Image angle of `(dx, dy)`: clockwise from image-up, in `[0, 360)`.
pub fn image_angle(dx: f64, dy: f64) -> Result<f64, OrientError> {
    if dx == 0.0 && dy == 0.0 {
        return Err(OrientError::ZeroVector);
    }
    let a = math::to_degrees(math::atan2(dx, -dy));
    let a = if a < 0.0 { a + 360.0 } else { a };
    // atan2 can return exactly pi for (0, +dy), and -0.0 + 360 rounds to 360
    Ok(if a >= 360.0 { a - 360.0 } else { a })
}

/// Compass direction the skull points to; 0 is north, 90 east.
pub fn skeleton_bearing(spine: &SpineArrow, north: &NorthArrow) -> Result<Bearing, OrientError> {
    let d = spine.end.sub(spine.start);
    let a = image_angle(d.x, d.y)?;
    Ok(Bearing {
        degrees: math::rem_euclid(a - north.angle_deg, 360.0),
        kind: BearingKind::Skeleton,
    })
}

/// Orientation of the pit's long axis relative to north, in `[0, 180)`.
pub fn grave_bearing(rect: &RotatedRect, north: &NorthArrow) -> Bearing {
    Bearing {
        degrees: math::rem_euclid(rect.angle_deg - north.angle_deg, 180.0),
        kind: BearingKind::GraveAxis,
    }
}

/// Counts bearings per `sector_deg`-wide sector starting at north.
pub fn rose_histogram(bearings: &[f64], sector_deg: u32) -> Result<Vec<usize>, OrientError> {
    if sector_deg == 0 || 360 % sector_deg != 0 {
        return Err(OrientError::InvalidSector(sector_deg));
    }
    let sectors = (360 / sector_deg) as usize;
    let mut counts = vec![0usize; sectors];
    for &b in bearings {
        let b = math::rem_euclid(b, 360.0);
        let k = (math::floor(b / sector_deg as f64) as usize).min(sectors - 1);
        counts[k] += 1;
    }
    Ok(counts)
}

/// Source of a north angle for a cropped arrow glyph.
pub trait ArrowClassifier {
    /// Returns the predicted bin in `0..36`.
    fn classify(&self, crop: &GrayRaster) -> Result<u32, OrientError>;
}

pub enum NorthStrategy<'a> {
    Classifier(&'a dyn ArrowClassifier),
    Geometric,
}

/// North angle of an arrow glyph. A failing classifier falls back to the
/// geometric estimate.
pub fn north_angle(
    crop: &GrayRaster,
    strategy: NorthStrategy<'_>,
    detection_id: Option<u64>,
) -> Result<NorthArrow, OrientError> {
    if let NorthStrategy::Classifier(cls) = strategy {
        if let Ok(bin) = cls.classify(crop) {
            if bin < 360 / NORTH_BIN_DEG {
                let deg = (bin * NORTH_BIN_DEG) as f64;
                return Ok(NorthArrow::new(detection_id, deg, NorthSource::Classifier));
            }
        }
    }
    let angle = geometric_arrow_angle(crop)?;
    let snapped = nearest_bin(angle) as f64;
    Ok(NorthArrow::new(detection_id, snapped, NorthSource::Geometric))
}

/// Unsnapped image angle of the arrow in `crop`.
///
/// The shaft is the principal axis of the ink inside the largest contour's
/// bounding box; the head is the half of that axis carrying more ink.
pub fn geometric_arrow_angle(crop: &GrayRaster) -> Result<f64, OrientError> {
    let bin = binarize_default(crop);
    let contours = geometry::trace_outer_contours(&bin);
    let largest = geometry::largest_contour(&contours)?;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &largest.points {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let mut ink = Vec::new();
    for y in y0 as i64..=y1 as i64 {
        for x in x0 as i64..=x1 as i64 {
            if bin.is_foreground(x, y) {
                ink.push(Point::new(x as f64, y as f64));
            }
        }
    }
    let n = ink.len() as f64;
    let mean = ink
        .iter()
        .fold(Point::default(), |acc, p| acc.add(*p))
        .scale(1.0 / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &ink {
        let d = p.sub(mean);
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    if sxx + syy == 0.0 {
        return Err(GeometryError::DegenerateContour.into());
    }
    let theta = 0.5 * math::atan2(2.0 * sxy, sxx - syy);
    let axis = Point::new(math::cos(theta), math::sin(theta));
    let proj: Vec<f64> = ink.iter().map(|p| p.sub(mean).dot(axis)).collect();
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mid = (lo + hi) / 2.0;
    let ahead = proj.iter().filter(|&&t| t > mid).count();
    let behind = proj.iter().filter(|&&t| t < mid).count();
    let tip = if ahead >= behind { axis } else { axis.scale(-1.0) };
    image_angle(tip.x, tip.y)
}
