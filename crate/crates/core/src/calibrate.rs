//! Pixel-to-centimetre calibration from scale bars or a fixed drawing ratio.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::geometry::{self, GeometryError, Point};
use crate::raster::{binarize_default, GrayRaster};

/// When the largest scale-bar component spans less than this share of the
/// total ink extent, the bar is treated as a row of disjoint ticks.
pub const SEGMENTED_BAR_COVERAGE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConversionSource {
    ScaleBar,
    FixedRatio,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Conversion {
    pub px_per_cm: f64,
    pub source: ConversionSource,
}

impl Conversion {
    pub fn to_cm(&self, px: f64) -> f64 {
        px / self.px_per_cm
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScaleBar {
    pub detection_id: u64,
    pub pixel_length: f64,
    pub label_text: String,
    pub real_length_cm: f64,
    pub px_per_cm: f64,
}

impl ScaleBar {
    pub fn new(
        detection_id: u64,
        pixel_length: f64,
        label_text: impl Into<String>,
        real_length_cm: f64,
    ) -> Result<Self, CalibrationError> {
        let conv = make_conversion(ConversionInput::ScaleBar {
            pixel_length,
            real_length_cm,
        })?;
        Ok(Self {
            detection_id,
            pixel_length,
            label_text: label_text.into(),
            real_length_cm,
            px_per_cm: conv.px_per_cm,
        })
    }

    pub fn conversion(&self) -> Conversion {
        Conversion {
            px_per_cm: self.px_per_cm,
            source: ConversionSource::ScaleBar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("calibration inputs must be positive and finite")]
    NonPositiveInput,
    #[error("cannot read scale label {0:?}")]
    UnparseableLabel(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// What a scale label says.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScaleLabel {
    /// The bar's real length.
    LengthCm(f64),
    /// A drawing ratio `1:n`.
    Ratio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConversionInput {
    ScaleBar {
        pixel_length: f64,
        real_length_cm: f64,
    },
    FixedRatio {
        page_height_px: f64,
        page_height_cm: f64,
        ratio: f64,
    },
    Manual {
        px_per_cm: f64,
    },
}

fn positive(v: f64) -> Result<f64, CalibrationError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CalibrationError::NonPositiveInput)
    }
}

pub fn make_conversion(input: ConversionInput) -> Result<Conversion, CalibrationError> {
    let (px_per_cm, source) = match input {
        ConversionInput::ScaleBar {
            pixel_length,
            real_length_cm,
        } => (
            positive(pixel_length)? / positive(real_length_cm)?,
            ConversionSource::ScaleBar,
        ),
        ConversionInput::FixedRatio {
            page_height_px,
            page_height_cm,
            ratio,
        } => (
            positive(page_height_px)? / (positive(page_height_cm)? * positive(ratio)?),
            ConversionSource::FixedRatio,
        ),
        ConversionInput::Manual { px_per_cm } => (positive(px_per_cm)?, ConversionSource::Manual),
    };
    Ok(Conversion {
        px_per_cm: positive(px_per_cm)?,
        source,
    })
}

/// Length in pixels of the scale bar drawn in `crop`.
///
/// Uses the long side of the minimum-area rectangle of the largest outer
/// contour. Bars made of disjoint ticks fall back to the extent of all ink
/// along that rectangle's axis.
pub fn measure_scale_pixels(crop: &GrayRaster) -> Result<f64, CalibrationError> {
    let contours = geometry::trace_outer_contours(&binarize_default(crop));
    let largest = geometry::largest_contour(&contours)?;
    let all: Vec<Point> = contours.iter().flat_map(|c| c.points.iter().copied()).collect();

    let (axis, own_len) = match geometry::min_area_rect(largest) {
        Ok(r) => (r.length_axis(), r.length_px),
        // a one-pixel-thick bar traces to a line: measure it directly
        Err(_) => match line_axis(&largest.points) {
            Some(axis) => (axis, extent(&largest.points, axis)),
            None => return Err(GeometryError::DegenerateContour.into()),
        },
    };
    let total = extent(&all, axis);
    if own_len < SEGMENTED_BAR_COVERAGE * total {
        Ok(total)
    } else {
        Ok(own_len)
    }
}

fn line_axis(points: &[Point]) -> Option<Point> {
    let (a, b) = points.iter().flat_map(|a| points.iter().map(move |b| (*a, *b))).max_by(
        |x, y| x.0.distance(x.1).total_cmp(&y.0.distance(y.1)),
    )?;
    let d = b.sub(a);
    let n = d.norm();
    (n > 0.0).then(|| d.scale(1.0 / n))
}

fn extent(points: &[Point], axis: Point) -> f64 {
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let t = p.dot(axis);
        (lo.min(t), hi.max(t))
    });
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// Parses scale-bar text such as `50 cm`, `0,5 m`, `0–1 m` or `1:20`.
pub fn parse_scale_label(text: &str) -> Result<ScaleLabel, CalibrationError> {
    let err = || CalibrationError::UnparseableLabel(text.to_string());
    let norm: String = text.trim().to_lowercase();
    if norm.is_empty() {
        return Err(err());
    }

    if let Some((lhs, rhs)) = norm.split_once(':') {
        let one = parse_number(lhs.trim()).ok_or_else(err)?;
        let n = parse_number(rhs.trim()).ok_or_else(err)?;
        if one != 1.0 || n <= 0.0 {
            return Err(err());
        }
        return Ok(ScaleLabel::Ratio(n));
    }

    let split = norm
        .find(|c: char| c.is_ascii_alphabetic())
        .ok_or_else(err)?;
    let (quantity, unit) = norm.split_at(split);
    let factor = match unit.trim() {
        "mm" => 0.1,
        "cm" => 1.0,
        "m" => 100.0,
        _ => return Err(err()),
    };
    let quantity = quantity.trim();
    let span = match quantity.split_once(['-', '\u{2013}', '\u{2014}', '\u{2212}']) {
        Some((a, b)) => {
            let a = parse_number(a.trim()).ok_or_else(err)?;
            let b = parse_number(b.trim()).ok_or_else(err)?;
            b - a
        }
        None => parse_number(quantity).ok_or_else(err)?,
    };
    if !(span.is_finite() && span > 0.0) {
        return Err(err());
    }
    Ok(ScaleLabel::LengthCm(span * factor))
}

/// Unsigned decimal with an optional `.` or `,` separator.
fn parse_number(s: &str) -> Option<f64> {
    if s.is_empty() {
        return None;
    }
    let mut int_part: f64 = 0.0;
    let mut frac_part: f64 = 0.0;
    let mut frac_scale: f64 = 1.0;
    let mut seen_sep = false;
    let mut digits = 0;
    for ch in s.chars() {
        match ch {
            '0'..='9' => {
                let d = (ch as u8 - b'0') as f64;
                if seen_sep {
                    frac_scale /= 10.0;
                    frac_part += d * frac_scale;
                } else {
                    int_part = int_part * 10.0 + d;
                }
                digits += 1;
            }
            '.' | ',' if !seen_sep => seen_sep = true,
            _ => return None,
        }
    }
    (digits > 0).then_some(int_part + frac_part)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(text: &str) -> f64 {
        match parse_scale_label(text).unwrap() {
            ScaleLabel::LengthCm(v) => v,
            other => panic!("expected length, got {other:?}"),
        }
    }

    #[test]
    fn units_are_converted_to_cm() {
        assert_eq!(cm("50 cm"), 50.0);
        assert_eq!(cm("1 m"), 100.0);
        assert_eq!(cm("500 mm"), 50.0);
        assert_eq!(cm("20cm"), 20.0);
        assert_eq!(cm(" 2 M "), 200.0);
    }

    #[test]
    fn decimal_comma_matches_point() {
        assert_eq!(cm("0,5 m"), 50.0);
        assert_eq!(cm("0,5 m"), cm("0.5 m"));
    }

    #[test]
    fn ranges_take_the_span() {
        assert_eq!(cm("0–1 m"), 100.0);
        assert_eq!(cm("0 - 50 cm"), 50.0);
        assert_eq!(cm("0—2 m"), 200.0);
    }

    #[test]
    fn ratio_labels() {
        assert_eq!(parse_scale_label("1:20"), Ok(ScaleLabel::Ratio(20.0)));
        assert_eq!(parse_scale_label("1 : 50"), Ok(ScaleLabel::Ratio(50.0)));
        assert!(parse_scale_label("2:20").is_err());
    }

    #[test]
    fn garbage_keeps_the_raw_text() {
        for t in ["", "abc", "50 km", "1,2,3 m", "5 - cm", "1 - 0 m", "0 cm"] {
            assert_eq!(
                parse_scale_label(t),
                Err(CalibrationError::UnparseableLabel(t.to_string())),
                "{t:?}"
            );
        }
    }

    #[test]
    fn conversions() {
        let bar = |px, cm| {
            make_conversion(ConversionInput::ScaleBar {
                pixel_length: px,
                real_length_cm: cm,
            })
            .unwrap()
            .px_per_cm
        };
        assert_eq!(bar(100.0, 100.0), 1.0);
        assert_eq!(bar(200.0, 50.0), 4.0);
        let fixed = make_conversion(ConversionInput::FixedRatio {
            page_height_px: 2970.0,
            page_height_cm: 29.7,
            ratio: 20.0,
        })
        .unwrap();
        assert!((fixed.px_per_cm - 5.0).abs() < 1e-12);
        assert_eq!(fixed.source, ConversionSource::FixedRatio);
        assert_eq!(
            make_conversion(ConversionInput::Manual { px_per_cm: 0.0 }),
            Err(CalibrationError::NonPositiveInput)
        );
        assert_eq!(
            make_conversion(ConversionInput::ScaleBar {
                pixel_length: -1.0,
                real_length_cm: 3.0
            }),
            Err(CalibrationError::NonPositiveInput)
        );
    }

    #[test]
    fn end_to_end_units() {
        let sb = ScaleBar::new(7, 200.0, "50 cm", cm("50 cm")).unwrap();
        assert_eq!(sb.px_per_cm, 4.0);
        assert_eq!(sb.conversion().to_cm(120.0), 30.0);
    }

    fn bar_raster(w: u32, h: u32, ink: impl Fn(u32, u32) -> bool) -> GrayRaster {
        let mut r = GrayRaster::filled(w, h, 255);
        for y in 0..h {
            for x in 0..w {
                if ink(x, y) {
                    r.set(x, y, 0);
                }
            }
        }
        r
    }

    #[test]
    fn solid_bar_length() {
        let r = bar_raster(220, 20, |x, y| (10..210).contains(&x) && (6..14).contains(&y));
        let len = measure_scale_pixels(&r).unwrap();
        assert!((len - 200.0).abs() <= 1.0, "{len}");
        let r = bar_raster(20, 220, |x, y| (10..210).contains(&y) && (6..14).contains(&x));
        let len = measure_scale_pixels(&r).unwrap();
        assert!((len - 200.0).abs() <= 1.0, "{len}");
    }

    #[test]
    fn segmented_bar_uses_total_extent() {
        // ticks at [0,30], [60,90], ..., [240,270] plus a closing tick at 300
        let r = bar_raster(320, 20, |x, y| {
            let x = x as i64 - 10;
            (6..14).contains(&y) && (0..=300).contains(&x) && (x % 60 <= 30 || x == 300)
        });
        let len = measure_scale_pixels(&r).unwrap();
        assert!((len - 300.0).abs() <= 2.0, "{len}");
    }

    #[test]
    fn thin_line_bar() {
        let r = bar_raster(120, 5, |x, y| y == 2 && (10..110).contains(&x));
        assert_eq!(measure_scale_pixels(&r).unwrap(), 99.0);
    }

    #[test]
    fn blank_crop_has_no_contours() {
        assert_eq!(
            measure_scale_pixels(&GrayRaster::filled(50, 10, 255)),
            Err(CalibrationError::Geometry(GeometryError::NoContours))
        );
    }
}
