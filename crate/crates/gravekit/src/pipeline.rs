//! Automated measurement of one grave tree on its page raster.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use gravekit_core::calibrate::{self, CalibrationError, ConversionInput};
use gravekit_core::detect::filter_by_confidence;
use gravekit_core::geometry::{self, GeometryError};
use gravekit_core::morpho::{normalize_outline, Outline};
use gravekit_core::orient::{self, ArrowClassifier, NorthStrategy};
use gravekit_core::raster::binarize_default;
use gravekit_core::{
    assemble_graves, BBox, ClassLabel, Contour, Conversion, Detection, GraveTree, GrayRaster,
    NorthArrow, NorthSource, Point, RotatedRect, ScaleBar, ScaleLabel, SpineArrow,
};
use serde::{Deserialize, Serialize};

use crate::adapters::LabelReader;
use crate::ingest::{ScaleConfig, ScaleMode};

#[derive(Clone, Default)]
pub struct Adapters {
    pub ocr: Option<Arc<dyn LabelReader>>,
    pub classifier: Option<Arc<dyn ArrowClassifier + Send + Sync>>,
}

impl std::fmt::Debug for Adapters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Adapters")
            .field("ocr", &self.ocr.is_some())
            .field("classifier", &self.classifier.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Pose {
    #[default]
    Unknown,
    Supine,
    FlexedOnSide,
}

impl Pose {
    pub fn as_str(self) -> &'static str {
        match self {
            Pose::Unknown => "unknown",
            Pose::Supine => "supine",
            Pose::FlexedOnSide => "flexed_on_side",
        }
    }

    pub fn parse(s: &str) -> Option<Pose> {
        match s {
            "unknown" => Some(Pose::Unknown),
            "supine" => Some(Pose::Supine),
            "flexed_on_side" => Some(Pose::FlexedOnSide),
            _ => None,
        }
    }
}

/// Human input collected by the validation steps. Everything derived is
/// recomputed from the page plus these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Edits {
    pub moved: BTreeMap<u64, BBox>,
    pub added: Vec<Detection>,
    pub removed: BTreeSet<u64>,
    pub spines: BTreeMap<u64, SpineArrow>,
    pub poses: BTreeMap<u64, Pose>,
    pub manual_box: bool,
    pub depth_box: Option<BBox>,
    pub scale_text: Option<String>,
    pub scale_detection_id: Option<u64>,
    pub px_per_cm: Option<f64>,
    pub fixed_ratio: Option<f64>,
    pub page_height_cm: Option<f64>,
    pub north_angle_deg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Measurements {
    pub width_cm: Option<f64>,
    pub length_cm: Option<f64>,
    pub depth_cm: Option<f64>,
    pub grave_bearing_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonEntry {
    pub detection_id: u64,
    pub pose: Pose,
    pub bearing_deg: Option<f64>,
}

/// Everything the pipeline derives for one grave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub tree: GraveTree,
    pub measurements: Measurements,
    pub skeletons: Vec<SkeletonEntry>,
    pub outline: Option<Outline>,
    /// Grave contour in page pixels, for overlays.
    pub contour_px: Option<Vec<Point>>,
    pub grave_rect: Option<RotatedRect>,
    pub manual_box: bool,
    pub conversion: Option<Conversion>,
    pub scale_bar: Option<ScaleBar>,
    pub north: Option<NorthArrow>,
    pub flags: Vec<String>,
    pub field_errors: BTreeMap<String, String>,
}

pub struct PageContext<'a> {
    pub raster: &'a GrayRaster,
    /// All detections stored for the page, before the confidence cut.
    pub detections: &'a [Detection],
    pub scale: ScaleConfig,
    pub confidence_threshold: f64,
    pub adapters: &'a Adapters,
}

pub const FLAG_NO_CONTOUR: &str = "grave_contour_missing";
pub const FLAG_NO_SCALE: &str = "no_scale";
pub const FLAG_BAD_LABEL: &str = "scale_label_unparseable";
pub const FLAG_SCALE_IN_ARTEFACT: &str = "scale_inside_artefact";
pub const FLAG_NO_NORTH: &str = "no_north_arrow";
pub const FLAG_MISSING_SPINE: &str = "missing_spine";

/// Page detections after the confidence cut and a record's box edits.
pub fn effective_detections(ctx: &PageContext<'_>, edits: &Edits) -> Vec<Detection> {
    let mut dets = filter_by_confidence(ctx.detections, ctx.confidence_threshold);
    dets.retain(|d| !edits.removed.contains(&d.id));
    for d in &mut dets {
        if let Some(b) = edits.moved.get(&d.id) {
            d.bbox = *b;
        }
    }
    for d in &edits.added {
        if !edits.removed.contains(&d.id) {
            let mut d = d.clone();
            if let Some(b) = edits.moved.get(&d.id) {
                d.bbox = *b;
            }
            dets.push(d);
        }
    }
    dets
}

/// Tree for `grave` built from the edited page detections.
pub fn rebuild_tree(grave: &Detection, ctx: &PageContext<'_>, edits: &Edits) -> GraveTree {
    let mut dets = effective_detections(ctx, edits);
    if !dets.iter().any(|d| d.id == grave.id) {
        let mut g = grave.clone();
        if let Some(b) = edits.moved.get(&g.id) {
            g.bbox = *b;
        }
        dets.push(g);
    }
    let mut tree = assemble_graves(&dets)
        .into_iter()
        .find(|t| t.grave.id == grave.id)
        .expect("the grave is part of its own page");
    if let Some(id) = edits.scale_detection_id {
        if let Some(s) = dets.iter().find(|d| d.id == id && d.label == ClassLabel::Scale) {
            tree.scale = Some(s.clone());
        }
    }
    tree
}

fn crop_contour(raster: &GrayRaster, bbox: &BBox) -> Result<Contour, GeometryError> {
    let (crop, (x0, y0)) = raster.crop(bbox).ok_or(GeometryError::NoContours)?;
    let contours = geometry::trace_outer_contours(&binarize_default(&crop));
    let c = geometry::largest_contour(&contours)?;
    Ok(c.translated(x0 as f64, y0 as f64))
}

fn bbox_rect(b: &BBox) -> RotatedRect {
    let (cx, cy) = b.center();
    let (w, h) = (b.width(), b.height());
    RotatedRect {
        center: Point::new(cx, cy),
        width_px: w.min(h),
        length_px: w.max(h),
        angle_deg: if h >= w { 0.0 } else { 90.0 },
    }
}

/// Side of the rectangle closer to the image vertical.
pub fn vertical_extent(rect: &RotatedRect) -> f64 {
    let a = rect.angle_deg.rem_euclid(180.0);
    if a <= 45.0 || a >= 135.0 {
        rect.length_px
    } else {
        rect.width_px
    }
}

fn conversion(
    tree: &GraveTree,
    ctx: &PageContext<'_>,
    edits: &Edits,
    flags: &mut Vec<String>,
    errors: &mut BTreeMap<String, String>,
) -> (Option<Conversion>, Option<ScaleBar>) {
    let page_h = ctx.raster.height() as f64;
    let page_height_cm = edits.page_height_cm.or(ctx.scale.page_height_cm);
    let fixed = |ratio: f64, cm: Option<f64>| -> Result<Conversion, CalibrationError> {
        calibrate::make_conversion(ConversionInput::FixedRatio {
            page_height_px: page_h,
            page_height_cm: cm.ok_or(CalibrationError::NonPositiveInput)?,
            ratio,
        })
    };
    let done = |r: Result<Conversion, CalibrationError>, errors: &mut BTreeMap<_, _>| match r {
        Ok(c) => Some(c),
        Err(e) => {
            errors.insert("conversion".to_string(), e.to_string());
            None
        }
    };
    if let Some(ppc) = edits.px_per_cm {
        let c = calibrate::make_conversion(ConversionInput::Manual { px_per_cm: ppc });
        return (done(c, errors), None);
    }
    if let Some(ratio) = edits.fixed_ratio {
        return (done(fixed(ratio, page_height_cm), errors), None);
    }
    if ctx.scale.scale_mode == ScaleMode::FixedRatio {
        let ratio = ctx.scale.fixed_ratio.unwrap_or(0.0);
        return (done(fixed(ratio, page_height_cm), errors), None);
    }

    let Some(scale) = &tree.scale else {
        flags.push(FLAG_NO_SCALE.to_string());
        return (None, None);
    };
    if tree
        .grave
        .page_id
        .eq(&scale.page_id)
        .then(|| {
            let (cx, cy) = scale.bbox.center();
            ctx.detections
                .iter()
                .any(|d| d.label.is_artefact() && d.bbox.contains_point(cx, cy))
        })
        .unwrap_or(false)
    {
        flags.push(FLAG_SCALE_IN_ARTEFACT.to_string());
    }
    let crop = ctx.raster.crop(&scale.bbox);
    let text = edits
        .scale_text
        .clone()
        .or_else(|| scale.text.clone())
        .or_else(|| {
            let ocr = ctx.adapters.ocr.as_ref()?;
            ocr.read(&crop.as_ref()?.0)
        });
    let Some(text) = text else {
        flags.push(FLAG_BAD_LABEL.to_string());
        errors.insert("scale_label".into(), "no label text".into());
        return (None, None);
    };
    let label = match calibrate::parse_scale_label(&text) {
        Ok(l) => l,
        Err(e) => {
            flags.push(FLAG_BAD_LABEL.to_string());
            errors.insert("scale_label".into(), e.to_string());
            return (None, None);
        }
    };
    match label {
        ScaleLabel::Ratio(r) => (done(fixed(r, page_height_cm), errors), None),
        ScaleLabel::LengthCm(cm) => {
            let px = match crop {
                Some((c, _)) => calibrate::measure_scale_pixels(&c),
                None => Err(GeometryError::NoContours.into()),
            };
            match px.and_then(|px| ScaleBar::new(scale.id, px, text.clone(), cm)) {
                Ok(bar) => (Some(bar.conversion()), Some(bar)),
                Err(e) => {
                    errors.insert("scale_bar".into(), e.to_string());
                    (None, None)
                }
            }
        }
    }
}

fn north(tree: &GraveTree, ctx: &PageContext<'_>, edits: &Edits, errors: &mut BTreeMap<String, String>) -> Option<NorthArrow> {
    let det_id = tree.north_arrow.as_ref().map(|d| d.id);
    if let Some(a) = edits.north_angle_deg {
        return Some(NorthArrow::new(det_id, a, NorthSource::Manual));
    }
    let arrow = tree.north_arrow.as_ref()?;
    let Some((crop, _)) = ctx.raster.crop(&arrow.bbox) else {
        errors.insert("north".into(), "arrow box outside page".into());
        return None;
    };
    let strategy = match &ctx.adapters.classifier {
        Some(c) => NorthStrategy::Classifier(c.as_ref()),
        None => NorthStrategy::Geometric,
    };
    match orient::north_angle(&crop, strategy, Some(arrow.id)) {
        Ok(n) => Some(n),
        Err(e) => {
            errors.insert("north".into(), e.to_string());
            None
        }
    }
}

/// Runs the measurement pipeline for the grave `grave` under `edits`.
pub fn analyze(grave: &Detection, ctx: &PageContext<'_>, edits: &Edits) -> Derived {
    let tree = rebuild_tree(grave, ctx, edits);
    let mut flags = Vec::new();
    let mut errors = BTreeMap::new();

    let (conversion, scale_bar) = conversion(&tree, ctx, edits, &mut flags, &mut errors);

    let (rect, contour) = if edits.manual_box {
        (Some(bbox_rect(&tree.grave.bbox)), None)
    } else {
        match crop_contour(ctx.raster, &tree.grave.bbox)
            .and_then(|c| geometry::min_area_rect(&c).map(|r| (r, c)))
        {
            Ok((r, c)) => (Some(r), Some(c)),
            Err(e) => {
                flags.push(FLAG_NO_CONTOUR.to_string());
                errors.insert("contour".into(), e.to_string());
                (None, None)
            }
        }
    };

    let depth_px = match (&edits.depth_box, &tree.cross_section) {
        (Some(b), _) => Some(b.height()),
        (None, Some(cs)) => match crop_contour(ctx.raster, &cs.bbox).and_then(|c| geometry::min_area_rect(&c)) {
            Ok(r) => Some(vertical_extent(&r)),
            Err(e) => {
                errors.insert("depth".into(), e.to_string());
                None
            }
        },
        (None, None) => None,
    };

    let north = north(&tree, ctx, edits, &mut errors);
    if tree.north_arrow.is_none() && north.is_none() {
        flags.push(FLAG_NO_NORTH.to_string());
    }

    let cm = |px: f64| conversion.map(|c| c.to_cm(px));
    let measurements = Measurements {
        width_cm: rect.and_then(|r| cm(r.width_px)),
        length_cm: rect.and_then(|r| cm(r.length_px)),
        depth_cm: depth_px.and_then(cm),
        grave_bearing_deg: rect
            .zip(north)
            .map(|(r, n)| orient::grave_bearing(&r, &n).degrees),
    };

    let mut missing_spine = false;
    let skeletons = tree
        .skeletons
        .iter()
        .map(|s| {
            let spine = edits.spines.get(&s.id);
            missing_spine |= spine.is_none();
            SkeletonEntry {
                detection_id: s.id,
                pose: edits.poses.get(&s.id).copied().unwrap_or_default(),
                bearing_deg: spine
                    .zip(north.as_ref())
                    .and_then(|(sp, n)| orient::skeleton_bearing(sp, n).ok())
                    .map(|b| b.degrees),
            }
        })
        .collect();
    if missing_spine {
        flags.push(FLAG_MISSING_SPINE.to_string());
    }

    let outline = match (&contour, rect, conversion) {
        (Some(c), Some(r), Some(conv)) => match normalize_outline(c, &conv, &r) {
            Ok(o) => Some(o),
            Err(e) => {
                errors.insert("outline".into(), e.to_string());
                None
            }
        },
        _ => None,
    };

    Derived {
        tree,
        measurements,
        skeletons,
        outline,
        contour_px: contour.map(|c| c.points),
        grave_rect: rect,
        manual_box: edits.manual_box,
        conversion,
        scale_bar,
        north,
        flags,
        field_errors: errors,
    }
}
