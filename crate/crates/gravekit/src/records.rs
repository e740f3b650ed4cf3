//! Grave records and the payload-carrying side of the validation workflow.

use std::collections::BTreeSet;
use std::str::FromStr;

use gravekit_core::workflow::{plan_transition, Action, IllegalTransition, NORTH_STEP};
use gravekit_core::{
    BBox, ClassLabel, Conversion, Detection, GraveTree, NorthArrow, Origin, Point, RotatedRect,
    ScaleBar, SpineArrow, ValidationStatus,
};
use gravekit_core::morpho::Outline;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::pipeline::{analyze, Derived, Edits, Measurements, PageContext, Pose, SkeletonEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditEntry {
    pub ts_ms: u64,
    /// Workflow step the entry belongs to, if any.
    pub step: Option<u8>,
    pub action: String,
    pub change: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraveRecord {
    pub record_id: String,
    pub publication_grave_id: Option<String>,
    pub document_id: String,
    pub page_id: String,
    pub page_index: u32,
    pub status: ValidationStatus,
    pub tree: GraveTree,
    pub measurements: Measurements,
    pub skeletons: Vec<SkeletonEntry>,
    pub outline: Option<Outline>,
    pub contour_px: Option<Vec<Point>>,
    pub grave_rect: Option<RotatedRect>,
    pub manual_box: bool,
    pub conversion: Option<Conversion>,
    pub scale_bar: Option<ScaleBar>,
    pub north: Option<NorthArrow>,
    pub flags: Vec<String>,
    pub field_errors: std::collections::BTreeMap<String, String>,
    pub edits: Edits,
    pub edit_log: Vec<EditEntry>,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("grave id {0:?} is already used in this document")]
    DuplicateGraveId(String),
    #[error("invalid payload: {0}")]
    Payload(String),
}

fn payload_err(msg: impl Into<String>) -> RecordError {
    RecordError::Payload(msg.into())
}

impl GraveRecord {
    pub fn derived(&self) -> Derived {
        Derived {
            tree: self.tree.clone(),
            measurements: self.measurements,
            skeletons: self.skeletons.clone(),
            outline: self.outline.clone(),
            contour_px: self.contour_px.clone(),
            grave_rect: self.grave_rect,
            manual_box: self.manual_box,
            conversion: self.conversion,
            scale_bar: self.scale_bar.clone(),
            north: self.north,
            flags: self.flags.clone(),
            field_errors: self.field_errors.clone(),
        }
    }

    fn set_derived(&mut self, d: Derived) {
        self.tree = d.tree;
        self.measurements = d.measurements;
        self.skeletons = d.skeletons;
        self.outline = d.outline.map(|mut o| {
            o.source_record_id = Some(self.record_id.clone());
            o
        });
        self.contour_px = d.contour_px;
        self.grave_rect = d.grave_rect;
        self.manual_box = d.manual_box;
        self.conversion = d.conversion;
        self.scale_bar = d.scale_bar;
        self.north = d.north;
        self.flags = d.flags;
        self.field_errors = d.field_errors;
    }

    /// Whether step 5 applies to this record.
    pub fn has_north(&self) -> bool {
        self.tree.north_arrow.is_some() || self.north.is_some()
    }

    fn log(&mut self, ts_ms: u64, step: Option<u8>, action: &str, change: Value) {
        self.edit_log.push(EditEntry {
            ts_ms,
            step,
            action: action.to_string(),
            change,
        });
    }

    /// Steps completed or skipped according to the edit log.
    pub fn visited_steps(&self) -> BTreeSet<u8> {
        self.edit_log
            .iter()
            .filter(|e| e.action == "advance" || e.action == "skip")
            .filter_map(|e| e.step)
            .collect()
    }
}

pub fn record_id_for(document_id: &str, grave: &Detection) -> String {
    format!("{document_id}-g{}", grave.id)
}

/// New record for an assembled tree, measured by the automated pipeline.
pub fn create_record(
    tree: &GraveTree,
    document_id: &str,
    page_index: u32,
    ctx: &PageContext<'_>,
    now_ms: u64,
) -> GraveRecord {
    let edits = Edits::default();
    let derived = analyze(&tree.grave, ctx, &edits);
    let mut r = GraveRecord {
        record_id: record_id_for(document_id, &tree.grave),
        publication_grave_id: None,
        document_id: document_id.to_string(),
        page_id: tree.grave.page_id.clone(),
        page_index,
        status: ValidationStatus::Detected,
        tree: tree.clone(),
        measurements: Measurements::default(),
        skeletons: Vec::new(),
        outline: None,
        contour_px: None,
        grave_rect: None,
        manual_box: false,
        conversion: None,
        scale_bar: None,
        north: None,
        flags: Vec::new(),
        field_errors: Default::default(),
        edits,
        edit_log: Vec::new(),
        version: 1,
    };
    r.set_derived(derived);
    r.log(now_ms, None, "create", Value::Null);
    r
}

/// Re-runs the pipeline under the record's edits. The edit log grows only
/// when something derived actually changed.
pub fn recompute(record: &GraveRecord, ctx: &PageContext<'_>, now_ms: u64) -> GraveRecord {
    let mut r = record.clone();
    let mut d = analyze(&record.tree.grave, ctx, &record.edits);
    if let Some(o) = &mut d.outline {
        o.source_record_id = Some(record.record_id.clone());
    }
    if d != record.derived() {
        r.set_derived(d);
        r.log(now_ms, None, "recompute", Value::Null);
    }
    r
}

pub struct TransitionEnv<'a, 'b> {
    pub ctx: &'a PageContext<'b>,
    /// True when another live record of the document already uses the id.
    pub id_taken: &'a dyn Fn(&str) -> bool,
    pub next_detection_id: &'a mut dyn FnMut() -> u64,
    pub now_ms: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Step1 {
    publication_grave_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxMove {
    id: u64,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewBox {
    label: String,
    bbox: [f64; 4],
    #[serde(default)]
    text: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpineInput {
    skeleton_id: u64,
    start: [f64; 2],
    end: [f64; 2],
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct Step2 {
    boxes: Vec<BoxMove>,
    add: Vec<NewBox>,
    remove: Vec<u64>,
    spines: Vec<SpineInput>,
}

#[derive(Deserialize, Default, PartialEq)]
#[serde(rename_all = "snake_case")]
enum ContourChoice {
    #[default]
    Accept,
    ManualBox,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct Step3 {
    contour: ContourChoice,
    depth_box: Option<[f64; 4]>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct Step4 {
    scale_text: Option<String>,
    scale_detection_id: Option<u64>,
    px_per_cm: Option<f64>,
    fixed_ratio: Option<f64>,
    page_height_cm: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct Step5 {
    angle_deg: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseInput {
    skeleton_id: u64,
    pose: Pose,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct Step6 {
    poses: Vec<PoseInput>,
}

fn parse<T: DeserializeOwned + Default>(payload: &Value) -> Result<T, RecordError> {
    if payload.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(payload.clone()).map_err(|e| payload_err(e.to_string()))
}

fn page_bbox(b: [f64; 4], ctx: &PageContext<'_>) -> Result<BBox, RecordError> {
    let bbox = BBox::from_array(b);
    let w = ctx.raster.width() as f64;
    let h = ctx.raster.height() as f64;
    if !bbox.is_valid() || bbox.x_min < 0.0 || bbox.y_min < 0.0 || bbox.x_max > w || bbox.y_max > h {
        return Err(payload_err(format!("bbox {b:?} is empty or outside the {w}x{h} page")));
    }
    Ok(bbox)
}

fn finite_positive(v: Option<f64>, name: &str) -> Result<(), RecordError> {
    match v {
        Some(x) if !(x.is_finite() && x > 0.0) => Err(payload_err(format!("{name} must be positive"))),
        _ => Ok(()),
    }
}

/// Applies the payload of `step` to a copy of the record's edits.
fn apply_step(
    r: &mut GraveRecord,
    step: u8,
    payload: &Value,
    env: &mut TransitionEnv<'_, '_>,
) -> Result<(), RecordError> {
    let ctx = env.ctx;
    match step {
        1 => {
            let p: Step1 = serde_json::from_value(payload.clone())
                .map_err(|e| payload_err(e.to_string()))?;
            let id = p.publication_grave_id.trim().to_string();
            if id.is_empty() {
                return Err(payload_err("publication_grave_id must not be empty"));
            }
            if (env.id_taken)(&id) {
                return Err(RecordError::DuplicateGraveId(id));
            }
            r.publication_grave_id = Some(id);
        }
        2 => {
            let p: Step2 = parse(payload)?;
            let e = &mut r.edits;
            for id in &p.remove {
                if *id == r.tree.grave.id {
                    return Err(payload_err("the grave box cannot be removed; discard at step 1"));
                }
                e.removed.insert(*id);
            }
            for m in &p.boxes {
                e.moved.insert(m.id, page_bbox(m.bbox, ctx)?);
            }
            for n in &p.add {
                let label = ClassLabel::from_str(&n.label).map_err(|e| payload_err(e.to_string()))?;
                let bbox = page_bbox(n.bbox, ctx)?;
                let size = (ctx.raster.width(), ctx.raster.height());
                let mut d = Detection::validated(
                    (env.next_detection_id)(),
                    r.page_id.clone(),
                    label,
                    bbox,
                    1.0,
                    Origin::Manual,
                    size,
                )
                .map_err(|e| payload_err(e.to_string()))?;
                d.text = n.text.clone();
                e.added.push(d);
            }
            for s in &p.spines {
                let spine = SpineArrow::new(
                    Point::new(s.start[0], s.start[1]),
                    Point::new(s.end[0], s.end[1]),
                )
                .map_err(|e| payload_err(format!("spine of skeleton {}: {e}", s.skeleton_id)))?;
                e.spines.insert(s.skeleton_id, spine);
            }
        }
        3 => {
            let p: Step3 = parse(payload)?;
            r.edits.manual_box = p.contour == ContourChoice::ManualBox;
            r.edits.depth_box = p.depth_box.map(|b| page_bbox(b, ctx)).transpose()?;
        }
        4 => {
            let p: Step4 = parse(payload)?;
            finite_positive(p.px_per_cm, "px_per_cm")?;
            finite_positive(p.fixed_ratio, "fixed_ratio")?;
            finite_positive(p.page_height_cm, "page_height_cm")?;
            let any = p.scale_text.is_some()
                || p.scale_detection_id.is_some()
                || p.px_per_cm.is_some()
                || p.fixed_ratio.is_some()
                || p.page_height_cm.is_some();
            if any {
                let e = &mut r.edits;
                e.scale_text = p.scale_text;
                e.scale_detection_id = p.scale_detection_id;
                e.px_per_cm = p.px_per_cm;
                e.fixed_ratio = p.fixed_ratio;
                e.page_height_cm = p.page_height_cm;
            }
        }
        5 => {
            let p: Step5 = parse(payload)?;
            if let Some(a) = p.angle_deg {
                if !a.is_finite() {
                    return Err(payload_err("angle_deg must be finite"));
                }
                r.edits.north_angle_deg = Some(a);
            }
        }
        6 => {
            let p: Step6 = parse(payload)?;
            for pi in p.poses {
                if !r.skeletons.iter().any(|s| s.detection_id == pi.skeleton_id) {
                    return Err(payload_err(format!("no skeleton {} in this grave", pi.skeleton_id)));
                }
                r.edits.poses.insert(pi.skeleton_id, pi.pose);
            }
        }
        _ => unreachable!("steps run from 1 to 6"),
    }
    Ok(())
}

/// Checks what a completed step guarantees, after recomputation.
fn check_step(r: &GraveRecord, step: u8) -> Result<(), RecordError> {
    match step {
        2 => {
            for s in &r.tree.skeletons {
                if !r.edits.spines.contains_key(&s.id) {
                    return Err(payload_err(format!("skeleton {} needs a spine arrow", s.id)));
                }
            }
            for id in r.edits.spines.keys() {
                if !r.tree.skeletons.iter().any(|s| s.id == *id) {
                    return Err(payload_err(format!("spine given for unknown skeleton {id}")));
                }
            }
        }
        3 => {
            if !r.manual_box && r.contour_px.is_none() {
                return Err(payload_err("no grave contour found; choose manual_box"));
            }
        }
        4 => {
            if r.conversion.is_none() {
                return Err(payload_err(
                    "no scale conversion; supply scale_text, px_per_cm or fixed_ratio",
                ));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Applies a workflow action. On success the returned record carries the
/// next version; on error nothing changes.
pub fn transition(
    record: &GraveRecord,
    action: Action,
    payload: &Value,
    env: &mut TransitionEnv<'_, '_>,
) -> Result<GraveRecord, RecordError> {
    let plan = plan_transition(record.status, action, record.has_north())?;
    let mut r = record.clone();
    let now = env.now_ms;
    match action {
        Action::Advance => {
            if let Some(step) = plan.completes {
                apply_step(&mut r, step, payload, env)?;
                let mut d = analyze(&r.tree.grave, env.ctx, &r.edits);
                if let Some(o) = &mut d.outline {
                    o.source_record_id = Some(r.record_id.clone());
                }
                r.set_derived(d);
                check_step(&r, step)?;
                r.log(now, Some(step), "advance", payload.clone());
            }
            if let Some(step) = plan.skips {
                debug_assert_eq!(step, NORTH_STEP);
                r.log(now, Some(step), "skip", Value::Null);
            }
            if plan.to == ValidationStatus::Validated {
                r.log(now, None, "validate", Value::Null);
            }
        }
        Action::Back => r.log(now, record.status.completed_step(), "back", Value::Null),
        Action::Discard => r.log(now, Some(1), "discard", Value::Null),
    }
    r.status = plan.to;
    r.version += 1;
    Ok(r)
}
