//! Deterministic synthetic catalogue pages with ground truth.
//!
//! A page is a 2x2 grid of cells. Each used cell holds one grave drawing
//! and, in a column on the cell's outer side, its north arrow, scale bar and
//! optional cross-section, so nearest-object assembly recovers the intended
//! trees.

use gravekit_core::orient::image_angle;
use gravekit_core::{BBox, ClassLabel, Detection, GrayRaster, Origin, Point};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detections::serialize_detections;
use crate::export::ExportRow;
use crate::ingest::encode_png;
use crate::pipeline::Pose;
use crate::service::Correction;
use gravekit_core::workflow::Action;
use serde_json::{json, Value};
use crate::store::page_id;

pub const PAGE_WIDTH: u32 = 2600;
pub const PAGE_HEIGHT: u32 = 2200;
const CELL_W: f64 = 1300.0;
const CELL_H: f64 = 1100.0;
const STROKE: f64 = 3.0;
const BAR_THICKNESS: u32 = 8;
const BOX_PAD: f64 = 3.0;

/// Scale labels and the lengths they denote, in centimetres.
pub const SCALE_LABELS: [(&str, f64); 9] = [
    ("80 cm", 80.0),
    ("0,8 m", 80.0),
    ("1 m", 100.0),
    ("100 cm", 100.0),
    ("0–1 m", 100.0),
    ("1000 mm", 100.0),
    ("1,2 m", 120.0),
    ("120 cm", 120.0),
    ("1.4 m", 140.0),
];
const BAR_PX: (f64, f64) = (150.0, 360.0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid synth parameters: {0}")]
pub struct InvalidParams(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    /// Fraction of page pixels turned into isolated ink specks.
    pub speckle_density: f64,
    /// Chance that a grave outline gets gaps.
    pub stroke_break_prob: f64,
}

impl Noise {
    pub const NONE: Noise = Noise {
        speckle_density: 0.0,
        stroke_break_prob: 0.0,
    };
    pub const MILD: Noise = Noise {
        speckle_density: 2e-5,
        stroke_break_prob: 0.2,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Degrade {
    /// Chance that a non-grave detection is missing from the output.
    pub drop_prob: f64,
    /// Maximum box-edge shift as a fraction of box size.
    pub perturb_frac: f64,
}

impl Degrade {
    pub const NONE: Degrade = Degrade {
        drop_prob: 0.0,
        perturb_frac: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub graves_per_page: (u32, u32),
    pub size_cm: (f64, f64),
    pub px_per_cm: (f64, f64),
    pub depth_cm: (f64, f64),
    pub cross_section_prob: f64,
    pub arrow_prob: f64,
    pub skeletons_per_grave: (u32, u32),
    pub noise: Noise,
    pub degrade: Degrade,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            graves_per_page: (1, 4),
            size_cm: (50.0, 250.0),
            px_per_cm: (2.0, 2.6),
            depth_cm: (20.0, 80.0),
            cross_section_prob: 0.7,
            arrow_prob: 1.0,
            skeletons_per_grave: (0, 2),
            noise: Noise::NONE,
            degrade: Degrade::NONE,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), InvalidParams> {
        let err = |m: &str| Err(InvalidParams(m.to_string()));
        let (g0, g1) = self.graves_per_page;
        if g0 < 1 || g1 > 4 || g0 > g1 {
            return err("graves_per_page must lie within 1..=4");
        }
        let (s0, s1) = self.size_cm;
        if !(s0 > 0.0 && s0 * 1.3 <= s1 && s1.is_finite()) {
            return err("size_cm needs 0 < min and max >= 1.3 * min");
        }
        let (p0, p1) = self.px_per_cm;
        if !(p0 > 0.0 && p0 <= p1 && s1 * p1 <= 660.0) {
            return err("px_per_cm range invalid or graves too large for a cell");
        }
        let (d0, d1) = self.depth_cm;
        if !(d0 > 0.0 && d0 <= d1 && d1 * p1 < 240.0) {
            return err("depth_cm range invalid");
        }
        if self.skeletons_per_grave.0 > self.skeletons_per_grave.1 || self.skeletons_per_grave.1 > 2 {
            return err("skeletons_per_grave must lie within 0..=2");
        }
        let probs = [
            self.cross_section_prob,
            self.arrow_prob,
            self.noise.stroke_break_prob,
            self.degrade.drop_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || !(0.0..=0.01).contains(&self.noise.speckle_density)
            || !(0.0..=0.5).contains(&self.degrade.perturb_frac)
        {
            return err("probabilities must lie in [0, 1]");
        }
        if !SCALE_LABELS
            .iter()
            .any(|(_, cm)| cm * p0 >= BAR_PX.0 && cm * p1 <= BAR_PX.1)
        {
            return err("no scale label yields a 150-360 px bar for this px_per_cm range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTruth {
    pub detection_id: u64,
    pub label: String,
    pub real_length_cm: f64,
    pub pixel_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTruth {
    pub detection_id: u64,
    pub pose: Pose,
    pub spine_start: Point,
    pub spine_end: Point,
    /// `None` when the grave has no north arrow.
    pub bearing_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraveTruth {
    pub grave_id: String,
    pub detection_id: u64,
    pub width_cm: f64,
    pub length_cm: f64,
    pub depth_cm: Option<f64>,
    /// Image angle of the long axis, `[0, 180)`.
    pub axis_image_deg: f64,
    pub axis_bearing_deg: Option<f64>,
    pub north_angle_deg: Option<f64>,
    pub north_detection_id: Option<u64>,
    pub scale: ScaleTruth,
    pub skeletons: Vec<SkeletonTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageTruth {
    pub page_id: String,
    pub page_index: u32,
    pub px_per_cm: f64,
    pub graves: Vec<GraveTruth>,
}

/// Explicit description of one grave drawing.
#[derive(Debug, Clone, PartialEq)]
pub struct GraveSpec {
    pub cell: usize,
    pub width_cm: f64,
    pub length_cm: f64,
    pub axis_image_deg: f64,
    pub corner_radius_frac: f64,
    pub corner_jitter: f64,
    pub jitter_phase: [f64; 4],
    pub offset: (f64, f64),
    pub scale_label: (String, f64),
    pub segmented_bar: bool,
    pub north_angle_deg: Option<f64>,
    pub depth_cm: Option<f64>,
    pub skeletons: Vec<SkeletonSpec>,
    pub breaks: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec {
    pub pose: Pose,
    /// True when the skull lies toward the long axis direction.
    pub head_forward: bool,
    /// Across-axis offset as a fraction of the half width.
    pub lane: f64,
    pub tilt_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageSpec {
    pub page_index: u32,
    pub px_per_cm: f64,
    pub graves: Vec<GraveSpec>,
}

#[derive(Debug, Clone)]
pub struct SynthPage {
    pub raster: GrayRaster,
    pub detections: Vec<Detection>,
    pub truth: PageTruth,
}

impl SynthPage {
    pub fn png(&self) -> Vec<u8> {
        encode_png(&self.raster)
    }

    pub fn detection_lines(&self) -> String {
        serialize_detections(&self.detections)
    }
}

struct Canvas {
    raster: GrayRaster,
}

impl Canvas {
    /// Inks pixels of the window whose centre passes `inside`; returns the
    /// inked pixel bbox.
    fn paint(&mut self, window: (f64, f64, f64, f64), inside: impl Fn(f64, f64) -> bool) -> Option<(u32, u32, u32, u32)> {
        let w = self.raster.width() as f64;
        let h = self.raster.height() as f64;
        let x0 = window.0.floor().max(0.0) as u32;
        let y0 = window.1.floor().max(0.0) as u32;
        let x1 = window.2.ceil().min(w - 1.0) as u32;
        let y1 = window.3.ceil().min(h - 1.0) as u32;
        let mut bb: Option<(u32, u32, u32, u32)> = None;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if inside(x as f64, y as f64) {
                    self.raster.set(x, y, 0);
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        bb
    }

    fn erase_disc(&mut self, c: Point, r: f64) {
        let (w, h) = (self.raster.width() as i64, self.raster.height() as i64);
        for y in (c.y - r).floor() as i64..=(c.y + r).ceil() as i64 {
            for x in (c.x - r).floor() as i64..=(c.x + r).ceil() as i64 {
                if x >= 0 && y >= 0 && x < w && y < h && Point::new(x as f64, y as f64).distance(c) <= r {
                    self.raster.set(x as u32, y as u32, 255);
                }
            }
        }
    }
}

fn padded(bb: (u32, u32, u32, u32)) -> BBox {
    BBox::new(
        bb.0 as f64 - BOX_PAD,
        bb.1 as f64 - BOX_PAD,
        bb.2 as f64 + 1.0 + BOX_PAD,
        bb.3 as f64 + 1.0 + BOX_PAD,
    )
}

fn seg_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let t = (p.sub(a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    p.distance(a.add(ab.scale(t)))
}

fn axis_dir(deg: f64) -> Point {
    let r = deg.to_radians();
    Point::new(r.sin(), -r.cos())
}

/// Cell geometry: (objects column x range, grave region x range, y range).
fn cell_layout(cell: usize) -> ((f64, f64), (f64, f64), (f64, f64)) {
    let cx = (cell % 2) as f64 * CELL_W;
    let cy = (cell / 2) as f64 * CELL_H;
    let ys = (cy + 30.0, cy + CELL_H - 30.0);
    if cell % 2 == 0 {
        ((cx + 20.0, cx + 400.0), (cx + 420.0, cx + CELL_W - 20.0), ys)
    } else {
        ((cx + CELL_W - 400.0, cx + CELL_W - 20.0), (cx + 20.0, cx + CELL_W - 420.0), ys)
    }
}

fn grave_extent(spec: &GraveSpec, ppc: f64) -> (f64, f64) {
    let r = spec.axis_image_deg.to_radians();
    let (s, c) = (r.sin().abs(), r.cos().abs());
    let (l, w) = (spec.length_cm * ppc, spec.width_cm * ppc);
    (l * s + w * c, l * c + w * s)
}

/// Arrow glyph pointing to image-up in its own frame, tip at (0, -60).
fn arrow_glyph(p: Point) -> bool {
    let shaft = p.x.abs() <= 3.0 && (-30.0..=60.0).contains(&p.y);
    let head = (-60.0..=-24.0).contains(&p.y) && p.x.abs() <= (p.y + 60.0) * 0.5;
    shaft || head
}

/// Signed distance to the rounded rectangle with corner jitter; negative inside.
fn grave_sd(u: f64, v: f64, a: f64, b: f64, r: f64, jitter: f64, phase: &[f64; 4]) -> f64 {
    let qx = u.abs() - (a - r);
    let qy = v.abs() - (b - r);
    let outside = qx.max(0.0).hypot(qy.max(0.0));
    let inside = qx.max(qy).min(0.0);
    let mut sd = outside + inside - r;
    if qx > 0.0 && qy > 0.0 {
        let phi = qy.atan2(qx);
        let corner = (u > 0.0) as usize + 2 * (v > 0.0) as usize;
        let wobble = 0.6 + 0.4 * (5.0 * phi + phase[corner]).sin();
        sd += jitter * r * (2.0 * phi).sin() * wobble;
    }
    sd
}

struct IdGen {
    next: u64,
}

impl IdGen {
    fn take(&mut self) -> u64 {
        self.next += 1;
        self.next
    }
}

fn grave_id(page_index: u32, k: usize) -> String {
    format!("p{page_index:03}-g{}", k + 1)
}

/// Draws a page from an explicit specification.
pub fn render_page(spec: &PageSpec, document_id: &str) -> SynthPage {
    let ppc = spec.px_per_cm;
    let pid = page_id(document_id, spec.page_index);
    let mut canvas = Canvas {
        raster: GrayRaster::filled(PAGE_WIDTH, PAGE_HEIGHT, 255),
    };
    let mut ids = IdGen {
        next: spec.page_index as u64 * 100,
    };
    let mut detections = Vec::new();
    let mut graves = Vec::new();
    let det = |id: u64, label: ClassLabel, bb: BBox| {
        Detection::validated(id, pid.clone(), label, bb, 1.0, Origin::Synthetic, (PAGE_WIDTH, PAGE_HEIGHT))
            .expect("synthetic boxes lie on the page")
    };

    for (k, g) in spec.graves.iter().enumerate() {
        let (objects, region, ys) = cell_layout(g.cell);
        let centre = Point::new(
            (region.0 + region.1) / 2.0 + g.offset.0,
            (ys.0 + ys.1) / 2.0 + g.offset.1,
        );
        let along = axis_dir(g.axis_image_deg);
        let across = Point::new(-along.y, along.x);
        let a = g.width_cm * ppc / 2.0;
        let b = g.length_cm * ppc / 2.0;
        let r = a.min(b) * g.corner_radius_frac;
        let (ex, ey) = grave_extent(g, ppc);
        let window = (centre.x - ex / 2.0 - 2.0, centre.y - ey / 2.0 - 2.0, centre.x + ex / 2.0 + 2.0, centre.y + ey / 2.0 + 2.0);
        let phase = g.jitter_phase;
        let jitter = g.corner_jitter;
        let mut bb = canvas.paint(window, |x, y| {
            let d = Point::new(x, y).sub(centre);
            let sd = grave_sd(d.dot(across), d.dot(along), a, b, r, jitter, &phase);
            (-STROKE..=0.0).contains(&sd)
        });
        for &(side, t) in &g.breaks {
            // side picks one of the four straight edges, t the position on it
            let edge = side.floor() as i32 % 4;
            let p = match edge {
                0 => across.scale(a - 1.5).add(along.scale(t * (b - r))),
                1 => across.scale(-(a - 1.5)).add(along.scale(t * (b - r))),
                2 => along.scale(b - 1.5).add(across.scale(t * (a - r))),
                _ => along.scale(-(b - 1.5)).add(across.scale(t * (a - r))),
            };
            canvas.erase_disc(centre.add(p), 2.5);
        }
        let grave_det_id = ids.take();
        let grave_bb = padded(bb.take().expect("grave drawn"));

        // skeletons lie inside the pit, one lane each
        let mut skeletons = Vec::new();
        let mut skel_dets = Vec::new();
        let lanes = g.skeletons.len().max(1) as f64;
        for s in &g.skeletons {
            let lane_half = (a - STROKE - 6.0) / lanes;
            let skull_r = (0.45 * lane_half).min(0.07 * b).clamp(3.0, 22.0);
            let body = (2.0 * b - 2.0 * STROKE) * 0.62 - 2.0 * skull_r;
            let dir = axis_dir(g.axis_image_deg + s.tilt_deg + if s.head_forward { 0.0 } else { 180.0 });
            let side = Point::new(-dir.y, dir.x);
            let mid = centre.add(across.scale(s.lane * a * 0.5));
            let pelvis = mid.sub(dir.scale(body * 0.35));
            let neck = mid.add(dir.scale(body * 0.45));
            let skull = neck.add(dir.scale(skull_r));
            let limb = body * 0.3;
            let legs: Vec<(Point, Point)> = match s.pose {
                Pose::Supine => vec![
                    (pelvis.add(side.scale(skull_r * 0.5)), pelvis.add(side.scale(skull_r * 0.5)).sub(dir.scale(limb * 0.55))),
                    (pelvis.sub(side.scale(skull_r * 0.5)), pelvis.sub(side.scale(skull_r * 0.5)).sub(dir.scale(limb * 0.55))),
                ],
                Pose::FlexedOnSide => {
                    let knee = pelvis.add(side.scale(skull_r * 0.9)).sub(dir.scale(limb * 0.25));
                    vec![(pelvis, knee), (knee, knee.sub(side.scale(skull_r * 0.6)).sub(dir.scale(limb * 0.2)))]
                }
                Pose::Unknown => Vec::new(),
            };
            let ends: Vec<Point> = [pelvis, neck, skull]
                .into_iter()
                .chain(legs.iter().flat_map(|l| [l.0, l.1]))
                .collect();
            let lo = ends.iter().fold(Point::new(f64::MAX, f64::MAX), |m, p| Point::new(m.x.min(p.x), m.y.min(p.y)));
            let hi = ends.iter().fold(Point::new(f64::MIN, f64::MIN), |m, p| Point::new(m.x.max(p.x), m.y.max(p.y)));
            let m = skull_r + 3.0;
            let win = (lo.x - m, lo.y - m, hi.x + m, hi.y + m);
            let sbb = canvas.paint(win, |x, y| {
                let p = Point::new(x, y);
                p.distance(skull) <= skull_r
                    || seg_distance(p, pelvis, neck) <= 2.0
                    || legs.iter().any(|(q0, q1)| seg_distance(p, *q0, *q1) <= 1.5)
            });
            let id = ids.take();
            skel_dets.push(det(id, ClassLabel::Skeleton, padded(sbb.expect("skeleton drawn"))));
            skeletons.push((id, s.pose, pelvis, skull));
        }

        // truth lists skeletons in reading order, as records do
        let mut order: Vec<usize> = (0..skel_dets.len()).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (&skel_dets[i].bbox, &skel_dets[j].bbox);
            (a.y_min, a.x_min).partial_cmp(&(b.y_min, b.x_min)).expect("finite boxes")
        });
        let skeletons: Vec<_> = order.iter().map(|&i| skeletons[i]).collect();

        let col_x = (objects.0 + objects.1) / 2.0;
        let north_det = g.north_angle_deg.map(|n| {
            let c = Point::new(col_x, ys.0 + 120.0);
            let abb = canvas.paint((c.x - 64.0, c.y - 64.0, c.x + 64.0, c.y + 64.0), |x, y| {
                arrow_glyph(Point::new(x, y).sub(c).rotated_cw(-n))
            });
            det(ids.take(), ClassLabel::Arrow, padded(abb.expect("arrow drawn")))
        });

        let (label, real_cm) = g.scale_label.clone();
        let bar_px = (real_cm * ppc).round();
        let bx0 = (col_x - bar_px / 2.0).round();
        let by0 = ys.0 + 350.0;
        let bx1 = bx0 + bar_px;
        let by1 = by0 + (BAR_THICKNESS - 1) as f64;
        let segmented = g.segmented_bar;
        let seg = bar_px / 5.0;
        let sbb = canvas.paint((bx0, by0, bx1, by1), |x, y| {
            if x < bx0 || x > bx1 || y < by0 || y > by1 {
                return false;
            }
            if !segmented {
                return true;
            }
            let edge = y == by0 || y == by1 || x == bx0 || x == bx1;
            edge || (((x - bx0) / seg).floor() as i64) % 2 == 0
        });
        let scale_id = ids.take();
        let scale_det = det(scale_id, ClassLabel::Scale, padded(sbb.expect("bar drawn"))).with_text(label.clone());

        let depth = g.depth_cm.map(|d| {
            let dpx = (d * ppc).round();
            let x0 = (col_x - 120.0).round();
            let y0 = ys.0 + 470.0;
            let cbb = canvas.paint((x0, y0, x0 + 240.0, y0 + dpx), |x, y| {
                let inside = x >= x0 && x <= x0 + 240.0 && y >= y0 && y <= y0 + dpx;
                let ring = x < x0 + STROKE || x > x0 + 240.0 - STROKE || y < y0 + STROKE || y > y0 + dpx - STROKE;
                inside && ring
            });
            (dpx / ppc, det(ids.take(), ClassLabel::GraveCrossSection, padded(cbb.expect("section drawn"))))
        });

        let axis = g.axis_image_deg.rem_euclid(180.0);
        graves.push(GraveTruth {
            grave_id: grave_id(spec.page_index, k),
            detection_id: grave_det_id,
            width_cm: g.width_cm,
            length_cm: g.length_cm,
            depth_cm: depth.as_ref().map(|d| d.0),
            axis_image_deg: axis,
            axis_bearing_deg: g.north_angle_deg.map(|n| (axis - n).rem_euclid(180.0)),
            north_angle_deg: g.north_angle_deg,
            north_detection_id: north_det.as_ref().map(|d| d.id),
            scale: ScaleTruth {
                detection_id: scale_id,
                label,
                real_length_cm: real_cm,
                pixel_length: bar_px,
            },
            skeletons: skeletons
                .iter()
                .map(|&(id, pose, start, end)| SkeletonTruth {
                    detection_id: id,
                    pose,
                    spine_start: start,
                    spine_end: end,
                    bearing_deg: g.north_angle_deg.map(|n| {
                        let d = end.sub(start);
                        (image_angle(d.x, d.y).expect("spine has length") - n).rem_euclid(360.0)
                    }),
                })
                .collect(),
        });
        detections.push(det(grave_det_id, ClassLabel::Grave, grave_bb));
        detections.extend(skel_dets);
        detections.extend(north_det);
        detections.push(scale_det);
        detections.extend(depth.map(|d| d.1));
    }

    SynthPage {
        raster: canvas.raster,
        detections,
        truth: PageTruth {
            page_id: pid,
            page_index: spec.page_index,
            px_per_cm: ppc,
            graves,
        },
    }
}

/// Random page specification for `(seed, page_index)`.
pub fn random_spec(seed: u64, page_index: u32, params: &SynthParams) -> Result<PageSpec, InvalidParams> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(page_index as u64 + 1);

    // px/cm on a 0.05 grid keeps every scale bar an integral pixel length
    let steps = ((params.px_per_cm.1 - params.px_per_cm.0) / 0.05).floor() as u32;
    let ppc = params.px_per_cm.0 + 0.05 * rng.gen_range(0..=steps) as f64;
    let ppc = (ppc * 100.0).round() / 100.0;
    let labels: Vec<(&str, f64)> = SCALE_LABELS
        .iter()
        .copied()
        .filter(|(_, cm)| (BAR_PX.0..=BAR_PX.1).contains(&(cm * ppc)))
        .collect();
    if labels.is_empty() {
        return Err(InvalidParams(format!("no scale label fits {ppc} px/cm")));
    }

    let n = rng.gen_range(params.graves_per_page.0..=params.graves_per_page.1) as usize;
    let mut cells = [0usize, 1, 2, 3];
    cells.shuffle(&mut rng);
    let mut graves = Vec::with_capacity(n);
    for &cell in &cells[..n] {
        let (_, region, ys) = cell_layout(cell);
        let room = (region.1 - region.0 - 12.0, ys.1 - ys.0 - 12.0);
        let (lmin, lmax) = (params.size_cm.0 * 1.3, params.size_cm.1);
        let mut spec = loop {
            let length = rng.gen_range(lmin..=lmax);
            let width = rng.gen_range(params.size_cm.0..=length / 1.3);
            let axis = rng.gen_range(0.0..180.0);
            let s = GraveSpec {
                cell,
                width_cm: width,
                length_cm: length,
                axis_image_deg: axis,
                corner_radius_frac: rng.gen_range(0.08..0.3),
                corner_jitter: rng.gen_range(0.0..0.35),
                jitter_phase: [(); 4].map(|_| rng.gen_range(0.0..std::f64::consts::TAU)),
                offset: (0.0, 0.0),
                scale_label: (String::new(), 0.0),
                segmented_bar: false,
                north_angle_deg: None,
                depth_cm: None,
                skeletons: Vec::new(),
                breaks: Vec::new(),
            };
            let (ex, ey) = grave_extent(&s, ppc);
            if ex <= room.0 && ey <= room.1 {
                break s;
            }
        };
        let (ex, ey) = grave_extent(&spec, ppc);
        let slack = (((room.0 - ex) / 2.0).min(30.0), ((room.1 - ey) / 2.0).min(30.0));
        spec.offset = (rng.gen_range(-slack.0..=slack.0), rng.gen_range(-slack.1..=slack.1));
        let (label, cm) = labels[rng.gen_range(0..labels.len())];
        spec.scale_label = (label.to_string(), cm);
        spec.segmented_bar = rng.gen_bool(0.5);
        if rng.gen_bool(params.arrow_prob) {
            spec.north_angle_deg = Some((rng.gen_range(0..36) * 10) as f64);
        }
        if rng.gen_bool(params.cross_section_prob) {
            spec.depth_cm = Some(rng.gen_range(params.depth_cm.0..=params.depth_cm.1));
        }
        let k = rng.gen_range(params.skeletons_per_grave.0..=params.skeletons_per_grave.1);
        let lanes: &[f64] = if k == 2 { &[-1.0, 1.0] } else { &[0.0] };
        spec.skeletons = (0..k as usize)
            .map(|i| SkeletonSpec {
                pose: [Pose::Unknown, Pose::Supine, Pose::FlexedOnSide][rng.gen_range(0..3)],
                head_forward: rng.gen_bool(0.5),
                lane: lanes[i],
                tilt_deg: rng.gen_range(-6.0..6.0),
            })
            .collect();
        if rng.gen_bool(params.noise.stroke_break_prob) {
            spec.breaks = (0..rng.gen_range(1..=3))
                .map(|_| (rng.gen_range(0.0..4.0), rng.gen_range(-0.8..0.8)))
                .collect();
        }
        graves.push(spec);
    }
    Ok(PageSpec {
        page_index,
        px_per_cm: ppc,
        graves,
    })
}

fn degrade(page: &mut SynthPage, seed: u64, params: &SynthParams) {
    let d = params.degrade;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_de9a);
    rng.set_stream(page.truth.page_index as u64 + 1);
    if params.noise.speckle_density > 0.0 {
        let n = (params.noise.speckle_density * (PAGE_WIDTH * PAGE_HEIGHT) as f64).round() as usize;
        for _ in 0..n {
            let x = rng.gen_range(0..PAGE_WIDTH);
            let y = rng.gen_range(0..PAGE_HEIGHT);
            page.raster.set(x, y, 0);
        }
    }
    if d.drop_prob > 0.0 {
        page.detections
            .retain(|det| det.label == ClassLabel::Grave || !rng.gen_bool(d.drop_prob));
    }
    if d.perturb_frac > 0.0 {
        for det in &mut page.detections {
            let (w, h) = (det.bbox.width(), det.bbox.height());
            let mut j = |s: f64| rng.gen_range(-d.perturb_frac..=d.perturb_frac) * s;
            let b = BBox::new(
                det.bbox.x_min + j(w),
                det.bbox.y_min + j(h),
                det.bbox.x_max + j(w),
                det.bbox.y_max + j(h),
            )
            .clamped(PAGE_WIDTH as f64, PAGE_HEIGHT as f64);
            if b.is_valid() {
                det.bbox = b;
            }
        }
    }
}

/// One page of a synthetic document; deterministic in `(seed, page_index, params)`.
pub fn generate_page(seed: u64, page_index: u32, params: &SynthParams, document_id: &str) -> Result<SynthPage, InvalidParams> {
    let spec = random_spec(seed, page_index, params)?;
    let mut page = render_page(&spec, document_id);
    degrade(&mut page, seed, params);
    Ok(page)
}

pub fn document_id_for(seed: u64) -> String {
    format!("synth-{seed}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub size_pct: f64,
    pub bearing_deg: f64,
    pub depth_pct: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            size_pct: 2.0,
            bearing_deg: 5.0,
            depth_pct: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraveScore {
    pub grave_id: String,
    pub width_pct: Option<f64>,
    pub length_pct: Option<f64>,
    pub depth_pct: Option<f64>,
    pub axis_bearing_deg: Option<f64>,
    pub skeleton_bearing_deg: Vec<Option<f64>>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub n_truth: usize,
    pub n_matched: usize,
    pub tolerances: Tolerances,
    pub graves: Vec<GraveScore>,
    /// Share of matched graves whose width and length both pass.
    pub size_pass_rate: f64,
    pub max_axis_bearing_deg: Option<f64>,
    pub max_skeleton_bearing_deg: Option<f64>,
}

fn circ(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Deviations of exported rows from the generator's truth, matched by grave id.
pub fn score_against_truth(
    rows: &[ExportRow],
    truth: &[PageTruth],
    tol: Tolerances,
) -> Result<ScoreReport, gravekit_core::metric::NoMatchedGraves> {
    let by_id: std::collections::BTreeMap<&str, &ExportRow> = rows.iter().map(|r| (r.grave_id.as_str(), r)).collect();
    let all: Vec<&GraveTruth> = truth.iter().flat_map(|p| &p.graves).collect();
    let pct = |c: Option<f64>, t: f64| c.map(|c| (c - t).abs() / t * 100.0);
    let mut graves = Vec::new();
    for t in &all {
        let Some(r) = by_id.get(t.grave_id.as_str()) else { continue };
        let width_pct = pct(r.width_cm, t.width_cm);
        let length_pct = pct(r.length_cm, t.length_cm);
        let depth_pct = t.depth_cm.and_then(|d| pct(r.depth_cm, d));
        let axis = t
            .axis_bearing_deg
            .zip(r.grave_bearing_deg)
            .map(|(t, c)| circ(c, t, 180.0));
        let skel: Vec<Option<f64>> = t
            .skeletons
            .iter()
            .zip(r.skeletons.iter().map(|s| s.1).chain(std::iter::repeat(None)))
            .map(|(st, c)| st.bearing_deg.zip(c).map(|(t, c)| circ(c, t, 360.0)))
            .collect();
        let ok = |v: Option<f64>, lim: f64| v.is_some_and(|v| v <= lim);
        let pass = ok(width_pct, tol.size_pct)
            && ok(length_pct, tol.size_pct)
            && (t.depth_cm.is_none() || ok(depth_pct, tol.depth_pct))
            && (t.axis_bearing_deg.is_none() || ok(axis, tol.bearing_deg))
            && skel
                .iter()
                .zip(&t.skeletons)
                .all(|(v, st)| st.bearing_deg.is_none() || ok(*v, tol.bearing_deg));
        graves.push(GraveScore {
            grave_id: t.grave_id.clone(),
            width_pct,
            length_pct,
            depth_pct,
            axis_bearing_deg: axis,
            skeleton_bearing_deg: skel,
            pass,
        });
    }
    if graves.is_empty() {
        return Err(gravekit_core::metric::NoMatchedGraves);
    }
    let size_ok = graves
        .iter()
        .filter(|g| {
            g.width_pct.is_some_and(|v| v <= tol.size_pct) && g.length_pct.is_some_and(|v| v <= tol.size_pct)
        })
        .count();
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Ok(ScoreReport {
        n_truth: all.len(),
        n_matched: graves.len(),
        tolerances: tol,
        size_pass_rate: size_ok as f64 / graves.len() as f64,
        max_axis_bearing_deg: max(&mut graves.iter().filter_map(|g| g.axis_bearing_deg)),
        max_skeleton_bearing_deg: max(&mut graves.iter().flat_map(|g| g.skeleton_bearing_deg.iter().flatten().copied())),
        graves,
    })
}

/// Truth rendered as export rows, for comparisons with the error metric.
pub fn truth_rows(truth: &[PageTruth], document_id: &str) -> Vec<ExportRow> {
    truth
        .iter()
        .flat_map(|p| {
            p.graves.iter().map(move |g| ExportRow {
                document_id: document_id.to_string(),
                grave_id: g.grave_id.clone(),
                page: p.page_index,
                width_cm: Some(g.width_cm),
                length_cm: Some(g.length_cm),
                depth_cm: g.depth_cm,
                grave_bearing_deg: g.axis_bearing_deg,
                skeletons: g.skeletons.iter().map(|s| (s.pose, s.bearing_deg)).collect(),
            })
        })
        .collect()
}

/// How the scripted validator answers step 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NorthInput {
    /// Types the true angle, as a human reading the drawing would.
    Manual,
    /// Accepts whatever the pipeline derived.
    Automatic,
}

/// Corrections that walk every generated grave through all six steps using
/// the truth: grave id, spine arrows, accepted contour and scale, north, poses.
pub fn scripted_corrections(truth: &[PageTruth], document_id: &str, north: NorthInput) -> Vec<Correction> {
    let mut out = Vec::new();
    for g in truth.iter().flat_map(|p| &p.graves) {
        let record_id = format!("{document_id}-g{}", g.detection_id);
        let mut push = |action: Action, payload: Value| {
            out.push(Correction {
                record_id: record_id.clone(),
                version: None,
                action,
                payload,
            })
        };
        push(Action::Advance, json!({ "publication_grave_id": g.grave_id }));
        let spines: Vec<Value> = g
            .skeletons
            .iter()
            .map(|s| {
                json!({
                    "skeleton_id": s.detection_id,
                    "start": [s.spine_start.x, s.spine_start.y],
                    "end": [s.spine_end.x, s.spine_end.y],
                })
            })
            .collect();
        push(Action::Advance, json!({ "spines": spines }));
        push(Action::Advance, Value::Null);
        push(Action::Advance, Value::Null);
        if let Some(n) = g.north_angle_deg {
            let payload = match north {
                NorthInput::Manual => json!({ "angle_deg": n }),
                NorthInput::Automatic => Value::Null,
            };
            push(Action::Advance, payload);
        }
        let poses: Vec<Value> = g
            .skeletons
            .iter()
            .map(|s| json!({ "skeleton_id": s.detection_id, "pose": s.pose }))
            .collect();
        push(Action::Advance, json!({ "poses": poses }));
        push(Action::Advance, Value::Null);
    }
    out
}

pub fn corrections_jsonl(corrections: &[Correction]) -> String {
    corrections
        .iter()
        .map(|c| serde_json::to_string(c).expect("serializable") + "\n")
        .collect()
}

/// Writes `page_NNN.png`, `manifest.json`, `detections.jsonl` and
/// `truth.json` for `pages` pages into `out`, plus `corrections.jsonl`
/// walking every grave through validation.
pub fn write_document(out: &std::path::Path, seed: u64, pages: u32, params: &SynthParams) -> anyhow::Result<String> {
    params.validate()?;
    std::fs::create_dir_all(out)?;
    let doc_id = document_id_for(seed);
    let mut lines = String::new();
    let mut truth = Vec::new();
    let mut manifest_pages = Vec::new();
    for i in 0..pages {
        let page = generate_page(seed, i, params, &doc_id)?;
        let name = format!("page_{i:03}.png");
        std::fs::write(out.join(&name), page.png())?;
        manifest_pages.push(crate::ingest::ManifestPage { image: name, dpi: None });
        lines.push_str(&page.detection_lines());
        truth.push(page.truth);
    }
    let manifest = crate::ingest::Manifest {
        id: Some(doc_id.clone()),
        title: format!("Synthetic catalogue, seed {seed}"),
        source_ref: format!("synth --seed {seed} --pages {pages}"),
        scale: crate::ingest::ScaleConfig::per_drawing(),
        pages: manifest_pages,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    std::fs::write(out.join("detections.jsonl"), lines)?;
    std::fs::write(out.join("truth.json"), serde_json::to_string_pretty(&truth)? + "\n")?;
    std::fs::write(
        out.join("corrections.jsonl"),
        corrections_jsonl(&scripted_corrections(&truth, &doc_id, NorthInput::Manual)),
    )?;
    Ok(doc_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gravekit_core::assemble_graves;
    use gravekit_core::calibrate::measure_scale_pixels;
    use gravekit_core::orient::geometric_arrow_angle;

    fn simple_spec() -> PageSpec {
        PageSpec {
            page_index: 0,
            px_per_cm: 2.0,
            graves: vec![GraveSpec {
                cell: 0,
                width_cm: 100.0,
                length_cm: 200.0,
                axis_image_deg: 30.0,
                corner_radius_frac: 0.2,
                corner_jitter: 0.2,
                jitter_phase: [0.0, 1.0, 2.0, 3.0],
                offset: (0.0, 0.0),
                scale_label: ("1 m".into(), 100.0),
                segmented_bar: false,
                north_angle_deg: Some(0.0),
                depth_cm: Some(40.0),
                skeletons: vec![SkeletonSpec {
                    pose: Pose::Supine,
                    head_forward: true,
                    lane: 0.0,
                    tilt_deg: 0.0,
                }],
                breaks: vec![],
            }],
        }
    }

    #[test]
    fn construction_arithmetic() {
        let page = render_page(&simple_spec(), "d");
        let g = &page.truth.graves[0];
        assert_eq!(g.scale.pixel_length, 200.0);
        let bar = page.detections.iter().find(|d| d.label == ClassLabel::Scale).unwrap();
        let (crop, _) = page.raster.crop(&bar.bbox).unwrap();
        assert_eq!(measure_scale_pixels(&crop).unwrap(), 200.0);
        assert_eq!(g.axis_bearing_deg, Some(30.0));
        assert_eq!(g.depth_cm, Some(40.0));
    }

    #[test]
    fn deterministic() {
        let p = SynthParams::default();
        let a = generate_page(1, 3, &p, "d").unwrap();
        let b = generate_page(1, 3, &p, "d").unwrap();
        assert_eq!(a.raster, b.raster);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.detection_lines(), b.detection_lines());
        let c = generate_page(2, 3, &p, "d").unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn trees_match_layout() {
        let p = SynthParams::default();
        for i in 0..20 {
            let page = generate_page(7, i, &p, "d").unwrap();
            for d in &page.detections {
                assert!(d.bbox.x_min >= 0.0 && d.bbox.x_max <= PAGE_WIDTH as f64);
                assert!(d.bbox.y_min >= 0.0 && d.bbox.y_max <= PAGE_HEIGHT as f64);
            }
            let trees = assemble_graves(&page.detections);
            assert_eq!(trees.len(), page.truth.graves.len());
            for g in &page.truth.graves {
                let t = trees.iter().find(|t| t.grave.id == g.detection_id).unwrap();
                assert_eq!(t.scale.as_ref().map(|d| d.id), Some(g.scale.detection_id));
                assert_eq!(t.north_arrow.as_ref().map(|d| d.id), g.north_detection_id);
                let mut ids: Vec<u64> = t.skeletons.iter().map(|s| s.id).collect();
                let mut want: Vec<u64> = g.skeletons.iter().map(|s| s.detection_id).collect();
                ids.sort();
                want.sort();
                assert_eq!(ids, want);
            }
        }
    }

    #[test]
    fn arrow_bins_recovered() {
        for bin in 0..36 {
            let n = bin as f64 * 10.0;
            let mut c = Canvas { raster: GrayRaster::filled(140, 140, 255) };
            let ctr = Point::new(70.0, 70.0);
            c.paint((0.0, 0.0, 139.0, 139.0), |x, y| arrow_glyph(Point::new(x, y).sub(ctr).rotated_cw(-n)));
            let got = geometric_arrow_angle(&c.raster).unwrap();
            assert!(circ(got, n, 360.0) < 5.0, "bin {bin}: {got}");
        }
    }

    #[test]
    fn params_checked() {
        let bad = SynthParams {
            graves_per_page: (0, 5),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(SynthParams::default().validate().is_ok());
    }

    #[test]
    fn perfect_rows_score_zero() {
        let page = render_page(&simple_spec(), "d");
        let rows = truth_rows(std::slice::from_ref(&page.truth), "d");
        let rep = score_against_truth(&rows, &[page.truth.clone()], Tolerances::default()).unwrap();
        assert_eq!(rep.size_pass_rate, 1.0);
        assert!(rep.graves.iter().all(|g| g.pass && g.width_pct == Some(0.0)));
        let mut off = rows.clone();
        off[0].grave_bearing_deg = off[0].grave_bearing_deg.map(|b| b + 10.0);
        let rep = score_against_truth(&off, &[page.truth], Tolerances::default()).unwrap();
        assert!((rep.graves[0].axis_bearing_deg.unwrap() - 10.0).abs() < 1e-9);
        assert!(!rep.graves[0].pass);
    }
}
