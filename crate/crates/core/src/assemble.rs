//! Groups the detections on one page into one tree per grave.
//!
//! Scale, north arrow and cross-section go to every grave by nearest bbox
//! centre (one object may serve several graves). Skeletons and artefacts go
//! to every grave that contains them.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::detect::{BBox, ClassLabel, Detection};
use crate::math;

/// Minimum share of an object's box that must overlap the grave box.
pub const CONTAINMENT_OVERLAP: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GraveTree {
    pub grave: Detection,
    pub scale: Option<Detection>,
    pub north_arrow: Option<Detection>,
    pub cross_section: Option<Detection>,
    pub skeletons: Vec<Detection>,
    pub artefacts: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("detections lie on different pages")]
pub struct PageMismatch;

pub fn bbox_center_distance(a: &Detection, b: &Detection) -> Result<f64, PageMismatch> {
    if a.page_id != b.page_id {
        return Err(PageMismatch);
    }
    Ok(center_distance(&a.bbox, &b.bbox))
}

fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    math::hypot(ax - bx, ay - by)
}

/// Reading order: top edge, then left edge, then detection id.
fn reading_order(a: &Detection, b: &Detection) -> Ordering {
    a.bbox
        .y_min
        .total_cmp(&b.bbox.y_min)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.id.cmp(&b.id))
}

/// True when `object` counts as lying inside `grave`.
pub fn is_contained(object: &BBox, grave: &BBox) -> bool {
    let area = object.area();
    if area <= 0.0 {
        return false;
    }
    let (cx, cy) = object.center();
    grave.contains_point(cx, cy) && object.intersection_area(grave) / area >= CONTAINMENT_OVERLAP
}

fn nearest<'a>(grave: &Detection, candidates: &[&'a Detection]) -> Option<&'a Detection> {
    candidates
        .iter()
        .map(|c| (center_distance(&grave.bbox, &c.bbox), *c))
        .min_by(|(da, a), (db, b)| da.total_cmp(db).then_with(|| reading_order(a, b)))
        .map(|(_, c)| c)
}

/// Builds one tree per grave detection, sorted in reading order.
///
/// Expects detections from a single page that already passed the
/// confidence cut.
pub fn assemble_graves(detections: &[Detection]) -> Vec<GraveTree> {
    let mut sorted: Vec<&Detection> = detections.iter().collect();
    sorted.sort_by(|a, b| reading_order(a, b));
    let of = |label: ClassLabel| -> Vec<&Detection> {
        sorted.iter().copied().filter(|d| d.label == label).collect()
    };
    let scales = of(ClassLabel::Scale);
    let arrows = of(ClassLabel::Arrow);
    let sections = of(ClassLabel::GraveCrossSection);

    sorted
        .iter()
        .filter(|d| d.label == ClassLabel::Grave)
        .map(|grave| {
            let inside = |pred: fn(ClassLabel) -> bool| -> Vec<Detection> {
                sorted
                    .iter()
                    .filter(|d| pred(d.label) && is_contained(&d.bbox, &grave.bbox))
                    .map(|d| (*d).clone())
                    .collect()
            };
            GraveTree {
                grave: (*grave).clone(),
                scale: nearest(grave, &scales).cloned(),
                north_arrow: nearest(grave, &arrows).cloned(),
                cross_section: nearest(grave, &sections).cloned(),
                skeletons: inside(|l| l == ClassLabel::Skeleton),
                artefacts: inside(ClassLabel::is_artefact),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Origin;
    use alloc::string::ToString;
    use alloc::vec;

    fn det(id: u64, label: ClassLabel, b: [f64; 4]) -> Detection {
        Detection {
            id,
            page_id: "p".to_string(),
            label,
            bbox: BBox::from_array(b),
            confidence: 1.0,
            origin: Origin::Synthetic,
            text: None,
        }
    }

    #[test]
    fn distance_basics() {
        let a = det(0, ClassLabel::Grave, [0., 0., 2., 2.]);
        let b = det(1, ClassLabel::Scale, [3., 4., 5., 6.]);
        assert_eq!(bbox_center_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(bbox_center_distance(&a, &b).unwrap(), 5.0);
        let mut c = b.clone();
        c.page_id = "q".to_string();
        assert_eq!(bbox_center_distance(&a, &c), Err(PageMismatch));
    }

    #[test]
    fn unique_candidates_are_assigned() {
        let dets = vec![
            det(0, ClassLabel::Grave, [100., 100., 300., 400.]),
            det(1, ClassLabel::Scale, [100., 450., 300., 470.]),
            det(2, ClassLabel::Arrow, [320., 100., 360., 160.]),
        ];
        let trees = assemble_graves(&dets);
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].scale.as_ref().unwrap().id, 1);
        assert_eq!(trees[0].north_arrow.as_ref().unwrap().id, 2);
        assert!(trees[0].cross_section.is_none());
    }

    #[test]
    fn one_scale_serves_two_graves() {
        let dets = vec![
            det(0, ClassLabel::Grave, [0., 0., 100., 100.]),
            det(1, ClassLabel::Grave, [300., 0., 400., 100.]),
            det(2, ClassLabel::Scale, [150., 40., 250., 60.]),
        ];
        let trees = assemble_graves(&dets);
        assert!(trees.iter().all(|t| t.scale.as_ref().unwrap().id == 2));
    }

    #[test]
    fn nearer_artefact_scale_wins() {
        // the grave's own scale sits further away than the one drawn for a pot
        let dets = vec![
            det(0, ClassLabel::Grave, [0., 0., 200., 200.]),
            det(1, ClassLabel::Scale, [0., 400., 200., 420.]),
            det(2, ClassLabel::Ceramics, [250., 0., 350., 100.]),
            det(3, ClassLabel::Scale, [250., 110., 350., 120.]),
        ];
        let trees = assemble_graves(&dets);
        assert_eq!(trees[0].scale.as_ref().unwrap().id, 3);
    }

    #[test]
    fn containment_needs_overlap_and_centre() {
        let grave = BBox::new(0., 0., 100., 100.);
        assert!(is_contained(&BBox::new(10., 10., 50., 50.), &grave));
        // 95 % inside, centre inside
        assert!(is_contained(&BBox::new(2., 10., 102., 20.), &grave));
        // half outside
        assert!(!is_contained(&BBox::new(80., 10., 120., 20.), &grave));
    }

    #[test]
    fn skeletons_and_artefacts_by_containment() {
        let dets = vec![
            det(0, ClassLabel::Grave, [0., 0., 100., 100.]),
            det(1, ClassLabel::Skeleton, [10., 10., 60., 90.]),
            det(2, ClassLabel::Skeleton, [150., 10., 200., 90.]),
            det(3, ClassLabel::ShaftAxe, [70., 70., 90., 90.]),
            det(4, ClassLabel::Map, [5., 5., 20., 20.]),
        ];
        let t = &assemble_graves(&dets)[0];
        assert_eq!(t.skeletons.iter().map(|d| d.id).collect::<Vec<_>>(), [1]);
        assert_eq!(t.artefacts.iter().map(|d| d.id).collect::<Vec<_>>(), [3]);
    }

    #[test]
    fn trees_follow_reading_order() {
        let dets = vec![
            det(0, ClassLabel::Grave, [0., 500., 100., 600.]),
            det(1, ClassLabel::Grave, [300., 0., 400., 100.]),
            det(2, ClassLabel::Grave, [0., 0., 100., 100.]),
        ];
        let ids: Vec<u64> = assemble_graves(&dets).iter().map(|t| t.grave.id).collect();
        assert_eq!(ids, [2, 1, 0]);
        assert!(assemble_graves(&[]).is_empty());
    }
}
