//! Detection records produced by an external object detector, plus the
//! confidence cut applied before grouping.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

/// Confidence below which detections are dropped.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.8;

/// Closed vocabulary of page object classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ClassLabel {
    Text,
    SkeletonPhoto,
    Ceramics,
    Artefact,
    GravePhoto,
    Map,
    Scale,
    Arrow,
    Grave,
    Skeleton,
    GraveArtefact,
    GraveCrossSection,
    StoneTool,
    ShaftAxe,
    Table,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 15] = [
        ClassLabel::Text,
        ClassLabel::SkeletonPhoto,
        ClassLabel::Ceramics,
        ClassLabel::Artefact,
        ClassLabel::GravePhoto,
        ClassLabel::Map,
        ClassLabel::Scale,
        ClassLabel::Arrow,
        ClassLabel::Grave,
        ClassLabel::Skeleton,
        ClassLabel::GraveArtefact,
        ClassLabel::GraveCrossSection,
        ClassLabel::StoneTool,
        ClassLabel::ShaftAxe,
        ClassLabel::Table,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Text => "text",
            ClassLabel::SkeletonPhoto => "skeleton_photo",
            ClassLabel::Ceramics => "ceramics",
            ClassLabel::Artefact => "artefact",
            ClassLabel::GravePhoto => "grave_photo",
            ClassLabel::Map => "map",
            ClassLabel::Scale => "scale",
            ClassLabel::Arrow => "arrow",
            ClassLabel::Grave => "grave",
            ClassLabel::Skeleton => "skeleton",
            ClassLabel::GraveArtefact => "grave_artefact",
            ClassLabel::GraveCrossSection => "grave_cross_section",
            ClassLabel::StoneTool => "stone_tool",
            ClassLabel::ShaftAxe => "shaft_axe",
            ClassLabel::Table => "table",
        }
    }

    /// Labels grouped under a grave by containment.
    pub fn is_artefact(self) -> bool {
        matches!(
            self,
            ClassLabel::Artefact
                | ClassLabel::GraveArtefact
                | ClassLabel::Ceramics
                | ClassLabel::StoneTool
                | ClassLabel::ShaftAxe
        )
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for ClassLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// Maps foreign label spellings onto the canonical vocabulary before validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAliases(BTreeMap<String, ClassLabel>);

impl Default for LabelAliases {
    /// Detector naming used by the burial-trained model.
    fn default() -> Self {
        let mut map = BTreeMap::new();
        map.insert("burial".to_string(), ClassLabel::Grave);
        map.insert("grave_photo".to_string(), ClassLabel::GravePhoto);
        map.insert("north_arrow".to_string(), ClassLabel::Arrow);
        map.insert("cross_section".to_string(), ClassLabel::GraveCrossSection);
        map.insert("stone_artefacts".to_string(), ClassLabel::StoneTool);
        Self(map)
    }
}

impl LabelAliases {
    pub fn empty() -> Self {
        Self(BTreeMap::new())
    }

    pub fn insert(&mut self, alias: impl Into<String>, label: ClassLabel) {
        self.0.insert(alias.into(), label);
    }

    pub fn resolve(&self, raw: &str) -> Result<ClassLabel, UnknownLabel> {
        match self.0.get(raw) {
            Some(l) => Ok(*l),
            None => raw.parse(),
        }
    }
}

/// Axis-aligned box in page pixels, `(x_min, y_min)` top-left.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Finite with strictly positive extent.
    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn clamped(&self, page_width: f64, page_height: f64) -> BBox {
        BBox::new(
            self.x_min.clamp(0.0, page_width),
            self.y_min.clamp(0.0, page_height),
            self.x_max.clamp(0.0, page_width),
            self.y_max.clamp(0.0, page_height),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Origin {
    Model,
    Manual,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detection {
    pub id: u64,
    pub page_id: String,
    pub label: ClassLabel,
    pub bbox: BBox,
    pub confidence: f64,
    pub origin: Origin,
    /// Text read from the object, when the producer already knows it
    /// (e.g. a scale label).
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectionError {
    #[error("bbox {0:?} is empty or not finite")]
    InvalidBBox([f64; 4]),
    #[error("bbox {0:?} lies outside the page")]
    OutsidePage([f64; 4]),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
}

impl Detection {
    /// Validates a raw detection against its page: clamps the box to
    /// `[0, w] x [0, h]` and pins manual detections to confidence 1.
    pub fn validated(
        id: u64,
        page_id: impl Into<String>,
        label: ClassLabel,
        bbox: BBox,
        confidence: f64,
        origin: Origin,
        page_size: (u32, u32),
    ) -> Result<Self, DetectionError> {
        if !bbox.to_array().iter().all(|v| v.is_finite()) || bbox.width() <= 0.0 || bbox.height() <= 0.0
        {
            return Err(DetectionError::InvalidBBox(bbox.to_array()));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(DetectionError::InvalidConfidence(confidence));
        }
        let clamped = bbox.clamped(page_size.0 as f64, page_size.1 as f64);
        if !clamped.is_valid() {
            return Err(DetectionError::OutsidePage(bbox.to_array()));
        }
        let confidence = if origin == Origin::Manual { 1.0 } else { confidence };
        Ok(Self {
            id,
            page_id: page_id.into(),
            label,
            bbox: clamped,
            confidence,
            origin,
            text: None,
        })
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }
}

/// Keeps detections with `confidence >= threshold`, in input order.
pub fn filter_by_confidence(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.confidence >= threshold)
        .cloned()
        .collect()
}
