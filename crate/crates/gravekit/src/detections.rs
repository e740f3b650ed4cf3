//! Detection JSON lines: one object per line with `page_id`, `label`,
//! `bbox` (`[x_min, y_min, x_max, y_max]` in pixels) and `confidence`.
//! `id`, `origin` and `text` are optional.

use gravekit_core::detect::{DetectionError, LabelAliases};
use gravekit_core::{BBox, Detection, Origin};
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: unknown page {page_id:?}")]
    UnknownPage { line: usize, page_id: String },
}

impl ParseError {
    fn schema(line: usize, field: &'static str, message: impl Into<String>) -> Self {
        ParseError::Schema {
            line,
            field,
            message: message.into(),
        }
    }
}

/// Parses detection lines. `page_size` returns the pixel size of a known
/// page; `next_id` supplies ids for lines that carry none. Blank lines are
/// skipped; line numbers in errors are 1-based.
pub fn parse_detections(
    text: &str,
    aliases: &LabelAliases,
    mut page_size: impl FnMut(&str) -> Option<(u32, u32)>,
    mut next_id: impl FnMut() -> u64,
) -> Result<Vec<Detection>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw)
            .map_err(|e| ParseError::schema(line, "<line>", e.to_string()))?;
        let Value::Object(obj) = value else {
            return Err(ParseError::schema(line, "<line>", "expected a JSON object"));
        };
        let det = parse_object(&obj, line, aliases, &mut page_size, &mut next_id)?;
        out.push(det);
    }
    Ok(out)
}

fn parse_object(
    obj: &Map<String, Value>,
    line: usize,
    aliases: &LabelAliases,
    page_size: &mut impl FnMut(&str) -> Option<(u32, u32)>,
    next_id: &mut impl FnMut() -> u64,
) -> Result<Detection, ParseError> {
    let page_id = obj
        .get("page_id")
        .and_then(Value::as_str)
        .ok_or_else(|| ParseError::schema(line, "page_id", "missing or not a string"))?;
    let raw_label = obj
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| ParseError::schema(line, "label", "missing or not a string"))?;
    let label = aliases.resolve(raw_label).map_err(|e| ParseError::UnknownLabel {
        line,
        label: e.0,
    })?;
    let bbox = match obj.get("bbox") {
        Some(Value::Array(a)) if a.len() == 4 => {
            let mut v = [0.0; 4];
            for (slot, x) in v.iter_mut().zip(a) {
                *slot = x
                    .as_f64()
                    .ok_or_else(|| ParseError::schema(line, "bbox", "entries must be numbers"))?;
            }
            BBox::from_array(v)
        }
        _ => return Err(ParseError::schema(line, "bbox", "expected an array of 4 numbers")),
    };
    let confidence = obj
        .get("confidence")
        .and_then(Value::as_f64)
        .ok_or_else(|| ParseError::schema(line, "confidence", "missing or not a number"))?;
    let origin = match obj.get("origin") {
        None | Some(Value::Null) => Origin::Model,
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|_| ParseError::schema(line, "origin", "expected model, manual or synthetic"))?,
    };
    let id = match obj.get("id") {
        None | Some(Value::Null) => next_id(),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| ParseError::schema(line, "id", "expected a non-negative integer"))?,
    };
    let text = match obj.get("text") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(ParseError::schema(line, "text", "expected a string")),
    };
    let size = page_size(page_id).ok_or_else(|| ParseError::UnknownPage {
        line,
        page_id: page_id.to_string(),
    })?;
    let mut det = Detection::validated(id, page_id, label, bbox, confidence, origin, size)
        .map_err(|e| match e {
            DetectionError::InvalidConfidence(_) => {
                ParseError::schema(line, "confidence", e.to_string())
            }
            _ => ParseError::schema(line, "bbox", e.to_string()),
        })?;
    det.text = text;
    Ok(det)
}

#[derive(Serialize)]
struct Line<'a> {
    id: u64,
    page_id: &'a str,
    label: &'a str,
    bbox: [f64; 4],
    confidence: f64,
    origin: Origin,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
}

pub fn serialize_detection(d: &Detection) -> String {
    serde_json::to_string(&Line {
        id: d.id,
        page_id: &d.page_id,
        label: d.label.as_str(),
        bbox: d.bbox.to_array(),
        confidence: d.confidence,
        origin: d.origin,
        text: d.text.as_deref(),
    })
    .expect("detection lines always serialize")
}

/// One line per detection, each terminated by a newline.
pub fn serialize_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        out.push_str(&serialize_detection(d));
        out.push('\n');
    }
    out
}
