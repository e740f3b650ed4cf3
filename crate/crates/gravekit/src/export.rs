//! CSV and JSON exports of grave records, their re-import, and comparison
//! of two exports.

use std::collections::BTreeMap;

use gravekit_core::metric::{compare_to_baseline, Comparison, GraveMeasures, NoMatchedGraves};
use gravekit_core::ValidationStatus;
use serde::{Deserialize, Serialize};

use crate::pipeline::Pose;
use crate::records::GraveRecord;

pub const FIXED_COLUMNS: [&str; 8] = [
    "document_id",
    "grave_id",
    "page",
    "width_cm",
    "length_cm",
    "depth_cm",
    "grave_bearing_deg",
    "n_skeletons",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown export format {s:?} (csv or json)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row}: column {column}: {message}")]
    Field {
        row: usize,
        column: String,
        message: String,
    },
    #[error("header does not match the export schema")]
    Header,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow {
    pub document_id: String,
    pub grave_id: String,
    pub page: u32,
    pub width_cm: Option<f64>,
    pub length_cm: Option<f64>,
    pub depth_cm: Option<f64>,
    pub grave_bearing_deg: Option<f64>,
    pub skeletons: Vec<(Pose, Option<f64>)>,
}

impl ExportRow {
    pub fn from_record(r: &GraveRecord) -> Self {
        Self {
            document_id: r.document_id.clone(),
            grave_id: r.publication_grave_id.clone().unwrap_or_default(),
            page: r.page_index,
            width_cm: r.measurements.width_cm,
            length_cm: r.measurements.length_cm,
            depth_cm: r.measurements.depth_cm,
            grave_bearing_deg: r.measurements.grave_bearing_deg,
            skeletons: r.skeletons.iter().map(|s| (s.pose, s.bearing_deg)).collect(),
        }
    }

    pub fn measures(&self) -> GraveMeasures {
        GraveMeasures {
            width_cm: self.width_cm,
            length_cm: self.length_cm,
            depth_cm: self.depth_cm,
            grave_bearing_deg: self.grave_bearing_deg,
            skeleton_bearings_deg: self.skeletons.iter().map(|s| s.1).collect(),
        }
    }
}

/// Validated records only unless `include_all`.
pub fn select<'a>(records: &'a [GraveRecord], include_all: bool) -> Vec<&'a GraveRecord> {
    records
        .iter()
        .filter(|r| include_all || r.status == ValidationStatus::Validated)
        .collect()
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

pub fn csv_header(max_skeletons: usize) -> Vec<String> {
    let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 1..=max_skeletons {
        h.push(format!("pose_{i}"));
        h.push(format!("skeleton_bearing_{i}_deg"));
    }
    h
}

pub fn write_csv(rows: &[ExportRow]) -> String {
    let max = rows.iter().map(|r| r.skeletons.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(csv_header(max)).expect("write to memory");
    for r in rows {
        let mut rec = vec![
            r.document_id.clone(),
            r.grave_id.clone(),
            r.page.to_string(),
            num(r.width_cm),
            num(r.length_cm),
            num(r.depth_cm),
            num(r.grave_bearing_deg),
            r.skeletons.len().to_string(),
        ];
        for i in 0..max {
            match r.skeletons.get(i) {
                Some((pose, b)) => {
                    rec.push(pose.as_str().to_string());
                    rec.push(num(*b));
                }
                None => {
                    rec.push(String::new());
                    rec.push(String::new());
                }
            }
        }
        w.write_record(rec).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv of utf-8 fields")
}

pub fn read_csv(text: &str) -> Result<Vec<ExportRow>, ImportError> {
    let mut rd = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.len() < FIXED_COLUMNS.len() || (header.len() - FIXED_COLUMNS.len()) % 2 != 0 {
        return Err(ImportError::Header);
    }
    let pairs = (header.len() - FIXED_COLUMNS.len()) / 2;
    if header != csv_header(pairs) {
        return Err(ImportError::Header);
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let field = |c: usize, message: String| ImportError::Field {
            row,
            column: header[c].clone(),
            message,
        };
        let opt = |c: usize| -> Result<Option<f64>, ImportError> {
            let s = &rec[c];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e: std::num::ParseFloatError| field(c, e.to_string()))
            }
        };
        let n: usize = rec[7].parse().map_err(|e: std::num::ParseIntError| field(7, e.to_string()))?;
        if n > pairs {
            return Err(field(7, format!("{n} skeletons but {pairs} column pairs")));
        }
        let mut skeletons = Vec::with_capacity(n);
        for k in 0..n {
            let c = FIXED_COLUMNS.len() + 2 * k;
            let pose = Pose::parse(&rec[c]).ok_or_else(|| field(c, format!("unknown pose {:?}", &rec[c])))?;
            skeletons.push((pose, opt(c + 1)?));
        }
        rows.push(ExportRow {
            document_id: rec[0].to_string(),
            grave_id: rec[1].to_string(),
            page: rec[2].parse().map_err(|e: std::num::ParseIntError| field(2, e.to_string()))?,
            width_cm: opt(3)?,
            length_cm: opt(4)?,
            depth_cm: opt(5)?,
            grave_bearing_deg: opt(6)?,
            skeletons,
        });
    }
    Ok(rows)
}

pub fn write_json(records: &[&GraveRecord]) -> String {
    let mut s = serde_json::to_string_pretty(records).expect("records serialize");
    s.push('\n');
    s
}

pub fn read_json(text: &str) -> Result<Vec<GraveRecord>, ImportError> {
    Ok(serde_json::from_str(text)?)
}

pub fn export(records: &[GraveRecord], format: Format, include_all: bool) -> String {
    let chosen = select(records, include_all);
    match format {
        Format::Csv => write_csv(&chosen.iter().map(|r| ExportRow::from_record(r)).collect::<Vec<_>>()),
        Format::Json => write_json(&chosen),
    }
}

/// Parses an export in either format back into rows.
pub fn import_rows(text: &str, format: Format) -> Result<Vec<ExportRow>, ImportError> {
    match format {
        Format::Csv => read_csv(text),
        Format::Json => Ok(read_json(text)?.iter().map(ExportRow::from_record).collect()),
    }
}

pub fn measures_by_grave(rows: &[ExportRow]) -> BTreeMap<String, GraveMeasures> {
    rows.iter()
        .filter(|r| !r.grave_id.is_empty())
        .map(|r| (r.grave_id.clone(), r.measures()))
        .collect()
}

pub fn compare_exports(candidate: &[ExportRow], baseline: &[ExportRow]) -> Result<Comparison, NoMatchedGraves> {
    compare_to_baseline(&measures_by_grave(candidate), &measures_by_grave(baseline))
}
