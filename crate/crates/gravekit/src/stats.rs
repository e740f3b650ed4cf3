//! Document-level statistics: orientation roses, outline stacks, EFD
//! coefficients and their PCA projection.

use gravekit_core::morpho::{efd, pca_project, EfdCoefficients, EfdError, PcaError, PcaModel, DEFAULT_HARMONICS};
use gravekit_core::orient::{rose_histogram, OrientError};
use gravekit_core::Point;
use serde::Serialize;

use crate::records::GraveRecord;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error(transparent)]
    Orient(#[from] OrientError),
    #[error("record {record_id}: {source}")]
    Efd { record_id: String, source: EfdError },
    #[error(transparent)]
    Pca(#[from] PcaError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rose {
    pub sector_deg: u32,
    pub n: usize,
    pub counts: Vec<usize>,
}

pub fn rose(records: &[&GraveRecord], sector_deg: u32) -> Result<Rose, StatsError> {
    let bearings: Vec<f64> = records
        .iter()
        .flat_map(|r| r.skeletons.iter().filter_map(|s| s.bearing_deg))
        .collect();
    let counts = rose_histogram(&bearings, sector_deg)?;
    Ok(Rose {
        sector_deg,
        n: bearings.len(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlineEntry {
    pub record_id: String,
    pub grave_id: Option<String>,
    pub points: Vec<Point>,
}

/// Outlines in centimetres; records measured with a manual box have none.
pub fn outlines(records: &[&GraveRecord]) -> Vec<OutlineEntry> {
    records
        .iter()
        .filter(|r| !r.manual_box)
        .filter_map(|r| {
            r.outline.as_ref().map(|o| OutlineEntry {
                record_id: r.record_id.clone(),
                grave_id: r.publication_grave_id.clone(),
                points: o.points.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EfdMode {
    /// Coefficients of the outline as normalized by the workflow.
    #[default]
    Workflow,
    /// Additionally normalized by the first harmonic (rotation and start point).
    FirstHarmonic,
}

pub fn coefficients(
    records: &[&GraveRecord],
    harmonics: usize,
    mode: EfdMode,
) -> Result<Vec<(String, EfdCoefficients)>, StatsError> {
    outlines(records)
        .into_iter()
        .map(|o| {
            let c = efd(&o.points, harmonics).map_err(|source| StatsError::Efd {
                record_id: o.record_id.clone(),
                source,
            })?;
            let c = match mode {
                EfdMode::Workflow => c,
                EfdMode::FirstHarmonic => c.first_harmonic_normalized(false),
            };
            Ok((o.record_id, c))
        })
        .collect()
}

pub fn coefficient_header(harmonics: usize) -> Vec<String> {
    let mut h = vec!["record_id".to_string()];
    for n in 1..=harmonics {
        for c in ["a", "b", "c", "d"] {
            h.push(format!("{c}{n}"));
        }
    }
    h
}

pub fn coefficients_csv(rows: &[(String, EfdCoefficients)], harmonics: usize) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(coefficient_header(harmonics)).expect("write to memory");
    for (id, c) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(c.feature_vector().iter().map(|v| v.to_string()));
        w.write_record(rec).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaResult {
    #[serde(skip)]
    pub model: PcaModel,
    pub explained_variance: Vec<f64>,
    pub points: Vec<(String, Vec<f64>)>,
}

pub fn pca(rows: &[(String, EfdCoefficients)], k: usize) -> Result<PcaResult, StatsError> {
    let data: Vec<Vec<f64>> = rows.iter().map(|(_, c)| c.feature_vector()).collect();
    let (model, proj) = pca_project(&data, k)?;
    Ok(PcaResult {
        explained_variance: model.explained_variance.clone(),
        model,
        points: rows.iter().map(|(id, _)| id.clone()).zip(proj).collect(),
    })
}

pub fn pca_csv(result: &PcaResult) -> String {
    let k = result.explained_variance.len();
    let mut out = String::from("# explained_variance");
    for v in &result.explained_variance {
        out.push(',');
        out.push_str(&v.to_string());
    }
    out.push('\n');
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["record_id".to_string()];
    header.extend((1..=k).map(|i| format!("pc{i}")));
    w.write_record(header).expect("write to memory");
    for (id, p) in &result.points {
        let mut rec = vec![id.clone()];
        rec.extend(p.iter().map(|v| v.to_string()));
        w.write_record(rec).expect("write to memory");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
    out
}

pub const HARMONICS: usize = DEFAULT_HARMONICS;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers() {
        let h = coefficient_header(15);
        assert_eq!(h.len(), 61);
        assert_eq!((h[1].as_str(), h[4].as_str(), h[60].as_str()), ("a1", "d1", "d15"));
    }

    #[test]
    fn pca_csv_layout() {
        let shape = |s: f64| -> Vec<Point> {
            (0..64)
                .map(|i| {
                    let t = i as f64 / 64.0 * std::f64::consts::TAU;
                    Point::new(s * t.cos(), (1.0 + s) * t.sin() + 0.1 * (3.0 * t).cos())
                })
                .collect()
        };
        let rows: Vec<(String, EfdCoefficients)> = (1..5)
            .map(|i| (format!("r{i}"), efd(&shape(i as f64), 15).unwrap()))
            .collect();
        let csv = coefficients_csv(&rows, 15);
        assert_eq!(csv.lines().count(), 5);
        let text = pca_csv(&pca(&rows, 2).unwrap());
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# explained_variance,"));
        assert_eq!(lines[1], "record_id,pc1,pc2");
        assert_eq!(lines.len(), 6);
    }
}
