//! Percentage-deviation error between a candidate recording and a baseline.
//!
//! Each attribute present on both sides contributes `|c - b| / |b| * 100`;
//! bearings use the circular difference as a share of the full circle (360
//! for skeletons, 180 for grave axes). A grave's error is the sum of its
//! attribute deviations; the headline number is the mean over graves.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GraveMeasures {
    pub width_cm: Option<f64>,
    pub length_cm: Option<f64>,
    pub depth_cm: Option<f64>,
    pub grave_bearing_deg: Option<f64>,
    /// Per skeleton, matched by position.
    pub skeleton_bearings_deg: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Comparison {
    pub per_grave_error_pct: BTreeMap<String, f64>,
    pub mean_error_pct: f64,
    pub n_compared: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no grave ids appear in both recordings")]
pub struct NoMatchedGraves;

/// Smallest absolute difference between two angles on a circle of `period`.
pub fn circular_difference(a: f64, b: f64, period: f64) -> f64 {
    let d = math::rem_euclid(math::abs(a - b), period);
    d.min(period - d)
}

fn relative_pct(c: f64, b: f64) -> Option<f64> {
    if b == 0.0 {
        return (c == 0.0).then_some(0.0);
    }
    Some(math::abs(c - b) / math::abs(b) * 100.0)
}

/// Deviations in percent for every attribute present on both sides.
pub fn attribute_deviations(candidate: &GraveMeasures, baseline: &GraveMeasures) -> Vec<f64> {
    let mut out = Vec::new();
    let both = |c: Option<f64>, b: Option<f64>| c.zip(b);
    for (c, b) in [
        (candidate.width_cm, baseline.width_cm),
        (candidate.length_cm, baseline.length_cm),
        (candidate.depth_cm, baseline.depth_cm),
    ] {
        if let Some(d) = both(c, b).and_then(|(c, b)| relative_pct(c, b)) {
            out.push(d);
        }
    }
    if let Some((c, b)) = both(candidate.grave_bearing_deg, baseline.grave_bearing_deg) {
        out.push(circular_difference(c, b, 180.0) / 180.0 * 100.0);
    }
    for (c, b) in candidate
        .skeleton_bearings_deg
        .iter()
        .zip(&baseline.skeleton_bearings_deg)
    {
        if let Some((c, b)) = both(*c, *b) {
            out.push(circular_difference(c, b, 360.0) / 360.0 * 100.0);
        }
    }
    out
}

pub fn compare_to_baseline(
    candidate: &BTreeMap<String, GraveMeasures>,
    baseline: &BTreeMap<String, GraveMeasures>,
) -> Result<Comparison, NoMatchedGraves> {
    let per_grave_error_pct: BTreeMap<String, f64> = candidate
        .iter()
        .filter_map(|(id, c)| {
            baseline
                .get(id)
                .map(|b| (id.clone(), attribute_deviations(c, b).iter().sum()))
        })
        .collect();
    if per_grave_error_pct.is_empty() {
        return Err(NoMatchedGraves);
    }
    let n = per_grave_error_pct.len();
    let mean_error_pct = per_grave_error_pct.values().sum::<f64>() / n as f64;
    Ok(Comparison {
        per_grave_error_pct,
        mean_error_pct,
        n_compared: n,
    })
}
