//! Engine shared by the HTTP server and the CLI: a store plus pipeline
//! configuration, with one method per public operation.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use gravekit_core::detect::{filter_by_confidence, LabelAliases};
use gravekit_core::workflow::Action;
use gravekit_core::{assemble_graves, BBox, GrayRaster};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detections::{parse_detections, ParseError};
use crate::export::{self, Format};
use crate::ingest::{encode_png, Document, NewDocument};
use crate::pipeline::{Adapters, PageContext};
use crate::records::{create_record, transition, GraveRecord, RecordError, TransitionEnv};
use crate::stats::{self, EfdMode, StatsError};
use crate::store::{Store, StoreError};

pub const DEFAULT_CONFIDENCE: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("no open record left in document {0}")]
    QueueEmpty(String),
    #[error("{0}")]
    BadRequest(String),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub confidence_threshold: f64,
    pub aliases: LabelAliases,
    pub adapters: Adapters,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE,
            aliases: LabelAliases::default(),
            adapters: Adapters::default(),
        }
    }
}

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

pub struct Engine {
    store: Mutex<Store>,
    config: EngineConfig,
    clock: Clock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssembleReport {
    pub document_id: String,
    pub pages: usize,
    pub graves: usize,
    pub new_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crops {
    pub grave: String,
    pub scale: Option<String>,
    pub north_arrow: Option<String>,
    pub cross_section: Option<String>,
}

/// What a client needs to render one record without further lookups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueItem {
    pub record: GraveRecord,
    pub page_image_url: String,
    pub crops: Crops,
}

/// One scripted workflow action, as read from a corrections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Correction {
    pub record_id: String,
    /// Expected version; the current one when absent.
    #[serde(default)]
    pub version: Option<u64>,
    pub action: Action,
    #[serde(default)]
    pub payload: Value,
}

pub fn crop_url(page_id: &str, b: &BBox) -> String {
    format!(
        "/pages/{page_id}/crop?bbox={},{},{},{}",
        b.x_min, b.y_min, b.x_max, b.y_max
    )
}

impl Engine {
    pub fn new(store: Store, config: EngineConfig) -> Self {
        Self::with_clock(store, config, system_clock())
    }

    pub fn with_clock(store: Store, config: EngineConfig, clock: Clock) -> Self {
        Self {
            store: Mutex::new(store),
            config,
            clock,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn lock(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn import_document(&self, doc: &NewDocument) -> Result<Document, ServiceError> {
        Ok(self.lock().import_document(doc)?)
    }

    pub fn document(&self, id: &str) -> Result<Document, ServiceError> {
        Ok(self.lock().document(id)?)
    }

    pub fn pages(&self, document_id: &str) -> Result<Vec<crate::ingest::Page>, ServiceError> {
        let store = self.lock();
        store.document(document_id)?;
        Ok(store.pages(document_id)?)
    }

    /// Parses and stores detection lines for pages of `document_id`.
    pub fn import_detections(&self, document_id: &str, text: &str) -> Result<usize, ServiceError> {
        let mut store = self.lock();
        let sizes: HashMap<String, (u32, u32)> = store
            .pages(document_id)?
            .into_iter()
            .map(|p| (p.id, (p.width_px, p.height_px)))
            .collect();
        let mut next = store.next_detection_id()?;
        let dets = parse_detections(
            text,
            &self.config.aliases,
            |pid| sizes.get(pid).copied(),
            || {
                next += 1;
                next - 1
            },
        )?;
        store.insert_detections(&dets)?;
        Ok(dets.len())
    }

    /// Groups the confident detections of every page and creates a record
    /// for each grave that has none yet.
    pub fn assemble(&self, document_id: &str) -> Result<AssembleReport, ServiceError> {
        let pages = self.lock().pages(document_id)?;
        let mut report = AssembleReport {
            document_id: document_id.to_string(),
            pages: pages.len(),
            graves: 0,
            new_records: 0,
        };
        let doc = self.document(document_id)?;
        for page in &pages {
            // one lock per page so readers are not starved on long documents
            let mut store = self.lock();
            let detections = store.page_detections(&page.id)?;
            let trees = assemble_graves(&filter_by_confidence(&detections, self.config.confidence_threshold));
            report.graves += trees.len();
            if trees.is_empty() {
                continue;
            }
            let raster = store.page_raster(&page.id)?;
            let ctx = self.context(&raster, &detections, &doc);
            for tree in &trees {
                if store.has_record_for_grave(document_id, tree.grave.id)? {
                    continue;
                }
                let r = create_record(tree, document_id, page.index, &ctx, (self.clock)());
                store.insert_record(&r)?;
                report.new_records += 1;
            }
        }
        Ok(report)
    }

    fn context<'a>(&'a self, raster: &'a GrayRaster, detections: &'a [gravekit_core::Detection], doc: &Document) -> PageContext<'a> {
        PageContext {
            raster,
            detections,
            scale: doc.scale_config(),
            confidence_threshold: self.config.confidence_threshold,
            adapters: &self.config.adapters,
        }
    }

    pub fn record(&self, id: &str) -> Result<GraveRecord, ServiceError> {
        Ok(self.lock().record(id)?)
    }

    pub fn records(&self, document_id: &str) -> Result<Vec<GraveRecord>, ServiceError> {
        let store = self.lock();
        store.document(document_id)?;
        Ok(store.document_records(document_id)?)
    }

    /// First open record by (page, y, x).
    pub fn next_in_queue(&self, document_id: &str) -> Result<QueueItem, ServiceError> {
        let records = self.records(document_id)?;
        let r = records
            .into_iter()
            .find(|r| r.status.is_open())
            .ok_or_else(|| ServiceError::QueueEmpty(document_id.to_string()))?;
        Ok(queue_item(r))
    }

    /// Applies one workflow action atomically under optimistic versioning.
    pub fn apply_step(
        &self,
        record_id: &str,
        version: Option<u64>,
        action: Action,
        payload: &Value,
    ) -> Result<GraveRecord, ServiceError> {
        let mut store = self.lock();
        let record = store.record(record_id)?;
        if let Some(v) = version {
            if v != record.version {
                return Err(StoreError::StaleVersion {
                    expected: v,
                    actual: record.version,
                }
                .into());
            }
        }
        let doc = store.document(&record.document_id)?;
        let raster = store.page_raster(&record.page_id)?;
        let detections = store.page_detections(&record.page_id)?;
        // only the id named in the payload can collide
        let mut taken = BTreeSet::new();
        if let Some(id) = payload.get("publication_grave_id").and_then(Value::as_str) {
            if store.grave_id_taken(&record.document_id, id, &record.record_id)? {
                taken.insert(id.to_string());
            }
        }
        let ctx = self.context(&raster, &detections, &doc);
        let mut next_id = || store.next_detection_id().expect("detection id counter");
        let mut env = TransitionEnv {
            ctx: &ctx,
            id_taken: &|id: &str| taken.contains(id),
            next_detection_id: &mut next_id,
            now_ms: (self.clock)(),
        };
        let updated = transition(&record, action, payload, &mut env)?;
        store.update_record(&updated, record.version)?;
        Ok(updated)
    }

    /// Applies corrections in order, stopping at the first failure.
    pub fn validate_batch(&self, corrections: &[Correction]) -> Result<usize, (usize, ServiceError)> {
        for (i, c) in corrections.iter().enumerate() {
            self.apply_step(&c.record_id, c.version, c.action, &c.payload)
                .map_err(|e| (i, e))?;
        }
        Ok(corrections.len())
    }

    pub fn export(&self, document_id: &str, format: Format, include_all: bool) -> Result<String, ServiceError> {
        Ok(export::export(&self.records(document_id)?, format, include_all))
    }

    pub fn rose(&self, document_id: &str, sector_deg: u32, include_all: bool) -> Result<stats::Rose, ServiceError> {
        let records = self.records(document_id)?;
        Ok(stats::rose(&export::select(&records, include_all), sector_deg)?)
    }

    pub fn outlines(&self, document_id: &str, include_all: bool) -> Result<Vec<stats::OutlineEntry>, ServiceError> {
        let records = self.records(document_id)?;
        Ok(stats::outlines(&export::select(&records, include_all)))
    }

    pub fn pca(&self, document_id: &str, k: usize, include_all: bool, mode: EfdMode) -> Result<stats::PcaResult, ServiceError> {
        let records = self.records(document_id)?;
        let coeffs = stats::coefficients(&export::select(&records, include_all), stats::HARMONICS, mode)?;
        Ok(stats::pca(&coeffs, k)?)
    }

    pub fn coefficients_csv(&self, document_id: &str, include_all: bool, mode: EfdMode) -> Result<String, ServiceError> {
        let records = self.records(document_id)?;
        let coeffs = stats::coefficients(&export::select(&records, include_all), stats::HARMONICS, mode)?;
        Ok(stats::coefficients_csv(&coeffs, stats::HARMONICS))
    }

    pub fn page_image(&self, page_id: &str) -> Result<Vec<u8>, ServiceError> {
        Ok(self.lock().page_image(page_id)?)
    }

    pub fn page_crop(&self, page_id: &str, bbox: &BBox) -> Result<Vec<u8>, ServiceError> {
        let raster = self.lock().page_raster(page_id)?;
        let (crop, _) = raster
            .crop(bbox)
            .ok_or_else(|| ServiceError::BadRequest("crop box does not overlap the page".into()))?;
        Ok(encode_png(&crop))
    }
}

fn queue_item(record: GraveRecord) -> QueueItem {
    let t = &record.tree;
    let pid = &record.page_id;
    let crops = Crops {
        grave: crop_url(pid, &t.grave.bbox),
        scale: t.scale.as_ref().map(|d| crop_url(pid, &d.bbox)),
        north_arrow: t.north_arrow.as_ref().map(|d| crop_url(pid, &d.bbox)),
        cross_section: t.cross_section.as_ref().map(|d| crop_url(pid, &d.bbox)),
    };
    QueueItem {
        page_image_url: format!("/pages/{pid}/image"),
        crops,
        record,
    }
}

/// Parses a corrections file: one JSON object per non-blank line.
pub fn parse_corrections(text: &str) -> Result<Vec<Correction>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{PageInput, ScaleConfig};
    use crate::synth::{self, NorthInput, SynthParams, Tolerances};

    fn engine_with_synth(seed: u64, pages: u32) -> (Engine, Vec<synth::PageTruth>, String) {
        let engine = Engine::with_clock(Store::open_in_memory().unwrap(), EngineConfig::default(), Arc::new(|| 1000));
        let params = SynthParams::default();
        let doc_id = synth::document_id_for(seed);
        let generated: Vec<_> = (0..pages)
            .map(|i| synth::generate_page(seed, i, &params, &doc_id).unwrap())
            .collect();
        engine
            .import_document(&NewDocument {
                id: Some(doc_id.clone()),
                title: "t".into(),
                source_ref: "s".into(),
                scale: ScaleConfig::per_drawing(),
                pages: generated.iter().map(|p| PageInput { image: p.png(), dpi: None }).collect(),
            })
            .unwrap();
        let lines: String = generated.iter().map(|p| p.detection_lines()).collect();
        engine.import_detections(&doc_id, &lines).unwrap();
        (engine, generated.into_iter().map(|p| p.truth).collect(), doc_id)
    }

    #[test]
    fn synthetic_round_trip() {
        let (engine, truth, doc) = engine_with_synth(11, 6);
        let rep = engine.assemble(&doc).unwrap();
        let n: usize = truth.iter().map(|p| p.graves.len()).sum();
        assert_eq!((rep.graves, rep.new_records), (n, n));
        assert_eq!(engine.assemble(&doc).unwrap().new_records, 0);
        let first = engine.next_in_queue(&doc).unwrap();
        assert!(first.page_image_url.ends_with("/image"));
        engine
            .validate_batch(&synth::scripted_corrections(&truth, &doc, NorthInput::Manual))
            .unwrap();
        assert!(matches!(engine.next_in_queue(&doc), Err(ServiceError::QueueEmpty(_))));
        let csv = engine.export(&doc, Format::Csv, false).unwrap();
        let rows = export::import_rows(&csv, Format::Csv).unwrap();
        assert_eq!(rows.len(), n);
        let tol = Tolerances { bearing_deg: 1.0, ..Tolerances::default() };
        let score = synth::score_against_truth(&rows, &truth, tol).unwrap();
        for g in &score.graves {
            assert!(g.pass, "{g:?}");
        }
    }

    #[test]
    fn stale_version_leaves_record() {
        let (engine, _, doc) = engine_with_synth(3, 1);
        engine.assemble(&doc).unwrap();
        let item = engine.next_in_queue(&doc).unwrap();
        let id = item.record.record_id.clone();
        let payload = serde_json::json!({"publication_grave_id": "X1"});
        let a = engine.apply_step(&id, Some(1), Action::Advance, &payload).unwrap();
        assert_eq!(a.version, 2);
        let err = engine.apply_step(&id, Some(1), Action::Advance, &Value::Null).unwrap_err();
        assert!(matches!(err, ServiceError::Store(StoreError::StaleVersion { expected: 1, actual: 2 })));
        assert_eq!(engine.record(&id).unwrap(), a);
        let err = engine.apply_step(&id, Some(2), Action::Advance, &serde_json::json!({"spines": 3})).unwrap_err();
        assert!(matches!(err, ServiceError::Record(RecordError::Payload(_))));
        assert_eq!(engine.record(&id).unwrap(), a);
    }
}
