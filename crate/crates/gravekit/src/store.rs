//! Single-file SQLite store: documents, page images, detections, records
//! and the append-only edit log.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Arc;

use gravekit_core::{Detection, GrayRaster};
use rusqlite::{params, Connection, OptionalExtension, Transaction};

use crate::ingest::{decode_raster, prepare_import, Document, IngestError, NewDocument, Page, ScaleMode};
use crate::records::GraveRecord;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("corrupt stored value: {0}")]
    Corrupt(String),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("unknown page {0:?}")]
    UnknownPage(String),
    #[error("unknown record {0:?}")]
    UnknownRecord(String),
    #[error("document {0:?} already exists")]
    DuplicateDocument(String),
    #[error("detection id {0} already exists")]
    DuplicateDetection(u64),
    #[error("record {0:?} already exists")]
    DuplicateRecord(String),
    #[error("grave id {0:?} is already used in this document")]
    DuplicateGraveId(String),
    #[error("record was modified: expected version {expected}, stored version {actual}")]
    StaleVersion { expected: u64, actual: u64 },
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS documents (
    id TEXT PRIMARY KEY,
    title TEXT NOT NULL,
    source_ref TEXT NOT NULL,
    page_count INTEGER NOT NULL,
    scale_mode TEXT NOT NULL,
    fixed_ratio REAL,
    page_height_cm REAL
);
CREATE TABLE IF NOT EXISTS pages (
    id TEXT PRIMARY KEY,
    document_id TEXT NOT NULL REFERENCES documents(id),
    idx INTEGER NOT NULL,
    width_px INTEGER NOT NULL,
    height_px INTEGER NOT NULL,
    dpi REAL,
    image BLOB NOT NULL,
    UNIQUE (document_id, idx)
);
CREATE TABLE IF NOT EXISTS detections (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    id INTEGER NOT NULL UNIQUE,
    page_id TEXT NOT NULL REFERENCES pages(id),
    json TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS detections_page ON detections(page_id);
CREATE TABLE IF NOT EXISTS records (
    id TEXT PRIMARY KEY,
    document_id TEXT NOT NULL REFERENCES documents(id),
    grave_detection_id INTEGER NOT NULL,
    page_index INTEGER NOT NULL,
    y_min REAL NOT NULL,
    x_min REAL NOT NULL,
    status TEXT NOT NULL,
    publication_grave_id TEXT,
    version INTEGER NOT NULL,
    json TEXT NOT NULL
);
CREATE UNIQUE INDEX IF NOT EXISTS records_live_grave_id
    ON records(document_id, publication_grave_id)
    WHERE publication_grave_id IS NOT NULL AND status <> 'discarded';
CREATE TABLE IF NOT EXISTS edit_log (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    record_id TEXT NOT NULL REFERENCES records(id),
    ts_ms INTEGER NOT NULL,
    step INTEGER,
    action TEXT NOT NULL,
    change TEXT NOT NULL
);
CREATE TRIGGER IF NOT EXISTS edit_log_append_only_u BEFORE UPDATE ON edit_log
    BEGIN SELECT RAISE(ABORT, 'edit log is append-only'); END;
CREATE TRIGGER IF NOT EXISTS edit_log_append_only_d BEFORE DELETE ON edit_log
    BEGIN SELECT RAISE(ABORT, 'edit log is append-only'); END;
";

const CACHE_PAGES: usize = 8;

pub struct Store {
    conn: Connection,
    cache: HashMap<String, Arc<GrayRaster>>,
    lru: VecDeque<String>,
}

fn json_err(e: serde_json::Error) -> StoreError {
    StoreError::Corrupt(e.to_string())
}

fn is_unique_violation(e: &rusqlite::Error) -> bool {
    matches!(
        e,
        rusqlite::Error::SqliteFailure(f, _)
            if f.extended_code == rusqlite::ffi::SQLITE_CONSTRAINT_UNIQUE
                || f.extended_code == rusqlite::ffi::SQLITE_CONSTRAINT_PRIMARYKEY
    )
}

fn scale_mode_str(m: ScaleMode) -> &'static str {
    match m {
        ScaleMode::PerDrawing => "per_drawing",
        ScaleMode::FixedRatio => "fixed_ratio",
    }
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        Self::init(Connection::open(path)?)
    }

    pub fn open_in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.execute_batch("PRAGMA foreign_keys = ON;")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn,
            cache: HashMap::new(),
            lru: VecDeque::new(),
        })
    }

    fn bump(tx: &Transaction<'_>, key: &str) -> Result<u64, StoreError> {
        tx.execute(
            "INSERT INTO meta(key, value) VALUES (?1, 1)
             ON CONFLICT(key) DO UPDATE SET value = value + 1",
            [key],
        )?;
        Ok(tx.query_row("SELECT value FROM meta WHERE key = ?1", [key], |r| r.get::<_, i64>(0))? as u64)
    }

    /// Registers a document and all of its pages, or nothing.
    pub fn import_document(&mut self, doc: &NewDocument) -> Result<Document, StoreError> {
        let rasters = prepare_import(doc)?;
        let tx = self.conn.transaction()?;
        let id = match &doc.id {
            Some(id) => id.clone(),
            None => loop {
                let candidate = format!("doc{}", Self::bump(&tx, "next_document")?);
                let taken: bool = tx.query_row(
                    "SELECT EXISTS(SELECT 1 FROM documents WHERE id = ?1)",
                    [&candidate],
                    |r| r.get(0),
                )?;
                if !taken {
                    break candidate;
                }
            },
        };
        let document = Document {
            id: id.clone(),
            title: doc.title.clone(),
            source_ref: doc.source_ref.clone(),
            page_count: rasters.len() as u32,
            scale_mode: doc.scale.scale_mode,
            fixed_ratio: doc.scale.fixed_ratio,
            page_height_cm: doc.scale.page_height_cm,
        };
        tx.execute(
            "INSERT INTO documents VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
            params![
                document.id,
                document.title,
                document.source_ref,
                document.page_count,
                scale_mode_str(document.scale_mode),
                document.fixed_ratio,
                document.page_height_cm
            ],
        )
        .map_err(|e| {
            if is_unique_violation(&e) {
                StoreError::DuplicateDocument(id.clone())
            } else {
                e.into()
            }
        })?;
        for (i, (input, raster)) in doc.pages.iter().zip(&rasters).enumerate() {
            tx.execute(
                "INSERT INTO pages VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                params![
                    page_id(&id, i as u32),
                    id,
                    i as u32,
                    raster.width(),
                    raster.height(),
                    input.dpi,
                    input.image
                ],
            )?;
        }
        tx.commit()?;
        Ok(document)
    }

    pub fn document(&self, id: &str) -> Result<Document, StoreError> {
        self.conn
            .query_row(
                "SELECT id, title, source_ref, page_count, scale_mode, fixed_ratio, page_height_cm
                 FROM documents WHERE id = ?1",
                [id],
                |r| {
                    let mode: String = r.get(4)?;
                    Ok(Document {
                        id: r.get(0)?,
                        title: r.get(1)?,
                        source_ref: r.get(2)?,
                        page_count: r.get(3)?,
                        scale_mode: if mode == "fixed_ratio" {
                            ScaleMode::FixedRatio
                        } else {
                            ScaleMode::PerDrawing
                        },
                        fixed_ratio: r.get(5)?,
                        page_height_cm: r.get(6)?,
                    })
                },
            )
            .optional()?
            .ok_or_else(|| StoreError::UnknownDocument(id.to_string()))
    }

    pub fn documents(&self) -> Result<Vec<String>, StoreError> {
        let mut stmt = self.conn.prepare("SELECT id FROM documents ORDER BY id")?;
        let ids = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        Ok(ids)
    }

    fn page_from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<Page> {
        Ok(Page {
            id: r.get(0)?,
            document_id: r.get(1)?,
            index: r.get(2)?,
            width_px: r.get(3)?,
            height_px: r.get(4)?,
            dpi: r.get(5)?,
            image_ref: format!("/pages/{}/image", r.get::<_, String>(0)?),
        })
    }

    pub fn pages(&self, document_id: &str) -> Result<Vec<Page>, StoreError> {
        self.document(document_id)?;
        let mut stmt = self.conn.prepare(
            "SELECT id, document_id, idx, width_px, height_px, dpi FROM pages
             WHERE document_id = ?1 ORDER BY idx",
        )?;
        let pages = stmt
            .query_map([document_id], Self::page_from_row)?
            .collect::<Result<_, _>>()?;
        Ok(pages)
    }

    pub fn page(&self, page_id: &str) -> Result<Page, StoreError> {
        self.conn
            .query_row(
                "SELECT id, document_id, idx, width_px, height_px, dpi FROM pages WHERE id = ?1",
                [page_id],
                Self::page_from_row,
            )
            .optional()?
            .ok_or_else(|| StoreError::UnknownPage(page_id.to_string()))
    }

    pub fn page_image(&self, page_id: &str) -> Result<Vec<u8>, StoreError> {
        self.conn
            .query_row("SELECT image FROM pages WHERE id = ?1", [page_id], |r| r.get(0))
            .optional()?
            .ok_or_else(|| StoreError::UnknownPage(page_id.to_string()))
    }

    /// Grayscale raster of a stored page; recently used pages stay decoded.
    pub fn page_raster(&mut self, page_id: &str) -> Result<Arc<GrayRaster>, StoreError> {
        if let Some(r) = self.cache.get(page_id) {
            let r = r.clone();
            self.lru.retain(|p| p != page_id);
            self.lru.push_back(page_id.to_string());
            return Ok(r);
        }
        let bytes = self.page_image(page_id)?;
        let raster = Arc::new(decode_raster(&bytes).map_err(StoreError::Corrupt)?);
        if self.lru.len() >= CACHE_PAGES {
            if let Some(old) = self.lru.pop_front() {
                self.cache.remove(&old);
            }
        }
        self.cache.insert(page_id.to_string(), raster.clone());
        self.lru.push_back(page_id.to_string());
        Ok(raster)
    }

    pub fn next_detection_id(&mut self) -> Result<u64, StoreError> {
        let tx = self.conn.transaction()?;
        let floor: i64 = tx.query_row("SELECT COALESCE(MAX(id), 0) FROM detections", [], |r| r.get(0))?;
        let mut id = Self::bump(&tx, "next_detection")?;
        if id <= floor as u64 {
            id = floor as u64 + 1;
            tx.execute("UPDATE meta SET value = ?1 WHERE key = 'next_detection'", [id as i64])?;
        }
        tx.commit()?;
        Ok(id)
    }

    /// Reserves `n` consecutive fresh detection ids.
    pub fn reserve_detection_ids(&mut self, n: u64) -> Result<u64, StoreError> {
        let first = self.next_detection_id()?;
        if n > 1 {
            self.conn.execute(
                "UPDATE meta SET value = value + ?1 WHERE key = 'next_detection'",
                [(n - 1) as i64],
            )?;
        }
        Ok(first)
    }

    /// Stores detections atomically; ids must be new.
    pub fn insert_detections(&mut self, dets: &[Detection]) -> Result<(), StoreError> {
        let tx = self.conn.transaction()?;
        for d in dets {
            let json = serde_json::to_string(d).map_err(json_err)?;
            tx.execute(
                "INSERT INTO detections(id, page_id, json) VALUES (?1, ?2, ?3)",
                params![d.id as i64, d.page_id, json],
            )
            .map_err(|e| {
                if is_unique_violation(&e) {
                    StoreError::DuplicateDetection(d.id)
                } else {
                    e.into()
                }
            })?;
        }
        tx.execute(
            "INSERT INTO meta(key, value) VALUES ('next_detection', (SELECT COALESCE(MAX(id), 0) FROM detections))
             ON CONFLICT(key) DO UPDATE SET value = MAX(value, excluded.value)",
            [],
        )?;
        tx.commit()?;
        Ok(())
    }

    /// Detections of a page in insertion order.
    pub fn page_detections(&self, page_id: &str) -> Result<Vec<Detection>, StoreError> {
        let mut stmt = self
            .conn
            .prepare("SELECT json FROM detections WHERE page_id = ?1 ORDER BY seq")?;
        let rows: Vec<String> = stmt.query_map([page_id], |r| r.get(0))?.collect::<Result<_, _>>()?;
        rows.iter()
            .map(|j| serde_json::from_str(j).map_err(json_err))
            .collect()
    }

    pub fn insert_record(&mut self, r: &GraveRecord) -> Result<(), StoreError> {
        let tx = self.conn.transaction()?;
        Self::write_record(&tx, r, None)?;
        tx.commit()?;
        Ok(())
    }

    fn write_record(tx: &Transaction<'_>, r: &GraveRecord, expected: Option<u64>) -> Result<(), StoreError> {
        let json = serde_json::to_string(r).map_err(json_err)?;
        let b = r.tree.grave.bbox;
        let status = r.status.as_str();
        let dup = |e: rusqlite::Error| -> StoreError {
            if is_unique_violation(&e) {
                match (&r.publication_grave_id, expected) {
                    (Some(id), Some(_)) => StoreError::DuplicateGraveId(id.clone()),
                    _ => StoreError::DuplicateRecord(r.record_id.clone()),
                }
            } else {
                e.into()
            }
        };
        let logged: usize = match expected {
            None => {
                tx.execute(
                    "INSERT INTO records VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
                    params![
                        r.record_id,
                        r.document_id,
                        r.tree.grave.id as i64,
                        r.page_index,
                        b.y_min,
                        b.x_min,
                        status,
                        r.publication_grave_id,
                        r.version as i64,
                        json
                    ],
                )
                .map_err(dup)?;
                0
            }
            Some(v) => {
                let n = tx
                    .execute(
                        "UPDATE records SET y_min = ?1, x_min = ?2, status = ?3,
                         publication_grave_id = ?4, version = ?5, json = ?6
                         WHERE id = ?7 AND version = ?8",
                        params![
                            b.y_min,
                            b.x_min,
                            status,
                            r.publication_grave_id,
                            r.version as i64,
                            json,
                            r.record_id,
                            v as i64
                        ],
                    )
                    .map_err(dup)?;
                if n == 0 {
                    let actual: Option<i64> = tx
                        .query_row("SELECT version FROM records WHERE id = ?1", [&r.record_id], |x| x.get(0))
                        .optional()?;
                    return Err(match actual {
                        Some(a) => StoreError::StaleVersion {
                            expected: v,
                            actual: a as u64,
                        },
                        None => StoreError::UnknownRecord(r.record_id.clone()),
                    });
                }
                tx.query_row(
                    "SELECT COUNT(*) FROM edit_log WHERE record_id = ?1",
                    [&r.record_id],
                    |x| x.get::<_, i64>(0),
                )? as usize
            }
        };
        for e in r.edit_log.iter().skip(logged) {
            tx.execute(
                "INSERT INTO edit_log(record_id, ts_ms, step, action, change) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![
                    r.record_id,
                    e.ts_ms as i64,
                    e.step,
                    e.action,
                    serde_json::to_string(&e.change).map_err(json_err)?
                ],
            )?;
        }
        Ok(())
    }

    /// Replaces a record if its stored version is still `expected_version`.
    pub fn update_record(&mut self, r: &GraveRecord, expected_version: u64) -> Result<(), StoreError> {
        let tx = self.conn.transaction()?;
        Self::write_record(&tx, r, Some(expected_version))?;
        tx.commit()?;
        Ok(())
    }

    pub fn record(&self, id: &str) -> Result<GraveRecord, StoreError> {
        let json: String = self
            .conn
            .query_row("SELECT json FROM records WHERE id = ?1", [id], |r| r.get(0))
            .optional()?
            .ok_or_else(|| StoreError::UnknownRecord(id.to_string()))?;
        serde_json::from_str(&json).map_err(json_err)
    }

    /// Records of a document in queue order: page, then grave position.
    pub fn document_records(&self, document_id: &str) -> Result<Vec<GraveRecord>, StoreError> {
        self.document(document_id)?;
        let mut stmt = self.conn.prepare(
            "SELECT json FROM records WHERE document_id = ?1
             ORDER BY page_index, y_min, x_min, grave_detection_id",
        )?;
        let rows: Vec<String> = stmt
            .query_map([document_id], |r| r.get(0))?
            .collect::<Result<_, _>>()?;
        rows.iter()
            .map(|j| serde_json::from_str(j).map_err(json_err))
            .collect()
    }

    pub fn has_record_for_grave(&self, document_id: &str, grave_detection_id: u64) -> Result<bool, StoreError> {
        Ok(self.conn.query_row(
            "SELECT EXISTS(SELECT 1 FROM records WHERE document_id = ?1 AND grave_detection_id = ?2)",
            params![document_id, grave_detection_id as i64],
            |r| r.get(0),
        )?)
    }

    /// Whether a live record other than `except` uses the grave id.
    pub fn grave_id_taken(&self, document_id: &str, grave_id: &str, except: &str) -> Result<bool, StoreError> {
        Ok(self.conn.query_row(
            "SELECT EXISTS(SELECT 1 FROM records WHERE document_id = ?1 AND publication_grave_id = ?2
             AND status <> 'discarded' AND id <> ?3)",
            params![document_id, grave_id, except],
            |r| r.get(0),
        )?)
    }

    /// Raw edit log rows of a record: (ts_ms, step, action).
    pub fn edit_log(&self, record_id: &str) -> Result<Vec<(u64, Option<u8>, String)>, StoreError> {
        let mut stmt = self
            .conn
            .prepare("SELECT ts_ms, step, action FROM edit_log WHERE record_id = ?1 ORDER BY seq")?;
        let rows = stmt
            .query_map([record_id], |r| Ok((r.get::<_, i64>(0)? as u64, r.get(1)?, r.get(2)?)))?
            .collect::<Result<_, _>>()?;
        Ok(rows)
    }
}

pub fn page_id(document_id: &str, index: u32) -> String {
    format!("{document_id}-p{index}")
}
