//! Documents and their rasterised pages.
//!
//! PDF rendering happens outside the engine (any renderer producing one PNG
//! per page, 150 dpi or more, will do); this module registers the resulting
//! images and hands out grayscale rasters.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use gravekit_core::GrayRaster;
use image::ImageEncoder;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("document has no pages")]
    EmptyDocument,
    #[error("invalid scale configuration: {0}")]
    InvalidScaleConfig(String),
    #[error("page {index} cannot be decoded: {reason}")]
    UndecodableRaster { index: usize, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    #[default]
    PerDrawing,
    FixedRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub source_ref: String,
    pub page_count: u32,
    pub scale_mode: ScaleMode,
    pub fixed_ratio: Option<f64>,
    pub page_height_cm: Option<f64>,
}

impl Document {
    pub fn scale_config(&self) -> ScaleConfig {
        ScaleConfig {
            scale_mode: self.scale_mode,
            fixed_ratio: self.fixed_ratio,
            page_height_cm: self.page_height_cm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub document_id: String,
    pub index: u32,
    pub width_px: u32,
    pub height_px: u32,
    pub dpi: Option<f64>,
    pub image_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ScaleConfig {
    pub scale_mode: ScaleMode,
    #[serde(default)]
    pub fixed_ratio: Option<f64>,
    #[serde(default)]
    pub page_height_cm: Option<f64>,
}

impl ScaleConfig {
    pub fn per_drawing() -> Self {
        Self::default()
    }

    pub fn fixed(ratio: f64, page_height_cm: f64) -> Self {
        Self {
            scale_mode: ScaleMode::FixedRatio,
            fixed_ratio: Some(ratio),
            page_height_cm: Some(page_height_cm),
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let positive = |v: Option<f64>| v.is_some_and(|v| v.is_finite() && v > 0.0);
        match self.scale_mode {
            ScaleMode::FixedRatio if !positive(self.fixed_ratio) => Err(
                IngestError::InvalidScaleConfig("fixed ratio mode needs a positive ratio".into()),
            ),
            ScaleMode::FixedRatio if !positive(self.page_height_cm) => {
                Err(IngestError::InvalidScaleConfig(
                    "fixed ratio mode needs a positive page height in cm".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// One already-rasterised page as encoded image bytes.
#[derive(Debug, Clone)]
pub struct PageInput {
    pub image: Vec<u8>,
    pub dpi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NewDocument {
    /// Requested id; the store assigns one when absent.
    pub id: Option<String>,
    pub title: String,
    pub source_ref: String,
    pub scale: ScaleConfig,
    pub pages: Vec<PageInput>,
}

/// Decodes a PNG (gray or colour) to BT.601 luminance.
pub fn decode_raster(bytes: &[u8]) -> Result<GrayRaster, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    let (w, h) = (img.width(), img.height());
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            GrayRaster::new(w, h, buf.into_raw()).map_err(|e| e.to_string())
        }
        other => {
            let rgb = other.to_rgb8();
            GrayRaster::from_rgb(w, h, rgb.as_raw()).map_err(|e| e.to_string())
        }
    }
}

/// 8-bit grayscale PNG.
pub fn encode_png(raster: &GrayRaster) -> Vec<u8> {
    let mut out = Vec::new();
    let enc = image::codecs::png::PngEncoder::new_with_quality(
        Cursor::new(&mut out),
        image::codecs::png::CompressionType::Fast,
        image::codecs::png::FilterType::Sub,
    );
    enc.write_image(
        raster.as_bytes(),
        raster.width(),
        raster.height(),
        image::ExtendedColorType::L8,
    )
    .expect("encoding to memory cannot fail");
    out
}

/// On-disk description of a document: pages are PNG paths relative to the
/// manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub id: Option<String>,
    pub title: String,
    #[serde(default)]
    pub source_ref: String,
    #[serde(flatten)]
    pub scale: ScaleConfig,
    pub pages: Vec<ManifestPage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPage {
    pub image: String,
    #[serde(default)]
    pub dpi: Option<f64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<NewDocument, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.into_new_document(base)
    }

    pub fn into_new_document(self, base: &Path) -> Result<NewDocument, IngestError> {
        let pages = self
            .pages
            .iter()
            .map(|p| {
                let path = base.join(&p.image);
                std::fs::read(&path)
                    .map(|image| PageInput { image, dpi: p.dpi })
                    .map_err(|source| IngestError::Io { path, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let source_ref = if self.source_ref.is_empty() {
            base.display().to_string()
        } else {
            self.source_ref
        };
        Ok(NewDocument {
            id: self.id,
            title: self.title,
            source_ref,
            scale: self.scale,
            pages,
        })
    }
}

/// Checks a new document and decodes every page. Nothing is stored if any
/// page fails.
pub fn prepare_import(doc: &NewDocument) -> Result<Vec<GrayRaster>, IngestError> {
    if doc.pages.is_empty() {
        return Err(IngestError::EmptyDocument);
    }
    doc.scale.validate()?;
    doc.pages
        .iter()
        .enumerate()
        .map(|(index, p)| {
            decode_raster(&p.image).map_err(|reason| IngestError::UndecodableRaster { index, reason })
        })
        .collect()
}
