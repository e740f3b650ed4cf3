//! External-process adapters: `detector <page.png>`, `ocr <crop.png>` and
//! `arrowcls <crop.png>`.

use std::path::{Path, PathBuf};
use std::process::Command;

use gravekit_core::orient::{ArrowClassifier, OrientError};
use gravekit_core::GrayRaster;

use crate::ingest::encode_png;

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("detector failed: {0}")]
    DetectorFailure(String),
    #[error("cannot stage image for adapter: {0}")]
    Io(#[from] std::io::Error),
}

/// Reads the text printed next to a scale bar.
pub trait LabelReader: Send + Sync {
    fn read(&self, crop: &GrayRaster) -> Option<String>;
}

fn run(program: &Path, image: &Path) -> Result<String, String> {
    let out = Command::new(program)
        .arg(image)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{} exited with {}: {}",
            program.display(),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

fn with_png<T>(raster: &GrayRaster, f: impl FnOnce(&Path) -> T) -> std::io::Result<T> {
    let mut file = tempfile::Builder::new().suffix(".png").tempfile()?;
    std::io::Write::write_all(&mut file, &encode_png(raster))?;
    Ok(f(file.path()))
}

/// Runs an external detector on a page image and returns its JSON lines.
#[derive(Debug, Clone)]
pub struct CommandDetector {
    pub program: PathBuf,
}

impl CommandDetector {
    pub fn detect_file(&self, page_png: &Path) -> Result<String, AdapterError> {
        run(&self.program, page_png).map_err(AdapterError::DetectorFailure)
    }

    pub fn detect(&self, page: &GrayRaster) -> Result<String, AdapterError> {
        with_png(page, |p| self.detect_file(p))?
    }
}

/// OCR through an external program; any failure reads as no text.
#[derive(Debug, Clone)]
pub struct CommandOcr {
    pub program: PathBuf,
}

impl LabelReader for CommandOcr {
    fn read(&self, crop: &GrayRaster) -> Option<String> {
        let text = with_png(crop, |p| run(&self.program, p)).ok()?.ok()?;
        let text = text.trim();
        (!text.is_empty()).then(|| text.to_string())
    }
}

/// 36-way north-arrow classifier behind an external program.
#[derive(Debug, Clone)]
pub struct CommandClassifier {
    pub program: PathBuf,
}

impl ArrowClassifier for CommandClassifier {
    fn classify(&self, crop: &GrayRaster) -> Result<u32, OrientError> {
        let text = with_png(crop, |p| run(&self.program, p))
            .map_err(|_| OrientError::AdapterFailure)?
            .map_err(|_| OrientError::AdapterFailure)?;
        text.trim()
            .parse::<u32>()
            .ok()
            .filter(|b| *b < 36)
            .ok_or(OrientError::AdapterFailure)
    }
}
