//! 8-bit grayscale rasters and the ink binarization used before contour tracing.

use alloc::vec;
use alloc::vec::Vec;

use crate::detect::BBox;
use crate::math;

/// Default cut applied after inversion: ink darker than `255 - 40` becomes foreground.
pub const DEFAULT_THRESHOLD: u8 = 40;
pub const DEFAULT_MAX_VALUE: u8 = 255;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("buffer holds {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("raster must have positive width and height")]
    Empty,
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayRaster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

/// ITU-R BT.601 luma of an sRGB triple, rounded to nearest.
pub fn luminance_bt601(r: u8, g: u8, b: u8) -> u8 {
    let y = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((y + 500) / 1000) as u8
}

impl GrayRaster {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Empty);
        }
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(RasterError::BufferSize {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// A raster filled with a single value (255 gives a blank page).
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        assert!(width > 0 && height > 0, "raster must not be empty");
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    /// Converts interleaved RGB bytes with BT.601 weights.
    pub fn from_rgb(width: u32, height: u32, rgb: &[u8]) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize * 3;
        if rgb.len() != expected {
            return Err(RasterError::BufferSize {
                expected,
                actual: rgb.len(),
            });
        }
        let data = rgb
            .chunks_exact(3)
            .map(|p| luminance_bt601(p[0], p[1], p[2]))
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    /// Pixel window covering `bbox`, clamped to the raster. Returns the crop and
    /// the pixel offset of its top-left corner, or `None` if nothing remains.
    pub fn crop(&self, bbox: &BBox) -> Option<(GrayRaster, (u32, u32))> {
        let (x0, y0, x1, y1) = pixel_window(bbox, self.width, self.height)?;
        let w = x1 - x0;
        let h = y1 - y0;
        let mut data = Vec::with_capacity(w as usize * h as usize);
        for y in y0..y1 {
            let row = y as usize * self.width as usize;
            data.extend_from_slice(&self.data[row + x0 as usize..row + x1 as usize]);
        }
        Some((
            GrayRaster {
                width: w,
                height: h,
                data,
            },
            (x0, y0),
        ))
    }
}

/// Integer pixel range `[x0, x1) x [y0, y1)` touched by a floating bbox.
pub fn pixel_window(bbox: &BBox, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
    let clamp = |v: f64, hi: u32| -> u32 { v.max(0.0).min(hi as f64) as u32 };
    let x0 = clamp(math::floor(bbox.x_min), width);
    let y0 = clamp(math::floor(bbox.y_min), height);
    let x1 = clamp(math::ceil(bbox.x_max), width);
    let y1 = clamp(math::ceil(bbox.y_max), height);
    (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
}

/// Two-level raster: every pixel is either 0 (background) or `max_value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryRaster {
    width: u32,
    height: u32,
    max_value: u8,
    data: Vec<u8>,
}

impl BinaryRaster {
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(if f(x, y) { DEFAULT_MAX_VALUE } else { 0 });
            }
        }
        Self {
            width,
            height,
            max_value: DEFAULT_MAX_VALUE,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn max_value(&self) -> u8 {
        self.max_value
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn is_foreground(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return false;
        }
        self.data[y as usize * self.width as usize + x as usize] != 0
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Renders foreground back as black ink on a white page.
    pub fn to_page(&self) -> GrayRaster {
        GrayRaster {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| if v != 0 { 0 } else { 255 })
                .collect(),
        }
    }
}

/// Inverts the page (`v -> 255 - v`) and keeps pixels strictly above
/// `threshold` as `max_value`; everything else becomes 0.
pub fn binarize(raster: &GrayRaster, threshold: u8, max_value: u8) -> BinaryRaster {
    let data = raster
        .data
        .iter()
        .map(|&v| if 255 - v > threshold { max_value } else { 0 })
        .collect();
    BinaryRaster {
        width: raster.width,
        height: raster.height,
        max_value,
        data,
    }
}

/// [`binarize`] with the default 40 / 255 parameters.
pub fn binarize_default(raster: &GrayRaster) -> BinaryRaster {
    binarize(raster, DEFAULT_THRESHOLD, DEFAULT_MAX_VALUE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_page_has_no_foreground() {
        let page = GrayRaster::filled(16, 9, 255);
        let bin = binarize_default(&page);
        assert_eq!(bin.foreground_count(), 0);
    }

    #[test]
    fn black_stroke_becomes_max_value() {
        let mut page = GrayRaster::filled(8, 8, 255);
        page.set(3, 4, 0);
        let bin = binarize(&page, 40, 200);
        assert_eq!(bin.as_bytes()[4 * 8 + 3], 200);
        assert_eq!(bin.foreground_count(), 1);
        assert!(bin.as_bytes().iter().all(|&v| v == 0 || v == 200));
    }

    #[test]
    fn threshold_is_strict_after_inversion() {
        // 255 - 215 = 40 is not above the cut, 255 - 214 = 41 is.
        let page = GrayRaster::new(2, 1, vec![215, 214]).unwrap();
        let bin = binarize_default(&page);
        assert_eq!(bin.as_bytes(), &[0, 255]);
    }

    #[test]
    fn rgb_conversion_keeps_shape() {
        let rgb = [255u8, 0, 0, 0, 255, 0, 0, 0, 255, 10, 10, 10, 255, 255, 255, 0, 0, 0];
        let g = GrayRaster::from_rgb(3, 2, &rgb).unwrap();
        assert_eq!((g.width(), g.height()), (3, 2));
        assert_eq!(g.as_bytes(), &[76, 150, 29, 10, 255, 0]);
    }

    #[test]
    fn wrong_buffer_size_is_rejected() {
        assert_eq!(
            GrayRaster::new(3, 3, vec![0; 8]),
            Err(RasterError::BufferSize {
                expected: 9,
                actual: 8
            })
        );
        assert_eq!(GrayRaster::new(0, 3, vec![]), Err(RasterError::Empty));
    }

    #[test]
    fn crop_is_clamped() {
        let mut page = GrayRaster::filled(10, 10, 255);
        page.set(9, 9, 7);
        let (crop, origin) = page.crop(&BBox::new(8.2, 8.0, 14.0, 12.0)).unwrap();
        assert_eq!(origin, (8, 8));
        assert_eq!((crop.width(), crop.height()), (2, 2));
        assert_eq!(crop.get(1, 1), 7);
        assert!(page.crop(&BBox::new(11.0, 11.0, 14.0, 12.0)).is_none());
    }
}
