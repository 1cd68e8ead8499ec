//! Rasterization of rendered images: 8-bit grayscale PNG for the DRR, a
//! category PNG for the mask (raw values 0/1/2), and an optional raw
//! float dump for bit-exact numeric comparisons.

use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::DrrImage;

/// Intensity window applied before the 8-bit mapping.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Map [min, max] of the image to [0, 255]; a constant image becomes
    /// mid-gray (128).
    #[default]
    Auto,
    /// Clamp to [lo, hi], then map that range to [0, 255].
    Fixed { lo: f64, hi: f64 },
}

impl Window {
    pub fn validate(&self) -> Result<()> {
        if let Window::Fixed { lo, hi } = self {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!(
                    "fixed window needs lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// Map intensities to 8-bit gray, row-major.
pub fn to_gray8(image: &DrrImage, window: &Window) -> Result<Vec<u8>> {
    window.validate()?;
    if let Some(bad) = image.intensity().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(format!("pixel intensity {bad}")));
    }
    let (lo, hi) = match *window {
        Window::Fixed { lo, hi } => (lo, hi),
        Window::Auto => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in image.intensity() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if lo >= hi {
                // constant image: the degenerate window maps to mid-gray
                return Ok(vec![128u8; image.pixel_count()]);
            }
            (lo, hi)
        }
    };
    let scale = 255.0 / (hi - lo);
    Ok(image
        .intensity()
        .iter()
        .map(|&v| ((v.clamp(lo, hi) - lo) * scale).round() as u8)
        .collect())
}

fn write_png(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_vec(width as u32, height as u32, pixels)
        .expect("pixel buffer matches dimensions");
    img.save(path)
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Write the windowed DRR as an 8-bit grayscale PNG.
pub fn export_image(image: &DrrImage, window: &Window, path: &Path) -> Result<()> {
    let pixels = to_gray8(image, window)?;
    write_png(path, image.cols(), image.rows(), pixels)
}

/// Write the pixel labels as a PNG whose raw sample values are the
/// categories 0/1/2 (not rescaled for display).
pub fn export_mask(image: &DrrImage, path: &Path) -> Result<()> {
    write_png(path, image.cols(), image.rows(), image.labels().to_vec())
}

/// Write an all-background mask of the image's size.
pub fn export_blank_mask(image: &DrrImage, path: &Path) -> Result<()> {
    write_png(
        path,
        image.cols(),
        image.rows(),
        vec![0u8; image.pixel_count()],
    )
}

/// Read a mask PNG back as raw category values.
pub fn load_mask(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.into_raw()))
}

/// Dump intensities bit-exactly: little-endian f64, row-major.
pub fn export_float(image: &DrrImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(image.pixel_count() * 8);
    for v in image.intensity() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read a float dump back, given the expected pixel count.
pub fn load_float(path: &Path, pixels: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != pixels * 8 {
        return Err(Error::TruncatedData {
            path: path.to_path_buf(),
            expected: (pixels * 8) as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
