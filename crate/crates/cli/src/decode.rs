//! Image files to grayscale pages.

use std::path::Path;

use docsig::imgproc::{resize_max_pixels, to_luminance};
use docsig::{GrayImage, Raster};

use crate::error::{CliError, Result};

/// Decodes any supported file to luminance in `[0, 1]`.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let decode_err = |message: String| CliError::Decode {
        path: path.to_path_buf(),
        message,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| CliError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| CliError::io(path, e))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    let rgb = img.to_rgb32f();
    let raster = Raster {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        channels: 3,
        data: rgb.into_raw().into_iter().map(f64::from).collect(),
    };
    to_luminance(&raster).map_err(|e| decode_err(e.to_string()))
}

/// Decodes and, when `max_pixels` is set, downscales.
pub fn load_page(path: &Path, max_pixels: Option<usize>) -> Result<GrayImage> {
    let gray = load_gray(path)?;
    Ok(match max_pixels {
        Some(m) => resize_max_pixels(&gray, m)?,
        None => gray,
    })
}
