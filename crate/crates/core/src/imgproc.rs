//! Raster operations on already-decoded images: luminance, thresholding and
//! aspect-preserving bilinear downscaling.
//!
//! File decoding lives in the command-line layer; everything here works on
//! values already rescaled to `[0, 1]`.

use crate::error::{Error, Result};

/// Interleaved multi-channel raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Single-channel luminance image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Ink mask, row-major; `true` is black.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!(
            "zero-sized image {width}x{height}"
        )));
    }
    if width.checked_mul(height) != Some(len) {
        return Err(Error::InvalidImage(format!(
            "{width}x{height} image needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "luminance {v} outside [0, 1]"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        Ok(BinaryImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryImage::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// White is 1.0 and black is 0.0.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&b| if b { 0.0 } else { 1.0 })
                .collect(),
        }
    }
}

/// BT.601 luma for 3- and 4-channel rasters (alpha is ignored); a
/// single-channel raster passes through. Two channels are read as gray+alpha.
pub fn to_luminance(raster: &Raster) -> Result<GrayImage> {
    let Raster {
        width,
        height,
        channels,
        ref data,
    } = *raster;
    if width == 0 || height == 0 || channels == 0 {
        return Err(Error::InvalidImage(format!(
            "zero-sized raster {width}x{height}x{channels}"
        )));
    }
    if data.len() != width * height * channels {
        return Err(Error::InvalidImage(format!(
            "raster of {width}x{height}x{channels} has {} values",
            data.len()
        )));
    }
    let luma: Vec<f64> = match channels {
        1 | 2 => data.chunks_exact(channels).map(|px| px[0]).collect(),
        _ => data
            .chunks_exact(channels)
            .map(|px| {
                // 0.299 R + 0.587 G + 0.114 B, arranged so gray pixels stay exact
                let r = px[0];
                (r + 0.587 * (px[1] - r) + 0.114 * (px[2] - r)).clamp(0.0, 1.0)
            })
            .collect(),
    };
    GrayImage::new(width, height, luma)
}

/// A pixel is black iff its luminance is strictly below `threshold`.
pub fn binarize(gray: &GrayImage, threshold: f64) -> Result<BinaryImage> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::param(format!(
            "binarization threshold {threshold} outside [0, 1]"
        )));
    }
    Ok(BinaryImage {
        width: gray.width,
        height: gray.height,
        data: gray.data.iter().map(|&v| v < threshold).collect(),
    })
}

fn round_dim(x: f64) -> usize {
    ((x + 0.5).floor() as usize).max(1)
}

/// Downscales so that the pixel count is at most (about) `max_pixels`,
/// keeping the aspect ratio. Images already small enough are returned as is.
pub fn resize_max_pixels(gray: &GrayImage, max_pixels: usize) -> Result<GrayImage> {
    if max_pixels == 0 {
        return Err(Error::param("max_pixels must be at least 1"));
    }
    let count = gray.pixel_count();
    if count <= max_pixels {
        return Ok(gray.clone());
    }
    let s = (max_pixels as f64 / count as f64).sqrt();
    let w = round_dim(s * gray.width as f64);
    let h = round_dim(s * gray.height as f64);
    Ok(resize_bilinear(gray, w, h))
}

/// One step of the `sqrt(2)` scale ladder.
pub fn downscale_sqrt2(gray: &GrayImage) -> GrayImage {
    let w = round_dim(gray.width as f64 / std::f64::consts::SQRT_2);
    let h = round_dim(gray.height as f64 / std::f64::consts::SQRT_2);
    resize_bilinear(gray, w, h)
}

/// Bilinear resampling with pixel-center alignment and clamped borders.
pub fn resize_bilinear(gray: &GrayImage, new_width: usize, new_height: usize) -> GrayImage {
    assert!(new_width >= 1 && new_height >= 1);
    if new_width == gray.width && new_height == gray.height {
        return gray.clone();
    }
    let sx = gray.width as f64 / new_width as f64;
    let sy = gray.height as f64 / new_height as f64;
    let taps = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let xtaps: Vec<_> = (0..new_width).map(|x| taps(x, sx, gray.width)).collect();
    let mut data = Vec::with_capacity(new_width * new_height);
    for y in 0..new_height {
        let (y0, y1, fy) = taps(y, sy, gray.height);
        for &(x0, x1, fx) in &xtaps {
            let top = gray.get(x0, y0) * (1.0 - fx) + gray.get(x1, y0) * fx;
            let bottom = gray.get(x0, y1) * (1.0 - fx) + gray.get(x1, y1) * fx;
            data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    GrayImage {
        width: new_width,
        height: new_height,
        data,
    }
}
