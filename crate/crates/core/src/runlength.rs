//! Run-length histogram signatures.
//!
//! A run is a maximal sequence of same-colored pixels along a scan line. Runs
//! are collected in four directions (horizontal, vertical, diagonal and
//! anti-diagonal), separately for black and white, and their lengths are
//! quantized on a logarithmic scale:
//!
//! ```text
//! bin:     0    1    2      3      4       ...  Q-1
//! length: [1]  [2]  [3-4]  [5-8]  [9-16]   ...  [>= 2^(Q-2) + 1]
//! ```
//!
//! Per region this gives `4 * 2 * Q` counts. Regions come from a spatial
//! pyramid (1x1, 2x2, 4x4, 6x6, 8x8 grids), their histograms are concatenated,
//! and the whole vector is L1-normalized and square-rooted, which leaves it
//! with unit L2 norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{l1_normalize, power_normalize, FeatureKind, FeatureVector};
use crate::imgproc::{binarize, resize_max_pixels, BinaryImage, GrayImage};

pub const MIN_BINS: usize = 3;
pub const MAX_BINS: usize = 16;

/// Grid side per pyramid layer; layer `n` uses the first `n` entries.
pub const PYRAMID_GRIDS: [usize; 5] = [1, 2, 4, 6, 8];

/// Binarization threshold applied before run counting.
pub const RL_THRESHOLD: f64 = 0.5;

/// Scan directions in signature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Horizontal,
    Vertical,
    /// Top-left to bottom-right.
    Diagonal,
    /// Top-right to bottom-left.
    AntiDiagonal,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Horizontal,
        Direction::Vertical,
        Direction::Diagonal,
        Direction::AntiDiagonal,
    ];
}

/// Logarithmic run-length quantizer with `Q` bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    bins: usize,
}

impl QuantizerSpec {
    pub fn new(bins: usize) -> Result<Self> {
        if !(MIN_BINS..=MAX_BINS).contains(&bins) {
            return Err(Error::param(format!(
                "quantizer bin count {bins} outside {MIN_BINS}..={MAX_BINS}"
            )));
        }
        Ok(QuantizerSpec { bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Length of one region histogram (`8 * Q`).
    pub fn region_dim(&self) -> usize {
        8 * self.bins
    }
}

/// Spatial pyramid with `levels` layers drawn from [`PYRAMID_GRIDS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidSpec {
    levels: usize,
}

impl PyramidSpec {
    pub fn new(levels: usize) -> Result<Self> {
        if !(1..=PYRAMID_GRIDS.len()).contains(&levels) {
            return Err(Error::param(format!(
                "pyramid levels {levels} outside 1..={}",
                PYRAMID_GRIDS.len()
            )));
        }
        Ok(PyramidSpec { levels })
    }

    pub fn single() -> Self {
        PyramidSpec { levels: 1 }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn grids(&self) -> &'static [usize] {
        &PYRAMID_GRIDS[..self.levels]
    }

    pub fn region_count(&self) -> usize {
        self.grids().iter().map(|g| g * g).sum()
    }

    /// All regions of a `width x height` image, layer-major then row-major.
    /// Regions may be empty when the image is smaller than the grid.
    pub fn regions(&self, width: usize, height: usize) -> Vec<Rect> {
        let mut out = Vec::with_capacity(self.region_count());
        for &g in self.grids() {
            for i in 0..g {
                let y0 = i * height / g;
                let y1 = (i + 1) * height / g;
                for j in 0..g {
                    let x0 = j * width / g;
                    let x1 = (j + 1) * width / g;
                    out.push(Rect::new(x0, y0, x1 - x0, y1 - y0));
                }
            }
        }
        out
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Rect {
            x,
            y,
            width,
            height,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x as f64
            && py >= self.y as f64
            && px < (self.x + self.width) as f64
            && py < (self.y + self.height) as f64
    }
}

/// Bin index of a run of `length` pixels.
pub fn quantize_run_length(length: usize, quant: QuantizerSpec) -> Result<usize> {
    if length == 0 {
        return Err(Error::param("run length must be at least 1"));
    }
    Ok(bin_of(length, quant.bins))
}

#[inline]
fn bin_of(length: usize, bins: usize) -> usize {
    if length == 1 {
        0
    } else {
        let floor_log2 = (usize::BITS - 1 - (length - 1).leading_zeros()) as usize;
        (floor_log2 + 1).min(bins - 1)
    }
}

/// Offset of the `(direction, black)` histogram inside a region block.
pub fn histogram_offset(direction: Direction, black: bool, quant: QuantizerSpec) -> usize {
    let d = Direction::ALL.iter().position(|&x| x == direction).unwrap();
    2 * d * quant.bins + if black { 0 } else { quant.bins }
}

/// Raw run counts of one region, laid out as
/// `[h-black, h-white, v-black, v-white, d-black, d-white, a-black, a-white]`,
/// each `Q` long. Runs are cut at the region border.
pub fn region_rl_counts(
    bin: &BinaryImage,
    region: Rect,
    quant: QuantizerSpec,
) -> Result<Vec<u64>> {
    if region.is_empty() {
        return Err(Error::param("empty region"));
    }
    if region.x + region.width > bin.width() || region.y + region.height > bin.height() {
        return Err(Error::param(format!(
            "region {region:?} exceeds {}x{} image",
            bin.width(),
            bin.height()
        )));
    }
    let mut counts = vec![0u64; quant.region_dim()];
    accumulate_region(bin, region, quant, &mut counts);
    Ok(counts)
}

fn accumulate_region(bin: &BinaryImage, r: Rect, quant: QuantizerSpec, counts: &mut [u64]) {
    let q = quant.bins;
    let (w, h) = (r.width, r.height);
    let at = |x: usize, y: usize| bin.get(r.x + x, r.y + y);

    // Walks one scan line given its start and step, adding every run to the
    // histogram pair starting at `base`.
    let mut scan = |base: usize, mut x: isize, mut y: isize, dx: isize, dy: isize| {
        let mut color = at(x as usize, y as usize);
        let mut len = 0usize;
        while x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            let c = at(x as usize, y as usize);
            if c == color {
                len += 1;
            } else {
                counts[base + if color { 0 } else { q } + bin_of(len, q)] += 1;
                color = c;
                len = 1;
            }
            x += dx;
            y += dy;
        }
        counts[base + if color { 0 } else { q } + bin_of(len, q)] += 1;
    };

    let (wi, hi) = (w as isize, h as isize);
    for y in 0..hi {
        scan(0, 0, y, 1, 0);
    }
    for x in 0..wi {
        scan(2 * q, x, 0, 0, 1);
    }
    for x in 0..wi {
        scan(4 * q, x, 0, 1, 1);
    }
    for y in 1..hi {
        scan(4 * q, 0, y, 1, 1);
    }
    for x in 0..wi {
        scan(6 * q, x, 0, -1, 1);
    }
    for y in 1..hi {
        scan(6 * q, wi - 1, y, -1, 1);
    }
}

/// Unnormalized pyramid counts (concatenated region histograms).
pub fn pyramid_rl_counts(
    bin: &BinaryImage,
    pyramid: PyramidSpec,
    quant: QuantizerSpec,
) -> Vec<u64> {
    let block = quant.region_dim();
    let regions = pyramid.regions(bin.width(), bin.height());
    let mut counts = vec![0u64; regions.len() * block];
    for (region, chunk) in regions.iter().zip(counts.chunks_exact_mut(block)) {
        if !region.is_empty() {
            accumulate_region(bin, *region, quant, chunk);
        }
    }
    counts
}

/// Config tag carried by RL signatures.
pub fn rl_config_tag(pyramid: PyramidSpec, quant: QuantizerSpec) -> String {
    format!("rl:L{}:Q{}", pyramid.levels(), quant.bins())
}

/// Final RL signature: pyramid counts, L1-normalized, then square-rooted.
/// Its dimension is `regions * 8 * Q`.
pub fn rl_signature(bin: &BinaryImage, pyramid: PyramidSpec, quant: QuantizerSpec) -> FeatureVector {
    let mut values: Vec<f64> = pyramid_rl_counts(bin, pyramid, quant)
        .into_iter()
        .map(|c| c as f64)
        .collect();
    l1_normalize(&mut values);
    power_normalize(&mut values, 0.5);
    FeatureVector::new(values, FeatureKind::Rl, rl_config_tag(pyramid, quant))
}

/// Full RL pipeline from a grayscale page: optional downscale to at most
/// `max_pixels`, threshold at 0.5, then [`rl_signature`].
pub fn rl_signature_from_gray(
    gray: &GrayImage,
    max_pixels: Option<usize>,
    pyramid: PyramidSpec,
    quant: QuantizerSpec,
) -> Result<FeatureVector> {
    let resized;
    let gray = match max_pixels {
        Some(max) => {
            resized = resize_max_pixels(gray, max)?;
            &resized
        }
        None => gray,
    };
    let bin = binarize(gray, RL_THRESHOLD)?;
    Ok(rl_signature(&bin, pyramid, quant))
}
