//! Dense SIFT extraction on a regular patch grid, optionally repeated over a
//! ladder of `sqrt(2)` downscalings.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{downscale_sqrt2, GrayImage};
use crate::runlength::Rect;

pub const SIFT_DIM: usize = 128;
const CELLS: usize = 4;
const ORIENTATIONS: usize = 8;
const CLIP: f64 = 0.2;
const MIN_NORM: f64 = 1e-10;

/// Patch window, grid step and number of scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGridSpec {
    pub window: usize,
    pub stride: usize,
    pub scales: usize,
}

impl PatchGridSpec {
    pub fn new(window: usize, stride: usize, scales: usize) -> Result<Self> {
        let spec = PatchGridSpec {
            window,
            stride,
            scales,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Half-overlapping patches.
    pub fn with_default_stride(window: usize, scales: usize) -> Result<Self> {
        PatchGridSpec::new(window, (window / 2).max(1), scales)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 8 {
            return Err(Error::param(format!("window {} below 8", self.window)));
        }
        if self.stride == 0 || self.stride > self.window {
            return Err(Error::param(format!(
                "stride {} outside 1..={}",
                self.stride, self.window
            )));
        }
        if self.scales == 0 {
            return Err(Error::param("at least one scale is required"));
        }
        Ok(())
    }
}

/// Local descriptors of one image, row-major, with the patch centers
/// expressed in the coordinates of the input image.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    values: Vec<f64>,
    centers: Vec<[f64; 2]>,
}

impl DescriptorSet {
    pub fn new(dim: usize) -> Self {
        DescriptorSet {
            dim,
            values: Vec::new(),
            centers: Vec::new(),
        }
    }

    /// Descriptors without positions (all centers at the origin).
    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut set = DescriptorSet::new(dim);
        for r in rows {
            set.push(r, [0.0, 0.0])?;
        }
        Ok(set)
    }

    pub fn push(&mut self, descriptor: &[f64], center: [f64; 2]) -> Result<()> {
        if descriptor.len() != self.dim {
            return Err(Error::param(format!(
                "descriptor of dimension {} pushed into a set of dimension {}",
                descriptor.len(),
                self.dim
            )));
        }
        self.values.extend_from_slice(descriptor);
        self.centers.push(center);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1)).take(self.len())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    /// Keeps the descriptors at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> DescriptorSet {
        let mut out = DescriptorSet::new(self.dim);
        for &i in indices {
            out.values.extend_from_slice(self.row(i));
            out.centers.push(self.centers[i]);
        }
        out
    }

    pub fn extend(&mut self, other: &DescriptorSet) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::param("descriptor dimension mismatch"));
        }
        self.values.extend_from_slice(&other.values);
        self.centers.extend_from_slice(&other.centers);
        Ok(())
    }
}

/// Top-left corners of every `window x window` patch on a `stride` grid.
pub fn dense_patch_grid(
    width: usize,
    height: usize,
    window: usize,
    stride: usize,
) -> Vec<(usize, usize)> {
    assert!(stride >= 1);
    if window > width || window > height || window == 0 {
        return Vec::new();
    }
    let nx = (width - window) / stride + 1;
    let ny = (height - window) / stride + 1;
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push((i * stride, j * stride));
        }
    }
    out
}

/// Gradient magnitude and orientation (radians in `[0, 2pi)`) per pixel,
/// from central differences with replicated borders.
struct GradientField {
    width: usize,
    magnitude: Vec<f64>,
    orientation: Vec<f64>,
}

impl GradientField {
    fn new(gray: &GrayImage) -> Self {
        let (w, h) = (gray.width(), gray.height());
        let mut magnitude = Vec::with_capacity(w * h);
        let mut orientation = Vec::with_capacity(w * h);
        for y in 0..h {
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let gx = 0.5 * (gray.get(xr, y) - gray.get(xl, y));
                let gy = 0.5 * (gray.get(x, yd) - gray.get(x, yu));
                magnitude.push((gx * gx + gy * gy).sqrt());
                let mut theta = gy.atan2(gx);
                if theta < 0.0 {
                    theta += 2.0 * PI;
                }
                if theta >= 2.0 * PI {
                    theta = 0.0;
                }
                orientation.push(theta);
            }
        }
        GradientField {
            width: w,
            magnitude,
            orientation,
        }
    }

    fn descriptor(&self, patch: Rect) -> Vec<f64> {
        let mut hist = [0.0f64; SIFT_DIM];
        let side = patch.width as f64;
        let cell = side / CELLS as f64;
        let sigma = side / 2.0;
        let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
        let center = side / 2.0;
        let bin_width = 2.0 * PI / ORIENTATIONS as f64;

        for ly in 0..patch.height {
            let v = ly as f64 + 0.5;
            let cy = v / cell - 0.5;
            let cy0 = cy.floor();
            let fy = cy - cy0;
            for lx in 0..patch.width {
                let idx = (patch.y + ly) * self.width + patch.x + lx;
                let mag = self.magnitude[idx];
                if mag == 0.0 {
                    continue;
                }
                let u = lx as f64 + 0.5;
                let (du, dv) = (u - center, v - center);
                let weight = mag * (-(du * du + dv * dv) * inv_two_sigma2).exp();

                let cx = u / cell - 0.5;
                let cx0 = cx.floor();
                let fx = cx - cx0;

                let ob = self.orientation[idx] / bin_width;
                let ob0 = ob.floor();
                let fo = ob - ob0;
                let o0 = (ob0 as usize) % ORIENTATIONS;
                let o1 = (o0 + 1) % ORIENTATIONS;

                for (iy, wy) in [(cy0 as isize, 1.0 - fy), (cy0 as isize + 1, fy)] {
                    if iy < 0 || iy >= CELLS as isize || wy == 0.0 {
                        continue;
                    }
                    for (ix, wx) in [(cx0 as isize, 1.0 - fx), (cx0 as isize + 1, fx)] {
                        if ix < 0 || ix >= CELLS as isize || wx == 0.0 {
                            continue;
                        }
                        let base = (iy as usize * CELLS + ix as usize) * ORIENTATIONS;
                        let w = weight * wy * wx;
                        hist[base + o0] += w * (1.0 - fo);
                        hist[base + o1] += w * fo;
                    }
                }
            }
        }
        normalize_sift(&mut hist);
        hist.to_vec()
    }
}

fn normalize_sift(hist: &mut [f64]) {
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < MIN_NORM {
        hist.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in hist.iter_mut() {
        *v = (*v / norm).min(CLIP);
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    hist.iter_mut().for_each(|v| *v /= norm);
}

/// 128-dimensional SIFT descriptor (4x4 cells, 8 orientations) of a square
/// patch. Uniform patches give the zero vector.
pub fn sift_descriptor(gray: &GrayImage, patch: Rect) -> Result<Vec<f64>> {
    if patch.is_empty()
        || patch.x + patch.width > gray.width()
        || patch.y + patch.height > gray.height()
    {
        return Err(Error::param(format!(
            "patch {patch:?} outside {}x{} image",
            gray.width(),
            gray.height()
        )));
    }
    Ok(GradientField::new(gray).descriptor(patch))
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Dense SIFT over the image and `scales - 1` successive `sqrt(2)`
/// downscalings. Zero descriptors (uniform patches) are dropped. Centers are
/// mapped back to the input image's coordinates.
pub fn multi_scale_descriptors(gray: &GrayImage, spec: PatchGridSpec) -> DescriptorSet {
    let mut out = DescriptorSet::new(SIFT_DIM);
    let (w0, h0) = (gray.width() as f64, gray.height() as f64);
    let mut current = gray.clone();
    for scale in 0..spec.scales {
        if scale > 0 {
            current = downscale_sqrt2(&current);
        }
        let grid = dense_patch_grid(current.width(), current.height(), spec.window, spec.stride);
        if grid.is_empty() {
            // later scales are only smaller
            break;
        }
        let field = GradientField::new(&current);
        let rx = w0 / current.width() as f64;
        let ry = h0 / current.height() as f64;
        let half = spec.window as f64 / 2.0;
        for (x, y) in grid {
            let d = field.descriptor(Rect::new(x, y, spec.window, spec.window));
            if is_zero(&d) {
                continue;
            }
            let center = [(x as f64 + half) * rx, (y as f64 + half) * ry];
            out.push(&d, center).expect("fixed SIFT dimension");
        }
    }
    out
}
