//! Synthetic document corpus with run-length-separable classes.
//!
//! Every class draws pages from one of five layouts (single-column letter,
//! two-column article, table form, checkerboard drawing, large-type memo).
//! Classes beyond the fifth reuse a layout with a wider line pitch. Pages are
//! jittered per image in pitch, margins and word lengths, then sprinkled with
//! salt-and-pepper noise.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use docsig::store::{write_manifest, DatasetManifest, ManifestItem};

use crate::error::{CliError, Result};

const LAYOUTS: [&str; 5] = ["letter", "article", "form", "drawing", "memo"];
const NOISE: f64 = 0.003;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Spread the images over this many patent groups.
    pub patents: Option<usize>,
}

impl SynthSpec {
    pub fn new(classes: usize, per_class: usize, seed: u64) -> Self {
        SynthSpec {
            classes,
            per_class,
            seed,
            width: 256,
            height: 336,
            patents: None,
        }
    }
}

pub fn class_name(class: usize) -> String {
    let base = LAYOUTS[class % LAYOUTS.len()];
    match class / LAYOUTS.len() {
        0 => base.to_string(),
        v => format!("{base}-{}", v + 1),
    }
}

/// Writes `images/*.png` and `manifest.jsonl` under `out_dir`.
pub fn gen_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    if spec.classes < 2 {
        return Err(CliError::config("a synthetic corpus needs at least two classes"));
    }
    if spec.per_class == 0 || spec.width < 64 || spec.height < 64 {
        return Err(CliError::config(
            "need at least one image per class and pages of at least 64x64",
        ));
    }
    if spec.patents == Some(0) {
        return Err(CliError::config("patent count must be positive"));
    }
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| CliError::io(&img_dir, e))?;
    let classes: Vec<String> = (0..spec.classes).map(class_name).collect();
    let jobs: Vec<(usize, usize)> = (0..spec.classes)
        .flat_map(|c| (0..spec.per_class).map(move |i| (c, i)))
        .collect();
    let items = jobs
        .par_iter()
        .enumerate()
        .map(|(n, &(c, i))| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(n as u64);
            let page = render_page(c, spec.width, spec.height, &mut rng);
            let id = format!("{}-{i:03}", classes[c]);
            let rel = format!("images/{id}.png");
            let path = out_dir.join(&rel);
            image::save_buffer_with_format(
                &path,
                &page,
                spec.width as u32,
                spec.height as u32,
                image::ExtendedColorType::L8,
                image::ImageFormat::Png,
            )
            .map_err(|e| CliError::io(&path, std::io::Error::other(e)))?;
            let mut item = ManifestItem::new(id, rel).with_label(&classes[c]);
            if let Some(p) = spec.patents {
                item = item.with_group(format!("patent-{:03}", n % p));
            }
            Ok(item)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(Some(classes), items)?.with_base_dir(out_dir);
    write_manifest(out_dir.join("manifest.jsonl"), &manifest)?;
    Ok(manifest)
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Canvas {
            w,
            h,
            px: vec![255; w * h],
        }
    }

    /// Fills `[x0, x1) x [y0, y1)`, clipped to the page.
    fn fill(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for y in y0.min(self.h)..y1.min(self.h) {
            let row = &mut self.px[y * self.w..(y + 1) * self.w];
            row[x0.min(self.w)..x1.min(self.w)].fill(0);
        }
    }

    /// A line of words between `x0` and `x1` with its top at `y`.
    fn text_line(&mut self, rng: &mut ChaCha8Rng, x0: usize, x1: usize, y: usize, ink: usize, word: (usize, usize)) {
        let mut x = x0;
        while x < x1 {
            let len = rng.random_range(word.0..=word.1);
            let end = (x + len).min(x1);
            self.fill(x, y, end, y + ink);
            x = end + rng.random_range(ink.max(3)..=ink.max(3) + 3);
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, v: usize, by: usize) -> usize {
    (v + rng.random_range(0..=2 * by)).saturating_sub(by)
}

fn render_page(class: usize, w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let stretch = 1.0 + 0.4 * (class / LAYOUTS.len()) as f64;
    let pitch = |base: usize, rng: &mut ChaCha8Rng| jitter(rng, (base as f64 * stretch) as usize, 1);
    let mut c = Canvas::new(w, h);
    let left = jitter(rng, w / 10, 4);
    let right = w - jitter(rng, w / 10, 4);
    let top = jitter(rng, h / 12, 4);
    let bottom = h - jitter(rng, h / 12, 4);
    match class % LAYOUTS.len() {
        // letter: address block, then justified paragraphs
        0 => {
            let p = pitch(12, rng);
            let mut y = top;
            for _ in 0..4 {
                c.text_line(rng, left, left + w / 3, y, 5, (6, 18));
                y += p;
            }
            y += 2 * p;
            while y + p < bottom {
                let end = if rng.random_bool(0.15) { left + w / 2 } else { right };
                c.text_line(rng, left, end, y, 5, (10, 34));
                y += p;
            }
        }
        // article: heavy title, then two narrow columns
        1 => {
            c.fill(left, top, right, top + 10);
            let p = pitch(9, rng);
            let mid = (left + right) / 2;
            let gutter = 8;
            let mut y = top + 24;
            while y + p < bottom {
                c.text_line(rng, left, mid - gutter, y, 4, (5, 16));
                c.text_line(rng, mid + gutter, right, y, 4, (5, 16));
                y += p;
            }
        }
        // form: ruled table with short entries
        2 => {
            let row = pitch(22, rng);
            let cols = [left, left + (right - left) / 3, left + 2 * (right - left) / 3, right];
            let mut y = top;
            while y + row <= bottom {
                c.fill(left, y, right + 2, y + 2);
                for &x in &cols {
                    c.fill(x, y, x + 2, y + row);
                }
                for k in 0..3 {
                    if rng.random_bool(0.7) {
                        let x = cols[k] + 6;
                        let len = rng.random_range(12..30);
                        c.text_line(rng, x, x + len, y + 8, 5, (6, 12));
                    }
                }
                y += row;
            }
            c.fill(left, y, right + 2, y + 2);
        }
        // drawing: framed checkerboard and a caption
        3 => {
            let cell = pitch(16, rng);
            c.fill(left, top, right, top + 3);
            c.fill(left, bottom - 40, right, bottom - 37);
            c.fill(left, top, left + 3, bottom - 37);
            c.fill(right - 3, top, right, bottom - 37);
            let (x0, y0) = (left + 12, top + 12);
            let (x1, y1) = (right - 12, bottom - 52);
            let mut y = y0;
            let mut odd = false;
            while y < y1 {
                let mut x = x0 + if odd { cell } else { 0 };
                while x < x1 {
                    c.fill(x, y, (x + cell).min(x1), (y + cell).min(y1));
                    x += 2 * cell;
                }
                y += cell;
                odd = !odd;
            }
            c.text_line(rng, left + w / 4, right - w / 4, bottom - 24, 5, (8, 20));
        }
        // memo: large ragged lines, indented
        _ => {
            let p = pitch(24, rng);
            let indent = left + w / 8;
            let mut y = top;
            while y + p < bottom {
                let span = rng.random_range((right - indent) * 2 / 5..=right - indent);
                c.text_line(rng, indent, indent + span, y, 11, (14, 40));
                y += p;
            }
        }
    }
    for v in c.px.iter_mut() {
        if rng.random_bool(NOISE) {
            *v = 255 - *v;
        }
    }
    c.px
}
