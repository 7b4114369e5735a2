//! Deterministic synthetic document corpus: four visually distinct page
//! designs (dense text lines, ruled form grid, halftone advertisement,
//! sparse memo) written as PGM files, one subdirectory per class.

use std::fs;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::image::Image;

/// Class names in lexicographic (= class index) order.
pub const CLASS_NAMES: [&str; 4] = ["advert", "form", "memo", "text"];

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub classes: usize,
    pub per_class: usize,
    pub size: u32,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { classes: 4, per_class: 50, size: 256, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("supported class counts are 2..=4, got {0}")]
    BadClassCount(usize),
    #[error("need at least 10 images per class, got {0}")]
    TooFewPerClass(usize),
    #[error("page size must be at least 32, got {0}")]
    PageTooSmall(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Page {
    size: usize,
    pixels: Vec<u8>,
}

impl Page {
    fn blank(size: usize, background: u8) -> Page {
        Page { size, pixels: vec![background; size * size] }
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, ink: u8) {
        for y in y0..(y0 + h).min(self.size) {
            for x in x0..(x0 + w).min(self.size) {
                self.pixels[y * self.size + x] = ink;
            }
        }
    }

    fn dither_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, ink: u8, rng: &mut ChaCha20Rng) {
        let swing = 18i16;
        for y in y0..(y0 + h).min(self.size) {
            for x in x0..(x0 + w).min(self.size) {
                let base = ink as i16 + if (x + y) % 2 == 0 { swing } else { -swing };
                let jitter = rng.random_range(-4..=4);
                self.pixels[y * self.size + x] = (base + jitter).clamp(0, 255) as u8;
            }
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, radius: f64, ink: u8, rng: &mut ChaCha20Rng) {
        let lo = |v: f64| (v - radius).floor().max(0.0) as usize;
        let hi = |v: f64| ((v + radius).ceil() as usize).min(self.size - 1);
        for y in lo(cy)..=hi(cy) {
            for x in lo(cx)..=hi(cx) {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 <= radius * radius {
                    let jitter = rng.random_range(-5..=5i16);
                    self.pixels[y * self.size + x] = (ink as i16 + jitter).clamp(0, 255) as u8;
                }
            }
        }
    }

    /// A run of word-like dark blobs across one text line.
    fn text_line(&mut self, y: usize, x0: usize, x1: usize, line_h: usize, rng: &mut ChaCha20Rng) {
        let mut x = x0;
        let ink = rng.random_range(15..60) as u8;
        while x < x1 {
            let word = rng.random_range(2..=7) * line_h.max(2) / 2;
            let end = (x + word).min(x1);
            self.fill_rect(x, y, end - x, line_h, ink);
            x = end + line_h.max(2);
        }
    }

    fn speckle(&mut self, rng: &mut ChaCha20Rng) {
        for p in self.pixels.iter_mut() {
            let jitter = rng.random_range(-1..=1i16);
            *p = (*p as i16 + jitter).clamp(0, 255) as u8;
        }
    }

    fn into_image(self) -> Image {
        Image::new(self.size as u32, self.size as u32, self.pixels).expect("square page")
    }
}

// Class appearances keep tight within-class statistics (positions jitter,
// coverage and ink stay near-fixed) so every resolution sees well-separated
// classes and short training runs converge.

fn gen_text(size: usize, rng: &mut ChaCha20Rng) -> Page {
    let mut page = Page::blank(size, 252);
    let margin = size / 16;
    let line_h = (size / 44).max(2);
    let gap = line_h + (line_h / 2).max(1);
    let mut y = margin + rng.random_range(0..gap);
    while y + line_h < size - margin {
        let indent = if rng.random_bool(0.12) { size / 12 } else { 0 };
        let right = size - margin - rng.random_range(0..size / 32);
        page.text_line(y, margin + indent, right, line_h, rng);
        y += gap;
    }
    page
}

fn gen_form(size: usize, rng: &mut ChaCha20Rng) -> Page {
    let mut page = Page::blank(size, 250);
    let margin = size / 16;
    let rows = 12;
    let cols = 5;
    let ink = 45u8;
    let thickness = 2 + size / 256;
    let row_gap = (size - 2 * margin) / rows;
    // shaded header band above the grid
    page.fill_rect(margin, margin, size - 2 * margin, row_gap, 170);
    for r in 0..=rows {
        page.fill_rect(margin, margin + r * row_gap, size - 2 * margin, thickness, ink);
    }
    let col_gap = (size - 2 * margin) / cols;
    for c in 0..=cols {
        page.fill_rect(margin + c * col_gap, margin, thickness, row_gap * rows, ink);
    }
    // short cell labels
    let line_h = (size / 52).max(2);
    for _ in 0..10 {
        let r = rng.random_range(1..rows);
        let c = rng.random_range(0..cols);
        let x = margin + c * col_gap + line_h;
        let y = margin + r * row_gap + line_h + thickness;
        page.text_line(y, x, (x + col_gap / 2).min(size - margin), line_h, rng);
    }
    page
}

fn gen_advert(size: usize, rng: &mut ChaCha20Rng) -> Page {
    let mut page = Page::blank(size, 210);
    // headline banner
    let banner_h = size / 6;
    page.dither_rect(size / 16, size / 16, size - size / 8, banner_h, 60, rng);
    // two halftone rectangles and two discs, one per quadrant below the
    // banner so shapes never overlap and page coverage stays constant
    let top = banner_h + size / 8;
    let cell_h = (size - top) / 2;
    let cell_w = size / 2;
    for (i, (qx, qy)) in [(0usize, 0usize), (1, 0), (0, 1), (1, 1)].iter().enumerate() {
        let ink = 70u8;
        let x0 = qx * cell_w;
        let y0 = top + qy * cell_h;
        if i % 2 == 0 {
            let w = cell_w * 3 / 4;
            let h = cell_h * 3 / 4;
            let x = x0 + rng.random_range(0..cell_w - w);
            let y = y0 + rng.random_range(0..cell_h - h);
            page.dither_rect(x, y, w, h, ink, rng);
        } else {
            let radius = cell_h.min(cell_w) as f64 * 0.38;
            let cx = x0 as f64 + rng.random_range(radius..cell_w as f64 - radius);
            let cy = y0 as f64 + rng.random_range(radius..cell_h as f64 - radius);
            page.disc(cx, cy, radius, ink, rng);
        }
    }
    page
}

fn gen_memo(size: usize, rng: &mut ChaCha20Rng) -> Page {
    let mut page = Page::blank(size, 254);
    let margin = size / 10;
    let line_h = (size / 48).max(2);
    let gap = line_h * 2;
    // short header block
    let mut y = margin;
    for _ in 0..3 {
        page.text_line(y, margin, margin + size / 3 + rng.random_range(0..size / 16), line_h, rng);
        y += gap;
    }
    // one small body block around mid page
    let mut y = size / 2 + rng.random_range(0..size / 12);
    for _ in 0..3 {
        page.text_line(y, margin, size - margin - size / 4 - rng.random_range(0..size / 16), line_h, rng);
        y += gap;
    }
    // signature mark
    let sig = size / 16;
    page.fill_rect(size - margin - sig * 2, size - margin - sig, sig * 2, sig / 2 + 1, 90);
    page
}

/// Render one page of the given class. Deterministic in (seed, class, index).
pub fn render_page(class: usize, index: usize, size: u32, seed: u64) -> Image {
    let mix = seed
        ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut rng = ChaCha20Rng::seed_from_u64(mix);
    let size = size as usize;
    let mut page = match CLASS_NAMES[class] {
        "text" => gen_text(size, &mut rng),
        "form" => gen_form(size, &mut rng),
        "advert" => gen_advert(size, &mut rng),
        "memo" => gen_memo(size, &mut rng),
        _ => unreachable!(),
    };
    page.speckle(&mut rng);
    page.into_image()
}

/// Write the corpus as `out_dir/<class>/<class>_<index>.pgm` and return the
/// written paths grouped by class.
pub fn make_synthetic_corpus(out_dir: &Path, opts: &SynthOptions) -> Result<Vec<(String, Vec<PathBuf>)>, SynthError> {
    if !(2..=CLASS_NAMES.len()).contains(&opts.classes) {
        return Err(SynthError::BadClassCount(opts.classes));
    }
    if opts.per_class < 10 {
        return Err(SynthError::TooFewPerClass(opts.per_class));
    }
    if opts.size < 32 {
        return Err(SynthError::PageTooSmall(opts.size));
    }
    let mut written = Vec::new();
    for (class, name) in CLASS_NAMES.iter().enumerate().take(opts.classes) {
        let dir = out_dir.join(name);
        fs::create_dir_all(&dir)?;
        let mut paths = Vec::with_capacity(opts.per_class);
        for index in 0..opts.per_class {
            let img = render_page(class, index, opts.size, opts.seed);
            let path = dir.join(format!("{name}_{index:03}.pgm"));
            img.write_pgm(&path).map_err(|e| match e {
                crate::image::ImageError::Io(io) => SynthError::Io(io),
                other => SynthError::Io(std::io::Error::other(other.to_string())),
            })?;
            paths.push(path);
        }
        written.push((name.to_string(), paths));
    }
    Ok(written)
}
