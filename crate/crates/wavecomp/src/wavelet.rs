//! Reversible multi-level 2-D wavelet transform.
//!
//! The filter is the integer 5/3 lifting scheme with whole-sample symmetric
//! extension at the edges, so every forward transform inverts exactly in
//! integer arithmetic. Odd extents give the low-pass band the ceiling share.
//!
//! Pass order per level: columns (vertical) first, then rows; the inverse
//! undoes rows first. The rounding steps do not commute across axes, so the
//! order is part of the format.

use thiserror::Error;

use crate::image::Image;

/// Decomposition depth cap; i32 coefficients keep ample headroom below it.
pub const MAX_LEVELS: u8 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WaveletError {
    #[error("image has no samples")]
    EmptyImage,
    #[error("levels must be in 1..={MAX_LEVELS}, got {0}")]
    InvalidLevels(u8),
    #[error("{levels} levels need min(width, height) >= {}, image has {min_dim}", 1u32 << levels)]
    TooManyLevels { levels: u8, min_dim: u32 },
    #[error("subband {band} at depth {depth} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    ShapeMismatch { band: &'static str, depth: u8, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("resolution {resolution} out of range 1..={levels}")]
    BadResolution { resolution: u8, levels: u8 },
}

/// Integer coefficient grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoeffGrid {
    width: usize,
    height: usize,
    data: Vec<i32>,
}

impl CoeffGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        CoeffGrid { width, height, data: vec![0; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<i32>) -> Self {
        assert_eq!(data.len(), width * height, "coefficient count must match dims");
        CoeffGrid { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> i32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: i32) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }
}

/// The three detail subbands produced at one decomposition depth.
/// `hl` is horizontally high-pass, `lh` vertically high-pass, `hh` both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetailBands {
    pub hl: CoeffGrid,
    pub lh: CoeffGrid,
    pub hh: CoeffGrid,
}

/// Full decomposition of an image: the deepest approximation plus one
/// detail triplet per depth, `details[0]` being the finest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubbandPyramid {
    levels: u8,
    base_width: usize,
    base_height: usize,
    ll: CoeffGrid,
    details: Vec<DetailBands>,
}

impl SubbandPyramid {
    /// Assemble a pyramid from parts, checking the ceil-halving dimension chain.
    pub fn from_parts(
        levels: u8,
        base_width: usize,
        base_height: usize,
        ll: CoeffGrid,
        details: Vec<DetailBands>,
    ) -> Result<Self, WaveletError> {
        if !(1..=MAX_LEVELS).contains(&levels) {
            return Err(WaveletError::InvalidLevels(levels));
        }
        if base_width == 0 || base_height == 0 {
            return Err(WaveletError::EmptyImage);
        }
        assert_eq!(details.len(), levels as usize, "one detail triplet per level");
        let pyramid = SubbandPyramid { levels, base_width, base_height, ll, details };
        pyramid.check_shapes()?;
        Ok(pyramid)
    }

    pub fn levels(&self) -> u8 {
        self.levels
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    pub fn base_height(&self) -> usize {
        self.base_height
    }

    /// Approximation band at the deepest level.
    pub fn ll(&self) -> &CoeffGrid {
        &self.ll
    }

    /// Detail triplet at `depth` (1 = finest).
    pub fn details_at(&self, depth: u8) -> &DetailBands {
        &self.details[depth as usize - 1]
    }

    fn check_shapes(&self) -> Result<(), WaveletError> {
        let (mut w, mut h) = (self.base_width, self.base_height);
        for depth in 1..=self.levels {
            let (lw, lh) = (w.div_ceil(2), h.div_ceil(2));
            let (hw, hh) = (w / 2, h / 2);
            let d = self.details_at(depth);
            let expect = |band: &'static str, g: &CoeffGrid, want_w: usize, want_h: usize| {
                if g.width() != want_w || g.height() != want_h {
                    Err(WaveletError::ShapeMismatch {
                        band,
                        depth,
                        got_w: g.width(),
                        got_h: g.height(),
                        want_w,
                        want_h,
                    })
                } else {
                    Ok(())
                }
            };
            expect("HL", &d.hl, hw, lh)?;
            expect("LH", &d.lh, lw, hh)?;
            expect("HH", &d.hh, hw, hh)?;
            if depth == self.levels {
                expect("LL", &self.ll, lw, lh)?;
            }
            (w, h) = (lw, lh);
        }
        Ok(())
    }
}

/// LL grid dimensions at resolution `r` of a `levels`-deep pyramid over a
/// `base_width` x `base_height` image (`r = 1` coarsest, `r = levels` finest).
pub fn ll_dims(base_width: usize, base_height: usize, levels: u8, resolution: u8) -> (usize, usize) {
    let steps = levels - resolution + 1;
    let (mut w, mut h) = (base_width, base_height);
    for _ in 0..steps {
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    (w, h)
}

// 5/3 analysis lifting over an interleaved buffer: odd positions become
// high-pass, even positions low-pass. Arithmetic shifts give the floor
// rounding of T.800 Annex F.
fn lift_forward(buf: &mut [i32]) {
    let n = buf.len();
    if n < 2 {
        return;
    }
    for i in (1..n).step_by(2) {
        let left = buf[i - 1];
        let right = if i + 1 < n { buf[i + 1] } else { buf[i - 1] };
        buf[i] -= (left + right) >> 1;
    }
    for i in (0..n).step_by(2) {
        let left = if i > 0 { buf[i - 1] } else { buf[1] };
        let right = if i + 1 < n { buf[i + 1] } else { buf[i - 1] };
        buf[i] += (left + right + 2) >> 2;
    }
}

fn lift_inverse(buf: &mut [i32]) {
    let n = buf.len();
    if n < 2 {
        return;
    }
    for i in (0..n).step_by(2) {
        let left = if i > 0 { buf[i - 1] } else { buf[1] };
        let right = if i + 1 < n { buf[i + 1] } else { buf[i - 1] };
        buf[i] -= (left + right + 2) >> 2;
    }
    for i in (1..n).step_by(2) {
        let left = buf[i - 1];
        let right = if i + 1 < n { buf[i + 1] } else { buf[i - 1] };
        buf[i] += (left + right) >> 1;
    }
}

fn analyze_level(grid: &CoeffGrid) -> (CoeffGrid, DetailBands) {
    let (w, h) = (grid.width(), grid.height());
    let mut work = grid.clone();

    let mut col = vec![0i32; h];
    for x in 0..w {
        for (y, c) in col.iter_mut().enumerate() {
            *c = work.get(x, y);
        }
        lift_forward(&mut col);
        for (y, c) in col.iter().enumerate() {
            work.set(x, y, *c);
        }
    }
    for y in 0..h {
        lift_forward(&mut work.data[y * w..(y + 1) * w]);
    }

    // deinterleave: even/even -> LL, odd/even -> HL, even/odd -> LH, odd/odd -> HH
    let (lw, lh) = (w.div_ceil(2), h.div_ceil(2));
    let (hw, hh) = (w / 2, h / 2);
    let mut ll = CoeffGrid::zeros(lw, lh);
    let mut hl = CoeffGrid::zeros(hw, lh);
    let mut lhb = CoeffGrid::zeros(lw, hh);
    let mut hhb = CoeffGrid::zeros(hw, hh);
    for y in 0..h {
        for x in 0..w {
            let v = work.get(x, y);
            match (x % 2, y % 2) {
                (0, 0) => ll.set(x / 2, y / 2, v),
                (1, 0) => hl.set(x / 2, y / 2, v),
                (0, 1) => lhb.set(x / 2, y / 2, v),
                (1, 1) => hhb.set(x / 2, y / 2, v),
                _ => unreachable!(),
            }
        }
    }
    (ll, DetailBands { hl, lh: lhb, hh: hhb })
}

fn synthesize_level(ll: &CoeffGrid, details: &DetailBands) -> CoeffGrid {
    let w = ll.width() + details.hl.width();
    let h = ll.height() + details.lh.height();
    let mut work = CoeffGrid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = match (x % 2, y % 2) {
                (0, 0) => ll.get(x / 2, y / 2),
                (1, 0) => details.hl.get(x / 2, y / 2),
                (0, 1) => details.lh.get(x / 2, y / 2),
                (1, 1) => details.hh.get(x / 2, y / 2),
                _ => unreachable!(),
            };
            work.set(x, y, v);
        }
    }

    for y in 0..h {
        lift_inverse(&mut work.data[y * w..(y + 1) * w]);
    }
    let mut col = vec![0i32; h];
    for x in 0..w {
        for (y, c) in col.iter_mut().enumerate() {
            *c = work.get(x, y);
        }
        lift_inverse(&mut col);
        for (y, c) in col.iter().enumerate() {
            work.set(x, y, *c);
        }
    }
    work
}

/// Decompose an image to `levels` depths.
pub fn forward_dwt(image: &Image, levels: u8) -> Result<SubbandPyramid, WaveletError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(WaveletError::EmptyImage);
    }
    if !(1..=MAX_LEVELS).contains(&levels) {
        return Err(WaveletError::InvalidLevels(levels));
    }
    let min_dim = image.width().min(image.height());
    if 1u32 << levels > min_dim {
        return Err(WaveletError::TooManyLevels { levels, min_dim });
    }

    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut current = CoeffGrid::from_data(w, h, image.samples().iter().map(|&v| v as i32).collect());
    let mut details = Vec::with_capacity(levels as usize);
    for _ in 0..levels {
        let (ll, bands) = analyze_level(&current);
        details.push(bands);
        current = ll;
    }
    SubbandPyramid::from_parts(levels, w, h, current, details)
}

/// Exact inverse of [`forward_dwt`]. Values are clamped into the 8-bit
/// range on output; pyramids produced by the forward transform land there
/// already.
pub fn inverse_dwt(pyramid: &SubbandPyramid) -> Result<Image, WaveletError> {
    pyramid.check_shapes()?;
    let mut current = pyramid.ll.clone();
    for depth in (1..=pyramid.levels).rev() {
        current = synthesize_level(&current, pyramid.details_at(depth));
    }
    let samples = current.data().iter().map(|&v| v.clamp(0, 255) as u8).collect();
    Image::new(pyramid.base_width as u32, pyramid.base_height as u32, samples)
        .map_err(|_| WaveletError::EmptyImage)
}

/// One inverse level: combine an approximation band with a matching detail
/// triplet into the approximation one depth up. Shape-checked.
pub fn synthesize_with(ll: &CoeffGrid, details: &DetailBands) -> Result<CoeffGrid, WaveletError> {
    let (w, h) = (ll.width() + details.hl.width(), ll.height() + details.lh.height());
    let (lw, lh) = (w.div_ceil(2), h.div_ceil(2));
    let (hw, hh) = (w / 2, h / 2);
    let expect = |band: &'static str, gw: usize, gh: usize, want_w: usize, want_h: usize| {
        if gw != want_w || gh != want_h {
            Err(WaveletError::ShapeMismatch { band, depth: 0, got_w: gw, got_h: gh, want_w, want_h })
        } else {
            Ok(())
        }
    };
    expect("LL", ll.width(), ll.height(), lw, lh)?;
    expect("HL", details.hl.width(), details.hl.height(), hw, lh)?;
    expect("LH", details.lh.width(), details.lh.height(), lw, hh)?;
    expect("HH", details.hh.width(), details.hh.height(), hw, hh)?;
    Ok(synthesize_level(ll, details))
}

/// LL grid at resolution `r`: inverse-lift the depths below `r` and drop all
/// finer detail bands. `r = 1` returns the stored deepest LL.
pub fn reconstruct_ll(pyramid: &SubbandPyramid, resolution: u8) -> Result<CoeffGrid, WaveletError> {
    if resolution < 1 || resolution > pyramid.levels {
        return Err(WaveletError::BadResolution { resolution, levels: pyramid.levels });
    }
    let mut current = pyramid.ll.clone();
    let stop_depth = pyramid.levels - resolution + 1;
    for depth in ((stop_depth + 1)..=pyramid.levels).rev() {
        current = synthesize_level(&current, pyramid.details_at(depth));
    }
    Ok(current)
}
