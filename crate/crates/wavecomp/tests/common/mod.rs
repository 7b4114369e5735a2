//! Shared test helpers: an independent 5/3 filter-bank oracle and random
//! image generators. The oracle computes every output coefficient directly
//! from symmetric-extension indexing, with no in-place lifting passes, so it
//! exercises none of the library's transform code paths.

#![allow(dead_code)]

pub mod grad;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use wavecomp::image::Image;

/// Whole-sample symmetric reflection of index `i` into `0..n`.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1).max(1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

fn floor_div2(v: i32) -> i32 {
    v.div_euclid(2)
}

fn floor_div4(v: i32) -> i32 {
    v.div_euclid(4)
}

/// One 5/3 analysis pass on a signal, each output evaluated independently:
/// high-pass h[k] from the extended input, then low-pass s[k] from the input
/// and the (extension-indexed) high-pass outputs.
pub fn oracle_analyze_1d(signal: &[i32]) -> (Vec<i32>, Vec<i32>) {
    let n = signal.len();
    if n < 2 {
        return (signal.to_vec(), Vec::new());
    }
    let at = |i: isize| signal[mirror(i, n)];
    let n_high = n / 2;
    let n_low = n.div_ceil(2);
    let high: Vec<i32> = (0..n_high)
        .map(|k| {
            let i = 2 * k as isize + 1;
            at(i) - floor_div2(at(i - 1) + at(i + 1))
        })
        .collect();
    // detail outputs reflect with the same whole-sample rule, expressed in
    // interleaved coordinates (odd positions)
    let high_at = |i: isize| {
        let m = mirror(i, n);
        assert_eq!(m % 2, 1, "reflection must land on a high-pass position");
        high[m / 2]
    };
    let low: Vec<i32> = (0..n_low)
        .map(|k| {
            let i = 2 * k as isize;
            signal[i as usize] + floor_div4(high_at(i - 1) + high_at(i + 1) + 2)
        })
        .collect();
    (low, high)
}

/// Subbands of one 2-D decomposition level in the oracle's own layout.
pub struct OracleBands {
    pub ll: Vec<Vec<i32>>,
    pub hl: Vec<Vec<i32>>,
    pub lh: Vec<Vec<i32>>,
    pub hh: Vec<Vec<i32>>,
}

/// One 2-D analysis level: columns first, then rows, matching the codec's
/// declared pass order but via the direct per-sample formulas above.
pub fn oracle_analyze_2d(grid: &[Vec<i32>]) -> OracleBands {
    let h = grid.len();
    let w = grid[0].len();

    // vertical pass: split each column into low/high halves
    let mut col_low = vec![vec![0i32; w]; h.div_ceil(2)];
    let mut col_high = vec![vec![0i32; w]; h / 2];
    for x in 0..w {
        let column: Vec<i32> = (0..h).map(|y| grid[y][x]).collect();
        let (low, high) = oracle_analyze_1d(&column);
        for (y, v) in low.into_iter().enumerate() {
            col_low[y][x] = v;
        }
        for (y, v) in high.into_iter().enumerate() {
            col_high[y][x] = v;
        }
    }

    let split_rows = |rows: &[Vec<i32>]| {
        let mut lows = Vec::with_capacity(rows.len());
        let mut highs = Vec::with_capacity(rows.len());
        for row in rows {
            let (low, high) = oracle_analyze_1d(row);
            lows.push(low);
            highs.push(high);
        }
        (lows, highs)
    };
    let (ll, hl) = split_rows(&col_low);
    let (lh, hh) = split_rows(&col_high);
    OracleBands { ll, hl, lh, hh }
}

pub fn image_to_rows(img: &Image) -> Vec<Vec<i32>> {
    (0..img.height())
        .map(|y| (0..img.width()).map(|x| img.get(x, y) as i32).collect())
        .collect()
}

pub fn grid_to_rows(grid: &wavecomp::wavelet::CoeffGrid) -> Vec<Vec<i32>> {
    (0..grid.height())
        .map(|y| (0..grid.width()).map(|x| grid.get(x, y)).collect())
        .collect()
}

pub fn random_image(rng: &mut ChaCha20Rng, w: u32, h: u32) -> Image {
    let samples = (0..w as usize * h as usize).map(|_| rng.random::<u8>()).collect();
    Image::new(w, h, samples).unwrap()
}
