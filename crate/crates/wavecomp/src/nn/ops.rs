//! Forward and backward passes for the layer set.
//!
//! Convolutions and dense layers lower to GEMM (im2col for the former);
//! images within a batch are independent, so those loops parallelize
//! per image without changing any summation order.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::{pool, NnError, Tensor};

/// Probabilities are clamped into [EPS, 1 - EPS] before taking logs.
pub const LOSS_EPS: f64 = 1e-12;

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize), NnError> {
    match t.shape() {
        &[a, b, c, d] => Ok((a, b, c, d)),
        s => Err(NnError::ShapeMismatch(format!("{what} must be rank 4, got {s:?}"))),
    }
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize), NnError> {
    match t.shape() {
        &[a, b] => Ok((a, b)),
        s => Err(NnError::ShapeMismatch(format!("{what} must be rank 2, got {s:?}"))),
    }
}

fn gemm_rowmajor(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// c (m x n) += a^T (m x k, stored as k x m row-major) * b (k x n row-major)
fn gemm_at_b(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// c (m x n) = a (m x k row-major) * b^T (k x n, stored as n x k row-major)
fn gemm_a_bt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Lay out one image's convolution patches: row (y*w + x) holds the k x k x
/// cin receptive field at (y, x), zero-padded at the borders.
fn im2col(img: &[f64], h: usize, w: usize, cin: usize, ksize: usize, col: &mut [f64]) {
    let pad = ksize / 2;
    let patch = ksize * ksize * cin;
    col.fill(0.0);
    for y in 0..h {
        for dy in 0..ksize {
            let iy = y + dy;
            if iy < pad || iy >= h + pad {
                continue;
            }
            let iy = iy - pad;
            for dx in 0..ksize {
                let col_base = (dy * ksize + dx) * cin;
                // x range keeping ix = x + dx - pad inside the row
                let x_lo = pad.saturating_sub(dx);
                let x_hi = (w + pad - dx).min(w);
                for x in x_lo..x_hi {
                    let ix = x + dx - pad;
                    let src = (iy * w + ix) * cin;
                    let dst = (y * w + x) * patch + col_base;
                    col[dst..dst + cin].copy_from_slice(&img[src..src + cin]);
                }
            }
        }
    }
}

/// Scatter-add of the im2col layout's gradient back onto an image.
fn col2im(col: &[f64], h: usize, w: usize, cin: usize, ksize: usize, img: &mut [f64]) {
    let pad = ksize / 2;
    let patch = ksize * ksize * cin;
    for y in 0..h {
        for dy in 0..ksize {
            let iy = y + dy;
            if iy < pad || iy >= h + pad {
                continue;
            }
            let iy = iy - pad;
            for dx in 0..ksize {
                let col_base = (dy * ksize + dx) * cin;
                let x_lo = pad.saturating_sub(dx);
                let x_hi = (w + pad - dx).min(w);
                for x in x_lo..x_hi {
                    let ix = x + dx - pad;
                    let dst = (iy * w + ix) * cin;
                    let src = (y * w + x) * patch + col_base;
                    for c in 0..cin {
                        img[dst + c] += col[src + c];
                    }
                }
            }
        }
    }
}

fn conv_shapes(
    input: &Tensor,
    kernels: &Tensor,
) -> Result<(usize, usize, usize, usize, usize, usize), NnError> {
    let (b, h, w, cin) = dims4(input, "conv input")?;
    let (kh, kw, kcin, cout) = dims4(kernels, "conv kernels")?;
    if kh != kw || kh % 2 == 0 {
        return Err(NnError::ShapeMismatch(format!("kernel must be square and odd, got {kh}x{kw}")));
    }
    if kcin != cin {
        return Err(NnError::ShapeMismatch(format!("kernel expects {kcin} input channels, input has {cin}")));
    }
    Ok((b, h, w, cin, kh, cout))
}

// Below this patch size (k*k*cin) the GEMM's packing overhead loses to
// plain loops over the receptive field, so early layers take a direct path.
const DIRECT_CONV_PATCH: usize = 32;

#[allow(clippy::too_many_arguments)]
fn conv_direct_forward(
    in_img: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    ksize: usize,
    cout: usize,
    kernels: &[f64],
    bias: &[f64],
    out_img: &mut [f64],
) {
    let pad = ksize / 2;
    for y in 0..h {
        for x in 0..w {
            let out_px = &mut out_img[(y * w + x) * cout..][..cout];
            out_px.copy_from_slice(bias);
            for dy in 0..ksize {
                let iy = y + dy;
                if iy < pad || iy >= h + pad {
                    continue;
                }
                let iy = iy - pad;
                for dx in 0..ksize {
                    let ix = x + dx;
                    if ix < pad || ix >= w + pad {
                        continue;
                    }
                    let ix = ix - pad;
                    let px = &in_img[(iy * w + ix) * cin..][..cin];
                    for (c, &v) in px.iter().enumerate() {
                        let krow = &kernels[((dy * ksize + dx) * cin + c) * cout..][..cout];
                        for (o, k) in out_px.iter_mut().zip(krow) {
                            *o += v * k;
                        }
                    }
                }
            }
        }
    }
}

/// Images per GEMM call: big enough to amortize the packing cost of small
/// per-image matrices. Fixed so chunk boundaries (and therefore float
/// summation order) never depend on the thread count.
const CONV_CHUNK: usize = 8;

/// Images per GEMM for im2col-path convolutions: aim the col matrix at a
/// cache-friendly size so tiny layers batch many images into one call while
/// large layers stay near one image per call. Depends only on shapes, so
/// chunking (and float summation order) is thread-count independent.
fn gemm_chunk_images(hw: usize, patch: usize) -> usize {
    const TARGET_BYTES: usize = 6 << 20;
    (TARGET_BYTES / (hw * patch * std::mem::size_of::<f64>()).max(1)).clamp(1, 1024)
}

/// Shared convolution core over raw slices, parallel across image chunks:
/// direct loops for small patches, im2col + GEMM otherwise.
#[allow(clippy::too_many_arguments)]
fn conv_core(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    ksize: usize,
    cout: usize,
    kernels: &[f64],
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let patch = ksize * ksize * cin;
    let img_in = h * w * cin;
    let img_out = h * w * cout;
    if patch < DIRECT_CONV_PATCH {
        let zero_bias = vec![0.0; cout];
        let bias = bias.unwrap_or(&zero_bias);
        out.par_chunks_mut(img_out)
            .zip(input.par_chunks(img_in))
            .for_each(|(out_img, in_img)| {
                conv_direct_forward(in_img, h, w, cin, ksize, cout, kernels, bias, out_img);
            });
        return;
    }
    let chunk = gemm_chunk_images(h * w, patch);
    out.par_chunks_mut(img_out * chunk)
        .zip(input.par_chunks(img_in * chunk))
        .for_each(|(out_chunk, in_chunk)| {
            let n_img = in_chunk.len() / img_in;
            let mut col = pool::take_zeroed(n_img * h * w * patch);
            for (i, in_img) in in_chunk.chunks_exact(img_in).enumerate() {
                im2col(in_img, h, w, cin, ksize, &mut col[i * h * w * patch..][..h * w * patch]);
            }
            gemm_rowmajor(n_img * h * w, patch, cout, &col, kernels, 0.0, out_chunk);
            pool::give_back(col);
            if let Some(bias) = bias {
                for px in out_chunk.chunks_exact_mut(cout) {
                    for (v, b) in px.iter_mut().zip(bias) {
                        *v += b;
                    }
                }
            }
        });
}

/// Same-padded stride-1 convolution: (B,H,W,Cin) -> (B,H,W,Cout).
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (batch, h, w, cin, ksize, cout) = conv_shapes(input, kernels)?;
    if bias.shape() != [cout] {
        return Err(NnError::ShapeMismatch(format!("bias shape {:?} != [{cout}]", bias.shape())));
    }
    let mut out = Tensor::zeros(&[batch, h, w, cout]);
    conv_core(input.data(), h, w, cin, ksize, cout, kernels.data(), Some(bias.data()), out.data_mut());
    Ok(out)
}

struct ConvDims {
    h: usize,
    w: usize,
    cin: usize,
    ksize: usize,
    cout: usize,
}

fn conv_grad_bias(grad_out: &Tensor, d: &ConvDims) -> Tensor {
    let img_out = d.h * d.w * d.cout;
    let mut grad_bias = Tensor::zeros(&[d.cout]);
    let partials: Vec<Vec<f64>> = grad_out
        .data()
        .par_chunks(img_out * CONV_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; d.cout];
            for px in chunk.chunks_exact(d.cout) {
                for (g, v) in acc.iter_mut().zip(px) {
                    *g += v;
                }
            }
            acc
        })
        .collect();
    for partial in partials {
        for (g, p) in grad_bias.data_mut().iter_mut().zip(partial) {
            *g += p;
        }
    }
    grad_bias
}

// Input gradient: patch-space gradient via GEMM against the kernels, then
// scatter-add back onto the images (the adjoint of im2col).
fn conv_grad_input(kernels: &Tensor, grad_out: &Tensor, batch: usize, d: &ConvDims) -> Tensor {
    let patch = d.ksize * d.ksize * d.cin;
    let img_in = d.h * d.w * d.cin;
    let img_out = d.h * d.w * d.cout;
    let hw = d.h * d.w;
    let chunk = gemm_chunk_images(hw, patch);
    let mut grad_input = Tensor::zeros(&[batch, d.h, d.w, d.cin]);
    grad_input
        .data_mut()
        .par_chunks_mut(img_in * chunk)
        .zip(grad_out.data().par_chunks(img_out * chunk))
        .for_each(|(gin_chunk, gout_chunk)| {
            let n_img = gin_chunk.len() / img_in;
            let mut gcol = pool::take_zeroed(n_img * hw * patch);
            gemm_a_bt(n_img * hw, d.cout, patch, gout_chunk, kernels.data(), &mut gcol);
            for (i, gin_img) in gin_chunk.chunks_exact_mut(img_in).enumerate() {
                col2im(&gcol[i * hw * patch..][..hw * patch], d.h, d.w, d.cin, d.ksize, gin_img);
            }
            pool::give_back(gcol);
        });
    grad_input
}

// Kernel gradient sums over images; shape-determined chunks keep the final
// accumulation order independent of the thread count.
fn conv_grad_kernels(input: &Tensor, grad_out: &Tensor, d: &ConvDims) -> Tensor {
    let patch = d.ksize * d.ksize * d.cin;
    let img_in = d.h * d.w * d.cin;
    let img_out = d.h * d.w * d.cout;
    let hw = d.h * d.w;
    let direct = patch < DIRECT_CONV_PATCH;
    let chunk = if direct { CONV_CHUNK } else { gemm_chunk_images(hw, patch) };
    let partials: Vec<Vec<f64>> = input
        .data()
        .par_chunks(img_in * chunk)
        .zip(grad_out.data().par_chunks(img_out * chunk))
        .map(|(in_chunk, gout_chunk)| {
            let mut acc = vec![0.0; patch * d.cout];
            if direct {
                for (in_img, gout_img) in
                    in_chunk.chunks_exact(img_in).zip(gout_chunk.chunks_exact(img_out))
                {
                    conv_direct_grad_kernels(in_img, gout_img, d.h, d.w, d.cin, d.ksize, d.cout, &mut acc);
                }
                return acc;
            }
            let n_img = in_chunk.len() / img_in;
            let mut col = pool::take_zeroed(n_img * hw * patch);
            for (i, in_img) in in_chunk.chunks_exact(img_in).enumerate() {
                im2col(in_img, d.h, d.w, d.cin, d.ksize, &mut col[i * hw * patch..][..hw * patch]);
            }
            gemm_at_b(patch, n_img * hw, d.cout, &col, gout_chunk, 1.0, &mut acc);
            pool::give_back(col);
            acc
        })
        .collect();
    let mut grad_kernels = Tensor::zeros(&[d.ksize, d.ksize, d.cin, d.cout]);
    for partial in partials {
        for (g, p) in grad_kernels.data_mut().iter_mut().zip(partial) {
            *g += p;
        }
    }
    grad_kernels
}

fn conv_backward_shapes(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> Result<(usize, ConvDims), NnError> {
    let (batch, h, w, cin, ksize, cout) = conv_shapes(input, kernels)?;
    if grad_out.shape() != [batch, h, w, cout] {
        return Err(NnError::ShapeMismatch(format!(
            "grad_out shape {:?} != [{batch}, {h}, {w}, {cout}]",
            grad_out.shape()
        )));
    }
    Ok((batch, ConvDims { h, w, cin, ksize, cout }))
}

/// Gradients of [`conv2d_forward`] w.r.t. input, kernels, and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let (batch, d) = conv_backward_shapes(input, kernels, grad_out)?;
    Ok((
        conv_grad_input(kernels, grad_out, batch, &d),
        conv_grad_kernels(input, grad_out, &d),
        conv_grad_bias(grad_out, &d),
    ))
}

/// Kernel and bias gradients only, for the first layer of a network where
/// nothing consumes the input gradient.
pub fn conv2d_backward_params(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor), NnError> {
    let (_, d) = conv_backward_shapes(input, kernels, grad_out)?;
    Ok((conv_grad_kernels(input, grad_out, &d), conv_grad_bias(grad_out, &d)))
}

#[allow(clippy::too_many_arguments)]
fn conv_direct_grad_kernels(
    in_img: &[f64],
    gout_img: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    ksize: usize,
    cout: usize,
    acc: &mut [f64],
) {
    let pad = ksize / 2;
    for y in 0..h {
        for dy in 0..ksize {
            let iy = y + dy;
            if iy < pad || iy >= h + pad {
                continue;
            }
            let iy = iy - pad;
            for x in 0..w {
                let gout_px = &gout_img[(y * w + x) * cout..][..cout];
                for dx in 0..ksize {
                    let ix = x + dx;
                    if ix < pad || ix >= w + pad {
                        continue;
                    }
                    let ix = ix - pad;
                    let in_px = &in_img[(iy * w + ix) * cin..][..cin];
                    for (c, &v) in in_px.iter().enumerate() {
                        let arow = &mut acc[((dy * ksize + dx) * cin + c) * cout..][..cout];
                        for (a, go) in arow.iter_mut().zip(gout_px) {
                            *a += v * go;
                        }
                    }
                }
            }
        }
    }
}

/// Routing record for the pooling backward pass: the flat input index that
/// won each output cell.
#[derive(Debug)]
pub struct PoolCache {
    in_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl Drop for PoolCache {
    fn drop(&mut self) {
        pool::give_back_indices(std::mem::take(&mut self.argmax));
    }
}

// Elementwise passes split work into fixed-size chunks so the result (and,
// for dropout, the mask) never depends on how many threads run them.
const PAR_CHUNK: usize = 1 << 16;

/// 2x2 max pooling with stride 2; odd extents keep their last row/column
/// (windows are clipped, which acts as -inf padding). Ties go to the first
/// element in row-major window order.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, PoolCache), NnError> {
    let (batch, h, w, ch) = dims4(input, "pool input")?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let img_in = h * w * ch;
    let img_out = oh * ow * ch;
    let mut out = Tensor::zeros(&[batch, oh, ow, ch]);
    let mut argmax = pool::take_zeroed_indices(batch * img_out);
    out.data_mut()
        .par_chunks_mut(img_out)
        .zip(argmax.par_chunks_mut(img_out))
        .zip(input.data().par_chunks(img_in))
        .enumerate()
        .for_each(|(b, ((out_img, arg_img), in_img))| {
            let base = b * img_in;
            for oy in 0..oh {
                for ox in 0..ow {
                    let out_px = (oy * ow + ox) * ch;
                    for c in 0..ch {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for dy in 0..2 {
                            let y = oy * 2 + dy;
                            if y >= h {
                                continue;
                            }
                            for dx in 0..2 {
                                let x = ox * 2 + dx;
                                if x >= w {
                                    continue;
                                }
                                let idx = (y * w + x) * ch + c;
                                if in_img[idx] > best {
                                    best = in_img[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out_img[out_px + c] = best;
                        arg_img[out_px + c] = base + best_idx;
                    }
                }
            }
        });
    Ok((out, PoolCache { in_shape: input.shape().to_vec(), argmax }))
}

pub fn maxpool2x2_backward(cache: &PoolCache, grad_out: &Tensor) -> Result<Tensor, NnError> {
    if grad_out.len() != cache.argmax.len() {
        return Err(NnError::ShapeMismatch(format!(
            "pool grad has {} values, cache expects {}",
            grad_out.len(),
            cache.argmax.len()
        )));
    }
    let batch = cache.in_shape[0];
    let img_in: usize = cache.in_shape[1..].iter().product();
    let img_out = cache.argmax.len() / batch;
    let mut grad_in = Tensor::zeros(&cache.in_shape);
    grad_in
        .data_mut()
        .par_chunks_mut(img_in)
        .zip(cache.argmax.par_chunks(img_out))
        .zip(grad_out.data().par_chunks(img_out))
        .enumerate()
        .for_each(|(b, ((gin_img, arg_img), gout_img))| {
            let base = b * img_in;
            for (&src, &g) in arg_img.iter().zip(gout_img) {
                gin_img[src - base] += g;
            }
        });
    Ok(grad_in)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(input.shape());
    out.data_mut()
        .par_chunks_mut(PAR_CHUNK)
        .zip(input.data().par_chunks(PAR_CHUNK))
        .for_each(|(dst, src)| {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s.max(0.0);
            }
        });
    out
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
    if input.shape() != grad_out.shape() {
        return Err(NnError::ShapeMismatch("relu grad shape differs from input".into()));
    }
    let mut grad = Tensor::zeros(input.shape());
    grad.data_mut()
        .par_chunks_mut(PAR_CHUNK)
        .zip(input.data().par_chunks(PAR_CHUNK))
        .zip(grad_out.data().par_chunks(PAR_CHUNK))
        .for_each(|((dst, x), g)| {
            for ((d, &x), &g) in dst.iter_mut().zip(x).zip(g) {
                *d = if x > 0.0 { g } else { 0.0 };
            }
        });
    Ok(grad)
}

/// Keep/scale decisions made during a training-mode dropout pass.
#[derive(Debug)]
pub struct DropoutMask {
    scale: Vec<f64>,
}

impl Drop for DropoutMask {
    fn drop(&mut self) {
        pool::give_back(std::mem::take(&mut self.scale));
    }
}

/// Inverted dropout: in training each unit is zeroed with probability `rate`
/// and survivors are scaled by 1/(1-rate); in eval mode this is the identity.
///
/// The caller's RNG only seeds one sub-generator per fixed-size chunk, so the
/// mask is a function of the RNG state and the tensor length alone.
pub fn dropout_forward(
    input: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut ChaCha20Rng,
) -> (Tensor, DropoutMask) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if !training || rate == 0.0 {
        let mut scale = pool::take_zeroed(input.len());
        scale.fill(1.0);
        return (input.clone(), DropoutMask { scale });
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let threshold = (rate * 2f64.powi(32)) as u64;
    let n_chunks = input.len().div_ceil(PAR_CHUNK);
    let seeds: Vec<u64> = (0..n_chunks).map(|_| rng.random()).collect();

    // splitmix64 is plenty for mask bits and an order of magnitude cheaper
    // per draw than the caller's generator
    let splitmix = |state: &mut u64| -> u64 {
        *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };

    let mut scale = pool::take_zeroed(input.len());
    let mut out = Tensor::zeros(input.shape());
    scale
        .par_chunks_mut(PAR_CHUNK)
        .zip(out.data_mut().par_chunks_mut(PAR_CHUNK))
        .zip(input.data().par_chunks(PAR_CHUNK))
        .zip(seeds)
        .for_each(|(((mask, dst), src), seed)| {
            let mut state = seed;
            for ((m, d), &s) in mask.iter_mut().zip(dst).zip(src) {
                let draw = splitmix(&mut state) >> 32;
                *m = if draw < threshold { 0.0 } else { keep_scale };
                *d = s * *m;
            }
        });
    (out, DropoutMask { scale })
}

pub fn dropout_backward(mask: &DropoutMask, grad_out: &Tensor) -> Result<Tensor, NnError> {
    if mask.scale.len() != grad_out.len() {
        return Err(NnError::ShapeMismatch("dropout grad size differs from mask".into()));
    }
    let mut grad = Tensor::zeros(grad_out.shape());
    grad.data_mut()
        .par_chunks_mut(PAR_CHUNK)
        .zip(grad_out.data().par_chunks(PAR_CHUNK))
        .zip(mask.scale.par_chunks(PAR_CHUNK))
        .for_each(|((dst, g), s)| {
            for ((d, &g), &s) in dst.iter_mut().zip(g).zip(s) {
                *d = g * s;
            }
        });
    Ok(grad)
}

/// Fully connected layer: (B,In) x (In,Out) + bias.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (batch, n_in) = dims2(input, "dense input")?;
    let (w_in, n_out) = dims2(weights, "dense weights")?;
    if w_in != n_in || bias.shape() != [n_out] {
        return Err(NnError::ShapeMismatch(format!(
            "dense shapes input {:?} weights {:?} bias {:?}",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[batch, n_out]);
    gemm_rowmajor(batch, n_in, n_out, input.data(), weights.data(), 0.0, out.data_mut());
    for row in out.data_mut().chunks_exact_mut(n_out) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(out)
}

pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let (batch, n_in) = dims2(input, "dense input")?;
    let (_, n_out) = dims2(weights, "dense weights")?;
    if grad_out.shape() != [batch, n_out] {
        return Err(NnError::ShapeMismatch("dense grad_out shape".into()));
    }
    let mut grad_bias = Tensor::zeros(&[n_out]);
    for row in grad_out.data().chunks_exact(n_out) {
        for (g, v) in grad_bias.data_mut().iter_mut().zip(row) {
            *g += v;
        }
    }
    let mut grad_weights = Tensor::zeros(&[n_in, n_out]);
    gemm_at_b(n_in, batch, n_out, input.data(), grad_out.data(), 0.0, grad_weights.data_mut());
    let mut grad_input = Tensor::zeros(&[batch, n_in]);
    gemm_a_bt(batch, n_out, n_in, grad_out.data(), weights.data(), grad_input.data_mut());
    Ok((grad_input, grad_weights, grad_bias))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor, NnError> {
    let (_, n) = dims2(logits, "softmax logits")?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Mean over the batch of the per-class binary cross entropy
/// -(1/N) * sum_i [a_i log p_i + (1 - a_i) log(1 - p_i)].
pub fn cross_entropy(actual: &Tensor, predicted: &Tensor) -> Result<f64, NnError> {
    if actual.shape() != predicted.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "targets {:?} vs predictions {:?}",
            actual.shape(),
            predicted.shape()
        )));
    }
    let (batch, n) = dims2(actual, "loss targets")?;
    let mut total = 0.0;
    for (a_row, p_row) in actual.data().chunks_exact(n).zip(predicted.data().chunks_exact(n)) {
        let mut s = 0.0;
        for (&a, &p) in a_row.iter().zip(p_row) {
            let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            s += a * p.ln() + (1.0 - a) * (1.0 - p).ln();
        }
        total += -s / n as f64;
    }
    Ok(total / batch as f64)
}

/// Gradient of [`cross_entropy`] composed with [`softmax`], w.r.t. the
/// logits, averaged over the batch.
pub fn cross_entropy_softmax_grad(actual: &Tensor, probs: &Tensor) -> Result<Tensor, NnError> {
    if actual.shape() != probs.shape() {
        return Err(NnError::ShapeMismatch("loss grad shapes differ".into()));
    }
    let (batch, n) = dims2(actual, "loss targets")?;
    let mut grad = Tensor::zeros(&[batch, n]);
    for ((a_row, p_row), g_row) in actual
        .data()
        .chunks_exact(n)
        .zip(probs.data().chunks_exact(n))
        .zip(grad.data_mut().chunks_exact_mut(n))
    {
        // dL/dp_i chained through the softmax Jacobian, with the p_i factors
        // cancelled analytically: u_i = p_i * dL/dp_i * (-N) stays bounded,
        // so a fully saturated softmax (p underflowed to exact 0/1) still
        // produces a finite restoring gradient instead of freezing training
        let mut u = vec![0.0; n];
        let mut sum_u = 0.0;
        for i in 0..n {
            let p = p_row[i].clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            u[i] = a_row[i] - (1.0 - a_row[i]) * p / (1.0 - p);
            sum_u += u[i];
        }
        let scale = -1.0 / (n as f64 * batch as f64);
        for j in 0..n {
            let p = p_row[j].clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            g_row[j] = scale * (u[j] - p * sum_u);
        }
    }
    Ok(grad)
}
