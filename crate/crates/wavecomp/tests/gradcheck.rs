//! Finite-difference gradient verification for every layer and the loss,
//! plus the naive-loop convolution oracle.

mod common;

use common::grad::{guarded_rel_err, run_layer_checks, GRAD_TOL};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use wavecomp::nn::{conv2d_forward, Tensor};

/// Direct six-nested-loop convolution, written independently of the im2col
/// path in the library.
fn naive_conv(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Tensor {
    let (b_n, h, w, cin) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    let (k, _, _, cout) = (kernels.dim(0), kernels.dim(1), kernels.dim(2), kernels.dim(3));
    let pad = k as isize / 2;
    let mut out = Tensor::zeros(&[b_n, h, w, cout]);
    for b in 0..b_n {
        for y in 0..h {
            for x in 0..w {
                for o in 0..cout {
                    let mut acc = bias.data()[o];
                    for dy in 0..k {
                        for dx in 0..k {
                            let iy = y as isize + dy as isize - pad;
                            let ix = x as isize + dx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for c in 0..cin {
                                let iv = input.data()[((b * h + iy as usize) * w + ix as usize) * cin + c];
                                let kv = kernels.data()[((dy * k + dx) * cin + c) * cout + o];
                                acc += iv * kv;
                            }
                        }
                    }
                    out.data_mut()[((b * h + y) * w + x) * cout + o] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_forward_matches_naive_loop_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(555);
    for _ in 0..10 {
        let mut mk = |shape: &[usize]| {
            let data = (0..shape.iter().product::<usize>()).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::from_vec(shape, data).unwrap()
        };
        let input = mk(&[2, 5, 5, 3]);
        let kernels = mk(&[3, 3, 3, 4]);
        let bias = mk(&[4]);
        let got = conv2d_forward(&input, &kernels, &bias).unwrap();
        let want = naive_conv(&input, &kernels, &bias);
        let max_diff = got
            .data()
            .iter()
            .zip(want.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "max abs diff {max_diff}");
    }
}

#[test]
fn conv_forward_matches_oracle_with_5x5_kernel() {
    let mut rng = ChaCha20Rng::seed_from_u64(556);
    let mut mk = |shape: &[usize]| {
        let data = (0..shape.iter().product::<usize>()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    };
    let input = mk(&[1, 7, 6, 2]);
    let kernels = mk(&[5, 5, 2, 3]);
    let bias = mk(&[3]);
    let got = conv2d_forward(&input, &kernels, &bias).unwrap();
    let want = naive_conv(&input, &kernels, &bias);
    let max_diff = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max_diff < 1e-12, "max abs diff {max_diff}");
}

#[test]
fn every_layer_passes_central_difference_checks() {
    for check in run_layer_checks(20) {
        assert!(
            check.max_err < GRAD_TOL,
            "{}: max guarded relative error {} exceeds {GRAD_TOL}",
            check.name,
            check.max_err
        );
    }
}

#[test]
fn guarded_rel_err_flags_real_mistakes() {
    // a sign flip or dropped factor must register far above the tolerance
    assert!(guarded_rel_err(&[1.0], &[-1.0]) > 1.0);
    assert!(guarded_rel_err(&[2.0], &[1.0]) > 0.4);
    assert_eq!(guarded_rel_err(&[0.0], &[0.0]), 0.0);
}
