//! Central-difference gradient checking for every layer and the loss.
//!
//! Each check builds a scalar objective L = sum(output * projection) with a
//! fixed random projection, evaluates the analytic gradient through the
//! layer's backward pass, and compares against (L(x+h) - L(x-h)) / 2h per
//! element. The error measure is |a - n| / max(|a|, |n|, 1e-3): relative for
//! ordinarily sized gradients, with an absolute floor so that exact zeros
//! and finite-difference noise cannot manufacture failures.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use wavecomp::nn::{
    conv2d_backward, conv2d_forward, cross_entropy, cross_entropy_softmax_grad, dense_backward,
    dense_forward, dropout_backward, dropout_forward, maxpool2x2_backward, maxpool2x2_forward,
    relu_backward, relu_forward, softmax, Tensor,
};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn guarded_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn rand_tensor(rng: &mut ChaCha20Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let data = (0..shape.iter().product::<usize>()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Random values guaranteed pairwise-separated, so max-pool argmax choices
/// cannot flip under the finite-difference step.
fn separated_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    values.shuffle(rng);
    let offset = rng.random_range(-1.0..1.0);
    Tensor::from_vec(shape, values.into_iter().map(|v| v + offset).collect()).unwrap()
}

fn project(t: &Tensor, proj: &Tensor) -> f64 {
    t.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
}

#[derive(Debug)]
pub struct LayerCheck {
    pub name: &'static str,
    pub max_err: f64,
}

fn check_conv(rng: &mut ChaCha20Rng) -> f64 {
    // two channel configurations so both internal convolution paths (direct
    // small-patch loops and im2col + GEMM) face the finite differences
    let mut worst: f64 = 0.0;
    for (cin, cout) in [(3usize, 4usize), (5, 3)] {
        let input = rand_tensor(rng, &[2, 5, 5, cin], -1.0, 1.0);
        let kernels = rand_tensor(rng, &[3, 3, cin, cout], -0.5, 0.5);
        let bias = rand_tensor(rng, &[cout], -0.5, 0.5);
        let proj = rand_tensor(rng, &[2, 5, 5, cout], -1.0, 1.0);

        let (gi, gk, gb) = conv2d_backward(&input, &kernels, &proj).unwrap();

        let f_in = |x: &[f64]| {
            let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
            project(&conv2d_forward(&t, &kernels, &bias).unwrap(), &proj)
        };
        worst = worst.max(guarded_rel_err(gi.data(), &central_diff(f_in, input.data())));

        let f_k = |x: &[f64]| {
            let t = Tensor::from_vec(kernels.shape(), x.to_vec()).unwrap();
            project(&conv2d_forward(&input, &t, &bias).unwrap(), &proj)
        };
        worst = worst.max(guarded_rel_err(gk.data(), &central_diff(f_k, kernels.data())));

        let f_b = |x: &[f64]| {
            let t = Tensor::from_vec(bias.shape(), x.to_vec()).unwrap();
            project(&conv2d_forward(&input, &kernels, &t).unwrap(), &proj)
        };
        worst = worst.max(guarded_rel_err(gb.data(), &central_diff(f_b, bias.data())));
    }
    worst
}

fn check_pool(rng: &mut ChaCha20Rng) -> f64 {
    let input = separated_tensor(rng, &[2, 5, 4, 3]);
    let proj = rand_tensor(rng, &[2, 3, 2, 3], -1.0, 1.0);
    let (_, cache) = maxpool2x2_forward(&input).unwrap();
    let gi = maxpool2x2_backward(&cache, &proj).unwrap();
    let f = |x: &[f64]| {
        let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
        project(&maxpool2x2_forward(&t).unwrap().0, &proj)
    };
    guarded_rel_err(gi.data(), &central_diff(f, input.data()))
}

fn check_relu(rng: &mut ChaCha20Rng) -> f64 {
    // keep activations away from the kink at zero
    let n = 60;
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.5..1.5);
            if rng.random_bool(0.5) { mag } else { -mag }
        })
        .collect();
    let input = Tensor::from_vec(&[n], data).unwrap();
    let proj = rand_tensor(rng, &[n], -1.0, 1.0);
    let gi = relu_backward(&input, &proj).unwrap();
    let f = |x: &[f64]| {
        let t = Tensor::from_vec(&[n], x.to_vec()).unwrap();
        project(&relu_forward(&t), &proj)
    };
    guarded_rel_err(gi.data(), &central_diff(f, input.data()))
}

fn check_dropout(rng: &mut ChaCha20Rng) -> f64 {
    let input = rand_tensor(rng, &[40], -2.0, 2.0);
    let proj = rand_tensor(rng, &[40], -1.0, 1.0);
    let mask_seed: u64 = rng.random();
    // rebuilding the RNG per evaluation freezes the mask, making the layer a
    // fixed linear map the finite differences can probe
    let (_, mask) = dropout_forward(&input, 0.3, true, &mut ChaCha20Rng::seed_from_u64(mask_seed));
    let gi = dropout_backward(&mask, &proj).unwrap();
    let f = |x: &[f64]| {
        let t = Tensor::from_vec(&[40], x.to_vec()).unwrap();
        let (out, _) = dropout_forward(&t, 0.3, true, &mut ChaCha20Rng::seed_from_u64(mask_seed));
        project(&out, &proj)
    };
    guarded_rel_err(gi.data(), &central_diff(f, input.data()))
}

fn check_dense(rng: &mut ChaCha20Rng) -> f64 {
    let input = rand_tensor(rng, &[3, 7], -1.0, 1.0);
    let weights = rand_tensor(rng, &[7, 5], -0.7, 0.7);
    let bias = rand_tensor(rng, &[5], -0.5, 0.5);
    let proj = rand_tensor(rng, &[3, 5], -1.0, 1.0);
    let (gi, gw, gb) = dense_backward(&input, &weights, &proj).unwrap();
    let mut worst: f64 = 0.0;

    let f_in = |x: &[f64]| {
        let t = Tensor::from_vec(input.shape(), x.to_vec()).unwrap();
        project(&dense_forward(&t, &weights, &bias).unwrap(), &proj)
    };
    worst = worst.max(guarded_rel_err(gi.data(), &central_diff(f_in, input.data())));

    let f_w = |x: &[f64]| {
        let t = Tensor::from_vec(weights.shape(), x.to_vec()).unwrap();
        project(&dense_forward(&input, &t, &bias).unwrap(), &proj)
    };
    worst = worst.max(guarded_rel_err(gw.data(), &central_diff(f_w, weights.data())));

    let f_b = |x: &[f64]| {
        let t = Tensor::from_vec(bias.shape(), x.to_vec()).unwrap();
        project(&dense_forward(&input, &weights, &t).unwrap(), &proj)
    };
    worst.max(guarded_rel_err(gb.data(), &central_diff(f_b, bias.data())))
}

fn check_loss(rng: &mut ChaCha20Rng) -> f64 {
    let (batch, n) = (4, 6);
    let logits = rand_tensor(rng, &[batch, n], -2.0, 2.0);
    let mut actual = Tensor::zeros(&[batch, n]);
    for b in 0..batch {
        let hot = rng.random_range(0..n);
        actual.data_mut()[b * n + hot] = 1.0;
    }
    let probs = softmax(&logits).unwrap();
    let grad = cross_entropy_softmax_grad(&actual, &probs).unwrap();
    let f = |x: &[f64]| {
        let t = Tensor::from_vec(&[batch, n], x.to_vec()).unwrap();
        cross_entropy(&actual, &softmax(&t).unwrap()).unwrap()
    };
    guarded_rel_err(grad.data(), &central_diff(f, logits.data()))
}

/// Run every layer and the loss through `n_seeds` independent checks each,
/// reporting the worst error seen per layer.
pub fn run_layer_checks(n_seeds: u64) -> Vec<LayerCheck> {
    type Check = fn(&mut ChaCha20Rng) -> f64;
    let checks: Vec<(&'static str, Check)> = vec![
        ("conv2d", check_conv),
        ("maxpool2x2", check_pool),
        ("relu", check_relu),
        ("dropout", check_dropout),
        ("dense", check_dense),
        ("softmax+cross_entropy", check_loss),
    ];
    checks
        .into_iter()
        .map(|(name, check)| {
            let max_err = (0..n_seeds)
                .map(|seed| check(&mut ChaCha20Rng::seed_from_u64(seed ^ 0xABCD_EF01)))
                .fold(0.0, f64::max)
                .max(0.0);
            LayerCheck { name, max_err }
        })
        .collect()
}
