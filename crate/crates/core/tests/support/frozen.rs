//! Frozen-factor finite-difference oracle for the batch-norm backward pass.
//!
//! The forward pass is recomputed from scratch with the per-channel
//! correction maps frozen at the base point, which is the convention the
//! analytic gradient follows. Shared with the acceptance suite.
#![allow(dead_code)]

use rand::Rng;
use steinbn::batchnorm::{BnLayer, BnVariant, Correction};
use steinbn::rng;
use steinbn::tensor::channel_moments;
use steinbn::Tensor4;

pub const STEP: f64 = 1e-5;

pub fn random(dims: [usize; 4], seed: u64, offset: f64) -> Tensor4 {
    let mut r = rng::stream(seed, 0);
    Tensor4::from_fn(dims, |[_, c, _, _]| r.random::<f64>() * 2.0 - 1.0 + offset * (c as f64 + 1.0)).unwrap()
}

/// `Σ w·y` with `y` the frozen-factor forward pass, written out directly.
pub fn frozen_loss(layer: &BnLayer, corr: &Correction, x: &[f64], dims: [usize; 4], w: &[f64]) -> f64 {
    let [n, ch, h, wd] = dims;
    let plane = h * wd;
    let count = (n * plane) as f64;
    let mut loss = 0.0;
    for c in 0..ch {
        let idx = |i: usize, k: usize| (i * ch + c) * plane + k;
        let mut mean = 0.0;
        for i in 0..n {
            for k in 0..plane {
                mean += x[idx(i, k)];
            }
        }
        mean /= count;
        let mut var = 0.0;
        for i in 0..n {
            for k in 0..plane {
                var += (x[idx(i, k)] - mean).powi(2);
            }
        }
        var /= count;
        let m = corr.mean_scale[c] * mean + corr.mean_shift[c];
        let v = corr.var_scale[c] * var + corr.var_shift[c];
        let inv = 1.0 / (v + layer.eps).sqrt();
        for i in 0..n {
            for k in 0..plane {
                let y = layer.gamma[c] * (x[idx(i, k)] - m) * inv + layer.beta[c];
                loss += w[idx(i, k)] * y;
            }
        }
    }
    loss
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Returns the worst relative error over input, gamma and beta gradients.
pub fn check(variant: BnVariant, x: &Tensor4, seed: u64) -> f64 {
    let dims = x.dims();
    let ch = dims[1];
    let mut layer = BnLayer::new(variant, ch).with_lambda(0.05);
    let mut r = rng::stream(seed, 1);
    layer.gamma = (0..ch).map(|_| 0.5 + r.random::<f64>()).collect();
    layer.beta = (0..ch).map(|_| r.random::<f64>() - 0.5).collect();
    let w = random(dims, seed + 1000, 0.0);

    let corr = layer.correct(&channel_moments(x).unwrap()).unwrap();
    let (_, cache) = layer.clone().forward(x).unwrap();
    let grads = layer.backward(&cache, &w).unwrap();

    let base = x.data().to_vec();
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut xp = base.clone();
        xp[i] += STEP;
        let lp = frozen_loss(&layer, &corr, &xp, dims, w.data());
        xp[i] -= 2.0 * STEP;
        let lm = frozen_loss(&layer, &corr, &xp, dims, w.data());
        fd.push((lp - lm) / (2.0 * STEP));
    }
    let mut fd_gamma = Vec::new();
    let mut fd_beta = Vec::new();
    for c in 0..ch {
        let mut l = layer.clone();
        l.gamma[c] += STEP;
        let lp = frozen_loss(&l, &corr, &base, dims, w.data());
        l.gamma[c] -= 2.0 * STEP;
        let lm = frozen_loss(&l, &corr, &base, dims, w.data());
        fd_gamma.push((lp - lm) / (2.0 * STEP));
        let mut l = layer.clone();
        l.beta[c] += STEP;
        let lp = frozen_loss(&l, &corr, &base, dims, w.data());
        l.beta[c] -= 2.0 * STEP;
        let lm = frozen_loss(&l, &corr, &base, dims, w.data());
        fd_beta.push((lp - lm) / (2.0 * STEP));
    }
    rel_err(grads.input.data(), &fd)
        .max(rel_err(&grads.gamma, &fd_gamma))
        .max(rel_err(&grads.beta, &fd_beta))
}
