//! Dense, 3×3 convolution, ReLU, pooling and softmax cross-entropy kernels.
//!
//! Activations are [`Tensor4`]s; dense layers view their input as
//! `(N, D, 1, 1)` with `D = C·H·W`.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::rng::StreamRng;
use crate::tensor::Tensor4;

/// He-normal initialisation with the given fan-in.
pub fn he_init(len: usize, fan_in: usize, r: &mut StreamRng) -> Vec<f64> {
    let s = libm::sqrt(2.0 / fan_in as f64);
    (0..len)
        .map(|_| {
            let e: f64 = StandardNormal.sample(r);
            s * e
        })
        .collect()
}

/// Fully connected layer, weights stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize, r: &mut StreamRng) -> Self {
        Self { n_in, n_out, w: he_init(n_in * n_out, n_in, r), b: vec![0.0; n_out] }
    }

    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        let n = x.batch();
        let mut out = Vec::with_capacity(n * self.n_out);
        for row in x.data().chunks(self.n_in) {
            for o in 0..self.n_out {
                let w = &self.w[o * self.n_in..(o + 1) * self.n_in];
                out.push(self.b[o] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        Tensor4::from_parts([n, self.n_out, 1, 1], out)
    }

    /// Returns `(dx, dw, db)`; `dx` has the dims of `x`.
    pub fn backward(&self, x: &Tensor4, dy: &Tensor4) -> (Tensor4, Vec<f64>, Vec<f64>) {
        let mut dw = vec![0.0; self.w.len()];
        let mut db = vec![0.0; self.n_out];
        let mut dx = vec![0.0; x.len()];
        for ((row, g), dxr) in x
            .data()
            .chunks(self.n_in)
            .zip(dy.data().chunks(self.n_out))
            .zip(dx.chunks_mut(self.n_in))
        {
            for o in 0..self.n_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                db[o] += go;
                let w = &self.w[o * self.n_in..(o + 1) * self.n_in];
                let dwo = &mut dw[o * self.n_in..(o + 1) * self.n_in];
                for i in 0..self.n_in {
                    dwo[i] += go * row[i];
                    dxr[i] += go * w[i];
                }
            }
        }
        (Tensor4::from_parts(x.dims(), dx), dw, db)
    }
}

/// 3×3 convolution, stride 1, zero padding 1. Weights `(out, in, 3, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3 {
    pub c_in: usize,
    pub c_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv3 {
    pub fn new(c_in: usize, c_out: usize, r: &mut StreamRng) -> Self {
        Self { c_in, c_out, w: he_init(c_out * c_in * 9, c_in * 9, r), b: vec![0.0; c_out] }
    }

    fn widx(&self, o: usize, i: usize, kh: usize, kw: usize) -> usize {
        ((o * self.c_in + i) * 3 + kh) * 3 + kw
    }

    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        let [n, _, h, w] = x.dims();
        let xd = x.data();
        let mut out = vec![0.0; n * self.c_out * h * w];
        for b in 0..n {
            for o in 0..self.c_out {
                let base = ((b * self.c_out) + o) * h * w;
                for y in 0..h {
                    for z in 0..w {
                        let mut acc = self.b[o];
                        for i in 0..self.c_in {
                            let xb = ((b * self.c_in) + i) * h * w;
                            for kh in 0..3 {
                                let yy = y + kh;
                                if yy < 1 || yy > h {
                                    continue;
                                }
                                for kw in 0..3 {
                                    let zz = z + kw;
                                    if zz < 1 || zz > w {
                                        continue;
                                    }
                                    acc += self.w[self.widx(o, i, kh, kw)] * xd[xb + (yy - 1) * w + zz - 1];
                                }
                            }
                        }
                        out[base + y * w + z] = acc;
                    }
                }
            }
        }
        Tensor4::from_parts([n, self.c_out, h, w], out)
    }

    pub fn backward(&self, x: &Tensor4, dy: &Tensor4) -> (Tensor4, Vec<f64>, Vec<f64>) {
        let [n, _, h, w] = x.dims();
        let xd = x.data();
        let gd = dy.data();
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; self.w.len()];
        let mut db = vec![0.0; self.c_out];
        for b in 0..n {
            for o in 0..self.c_out {
                let base = ((b * self.c_out) + o) * h * w;
                for y in 0..h {
                    for z in 0..w {
                        let g = gd[base + y * w + z];
                        if g == 0.0 {
                            continue;
                        }
                        db[o] += g;
                        for i in 0..self.c_in {
                            let xb = ((b * self.c_in) + i) * h * w;
                            for kh in 0..3 {
                                let yy = y + kh;
                                if yy < 1 || yy > h {
                                    continue;
                                }
                                for kw in 0..3 {
                                    let zz = z + kw;
                                    if zz < 1 || zz > w {
                                        continue;
                                    }
                                    let xi = xb + (yy - 1) * w + zz - 1;
                                    let wi = self.widx(o, i, kh, kw);
                                    dw[wi] += g * xd[xi];
                                    dx[xi] += g * self.w[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        (Tensor4::from_parts(x.dims(), dx), dw, db)
    }
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    Tensor4::from_parts(x.dims(), x.data().iter().map(|v| v.max(0.0)).collect())
}

/// Gradient of ReLU given its input `x`.
pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let d = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(a, g)| if *a > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor4::from_parts(x.dims(), d)
}

/// Global average pool `(N, C, H, W) → (N, C, 1, 1)`.
pub fn avg_pool(x: &Tensor4) -> Tensor4 {
    let plane = x.plane();
    let inv = 1.0 / plane as f64;
    let d = x.data().chunks(plane).map(|p| p.iter().sum::<f64>() * inv).collect();
    Tensor4::from_parts([x.batch(), x.channels(), 1, 1], d)
}

pub fn avg_pool_backward(dims: [usize; 4], dy: &Tensor4) -> Tensor4 {
    let plane = dims[2] * dims[3];
    let inv = 1.0 / plane as f64;
    let mut d = Vec::with_capacity(dims.iter().product());
    for g in dy.data() {
        d.extend(core::iter::repeat_n(g * inv, plane));
    }
    Tensor4::from_parts(dims, d)
}

/// Mean cross-entropy of `(N, K, 1, 1)` logits and its gradient.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[usize]) -> (f64, Tensor4) {
    let k = logits.channels();
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| libm::exp(v - m)).sum();
        let lz = libm::log(z) + m;
        loss += lz - row[y];
        for (j, v) in row.iter().enumerate() {
            let p = libm::exp(v - lz);
            grad.push((p - if j == y { 1.0 } else { 0.0 }) / n);
        }
    }
    (loss / n, Tensor4::from_parts(logits.dims(), grad))
}

/// Index of the largest logit in each row (first on ties).
pub fn argmax_rows(logits: &Tensor4) -> Vec<usize> {
    logits
        .data()
        .chunks(logits.channels())
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn rand_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
        let mut r = rng::stream(seed, 0);
        Tensor4::from_fn(dims, |_| r.random::<f64>() - 0.5).unwrap()
    }

    fn dot(a: &Tensor4, b: &Tensor4) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    /// Checks `dx` and `dw` of a layer with loss `Σ w·layer(x)` by central
    /// differences.
    fn fd_check(
        x: &Tensor4,
        weights: &[f64],
        f: impl Fn(&Tensor4, &[f64]) -> Tensor4,
        dx: &Tensor4,
        dw: &[f64],
        probe: &Tensor4,
    ) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (dot(&f(&p, weights), probe) - dot(&f(&m, weights), probe)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-7, "dx[{i}]: {fd} vs {}", dx.data()[i]);
        }
        for i in 0..weights.len() {
            let mut p = weights.to_vec();
            p[i] += h;
            let mut m = weights.to_vec();
            m[i] -= h;
            let fd = (dot(&f(x, &p), probe) - dot(&f(x, &m), probe)) / (2.0 * h);
            assert!((fd - dw[i]).abs() < 1e-7, "dw[{i}]: {fd} vs {}", dw[i]);
        }
    }

    #[test]
    fn dense_gradients() {
        let mut r = rng::stream(1, 0);
        let layer = Dense::new(6, 3, &mut r);
        let x = rand_tensor([4, 6, 1, 1], 2);
        let probe = rand_tensor([4, 3, 1, 1], 3);
        let (dx, dw, db) = layer.backward(&x, &probe);
        let f = |x: &Tensor4, w: &[f64]| Dense { w: w.to_vec(), ..layer.clone() }.forward(x);
        fd_check(&x, &layer.w, f, &dx, &dw, &probe);
        for o in 0..3 {
            let s: f64 = probe.data().chunks(3).map(|row| row[o]).sum();
            assert!((db[o] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_gradients() {
        let mut r = rng::stream(4, 0);
        let layer = Conv3::new(2, 3, &mut r);
        let x = rand_tensor([2, 2, 4, 3], 5);
        let probe = rand_tensor([2, 3, 4, 3], 6);
        let (dx, dw, _) = layer.backward(&x, &probe);
        let f = |x: &Tensor4, w: &[f64]| Conv3 { w: w.to_vec(), ..layer.clone() }.forward(x);
        fd_check(&x, &layer.w, f, &dx, &dw, &probe);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut r = rng::stream(0, 0);
        let mut layer = Conv3::new(1, 1, &mut r);
        layer.w = vec![0.0; 9];
        layer.w[4] = 1.0;
        let x = rand_tensor([1, 1, 3, 3], 1);
        assert_eq!(layer.forward(&x), x);
    }

    #[test]
    fn pool_and_relu() {
        let x = Tensor4::new([1, 2, 1, 2], vec![1.0, 3.0, -2.0, 4.0]).unwrap();
        assert_eq!(avg_pool(&x).data(), &[2.0, 1.0]);
        assert_eq!(relu(&x).data(), &[1.0, 3.0, 0.0, 4.0]);
        let g = Tensor4::new([1, 2, 1, 1], vec![2.0, 4.0]).unwrap();
        assert_eq!(avg_pool_backward(x.dims(), &g).data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_values() {
        let logits = Tensor4::new([1, 2, 1, 1], vec![0.0, 0.0]).unwrap();
        let (l, g) = softmax_cross_entropy(&logits, &[1]);
        assert!((l - libm::log(2.0)).abs() < 1e-15);
        assert_eq!(g.data(), &[0.5, -0.5]);
        let logits = Tensor4::new([2, 3, 1, 1], vec![1.0, 5.0, 2.0, 7.0, 7.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&logits), vec![1, 0]);
    }
}
