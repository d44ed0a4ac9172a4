//! Dense rank-4 tensors in `(batch, channel, height, width)` layout.
//!
//! Storage is row-major in `(n, c, h, w)` order. All reductions accumulate
//! sequentially in index order so results are bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dense `(N, C, H, W)` array of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    /// Builds a tensor, checking that every dimension is positive, that the
    /// payload length matches and that every entry is finite.
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(invalid!(
                "tensor payload has {} entries, dims {:?} need {}",
                data.len(),
                dims,
                len
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid!("tensor entry {} is not finite", i));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: [usize; 4], value: f64) -> Result<Self> {
        check_dims(dims)?;
        if !value.is_finite() {
            return Err(invalid!("fill value must be finite"));
        }
        Ok(Self {
            dims,
            data: vec![value; dims.iter().product()],
        })
    }

    /// Builds a tensor from a function of the `(n, c, h, w)` index.
    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Result<Self> {
        check_dims(dims)?;
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for j in 0..c {
                for k in 0..h {
                    for l in 0..w {
                        data.push(f([i, j, k, l]));
                    }
                }
            }
        }
        Self::new(dims, data)
    }

    /// Constructor for results of arithmetic on already validated tensors.
    pub(crate) fn from_parts(dims: [usize; 4], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    /// Number of entries in one `(h, w)` plane.
    pub fn plane(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    /// Number of samples per channel, `N·H·W`.
    pub fn per_channel(&self) -> usize {
        self.dims[0] * self.plane()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, [n, c, h, w]: [usize; 4]) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    pub fn get(&self, idx: [usize; 4]) -> f64 {
        self.data[self.offset(idx)]
    }

    /// Iterates the `(h, w)` planes belonging to channel `c`, one per batch
    /// entry, in batch order.
    pub fn channel_planes(&self, c: usize) -> impl Iterator<Item = &[f64]> + '_ {
        let plane = self.plane();
        let stride = self.dims[1] * plane;
        (0..self.dims[0]).map(move |n| {
            let start = n * stride + c * plane;
            &self.data[start..start + plane]
        })
    }

    /// Decomposes a flat offset back into `(n, c, h, w)`.
    pub fn index_of(&self, offset: usize) -> [usize; 4] {
        let [_, c, h, w] = self.dims;
        let l = offset % w;
        let k = (offset / w) % h;
        let j = (offset / (w * h)) % c;
        let i = offset / (w * h * c);
        [i, j, k, l]
    }

    /// Reinterprets the payload with new dims of the same total size.
    pub fn reshape(self, dims: [usize; 4]) -> Result<Tensor4> {
        check_dims(dims)?;
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(invalid!("cannot reshape {:?} into {:?}", self.dims, dims));
        }
        Ok(Self { dims, data: self.data })
    }

    /// Elementwise `self + other`; dims must match.
    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        if self.dims != other.dims {
            return Err(invalid!(
                "dims {:?} and {:?} differ",
                self.dims,
                other.dims
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_parts(self.dims, data))
    }

    /// Elementwise `a·x + b`.
    pub fn affine(&self, a: f64, b: f64) -> Tensor4 {
        Self::from_parts(self.dims, self.data.iter().map(|x| a * x + b).collect())
    }
}

fn check_dims(dims: [usize; 4]) -> Result<()> {
    if dims.contains(&0) {
        return Err(invalid!("tensor dims {:?} contain a zero", dims));
    }
    Ok(())
}

/// Per-channel mean and population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Samples per channel, `N·H·W`.
    pub count: usize,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Channel-wise mean and population variance (divisor `N·H·W`), computed in
/// two sequential passes.
pub fn channel_moments(x: &Tensor4) -> Result<ChannelStats> {
    let count = x.per_channel();
    if count < 2 {
        return Err(invalid!(
            "channel moments need N·H·W >= 2, got {}",
            count
        ));
    }
    let inv = 1.0 / count as f64;
    let channels = x.channels();
    let mut mean = Vec::with_capacity(channels);
    let mut var = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut sum = 0.0;
        for plane in x.channel_planes(c) {
            for v in plane {
                sum += v;
            }
        }
        let m = sum * inv;
        let mut ss = 0.0;
        for plane in x.channel_planes(c) {
            for v in plane {
                let d = v - m;
                ss += d * d;
            }
        }
        mean.push(m);
        var.push(ss * inv);
    }
    Ok(ChannelStats { mean, var, count })
}

/// `y = gamma[c]·(x − mean[c])/sqrt(var[c] + eps) + beta[c]`.
pub fn apply_affine_normalize(
    x: &Tensor4,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<Tensor4> {
    let c = x.channels();
    for (name, v) in [("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)] {
        if v.len() != c {
            return Err(invalid!("{} has length {}, tensor has {} channels", name, v.len(), c));
        }
    }
    if !(eps > 0.0) {
        return Err(invalid!("eps must be positive, got {}", eps));
    }
    if let Some(i) = var.iter().position(|v| !(v + eps > 0.0)) {
        return Err(invalid!("var[{}] + eps is not positive", i));
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    Ok(normalize_with(x, mean, &inv_std, gamma, beta))
}

/// Shared kernel: `gamma·(x − mean)·inv_std + beta`, lengths already checked.
pub(crate) fn normalize_with(
    x: &Tensor4,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> Tensor4 {
    let plane = x.plane();
    let channels = x.channels();
    let data = x
        .data()
        .chunks(plane)
        .enumerate()
        .flat_map(|(i, chunk)| {
            let c = i % channels;
            let (m, s, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            chunk.iter().map(move |v| g * (v - m) * s + b)
        })
        .collect();
    Tensor4::from_parts(x.dims(), data)
}
