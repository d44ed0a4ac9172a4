//! Labelled image datasets and the synthetic blob generator.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::rng;
use crate::tensor::Tensor4;

/// Images of shape `(C, H, W)` stored back to back, with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    /// `(C, H, W)`.
    pub shape: [usize; 3],
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<f64>, labels: Vec<usize>, shape: [usize; 3], n_classes: usize) -> Result<Self> {
        let d = shape.iter().product::<usize>();
        if d == 0 {
            return Err(invalid!("image shape {:?} contains a zero", shape));
        }
        if images.len() != d * labels.len() {
            return Err(invalid!(
                "{} pixel values for {} images of size {}",
                images.len(),
                labels.len(),
                d
            ));
        }
        if n_classes < 2 {
            return Err(invalid!("need at least two classes, got {}", n_classes));
        }
        if let Some(l) = labels.iter().find(|l| **l >= n_classes) {
            return Err(invalid!("label {} out of range for {} classes", l, n_classes));
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("pixel values must be finite"));
        }
        Ok(Self { images, labels, shape, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Values per image, `C·H·W`.
    pub fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.image_len();
        &self.images[i * d..(i + 1) * d]
    }

    /// The images at `idx` as an `(N, C, H, W)` tensor.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor4> {
        let mut data = Vec::with_capacity(idx.len() * self.image_len());
        for &i in idx {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.shape;
        Tensor4::new([idx.len(), c, h, w], data)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(idx.len() * self.image_len());
        for &i in idx {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
            n_classes: self.n_classes,
        }
    }

    /// Per-channel population standard deviation over every image.
    pub fn channel_std(&self) -> Vec<f64> {
        let [c, h, w] = self.shape;
        let plane = h * w;
        let count = (plane * self.len()) as f64;
        (0..c)
            .map(|ch| {
                let vals = || {
                    (0..self.len()).flat_map(move |i| {
                        let img = self.image(i);
                        img[ch * plane..(ch + 1) * plane].iter().copied()
                    })
                };
                let mean = vals().sum::<f64>() / count;
                libm::sqrt(vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count)
            })
            .collect()
    }

    /// Deterministic 80/10/10 train/validation/test split.
    pub fn split(&self, seed: u64) -> Split {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut r = rng::stream(seed, 0);
        idx.shuffle(&mut r);
        let n = self.len();
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        Split {
            train: self.subset(&idx[..n_train]),
            val: self.subset(&idx[n_train..n_train + n_val]),
            test: self.subset(&idx[n_train + n_val..]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Parameters of [`make_synthetic_blobs`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlobsConfig {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub channels: usize,
    pub hw: usize,
    pub sep: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self { n_classes: 4, n_per_class: 500, channels: 4, hw: 4, sep: 3.0 }
    }
}

/// Gaussian blobs with unit within-class noise on every pixel.
///
/// The mean image of class `k` is constant on each channel and equals
/// `sep/√(2·H·W)` on channel `k`, zero elsewhere, so any two class means are
/// `sep` apart in Euclidean norm, i.e. `sep` within-class standard deviations
/// along the line joining them. Requires `channels ≥ n_classes`. Labels are
/// balanced and interleaved.
pub fn make_synthetic_blobs(
    n_classes: usize,
    n_per_class: usize,
    channels: usize,
    hw: usize,
    sep: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(invalid!("need at least two classes, got {}", n_classes));
    }
    if channels < n_classes {
        return Err(invalid!(
            "blobs place one class per channel; {} channels for {} classes",
            channels,
            n_classes
        ));
    }
    if n_per_class == 0 || hw == 0 {
        return Err(invalid!("n_per_class and hw must be positive"));
    }
    if !(sep >= 0.0) || !sep.is_finite() {
        return Err(invalid!("sep must be a non-negative number, got {}", sep));
    }
    let plane = hw * hw;
    let level = sep / libm::sqrt(2.0 * plane as f64);
    let n = n_classes * n_per_class;
    let mut images = Vec::with_capacity(n * channels * plane);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % n_classes;
        let mut r = rng::stream(seed, i as u64);
        for c in 0..channels {
            let m = if c == k { level } else { 0.0 };
            for _ in 0..plane {
                let e: f64 = StandardNormal.sample(&mut r);
                images.push(m + e);
            }
        }
        labels.push(k);
    }
    Dataset::new(images, labels, [channels, hw, hw], n_classes)
}

/// Class counts of a dataset.
pub fn class_counts(d: &Dataset) -> Vec<usize> {
    let mut counts = vec![0; d.n_classes];
    for l in &d.labels {
        counts[*l] += 1;
    }
    counts
}
