//! Batch normalization with shrinkage-corrected channel statistics.
//!
//! In training mode each variant maps the raw batch statistics `(μ_c, σ²_c)`
//! to corrected statistics, normalizes with them and folds the corrected
//! statistics into the running averages. Evaluation mode normalizes with the
//! running averages only.
//!
//! Every correction is recorded as a per-channel affine map of the raw
//! statistic, `corrected = scale·raw + shift`, evaluated at the current
//! batch. The backward pass treats `scale` and `shift` as constants (stop
//! gradient on the shrinkage factors) and differentiates through the raw
//! statistics only. For [`BnVariant::Standard`] this is exactly the usual
//! batch-norm gradient.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::{
    js_mean_channels_with, js_variance_channels_with, khoshsirat_variance_with, lasso_mean,
    lasso_variance, ridge_variance, MeanShrinkage, ShrinkageConstant, VARIANCE_FLOOR,
};
use crate::tensor::{channel_moments, normalize_with, ChannelStats, Tensor4};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnVariant {
    /// Raw batch statistics.
    Standard,
    /// James–Stein mean and Gamma-scale variance.
    Stein,
    /// James–Stein mean, raw variance.
    MeanOnly,
    /// James–Stein rule on both mean and variance.
    Khoshsirat,
    /// Soft-thresholded mean and variance.
    Lasso,
    /// Ridge-shrunk mean and variance.
    Ridge,
}

impl BnVariant {
    pub const ALL: [BnVariant; 6] = [
        BnVariant::Standard,
        BnVariant::Stein,
        BnVariant::MeanOnly,
        BnVariant::Khoshsirat,
        BnVariant::Lasso,
        BnVariant::Ridge,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BnVariant::Standard => "standard",
            BnVariant::Stein => "stein",
            BnVariant::MeanOnly => "mean_only",
            BnVariant::Khoshsirat => "khoshsirat",
            BnVariant::Lasso => "lasso",
            BnVariant::Ridge => "ridge",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Choice of `c̃` for the Stein variance correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CTilde {
    /// Midpoint of the admissible interval for the batch's `(n, C)`.
    Midpoint,
    Fixed(f64),
}

impl CTilde {
    pub fn resolve(&self, n: usize, channels: usize) -> ShrinkageConstant {
        match *self {
            CTilde::Midpoint => ShrinkageConstant::variance_midpoint(n, channels),
            CTilde::Fixed(c) => ShrinkageConstant::variance(n, channels, c),
        }
    }
}

/// A batch-norm layer over `C` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnLayer {
    pub variant: BnVariant,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub c_tilde: CTilde,
    /// Shared penalty of the Lasso and Ridge variants.
    pub lambda: f64,
    pub mode: Mode,
    pub mean_shrinkage: MeanShrinkage,
}

/// Per-channel affine maps from raw to corrected statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub mean_scale: Vec<f64>,
    pub mean_shift: Vec<f64>,
    pub var_scale: Vec<f64>,
    pub var_shift: Vec<f64>,
    /// Common James–Stein factor applied to the means (1 when unused).
    pub mean_factor: f64,
    /// Set when a James–Stein correction fell back to identity (`C < 3`).
    pub fallback: bool,
}

impl Correction {
    fn identity(raw: &ChannelStats) -> Self {
        let c = raw.channels();
        Self {
            mean: raw.mean.clone(),
            var: raw.var.clone(),
            mean_scale: vec![1.0; c],
            mean_shift: vec![0.0; c],
            var_scale: vec![1.0; c],
            var_shift: vec![0.0; c],
            mean_factor: 1.0,
            fallback: false,
        }
    }

    /// Sets the corrected means to `factor·raw`.
    fn scale_means(&mut self, raw: &ChannelStats, factor: f64) {
        for c in 0..raw.channels() {
            self.mean[c] = factor * raw.mean[c];
            self.mean_scale[c] = factor;
            self.mean_shift[c] = 0.0;
        }
        self.mean_factor = factor;
    }

    /// Records corrected variances, deriving the frozen affine maps from the
    /// given slope. Entries sitting on the floor get slope zero.
    fn set_vars(&mut self, raw: &ChannelStats, corrected: Vec<f64>, slope: impl Fn(usize) -> f64) {
        for (c, v) in corrected.into_iter().enumerate() {
            let s = if v <= VARIANCE_FLOOR { 0.0 } else { slope(c) };
            self.var[c] = v;
            self.var_scale[c] = s;
            self.var_shift[c] = v - s * raw.var[c];
        }
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnForwardCache {
    pub mode: Mode,
    pub raw: Option<ChannelStats>,
    pub corrected_mean: Vec<f64>,
    pub corrected_var: Vec<f64>,
    /// `1/sqrt(corrected_var + eps)`.
    pub inv_std: Vec<f64>,
    /// `x̂`, before `gamma`/`beta`.
    pub normalized: Tensor4,
    /// Per-channel slope of the corrected mean in the raw mean.
    pub shrink_factor_mean: Vec<f64>,
    pub var_scale: Vec<f64>,
    pub fallback: bool,
}

/// Gradients returned by [`BnLayer::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads {
    pub input: Tensor4,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BnLayer {
    pub fn new(variant: BnVariant, channels: usize) -> Self {
        Self {
            variant,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            c_tilde: CTilde::Midpoint,
            lambda: 0.01,
            mode: Mode::Train,
            mean_shrinkage: MeanShrinkage::default(),
        }
    }

    pub fn with_c_tilde(mut self, c: CTilde) -> Self {
        self.c_tilde = c;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(invalid!("batch-norm parameter vectors disagree on the channel count"));
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(invalid!("momentum must lie in (0, 1], got {}", self.momentum));
        }
        if !(self.eps > 0.0) {
            return Err(invalid!("eps must be positive, got {}", self.eps));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.running_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid!("running variances must be non-negative"));
        }
        Ok(())
    }

    /// Corrected statistics of this layer's variant for a batch with raw
    /// statistics `raw`.
    pub fn correct(&self, raw: &ChannelStats) -> Result<Correction> {
        let n = raw.count;
        let channels = raw.channels();
        let mut out = Correction::identity(raw);
        match self.variant {
            BnVariant::Standard => {}
            BnVariant::Stein | BnVariant::MeanOnly | BnVariant::Khoshsirat => {
                let shrunk = js_mean_channels_with(&raw.mean, self.mean_shrinkage);
                out.fallback = shrunk.fallback;
                out.scale_means(raw, shrunk.factor);
                match self.variant {
                    BnVariant::Stein => {
                        let c = self.c_tilde.resolve(n, channels).c_tilde;
                        let vars = js_variance_channels_with(&raw.var, n, c, VARIANCE_FLOOR)?;
                        let k = n as f64 / (n as f64 + 1.0);
                        // floored raw entries do not move with σ²
                        out.set_vars(raw, vars, |i| {
                            if raw.var[i] > VARIANCE_FLOOR { k } else { 0.0 }
                        });
                    }
                    BnVariant::Khoshsirat => {
                        let s = khoshsirat_variance_with(&raw.var, self.mean_shrinkage, VARIANCE_FLOOR);
                        out.fallback |= s.fallback;
                        let f = s.factor;
                        out.set_vars(raw, s.values, |_| f);
                    }
                    _ => {}
                }
            }
            BnVariant::Lasso => {
                let t = self.lambda / 2.0;
                for c in 0..channels {
                    let m = lasso_mean(raw.mean[c], n, self.lambda);
                    out.mean[c] = m;
                    if m == 0.0 {
                        out.mean_scale[c] = 0.0;
                        out.mean_shift[c] = 0.0;
                    } else {
                        out.mean_scale[c] = 1.0;
                        out.mean_shift[c] = m - raw.mean[c];
                    }
                }
                let vars = raw
                    .var
                    .iter()
                    .map(|s2| lasso_variance(*s2, self.lambda).max(VARIANCE_FLOOR))
                    .collect();
                out.set_vars(raw, vars, |c| if raw.var[c] > t { 1.0 } else { 0.0 });
            }
            BnVariant::Ridge => {
                let k = n as f64 / (n as f64 + self.lambda);
                // Σx/(n+λ) written as k·μ so that λ = 0 reproduces μ exactly
                for c in 0..channels {
                    out.mean[c] = k * raw.mean[c];
                    out.mean_scale[c] = k;
                    out.mean_shift[c] = 0.0;
                }
                let vars = raw.var.iter().map(|s2| ridge_variance(*s2, self.lambda)).collect();
                let slope = 1.0 / (1.0 + self.lambda);
                out.set_vars(raw, vars, |_| slope);
            }
        }
        Ok(out)
    }

    /// Forward pass. In training mode the running statistics are updated
    /// with the corrected batch statistics.
    pub fn forward(&mut self, x: &Tensor4) -> Result<(Tensor4, BnForwardCache)> {
        self.validate()?;
        if x.channels() != self.channels() {
            return Err(invalid!(
                "input has {} channels, layer has {}",
                x.channels(),
                self.channels()
            ));
        }
        match self.mode {
            Mode::Train => {
                let raw = channel_moments(x)?;
                let corr = self.correct(&raw)?;
                let (y, cache) = self.normalize(x, corr.mean.clone(), corr.var.clone(), Mode::Train);
                let cache = BnForwardCache {
                    raw: Some(raw.clone()),
                    shrink_factor_mean: corr.mean_scale.clone(),
                    var_scale: corr.var_scale.clone(),
                    fallback: corr.fallback,
                    ..cache
                };
                self.update_running(&ChannelStats {
                    mean: corr.mean,
                    var: corr.var,
                    count: raw.count,
                });
                Ok((y, cache))
            }
            Mode::Eval => Ok(self.normalize(
                x,
                self.running_mean.clone(),
                self.running_var.clone(),
                Mode::Eval,
            )),
        }
    }

    fn normalize(&self, x: &Tensor4, mean: Vec<f64>, var: Vec<f64>, mode: Mode) -> (Tensor4, BnForwardCache) {
        let c = self.channels();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + self.eps)).collect();
        let ones = vec![1.0; c];
        let zeros = vec![0.0; c];
        let normalized = normalize_with(x, &mean, &inv_std, &ones, &zeros);
        let y = normalize_with(&normalized, &zeros, &ones, &self.gamma, &self.beta);
        let cache = BnForwardCache {
            mode,
            raw: None,
            corrected_mean: mean,
            corrected_var: var,
            inv_std,
            normalized,
            shrink_factor_mean: zeros.clone(),
            var_scale: zeros,
            fallback: false,
        };
        (y, cache)
    }

    /// Exponential moving average toward `corrected`.
    pub fn update_running(&mut self, corrected: &ChannelStats) {
        let m = self.momentum;
        for (r, v) in self.running_mean.iter_mut().zip(&corrected.mean) {
            *r = (1.0 - m) * *r + m * v;
        }
        for (r, v) in self.running_var.iter_mut().zip(&corrected.var) {
            *r = (1.0 - m) * *r + m * v;
        }
    }

    /// Gradients of a scalar loss given `grad_out = ∂L/∂y`, with the
    /// shrinkage maps held fixed at the values recorded in `cache`.
    pub fn backward(&self, cache: &BnForwardCache, grad_out: &Tensor4) -> Result<BnGrads> {
        let dims = cache.normalized.dims();
        if grad_out.dims() != dims {
            return Err(invalid!(
                "gradient dims {:?} do not match cached dims {:?}",
                grad_out.dims(),
                dims
            ));
        }
        let channels = dims[1];
        if channels != self.channels() {
            return Err(invalid!("cache and layer disagree on the channel count"));
        }
        let plane = cache.normalized.plane();
        let n = (dims[0] * plane) as f64;
        let xhat = cache.normalized.data();
        let g_out = grad_out.data();

        let mut grad_gamma = vec![0.0; channels];
        let mut grad_beta = vec![0.0; channels];
        // Σ ∂L/∂x̂ and Σ ∂L/∂x̂ · x̂ per channel
        let mut sum_g = vec![0.0; channels];
        let mut sum_gx = vec![0.0; channels];
        for (i, (go, xh)) in g_out.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
            let c = i % channels;
            let gam = self.gamma[c];
            for (g, x) in go.iter().zip(xh) {
                grad_beta[c] += g;
                grad_gamma[c] += g * x;
                sum_g[c] += g * gam;
                sum_gx[c] += g * gam * x;
            }
        }

        // Per channel: dx = g·inv + dμ/n + dσ²·2(x − μ)/n with
        // dμ = −a·inv·Σg and dσ² = −s·inv²·Σ(g·x̂)/2.
        let raw_mean = cache.raw.as_ref().map(|r| r.mean.as_slice());
        let mut coef_mu = vec![0.0; channels];
        let mut coef_var = vec![0.0; channels];
        let mut offset = vec![0.0; channels];
        for c in 0..channels {
            let inv = cache.inv_std[c];
            coef_mu[c] = -cache.shrink_factor_mean[c] * inv * sum_g[c] / n;
            coef_var[c] = -cache.var_scale[c] * inv * inv * sum_gx[c] / n;
            if let Some(m) = raw_mean {
                offset[c] = cache.corrected_mean[c] - m[c];
            }
        }
        let mut data = Vec::with_capacity(g_out.len());
        for (i, (go, xh)) in g_out.chunks(plane).zip(xhat.chunks(plane)).enumerate() {
            let c = i % channels;
            let inv = cache.inv_std[c];
            let gam = self.gamma[c];
            for (g, x) in go.iter().zip(xh) {
                // x − μ recovered from x̂ = (x − M)·inv
                let centered = x / inv + offset[c];
                data.push(g * gam * inv + coef_mu[c] + coef_var[c] * centered);
            }
        }
        Ok(BnGrads {
            input: Tensor4::from_parts(dims, data),
            gamma: grad_gamma,
            beta: grad_beta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
        let mut r = rng::stream(seed, 0);
        Tensor4::from_fn(dims, |[_, c, _, _]| r.random::<f64>() * 2.0 - 1.0 + 0.3 * c as f64).unwrap()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in BnVariant::ALL {
            assert_eq!(BnVariant::from_name(v.name()), Some(v));
        }
    }

    #[test]
    fn standard_constant_channels_give_beta() {
        let x = Tensor4::from_fn([3, 2, 2, 2], |[_, c, _, _]| 1.0 + c as f64).unwrap();
        let mut layer = BnLayer::new(BnVariant::Standard, 2);
        layer.beta = vec![0.5, -2.0];
        let (y, _) = layer.forward(&x).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, layer.beta[y.index_of(i)[1]]);
        }
    }

    #[test]
    fn standard_output_is_standardized() {
        let x = random_tensor([4, 3, 3, 3], 1);
        let mut layer = BnLayer::new(BnVariant::Standard, 3).with_eps(1e-12);
        let (y, _) = layer.forward(&x).unwrap();
        let s = channel_moments(&y).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(s.mean[c], 0.0, epsilon = 1e-8);
            assert_abs_diff_eq!(s.var[c], 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn stein_with_two_channels_only_rescales_variance() {
        let x = random_tensor([4, 2, 2, 3], 2);
        let n = 4 * 2 * 3;
        let mut stein = BnLayer::new(BnVariant::Stein, 2).with_c_tilde(CTilde::Fixed(0.0));
        let (y, cache) = stein.forward(&x).unwrap();
        assert!(cache.fallback);
        let raw = channel_moments(&x).unwrap();
        let k = n as f64 / (n as f64 + 1.0);
        let want = crate::tensor::apply_affine_normalize(
            &x,
            &raw.mean,
            &raw.var.iter().map(|v| k * v).collect::<Vec<_>>(),
            &[1.0, 1.0],
            &[0.0, 0.0],
            stein.eps,
        )
        .unwrap();
        for (a, b) in y.data().iter().zip(want.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn stein_vs_standard_zero_dispersion() {
        // equal channel means and equal channel variances
        let x = Tensor4::from_fn([2, 4, 2, 2], |[n, _, h, w]| {
            if (n + h + w) % 2 == 0 { 3.0 } else { 1.0 }
        })
        .unwrap();
        let nn = 8.0;
        let mut std_layer = BnLayer::new(BnVariant::Standard, 4);
        let mut stein = BnLayer::new(BnVariant::Stein, 4).with_c_tilde(CTilde::Fixed(0.0));
        let (ys, _) = std_layer.forward(&x).unwrap();
        let (yj, cache) = stein.forward(&x).unwrap();
        assert_eq!(cache.corrected_mean, vec![2.0; 4]);
        // x̂ differs only by sqrt((σ² + eps)/(n/(n+1)σ² + eps))
        let ratio = libm::sqrt((1.0 + 1e-5) / (nn / (nn + 1.0) + 1e-5));
        for (a, b) in ys.data().iter().zip(yj.data()) {
            assert_abs_diff_eq!(b, &(a * ratio), epsilon = 1e-12);
        }
    }

    #[test]
    fn running_stats_update() {
        let x = random_tensor([2, 3, 2, 2], 3);
        let mut layer = BnLayer::new(BnVariant::Stein, 3).with_momentum(1.0);
        let (_, cache) = layer.forward(&x).unwrap();
        assert_eq!(layer.running_mean, cache.corrected_mean);
        assert_eq!(layer.running_var, cache.corrected_var);

        let mut layer = BnLayer::new(BnVariant::Standard, 1).with_momentum(0.5);
        let target = ChannelStats { mean: vec![4.0], var: vec![2.0], count: 8 };
        let mut prev = (layer.running_mean[0] - 4.0).abs();
        for _ in 0..5 {
            layer.update_running(&target);
            let gap = (layer.running_mean[0] - 4.0).abs();
            assert!(gap < prev);
            prev = gap;
        }

        let bad = BnLayer::new(BnVariant::Standard, 1).with_momentum(0.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn eval_mode_is_affine_per_channel() {
        let x = random_tensor([4, 3, 2, 2], 4);
        for v in BnVariant::ALL {
            let mut layer = BnLayer::new(v, 3);
            layer.forward(&x).unwrap();
            layer.mode = Mode::Eval;
            layer.gamma = vec![1.5, -0.5, 2.0];
            layer.beta = vec![0.1, 0.2, 0.3];
            let (y, _) = layer.forward(&x).unwrap();
            for (i, (xi, yi)) in x.data().iter().zip(y.data()).enumerate() {
                let c = x.index_of(i)[1];
                let a = layer.gamma[c] / libm::sqrt(layer.running_var[c] + layer.eps);
                let b = layer.beta[c] - a * layer.running_mean[c];
                assert_abs_diff_eq!(*yi, a * xi + b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn backward_zero_and_beta() {
        let x = random_tensor([2, 4, 3, 3], 5);
        for v in BnVariant::ALL {
            let mut layer = BnLayer::new(v, 4);
            let (_, cache) = layer.forward(&x).unwrap();
            let zero = Tensor4::zeros(x.dims()).unwrap();
            let g = layer.backward(&cache, &zero).unwrap();
            assert!(g.input.data().iter().all(|v| *v == 0.0));
            assert!(g.gamma.iter().chain(&g.beta).all(|v| *v == 0.0));

            let go = random_tensor(x.dims(), 6);
            let g = layer.backward(&cache, &go).unwrap();
            for c in 0..4 {
                let s: f64 = go.channel_planes(c).flatten().sum();
                assert_abs_diff_eq!(g.beta[c], s, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn backward_shape_mismatch() {
        let x = random_tensor([2, 4, 3, 3], 5);
        let mut layer = BnLayer::new(BnVariant::Standard, 4);
        let (_, cache) = layer.forward(&x).unwrap();
        let wrong = Tensor4::zeros([2, 4, 3, 2]).unwrap();
        assert!(layer.backward(&cache, &wrong).is_err());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = random_tensor([2, 4, 3, 3], 5);
        let mut layer = BnLayer::new(BnVariant::Stein, 3);
        assert!(layer.forward(&x).is_err());
    }

    #[test]
    fn lasso_ridge_zero_lambda_equal_standard() {
        let x = random_tensor([3, 3, 2, 2], 8);
        let mut std_layer = BnLayer::new(BnVariant::Standard, 3);
        let (ys, _) = std_layer.forward(&x).unwrap();
        for v in [BnVariant::Lasso, BnVariant::Ridge] {
            let mut layer = BnLayer::new(v, 3).with_lambda(0.0);
            let (y, _) = layer.forward(&x).unwrap();
            assert_eq!(y, ys);
            assert_eq!(layer.running_var, std_layer.running_var);
        }
    }
}
