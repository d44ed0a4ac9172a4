//! Shrinkage estimators for channel means and variances.
//!
//! Means are shrunk with the James–Stein rule. Empirical variances of
//! Gaussian samples are Gamma distributed, so variances are shrunk with the
//! Gamma-scale rule `X_i/(α+1) + c·V`, where `V` is the geometric mean of the
//! inputs. The Gaussian-form rule applied to variances (the Khoshsirat et al.
//! baseline) and the Lasso/Ridge estimators are included for comparison.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Lower clamp applied to variances before they are divided by or logged.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// How `σ²_{μ_C}`, the dispersion of the channel-mean vector, is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispersion {
    /// Divide by `C`.
    #[default]
    Population,
    /// Divide by `C − 1`.
    Sample,
}

/// Options of the channel-mean James–Stein rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanShrinkage {
    #[serde(default)]
    pub dispersion: Dispersion,
    /// Clip the shrinkage factor at zero (positive-part estimator).
    #[serde(default)]
    pub positive_part: bool,
}

/// Shape `α` and per-coordinate scales `β_i` of a Gamma model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub alpha: f64,
    pub betas: Vec<f64>,
}

impl GammaParams {
    pub fn new(alpha: f64, betas: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(invalid!("gamma shape must be positive, got {}", alpha));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
            return Err(invalid!("gamma scale must be positive, got {}", b));
        }
        Ok(Self { alpha, betas })
    }

    pub fn p(&self) -> usize {
        self.betas.len()
    }
}

/// A shrinkage constant together with the admissible interval it was checked
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageConstant {
    pub c_tilde: f64,
    pub admissible_lo: f64,
    pub admissible_hi: f64,
    /// `false` when `c_tilde` lies outside `[lo, hi]`.
    pub admissible: bool,
}

impl ShrinkageConstant {
    fn checked(c_tilde: f64, hi: f64) -> Self {
        Self {
            c_tilde,
            admissible_lo: 0.0,
            admissible_hi: hi,
            admissible: (0.0..=hi).contains(&c_tilde),
        }
    }

    /// `c` for the Gamma-scale rule with shape `alpha` over `p` coordinates.
    pub fn gamma(alpha: f64, p: usize, c_tilde: f64) -> Self {
        Self::checked(c_tilde, classical_c_upper(alpha, p))
    }

    /// Midpoint of the classical Gamma-scale interval.
    pub fn gamma_midpoint(alpha: f64, p: usize) -> Self {
        let hi = classical_c_upper(alpha, p);
        Self::checked(hi / 2.0, hi)
    }

    /// `c̃` for the batch-norm variance rule with `n` samples per channel and
    /// `p` channels.
    pub fn variance(n: usize, p: usize, c_tilde: f64) -> Self {
        Self::checked(c_tilde, variance_c_upper(n, p))
    }

    pub fn variance_midpoint(n: usize, p: usize) -> Self {
        let hi = variance_c_upper(n, p);
        Self::checked(hi / 2.0, hi)
    }
}

/// Upper end of the classical admissible interval,
/// `2(p−1)/((α+1)(αp+1))`.
pub fn classical_c_upper(alpha: f64, p: usize) -> f64 {
    let p = p as f64;
    2.0 * (p - 1.0) / ((alpha + 1.0) * (alpha * p + 1.0))
}

/// Upper end of the positive admissible interval under bounded (sub-Gaussian)
/// perturbations, `2p/(αp+1)·exp(1/α)·sqrt(1+1/α) − 2/(α+1)`.
pub fn perturbed_c_upper(alpha: f64, p: usize) -> f64 {
    let p = p as f64;
    2.0 * p / (alpha * p + 1.0) * libm::exp(1.0 / alpha) * libm::sqrt(1.0 + 1.0 / alpha)
        - 2.0 / (alpha + 1.0)
}

/// Negative branch of the perturbed admissible set: `c ≤ −2/(α(α+1))`.
pub fn perturbed_c_negative_bound(alpha: f64) -> f64 {
    -2.0 / (alpha * (alpha + 1.0))
}

/// Upper end of the batch-norm variance interval,
/// `4n(p−1)/((n+1)((n−1)p+2))`.
pub fn variance_c_upper(n: usize, p: usize) -> f64 {
    let (n, p) = (n as f64, p as f64);
    4.0 * n * (p - 1.0) / ((n + 1.0) * ((n - 1.0) * p + 2.0))
}

fn sum_sq(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

/// Classical James–Stein estimate `(1 − (p−2)·s/‖z‖²)·z` with `s` the noise
/// variance. The factor is not clipped, so it can be negative.
pub fn js_mean_classical(z: &[f64], variance_scale: f64) -> Result<Vec<f64>> {
    js_mean_classical_with(z, variance_scale, false)
}

/// [`js_mean_classical`] with optional positive-part clipping of the factor.
pub fn js_mean_classical_with(z: &[f64], variance_scale: f64, positive_part: bool) -> Result<Vec<f64>> {
    let mut f = js_factor_classical(z, variance_scale)?;
    if positive_part {
        f = f.max(0.0);
    }
    Ok(z.iter().map(|v| f * v).collect())
}

/// Shrinkage factor of [`js_mean_classical`].
pub fn js_factor_classical(z: &[f64], variance_scale: f64) -> Result<f64> {
    let p = z.len();
    if p < 3 {
        return Err(invalid!("James–Stein needs p >= 3, got {}", p));
    }
    if !(variance_scale > 0.0) {
        return Err(invalid!("variance scale must be positive, got {}", variance_scale));
    }
    let norm2 = sum_sq(z);
    if norm2 == 0.0 {
        return Err(Error::DivisionByZero("James–Stein on the zero vector"));
    }
    Ok(1.0 - (p as f64 - 2.0) * variance_scale / norm2)
}

/// A shrunk vector and the common factor applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Shrunk {
    pub values: Vec<f64>,
    pub factor: f64,
    /// Set when the input was too short to shrink and was returned unchanged.
    pub fallback: bool,
}

impl Shrunk {
    fn identity(values: &[f64], fallback: bool) -> Self {
        Self {
            values: values.to_vec(),
            factor: 1.0,
            fallback,
        }
    }
}

fn dispersion(v: &[f64], mode: Dispersion) -> f64 {
    let c = v.len() as f64;
    let mean = v.iter().sum::<f64>() / c;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    match mode {
        Dispersion::Population => ss / c,
        Dispersion::Sample => ss / (c - 1.0),
    }
}

/// Factor `1 − (C−2)·σ²_v/‖v‖²`, where `σ²_v` is the dispersion of the
/// entries of `v`. `None` when `C < 3`.
///
/// Since `σ²_v ≤ ‖v‖²/C` (population) or `‖v‖²/(C−1)` (sample), the factor
/// never drops below `2/C` (resp. `1/(C−1)`); positive-part clipping is
/// accepted for symmetry with the classical rule but never binds here.
pub fn js_channel_factor(v: &[f64], opts: MeanShrinkage) -> Option<f64> {
    let c = v.len();
    if c < 3 {
        return None;
    }
    let disp = dispersion(v, opts.dispersion);
    if disp == 0.0 {
        // zero dispersion also covers the zero vector
        return Some(1.0);
    }
    let f = 1.0 - (c as f64 - 2.0) * disp / sum_sq(v);
    Some(if opts.positive_part { f.max(0.0) } else { f })
}

/// James–Stein correction of the channel-mean vector with default options.
pub fn js_mean_channels(mu: &[f64]) -> Shrunk {
    js_mean_channels_with(mu, MeanShrinkage::default())
}

/// James–Stein correction of the channel-mean vector. With fewer than three
/// channels the input is returned unchanged and `fallback` is set.
pub fn js_mean_channels_with(mu: &[f64], opts: MeanShrinkage) -> Shrunk {
    match js_channel_factor(mu, opts) {
        None => Shrunk::identity(mu, true),
        Some(f) => Shrunk {
            values: mu.iter().map(|v| f * v).collect(),
            factor: f,
            fallback: false,
        },
    }
}

/// Geometric mean `(∏ x_j)^{1/p}`, computed in log space.
pub fn geometric_mean(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(invalid!("geometric mean of an empty vector"));
    }
    if let Some(v) = x.iter().find(|v| !(**v > 0.0)) {
        return Err(invalid!("geometric mean needs positive entries, got {}", v));
    }
    let log_mean = x.iter().map(|v| libm::log(*v)).sum::<f64>() / x.len() as f64;
    Ok(libm::exp(log_mean))
}

/// Gamma-scale shrinkage `x_i/(α+1) + c·V`, `V` the geometric mean of `x`.
pub fn gamma_scale_shrink(x: &[f64], alpha: f64, c: f64) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(invalid!("gamma-scale shrinkage needs p >= 2, got {}", x.len()));
    }
    if !(alpha > 0.0) {
        return Err(invalid!("alpha must be positive, got {}", alpha));
    }
    let v = geometric_mean(x)?;
    let k = 1.0 / (alpha + 1.0);
    Ok(x.iter().map(|xi| xi * k + c * v).collect())
}

/// Batch-norm variance correction `n/(n+1)·σ̂²_i + c·V`, with `V` the
/// geometric mean of the (floored) variances.
pub fn js_variance_channels(var: &[f64], n: usize, c: f64) -> Result<Vec<f64>> {
    js_variance_channels_with(var, n, c, VARIANCE_FLOOR)
}

pub fn js_variance_channels_with(var: &[f64], n: usize, c: f64, floor: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(invalid!("variance shrinkage needs n >= 2, got {}", n));
    }
    if var.is_empty() {
        return Err(invalid!("variance vector is empty"));
    }
    if let Some(v) = var.iter().find(|v| !(**v >= 0.0)) {
        return Err(invalid!("variances must be non-negative, got {}", v));
    }
    let floored: Vec<f64> = var.iter().map(|v| v.max(floor)).collect();
    let g = geometric_mean(&floored)?;
    let k = n as f64 / (n as f64 + 1.0);
    Ok(floored.iter().map(|v| k * v + c * g).collect())
}

/// Gamma parameters of the population variance of `n` Gaussian samples:
/// `α = (n−1)/2`, `β_i = 2σ²_i/n`.
pub fn variance_gamma_params(sigma2: &[f64], n: usize) -> Result<GammaParams> {
    if n < 2 {
        return Err(invalid!("need n >= 2 samples, got {}", n));
    }
    let nf = n as f64;
    GammaParams::new(
        (nf - 1.0) / 2.0,
        sigma2.iter().map(|s| 2.0 * s / nf).collect(),
    )
}

/// The Gaussian James–Stein rule applied to a variance vector, as done by
/// Khoshsirat et al. Negative outputs are clamped to [`VARIANCE_FLOOR`].
pub fn khoshsirat_variance(var: &[f64]) -> Shrunk {
    khoshsirat_variance_with(var, MeanShrinkage::default(), VARIANCE_FLOOR)
}

pub fn khoshsirat_variance_with(var: &[f64], opts: MeanShrinkage, floor: f64) -> Shrunk {
    let mut out = js_mean_channels_with(var, opts);
    for v in &mut out.values {
        *v = v.max(floor);
    }
    out
}

/// Soft-thresholded mean `sign(x̄)·max(0, |x̄| − λ/(2n))`.
pub fn lasso_mean(xbar: f64, n: usize, lambda: f64) -> f64 {
    let t = lambda / (2.0 * n as f64);
    let m = (xbar.abs() - t).max(0.0);
    if m == 0.0 {
        0.0
    } else {
        libm::copysign(m, xbar)
    }
}

/// Soft-thresholded variance `max(0, s² − λ/2)`.
pub fn lasso_variance(s2: f64, lambda: f64) -> f64 {
    (s2 - lambda / 2.0).max(0.0)
}

/// Ridge mean `Σx/(n+λ)`.
pub fn ridge_mean(sum_x: f64, n: usize, lambda: f64) -> f64 {
    sum_x / (n as f64 + lambda)
}

/// Ridge variance `s²/(1+λ)`.
pub fn ridge_variance(s2: f64, lambda: f64) -> f64 {
    s2 / (1.0 + lambda)
}
