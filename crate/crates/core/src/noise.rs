//! Zero-mean additive perturbations.
//!
//! The Lévy–Gaussian mixture density is
//! `f(x) = 1/(2√2·π·σ) · (x²/(2σ²) + 1/4)⁻¹`, which is a Cauchy density with
//! scale `σ/√2`. Its CDF is `1/2 + arctan(√2·x/σ)/π`, so samples are drawn by
//! inverting the CDF. Untruncated it has no mean or variance; the optional
//! truncation to `[−ε, ε]` makes it bounded and therefore sub-Gaussian.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_PI, PI, SQRT_2};

use rand::distr::{Distribution, Open01};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor4;

/// Attempts before a truncated draw falls back to clamping.
pub const MAX_TRUNCATION_RETRIES: usize = 64;

/// Default truncation of the mixture, in units of `σ`.
pub const DEFAULT_TRUNCATION_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    LevyGaussMix,
    BoundedUniform,
    Gaussian,
    None,
}

/// A perturbation distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    /// Scale `σ` of the mixture, or the standard deviation of the Gaussian.
    pub sigma: f64,
    /// Coordinate bound `ε`. For the mixture, `0` means untruncated.
    pub epsilon_bound: f64,
    /// The "k % noise" setting this spec was derived from, if any.
    #[serde(default)]
    pub level_pct: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            family: NoiseFamily::None,
            sigma: 0.0,
            epsilon_bound: 0.0,
            level_pct: 0.0,
        }
    }

    pub fn levy_gauss(sigma: f64) -> Self {
        Self::truncated_levy_gauss(sigma, 0.0)
    }

    pub fn truncated_levy_gauss(sigma: f64, epsilon: f64) -> Self {
        Self {
            family: NoiseFamily::LevyGaussMix,
            sigma,
            epsilon_bound: epsilon,
            level_pct: 0.0,
        }
    }

    pub fn bounded_uniform(epsilon: f64) -> Self {
        Self {
            family: NoiseFamily::BoundedUniform,
            sigma: 0.0,
            epsilon_bound: epsilon,
            level_pct: 0.0,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            family: NoiseFamily::Gaussian,
            sigma,
            epsilon_bound: 0.0,
            level_pct: 0.0,
        }
    }

    /// Mixture noise bounded by `epsilon`, with `σ = ε/3`. `ε = 0` gives no
    /// noise.
    pub fn from_bound(epsilon: f64) -> Self {
        if epsilon == 0.0 {
            Self::none()
        } else {
            Self::truncated_levy_gauss(epsilon / DEFAULT_TRUNCATION_SIGMAS, epsilon)
        }
    }

    /// The same family scaled to a new `σ`; the bound keeps its ratio to `σ`.
    /// Bounded-uniform noise is scaled through its bound instead.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        let mut out = *self;
        match self.family {
            NoiseFamily::None => {}
            NoiseFamily::BoundedUniform => out.epsilon_bound = sigma,
            NoiseFamily::Gaussian => out.sigma = sigma,
            NoiseFamily::LevyGaussMix => {
                let ratio = if self.sigma > 0.0 {
                    self.epsilon_bound / self.sigma
                } else {
                    0.0
                };
                out.sigma = sigma;
                out.epsilon_bound = ratio * sigma;
            }
        }
        out
    }

    /// Whether every draw is the constant zero.
    pub fn is_degenerate(&self) -> bool {
        match self.family {
            NoiseFamily::None => true,
            NoiseFamily::BoundedUniform => self.epsilon_bound == 0.0,
            NoiseFamily::Gaussian | NoiseFamily::LevyGaussMix => self.sigma == 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_bound >= 0.0) || !self.epsilon_bound.is_finite() {
            return Err(invalid!("noise bound must be a non-negative number, got {}", self.epsilon_bound));
        }
        match self.family {
            NoiseFamily::LevyGaussMix | NoiseFamily::Gaussian => {
                if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
                    return Err(invalid!("noise sigma must be non-negative, got {}", self.sigma));
                }
            }
            NoiseFamily::BoundedUniform | NoiseFamily::None => {}
        }
        Ok(())
    }

    /// Draws one value from `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        match self.family {
            NoiseFamily::None => 0.0,
            NoiseFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                self.sigma * z
            }
            NoiseFamily::BoundedUniform => {
                let u: f64 = rng.random();
                self.epsilon_bound * (2.0 * u - 1.0)
            }
            NoiseFamily::LevyGaussMix => {
                let eps = self.epsilon_bound;
                let mut x = levy_gauss_draw(self.sigma, rng);
                if eps > 0.0 {
                    let mut tries = 1;
                    while x.abs() > eps && tries < MAX_TRUNCATION_RETRIES {
                        x = levy_gauss_draw(self.sigma, rng);
                        tries += 1;
                    }
                    x = x.clamp(-eps, eps);
                }
                x
            }
        }
    }
}

fn levy_gauss_draw<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    quantile_unchecked(u, sigma)
}

fn quantile_unchecked(u: f64, sigma: f64) -> f64 {
    sigma / SQRT_2 * libm::tan(PI * (u - 0.5))
}

/// Density of the Lévy–Gaussian mixture.
pub fn levy_gauss_density(x: f64, sigma: f64) -> f64 {
    let t = x * x / (2.0 * sigma * sigma) + 0.25;
    1.0 / (2.0 * SQRT_2 * PI * sigma * t)
}

/// CDF of the mixture: `1/2 + arctan(√2·x/σ)/π`.
pub fn levy_gauss_cdf(x: f64, sigma: f64) -> f64 {
    0.5 + FRAC_1_PI * libm::atan(SQRT_2 * x / sigma)
}

/// Inverse CDF of the mixture: `(σ/√2)·tan(π(u − 1/2))`.
pub fn levy_gauss_quantile(u: f64, sigma: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(invalid!("quantile level must lie in (0, 1), got {}", u));
    }
    if !(sigma > 0.0) {
        return Err(invalid!("sigma must be positive, got {}", sigma));
    }
    Ok(quantile_unchecked(u, sigma))
}

/// Variance proxy `2ε²` of a vector with coordinates bounded by `ε`.
pub fn subgaussian_proxy_of_bound(epsilon: f64) -> f64 {
    2.0 * epsilon * epsilon
}

/// Draws an i.i.d. noise tensor. Entry `i` uses stream `(seed, i)`.
pub fn sample_noise(spec: &NoiseSpec, dims: [usize; 4], seed: u64) -> Result<Tensor4> {
    spec.validate()?;
    let len: usize = dims.iter().product();
    let data = (0..len)
        .map(|i| draw_at(spec, seed, i as u64))
        .collect();
    Tensor4::new(dims, data)
}

/// Like [`sample_noise`] with one spec per channel.
pub fn sample_noise_channels(specs: &[NoiseSpec], dims: [usize; 4], seed: u64) -> Result<Tensor4> {
    if specs.len() != dims[1] {
        return Err(invalid!("{} noise specs for {} channels", specs.len(), dims[1]));
    }
    for s in specs {
        s.validate()?;
    }
    let plane = dims[2] * dims[3];
    let len: usize = dims.iter().product();
    let data = (0..len)
        .map(|i| draw_at(&specs[(i / plane) % dims[1]], seed, i as u64))
        .collect();
    Tensor4::new(dims, data)
}

/// Draws `n` samples into a vector, entry `i` from stream `(seed, i)`.
pub fn sample_vec(spec: &NoiseSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    Ok((0..n).map(|i| draw_at(spec, seed, i as u64)).collect())
}

fn draw_at(spec: &NoiseSpec, seed: u64, index: u64) -> f64 {
    if spec.is_degenerate() {
        return 0.0;
    }
    let mut r: StreamRng = rng::stream(seed, index);
    spec.draw(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_statistic, Moments};
    use approx::assert_abs_diff_eq;

    /// Composite Simpson integral of the density from 0 to `x`, plus 1/2.
    fn numeric_cdf(x: f64, sigma: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let mut s = levy_gauss_density(0.0, sigma) + levy_gauss_density(x, sigma);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * levy_gauss_density(i as f64 * h, sigma);
        }
        0.5 + s * h / 3.0
    }

    #[test]
    fn closed_form_matches_numeric_integration() {
        for &sigma in &[0.3, 1.0, 2.5] {
            for &u in &[0.01, 0.1, 0.3, 0.5, 0.62, 0.75, 0.9, 0.99] {
                let x = levy_gauss_quantile(u, sigma).unwrap();
                assert_abs_diff_eq!(numeric_cdf(x, sigma), u, epsilon = 1e-9);
                assert_abs_diff_eq!(levy_gauss_cdf(x, sigma), u, epsilon = 1e-12);
            }
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn quantile_examples() {
        assert_eq!(levy_gauss_quantile(0.5, 1.3).unwrap(), 0.0);
        let q = levy_gauss_quantile(0.75, 1.0).unwrap();
        assert_abs_diff_eq!(q, 0.70711, epsilon = 1e-5);
        assert_abs_diff_eq!(numeric_cdf(0.70711, 1.0), 0.75, epsilon = 1e-6);
        for &u in &[0.05, 0.2, 0.4] {
            let a = levy_gauss_quantile(u, 1.7).unwrap();
            let b = levy_gauss_quantile(1.0 - u, 1.7).unwrap();
            assert_abs_diff_eq!(a, -b, epsilon = 1e-12);
        }
        assert!(levy_gauss_quantile(0.0, 1.0).is_err());
        assert!(levy_gauss_quantile(1.0, 1.0).is_err());
        assert!(levy_gauss_quantile(0.5, 0.0).is_err());
    }

    #[test]
    fn degenerate_specs_give_zeros() {
        let dims = [2, 3, 2, 2];
        let z = sample_noise(&NoiseSpec::none(), dims, 1).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
        let z = sample_noise(&NoiseSpec::bounded_uniform(0.0), dims, 1).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn proxy_examples() {
        assert_eq!(subgaussian_proxy_of_bound(0.0), 0.0);
        assert_abs_diff_eq!(subgaussian_proxy_of_bound(0.1), 0.02, epsilon = 1e-15);
        assert_eq!(subgaussian_proxy_of_bound(1.0), 2.0);
    }

    #[test]
    fn truncated_samples_stay_in_bounds() {
        let spec = NoiseSpec::truncated_levy_gauss(1.0, 0.5);
        let xs = sample_vec(&spec, 50_000, 3).unwrap();
        assert!(xs.iter().all(|x| x.abs() <= 0.5));
        let spec = NoiseSpec::bounded_uniform(0.2);
        let xs = sample_vec(&spec, 50_000, 3).unwrap();
        assert!(xs.iter().all(|x| x.abs() <= 0.2));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = NoiseSpec::levy_gauss(1.0);
        let a = sample_noise(&spec, [3, 2, 4, 4], 11).unwrap();
        let b = sample_noise(&spec, [3, 2, 4, 4], 11).unwrap();
        assert_eq!(a, b);
        let c = sample_noise(&spec, [3, 2, 4, 4], 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn channel_specs_scale_independently() {
        let base = NoiseSpec::truncated_levy_gauss(1.0, 3.0);
        let specs = [base.with_sigma(0.1), base.with_sigma(2.0)];
        let t = sample_noise_channels(&specs, [4, 2, 3, 3], 5).unwrap();
        for (i, v) in t.data().iter().enumerate() {
            let bound = if t.index_of(i)[1] == 0 { 0.3 } else { 6.0 };
            assert!(v.abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn ks_against_closed_form_cdf() {
        let mut xs = sample_vec(&NoiseSpec::levy_gauss(1.0), 200_000, 9).unwrap();
        let d = ks_statistic(&mut xs, |x| levy_gauss_cdf(x, 1.0));
        // 1.95/sqrt(n) is the 0.1% critical value
        assert!(d < 1.95 / libm::sqrt(200_000.0), "KS statistic {d}");
    }

    #[test]
    fn bounded_families_are_centred() {
        for spec in [
            NoiseSpec::truncated_levy_gauss(1.0, 3.0),
            NoiseSpec::bounded_uniform(0.7),
            NoiseSpec::gaussian(1.3),
        ] {
            let m: Moments = sample_vec(&spec, 200_000, 21).unwrap().into_iter().collect();
            assert!(m.mean().abs() < 4.0 * m.se(), "{spec:?}: mean {} se {}", m.mean(), m.se());
        }
    }
}
