//! Monte Carlo risk laboratory.
//!
//! Each experiment runs `n_trials` independent trials. Trial `t` draws from
//! its own stream `(seed, t)`, trials are grouped into fixed blocks of
//! [`BLOCK_SIZE`] and block moments are merged with a pairwise tree whose
//! shape only depends on the number of blocks. A [`TrialExecutor`] decides
//! how blocks are scheduled; any executor gives bit-identical reports.
//!
//! Estimators are compared on common random numbers: every trial evaluates
//! all estimators on the same draw, and the verdict is based on the paired
//! per-trial loss difference.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::js_factor_classical;
use crate::noise::NoiseSpec;
use crate::rng::{self, StreamRng};
use crate::stats::{pairwise_reduce, Estimate, Moments};

/// Trials per reduction block.
pub const BLOCK_SIZE: u64 = 1024;
/// Minimum trial count accepted by the risk experiments.
pub const MIN_TRIALS: u64 = 10_000;
/// Default verdict threshold in standard errors.
pub const DEFAULT_K: f64 = 3.0;

/// Schedules independent blocks of work. Results must come back in block
/// order.
pub trait TrialExecutor: Sync {
    fn map_blocks<T, F>(&self, n_blocks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs blocks one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl TrialExecutor for Sequential {
    fn map_blocks<T, F>(&self, n_blocks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n_blocks).map(f).collect()
    }
}

/// Runs `n_trials` trials, each writing `width` values, and returns the
/// moments of every column.
pub fn monte_carlo<E, F>(exec: &E, n_trials: u64, seed: u64, width: usize, trial: F) -> Vec<Moments>
where
    E: TrialExecutor + ?Sized,
    F: Fn(&mut StreamRng, &mut [f64]) + Sync + Send,
{
    let n_blocks = n_trials.div_ceil(BLOCK_SIZE) as usize;
    let blocks = exec.map_blocks(n_blocks, |b| {
        let start = b as u64 * BLOCK_SIZE;
        let end = (start + BLOCK_SIZE).min(n_trials);
        let mut acc = vec![Moments::default(); width];
        let mut out = vec![0.0; width];
        for t in start..end {
            let mut r = rng::stream(seed, t);
            trial(&mut r, &mut out);
            for (m, v) in acc.iter_mut().zip(&out) {
                m.push(*v);
            }
        }
        acc
    });
    pairwise_reduce(blocks, |a, b| a.iter().zip(b).map(|(x, y)| x.merge(y)).collect())
        .unwrap_or_else(|| vec![Moments::default(); width])
}

/// Monte Carlo options shared by every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub n_trials: u64,
    pub seed: u64,
    /// Verdict threshold in standard errors.
    pub k: f64,
}

impl McOptions {
    pub fn new(n_trials: u64, seed: u64) -> Self {
        Self { n_trials, seed, k: DEFAULT_K }
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = k;
        self
    }

    fn check(&self, min_trials: u64) -> Result<()> {
        if self.n_trials < min_trials {
            return Err(invalid!("need at least {} trials, got {}", min_trials, self.n_trials));
        }
        if !(self.k > 0.0) {
            return Err(invalid!("verdict threshold must be positive, got {}", self.k));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Dominates,
    Inconclusive,
    Violated,
}

/// Decision on a paired difference `baseline − candidate` with the given
/// standard error.
pub fn verdict(diff: Estimate, k: f64) -> (Verdict, f64) {
    let margin = margin_in_se(diff.value, diff.se);
    let v = if margin > k {
        Verdict::Dominates
    } else if margin < -k {
        Verdict::Violated
    } else {
        Verdict::Inconclusive
    };
    (v, margin)
}

fn margin_in_se(value: f64, se: f64) -> f64 {
    if se > 0.0 {
        value / se
    } else if value == 0.0 {
        0.0
    } else {
        value.signum() * f64::INFINITY
    }
}

/// Configuration echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub experiment: String,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas_x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub epsilon: f64,
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub seed: u64,
}

/// Monte Carlo risks of a candidate estimator and its baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub estimator_risks: BTreeMap<String, Estimate>,
    pub candidate: String,
    pub baseline: String,
    /// Paired per-trial `loss_baseline − loss_candidate`.
    pub difference: Estimate,
    pub n_trials: u64,
    pub config: RiskConfig,
    pub verdict: Verdict,
    /// `difference.value / difference.se`.
    pub margin_se: f64,
    /// `(risk_baseline − risk_candidate)/(se_baseline + se_candidate)`, the
    /// margin using the two marginal standard errors.
    pub marginal_margin_se: f64,
    pub k: f64,
}

impl RiskReport {
    fn build(
        candidate: &str,
        baseline: &str,
        moments: &[Moments],
        config: RiskConfig,
        opts: &McOptions,
    ) -> Self {
        let (base, cand, diff) = (moments[0].estimate(), moments[1].estimate(), moments[2].estimate());
        let (verdict, margin_se) = verdict(diff, opts.k);
        let mut estimator_risks = BTreeMap::new();
        estimator_risks.insert(baseline.to_string(), base);
        estimator_risks.insert(candidate.to_string(), cand);
        Self {
            estimator_risks,
            candidate: candidate.to_string(),
            baseline: baseline.to_string(),
            difference: diff,
            n_trials: opts.n_trials,
            config,
            verdict,
            margin_se,
            marginal_margin_se: margin_in_se(base.value - cand.value, base.se + cand.se),
            k: opts.k,
        }
    }

    pub fn risk(&self, name: &str) -> Option<Estimate> {
        self.estimator_risks.get(name).copied()
    }

    pub fn candidate_risk(&self) -> Estimate {
        self.estimator_risks[&self.candidate]
    }

    pub fn baseline_risk(&self) -> Estimate {
        self.estimator_risks[&self.baseline]
    }
}

/// `θ = (‖θ‖/√p)·(1, …, 1)`.
pub fn theta_from_norm(p: usize, norm: f64) -> Vec<f64> {
    vec![norm / libm::sqrt(p as f64); p]
}

/// `p` values spaced geometrically from `lo` to `hi`.
pub fn geomspace(lo: f64, hi: f64, p: usize) -> Vec<f64> {
    if p == 1 {
        return vec![lo];
    }
    let r = libm::log(hi / lo) / (p - 1) as f64;
    (0..p).map(|i| lo * libm::exp(r * i as f64)).collect()
}

/// Gaussian mean model under additive perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTrialSpec {
    pub theta: Vec<f64>,
    pub sigma: f64,
    pub noise: NoiseSpec,
}

impl GaussianTrialSpec {
    pub fn p(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p() < 3 {
            return Err(invalid!("James–Stein needs p >= 3, got {}", self.p()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(invalid!("sigma must be positive, got {}", self.sigma));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(invalid!("theta must be finite"));
        }
        self.noise.validate()
    }
}

fn draw_gaussian_obs(spec: &GaussianTrialSpec, r: &mut StreamRng, z: &mut [f64]) {
    for (zi, t) in z.iter_mut().zip(&spec.theta) {
        let e: f64 = StandardNormal.sample(r);
        *zi = t + spec.sigma * e + spec.noise.draw(r);
    }
}

/// Risks of the MLE `Z` and of the James–Stein estimate with
/// `variance_scale = σ²`, for `Z = X + Y`, `X ∼ N(θ, σ²I)`, `Y` from `noise`.
pub fn mc_risk_gaussian(p: usize, theta: &[f64], sigma: f64, noise: NoiseSpec, n_trials: u64, seed: u64) -> Result<RiskReport> {
    if theta.len() != p {
        return Err(invalid!("theta has length {}, p is {}", theta.len(), p));
    }
    let spec = GaussianTrialSpec { theta: theta.to_vec(), sigma, noise };
    mc_risk_gaussian_with(&Sequential, &spec, &McOptions::new(n_trials, seed))
}

pub fn mc_risk_gaussian_with<E: TrialExecutor + ?Sized>(
    exec: &E,
    spec: &GaussianTrialSpec,
    opts: &McOptions,
) -> Result<RiskReport> {
    spec.validate()?;
    opts.check(MIN_TRIALS)?;
    let p = spec.p();
    let s2 = spec.sigma * spec.sigma;
    let moments = monte_carlo(exec, opts.n_trials, opts.seed, 3, |r, out| {
        let mut z = vec![0.0; p];
        draw_gaussian_obs(spec, r, &mut z);
        // ‖Z‖ = 0 has probability zero; keep the MLE there
        let f = js_factor_classical(&z, s2).unwrap_or(1.0);
        let (mut mle, mut js) = (0.0, 0.0);
        for (zi, t) in z.iter().zip(&spec.theta) {
            mle += (zi - t) * (zi - t);
            let d = f * zi - t;
            js += d * d;
        }
        out[0] = mle;
        out[1] = js;
        out[2] = mle - js;
    });
    let config = RiskConfig {
        experiment: "gaussian".into(),
        p,
        n: None,
        theta: Some(spec.theta.clone()),
        mu: None,
        sigmas_x: None,
        beta: None,
        sigma: Some(spec.sigma),
        epsilon: spec.noise.epsilon_bound,
        noise: spec.noise,
        c: None,
        alpha: None,
        seed: opts.seed,
    };
    Ok(RiskReport::build("js", "mle", &moments, config, opts))
}

/// Gamma-scale model: `Z_ij = X_ij + Y_ij`, `X_ij ∼ N(μ, σ²_{x,i})`,
/// `j = 1..n`, `i = 1..p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTrialSpec {
    pub p: usize,
    pub n: usize,
    pub mu: f64,
    pub sigmas_x: Vec<f64>,
    pub noise: NoiseSpec,
    pub c: f64,
}

impl GammaTrialSpec {
    pub fn equal(p: usize, n: usize, noise: NoiseSpec, c: f64) -> Self {
        Self { p, n, mu: 0.0, sigmas_x: vec![1.0; p], noise, c }
    }

    /// `σ_x` spread geometrically over `[1, ratio]`.
    pub fn heteroscedastic(p: usize, n: usize, ratio: f64, noise: NoiseSpec, c: f64) -> Self {
        Self { p, n, mu: 0.0, sigmas_x: geomspace(1.0, ratio, p), noise, c }
    }

    /// Gamma shape of the population variance of `n` samples.
    pub fn alpha(&self) -> f64 {
        (self.n as f64 - 1.0) / 2.0
    }

    /// Clean scale parameters `β_i = 2σ²_{x,i}/n`.
    pub fn betas(&self) -> Vec<f64> {
        self.sigmas_x.iter().map(|s| 2.0 * s * s / self.n as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(invalid!("gamma model needs p >= 2, got {}", self.p));
        }
        if self.n < 2 {
            return Err(invalid!("gamma model needs n >= 2, got {}", self.n));
        }
        if self.sigmas_x.len() != self.p {
            return Err(invalid!("{} sigmas for p = {}", self.sigmas_x.len(), self.p));
        }
        if self.sigmas_x.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid!("sigmas_x must be positive"));
        }
        if !self.mu.is_finite() || !self.c.is_finite() {
            return Err(invalid!("mu and c must be finite"));
        }
        self.noise.validate()
    }
}

/// Risks of `β̂⁰ = σ̂²_z/(α+1)` and `β̂ᴶˢ = β̂⁰ + cV` against the clean
/// `β_i = 2σ²_{x,i}/n`.
pub fn mc_risk_gamma(spec: &GammaTrialSpec, n_trials: u64, seed: u64) -> Result<RiskReport> {
    mc_risk_gamma_with(&Sequential, spec, &McOptions::new(n_trials, seed))
}

pub fn mc_risk_gamma_with<E: TrialExecutor + ?Sized>(
    exec: &E,
    spec: &GammaTrialSpec,
    opts: &McOptions,
) -> Result<RiskReport> {
    spec.validate()?;
    opts.check(MIN_TRIALS)?;
    let (p, n) = (spec.p, spec.n);
    let alpha = spec.alpha();
    let k = 1.0 / (alpha + 1.0);
    let betas = spec.betas();
    let moments = monte_carlo(exec, opts.n_trials, opts.seed, 3, |r, out| {
        let mut naive = vec![0.0; p];
        let mut sample = vec![0.0; n];
        let mut log_sum = 0.0;
        for i in 0..p {
            for s in sample.iter_mut() {
                let e: f64 = StandardNormal.sample(r);
                *s = spec.mu + spec.sigmas_x[i] * e + spec.noise.draw(r);
            }
            let m = sample.iter().sum::<f64>() / n as f64;
            let v = sample.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / n as f64;
            naive[i] = v * k;
            log_sum += libm::log(v);
        }
        let cv = spec.c * libm::exp(log_sum / p as f64);
        let (mut l0, mut l1) = (0.0, 0.0);
        for (b0, b) in naive.iter().zip(&betas) {
            l0 += (b0 - b) * (b0 - b);
            let d = b0 + cv - b;
            l1 += d * d;
        }
        out[0] = l0;
        out[1] = l1;
        out[2] = l0 - l1;
    });
    let config = RiskConfig {
        experiment: "gamma".into(),
        p,
        n: Some(n),
        theta: None,
        mu: Some(spec.mu),
        sigmas_x: Some(spec.sigmas_x.clone()),
        beta: Some(betas),
        sigma: None,
        epsilon: spec.noise.epsilon_bound,
        noise: spec.noise,
        c: Some(spec.c),
        alpha: Some(alpha),
        seed: opts.seed,
    };
    Ok(RiskReport::build("js", "naive", &moments, config, opts))
}

/// Estimate of `E[(2Zᵀθ + p − 2)/ZᵀZ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyInequality {
    pub estimate: Estimate,
    /// `estimate + k·se < 2`.
    pub holds: bool,
    /// `(2 − estimate)/se`.
    pub margin_se: f64,
    pub n_trials: u64,
    pub config: RiskConfig,
    pub k: f64,
}

/// `Z = X + Y`, `X ∼ N(θ, I)`.
pub fn mc_key_inequality(p: usize, theta: &[f64], noise: NoiseSpec, n_trials: u64, seed: u64) -> Result<KeyInequality> {
    if theta.len() != p {
        return Err(invalid!("theta has length {}, p is {}", theta.len(), p));
    }
    let spec = GaussianTrialSpec { theta: theta.to_vec(), sigma: 1.0, noise };
    mc_key_inequality_with(&Sequential, &spec, &McOptions::new(n_trials, seed))
}

pub fn mc_key_inequality_with<E: TrialExecutor + ?Sized>(
    exec: &E,
    spec: &GaussianTrialSpec,
    opts: &McOptions,
) -> Result<KeyInequality> {
    spec.validate()?;
    opts.check(2)?;
    let p = spec.p();
    let moments = monte_carlo(exec, opts.n_trials, opts.seed, 1, |r, out| {
        let mut z = vec![0.0; p];
        draw_gaussian_obs(spec, r, &mut z);
        let zz: f64 = z.iter().map(|v| v * v).sum();
        let zt: f64 = z.iter().zip(&spec.theta).map(|(a, b)| a * b).sum();
        out[0] = (2.0 * zt + p as f64 - 2.0) / zz;
    });
    let estimate = moments[0].estimate();
    let margin_se = margin_in_se(2.0 - estimate.value, estimate.se);
    Ok(KeyInequality {
        estimate,
        holds: margin_se > opts.k,
        margin_se,
        n_trials: opts.n_trials,
        config: RiskConfig {
            experiment: "inequality".into(),
            p,
            n: None,
            theta: Some(spec.theta.clone()),
            mu: None,
            sigmas_x: None,
            beta: None,
            sigma: Some(spec.sigma),
            epsilon: spec.noise.epsilon_bound,
            noise: spec.noise,
            c: None,
            alpha: None,
            seed: opts.seed,
        },
        k: opts.k,
    })
}

/// Test functions for the Gamma Stein identity
/// `E[(X − αβ)h(X)] = β·E[X·h′(X)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaFn {
    Identity,
    Square,
    Log,
    Sqrt,
    Cbrt,
    FifthRoot,
}

impl LemmaFn {
    pub const ALL: [LemmaFn; 6] = [
        LemmaFn::Identity,
        LemmaFn::Square,
        LemmaFn::Log,
        LemmaFn::Sqrt,
        LemmaFn::Cbrt,
        LemmaFn::FifthRoot,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LemmaFn::Identity => "identity",
            LemmaFn::Square => "square",
            LemmaFn::Log => "log",
            LemmaFn::Sqrt => "sqrt",
            LemmaFn::Cbrt => "cbrt",
            LemmaFn::FifthRoot => "fifth_root",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|h| h.name() == s)
    }

    pub fn h(&self, x: f64) -> f64 {
        match self {
            LemmaFn::Identity => x,
            LemmaFn::Square => x * x,
            LemmaFn::Log => libm::log(x),
            LemmaFn::Sqrt => libm::sqrt(x),
            LemmaFn::Cbrt => libm::cbrt(x),
            LemmaFn::FifthRoot => libm::pow(x, 0.2),
        }
    }

    /// `x·h′(x)`, which is finite at every `x > 0`.
    pub fn x_dh(&self, x: f64) -> f64 {
        match self {
            LemmaFn::Identity => x,
            LemmaFn::Square => 2.0 * x * x,
            LemmaFn::Log => 1.0,
            LemmaFn::Sqrt => 0.5 * libm::sqrt(x),
            LemmaFn::Cbrt => libm::cbrt(x) / 3.0,
            LemmaFn::FifthRoot => 0.2 * libm::pow(x, 0.2),
        }
    }

    /// Smallest shape (exclusive) for which both sides and the variance of
    /// the Monte Carlo summands are finite. Every catalog entry has finite
    /// moments of all orders at any positive shape.
    pub fn alpha_floor(&self) -> f64 {
        0.0
    }
}

/// Both sides of the Gamma Stein identity and their paired gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub h: LemmaFn,
    pub alpha: f64,
    pub beta: f64,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Paired `mean(lhs − rhs)/se`.
    pub gap_se: f64,
    /// `|gap_se| < tolerance`.
    pub holds: bool,
    pub tolerance_se: f64,
    pub n_trials: u64,
    pub seed: u64,
}

/// Gap tolerance of the identity check, in standard errors.
pub const LEMMA_TOLERANCE_SE: f64 = 4.0;

/// `X ∼ Gamma(α, β)` with scale `β`.
pub fn mc_stein_gamma_lemma(alpha: f64, beta: f64, h: LemmaFn, n_trials: u64, seed: u64) -> Result<LemmaCheck> {
    mc_stein_gamma_lemma_with(&Sequential, alpha, beta, h, &McOptions::new(n_trials, seed))
}

pub fn mc_stein_gamma_lemma_with<E: TrialExecutor + ?Sized>(
    exec: &E,
    alpha: f64,
    beta: f64,
    h: LemmaFn,
    opts: &McOptions,
) -> Result<LemmaCheck> {
    if !(alpha > h.alpha_floor()) || !alpha.is_finite() {
        return Err(invalid!(
            "alpha must exceed {} for h = {}, got {}",
            h.alpha_floor(),
            h.name(),
            alpha
        ));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid!("beta must be positive, got {}", beta));
    }
    opts.check(2)?;
    let dist = Gamma::new(alpha, beta).map_err(|e| invalid!("gamma distribution: {}", e))?;
    let ab = alpha * beta;
    let moments = monte_carlo(exec, opts.n_trials, opts.seed, 3, |r, out| {
        let x: f64 = draw_positive(&dist, r);
        let l = (x - ab) * h.h(x);
        let rr = beta * h.x_dh(x);
        out[0] = l;
        out[1] = rr;
        out[2] = l - rr;
    });
    let gap = moments[2].estimate();
    let gap_se = margin_in_se(gap.value, gap.se);
    Ok(LemmaCheck {
        h,
        alpha,
        beta,
        lhs: moments[0].estimate(),
        rhs: moments[1].estimate(),
        gap_se,
        holds: gap_se.abs() < LEMMA_TOLERANCE_SE,
        tolerance_se: LEMMA_TOLERANCE_SE,
        n_trials: opts.n_trials,
        seed: opts.seed,
    })
}

/// Gamma draws can underflow to zero for small shapes; redraw in that case.
fn draw_positive<R: Rng + ?Sized>(dist: &Gamma<f64>, r: &mut R) -> f64 {
    loop {
        let x = dist.sample(r);
        if x > 0.0 {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{classical_c_upper, ShrinkageConstant};

    fn within(e: Estimate, target: f64, k: f64) -> bool {
        (e.value - target).abs() < k * e.se
    }

    #[test]
    fn gaussian_analytic_oracles() {
        // E‖Z−θ‖² = p and JS risk p − (p−2)²/(p−2) = 2 at θ = 0
        let r = mc_risk_gaussian(8, &[0.0; 8], 1.0, NoiseSpec::none(), 100_000, 1).unwrap();
        assert!(within(r.baseline_risk(), 8.0, 3.0), "{:?}", r.baseline_risk());
        assert!(within(r.candidate_risk(), 2.0, 3.0), "{:?}", r.candidate_risk());
        assert_eq!(r.verdict, Verdict::Dominates);
        assert!(r.margin_se > 3.0);
    }

    #[test]
    fn gaussian_rejects_small_p_and_few_trials() {
        assert!(mc_risk_gaussian(2, &[0.0; 2], 1.0, NoiseSpec::none(), 10_000, 1).is_err());
        assert!(mc_risk_gaussian(3, &[0.0; 3], 1.0, NoiseSpec::none(), 100, 1).is_err());
        assert!(mc_risk_gaussian(3, &[0.0; 4], 1.0, NoiseSpec::none(), 10_000, 1).is_err());
    }

    #[test]
    fn gaussian_truncated_noise_dominates() {
        let r = mc_risk_gaussian(8, &[0.0; 8], 1.0, NoiseSpec::from_bound(0.1), 100_000, 2).unwrap();
        assert_eq!(r.verdict, Verdict::Dominates);
        assert!(r.marginal_margin_se > 3.0);
    }

    #[test]
    fn reports_are_reproducible() {
        let a = mc_risk_gaussian(5, &theta_from_norm(5, 1.0), 1.0, NoiseSpec::from_bound(0.3), 20_000, 9).unwrap();
        let b = mc_risk_gaussian(5, &theta_from_norm(5, 1.0), 1.0, NoiseSpec::from_bound(0.3), 20_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scaling_reduction() {
        let sigma = 2.5;
        let theta = theta_from_norm(6, 3.0);
        let noise = NoiseSpec::from_bound(0.3);
        let a = mc_risk_gaussian(6, &theta, sigma, noise.with_sigma(noise.sigma * sigma), 100_000, 3).unwrap();
        let scaled: Vec<f64> = theta.iter().map(|t| t / sigma).collect();
        let b = mc_risk_gaussian(6, &scaled, 1.0, noise, 100_000, 4).unwrap();
        let ratio = |r: &RiskReport| r.candidate_risk().value / r.baseline_risk().value;
        // delta-method se of each ratio
        let se = |r: &RiskReport| {
            let (c, b) = (r.candidate_risk(), r.baseline_risk());
            ratio(r) * libm::sqrt((c.se / c.value).powi(2) + (b.se / b.value).powi(2))
        };
        let gap = (ratio(&a) - ratio(&b)).abs();
        assert!(gap < 3.0 * libm::sqrt(se(&a).powi(2) + se(&b).powi(2)), "{gap}");
    }

    #[test]
    fn standard_error_scaling() {
        // p > 4 so that the James–Stein loss has a finite variance
        let small = mc_risk_gaussian(8, &[0.5; 8], 1.0, NoiseSpec::none(), 10_000, 5).unwrap();
        let large = mc_risk_gaussian(8, &[0.5; 8], 1.0, NoiseSpec::none(), 100_000, 5).unwrap();
        for name in ["js", "mle"] {
            let ratio = small.risk(name).unwrap().se / large.risk(name).unwrap().se;
            let rel = ratio / libm::sqrt(10.0);
            assert!((0.8..1.2).contains(&rel), "{name}: {ratio}");
        }
    }

    #[test]
    fn gamma_zero_c_is_exactly_equal() {
        for noise in [NoiseSpec::none(), NoiseSpec::from_bound(0.1)] {
            let spec = GammaTrialSpec::heteroscedastic(3, 10, 4.0, noise, 0.0);
            let r = mc_risk_gamma(&spec, 10_000, 1).unwrap();
            assert_eq!(r.candidate_risk(), r.baseline_risk());
            assert_eq!(r.difference.value, 0.0);
            assert_eq!(r.verdict, Verdict::Inconclusive);
        }
    }

    #[test]
    fn gamma_midpoint_dominates() {
        let alpha = 4.5;
        let c = ShrinkageConstant::gamma_midpoint(alpha, 3).c_tilde;
        assert_eq!(c, classical_c_upper(alpha, 3) / 2.0);
        let spec = GammaTrialSpec::equal(3, 10, NoiseSpec::none(), c);
        let r = mc_risk_gamma(&spec, 100_000, 2).unwrap();
        assert_eq!(r.verdict, Verdict::Dominates, "{r:?}");
        assert!(r.candidate_risk().value <= r.baseline_risk().value);
    }

    #[test]
    fn gamma_naive_risk_oracle() {
        // without noise σ̂² ∼ Gamma(α, β): E(X/(α+1) − β)² = β²/(α+1)
        let spec = GammaTrialSpec::heteroscedastic(3, 10, 4.0, NoiseSpec::none(), 0.0);
        let want: f64 = spec.betas().iter().map(|b| b * b / (spec.alpha() + 1.0)).sum();
        let r = mc_risk_gamma(&spec, 100_000, 3).unwrap();
        assert!(within(r.baseline_risk(), want, 4.0), "{:?} vs {want}", r.baseline_risk());
    }

    #[test]
    fn gamma_spec_validation() {
        let mut s = GammaTrialSpec::equal(3, 10, NoiseSpec::none(), 0.0);
        s.sigmas_x[1] = 0.0;
        assert!(s.validate().is_err());
        assert!(GammaTrialSpec::equal(1, 10, NoiseSpec::none(), 0.0).validate().is_err());
        assert!(GammaTrialSpec::equal(3, 1, NoiseSpec::none(), 0.0).validate().is_err());
    }

    #[test]
    fn key_inequality_at_origin() {
        for p in [3, 10] {
            let k = mc_key_inequality(p, &vec![0.0; p], NoiseSpec::none(), 200_000, 7).unwrap();
            assert!(within(k.estimate, 1.0, 3.0), "p={p}: {:?}", k.estimate);
            assert!(k.holds);
        }
    }

    #[test]
    fn key_inequality_identity_without_noise() {
        // Stein's identity gives E[Zᵀθ/ZᵀZ] = 1 − (p−2)·E[1/ZᵀZ], so the
        // expectation is 2 − (p−2)·E[1/ZᵀZ]; estimate that independently
        let p = 4;
        let theta = theta_from_norm(p, 2.0);
        let k = mc_key_inequality(p, &theta, NoiseSpec::none(), 100_000, 11).unwrap();
        let mut m = Moments::default();
        for t in 0..100_000u64 {
            let mut r = rng::stream(12, t);
            let mut zz = 0.0;
            for th in &theta {
                let e: f64 = StandardNormal.sample(&mut r);
                zz += (th + e) * (th + e);
            }
            m.push(2.0 - (p as f64 - 2.0) / zz);
        }
        let se = libm::sqrt(k.estimate.se.powi(2) + m.se().powi(2));
        assert!((k.estimate.value - m.mean()).abs() < 4.0 * se);
    }

    #[test]
    fn lemma_identity_and_square_oracles() {
        let (alpha, beta) = (2.0, 0.5);
        let c = mc_stein_gamma_lemma(alpha, beta, LemmaFn::Identity, 200_000, 1).unwrap();
        let want = alpha * beta * beta;
        assert!(within(c.lhs, want, 4.0), "{:?}", c.lhs);
        assert!(within(c.rhs, want, 4.0), "{:?}", c.rhs);
        assert!(c.holds);

        let c = mc_stein_gamma_lemma(alpha, beta, LemmaFn::Square, 200_000, 2).unwrap();
        let want = 2.0 * alpha * beta.powi(3) * (alpha + 1.0);
        assert!(within(c.lhs, want, 4.0), "{:?}", c.lhs);
        assert!(within(c.rhs, want, 4.0), "{:?}", c.rhs);
        assert!(c.holds);
    }

    #[test]
    fn lemma_log_at_unit_shape() {
        // rhs = β exactly for h = log
        let c = mc_stein_gamma_lemma(1.0, 1.0, LemmaFn::Log, 200_000, 3).unwrap();
        assert_eq!(c.rhs.value, 1.0);
        assert!(c.lhs.value.is_finite());
        assert!(c.holds, "{c:?}");
    }

    #[test]
    fn lemma_rejects_bad_parameters() {
        assert!(mc_stein_gamma_lemma(0.0, 1.0, LemmaFn::Log, 1000, 1).is_err());
        assert!(mc_stein_gamma_lemma(1.0, -1.0, LemmaFn::Log, 1000, 1).is_err());
        for h in LemmaFn::ALL {
            assert_eq!(LemmaFn::from_name(h.name()), Some(h));
        }
    }

    #[test]
    fn verdict_rules() {
        assert_eq!(verdict(Estimate { value: 1.0, se: 0.1 }, 3.0).0, Verdict::Dominates);
        assert_eq!(verdict(Estimate { value: -1.0, se: 0.1 }, 3.0).0, Verdict::Violated);
        assert_eq!(verdict(Estimate { value: 0.2, se: 0.1 }, 3.0).0, Verdict::Inconclusive);
        assert_eq!(verdict(Estimate { value: 0.0, se: 0.0 }, 3.0).0, Verdict::Inconclusive);
    }

    #[test]
    fn pairwise_blocks_cover_all_trials() {
        let m = monte_carlo(&Sequential, 5000, 1, 1, |_, out| out[0] = 1.0);
        assert_eq!(m[0].count(), 5000);
        assert_eq!(m[0].mean(), 1.0);
    }

    #[test]
    fn geomspace_endpoints() {
        let g = geomspace(1.0, 4.0, 3);
        assert_eq!(g[0], 1.0);
        assert!((g[1] - 2.0).abs() < 1e-12);
        assert!((g[2] - 4.0).abs() < 1e-12);
    }
}
