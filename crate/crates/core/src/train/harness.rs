use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::batchnorm::{BnVariant, CTilde};
use crate::error::{invalid, Result};
use crate::noise::{sample_noise_channels, NoiseFamily, NoiseSpec, DEFAULT_TRUNCATION_SIGMAS};
use crate::rng::{self, derive_seed};
use crate::stats::Moments;
use crate::tensor::{channel_moments, Tensor4};

use super::data::{make_synthetic_blobs, BlobsConfig, Dataset, Split};
use super::layers::{argmax_rows, softmax_cross_entropy};
use super::model::{Arch, BnSettings, Network};

/// Learning rates tried when the config leaves `learning_rate` unset.
pub const DEFAULT_LR_GRID: [f64; 3] = [1e-3, 3e-3, 1e-2];

const TAG_DATA: u64 = 1;
const TAG_SPLIT: u64 = 2;
const TAG_INIT: u64 = 3;
const TAG_SHUFFLE: u64 = 4;
const TAG_NOISE: u64 = 5;

/// Images evaluated per forward pass.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    SyntheticBlobs,
    CsvImages,
}

/// Where evaluation noise is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSite {
    #[default]
    Input,
    /// Output of the first BN layer.
    FeatureMap,
}

fn default_noise_family() -> NoiseFamily {
    NoiseFamily::LevyGaussMix
}

fn default_truncation() -> f64 {
    DEFAULT_TRUNCATION_SIGMAS
}

fn default_grid() -> Vec<f64> {
    DEFAULT_LR_GRID.to_vec()
}

/// One experiment: a model, a BN variant, a batch size and a list of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub model: Arch,
    pub bn_variant: BnVariant,
    pub batch_size: usize,
    /// `None` selects from `learning_rate_grid` on clean validation accuracy.
    pub learning_rate: Option<f64>,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Noise levels in percent of the per-channel clean standard deviation.
    pub noise_levels: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `None` uses the midpoint of the admissible interval.
    pub c_tilde: Option<f64>,
    pub lambda: f64,
    pub momentum_sgd: f64,
    pub nesterov: bool,
    #[serde(default)]
    pub blobs: BlobsConfig,
    /// Source file when `dataset` is `CsvImages`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<String>,
    /// Image shape `(C, H, W)` of a CSV dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_shape: Option<[usize; 3]>,
    #[serde(default = "default_noise_family")]
    pub noise_family: NoiseFamily,
    /// Truncation of mixture noise in units of its `σ`; `0` disables it.
    #[serde(default = "default_truncation")]
    pub truncation_sigmas: f64,
    #[serde(default)]
    pub noise_site: NoiseSite,
    #[serde(default = "default_grid")]
    pub learning_rate_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::SyntheticBlobs,
            model: Arch::Mlp2,
            bn_variant: BnVariant::Stein,
            batch_size: 32,
            learning_rate: None,
            max_epochs: 30,
            early_stop_patience: 5,
            noise_levels: vec![0.0, 5.0, 10.0, 20.0, 30.0],
            seeds: vec![0, 1, 2, 3, 4],
            c_tilde: None,
            lambda: 0.01,
            momentum_sgd: 0.9,
            nesterov: true,
            blobs: BlobsConfig::default(),
            data_path: None,
            image_shape: None,
            noise_family: default_noise_family(),
            truncation_sigmas: default_truncation(),
            noise_site: NoiseSite::Input,
            learning_rate_grid: default_grid(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_levels.iter().any(|l| !(0.0..=100.0).contains(l)) {
            return Err(invalid!("noise levels must lie in [0, 100]"));
        }
        if self.seeds.is_empty() {
            return Err(invalid!("at least one seed is required"));
        }
        if self.batch_size < 2 {
            return Err(invalid!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.early_stop_patience == 0 {
            return Err(invalid!("early_stop_patience must be at least 1"));
        }
        let lr_ok = |lr: f64| lr > 0.0 && lr.is_finite();
        match self.learning_rate {
            Some(lr) if !lr_ok(lr) => return Err(invalid!("learning_rate must be positive, got {}", lr)),
            None if self.learning_rate_grid.is_empty() || !self.learning_rate_grid.iter().all(|l| lr_ok(*l)) => {
                return Err(invalid!("learning_rate_grid must hold positive rates"))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.momentum_sgd) {
            return Err(invalid!("momentum_sgd must lie in [0, 1), got {}", self.momentum_sgd));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid!("lambda must be non-negative, got {}", self.lambda));
        }
        if let Some(c) = self.c_tilde {
            if !c.is_finite() {
                return Err(invalid!("c_tilde must be finite"));
            }
        }
        if !(self.truncation_sigmas >= 0.0) {
            return Err(invalid!("truncation_sigmas must be non-negative"));
        }
        if self.dataset == DatasetKind::CsvImages && self.data_path.is_none() {
            return Err(invalid!("CsvImages needs data_path"));
        }
        Ok(())
    }

    pub fn bn_settings(&self) -> BnSettings {
        let mut bn = BnSettings::new(self.bn_variant);
        bn.c_tilde = match self.c_tilde {
            Some(c) => CTilde::Fixed(c),
            None => CTilde::Midpoint,
        };
        bn.lambda = self.lambda;
        bn
    }

    /// Unit-scale noise of the configured family; scaled per channel later.
    pub fn noise_template(&self) -> NoiseSpec {
        match self.noise_family {
            NoiseFamily::LevyGaussMix => NoiseSpec::truncated_levy_gauss(1.0, self.truncation_sigmas),
            NoiseFamily::Gaussian => NoiseSpec::gaussian(1.0),
            NoiseFamily::BoundedUniform => NoiseSpec::bounded_uniform(1.0),
            NoiseFamily::None => NoiseSpec::none(),
        }
    }
}

/// SGD with classical or Nesterov momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, nesterov: bool) -> Self {
        Self { lr, momentum, nesterov, velocity: Vec::new() }
    }

    /// `v ← μv + g`, then `w ← w − lr·(g + μv)` (Nesterov) or `w ← w − lr·v`.
    pub fn step(&mut self, params: Vec<&mut Vec<f64>>, grads: &[Vec<f64>]) {
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        for ((w, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                let d = if self.nesterov { gi + self.momentum * *vi } else { *vi };
                *wi -= self.lr * d;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// Result of training one network.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The best-validation network.
    pub network: Network,
    pub learning_rate: f64,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub history: Vec<EpochLog>,
    /// Diagnostic when training produced non-finite values.
    pub diverged: Option<String>,
}

/// Percentage of correctly classified images.
pub fn accuracy(net: &mut Network, data: &Dataset) -> Result<f64> {
    accuracy_with(net, data, None)
}

fn accuracy_with(net: &mut Network, data: &Dataset, noise: Option<(&Tensor4, &Tensor4)>) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid!("cannot score an empty dataset"));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let mut x = data.batch(chunk)?;
        let mut feature = None;
        if let Some((input_noise, feature_noise)) = noise {
            let lo = chunk[0];
            x = x.add(&slice_batch(input_noise, lo, chunk.len())?)?;
            feature = Some(slice_batch(feature_noise, lo, chunk.len())?);
        }
        let logits = net.predict(&x, feature.as_ref())?;
        correct += argmax_rows(&logits)
            .iter()
            .zip(chunk)
            .filter(|(p, i)| **p == data.labels[**i])
            .count();
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

fn slice_batch(t: &Tensor4, lo: usize, n: usize) -> Result<Tensor4> {
    let [_, c, h, w] = t.dims();
    let d = c * h * w;
    Tensor4::new([n, c, h, w], t.data()[lo * d..(lo + n) * d].to_vec())
}

fn train_with_lr(config: &ExperimentConfig, split: &Split, seed: u64, lr: f64) -> Result<TrainOutcome> {
    let train = &split.train;
    let mut net = Network::new(
        config.model,
        train.shape,
        train.n_classes,
        config.bn_settings(),
        derive_seed(seed, TAG_INIT),
    )?;
    let mut opt = Sgd::new(lr, config.momentum_sgd, config.nesterov);
    let mut best = net.clone();
    let mut best_val = accuracy(&mut net, &split.val)?;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut diverged = None;
    let mut since_best = 0;
    let mut epochs_trained = 0;
    let shuffle_seed = derive_seed(seed, TAG_SHUFFLE);

    let bs = config.batch_size;
    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(shuffle_seed, epoch as u64));
        let mut batches: Vec<&[usize]> = order.chunks(bs).collect();
        // drop a short tail batch unless it is the only one
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < bs) {
            batches.pop();
        }
        let mut loss = Moments::default();
        for b in batches.into_iter().filter(|b| b.len() >= 2) {
            let step = (|| -> Result<f64> {
                let x = train.batch(b)?;
                let labels: Vec<usize> = b.iter().map(|i| train.labels[*i]).collect();
                let (logits, tape) = net.forward_train(&x)?;
                let (l, dl) = softmax_cross_entropy(&logits, &labels);
                if !l.is_finite() {
                    return Err(invalid!("loss is {}", l));
                }
                let grads = net.backward(&tape, &dl)?;
                if grads.iter().flatten().any(|g| !g.is_finite()) {
                    return Err(invalid!("non-finite gradient"));
                }
                opt.step(net.params_mut(), &grads);
                Ok(l)
            })();
            match step {
                Ok(l) => loss.push(l),
                Err(e) => {
                    diverged = Some(format!("epoch {} (lr {}): {}", epoch, lr, e));
                    break;
                }
            }
        }
        epochs_trained = epoch;
        if diverged.is_some() {
            break;
        }
        let val = accuracy(&mut net, &split.val)?;
        history.push(EpochLog { epoch, train_loss: loss.mean(), val_accuracy: val });
        if val > best_val {
            best_val = val;
            best = net.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        network: best,
        learning_rate: lr,
        epochs_trained,
        best_epoch,
        best_val_accuracy: best_val,
        history,
        diverged,
    })
}

/// Trains on `split.train`, selecting the learning rate on clean validation
/// accuracy when the config leaves it unset. Diverged runs only win the
/// selection when every rate diverged.
pub fn train_model(config: &ExperimentConfig, split: &Split, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let rates = match config.learning_rate {
        Some(lr) => vec![lr],
        None => config.learning_rate_grid.clone(),
    };
    let mut best: Option<TrainOutcome> = None;
    for lr in rates {
        let out = train_with_lr(config, split, seed, lr)?;
        let better = match &best {
            None => true,
            Some(b) => match (b.diverged.is_some(), out.diverged.is_some()) {
                (true, false) => true,
                (false, true) => false,
                _ => out.best_val_accuracy > b.best_val_accuracy,
            },
        };
        if better {
            best = Some(out);
        }
    }
    best.ok_or_else(|| invalid!("no learning rate to try"))
}

/// One measured metric of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub batch_size: usize,
    pub noise_pct: f64,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub epochs: usize,
}

fn noise_seed(seed: u64, level: f64) -> u64 {
    derive_seed(derive_seed(seed, TAG_NOISE), level.to_bits())
}

/// Test accuracy at each noise level. Level `k` adds noise with
/// `σ_c = (k/100)·std_c`, where `std_c` is the clean per-channel standard
/// deviation at the injection site. Level 0 is the clean accuracy.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_under_noise(
    net: &Network,
    test: &Dataset,
    noise_levels: &[f64],
    template: &NoiseSpec,
    site: NoiseSite,
    seed: u64,
    method: &str,
    batch_size: usize,
    epochs: usize,
) -> Result<Vec<ResultRow>> {
    let mut net = net.clone();
    template.validate()?;
    let all: Vec<usize> = (0..test.len()).collect();
    let clean = test.batch(&all)?;
    let features = net.first_features(&clean)?;
    let mut rows = Vec::with_capacity(noise_levels.len());
    for &level in noise_levels {
        if !(0.0..=100.0).contains(&level) {
            return Err(invalid!("noise level {} outside [0, 100]", level));
        }
        let value = if level == 0.0 || template.is_degenerate() {
            accuracy(&mut net, test)?
        } else {
            let target = match site {
                NoiseSite::Input => &clean,
                NoiseSite::FeatureMap => &features,
            };
            let stats = channel_moments(target)?;
            let specs: Vec<NoiseSpec> = stats
                .var
                .iter()
                .map(|v| {
                    let mut s = template.with_sigma(level / 100.0 * libm::sqrt(*v));
                    s.level_pct = level;
                    s
                })
                .collect();
            let noise = sample_noise_channels(&specs, target.dims(), noise_seed(seed, level))?;
            let zeros_in = Tensor4::zeros(clean.dims())?;
            let zeros_feat = Tensor4::zeros(features.dims())?;
            let pair = match site {
                NoiseSite::Input => (&noise, &zeros_feat),
                NoiseSite::FeatureMap => (&zeros_in, &noise),
            };
            accuracy_with(&mut net, test, Some(pair))?
        };
        rows.push(ResultRow {
            method: method.to_string(),
            batch_size,
            noise_pct: level,
            seed,
            metric: "accuracy".to_string(),
            value,
            epochs,
        });
    }
    Ok(rows)
}

/// Training summary of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub diverged: Option<String>,
    pub history: Vec<EpochLog>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub runs: Vec<RunSummary>,
    /// Best network of each seed, in seed order.
    pub networks: Vec<Network>,
}

/// Train/val/test split used by seed `seed`. Synthetic data is generated
/// per seed; `data` must be given for `CsvImages`.
pub fn experiment_split(config: &ExperimentConfig, data: Option<&Dataset>, seed: u64) -> Result<Split> {
    let generated;
    let dataset = match (config.dataset, data) {
        (_, Some(d)) => d,
        (DatasetKind::SyntheticBlobs, None) => {
            let b = &config.blobs;
            generated = make_synthetic_blobs(b.n_classes, b.n_per_class, b.channels, b.hw, b.sep, derive_seed(seed, TAG_DATA))?;
            &generated
        }
        (DatasetKind::CsvImages, None) => return Err(invalid!("CsvImages experiment without data")),
    };
    Ok(dataset.split(derive_seed(seed, TAG_SPLIT)))
}

/// Trains and evaluates every seed of `config`. Synthetic data is generated
/// per seed; `data` must be given for `CsvImages`.
pub fn run_experiment(config: &ExperimentConfig, data: Option<&Dataset>) -> Result<ExperimentResult> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut networks = Vec::new();
    for &seed in &config.seeds {
        let split = experiment_split(config, data, seed)?;
        let out = train_model(config, &split, seed)?;
        rows.extend(evaluate_under_noise(
            &out.network,
            &split.test,
            &config.noise_levels,
            &config.noise_template(),
            config.noise_site,
            seed,
            config.bn_variant.name(),
            config.batch_size,
            out.epochs_trained,
        )?);
        runs.push(RunSummary {
            seed,
            learning_rate: out.learning_rate,
            epochs_trained: out.epochs_trained,
            best_epoch: out.best_epoch,
            best_val_accuracy: out.best_val_accuracy,
            diverged: out.diverged,
            history: out.history,
        });
        networks.push(out.network);
    }
    Ok(ExperimentResult { rows, runs, networks })
}

/// Mean and sample standard deviation of one `(method, batch_size,
/// noise_pct, metric)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub batch_size: usize,
    pub noise_pct: f64,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// `None` when the cell holds fewer than two seeds.
    pub sd: Option<f64>,
    pub mean_epochs: f64,
    pub warning: Option<String>,
}

/// Groups rows by cell; cells with fewer than two values carry a warning.
pub fn aggregate_results(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(String, usize, u64, String), (Moments, Moments)> = BTreeMap::new();
    for r in rows {
        // non-negative floats order like their bit patterns
        let key = (r.method.clone(), r.batch_size, r.noise_pct.to_bits(), r.metric.clone());
        let cell = cells.entry(key).or_default();
        cell.0.push(r.value);
        cell.1.push(r.epochs as f64);
    }
    cells
        .into_iter()
        .map(|((method, batch_size, noise, metric), (m, e))| {
            let n = m.count() as usize;
            SummaryRow {
                method,
                batch_size,
                noise_pct: f64::from_bits(noise),
                metric,
                n,
                mean: m.mean(),
                sd: (n >= 2).then(|| m.sd()),
                mean_epochs: e.mean(),
                warning: (n < 2).then(|| format!("cell has {} seed(s), need at least 2", n)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, noise: f64, seed: u64, value: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            batch_size: 32,
            noise_pct: noise,
            seed,
            metric: "accuracy".into(),
            value,
            epochs: 3,
        }
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate_results(&[row("stein", 0.0, 0, 5.0), row("stein", 0.0, 1, 5.0)]);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].mean, s[0].sd), (5.0, Some(0.0)));

        let s = aggregate_results(&[row("a", 10.0, 0, 1.0), row("a", 10.0, 1, 3.0), row("a", 5.0, 0, 9.0)]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].noise_pct, 5.0);
        assert!(s[0].warning.is_some());
        assert_eq!(s[0].sd, None);
        assert_eq!(s[1].mean, 2.0);
        assert!((s[1].sd.unwrap() - libm::sqrt(2.0)).abs() < 1e-15);
    }

    #[test]
    fn sgd_nesterov_step() {
        let mut w = vec![1.0];
        let mut opt = Sgd::new(0.1, 0.9, true);
        opt.step(vec![&mut w], &[vec![2.0]]);
        // v = 2, update = 2 + 0.9·2 = 3.8
        assert!((w[0] - (1.0 - 0.38)).abs() < 1e-15);
        let mut w = vec![1.0];
        let mut opt = Sgd::new(0.1, 0.9, false);
        opt.step(vec![&mut w], &[vec![2.0]]);
        opt.step(vec![&mut w], &[vec![2.0]]);
        assert!((w[0] - (1.0 - 0.2 - 0.38)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());
        let bad = [
            ExperimentConfig { noise_levels: vec![120.0], ..ok.clone() },
            ExperimentConfig { seeds: vec![], ..ok.clone() },
            ExperimentConfig { batch_size: 1, ..ok.clone() },
            ExperimentConfig { dataset: DatasetKind::CsvImages, ..ok.clone() },
            ExperimentConfig { learning_rate: Some(-1.0), ..ok.clone() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    fn small_config(variant: BnVariant) -> ExperimentConfig {
        ExperimentConfig {
            bn_variant: variant,
            blobs: BlobsConfig { n_classes: 4, n_per_class: 60, channels: 4, hw: 2, sep: 10.0 },
            learning_rate: Some(1e-2),
            max_epochs: 20,
            seeds: vec![1],
            noise_levels: vec![0.0, 30.0],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let cfg = ExperimentConfig { max_epochs: 0, ..small_config(BnVariant::Standard) };
        let d = make_synthetic_blobs(4, 60, 4, 2, 10.0, 1).unwrap();
        let split = d.split(2);
        let out = train_model(&cfg, &split, 1).unwrap();
        assert_eq!(out.epochs_trained, 0);
        let init = Network::new(cfg.model, d.shape, 4, cfg.bn_settings(), derive_seed(1, TAG_INIT)).unwrap();
        assert_eq!(out.network, init);
    }

    #[test]
    fn strong_signal_is_learned_and_deterministic() {
        for variant in BnVariant::ALL {
            let cfg = small_config(variant);
            let a = run_experiment(&cfg, None).unwrap();
            let b = run_experiment(&cfg, None).unwrap();
            assert_eq!(a.rows, b.rows);
            assert_eq!(a.runs, b.runs);
            assert!(a.rows[0].value >= 95.0, "{variant:?}: {:?}", a.rows);
            assert!(a.runs[0].epochs_trained <= 20);
        }
    }

    #[test]
    fn level_zero_equals_clean_accuracy() {
        let cfg = small_config(BnVariant::Stein);
        let d = make_synthetic_blobs(4, 60, 4, 2, 3.0, 4).unwrap();
        let split = d.split(5);
        let out = train_model(&cfg, &split, 1).unwrap();
        let rows = evaluate_under_noise(
            &out.network,
            &split.test,
            &[0.0],
            &cfg.noise_template(),
            NoiseSite::FeatureMap,
            1,
            "stein",
            32,
            out.epochs_trained,
        )
        .unwrap();
        let mut net = out.network.clone();
        assert_eq!(rows[0].value, accuracy(&mut net, &split.test).unwrap());
    }

    #[test]
    fn lasso_and_ridge_with_zero_lambda_track_standard() {
        let base = ExperimentConfig { lambda: 0.0, c_tilde: Some(0.0), ..small_config(BnVariant::Standard) };
        let std_run = run_experiment(&base, None).unwrap();
        for v in [BnVariant::Lasso, BnVariant::Ridge] {
            let run = run_experiment(&ExperimentConfig { bn_variant: v, ..base.clone() }, None).unwrap();
            assert_eq!(run.runs, std_run.runs);
            let values = |r: &ExperimentResult| r.rows.iter().map(|x| x.value).collect::<Vec<_>>();
            assert_eq!(values(&run), values(&std_run));
        }
    }

    #[test]
    fn accuracies_stay_in_range() {
        let mut cfg = small_config(BnVariant::Khoshsirat);
        cfg.blobs.sep = 0.0;
        cfg.max_epochs = 3;
        cfg.noise_site = NoiseSite::FeatureMap;
        let r = run_experiment(&cfg, None).unwrap();
        assert!(r.rows.iter().all(|x| (0.0..=100.0).contains(&x.value)));
    }
}
