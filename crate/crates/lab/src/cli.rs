//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on invalid input or any other error, 2 when a
//! `risk` check finds the claimed inequality significantly violated.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use steinbn::batchnorm::BnVariant;
use steinbn::estimators::ShrinkageConstant;
use steinbn::noise::{sample_vec, NoiseSpec};
use steinbn::risk::{
    mc_key_inequality_with, mc_risk_gamma_with, mc_risk_gaussian_with, mc_stein_gamma_lemma_with, theta_from_norm,
    GammaTrialSpec, GaussianTrialSpec, LemmaFn, McOptions, Verdict,
};
use steinbn::train::{
    aggregate_results, evaluate_under_noise, experiment_split, run_experiment, Checkpoint, Dataset, DatasetKind,
    ExperimentConfig, Network, ResultRow, RunSummary,
};

use crate::error::{LabError, Result};
use crate::exec::{with_threads, Rayon};
use crate::formats;
use crate::io::{read, read_string, write_atomic, write_json_atomic, write_sidecar, Artifact, Provenance};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_VIOLATED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "steinbn", version, about = "Stein-shrinkage batch normalization laboratory", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo risk and identity checks.
    Risk {
        #[command(subcommand)]
        experiment: RiskCommand,
    },
    /// Perturbation samplers.
    Noise {
        #[command(subcommand)]
        action: NoiseCommand,
    },
    /// Train a (variant, batch size, seed) grid and evaluate it under noise.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint under noise.
    Eval(EvalArgs),
    /// Aggregate result CSVs into mean/sd tables.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
enum RiskCommand {
    /// James–Stein against the MLE for a perturbed Gaussian mean.
    Gaussian(GaussianArgs),
    /// Gamma-scale shrinkage against the naive scale estimate.
    Gamma(GammaArgs),
    /// E[(2Zᵀθ + p − 2)/ZᵀZ] < 2.
    Inequality(InequalityArgs),
    /// Stein's identity for the Gamma distribution.
    Lemma(LemmaArgs),
}

#[derive(Debug, Subcommand)]
enum NoiseCommand {
    /// Draw samples to a CSV file.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FamilyArg {
    #[value(alias = "levy-gauss-mix")]
    LevyGauss,
    #[value(alias = "bounded-uniform")]
    Uniform,
    Gaussian,
    None,
}

impl FamilyArg {
    /// Perturbation bounded by `eps`: mixture and Gaussian use `σ = ε/3`
    /// (the mixture is truncated at `ε`), uniform draws from `[−ε, ε]`.
    fn bounded(self, eps: f64) -> NoiseSpec {
        match self {
            _ if eps == 0.0 => NoiseSpec::none(),
            FamilyArg::LevyGauss => NoiseSpec::from_bound(eps),
            FamilyArg::Uniform => NoiseSpec::bounded_uniform(eps),
            FamilyArg::Gaussian => NoiseSpec::gaussian(eps / steinbn::noise::DEFAULT_TRUNCATION_SIGMAS),
            FamilyArg::None => NoiseSpec::none(),
        }
    }

    /// Sampler spec: `eps = 0` leaves the mixture untruncated.
    fn sampler(self, sigma: f64, eps: f64) -> NoiseSpec {
        match self {
            FamilyArg::LevyGauss => NoiseSpec::truncated_levy_gauss(sigma, eps),
            FamilyArg::Uniform => NoiseSpec::bounded_uniform(eps),
            FamilyArg::Gaussian => NoiseSpec::gaussian(sigma),
            FamilyArg::None => NoiseSpec::none(),
        }
    }
}

#[derive(Debug, Args)]
struct McArgs {
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Verdict threshold in standard errors.
    #[arg(long, default_value_t = steinbn::risk::DEFAULT_K)]
    k: f64,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

impl McArgs {
    fn options(&self) -> McOptions {
        McOptions::new(self.trials, self.seed).with_k(self.k)
    }
}

#[derive(Debug, Args)]
struct GaussianArgs {
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0.0)]
    theta_norm: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Perturbation bound; 0 disables the perturbation.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = FamilyArg::LevyGauss)]
    family: FamilyArg,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Debug, Args)]
struct GammaArgs {
    #[arg(long)]
    p: usize,
    /// Samples per coordinate.
    #[arg(long)]
    n: usize,
    /// Shrinkage constant: a number or `midpoint` of the classical interval.
    #[arg(long, default_value = "midpoint")]
    c: String,
    /// Ratio of the largest to the smallest σ_x; 1 is homoscedastic.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = FamilyArg::LevyGauss)]
    family: FamilyArg,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Debug, Args)]
struct InequalityArgs {
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0.0)]
    theta_norm: f64,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = FamilyArg::LevyGauss)]
    family: FamilyArg,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Debug, Args)]
struct LemmaArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    /// One of identity, square, log, sqrt, cbrt, fifth_root.
    #[arg(long)]
    h: String,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Truncation bound; 0 leaves the mixture untruncated.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON file with `ExperimentConfig` fields.
    #[arg(long)]
    config: PathBuf,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated BN variants overriding `bn_variant`.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Comma-separated batch sizes overriding `batch_size`.
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Vec<usize>,
    /// Writes one checkpoint per run into this directory.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Dataset CSV for `CsvImages`; overrides `data_path`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// The config the checkpoint was trained with.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Data and noise seed; defaults to the seed stored in the checkpoint.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Result CSVs to merge.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Aggregate CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional gnuplot data file.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_INVALID
                }
            };
        }
    };
    match dispatch(cli.command, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn dispatch(command: Command, argv: &[String]) -> Result<i32> {
    match command {
        Command::Risk { experiment } => run_risk(experiment, argv),
        Command::Noise { action: NoiseCommand::Sample(a) } => run_sample(a, argv),
        Command::Train(a) => run_train(a, argv),
        Command::Eval(a) => run_eval(a, argv),
        Command::Report(a) => run_report(a, argv),
    }
}

fn write_artifact<T: Serialize>(path: &Path, argv: &[String], body: &T) -> Result<()> {
    write_json_atomic(path, &Artifact { provenance: Provenance::new(argv), body })
}

fn verdict_code(v: Verdict) -> i32 {
    if v == Verdict::Violated {
        EXIT_VIOLATED
    } else {
        EXIT_OK
    }
}

fn run_risk(cmd: RiskCommand, argv: &[String]) -> Result<i32> {
    match cmd {
        RiskCommand::Gaussian(a) => {
            let spec = GaussianTrialSpec {
                theta: theta_from_norm(a.p, a.theta_norm),
                sigma: a.sigma,
                noise: a.family.bounded(a.eps),
            };
            let mut report = with_threads(a.mc.threads, || mc_risk_gaussian_with(&Rayon, &spec, &a.mc.options()))?;
            report.config.epsilon = a.eps;
            write_artifact(&a.mc.out, argv, &report)?;
            Ok(verdict_code(report.verdict))
        }
        RiskCommand::Gamma(a) => {
            let alpha = (a.n as f64 - 1.0) / 2.0;
            let c = match a.c.as_str() {
                "midpoint" => ShrinkageConstant::gamma_midpoint(alpha, a.p).c_tilde,
                s => s.parse().map_err(|_| LabError::Usage(format!("--c must be a number or 'midpoint', got {s:?}")))?,
            };
            let noise = a.family.bounded(a.eps);
            let spec = GammaTrialSpec::heteroscedastic(a.p, a.n, a.ratio, noise, c);
            let mut report = with_threads(a.mc.threads, || mc_risk_gamma_with(&Rayon, &spec, &a.mc.options()))?;
            report.config.epsilon = a.eps;
            write_artifact(&a.mc.out, argv, &report)?;
            Ok(verdict_code(report.verdict))
        }
        RiskCommand::Inequality(a) => {
            let spec = GaussianTrialSpec {
                theta: theta_from_norm(a.p, a.theta_norm),
                sigma: 1.0,
                noise: a.family.bounded(a.eps),
            };
            let mut r = with_threads(a.mc.threads, || mc_key_inequality_with(&Rayon, &spec, &a.mc.options()))?;
            r.config.epsilon = a.eps;
            write_artifact(&a.mc.out, argv, &r)?;
            Ok(if r.margin_se < -r.k { EXIT_VIOLATED } else { EXIT_OK })
        }
        RiskCommand::Lemma(a) => {
            let h = LemmaFn::from_name(&a.h).ok_or_else(|| {
                let names: Vec<_> = LemmaFn::ALL.iter().map(|f| f.name()).collect();
                LabError::Usage(format!("unknown --h {:?}; expected one of {}", a.h, names.join(", ")))
            })?;
            let opts = a.mc.options();
            let r = with_threads(a.mc.threads, || mc_stein_gamma_lemma_with(&Rayon, a.alpha, a.beta, h, &opts))?;
            write_artifact(&a.mc.out, argv, &r)?;
            Ok(if r.holds { EXIT_OK } else { EXIT_VIOLATED })
        }
    }
}

fn run_sample(a: SampleArgs, argv: &[String]) -> Result<i32> {
    let spec = a.family.sampler(a.sigma, a.eps);
    let values = sample_vec(&spec, a.n, a.seed)?;
    write_atomic(&a.out, formats::samples_csv(&values).as_bytes())?;
    #[derive(Serialize)]
    struct SampleConfig {
        noise: NoiseSpec,
        n: usize,
        seed: u64,
    }
    write_sidecar(&a.out, argv, &SampleConfig { noise: spec, n: a.n, seed: a.seed })?;
    Ok(EXIT_OK)
}

/// Reads and validates a config; `data` replaces its `data_path`.
fn load_config(path: &Path, data: Option<&Path>) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = serde_json::from_str(&read_string(path)?)?;
    if let Some(d) = data {
        config.data_path = Some(d.display().to_string());
    }
    config.validate()?;
    Ok(config)
}

fn load_data(config: &ExperimentConfig) -> Result<Option<Dataset>> {
    if config.dataset != DatasetKind::CsvImages {
        return Ok(None);
    }
    let path = config
        .data_path
        .as_ref()
        .ok_or_else(|| LabError::Usage("CsvImages needs --data or data_path".into()))?;
    let path = Path::new(path);
    let shape = config
        .image_shape
        .ok_or_else(|| LabError::Usage("CsvImages needs image_shape in the config".into()))?;
    Ok(Some(formats::parse_dataset_csv(&read_string(path)?, shape)?))
}

fn checkpoint_name(config: &ExperimentConfig, seed: u64) -> String {
    format!("{}_bs{}_seed{}.sbn", config.bn_variant.name(), config.batch_size, seed)
}

fn with_run_meta(net: &Network, epochs: usize, seed: u64) -> Checkpoint {
    let mut ck = net.checkpoint();
    ck.arrays.push(("run.epochs".into(), vec![epochs as f64]));
    ck.arrays.push(("run.seed".into(), vec![seed as f64]));
    ck
}

fn run_train(a: TrainArgs, argv: &[String]) -> Result<i32> {
    let base = load_config(&a.config, a.data.as_deref())?;
    let data = load_data(&base)?;
    let variants = if a.variants.is_empty() {
        vec![base.bn_variant]
    } else {
        a.variants
            .iter()
            .map(|v| BnVariant::from_name(v.trim()).ok_or_else(|| LabError::Usage(format!("unknown BN variant {v:?}"))))
            .collect::<Result<Vec<_>>>()?
    };
    let batch_sizes = if a.batch_sizes.is_empty() { vec![base.batch_size] } else { a.batch_sizes.clone() };
    let mut configs = Vec::new();
    for &v in &variants {
        for &bs in &batch_sizes {
            let mut c = base.clone();
            c.bn_variant = v;
            c.batch_size = bs;
            c.validate()?;
            configs.push(c);
        }
    }
    if let Some(dir) = &a.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|i| configs[i].seeds.iter().map(move |&s| (i, s))).collect();
    let outcomes = with_threads(a.threads, || {
        jobs.par_iter()
            .map(|&(i, seed)| -> Result<(Vec<ResultRow>, RunSummary)> {
                let mut single = configs[i].clone();
                single.seeds = vec![seed];
                let mut res = run_experiment(&single, data.as_ref())?;
                let run = res.runs.remove(0);
                if let Some(dir) = &a.checkpoint_dir {
                    let ck = with_run_meta(&res.networks[0], run.epochs_trained, seed);
                    write_atomic(&dir.join(checkpoint_name(&single, seed)), &formats::encode_checkpoint(&ck))?;
                }
                Ok((res.rows, run))
            })
            .collect::<Vec<_>>()
    });
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for ((i, _), out) in jobs.iter().zip(outcomes) {
        let (r, run) = out?;
        rows.extend(r);
        runs.push(TrainedRun { method: configs[*i].bn_variant.name(), batch_size: configs[*i].batch_size, run });
    }
    write_atomic(&a.out, formats::results_csv(&rows)?.as_bytes())?;
    #[derive(Serialize)]
    struct TrainMeta<'a> {
        configs: &'a [ExperimentConfig],
        runs: &'a [TrainedRun],
    }
    write_sidecar(&a.out, argv, &TrainMeta { configs: &configs, runs: &runs })?;
    for r in runs.iter().filter(|r| r.run.diverged.is_some()) {
        eprintln!(
            "warning: {} bs={} seed={} diverged: {}",
            r.method,
            r.batch_size,
            r.run.seed,
            r.run.diverged.as_deref().unwrap_or("")
        );
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct TrainedRun {
    method: &'static str,
    batch_size: usize,
    #[serde(flatten)]
    run: RunSummary,
}

fn run_eval(a: EvalArgs, argv: &[String]) -> Result<i32> {
    let config = load_config(&a.config, a.data.as_deref())?;
    let data = load_data(&config)?;
    let ck = formats::decode_checkpoint(&read(&a.checkpoint)?)?;
    let net = Network::from_checkpoint(&ck)?;
    let stored = |name: &str| ck.get(name).and_then(|v| v.first().copied());
    let seed = match (a.seed, stored("run.seed")) {
        (Some(s), _) => s,
        (None, Some(s)) => s as u64,
        (None, None) => return Err(LabError::Usage("checkpoint has no run.seed; pass --seed".into())),
    };
    let epochs = stored("run.epochs").map_or(0, |e| e as usize);
    let split = experiment_split(&config, data.as_ref(), seed)?;
    if split.test.shape != net.input || split.test.n_classes != net.n_classes {
        return Err(LabError::Usage(format!(
            "checkpoint expects {:?} inputs and {} classes, data has {:?} and {}",
            net.input, net.n_classes, split.test.shape, split.test.n_classes
        )));
    }
    let rows = evaluate_under_noise(
        &net,
        &split.test,
        &config.noise_levels,
        &config.noise_template(),
        config.noise_site,
        seed,
        net.bn.variant.name(),
        config.batch_size,
        epochs,
    )?;
    write_atomic(&a.out, formats::results_csv(&rows)?.as_bytes())?;
    #[derive(Serialize)]
    struct EvalMeta<'a> {
        config: &'a ExperimentConfig,
        checkpoint: String,
        seed: u64,
    }
    let meta = EvalMeta { config: &config, checkpoint: a.checkpoint.display().to_string(), seed };
    write_sidecar(&a.out, argv, &meta)?;
    Ok(EXIT_OK)
}

fn run_report(a: ReportArgs, argv: &[String]) -> Result<i32> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        rows.extend(formats::parse_results_csv(&read_string(p)?)?);
    }
    let summary = aggregate_results(&rows);
    for s in summary.iter().filter(|s| s.warning.is_some()) {
        eprintln!(
            "warning: {} bs={} noise={} {}: {}",
            s.method,
            s.batch_size,
            s.noise_pct,
            s.metric,
            s.warning.as_deref().unwrap_or("")
        );
    }
    write_atomic(&a.out, formats::summary_csv(&summary)?.as_bytes())?;
    if let Some(g) = &a.gnuplot {
        write_atomic(g, formats::gnuplot_data(&summary).as_bytes())?;
    }
    let inputs: Vec<String> = a.inputs.iter().map(|p| p.display().to_string()).collect();
    #[derive(Serialize)]
    struct ReportMeta {
        inputs: Vec<String>,
        rows: usize,
        cells: usize,
    }
    write_sidecar(&a.out, argv, &ReportMeta { inputs, rows: rows.len(), cells: summary.len() })?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn family_bounds() {
        assert_eq!(FamilyArg::LevyGauss.bounded(0.3), NoiseSpec::from_bound(0.3));
        assert_eq!(FamilyArg::Uniform.bounded(0.0), NoiseSpec::none());
        assert!((FamilyArg::Gaussian.bounded(0.3).sigma - 0.1).abs() < 1e-15);
        assert_eq!(FamilyArg::LevyGauss.sampler(1.0, 0.0), NoiseSpec::levy_gauss(1.0));
    }
}
