//! Desk-scale classifier harness for noise-robustness sweeps.
//!
//! A run trains one network on a clean split with SGD (optionally Nesterov)
//! and cross-entropy, keeps the checkpoint with the best clean validation
//! accuracy, then measures test accuracy while zero-mean noise is added to
//! the inputs (or to the first BN layer's output).

mod data;
mod harness;
mod layers;
mod model;

pub use data::{class_counts, make_synthetic_blobs, BlobsConfig, Dataset, Split};
pub use harness::{
    accuracy, aggregate_results, evaluate_under_noise, experiment_split, run_experiment, train_model, DatasetKind, EpochLog,
    ExperimentConfig, ExperimentResult, NoiseSite, ResultRow, RunSummary, Sgd, SummaryRow, TrainOutcome,
    DEFAULT_LR_GRID,
};
pub use layers::{argmax_rows, softmax_cross_entropy, Conv3, Dense};
pub use model::{Arch, BnSettings, Checkpoint, Network, Tape, CNN_FILTERS, MLP_HIDDEN};
