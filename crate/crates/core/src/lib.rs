//! Stein-shrinkage batch normalization.
//!
//! Channel statistics of a batch are a multi-parameter estimation problem, so
//! the per-channel means are shrunk with a James–Stein estimator and the
//! per-channel variances (Gamma distributed under Gaussian features) are
//! shrunk toward their geometric mean with a Gamma-scale estimator.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`tensor`]: a dense `(N, C, H, W)` tensor and channel reductions,
//! - [`estimators`]: every mean/variance shrinkage rule used by the layers,
//! - [`batchnorm`]: forward/backward passes for six normalization variants,
//! - [`noise`]: additive perturbation samplers (Lévy–Gaussian mixture,
//!   bounded uniform, Gaussian),
//! - [`risk`]: Monte Carlo risk estimation for the dominance results,
//! - [`train`]: a small classifier harness for noise-robustness sweeps.
//!
//! File formats, the parallel runners and the command line live in the
//! `steinbn-lab` crate.
#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod batchnorm;
pub mod error;
pub mod estimators;
pub mod noise;
pub mod risk;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ChannelStats, Tensor4};
