//! The two classifier architectures and their checkpoints.
//!
//! - `MLP2`: flatten → dense(hidden) → BN over hidden units (`H = W = 1`) →
//!   ReLU → dense(classes).
//! - `TinyCNN`: conv3×3 → BN2d → ReLU → conv3×3 → BN2d → ReLU → global
//!   average pool → dense(classes).

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::batchnorm::{BnForwardCache, BnLayer, BnVariant, CTilde, Mode};
use crate::error::{invalid, Result};
use crate::estimators::{Dispersion, MeanShrinkage};
use crate::rng;
use crate::tensor::Tensor4;

use super::layers::{avg_pool, avg_pool_backward, relu, relu_backward, Conv3, Dense};

pub const MLP_HIDDEN: usize = 128;
pub const CNN_FILTERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "MLP2", alias = "mlp2")]
    Mlp2,
    #[serde(rename = "TinyCNN", alias = "tiny_cnn", alias = "tinycnn")]
    TinyCnn,
}

impl Arch {
    pub fn name(&self) -> &'static str {
        match self {
            Arch::Mlp2 => "MLP2",
            Arch::TinyCnn => "TinyCNN",
        }
    }
}

/// Batch-norm settings shared by every BN layer of a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnSettings {
    pub variant: BnVariant,
    pub c_tilde: CTilde,
    pub lambda: f64,
    pub momentum: f64,
    pub eps: f64,
    pub mean_shrinkage: MeanShrinkage,
}

impl BnSettings {
    pub fn new(variant: BnVariant) -> Self {
        let l = BnLayer::new(variant, 1);
        Self {
            variant,
            c_tilde: l.c_tilde,
            lambda: l.lambda,
            momentum: l.momentum,
            eps: l.eps,
            mean_shrinkage: l.mean_shrinkage,
        }
    }

    fn layer(&self, channels: usize) -> BnLayer {
        let mut l = BnLayer::new(self.variant, channels)
            .with_c_tilde(self.c_tilde)
            .with_lambda(self.lambda)
            .with_momentum(self.momentum)
            .with_eps(self.eps);
        l.mean_shrinkage = self.mean_shrinkage;
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
enum Body {
    Mlp { fc1: Dense, bn1: BnLayer, fc2: Dense },
    Cnn { conv1: Conv3, bn1: BnLayer, conv2: Conv3, bn2: BnLayer, head: Dense },
}

/// A classifier over `(C, H, W)` images.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Arch,
    pub input: [usize; 3],
    pub n_classes: usize,
    pub bn: BnSettings,
    body: Body,
}

/// Activations kept by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    x: Tensor4,
    a1: Tensor4,
    c1: BnForwardCache,
    b1: Tensor4,
    r1: Tensor4,
    second: Option<(Tensor4, BnForwardCache, Tensor4, Tensor4)>,
}

impl Network {
    pub fn new(arch: Arch, input: [usize; 3], n_classes: usize, bn: BnSettings, seed: u64) -> Result<Self> {
        if input.contains(&0) || n_classes < 2 {
            return Err(invalid!("bad network shape {:?} with {} classes", input, n_classes));
        }
        let mut r = rng::stream(seed, 0);
        let [c, h, w] = input;
        let body = match arch {
            Arch::Mlp2 => Body::Mlp {
                fc1: Dense::new(c * h * w, MLP_HIDDEN, &mut r),
                bn1: bn.layer(MLP_HIDDEN),
                fc2: Dense::new(MLP_HIDDEN, n_classes, &mut r),
            },
            Arch::TinyCnn => Body::Cnn {
                conv1: Conv3::new(c, CNN_FILTERS, &mut r),
                bn1: bn.layer(CNN_FILTERS),
                conv2: Conv3::new(CNN_FILTERS, CNN_FILTERS, &mut r),
                bn2: bn.layer(CNN_FILTERS),
                head: Dense::new(CNN_FILTERS, n_classes, &mut r),
            },
        };
        Ok(Self { arch, input, n_classes, bn, body })
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let [_, c, h, w] = x.dims();
        if [c, h, w] != self.input {
            return Err(invalid!("input images are {:?}, network expects {:?}", [c, h, w], self.input));
        }
        Ok(())
    }

    fn set_mode(&mut self, mode: Mode) {
        match &mut self.body {
            Body::Mlp { bn1, .. } => bn1.mode = mode,
            Body::Cnn { bn1, bn2, .. } => {
                bn1.mode = mode;
                bn2.mode = mode;
            }
        }
    }

    /// Training-mode forward pass. Updates the running statistics.
    pub fn forward_train(&mut self, x: &Tensor4) -> Result<(Tensor4, Tape)> {
        self.check_input(x)?;
        self.set_mode(Mode::Train);
        self.run(x, None, true)
    }

    /// Evaluation-mode logits. `feature_noise`, when given, is added to the
    /// output of the first BN layer.
    pub fn predict(&mut self, x: &Tensor4, feature_noise: Option<&Tensor4>) -> Result<Tensor4> {
        self.check_input(x)?;
        self.set_mode(Mode::Eval);
        Ok(self.run(x, feature_noise, false)?.0)
    }

    /// Evaluation-mode output of the first BN layer.
    pub fn first_features(&mut self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        self.set_mode(Mode::Eval);
        let n = x.batch();
        match &mut self.body {
            Body::Mlp { fc1, bn1, .. } => {
                let flat = x.clone().reshape([n, fc1.n_in, 1, 1])?;
                Ok(bn1.forward(&fc1.forward(&flat))?.0)
            }
            Body::Cnn { conv1, bn1, .. } => Ok(bn1.forward(&conv1.forward(x))?.0),
        }
    }

    fn run(&mut self, x: &Tensor4, noise: Option<&Tensor4>, keep: bool) -> Result<(Tensor4, Tape)> {
        let n = x.batch();
        let add_noise = |b: Tensor4| -> Result<Tensor4> {
            match noise {
                Some(e) => b.add(e),
                None => Ok(b),
            }
        };
        match &mut self.body {
            Body::Mlp { fc1, bn1, fc2 } => {
                let flat = x.clone().reshape([n, fc1.n_in, 1, 1])?;
                let a1 = fc1.forward(&flat);
                let (b1, c1) = bn1.forward(&a1)?;
                let b1 = add_noise(b1)?;
                let r1 = relu(&b1);
                let logits = fc2.forward(&r1);
                let tape = Tape { x: flat, a1, c1, b1, r1, second: None };
                Ok((logits, tape))
            }
            Body::Cnn { conv1, bn1, conv2, bn2, head } => {
                let a1 = conv1.forward(x);
                let (b1, c1) = bn1.forward(&a1)?;
                let b1 = add_noise(b1)?;
                let r1 = relu(&b1);
                let a2 = conv2.forward(&r1);
                let (b2, c2) = bn2.forward(&a2)?;
                let r2 = relu(&b2);
                let pooled = avg_pool(&r2);
                let logits = head.forward(&pooled.clone().reshape([n, head.n_in, 1, 1])?);
                let second = if keep { Some((a2, c2, b2, pooled)) } else { None };
                Ok((logits, Tape { x: x.clone(), a1, c1, b1, r1, second }))
            }
        }
    }

    /// Gradients of every parameter, in [`Network::params_mut`] order.
    pub fn backward(&self, tape: &Tape, dlogits: &Tensor4) -> Result<Vec<Vec<f64>>> {
        match &self.body {
            Body::Mlp { fc1, bn1, fc2 } => {
                let (dr1, dw2, db2) = fc2.backward(&tape.r1, dlogits);
                let db1 = relu_backward(&tape.b1, &dr1);
                let g1 = bn1.backward(&tape.c1, &db1)?;
                let (_, dw1, dbias1) = fc1.backward(&tape.x, &g1.input);
                Ok(vec![dw1, dbias1, g1.gamma, g1.beta, dw2, db2])
            }
            Body::Cnn { conv1, bn1, conv2, bn2, head } => {
                let (a2, c2, b2, pooled) = tape
                    .second
                    .as_ref()
                    .ok_or_else(|| invalid!("tape was recorded without activations"))?;
                let (dp, dwh, dbh) = head.backward(pooled, dlogits);
                let dr2 = avg_pool_backward(b2.dims(), &dp.reshape(pooled.dims())?);
                let db2 = relu_backward(b2, &dr2);
                let g2 = bn2.backward(c2, &db2)?;
                let (dr1, dwc2, dbc2) = conv2.backward(&tape.r1, &g2.input);
                debug_assert_eq!(a2.dims(), g2.input.dims());
                let db1 = relu_backward(&tape.b1, &dr1);
                let g1 = bn1.backward(&tape.c1, &db1)?;
                let (_, dwc1, dbc1) = conv1.backward(&tape.x, &g1.input);
                debug_assert_eq!(tape.a1.dims(), g1.input.dims());
                Ok(vec![dwc1, dbc1, g1.gamma, g1.beta, dwc2, dbc2, g2.gamma, g2.beta, dwh, dbh])
            }
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match &mut self.body {
            Body::Mlp { fc1, bn1, fc2 } => vec![
                &mut fc1.w,
                &mut fc1.b,
                &mut bn1.gamma,
                &mut bn1.beta,
                &mut fc2.w,
                &mut fc2.b,
            ],
            Body::Cnn { conv1, bn1, conv2, bn2, head } => vec![
                &mut conv1.w,
                &mut conv1.b,
                &mut bn1.gamma,
                &mut bn1.beta,
                &mut conv2.w,
                &mut conv2.b,
                &mut bn2.gamma,
                &mut bn2.beta,
                &mut head.w,
                &mut head.b,
            ],
        }
    }

    fn state_names(&self) -> &'static [&'static str] {
        match self.body {
            Body::Mlp { .. } => &[
                "fc1.w", "fc1.b",
                "bn1.gamma", "bn1.beta", "bn1.running_mean", "bn1.running_var",
                "fc2.w", "fc2.b",
            ],
            Body::Cnn { .. } => &[
                "conv1.w", "conv1.b",
                "bn1.gamma", "bn1.beta", "bn1.running_mean", "bn1.running_var",
                "conv2.w", "conv2.b",
                "bn2.gamma", "bn2.beta", "bn2.running_mean", "bn2.running_var",
                "head.w", "head.b",
            ],
        }
    }

    /// Parameters and BN running statistics, in [`Network::state_names`] order.
    fn state_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match &mut self.body {
            Body::Mlp { fc1, bn1, fc2 } => vec![
                &mut fc1.w, &mut fc1.b,
                &mut bn1.gamma, &mut bn1.beta, &mut bn1.running_mean, &mut bn1.running_var,
                &mut fc2.w, &mut fc2.b,
            ],
            Body::Cnn { conv1, bn1, conv2, bn2, head } => vec![
                &mut conv1.w, &mut conv1.b,
                &mut bn1.gamma, &mut bn1.beta, &mut bn1.running_mean, &mut bn1.running_var,
                &mut conv2.w, &mut conv2.b,
                &mut bn2.gamma, &mut bn2.beta, &mut bn2.running_mean, &mut bn2.running_var,
                &mut head.w, &mut head.b,
            ],
        }
    }

    /// Parameters and BN state as named arrays.
    pub fn named_arrays(&self) -> Vec<(String, Vec<f64>)> {
        let names = self.state_names();
        let mut copy = self.clone();
        names
            .iter()
            .zip(copy.state_mut())
            .map(|(n, v)| (n.to_string(), core::mem::take(v)))
            .collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let b = &self.bn;
        let c_tilde = match b.c_tilde {
            CTilde::Midpoint => f64::NAN,
            CTilde::Fixed(c) => c,
        };
        let variant = BnVariant::ALL.iter().position(|v| *v == b.variant).unwrap_or(0) as f64;
        let mut arrays = vec![
            ("meta.arch".to_string(), vec![if self.arch == Arch::Mlp2 { 0.0 } else { 1.0 }]),
            ("meta.input".to_string(), self.input.iter().map(|d| *d as f64).collect()),
            ("meta.classes".to_string(), vec![self.n_classes as f64]),
            (
                "meta.bn".to_string(),
                vec![
                    variant,
                    b.momentum,
                    b.eps,
                    c_tilde,
                    b.lambda,
                    b.mean_shrinkage.positive_part as u8 as f64,
                    (b.mean_shrinkage.dispersion == Dispersion::Sample) as u8 as f64,
                ],
            ),
        ];
        arrays.extend(self.named_arrays());
        Checkpoint { arrays }
    }

    /// Rebuilds a network from [`Network::checkpoint`] output.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = |name: &str, len: usize| -> Result<&[f64]> {
            let v = ck.get(name).ok_or_else(|| invalid!("checkpoint lacks {}", name))?;
            if v.len() != len {
                return Err(invalid!("checkpoint entry {} has length {}", name, v.len()));
            }
            Ok(v)
        };
        let arch = if meta("meta.arch", 1)?[0] == 0.0 { Arch::Mlp2 } else { Arch::TinyCnn };
        let inp = meta("meta.input", 3)?;
        let input = [inp[0] as usize, inp[1] as usize, inp[2] as usize];
        let n_classes = meta("meta.classes", 1)?[0] as usize;
        let b = meta("meta.bn", 7)?;
        let variant = *BnVariant::ALL
            .get(b[0] as usize)
            .ok_or_else(|| invalid!("unknown variant index {}", b[0]))?;
        let bn = BnSettings {
            variant,
            momentum: b[1],
            eps: b[2],
            c_tilde: if b[3].is_nan() { CTilde::Midpoint } else { CTilde::Fixed(b[3]) },
            lambda: b[4],
            mean_shrinkage: MeanShrinkage {
                positive_part: b[5] != 0.0,
                dispersion: if b[6] != 0.0 { Dispersion::Sample } else { Dispersion::Population },
            },
        };
        let mut net = Network::new(arch, input, n_classes, bn, 0)?;
        let names = net.state_names();
        for (name, slot) in names.iter().zip(net.state_mut()) {
            let v = meta(name, slot.len())?;
            slot.copy_from_slice(v);
        }
        Ok(net)
    }
}

/// Named `f64` arrays describing a trained network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}
