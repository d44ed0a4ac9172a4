//! Central finite differences against the analytic batch-norm backward pass.

#[path = "support/frozen.rs"]
mod frozen;

use frozen::{check, frozen_loss, random};
use steinbn::batchnorm::{BnLayer, BnVariant};
use steinbn::tensor::channel_moments;
use steinbn::Tensor4;

#[test]
fn all_variants_match_finite_differences() {
    for variant in BnVariant::ALL {
        for seed in 0..20 {
            let x = random([2, 4, 3, 3], seed, 0.4);
            let err = check(variant, &x, seed);
            assert!(err < 1e-5, "{variant:?} seed {seed}: relative error {err}");
        }
    }
}

#[test]
fn standard_single_channel_four_values() {
    let x = Tensor4::new([4, 1, 1, 1], vec![0.3, -1.2, 2.5, 0.7]).unwrap();
    let err = check(BnVariant::Standard, &x, 3);
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn frozen_convention_is_exact_for_standard() {
    // with identity maps the frozen oracle is the ordinary forward pass
    let x = random([2, 3, 2, 2], 9, 0.2);
    let layer = BnLayer::new(BnVariant::Standard, 3);
    let corr = layer.correct(&channel_moments(&x).unwrap()).unwrap();
    let w = random(x.dims(), 10, 0.0);
    let (y, _) = layer.clone().forward(&x).unwrap();
    let direct: f64 = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    let oracle = frozen_loss(&layer, &corr, x.data(), x.dims(), w.data());
    assert!((direct - oracle).abs() < 1e-12);
}
