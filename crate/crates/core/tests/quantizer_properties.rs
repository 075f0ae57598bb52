use bleedseg::quant::{
    binarize_deterministic, binarize_stochastic, hard_sigmoid, qat_train, quantize_model, ternarize,
};
use bleedseg::rng;
use bleedseg::{Activation, Dataset, MlpModel, PixelSample, QuantMode, TrainConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn ternarize_is_odd(w in -3.0f64..3.0, t in 0.0f64..1.0) {
        prop_assert_eq!(ternarize(-w, t), -ternarize(w, t));
    }

    #[test]
    fn quantizer_codomains(w in -5.0f64..5.0, t in 0.0f64..1.0, seed in any::<u64>()) {
        prop_assert!([-1, 0, 1].contains(&ternarize(w, t)));
        prop_assert!([-1, 1].contains(&binarize_deterministic(w)));
        let mut r = rng::seeded(seed);
        prop_assert!([-1, 1].contains(&binarize_stochastic(w, &mut r)));
    }

    #[test]
    fn binarize_agrees_with_zero_threshold_ternarize(w in -3.0f64..3.0) {
        prop_assume!(w != 0.0);
        prop_assert_eq!(binarize_deterministic(w), ternarize(w, 0.0));
    }

    #[test]
    fn hard_sigmoid_is_clipped_line(x in -10.0f64..10.0, y in -10.0f64..10.0) {
        let h = hard_sigmoid(x);
        prop_assert!((0.0..=1.0).contains(&h));
        if (-1.0..=1.0).contains(&x) {
            prop_assert_eq!(h, (x + 1.0) / 2.0);
        }
        if x <= y {
            prop_assert!(h <= hard_sigmoid(y));
        }
    }

    #[test]
    fn ternary_quantization_is_idempotent_on_its_codomain(seed in any::<u64>()) {
        let mut m = MlpModel::init(&[6, 5, 2], Activation::Sigmoid, seed).unwrap();
        let mut r = rng::seeded(seed);
        for layer in m.layers_mut() {
            for w in layer.weights_mut() {
                *w = f64::from(ternarize(*w, 0.1));
            }
        }
        let q = quantize_model(&m, QuantMode::Ternary, 0.0, 8.0, &mut r).unwrap();
        for (ql, ml) in q.layers().iter().zip(m.layers()) {
            let back: Vec<f64> = ql.weights().iter().map(|&w| f64::from(w)).collect();
            prop_assert_eq!(back.as_slice(), ml.weights());
        }
    }
}

#[test]
fn zero_binarizes_to_plus_one() {
    assert_eq!(binarize_deterministic(0.0), 1);
    assert_eq!(binarize_deterministic(-0.0), 1);
}

#[test]
fn stochastic_mean_within_binomial_bounds() {
    const N: usize = 10_000;
    let bound = 4.0 / (N as f64).sqrt();
    let mut r = rng::seeded(99);
    for &w in &[-1.2, -0.6, -0.2, 0.0, 0.3, 0.75, 1.0] {
        let mean = (0..N).map(|_| f64::from(binarize_stochastic(w, &mut r))).sum::<f64>() / N as f64;
        let expected = 2.0 * hard_sigmoid(w) - 1.0;
        assert!((mean - expected).abs() <= bound, "w {w}: mean {mean} vs {expected}");
    }
    // at w = 0 the share of +1 draws stays inside the 1e-6 binomial quantiles
    let plus = (0..N).filter(|_| binarize_stochastic(0.0, &mut r) == 1).count() as f64 / N as f64;
    assert!((0.4755..=0.5245).contains(&plus), "share {plus}");
}

fn toy_dataset() -> Dataset {
    let samples = (0..40)
        .map(|i| {
            let v = (i % 10) as f32 / 10.0;
            PixelSample {
                features: vec![v, 1.0 - v, 0.5],
                label: u8::from(i % 10 >= 5),
                origin: None,
            }
        })
        .collect();
    Dataset::new(samples, 1, 0).unwrap()
}

#[test]
fn qat_keeps_shadow_clipped_and_exports_ternary_weights() {
    let ds = toy_dataset();
    let mut init = MlpModel::init(&[3, 4, 2], Activation::Sigmoid, 5).unwrap();
    init.layers_mut()[0].weights_mut()[0] = 3.0;
    for mode in [QuantMode::Ternary, QuantMode::BinaryDet, QuantMode::BinaryStoch] {
        let cfg = TrainConfig {
            learning_rate: 2.0,
            epochs: 5,
            batch_size: 4,
            seed: 1,
            quantization_mode: mode,
        };
        let out = qat_train(&init, &ds, &cfg, 0.05, 8.0).unwrap();
        assert!(out.shadow.layers().iter().all(|l| l.weights().iter().all(|w| w.abs() <= 1.0)));
        for l in out.quantized.layers() {
            let allowed: &[i8] = if mode == QuantMode::Ternary { &[-1, 0, 1] } else { &[-1, 1] };
            assert!(l.weights().iter().all(|w| allowed.contains(w)));
        }
        assert!(out.history.iter().all(|l| l.is_finite()));
        let again = qat_train(&init, &ds, &cfg, 0.05, 8.0).unwrap();
        assert_eq!(out.quantized, again.quantized);
    }
}

#[test]
fn qat_with_zero_learning_rate_leaves_shadow_alone() {
    let ds = toy_dataset();
    let init = MlpModel::init(&[3, 4, 2], Activation::Sigmoid, 5).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        batch_size: 8,
        seed: 2,
        quantization_mode: QuantMode::Ternary,
    };
    let out = qat_train(&init, &ds, &cfg, 0.05, 8.0).unwrap();
    assert_eq!(out.shadow, init);
}
