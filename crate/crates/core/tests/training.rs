use bleedseg::mlp::train;
use bleedseg::patch::{build_balanced_training_set, BalanceConfig};
use bleedseg::synth::{generate, SyntheticSpec};
use bleedseg::{Activation, Dataset, Exec, MlpModel, PixelSample, QuantMode, TrainConfig};

/// 10x10 grid on the unit square, positive when a + b >= 10 in grid units.
/// A logistic-regression fit separates it perfectly. The third feature is a
/// constant so the set fits the 1x1-patch layout.
fn separable_grid() -> Dataset {
    let samples = (0..100)
        .map(|i| {
            let (a, b) = (i % 10, i / 10);
            PixelSample {
                features: vec![a as f32 / 9.0, b as f32 / 9.0, 0.0],
                label: u8::from(a + b >= 10),
                origin: None,
            }
        })
        .collect();
    Dataset::new(samples, 1, 0).unwrap()
}

fn accuracy(model: &MlpModel, ds: &Dataset) -> f64 {
    let hits = ds
        .samples
        .iter()
        .filter(|s| model.predict(&s.features).unwrap() == s.label)
        .count();
    hits as f64 / ds.len() as f64
}

#[test]
fn separable_toy_set_is_learned() {
    let ds = separable_grid();
    let init = MlpModel::init(&[3, 8, 2], Activation::Sigmoid, 4).unwrap();
    let cfg = TrainConfig {
        learning_rate: 2.0,
        epochs: 200,
        batch_size: 10,
        seed: 4,
        quantization_mode: QuantMode::None,
    };
    let (model, history) = train(&init, &ds, &cfg).unwrap();
    let acc = accuracy(&model, &ds);
    assert!(acc >= 0.99, "accuracy {acc}, final loss {}", history.last().unwrap());
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let ds = separable_grid();
    let init = MlpModel::init(&[3, 5, 2], Activation::Sigmoid, 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 6,
        ..TrainConfig::default()
    };
    let (model, history) = train(&init, &ds, &cfg).unwrap();
    assert_eq!(model, init);
    assert_eq!(history.len(), 6);
    assert!(history.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn training_is_deterministic_per_seed() {
    let ds = separable_grid();
    let init = MlpModel::init(&[3, 5, 2], Activation::Sigmoid, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        seed: 9,
        ..TrainConfig::default()
    };
    assert_eq!(train(&init, &ds, &cfg).unwrap(), train(&init, &ds, &cfg).unwrap());
    let other = TrainConfig { seed: 10, ..cfg };
    assert_ne!(train(&init, &ds, &cfg).unwrap().0, train(&init, &ds, &other).unwrap().0);
}

#[test]
fn quantized_modes_are_rejected_by_plain_training() {
    let ds = separable_grid();
    let init = MlpModel::init(&[3, 5, 2], Activation::Sigmoid, 1).unwrap();
    let cfg = TrainConfig {
        quantization_mode: QuantMode::Ternary,
        ..TrainConfig::default()
    };
    assert!(train(&init, &ds, &cfg).is_err());
}

#[test]
fn loss_on_synthetic_training_set_is_finite_and_mostly_decreasing() {
    let spec = SyntheticSpec {
        seed: 5,
        ..SyntheticSpec::default()
    };
    let (imgs, masks): (Vec<_>, Vec<_>) = generate(&spec, Exec::default()).unwrap().into_iter().unzip();
    let ds = build_balanced_training_set(&imgs, &masks, BalanceConfig::new(5, 5), Exec::default()).unwrap();
    let init = MlpModel::init(&bleedseg::DEFAULT_LAYER_SIZES, Activation::Sigmoid, 5).unwrap();
    let cfg = TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    };
    let (_, history) = train(&init, &ds, &cfg).unwrap();
    assert!(history.iter().all(|l| l.is_finite()));
    let steps = history.len() - 1;
    let down = history.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(
        down as f64 >= 0.9 * steps as f64,
        "loss fell in only {down} of {steps} epochs"
    );
}
