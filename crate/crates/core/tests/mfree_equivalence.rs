use std::time::Instant;

use bleedseg::color::extract_feature_planes;
use bleedseg::mfree::{
    forward_mfree, forward_reference_quantized, quantized_ops, segment_image, segment_image_full,
};
use bleedseg::quant::{ActivationLut, TernaryLayer, TernaryModel};
use bleedseg::{Activation, Exec, MlpModel, RgbImage};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_ternary(sizes: &[usize], rng: &mut ChaCha8Rng) -> TernaryModel {
    let layers = sizes
        .windows(2)
        .map(|d| {
            let weights = (0..d[0] * d[1]).map(|_| rng.random_range(-1i8..=1)).collect();
            let biases = (0..d[1]).map(|_| rng.random_range(-2.0f32..2.0)).collect();
            TernaryLayer::new(d[0], d[1], weights, biases).unwrap()
        })
        .collect();
    let activation = if rng.random_bool(0.5) {
        Activation::Sigmoid
    } else {
        Activation::HardSigmoid
    };
    let range = rng.random_range(2.0f32..12.0);
    TernaryModel::new(layers, activation, ActivationLut::build(activation, range).unwrap()).unwrap()
}

#[test]
fn mfree_is_bitwise_equal_to_reference() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shapes: [&[usize]; 3] = [&[75, 40, 20, 8, 2], &[12, 6, 2], &[27, 10, 5, 2]];
    for i in 0..1000 {
        let model = random_ternary(shapes[i % 3], &mut rng);
        let x: Vec<f32> = (0..model.input_dim()).map(|_| rng.random_range(0.0..1.0)).collect();
        let out = forward_mfree(&model, &x).unwrap();
        let (class, logits) = forward_reference_quantized(&model, &x).unwrap();
        assert_eq!(out.logits[0].to_bits(), logits[0].to_bits(), "pair {i}");
        assert_eq!(out.logits[1].to_bits(), logits[1].to_bits(), "pair {i}");
        assert_eq!(out.class, class);
        assert_eq!(out.ops.multiplications, 0);
        assert_eq!(out.ops, quantized_ops(&model));
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn op_counts_follow_nonzero_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = random_ternary(&[75, 40, 20, 8, 2], &mut rng);
    let ops = quantized_ops(&model);
    let plus: u64 = model
        .layers()
        .iter()
        .map(|l| l.weights().iter().filter(|&&w| w == 1).count() as u64)
        .sum();
    let minus: u64 = model
        .layers()
        .iter()
        .map(|l| l.weights().iter().filter(|&&w| w == -1).count() as u64)
        .sum();
    assert_eq!(ops.multiplications, 0);
    assert_eq!(ops.subtractions, minus);
    // one addition per +1 weight and one per bias
    assert_eq!(ops.additions, plus + 70);
    assert_eq!(ops.lut_lookups, 68);
}

fn test_image() -> RgbImage {
    let data = (0..40 * 30)
        .flat_map(|i| {
            let (x, y) = (i % 40, i / 40);
            let red = (x as i32 - 20).pow(2) + (y as i32 - 15).pow(2) < 30;
            if red {
                [170u8, 30, 28]
            } else {
                [210, (120 + x) as u8, (95 + y) as u8]
            }
        })
        .collect();
    RgbImage::new(40, 30, data).unwrap()
}

#[test]
fn segmentation_is_identical_sequential_and_parallel() {
    let planes = extract_feature_planes(&test_image());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = random_ternary(&[75, 10, 2], &mut rng);
    let a = segment_image(&q, &planes, 5, Exec::Sequential).unwrap();
    let b = segment_image(&q, &planes, 5, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.op_counts.multiplications, 0);

    let full = MlpModel::init(&[75, 10, 2], Activation::Sigmoid, 3).unwrap();
    let a = segment_image_full(&full, &planes, 5, Exec::Sequential).unwrap();
    let b = segment_image_full(&full, &planes, 5, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}
