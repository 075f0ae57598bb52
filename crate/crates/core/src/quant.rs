//! Weight quantizers and quantization-aware training.
//!
//! * deterministic binarization: `+1` if `w >= 0`, else `-1`
//! * stochastic binarization: `+1` with probability `hard_sigmoid(w)`
//! * ternarization: `0` if `|w| <= t`, else `sign(w)`; `t = 0` gives the
//!   literal sign rule where only an exact zero maps to `0`
//!
//! Training keeps full-precision shadow weights. Each step quantizes them,
//! runs forward and backward through the quantized network, applies the
//! gradient to the shadow weights (straight-through) and clips the shadow
//! weights to `[-1, 1]`. Biases are never quantized.

use rand::Rng as _;

use crate::error::{ensure, Result};
use crate::mlp::{self, Activation, MlpModel, QuantMode, StepHooks, TrainConfig};
use crate::patch::Dataset;
use crate::rng::{self, Rng};

/// Default dead-zone half-width for ternarization.
pub const DEFAULT_TERNARY_THRESHOLD: f64 = 0.05;

/// Default half-range `R` of the activation table, covering `[-R, R]`.
pub const DEFAULT_LUT_RANGE: f32 = 8.0;

pub const LUT_SIZE: usize = 256;

/// `clip((x + 1) / 2, 0, 1)`.
pub fn hard_sigmoid(x: f64) -> f64 {
    ((x + 1.0) / 2.0).clamp(0.0, 1.0)
}

pub fn binarize_deterministic(w: f64) -> i8 {
    if w >= 0.0 {
        1
    } else {
        -1
    }
}

pub fn binarize_stochastic(w: f64, rng: &mut Rng) -> i8 {
    let p = hard_sigmoid(w);
    // random::<f64>() is in [0, 1), so p = 1 always fires and p = 0 never does
    if rng.random::<f64>() < p {
        1
    } else {
        -1
    }
}

pub fn ternarize(w: f64, t: f64) -> i8 {
    if w.abs() <= t {
        0
    } else if w > 0.0 {
        1
    } else {
        -1
    }
}

fn quantize_weight(w: f64, mode: QuantMode, t: f64, rng: &mut Rng) -> i8 {
    match mode {
        QuantMode::BinaryDet => binarize_deterministic(w),
        QuantMode::BinaryStoch => binarize_stochastic(w, rng),
        QuantMode::Ternary => ternarize(w, t),
        QuantMode::None => unreachable!("full precision has no quantizer"),
    }
}

/// 256-entry table realizing the hidden activation over `[-R, R]`.
///
/// Entry `i` holds the activation at `-R + i · 2R / 255`. Lookup picks the
/// nearest sample point by comparing against the 255 bin midpoints, so it
/// needs no multiplication; inputs outside the range clamp to the end bins.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationLut {
    range: f32,
    table: Vec<f32>,
    midpoints: Vec<f32>,
}

fn lut_midpoints(range: f32) -> Vec<f32> {
    let r = range as f64;
    let step = 2.0 * r / (LUT_SIZE - 1) as f64;
    (0..LUT_SIZE - 1)
        .map(|i| (-r + (i as f64 + 0.5) * step) as f32)
        .collect()
}

impl ActivationLut {
    pub fn build(activation: Activation, range: f32) -> Result<Self> {
        ensure!(
            range > 0.0 && range.is_finite(),
            InvalidArgument,
            "activation table range must be positive, got {range}"
        );
        let r = range as f64;
        let step = 2.0 * r / (LUT_SIZE - 1) as f64;
        let table = (0..LUT_SIZE)
            .map(|i| activation.apply(-r + i as f64 * step) as f32)
            .collect();
        Ok(Self {
            range,
            table,
            midpoints: lut_midpoints(range),
        })
    }

    /// Rebuilds a table read from storage, checking its invariants.
    pub fn from_table(range: f32, table: Vec<f32>) -> Result<Self> {
        ensure!(
            range > 0.0 && range.is_finite(),
            InvalidData,
            "activation table range must be positive, got {range}"
        );
        ensure!(
            table.len() == LUT_SIZE,
            InvalidData,
            "activation table needs {LUT_SIZE} entries"
        );
        ensure!(
            table.iter().all(|v| (0.0..=1.0).contains(v)) && table.windows(2).all(|w| w[0] <= w[1]),
            InvalidData,
            "activation table must be non-decreasing within [0, 1]"
        );
        Ok(Self {
            range,
            table,
            midpoints: lut_midpoints(range),
        })
    }

    pub fn range(&self) -> f32 {
        self.range
    }

    pub fn table(&self) -> &[f32] {
        &self.table
    }

    #[inline]
    pub fn index(&self, x: f32) -> usize {
        self.midpoints.partition_point(|&m| m <= x)
    }

    #[inline]
    pub fn lookup(&self, x: f32) -> f32 {
        self.table[self.index(x)]
    }
}

/// One layer with weights in `{-1, 0, +1}` and full-precision biases.
#[derive(Clone, Debug, PartialEq)]
pub struct TernaryLayer {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) weights: Vec<i8>,
    pub(crate) biases: Vec<f32>,
}

impl TernaryLayer {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<i8>, biases: Vec<f32>) -> Result<Self> {
        ensure!(
            weights.len() == in_dim * out_dim && biases.len() == out_dim,
            DimensionMismatch,
            "a {out_dim}x{in_dim} layer needs {} weights and {out_dim} biases",
            in_dim * out_dim
        );
        ensure!(
            weights.iter().all(|w| (-1..=1).contains(w)),
            InvalidData,
            "ternary weights must be -1, 0 or +1"
        );
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[i8] {
        &self.weights
    }

    pub fn biases(&self) -> &[f32] {
        &self.biases
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[i8] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }
}

/// Deployable quantized network.
#[derive(Clone, Debug, PartialEq)]
pub struct TernaryModel {
    pub(crate) layers: Vec<TernaryLayer>,
    pub(crate) activation: Activation,
    pub(crate) lut: ActivationLut,
}

impl TernaryModel {
    pub fn new(layers: Vec<TernaryLayer>, activation: Activation, lut: ActivationLut) -> Result<Self> {
        ensure!(!layers.is_empty(), InvalidArgument, "model needs at least one layer");
        ensure!(
            layers.windows(2).all(|w| w[0].out_dim == w[1].in_dim),
            DimensionMismatch,
            "layer shapes do not chain"
        );
        ensure!(
            layers.last().unwrap().out_dim == 2,
            InvalidArgument,
            "output layer must have 2 units"
        );
        Ok(Self {
            layers,
            activation,
            lut,
        })
    }

    pub fn layers(&self) -> &[TernaryLayer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn lut(&self) -> &ActivationLut {
        &self.lut
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim)
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn zero_weight_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.weights)
            .filter(|&&w| w == 0)
            .count()
    }
}

/// Applies the mode's quantizer to every weight of `shadow`.
pub fn quantize_model(
    shadow: &MlpModel,
    mode: QuantMode,
    threshold: f64,
    lut_range: f32,
    rng: &mut Rng,
) -> Result<TernaryModel> {
    ensure!(mode.is_quantized(), InvalidArgument, "mode {mode} does not quantize");
    ensure!(
        threshold >= 0.0 && threshold.is_finite(),
        InvalidArgument,
        "ternary threshold must be finite and non-negative"
    );
    let layers = shadow
        .layers()
        .iter()
        .map(|l| TernaryLayer {
            in_dim: l.in_dim(),
            out_dim: l.out_dim(),
            weights: l
                .weights()
                .iter()
                .map(|&w| quantize_weight(w, mode, threshold, rng))
                .collect(),
            biases: l.biases().iter().map(|&b| b as f32).collect(),
        })
        .collect();
    let lut = ActivationLut::build(shadow.activation(), lut_range)?;
    TernaryModel::new(layers, shadow.activation(), lut)
}

/// Shadow-weight bookkeeping for quantization-aware training.
pub struct QatState {
    pub mode: QuantMode,
    pub threshold: f64,
    rng: Rng,
}

impl QatState {
    pub fn new(mode: QuantMode, threshold: f64, seed: u64) -> Self {
        Self {
            mode,
            threshold,
            rng: rng::derived(seed, rng::STREAM_STOCHASTIC, 0),
        }
    }

    /// Copy of `shadow` with quantized weights, used for the forward and
    /// backward pass.
    fn quantized_copy(&mut self, shadow: &MlpModel) -> MlpModel {
        let mut q = shadow.clone();
        for layer in q.layers_mut() {
            for w in layer.weights_mut() {
                *w = quantize_weight(*w, self.mode, self.threshold, &mut self.rng) as f64;
            }
        }
        q
    }
}

fn clip_shadow(shadow: &mut MlpModel) {
    for layer in shadow.layers_mut() {
        for w in layer.weights_mut() {
            *w = w.clamp(-1.0, 1.0);
        }
    }
}

impl StepHooks for QatState {
    fn effective(&mut self, shadow: &MlpModel) -> Option<MlpModel> {
        Some(self.quantized_copy(shadow))
    }

    fn after_update(&mut self, shadow: &mut MlpModel) {
        clip_shadow(shadow);
    }
}

#[derive(Clone, Debug)]
pub struct QatOutcome {
    pub shadow: MlpModel,
    pub quantized: TernaryModel,
    /// Per-epoch mean loss of the quantized network over the dataset.
    pub history: Vec<f64>,
}

/// Quantization-aware training from `init`, using `config.quantization_mode`.
pub fn qat_train(
    init: &MlpModel,
    dataset: &Dataset,
    config: &TrainConfig,
    threshold: f64,
    lut_range: f32,
) -> Result<QatOutcome> {
    let mode = config.quantization_mode;
    ensure!(mode.is_quantized(), InvalidArgument, "quantization-aware training needs a quantized mode");
    ensure!(
        threshold >= 0.0 && threshold.is_finite(),
        InvalidArgument,
        "ternary threshold must be finite and non-negative"
    );
    let mut shadow = init.clone();
    clip_shadow(&mut shadow);
    let mut state = QatState::new(mode, threshold, config.seed);
    let history = mlp::run_sgd(&mut shadow, dataset, config, &mut state)?;
    let quantized = quantize_model(&shadow, mode, threshold, lut_range, &mut state.rng)?;
    Ok(QatOutcome {
        shadow,
        quantized,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_sigmoid_examples() {
        assert_eq!(hard_sigmoid(0.0), 0.5);
        assert_eq!(hard_sigmoid(3.0), 1.0);
        assert_eq!(hard_sigmoid(-1.0), 0.0);
        assert_eq!(hard_sigmoid(0.5), 0.75);
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize_deterministic(0.0), 1);
        assert_eq!(binarize_deterministic(-0.2), -1);
        assert_eq!(binarize_deterministic(0.7), 1);
        let mut rng = rng::seeded(1);
        assert!((0..1000).all(|_| binarize_stochastic(1.0, &mut rng) == 1));
        assert!((0..1000).all(|_| binarize_stochastic(3.5, &mut rng) == 1));
        assert!((0..1000).all(|_| binarize_stochastic(-1.0, &mut rng) == -1));
    }

    #[test]
    fn ternarize_examples() {
        assert_eq!(ternarize(0.3, 0.0), 1);
        assert_eq!(ternarize(0.0, 0.0), 0);
        assert_eq!(ternarize(-0.3, 0.0), -1);
        assert_eq!(ternarize(0.05, 0.1), 0);
        assert_eq!(ternarize(-0.1, 0.1), 0);
    }

    fn shadow_with(weights: f64) -> MlpModel {
        let mut m = MlpModel::init(&crate::DEFAULT_LAYER_SIZES, Activation::Sigmoid, 0).unwrap();
        for l in m.layers_mut() {
            l.weights_mut().fill(weights);
        }
        m
    }

    #[test]
    fn quantize_model_examples() {
        let mut rng = rng::seeded(0);
        let q = quantize_model(&shadow_with(0.5), QuantMode::Ternary, 0.0, 8.0, &mut rng).unwrap();
        assert!(q.layers().iter().all(|l| l.weights().iter().all(|&w| w == 1)));

        let m = MlpModel::init(&crate::DEFAULT_LAYER_SIZES, Activation::Sigmoid, 3).unwrap();
        let q = quantize_model(&m, QuantMode::BinaryDet, 0.05, 8.0, &mut rng).unwrap();
        assert_eq!(q.zero_weight_count(), 0);
        let q = quantize_model(&m, QuantMode::Ternary, 0.05, 8.0, &mut rng).unwrap();
        assert!(q.zero_weight_count() > 0);
        assert!(quantize_model(&m, QuantMode::None, 0.0, 8.0, &mut rng).is_err());
    }

    #[test]
    fn lut_lookup_is_nearest_bin() {
        let lut = ActivationLut::build(Activation::Sigmoid, 8.0).unwrap();
        assert_eq!(lut.index(-100.0), 0);
        assert_eq!(lut.index(100.0), 255);
        assert_eq!(lut.index(-8.0), 0);
        assert_eq!(lut.index(8.0), 255);
        // 0 sits exactly between bins 127 and 128 and goes up
        assert_eq!(lut.index(0.0), 128);
        let step = 16.0 / 255.0;
        for i in 0..256 {
            let x = (-8.0 + i as f64 * step) as f32;
            assert_eq!(lut.index(x), i);
        }
        assert!(lut.table().windows(2).all(|w| w[0] <= w[1]));
        assert!((lut.lookup(0.0) - 0.5).abs() < 0.02);
        assert!(ActivationLut::from_table(8.0, vec![0.5; 10]).is_err());
        let mut bad = lut.table().to_vec();
        bad.swap(3, 200);
        assert!(ActivationLut::from_table(8.0, bad).is_err());
    }
}
