//! Full-precision perceptron with sigmoid hidden units and a two-way softmax.
//!
//! Weights are stored row-major per layer with shape `(fan_out, fan_in)`.
//! Training is plain mini-batch SGD on mean cross-entropy. It is
//! single-threaded: the result is a pure function of the model, the data and
//! the seed.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{ensure, Error, Result};
use crate::patch::Dataset;
use crate::rng;

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    /// `clip((x + 1) / 2, 0, 1)`, see [`crate::quant::hard_sigmoid`].
    HardSigmoid,
}

impl Activation {
    pub fn id(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::HardSigmoid => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::HardSigmoid),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::HardSigmoid => crate::quant::hard_sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::HardSigmoid => {
                if z > -1.0 && z < 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }
}

/// Weight quantization applied during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuantMode {
    None,
    BinaryDet,
    BinaryStoch,
    Ternary,
}

impl QuantMode {
    pub const ALL: [QuantMode; 4] = [
        QuantMode::None,
        QuantMode::BinaryDet,
        QuantMode::BinaryStoch,
        QuantMode::Ternary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuantMode::None => "full",
            QuantMode::BinaryDet => "binary-det",
            QuantMode::BinaryStoch => "binary-stoch",
            QuantMode::Ternary => "ternary",
        }
    }

    pub fn is_quantized(self) -> bool {
        self != QuantMode::None
    }
}

impl fmt::Display for QuantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QuantMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub quantization_mode: QuantMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.03,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            quantization_mode: QuantMode::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            InvalidArgument,
            "learning rate must be finite and non-negative"
        );
        ensure!(self.batch_size >= 1, InvalidArgument, "batch size must be at least 1");
        Ok(())
    }
}

/// One dense layer, `out = W · in + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) weights: Vec<f64>,
    pub(crate) biases: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    activation: Activation,
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    ensure!(
        layer_sizes.len() >= 2,
        InvalidArgument,
        "need at least an input and an output size, got {layer_sizes:?}"
    );
    ensure!(
        layer_sizes.iter().all(|&s| s > 0),
        InvalidArgument,
        "layer sizes must be positive, got {layer_sizes:?}"
    );
    ensure!(
        *layer_sizes.last().unwrap() == 2,
        InvalidArgument,
        "output layer must have 2 units, got {layer_sizes:?}"
    );
    Ok(())
}

impl MlpModel {
    /// Glorot-uniform weights in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = rng::derived(seed, rng::STREAM_INIT, 0);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights: (0..fan_in * fan_out).map(|_| rng.random_range(-s..=s)).collect(),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    /// Builds a model from explicit row-major weight matrices and biases.
    pub fn from_parts(
        layer_sizes: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let n = layer_sizes.len() - 1;
        ensure!(
            weights.len() == n && biases.len() == n,
            DimensionMismatch,
            "expected {n} weight matrices and bias vectors"
        );
        let layers = layer_sizes
            .windows(2)
            .zip(weights.into_iter().zip(biases))
            .enumerate()
            .map(|(l, (w, (weights, biases)))| {
                ensure!(
                    weights.len() == w[0] * w[1] && biases.len() == w[1],
                    DimensionMismatch,
                    "layer {l} needs a {}x{} matrix and {} biases",
                    w[1],
                    w[0],
                    w[1]
                );
                Ok(Layer {
                    in_dim: w[0],
                    out_dim: w[1],
                    weights,
                    biases,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers, activation })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim)
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Class probabilities and every layer's pre-activation.
    pub fn forward(&self, features: &[f32]) -> Result<Forward> {
        ensure!(
            features.len() == self.input_dim(),
            DimensionMismatch,
            "model expects {} features, got {}",
            self.input_dim(),
            features.len()
        );
        let input: Vec<f64> = features.iter().map(|&v| v as f64).collect();
        let mut trace = Trace::new(self);
        self.forward_trace(&input, &mut trace);
        let logits = trace.logits();
        Ok(Forward {
            probs: softmax(logits),
            logits,
            pre_activations: trace.pre,
        })
    }

    /// `argmax` of the class probabilities, ties going to class 0.
    pub fn predict(&self, features: &[f32]) -> Result<u8> {
        let f = self.forward(features)?;
        Ok(u8::from(f.logits[1] > f.logits[0]))
    }

    fn forward_trace(&self, input: &[f64], trace: &mut Trace) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = trace.post.split_at_mut(l + 1);
            let a_in: &[f64] = if l == 0 { input } else { &prev[l] };
            let z = &mut trace.pre[l];
            let a_out = &mut rest[0];
            for j in 0..layer.out_dim {
                let mut acc = layer.biases[j];
                for (w, x) in layer.row(j).iter().zip(a_in) {
                    acc += w * x;
                }
                z[j] = acc;
                a_out[j] = if l == last { acc } else { self.activation.apply(acc) };
            }
        }
    }
}

/// Reusable buffers for repeated inference with one model.
pub struct Scratch {
    input: Vec<f64>,
    trace: Trace,
}

impl Scratch {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            input: vec![0.0; model.input_dim()],
            trace: Trace::new(model),
        }
    }
}

impl MlpModel {
    /// Logits without allocation. Panics if `features` has the wrong length
    /// or `scratch` was built for a different shape.
    pub fn logits_with(&self, features: &[f32], scratch: &mut Scratch) -> [f64; 2] {
        assert_eq!(features.len(), self.input_dim());
        for (d, &s) in scratch.input.iter_mut().zip(features) {
            *d = s as f64;
        }
        self.forward_trace(&scratch.input, &mut scratch.trace);
        scratch.trace.logits()
    }
}

/// Result of a full-precision forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub probs: [f64; 2],
    pub logits: [f64; 2],
    /// Pre-activation of every layer, the last one being the logits.
    pub pre_activations: Vec<Vec<f64>>,
}

// Per-sample forward buffers. `post[0]` is unused (input is borrowed);
// `post[l + 1]` is the output of layer `l`.
struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    fn new(model: &MlpModel) -> Self {
        let pre = model.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
        let post = std::iter::once(Vec::new())
            .chain(model.layers.iter().map(|l| vec![0.0; l.out_dim]))
            .collect();
        Self { pre, post }
    }

    fn logits(&self) -> [f64; 2] {
        let z = self.pre.last().unwrap();
        [z[0], z[1]]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Max-shifted two-way softmax.
pub fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// `-ln softmax(logits)[label]`, computed via log-sum-exp.
pub fn cross_entropy(logits: [f64; 2], label: u8) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label as usize]
}

/// Parameter gradients, shaped like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Mean cross-entropy of the batch.
    pub loss: f64,
}

impl Gradients {
    fn zeros(model: &MlpModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            loss: 0.0,
        }
    }

    fn reset(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
        self.loss = 0.0;
    }
}

/// Reusable buffers for backprop over a batch.
struct Backprop {
    trace: Trace,
    delta: Vec<Vec<f64>>,
    grads: Gradients,
}

impl Backprop {
    fn new(model: &MlpModel) -> Self {
        Self {
            trace: Trace::new(model),
            delta: model.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
            grads: Gradients::zeros(model),
        }
    }

    /// Accumulates the summed (not yet averaged) gradient of one sample.
    fn accumulate(&mut self, model: &MlpModel, input: &[f64], label: u8) {
        model.forward_trace(input, &mut self.trace);
        let logits = self.trace.logits();
        self.grads.loss += cross_entropy(logits, label);

        let last = model.layers.len() - 1;
        let p = softmax(logits);
        self.delta[last][0] = p[0] - f64::from(label == 0);
        self.delta[last][1] = p[1] - f64::from(label == 1);

        for l in (0..=last).rev() {
            let layer = &model.layers[l];
            if l < last {
                let (cur, next) = self.delta.split_at_mut(l + 1);
                let (cur, next) = (&mut cur[l], &next[0]);
                let upper = &model.layers[l + 1];
                cur.fill(0.0);
                for (k, &dk) in next.iter().enumerate() {
                    for (c, w) in cur.iter_mut().zip(upper.row(k)) {
                        *c += w * dk;
                    }
                }
                let z = &self.trace.pre[l];
                let a = &self.trace.post[l + 1];
                for j in 0..layer.out_dim {
                    cur[j] *= model.activation.derivative(z[j], a[j]);
                }
            }
            let a_in: &[f64] = if l == 0 { input } else { &self.trace.post[l] };
            let gw = &mut self.grads.weights[l];
            let gb = &mut self.grads.biases[l];
            for (j, &dj) in self.delta[l].iter().enumerate() {
                gb[j] += dj;
                let row = &mut gw[j * layer.in_dim..(j + 1) * layer.in_dim];
                for (g, x) in row.iter_mut().zip(a_in) {
                    *g += dj * x;
                }
            }
        }
    }

    fn finish(&mut self, n: usize) {
        let inv = 1.0 / n as f64;
        self.grads.weights.iter_mut().flatten().for_each(|g| *g *= inv);
        self.grads.biases.iter_mut().flatten().for_each(|g| *g *= inv);
        self.grads.loss *= inv;
    }
}

/// Exact gradient of mean cross-entropy over `(features, label)` pairs.
pub fn gradient(model: &MlpModel, batch: &[(&[f32], u8)]) -> Result<Gradients> {
    ensure!(!batch.is_empty(), InvalidArgument, "empty batch");
    let dim = model.input_dim();
    ensure!(
        batch.iter().all(|(x, y)| x.len() == dim && *y <= 1),
        DimensionMismatch,
        "every sample needs {dim} features and a 0/1 label"
    );
    let mut bp = Backprop::new(model);
    let mut input = vec![0.0; dim];
    for (x, y) in batch {
        input.iter_mut().zip(x.iter()).for_each(|(d, &s)| *d = s as f64);
        bp.accumulate(model, &input, *y);
    }
    bp.finish(batch.len());
    Ok(bp.grads)
}

/// Mean cross-entropy of `model` over flattened inputs.
pub(crate) fn mean_loss(model: &MlpModel, inputs: &[f64], labels: &[u8]) -> f64 {
    let dim = model.input_dim();
    let mut trace = Trace::new(model);
    let mut total = 0.0;
    for (x, &y) in inputs.chunks_exact(dim).zip(labels) {
        model.forward_trace(x, &mut trace);
        total += cross_entropy(trace.logits(), y);
    }
    total / labels.len() as f64
}

/// Per-step hooks that let quantization-aware training reuse the SGD loop.
pub(crate) trait StepHooks {
    /// Model whose forward/backward pass produces this step's gradient.
    /// `None` means the shadow model itself.
    fn effective(&mut self, shadow: &MlpModel) -> Option<MlpModel>;

    /// Called after every parameter update.
    fn after_update(&mut self, _shadow: &mut MlpModel) {}
}

struct Plain;

impl StepHooks for Plain {
    fn effective(&mut self, _shadow: &MlpModel) -> Option<MlpModel> {
        None
    }
}

pub(crate) fn run_sgd(
    model: &mut MlpModel,
    dataset: &Dataset,
    config: &TrainConfig,
    hooks: &mut dyn StepHooks,
) -> Result<Vec<f64>> {
    config.validate()?;
    ensure!(!dataset.is_empty(), InvalidArgument, "empty dataset");
    let dim = model.input_dim();
    ensure!(
        dataset.feature_len() == dim,
        DimensionMismatch,
        "dataset has {} features per sample, model expects {dim}",
        dataset.feature_len()
    );

    let inputs: Vec<f64> = dataset
        .samples
        .iter()
        .flat_map(|s| s.features.iter().map(|&v| v as f64))
        .collect();
    let labels: Vec<u8> = dataset.samples.iter().map(|s| s.label).collect();
    let n = labels.len();

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut bp = Backprop::new(model);

    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::derived(config.seed, rng::STREAM_SHUFFLE, epoch as u64));
        for batch in order.chunks(config.batch_size) {
            let effective = hooks.effective(model);
            let net = effective.as_ref().unwrap_or(model);
            bp.grads.reset();
            for &i in batch {
                bp.accumulate(net, &inputs[i * dim..(i + 1) * dim], labels[i]);
            }
            bp.finish(batch.len());
            for (layer, (gw, gb)) in model
                .layers
                .iter_mut()
                .zip(bp.grads.weights.iter().zip(&bp.grads.biases))
            {
                for (w, g) in layer.weights.iter_mut().zip(gw) {
                    *w -= config.learning_rate * g;
                }
                for (b, g) in layer.biases.iter_mut().zip(gb) {
                    *b -= config.learning_rate * g;
                }
            }
            hooks.after_update(model);
        }
        let effective = hooks.effective(model);
        let loss = mean_loss(effective.as_ref().unwrap_or(model), &inputs, &labels);
        history.push(loss);
    }
    Ok(history)
}

/// Trains a full-precision model; returns it with the per-epoch loss over
/// the whole dataset.
pub fn train(model: &MlpModel, dataset: &Dataset, config: &TrainConfig) -> Result<(MlpModel, Vec<f64>)> {
    ensure!(
        config.quantization_mode == QuantMode::None,
        InvalidArgument,
        "mode {} needs quantization-aware training",
        config.quantization_mode
    );
    let mut model = model.clone();
    let history = run_sgd(&mut model, dataset, config, &mut Plain)?;
    Ok((model, history))
}
