//! Multiplication-free inference for quantized models.
//!
//! A neuron's pre-activation is built by adding inputs whose weight is `+1`,
//! subtracting those whose weight is `-1` and skipping zeros, in ascending
//! input order, then adding the bias. Hidden outputs come from the
//! activation table. The class is the argmax of the two logits with ties
//! going to class 0; softmax is monotone so it is never evaluated.
//!
//! Every arithmetic step increments an [`OpCounts`] field. No code path here
//! increments `multiplications`.

use std::fmt;
use std::ops::{Add, AddAssign};

use crate::color::FeaturePlanes;
use crate::error::{ensure, Result};
use crate::image::LabelMask;
use crate::mlp::{MlpModel, Scratch};
use crate::par::Exec;
use crate::patch::{check_patch_geometry, write_patch};
use crate::quant::TernaryModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub additions: u64,
    pub subtractions: u64,
    pub multiplications: u64,
    pub lut_lookups: u64,
    /// Weight storage touched by the pass. Merging keeps the maximum.
    pub weight_memory_bytes: u64,
}

impl Add for OpCounts {
    type Output = OpCounts;

    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            additions: self.additions + o.additions,
            subtractions: self.subtractions + o.subtractions,
            multiplications: self.multiplications + o.multiplications,
            lut_lookups: self.lut_lookups + o.lut_lookups,
            weight_memory_bytes: self.weight_memory_bytes.max(o.weight_memory_bytes),
        }
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: OpCounts) {
        *self = *self + o;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfreeOutput {
    pub class: u8,
    pub logits: [f32; 2],
    pub ops: OpCounts,
}

#[inline]
fn decide(logits: [f32; 2]) -> u8 {
    u8::from(logits[1] > logits[0])
}

/// Row-padded 2-bit storage of `model`'s weights.
pub fn packed_weight_bytes(model: &TernaryModel) -> u64 {
    model
        .layers()
        .iter()
        .map(|l| (l.out_dim() * l.in_dim().div_ceil(4)) as u64)
        .sum()
}

fn check_input(model: &TernaryModel, features: &[f32]) -> Result<()> {
    ensure!(
        features.len() == model.input_dim(),
        DimensionMismatch,
        "model expects {} features, got {}",
        model.input_dim(),
        features.len()
    );
    Ok(())
}

/// Ping-pong activation buffers sized for the widest layer.
pub struct MfreeScratch {
    a: Vec<f32>,
    b: Vec<f32>,
}

impl MfreeScratch {
    pub fn new(model: &TernaryModel) -> Self {
        let widest = model
            .layers()
            .iter()
            .map(|l| l.in_dim().max(l.out_dim()))
            .max()
            .unwrap_or(0);
        Self {
            a: vec![0.0; widest],
            b: vec![0.0; widest],
        }
    }
}

fn mfree_pass(model: &TernaryModel, features: &[f32], scratch: &mut MfreeScratch, ops: &mut OpCounts) -> [f32; 2] {
    let last = model.layers().len() - 1;
    let lut = model.lut();
    let MfreeScratch { a, b } = scratch;
    a[..features.len()].copy_from_slice(features);
    let (mut cur, mut next) = (a, b);
    for (l, layer) in model.layers().iter().enumerate() {
        let input = &cur[..layer.in_dim()];
        for j in 0..layer.out_dim() {
            let mut acc = 0.0f32;
            for (&w, &x) in layer.row(j).iter().zip(input) {
                match w {
                    1 => {
                        acc += x;
                        ops.additions += 1;
                    }
                    -1 => {
                        acc -= x;
                        ops.subtractions += 1;
                    }
                    _ => {}
                }
            }
            acc += layer.biases()[j];
            ops.additions += 1;
            next[j] = if l == last {
                acc
            } else {
                ops.lut_lookups += 1;
                lut.lookup(acc)
            };
        }
        std::mem::swap(&mut cur, &mut next);
    }
    [cur[0], cur[1]]
}

/// Classifies one feature vector using additions, subtractions and table
/// lookups only.
pub fn forward_mfree(model: &TernaryModel, features: &[f32]) -> Result<MfreeOutput> {
    check_input(model, features)?;
    let mut ops = OpCounts {
        weight_memory_bytes: packed_weight_bytes(model),
        ..OpCounts::default()
    };
    let logits = mfree_pass(model, features, &mut MfreeScratch::new(model), &mut ops);
    Ok(MfreeOutput {
        class: decide(logits),
        logits,
        ops,
    })
}

/// Same network evaluated as ordinary matrix-vector products with the
/// weights cast to `f32`. Accumulation order and activation table match
/// [`forward_mfree`], so logits agree bit for bit.
pub fn forward_reference_quantized(model: &TernaryModel, features: &[f32]) -> Result<(u8, [f32; 2])> {
    check_input(model, features)?;
    let last = model.layers().len() - 1;
    let mut act = features.to_vec();
    for (l, layer) in model.layers().iter().enumerate() {
        let w: Vec<f32> = layer.weights().iter().map(|&v| v as f32).collect();
        act = (0..layer.out_dim())
            .map(|j| {
                let row = &w[j * layer.in_dim()..(j + 1) * layer.in_dim()];
                let mut acc = 0.0f32;
                for (wi, xi) in row.iter().zip(&act) {
                    acc += wi * xi;
                }
                let z = acc + layer.biases()[j];
                if l == last {
                    z
                } else {
                    model.lut().lookup(z)
                }
            })
            .collect();
    }
    let logits = [act[0], act[1]];
    Ok((decide(logits), logits))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub mask: LabelMask,
    /// `logit[1] - logit[0]` per pixel, row-major.
    pub per_pixel_scores: Option<Vec<f32>>,
    pub op_counts: OpCounts,
}

fn check_model_patch(input_dim: usize, planes: &FeaturePlanes, patch_size: usize) -> Result<usize> {
    let dim = check_patch_geometry(planes, patch_size)?;
    ensure!(
        dim == input_dim,
        DimensionMismatch,
        "patch size {patch_size} gives {dim} features but the model expects {input_dim}"
    );
    Ok(dim)
}

struct RowResult {
    labels: Vec<u8>,
    scores: Vec<f32>,
    ops: OpCounts,
}

fn assemble(planes: &FeaturePlanes, rows: Vec<RowResult>) -> Result<SegmentationResult> {
    let (w, h) = (planes.width(), planes.height());
    let mut labels = Vec::with_capacity(w * h);
    let mut scores = Vec::with_capacity(w * h);
    let mut ops = OpCounts::default();
    for r in rows {
        labels.extend_from_slice(&r.labels);
        scores.extend_from_slice(&r.scores);
        ops += r.ops;
    }
    Ok(SegmentationResult {
        mask: LabelMask::new(w, h, labels)?,
        per_pixel_scores: Some(scores),
        op_counts: ops,
    })
}

/// Classifies every pixel of a frame with the multiplication-free engine.
/// Rows are independent; per-row counters are summed afterwards.
pub fn segment_image(model: &TernaryModel, planes: &FeaturePlanes, patch_size: usize, exec: Exec) -> Result<SegmentationResult> {
    let dim = check_model_patch(model.input_dim(), planes, patch_size)?;
    let memory = packed_weight_bytes(model);
    let width = planes.width();
    let rows = exec.map_range(planes.height(), |y| {
        let mut patch = vec![0.0f32; dim];
        let mut scratch = MfreeScratch::new(model);
        let mut ops = OpCounts {
            weight_memory_bytes: memory,
            ..OpCounts::default()
        };
        let mut labels = Vec::with_capacity(width);
        let mut scores = Vec::with_capacity(width);
        for x in 0..width {
            write_patch(planes, x, y, patch_size, &mut patch);
            let logits = mfree_pass(model, &patch, &mut scratch, &mut ops);
            labels.push(decide(logits));
            scores.push(logits[1] - logits[0]);
        }
        RowResult { labels, scores, ops }
    });
    assemble(planes, rows)
}

/// Per-inference operation counts of a full-precision model: every weight
/// costs one multiplication and one addition (the bias takes the place of
/// the first accumulation).
pub fn full_precision_ops(model: &MlpModel) -> OpCounts {
    let weights = model.weight_count() as u64;
    OpCounts {
        additions: weights,
        subtractions: 0,
        multiplications: weights,
        lut_lookups: 0,
        weight_memory_bytes: 4 * weights,
    }
}

/// Classifies every pixel with the full-precision model and exact sigmoid.
pub fn segment_image_full(model: &MlpModel, planes: &FeaturePlanes, patch_size: usize, exec: Exec) -> Result<SegmentationResult> {
    let dim = check_model_patch(model.input_dim(), planes, patch_size)?;
    let per_pixel = full_precision_ops(model);
    let width = planes.width();
    let rows = exec.map_range(planes.height(), |y| {
        let mut patch = vec![0.0f32; dim];
        let mut scratch = Scratch::new(model);
        let mut labels = Vec::with_capacity(width);
        let mut scores = Vec::with_capacity(width);
        let mut ops = OpCounts::default();
        for x in 0..width {
            write_patch(planes, x, y, patch_size, &mut patch);
            let logits = model.logits_with(&patch, &mut scratch);
            labels.push(u8::from(logits[1] > logits[0]));
            scores.push((logits[1] - logits[0]) as f32);
            ops += per_pixel;
        }
        RowResult { labels, scores, ops }
    });
    assemble(planes, rows)
}

/// Either kind of model, for callers that segment without caring which.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Full(MlpModel),
    Quantized(TernaryModel),
}

impl AnyModel {
    pub fn input_dim(&self) -> usize {
        match self {
            AnyModel::Full(m) => m.input_dim(),
            AnyModel::Quantized(m) => m.input_dim(),
        }
    }

    pub fn segment(&self, planes: &FeaturePlanes, patch_size: usize, exec: Exec) -> Result<SegmentationResult> {
        match self {
            AnyModel::Full(m) => segment_image_full(m, planes, patch_size, exec),
            AnyModel::Quantized(m) => segment_image(m, planes, patch_size, exec),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: u64,
    pub fp32_bytes: u64,
    /// 2 bits per weight, each row padded to a whole byte (file layout).
    pub packed2_bytes: u64,
    /// 2 bits per weight with no padding.
    pub packed2_dense_bytes: u64,
    /// 1 bit per weight, densely packed per layer (binary modes).
    pub packed1_bytes: u64,
}

/// Memory and per-inference operation comparison of a full-precision model
/// and its quantized counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub full_ops: OpCounts,
    pub quantized_ops: OpCounts,
}

impl CostReport {
    pub fn total_weights(&self) -> u64 {
        self.layers.iter().map(|l| l.weights).sum()
    }

    pub fn fp32_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.fp32_bytes).sum()
    }

    pub fn packed2_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.packed2_bytes).sum()
    }

    pub fn packed2_dense_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.packed2_dense_bytes).sum()
    }

    pub fn packed1_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.packed1_bytes).sum()
    }

    /// binary32 bytes over row-padded 2-bit bytes.
    pub fn ternary_ratio(&self) -> f64 {
        self.fp32_bytes() as f64 / self.packed2_bytes() as f64
    }

    /// binary32 bytes over 1-bit bytes.
    pub fn binary_ratio(&self) -> f64 {
        self.fp32_bytes() as f64 / self.packed1_bytes() as f64
    }
}

pub fn layer_cost(fan_in: usize, fan_out: usize) -> LayerCost {
    let weights = (fan_in * fan_out) as u64;
    LayerCost {
        fan_in,
        fan_out,
        weights,
        fp32_bytes: 4 * weights,
        packed2_bytes: (fan_out * fan_in.div_ceil(4)) as u64,
        packed2_dense_bytes: (2 * weights).div_ceil(8),
        packed1_bytes: weights.div_ceil(8),
    }
}

/// Per-inference counts of the multiplication-free pass, derived from the
/// weight values alone.
pub fn quantized_ops(model: &TernaryModel) -> OpCounts {
    let mut ops = OpCounts {
        weight_memory_bytes: packed_weight_bytes(model),
        ..OpCounts::default()
    };
    let last = model.layers().len() - 1;
    for (l, layer) in model.layers().iter().enumerate() {
        ops.additions += layer.weights().iter().filter(|&&w| w == 1).count() as u64;
        ops.subtractions += layer.weights().iter().filter(|&&w| w == -1).count() as u64;
        ops.additions += layer.out_dim() as u64;
        if l < last {
            ops.lut_lookups += layer.out_dim() as u64;
        }
    }
    ops
}

pub fn cost_report(full: &MlpModel, quant: &TernaryModel) -> Result<CostReport> {
    ensure!(
        full.layer_sizes() == quant.layer_sizes(),
        DimensionMismatch,
        "layer sizes differ: {:?} vs {:?}",
        full.layer_sizes(),
        quant.layer_sizes()
    );
    let layers = full
        .layers()
        .iter()
        .map(|l| layer_cost(l.in_dim(), l.out_dim()))
        .collect();
    Ok(CostReport {
        layers,
        full_ops: full_precision_ops(full),
        quantized_ops: quantized_ops(quant),
    })
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>8} {:>8} {:>10} {:>12} {:>12} {:>12}",
            "layer", "weights", "fp32 B", "2-bit B", "2-bit dense", "1-bit B"
        )?;
        for l in &self.layers {
            writeln!(
                f,
                "{:>8} {:>8} {:>10} {:>12} {:>12} {:>12}",
                format!("{}x{}", l.fan_out, l.fan_in),
                l.weights,
                l.fp32_bytes,
                l.packed2_bytes,
                l.packed2_dense_bytes,
                l.packed1_bytes
            )?;
        }
        writeln!(
            f,
            "{:>8} {:>8} {:>10} {:>12} {:>12} {:>12}",
            "total",
            self.total_weights(),
            self.fp32_bytes(),
            self.packed2_bytes(),
            self.packed2_dense_bytes(),
            self.packed1_bytes()
        )?;
        writeln!(f, "ternary storage ratio: {:.2}x", self.ternary_ratio())?;
        writeln!(f, "binary storage ratio:  {:.2}x", self.binary_ratio())?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, o: &OpCounts| {
            writeln!(
                f,
                "{name:<10} mul {:>6}  add {:>6}  sub {:>6}  lut {:>4}",
                o.multiplications, o.additions, o.subtractions, o.lut_lookups
            )
        };
        writeln!(f, "per-inference operations:")?;
        row(f, "full", &self.full_ops)?;
        row(f, "quantized", &self.quantized_ops)
    }
}
