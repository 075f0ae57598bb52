//! Confusion counts, DICE and k-fold cross-validation.

use std::fmt::{self, Write as _};

use crate::color::{extract_feature_planes, FeaturePlanes};
use crate::error::{ensure, Result};
use crate::image::{LabelMask, RgbImage};
use crate::mfree::{segment_image, segment_image_full, AnyModel};
use crate::mlp::{self, Activation, MlpModel, QuantMode, TrainConfig};
use crate::par::Exec;
use crate::patch::{build_balanced_from_planes, kfold_split, BalanceConfig, DEFAULT_POSITIVE_CAP};
use crate::quant::{self, DEFAULT_LUT_RANGE, DEFAULT_TERNARY_THRESHOLD};
use crate::rng;

/// Pixel counts with bleeding as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(pred: &LabelMask, truth: &LabelMask) -> Result<ConfusionCounts> {
    ensure!(
        pred.same_shape(truth.width(), truth.height()),
        DimensionMismatch,
        "prediction is {}x{} but ground truth is {}x{}",
        pred.width(),
        pred.height(),
        truth.width(),
        truth.height()
    );
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2 TP / (2 TP + FP + FN)`; two empty masks agree perfectly (1.0).
pub fn dice(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

/// Per-image DICE of one model variant and its summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: QuantMode,
    /// `(image index, DICE)`, sorted by image index.
    pub per_image: Vec<(usize, f64)>,
    pub min: f64,
    pub max: f64,
    pub average: f64,
}

impl EvalReport {
    pub fn from_scores(mode: QuantMode, mut per_image: Vec<(usize, f64)>) -> Result<Self> {
        ensure!(!per_image.is_empty(), InvalidArgument, "no images evaluated");
        per_image.sort_by_key(|&(i, _)| i);
        let scores = per_image.iter().map(|&(_, d)| d);
        let min = scores.clone().fold(f64::INFINITY, f64::min);
        let max = scores.clone().fold(f64::NEG_INFINITY, f64::max);
        let average = scores.sum::<f64>() / per_image.len() as f64;
        Ok(Self {
            mode,
            per_image,
            min,
            max,
            average,
        })
    }

    pub fn tag(&self) -> &'static str {
        if self.mode.is_quantized() {
            "quantized"
        } else {
            "full_precision"
        }
    }

    /// `key=value` lines; see [`write_reports`].
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let per_image: Vec<String> = self.per_image.iter().map(|(_, d)| d.to_string()).collect();
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "model={}", self.tag());
        let _ = writeln!(s, "min={}", self.min);
        let _ = writeln!(s, "max={}", self.max);
        let _ = writeln!(s, "average={}", self.average);
        let _ = writeln!(s, "per_image={}", per_image.join(","));
        s
    }
}

/// Machine-readable report: one `key=value` block per mode, blocks
/// separated by a blank line.
pub fn write_reports(reports: &[EvalReport]) -> String {
    reports
        .iter()
        .map(EvalReport::to_key_values)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Human-readable Min/Max/Average table with one column per mode.
pub struct ReportTable<'a>(pub &'a [EvalReport]);

impl fmt::Display for ReportTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<8}", "DICE")?;
        for r in self.0 {
            write!(f, " {:>14}", r.mode.to_string())?;
        }
        writeln!(f)?;
        type Pick = fn(&EvalReport) -> f64;
        let rows: [(&str, Pick); 3] = [
            ("Min", |r| r.min),
            ("Max", |r| r.max),
            ("Average", |r| r.average),
        ];
        for (name, pick) in rows {
            write!(f, "{name:<8}")?;
            for r in self.0 {
                write!(f, " {:>14.4}", pick(r))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Segments each image with `model` and scores it against its mask.
pub fn evaluate_model(
    model: &AnyModel,
    images: &[RgbImage],
    masks: &[LabelMask],
    patch_size: usize,
    mode: QuantMode,
    exec: Exec,
) -> Result<EvalReport> {
    ensure!(
        images.len() == masks.len(),
        DimensionMismatch,
        "{} images but {} masks",
        images.len(),
        masks.len()
    );
    let scores = exec.map_range(images.len(), |i| -> Result<(usize, f64)> {
        let planes = extract_feature_planes(&images[i]);
        let seg = model.segment(&planes, patch_size, Exec::Sequential)?;
        Ok((i, dice(&confusion(&seg.mask, &masks[i])?)))
    });
    EvalReport::from_scores(mode, scores.into_iter().collect::<Result<_>>()?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub patch_size: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    /// Variants to train per fold; `QuantMode::None` is full precision.
    pub modes: Vec<QuantMode>,
    pub ternary_threshold: f64,
    pub lut_range: f32,
    pub positive_cap: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            patch_size: crate::DEFAULT_PATCH_SIZE,
            hidden: crate::DEFAULT_LAYER_SIZES[1..4].to_vec(),
            activation: Activation::Sigmoid,
            train: TrainConfig::default(),
            modes: vec![QuantMode::None, QuantMode::Ternary],
            ternary_threshold: DEFAULT_TERNARY_THRESHOLD,
            lut_range: DEFAULT_LUT_RANGE,
            positive_cap: DEFAULT_POSITIVE_CAP,
        }
    }
}

impl CvConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let input = 3 * self.patch_size * self.patch_size;
        std::iter::once(input)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(2))
            .collect()
    }
}

fn run_fold(
    fold: usize,
    test: &[usize],
    train: &[usize],
    planes: &[FeaturePlanes],
    masks: &[LabelMask],
    cfg: &CvConfig,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let train_planes: Vec<&FeaturePlanes> = train.iter().map(|&i| &planes[i]).collect();
    let train_masks: Vec<&LabelMask> = train.iter().map(|&i| &masks[i]).collect();
    ensure!(
        train_masks.iter().any(|m| m.count_positive() > 0),
        InvalidData,
        "training split of fold {fold} has no bleeding pixels"
    );
    let fold_seed = rng::derive_seed(cfg.seed, rng::STREAM_CV, fold as u64);
    let balance = BalanceConfig {
        patch_size: cfg.patch_size,
        seed: fold_seed,
        positive_cap: cfg.positive_cap,
    };
    let dataset = build_balanced_from_planes(&train_planes, &train_masks, balance, Exec::Sequential)?;
    let init = MlpModel::init(&cfg.layer_sizes(), cfg.activation, fold_seed)?;

    cfg.modes
        .iter()
        .map(|&mode| {
            let tc = TrainConfig {
                seed: fold_seed,
                quantization_mode: mode,
                ..cfg.train
            };
            let model = if mode.is_quantized() {
                AnyModel::Quantized(quant::qat_train(&init, &dataset, &tc, cfg.ternary_threshold, cfg.lut_range)?.quantized)
            } else {
                AnyModel::Full(mlp::train(&init, &dataset, &tc)?.0)
            };
            test.iter()
                .map(|&i| {
                    let seg = match &model {
                        AnyModel::Full(m) => segment_image_full(m, &planes[i], cfg.patch_size, Exec::Sequential)?,
                        AnyModel::Quantized(m) => segment_image(m, &planes[i], cfg.patch_size, Exec::Sequential)?,
                    };
                    Ok((i, dice(&confusion(&seg.mask, &masks[i])?)))
                })
                .collect()
        })
        .collect()
}

/// k-fold cross-validation split by image. Each fold builds a balanced
/// training set from its training images only, trains every requested
/// variant from the same initialization and scores each held-out image.
/// Folds are independent and seeded, so they may run in parallel.
pub fn cross_validate(images: &[RgbImage], masks: &[LabelMask], cfg: &CvConfig, exec: Exec) -> Result<Vec<EvalReport>> {
    ensure!(
        images.len() == masks.len(),
        DimensionMismatch,
        "{} images but {} masks",
        images.len(),
        masks.len()
    );
    ensure!(!cfg.modes.is_empty(), InvalidArgument, "no modes requested");
    for (i, (img, m)) in images.iter().zip(masks).enumerate() {
        ensure!(
            m.same_shape(img.width(), img.height()),
            DimensionMismatch,
            "image {i} and its mask differ in size"
        );
    }
    let split = kfold_split(images.len(), cfg.k, cfg.seed)?;
    let planes = exec.map_slice(images, extract_feature_planes);
    let per_fold = exec.map_range(cfg.k, |f| {
        run_fold(f, split.test_indices(f), &split.train_indices(f), &planes, masks, cfg)
    });

    let mut per_mode: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cfg.modes.len()];
    for fold in per_fold {
        for (acc, scores) in per_mode.iter_mut().zip(fold?) {
            acc.extend(scores);
        }
    }
    cfg.modes
        .iter()
        .zip(per_mode)
        .map(|(&mode, scores)| EvalReport::from_scores(mode, scores))
        .collect()
}
