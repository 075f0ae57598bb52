//! Bleeding-region segmentation for capsule endoscopy frames.
//!
//! The pipeline is:
//!
//! 1. [`color`] converts an RGB frame into three informative planes
//!    (gray, HSV saturation, CIELAB a*) and ranks candidate channels by
//!    class separability of their 256-bin histograms.
//! 2. [`patch`] turns every pixel into a `3 × p × p` feature vector read
//!    from a mirror-padded window, builds class-balanced training sets and
//!    splits images into cross-validation folds.
//! 3. [`mlp`] is a small full-precision perceptron (sigmoid hidden units,
//!    softmax output) trained with mini-batch SGD on cross-entropy.
//! 4. [`quant`] quantizes weights to `{-1, +1}` or `{-1, 0, +1}` and trains
//!    with full-precision shadow weights (straight-through estimator).
//! 5. [`mfree`] runs quantized models with additions, subtractions and
//!    table lookups only, and accounts for operations and weight memory.
//! 6. [`eval`] computes confusion counts, DICE and k-fold reports.
//!
//! [`synth`] generates a seeded stand-in corpus of reddish blobs on mucosa
//! tones, and [`format`] holds the binary model and dataset file layouts.
//!
//! Data-parallel loops (per-pixel segmentation, per-image histogramming,
//! per-fold evaluation) run on rayon when the `parallel` feature is on and
//! fall back to plain iterators otherwise; see [`par::Exec`]. Results are
//! identical either way.

pub mod color;
pub mod error;
pub mod eval;
pub mod format;
pub mod image;
pub mod mfree;
pub mod mlp;
pub mod par;
pub mod patch;
pub mod quant;
pub mod rng;
pub mod synth;

pub use crate::color::{ChannelId, ChannelLut, ChannelPlane, FeaturePlanes};
pub use crate::error::{Error, Result};
pub use crate::eval::{ConfusionCounts, EvalReport};
pub use crate::image::{LabelMask, RgbImage};
pub use crate::mfree::{OpCounts, SegmentationResult};
pub use crate::mlp::{Activation, MlpModel, QuantMode, TrainConfig};
pub use crate::par::Exec;
pub use crate::patch::{Dataset, FoldSplit, PixelSample};
pub use crate::quant::TernaryModel;

/// Patch side length used throughout (5×5 windows).
pub const DEFAULT_PATCH_SIZE: usize = 5;

/// Default network shape: 75 inputs, hidden layers 40-20-8, two outputs.
pub const DEFAULT_LAYER_SIZES: [usize; 5] = [75, 40, 20, 8, 2];
