//! Color channels and the histogram-based channel ranking.
//!
//! Ten candidate channels are derived from each RGB pixel, all normalized to
//! `[0, 1]`:
//!
//! | channel | normalization                          |
//! |---------|----------------------------------------|
//! | R, G, B | `/ 255`                                |
//! | H       | degrees `/ 360`                        |
//! | S, V    | HSV, already in `[0, 1]`               |
//! | L       | CIELAB `L* / 100`                      |
//! | a, b    | CIELAB `(x + 110) / 220`, clamped      |
//! | Gray    | BT.601 luma `/ 255`                    |
//!
//! CIELAB uses sRGB primaries with gamma linearization, a D65 white point
//! and the 2° observer.

use std::sync::OnceLock;

use crate::error::{ensure, Result};
use crate::image::{LabelMask, RgbImage};
use crate::par::Exec;

/// Candidate channels, in tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChannelId {
    R,
    G,
    B,
    Hue,
    Saturation,
    Value,
    LabL,
    LabA,
    LabB,
    Gray,
}

impl ChannelId {
    pub const ALL: [ChannelId; 10] = [
        ChannelId::R,
        ChannelId::G,
        ChannelId::B,
        ChannelId::Hue,
        ChannelId::Saturation,
        ChannelId::Value,
        ChannelId::LabL,
        ChannelId::LabA,
        ChannelId::LabB,
        ChannelId::Gray,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelId::R => "R",
            ChannelId::G => "G",
            ChannelId::B => "B",
            ChannelId::Hue => "H",
            ChannelId::Saturation => "S",
            ChannelId::Value => "V",
            ChannelId::LabL => "L",
            ChannelId::LabA => "a",
            ChannelId::LabB => "b",
            ChannelId::Gray => "Gray",
        }
    }
}

impl std::fmt::Display for ChannelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One normalized channel of a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPlane {
    pub channel: ChannelId,
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ChannelPlane {
    pub fn new(channel: ChannelId, width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        ensure!(
            values.len() == width * height,
            DimensionMismatch,
            "plane {width}x{height} needs {} values, got {}",
            width * height,
            values.len()
        );
        ensure!(
            values.iter().all(|v| (0.0..=1.0).contains(v)),
            InvalidData,
            "plane values must lie in [0, 1]"
        );
        Ok(Self {
            channel,
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// The three planes fed to the classifier, in feature order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePlanes {
    pub gray: ChannelPlane,
    pub saturation: ChannelPlane,
    pub a_channel: ChannelPlane,
}

impl FeaturePlanes {
    pub fn new(gray: ChannelPlane, saturation: ChannelPlane, a_channel: ChannelPlane) -> Result<Self> {
        let (w, h) = (gray.width, gray.height);
        ensure!(
            [&saturation, &a_channel]
                .iter()
                .all(|p| p.width == w && p.height == h),
            DimensionMismatch,
            "feature planes must share dimensions"
        );
        Ok(Self {
            gray,
            saturation,
            a_channel,
        })
    }

    pub fn width(&self) -> usize {
        self.gray.width
    }

    pub fn height(&self) -> usize {
        self.gray.height
    }

    pub fn planes(&self) -> [&ChannelPlane; 3] {
        [&self.gray, &self.saturation, &self.a_channel]
    }
}

// ---------------------------------------------------------------------------
// Per-pixel conversions
// ---------------------------------------------------------------------------

const LAB_A_RANGE: f64 = 110.0;

// D65 reference white, 2° observer.
const WHITE_X: f64 = 0.95047;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.08883;

fn srgb_to_linear_table() -> &'static [f64; 256] {
    static TABLE: OnceLock<[f64; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; 256];
        for (i, v) in t.iter_mut().enumerate() {
            let c = i as f64 / 255.0;
            *v = if c <= 0.04045 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            };
        }
        t
    })
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// CIELAB `(L*, a*, b*)` of an sRGB pixel.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = srgb_to_linear_table();
    let (r, g, b) = (lin[rgb[0] as usize], lin[rgb[1] as usize], lin[rgb[2] as usize]);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / WHITE_X), lab_f(y / WHITE_Y), lab_f(z / WHITE_Z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// HSV `(h in degrees, s, v)` with `s = 0` for black and `h = 0` for grays.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    [h, s, max]
}

pub fn gray_of(rgb: [u8; 3]) -> f64 {
    ((0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64) / 255.0).clamp(0.0, 1.0)
}

pub fn saturation_of(rgb: [u8; 3]) -> f64 {
    let max = rgb.iter().copied().max().unwrap_or(0);
    let min = rgb.iter().copied().min().unwrap_or(0);
    if max == 0 {
        0.0
    } else {
        (max - min) as f64 / max as f64
    }
}

fn normalize_opponent(v: f64) -> f64 {
    ((v + LAB_A_RANGE) / (2.0 * LAB_A_RANGE)).clamp(0.0, 1.0)
}

pub fn lab_a_of(rgb: [u8; 3]) -> f64 {
    normalize_opponent(srgb_to_lab(rgb)[1])
}

/// All ten normalized channel values, indexed by [`ChannelId::index`].
pub fn channel_values(rgb: [u8; 3]) -> [f64; 10] {
    let [h, s, v] = rgb_to_hsv(rgb);
    let [l, a, b] = srgb_to_lab(rgb);
    [
        rgb[0] as f64 / 255.0,
        rgb[1] as f64 / 255.0,
        rgb[2] as f64 / 255.0,
        (h / 360.0).clamp(0.0, 1.0),
        s,
        v,
        (l / 100.0).clamp(0.0, 1.0),
        normalize_opponent(a),
        normalize_opponent(b),
        gray_of(rgb),
    ]
}

// The small epsilon keeps exact multiples of 1/255 from flooring one bin low.
fn lut_bin(v: f64) -> usize {
    ((v * 255.0 + 1e-9).floor() as usize).min(255)
}

fn plane_from(img: &RgbImage, channel: ChannelId, f: impl Fn([u8; 3]) -> f64) -> ChannelPlane {
    let values = img.pixels().map(|p| f(p) as f32).collect();
    ChannelPlane {
        channel,
        width: img.width(),
        height: img.height(),
        values,
    }
}

pub fn rgb_to_gray(img: &RgbImage) -> ChannelPlane {
    plane_from(img, ChannelId::Gray, gray_of)
}

pub fn rgb_to_saturation(img: &RgbImage) -> ChannelPlane {
    plane_from(img, ChannelId::Saturation, saturation_of)
}

pub fn rgb_to_lab_a(img: &RgbImage) -> ChannelPlane {
    plane_from(img, ChannelId::LabA, lab_a_of)
}

/// Any of the ten candidate channels as a plane.
pub fn channel_plane(img: &RgbImage, channel: ChannelId) -> ChannelPlane {
    plane_from(img, channel, |p| channel_values(p)[channel.index()])
}

pub fn extract_feature_planes(img: &RgbImage) -> FeaturePlanes {
    FeaturePlanes {
        gray: rgb_to_gray(img),
        saturation: rgb_to_saturation(img),
        a_channel: rgb_to_lab_a(img),
    }
}

// ---------------------------------------------------------------------------
// Channel histograms
// ---------------------------------------------------------------------------

/// Class-conditional 256-bin histogram of one channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelLut {
    pub channel: ChannelId,
    pub bleeding_counts: [u64; 256],
    pub nonbleeding_counts: [u64; 256],
}

impl ChannelLut {
    pub fn empty(channel: ChannelId) -> Self {
        Self {
            channel,
            bleeding_counts: [0; 256],
            nonbleeding_counts: [0; 256],
        }
    }

    pub fn total_bleeding(&self) -> u64 {
        self.bleeding_counts.iter().sum()
    }

    pub fn total_nonbleeding(&self) -> u64 {
        self.nonbleeding_counts.iter().sum()
    }

    fn merge(&mut self, other: &ChannelLut) {
        for (a, b) in self.bleeding_counts.iter_mut().zip(&other.bleeding_counts) {
            *a += b;
        }
        for (a, b) in self
            .nonbleeding_counts
            .iter_mut()
            .zip(&other.nonbleeding_counts)
        {
            *a += b;
        }
    }

    /// `1 - Σ min(p_i, q_i)` over the normalized class histograms.
    pub fn separability(&self) -> Result<f64> {
        let (nb, nn) = (self.total_bleeding(), self.total_nonbleeding());
        ensure!(
            nb > 0 && nn > 0,
            InvalidData,
            "channel {} histogram needs both bleeding and non-bleeding counts",
            self.channel
        );
        Ok(histogram_intersection_distance(
            &self.bleeding_counts,
            &self.nonbleeding_counts,
        ))
    }
}

/// Histogram-intersection distance between two unnormalized histograms.
pub fn histogram_intersection_distance(p: &[u64], q: &[u64]) -> f64 {
    let sp: u64 = p.iter().sum();
    let sq: u64 = q.iter().sum();
    let overlap: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| (a as f64 / sp as f64).min(b as f64 / sq as f64))
        .sum();
    (1.0 - overlap).clamp(0.0, 1.0)
}

fn image_luts(img: &RgbImage, mask: &LabelMask) -> Vec<ChannelLut> {
    let mut luts: Vec<ChannelLut> = ChannelId::ALL.iter().map(|&c| ChannelLut::empty(c)).collect();
    for (px, &label) in img.pixels().zip(mask.labels()) {
        let values = channel_values(px);
        for (ci, lut) in luts.iter_mut().enumerate() {
            // 8-bit channels index directly
            let bin = if ci < 3 { px[ci] as usize } else { lut_bin(values[ci]) };
            if label == 1 {
                lut.bleeding_counts[bin] += 1;
            } else {
                lut.nonbleeding_counts[bin] += 1;
            }
        }
    }
    luts
}

/// Builds one class-conditional histogram per candidate channel over a
/// corpus. Per-image partials are summed, so the result does not depend on
/// the execution strategy.
pub fn build_channel_luts(images: &[RgbImage], masks: &[LabelMask], exec: Exec) -> Result<Vec<ChannelLut>> {
    ensure!(!images.is_empty(), InvalidArgument, "no images given");
    ensure!(
        images.len() == masks.len(),
        DimensionMismatch,
        "{} images but {} masks",
        images.len(),
        masks.len()
    );
    for (i, (img, mask)) in images.iter().zip(masks).enumerate() {
        ensure!(
            mask.same_shape(img.width(), img.height()),
            DimensionMismatch,
            "image {i} is {}x{} but its mask is {}x{}",
            img.width(),
            img.height(),
            mask.width(),
            mask.height()
        );
    }
    let partials = exec.map_range(images.len(), |i| image_luts(&images[i], &masks[i]));
    let mut total: Vec<ChannelLut> = ChannelId::ALL.iter().map(|&c| ChannelLut::empty(c)).collect();
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(total)
}

/// Channels sorted by descending separability; ties keep channel order.
pub fn rank_channels(luts: &[ChannelLut]) -> Result<Vec<(ChannelId, f64)>> {
    let mut scored = luts
        .iter()
        .map(|l| Ok((l.channel, l.separability()?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}
