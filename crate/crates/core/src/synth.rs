//! Seeded synthetic corpus: dark-red disc-shaped bleeding regions on pinkish
//! mucosa under uneven illumination.
//!
//! Illumination multiplies every pixel by a per-image level and a radial
//! falloff, so brightness-like channels (R, G, B, V, L, gray) overlap between
//! classes while chromatic ratios stay apart. Masks mark exactly the disc
//! interiors.

use std::f64::consts::PI;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};
use crate::image::{LabelMask, RgbImage};
use crate::par::Exec;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn image_ext(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }

    pub fn mask_ext(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "pgm",
            ImageFormat::Png => "png",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Inclusive range of bleeding regions per image.
    pub blobs: (usize, usize),
    /// Inclusive clamp on region radius in pixels.
    pub radius: (f64, f64),
    /// Target share of bleeding pixels per image.
    pub bleeding_fraction: f64,
    /// Per-channel Gaussian noise, in 8-bit units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 50,
            width: 256,
            height: 256,
            blobs: (1, 2),
            radius: (1.5, 12.0),
            bleeding_fraction: 0.002,
            noise_sigma: 4.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.count > 0, InvalidArgument, "image count must be positive");
        ensure!(
            self.width >= 16 && self.height >= 16,
            InvalidArgument,
            "synthetic images must be at least 16x16"
        );
        ensure!(
            self.blobs.0 <= self.blobs.1,
            InvalidArgument,
            "blob count range {:?} is empty",
            self.blobs
        );
        ensure!(
            self.radius.0 > 0.0 && self.radius.0 <= self.radius.1,
            InvalidArgument,
            "radius range {:?} is invalid",
            self.radius
        );
        ensure!(
            (0.0..0.5).contains(&self.bleeding_fraction),
            InvalidArgument,
            "bleeding fraction must be in [0, 0.5)"
        );
        ensure!(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            InvalidArgument,
            "noise sigma must be non-negative"
        );
        Ok(())
    }
}

const BLOB_MIN_FALLOFF: f64 = 0.75;

/// Radial vignette around the capsule's light axis. It darkens towards the
/// lumen edges, so dim mucosa shares brightness with blood.
struct Lighting {
    cx: f64,
    cy: f64,
    reach: f64,
}

impl Lighting {
    fn falloff(&self, x: f64, y: f64) -> f64 {
        let d2 = ((x - self.cx).powi(2) + (y - self.cy).powi(2)) / (self.reach * self.reach);
        (1.0 - d2).clamp(0.15, 1.0)
    }
}

/// Color with red level `r`, green as a share of red and blue as a share of
/// green, so hue and saturation stay put while brightness varies.
fn tone(rng: &mut Rng, r: Range<f64>, g_over_r: Range<f64>, b_over_g: Range<f64>) -> [f64; 3] {
    let r = rng.random_range(r);
    let g = r * rng.random_range(g_over_r);
    [r, g, g * rng.random_range(b_over_g)]
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    cx: f64,
    cy: f64,
    r: f64,
    color: [f64; 3],
}

fn place_blobs(spec: &SyntheticSpec, light: &Lighting, rng: &mut Rng) -> Vec<Blob> {
    let n = rng.random_range(spec.blobs.0..=spec.blobs.1);
    if n == 0 {
        return Vec::new();
    }
    let target = spec.bleeding_fraction * (spec.width * spec.height) as f64;
    let base_r = (target / (n as f64 * PI)).sqrt();
    let mut blobs: Vec<Blob> = Vec::with_capacity(n);
    for _ in 0..n {
        let r = (base_r * rng.random_range(0.85..1.15)).clamp(spec.radius.0, spec.radius.1);
        let margin = r + 3.0;
        let (w, h) = (spec.width as f64, spec.height as f64);
        let mut center = (light.cx, light.cy);
        for _ in 0..200 {
            let c = (
                rng.random_range(margin..(w - margin).max(margin + 1.0)),
                rng.random_range(margin..(h - margin).max(margin + 1.0)),
            );
            let free = blobs
                .iter()
                .all(|b| ((b.cx - c.0).powi(2) + (b.cy - c.1).powi(2)).sqrt() > b.r + r + 4.0);
            center = c;
            // blood is only placed on the lit part of the wall
            if free && light.falloff(c.0, c.1) >= BLOB_MIN_FALLOFF {
                break;
            }
        }
        let color = tone(rng, 150.0..205.0, 0.06..0.16, 0.8..1.1);
        blobs.push(Blob {
            cx: center.0,
            cy: center.1,
            r,
            color,
        });
    }
    blobs
}

/// Generates image `index` of the corpus. Each image has its own derived
/// random stream, so images can be produced in any order.
pub fn generate_one(spec: &SyntheticSpec, index: usize) -> Result<(RgbImage, LabelMask)> {
    spec.validate()?;
    let mut rng = rng::derived(spec.seed, rng::STREAM_SYNTH, index as u64);
    let (w, h) = (spec.width, spec.height);

    let mucosa = tone(&mut rng, 190.0..235.0, 0.58..0.68, 0.72..0.88);
    let level = rng.random_range(0.8..1.0);
    let light = Lighting {
        cx: rng.random_range(0.35..0.65) * w as f64,
        cy: rng.random_range(0.35..0.65) * h as f64,
        reach: 0.6 * w.max(h) as f64,
    };
    let (fx, fy, phase) = (
        rng.random_range(1.0..3.0) * 2.0 * PI / w as f64,
        rng.random_range(1.0..3.0) * 2.0 * PI / h as f64,
        rng.random_range(0.0..2.0 * PI),
    );
    let blobs = place_blobs(spec, &light, &mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma validated");

    let mut data = Vec::with_capacity(w * h * 3);
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let texture = 1.0 + 0.05 * (fx * xf + phase).sin() * (fy * yf).cos();
            let illum = level * light.falloff(xf, yf) * texture;
            let inside = blobs
                .iter()
                .find(|b| (xf - b.cx).powi(2) + (yf - b.cy).powi(2) <= b.r * b.r);
            let base = inside.map_or(mucosa, |b| b.color);
            for c in base {
                let v = c * illum + if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
            labels.push(u8::from(inside.is_some()));
        }
    }
    Ok((RgbImage::new(w, h, data)?, LabelMask::new(w, h, labels)?))
}

pub fn generate(spec: &SyntheticSpec, exec: Exec) -> Result<Vec<(RgbImage, LabelMask)>> {
    spec.validate()?;
    exec.map_range(spec.count, |i| generate_one(spec, i))
        .into_iter()
        .collect()
}

/// File stem of image `index`, shared by the frame and its mask.
pub fn stem(index: usize) -> String {
    format!("synth_{index:04}")
}

/// Writes the corpus as `<out>/images/<stem>.<ext>` and
/// `<out>/masks/<stem>.<ext>`.
pub fn write_corpus(out: &Path, spec: &SyntheticSpec, format: ImageFormat, exec: Exec) -> Result<()> {
    let corpus = generate(spec, exec)?;
    let (img_dir, mask_dir) = (out.join("images"), out.join("masks"));
    for dir in [&img_dir, &mask_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for (i, (img, mask)) in corpus.iter().enumerate() {
        img.save(&img_dir.join(format!("{}.{}", stem(i), format.image_ext())))?;
        mask.save(&mask_dir.join(format!("{}.{}", stem(i), format.mask_ext())))?;
    }
    Ok(())
}

/// Share of bleeding pixels over a whole corpus.
pub fn bleeding_fraction(masks: &[LabelMask]) -> f64 {
    let pos: usize = masks.iter().map(LabelMask::count_positive).sum();
    let total: usize = masks.iter().map(|m| m.labels().len()).sum();
    pos as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_mark_disc_interiors_only() {
        let spec = SyntheticSpec {
            count: 3,
            ..SyntheticSpec::default()
        };
        for i in 0..3 {
            let (img, mask) = generate_one(&spec, i).unwrap();
            assert_eq!((img.width(), img.height()), (256, 256));
            assert!(mask.count_positive() > 0);
        }
    }

    #[test]
    fn zero_blobs_give_empty_masks() {
        let spec = SyntheticSpec {
            count: 4,
            blobs: (0, 0),
            ..SyntheticSpec::default()
        };
        let corpus = generate(&spec, Exec::Sequential).unwrap();
        assert!(corpus.iter().all(|(_, m)| m.count_positive() == 0));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec {
            count: 2,
            seed: 17,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec, Exec::Sequential).unwrap();
        let b = generate(&spec, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticSpec { seed: 18, ..spec }, Exec::Sequential).unwrap();
        assert_ne!(a, c);
    }
}
