//! Patch features, class-balanced sampling and image-level k-fold splits.
//!
//! A pixel's feature vector is the `p × p` window centered on it, read from
//! the gray, saturation and a* planes in that order, each window row-major.
//! Windows crossing the border are mirror-padded without repeating the edge
//! pixel (`-1 -> 1`, `n -> n - 2`).

use rand::seq::{index, SliceRandom};

use crate::color::{extract_feature_planes, FeaturePlanes};
use crate::error::{ensure, Result};
use crate::image::{LabelMask, RgbImage};
use crate::par::Exec;
use crate::rng;

/// Default cap on the number of bleeding samples per training set.
pub const DEFAULT_POSITIVE_CAP: usize = 50_000;

/// Where a sample was taken from: `(image index, x, y)`.
pub type SampleOrigin = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct PixelSample {
    pub features: Vec<f32>,
    pub label: u8,
    /// Absent for samples read back from a dataset file.
    pub origin: Option<SampleOrigin>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<PixelSample>,
    pub patch_size: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn new(samples: Vec<PixelSample>, patch_size: usize, seed: u64) -> Result<Self> {
        let dim = feature_len(patch_size)?;
        ensure!(
            samples.iter().all(|s| s.features.len() == dim && s.label <= 1),
            InvalidData,
            "every sample needs {dim} features and a 0/1 label"
        );
        Ok(Self {
            samples,
            patch_size,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    /// `(non-bleeding, bleeding)` sample counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.samples.iter().filter(|s| s.label == 1).count();
        (self.samples.len() - pos, pos)
    }
}

/// Feature vector length for a patch side, which must be odd.
pub fn feature_len(patch_size: usize) -> Result<usize> {
    ensure!(
        patch_size % 2 == 1,
        InvalidArgument,
        "patch size must be odd and positive, got {patch_size}"
    );
    Ok(3 * patch_size * patch_size)
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Fills `out` (length `3 p²`) without bounds validation. Callers guarantee
/// `(x, y)` is inside and `p / 2` is smaller than both image sides.
#[inline]
pub(crate) fn write_patch(planes: &FeaturePlanes, x: usize, y: usize, patch_size: usize, out: &mut [f32]) {
    let half = (patch_size / 2) as isize;
    let (w, h) = (planes.width(), planes.height());
    let mut k = 0;
    for plane in planes.planes() {
        let values = plane.values();
        for dy in -half..=half {
            let row = reflect(y as isize + dy, h) * w;
            for dx in -half..=half {
                out[k] = values[row + reflect(x as isize + dx, w)];
                k += 1;
            }
        }
    }
}

pub(crate) fn check_patch_geometry(planes: &FeaturePlanes, patch_size: usize) -> Result<usize> {
    let dim = feature_len(patch_size)?;
    let half = patch_size / 2;
    ensure!(
        half < planes.width() && half < planes.height(),
        InvalidArgument,
        "patch size {patch_size} too large for {}x{} planes",
        planes.width(),
        planes.height()
    );
    Ok(dim)
}

/// Feature vector of the window centered on `(x, y)`.
pub fn extract_patch(planes: &FeaturePlanes, x: usize, y: usize, patch_size: usize) -> Result<Vec<f32>> {
    let dim = check_patch_geometry(planes, patch_size)?;
    ensure!(
        x < planes.width() && y < planes.height(),
        InvalidArgument,
        "pixel ({x}, {y}) outside {}x{} image",
        planes.width(),
        planes.height()
    );
    let mut out = vec![0.0; dim];
    write_patch(planes, x, y, patch_size, &mut out);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BalanceConfig {
    pub patch_size: usize,
    pub seed: u64,
    /// Upper bound on bleeding samples (and therefore on each class).
    pub positive_cap: usize,
}

impl BalanceConfig {
    pub fn new(patch_size: usize, seed: u64) -> Self {
        Self {
            patch_size,
            seed,
            positive_cap: DEFAULT_POSITIVE_CAP,
        }
    }
}

/// Balanced training set from raw frames; see [`build_balanced_from_planes`].
pub fn build_balanced_training_set(
    images: &[RgbImage],
    masks: &[LabelMask],
    config: BalanceConfig,
    exec: Exec,
) -> Result<Dataset> {
    let planes = exec.map_slice(images, extract_feature_planes);
    let planes: Vec<&FeaturePlanes> = planes.iter().collect();
    let masks: Vec<&LabelMask> = masks.iter().collect();
    build_balanced_from_planes(&planes, &masks, config, exec)
}

/// Takes every bleeding pixel (up to the cap) and the same number of
/// non-bleeding pixels drawn uniformly without replacement over the corpus.
///
/// Sample selection is one sequential seeded pass; only feature extraction
/// is parallel, so the result is independent of `exec`.
pub fn build_balanced_from_planes(
    planes: &[&FeaturePlanes],
    masks: &[&LabelMask],
    config: BalanceConfig,
    exec: Exec,
) -> Result<Dataset> {
    ensure!(
        planes.len() == masks.len(),
        DimensionMismatch,
        "{} images but {} masks",
        planes.len(),
        masks.len()
    );
    for (i, (p, m)) in planes.iter().zip(masks).enumerate() {
        ensure!(
            m.same_shape(p.width(), p.height()),
            DimensionMismatch,
            "image {i} and its mask differ in size"
        );
        check_patch_geometry(p, config.patch_size)?;
    }

    let mut positives: Vec<SampleOrigin> = Vec::new();
    let mut negative_total = 0usize;
    for (i, m) in masks.iter().enumerate() {
        for (k, &label) in m.labels().iter().enumerate() {
            if label == 1 {
                positives.push((i, k % m.width(), k / m.width()));
            } else {
                negative_total += 1;
            }
        }
    }
    ensure!(!positives.is_empty(), InvalidData, "corpus has no bleeding pixels");
    ensure!(negative_total > 0, InvalidData, "corpus has no non-bleeding pixels");

    let n = positives.len().min(negative_total).min(config.positive_cap);
    let mut rng = rng::derived(config.seed, rng::STREAM_BALANCE, 0);

    if positives.len() > n {
        let mut keep = index::sample(&mut rng, positives.len(), n).into_vec();
        keep.sort_unstable();
        positives = keep.into_iter().map(|k| positives[k]).collect();
    }

    let mut picks = index::sample(&mut rng, negative_total, n).into_vec();
    picks.sort_unstable();
    let mut negatives = Vec::with_capacity(n);
    let mut next = picks.iter().copied().peekable();
    let mut seen = 0usize;
    'outer: for (i, m) in masks.iter().enumerate() {
        for (k, &label) in m.labels().iter().enumerate() {
            if label == 1 {
                continue;
            }
            while next.peek() == Some(&seen) {
                negatives.push((i, k % m.width(), k / m.width()));
                next.next();
            }
            seen += 1;
            if next.peek().is_none() {
                break 'outer;
            }
        }
    }

    let chosen: Vec<(SampleOrigin, u8)> = positives
        .into_iter()
        .map(|o| (o, 1))
        .chain(negatives.into_iter().map(|o| (o, 0)))
        .collect();
    let dim = 3 * config.patch_size * config.patch_size;
    let samples = exec.map_slice(&chosen, |&((i, x, y), label)| {
        let mut features = vec![0.0; dim];
        write_patch(planes[i], x, y, config.patch_size, &mut features);
        PixelSample {
            features,
            label,
            origin: Some((i, x, y)),
        }
    });
    Ok(Dataset {
        samples,
        patch_size: config.patch_size,
        seed: config.seed,
    })
}

/// Partition of image indices into `k` folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

/// Seeded random partition of `0..n_images` into `k` near-equal folds. The
/// first `n mod k` folds get one extra image.
pub fn kfold_split(n_images: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    ensure!(k >= 2, InvalidArgument, "k must be at least 2, got {k}");
    ensure!(
        n_images >= k,
        InvalidArgument,
        "cannot split {n_images} images into {k} folds"
    );
    let mut perm: Vec<usize> = (0..n_images).collect();
    perm.shuffle(&mut rng::derived(seed, rng::STREAM_FOLDS, 0));
    let (base, extra) = (n_images / k, n_images % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = perm[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldSplit { k, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::{ChannelId, ChannelPlane};

    fn planes_from(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> f32) -> FeaturePlanes {
        let mk = |c: usize, id| {
            let v = (0..w * h).map(|k| f(c, k % w, k / w)).collect();
            ChannelPlane::new(id, w, h, v).unwrap()
        };
        FeaturePlanes::new(
            mk(0, ChannelId::Gray),
            mk(1, ChannelId::Saturation),
            mk(2, ChannelId::LabA),
        )
        .unwrap()
    }

    #[test]
    fn constant_planes_give_constant_patch() {
        let p = planes_from(6, 7, |_, _, _| 0.4);
        for (x, y) in [(0, 0), (5, 6), (3, 3)] {
            let f = extract_patch(&p, x, y, 5).unwrap();
            assert_eq!(f.len(), 75);
            assert!(f.iter().all(|&v| v == 0.4));
        }
    }

    #[test]
    fn corner_mirrors_without_repeating_edge() {
        // row 0 of the gray plane is [a, b, c, ...] = [0.0, 0.1, 0.2, ...]
        let p = planes_from(6, 6, |c, x, y| if c == 0 { x as f32 / 10.0 + y as f32 / 100.0 } else { 0.0 });
        let f = extract_patch(&p, 0, 0, 5).unwrap();
        // window row for dy = 0 is index 2 of the 5 gray rows
        let row = &f[10..15];
        assert_eq!(row, &[0.2, 0.1, 0.0, 0.1, 0.2]);
        // dy = -2 reflects to image row 2
        let want = [0.22, 0.12, 0.02, 0.12, 0.22];
        assert!(f[0..5].iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn patch_errors() {
        let p = planes_from(5, 5, |_, _, _| 0.0);
        assert!(extract_patch(&p, 5, 0, 5).is_err());
        assert!(extract_patch(&p, 0, 0, 4).is_err());
        assert!(extract_patch(&p, 0, 0, 11).is_err());
    }

    fn corpus(positives: &[usize]) -> (Vec<RgbImage>, Vec<LabelMask>) {
        let mut images = Vec::new();
        let mut masks = Vec::new();
        for (i, &npos) in positives.iter().enumerate() {
            let data = (0..20 * 20 * 3).map(|k| ((k * 31 + i * 7) % 256) as u8).collect();
            images.push(RgbImage::new(20, 20, data).unwrap());
            let labels = (0..400).map(|k| u8::from(k < npos)).collect();
            masks.push(LabelMask::new(20, 20, labels).unwrap());
        }
        (images, masks)
    }

    #[test]
    fn balanced_set_counts_and_determinism() {
        let (images, masks) = corpus(&[50, 70, 0]);
        let cfg = BalanceConfig::new(5, 11);
        let a = build_balanced_training_set(&images, &masks, cfg, Exec::Sequential).unwrap();
        assert_eq!(a.class_counts(), (120, 120));
        assert_eq!(a.len(), 240);
        let b = build_balanced_training_set(&images, &masks, cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let c = build_balanced_training_set(&images, &masks, BalanceConfig::new(5, 12), Exec::Sequential).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn balanced_set_respects_cap_and_rejects_empty() {
        let (images, masks) = corpus(&[50, 70]);
        let cfg = BalanceConfig {
            positive_cap: 30,
            ..BalanceConfig::new(5, 1)
        };
        let d = build_balanced_training_set(&images, &masks, cfg, Exec::Sequential).unwrap();
        assert_eq!(d.class_counts(), (30, 30));

        let (images, masks) = corpus(&[0, 0]);
        assert!(build_balanced_training_set(&images, &masks, BalanceConfig::new(5, 1), Exec::Sequential).is_err());
    }

    #[test]
    fn rare_positives_discard_most_negatives() {
        // 0.2% bleeding: 2 of 1000 pixels per image over 5 images
        let mut images = Vec::new();
        let mut masks = Vec::new();
        for _ in 0..5 {
            images.push(RgbImage::uniform(40, 25, [200, 120, 110]).unwrap());
            let labels = (0..1000).map(|k| u8::from(k == 3 || k == 500)).collect();
            masks.push(LabelMask::new(40, 25, labels).unwrap());
        }
        let d = build_balanced_training_set(&images, &masks, BalanceConfig::new(5, 3), Exec::Sequential).unwrap();
        assert_eq!(d.class_counts(), (10, 10));
    }

    #[test]
    fn fold_examples() {
        let s = kfold_split(50, 5, 9).unwrap();
        assert!(s.folds.iter().all(|f| f.len() == 10));
        let s = kfold_split(7, 3, 9).unwrap();
        let sizes: Vec<_> = s.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        assert_eq!(kfold_split(7, 3, 9).unwrap(), s);
        assert!(kfold_split(3, 4, 0).is_err());
        assert!(kfold_split(3, 1, 0).is_err());
    }
}
