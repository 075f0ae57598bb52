use bleedseg::color::extract_feature_planes;
use bleedseg::patch::{build_balanced_training_set, extract_patch, kfold_split, BalanceConfig};
use bleedseg::{Exec, LabelMask, RgbImage};
use proptest::prelude::*;

fn random_image(w: usize, h: usize) -> impl Strategy<Value = RgbImage> {
    prop::collection::vec(any::<u8>(), w * h * 3).prop_map(move |px| RgbImage::new(w, h, px).unwrap())
}

proptest! {
    #[test]
    fn interior_patch_is_a_plain_window(img in random_image(9, 8), x in 2usize..7, y in 2usize..6) {
        let planes = extract_feature_planes(&img);
        let feats = extract_patch(&planes, x, y, 5).unwrap();
        let mut k = 0;
        for plane in planes.planes() {
            for dy in 0..5 {
                for dx in 0..5 {
                    prop_assert_eq!(feats[k], plane.get(x + dx - 2, y + dy - 2));
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn border_patches_only_read_image_values(img in random_image(5, 5), x in 0usize..5, y in 0usize..5) {
        let planes = extract_feature_planes(&img);
        let feats = extract_patch(&planes, x, y, 5).unwrap();
        // each window entry comes from the same plane somewhere in the image
        for (c, plane) in planes.planes().iter().enumerate() {
            for v in &feats[c * 25..(c + 1) * 25] {
                prop_assert!(plane.values().contains(v));
            }
            prop_assert_eq!(feats[c * 25 + 12], plane.get(x, y));
        }
    }

    #[test]
    fn balanced_set_has_equal_classes(
        labels in prop::collection::vec(prop::bool::weighted(0.2), 64),
        seed in any::<u64>(),
    ) {
        let pos = labels.iter().filter(|&&b| b).count();
        prop_assume!(pos > 0 && pos < 32);
        let img = RgbImage::new(8, 8, (0..192).map(|i| (i * 7 % 251) as u8).collect()).unwrap();
        let mask = LabelMask::new(8, 8, labels.iter().map(|&b| u8::from(b)).collect()).unwrap();
        let cfg = BalanceConfig { patch_size: 3, seed, positive_cap: 50_000 };
        let ds = build_balanced_training_set(&[img.clone()], &[mask.clone()], cfg, Exec::Sequential).unwrap();
        let (neg, p) = ds.class_counts();
        prop_assert_eq!(p, pos);
        prop_assert_eq!(neg, pos);
        let again = build_balanced_training_set(&[img], &[mask], cfg, Exec::Parallel).unwrap();
        prop_assert_eq!(ds, again);
    }

    #[test]
    fn folds_partition_the_images(n in 2usize..80, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let split = kfold_split(n, k, seed).unwrap();
        let mut all: Vec<usize> = (0..k).flat_map(|f| split.test_indices(f).to_vec()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for f in 0..k {
            let size = split.test_indices(f).len();
            prop_assert!(size == n / k || size == n / k + 1);
            let train = split.train_indices(f);
            prop_assert_eq!(train.len() + size, n);
            prop_assert!(train.iter().all(|i| !split.test_indices(f).contains(i)));
        }
    }
}

#[test]
fn fifty_images_make_five_folds_of_ten() {
    let split = kfold_split(50, 5, 3).unwrap();
    assert!((0..5).all(|f| split.test_indices(f).len() == 10));
}
