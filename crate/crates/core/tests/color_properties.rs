use bleedseg::color::{
    build_channel_luts, channel_values, extract_feature_planes, histogram_intersection_distance, lab_a_of,
    rank_channels, saturation_of, ChannelId,
};
use bleedseg::{Exec, LabelMask, RgbImage};
use proptest::prelude::*;

fn image_and_mask(w: usize, h: usize) -> impl Strategy<Value = (RgbImage, LabelMask)> {
    (
        prop::collection::vec(any::<u8>(), w * h * 3),
        prop::collection::vec(0u8..=1, w * h),
    )
        .prop_map(move |(px, labels)| {
            (
                RgbImage::new(w, h, px).unwrap(),
                LabelMask::new(w, h, labels).unwrap(),
            )
        })
}

proptest! {
    #[test]
    fn every_channel_is_normalized(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
        for v in channel_values([r, g, b]) {
            prop_assert!((0.0..=1.0).contains(&v), "{v} out of range for {:?}", [r, g, b]);
        }
    }

    #[test]
    fn achromatic_pixels_have_no_saturation_or_redness(v in any::<u8>()) {
        prop_assert_eq!(saturation_of([v, v, v]), 0.0);
        prop_assert!((lab_a_of([v, v, v]) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn feature_planes_stay_in_unit_range((img, _) in image_and_mask(7, 6)) {
        let planes = extract_feature_planes(&img);
        for plane in planes.planes() {
            prop_assert!(plane.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn lut_totals_match_pixel_counts(pairs in prop::collection::vec(image_and_mask(6, 5), 1..4)) {
        let (imgs, masks): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let luts = build_channel_luts(&imgs, &masks, Exec::Sequential).unwrap();
        let pos: u64 = masks.iter().map(|m| m.count_positive() as u64).sum();
        let total = (imgs.len() * 30) as u64;
        prop_assert_eq!(luts.len(), ChannelId::ALL.len());
        for lut in &luts {
            prop_assert_eq!(lut.total_bleeding(), pos);
            prop_assert_eq!(lut.total_nonbleeding(), total - pos);
        }
        let par = build_channel_luts(&imgs, &masks, Exec::Parallel).unwrap();
        prop_assert_eq!(luts, par);
    }

    #[test]
    fn separability_is_symmetric_and_bounded(
        p in prop::collection::vec(0u64..50, 256),
        q in prop::collection::vec(0u64..50, 256),
    ) {
        prop_assume!(p.iter().sum::<u64>() > 0 && q.iter().sum::<u64>() > 0);
        let d = histogram_intersection_distance(&p, &q);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - histogram_intersection_distance(&q, &p)).abs() < 1e-12);
        prop_assert!(histogram_intersection_distance(&p, &p).abs() < 1e-12);
    }
}

#[test]
fn ranking_lists_all_channels_once() {
    let img = RgbImage::new(6, 5, (0..90).map(|i| (i * 37 % 256) as u8).collect()).unwrap();
    let mask = LabelMask::new(6, 5, (0..30).map(|i| u8::from(i % 4 == 0)).collect()).unwrap();
    let luts = build_channel_luts(&[img], &[mask], Exec::Sequential).unwrap();
    let ranked = rank_channels(&luts).unwrap();
    assert_eq!(ranked.len(), 10);
    let mut seen: Vec<ChannelId> = ranked.iter().map(|(c, _)| *c).collect();
    seen.sort();
    assert_eq!(seen, ChannelId::ALL.to_vec());
    assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
}
