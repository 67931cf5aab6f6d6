use proptest::prelude::*;

use segforge::dataset::{DatasetManifest, ManifestEntry, MaskRef, Source, Split};
use segforge::image::Image;
use segforge::metrics::{dice_binary, iou};
use segforge::morphology::{
    binarize, close, connected_components, dilate, erode, keep_largest, open, BinaryMask, StructuringElement,
};
use segforge::transform::{resize_mask, AugmentConfig, Transform};

fn mask(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| BinaryMask::from_bits(h, w, bits).unwrap())
    })
}

fn mask_pair(max: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        let bits = proptest::collection::vec(any::<bool>(), h * w);
        (bits.clone(), bits).prop_map(move |(a, b)| {
            (
                BinaryMask::from_bits(h, w, a).unwrap(),
                BinaryMask::from_bits(h, w, b).unwrap(),
            )
        })
    })
}

fn element() -> impl Strategy<Value = StructuringElement> {
    prop_oneof![
        (0usize..3).prop_map(|k| StructuringElement::square(2 * k + 1)),
        (0usize..3).prop_map(|k| StructuringElement::cross(2 * k + 1)),
    ]
}

proptest! {
    #[test]
    fn dilation_grows_and_erosion_shrinks(m in mask(20), se in element()) {
        prop_assert!(m.is_subset(&dilate(&m, &se, 1)));
        prop_assert!(erode(&m, &se, 1).is_subset(&m));
        prop_assert!(open(&m, &se).is_subset(&m));
    }

    #[test]
    fn closing_contains_the_interior_of_the_mask(m in mask(20)) {
        let se = StructuringElement::square(3);
        let c = close(&m, &se);
        let (h, w) = m.shape();
        for (y, x) in m.foreground() {
            if y >= 1 && x >= 1 && y + 1 < h && x + 1 < w {
                prop_assert!(c.get(y, x));
            }
        }
    }

    #[test]
    fn operations_are_monotone((a, b) in mask_pair(16), se in element()) {
        let small = a.intersection(&b).unwrap();
        prop_assert!(dilate(&small, &se, 1).is_subset(&dilate(&a, &se, 1)));
        prop_assert!(erode(&small, &se, 1).is_subset(&erode(&a, &se, 1)));
        prop_assert!(close(&small, &se).is_subset(&close(&a, &se)));
    }

    #[test]
    fn iterations_compose(m in mask(16)) {
        let se = StructuringElement::square(3);
        prop_assert_eq!(dilate(&m, &se, 2), dilate(&dilate(&m, &se, 1), &se, 1));
        prop_assert_eq!(dilate(&m, &se, 2), dilate(&m, &StructuringElement::square(5), 1));
        prop_assert_eq!(erode(&m, &se, 0), m);
    }

    #[test]
    fn keep_largest_keeps_whole_components(m in mask(20), k in 1usize..4) {
        let kept = keep_largest(&m, k).unwrap();
        prop_assert!(kept.is_subset(&m));
        let all = connected_components(&m);
        let left = connected_components(&kept);
        prop_assert_eq!(left.len(), all.len().min(k));
        let mut sizes = all.sizes.clone();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        let mut kept_sizes = left.sizes.clone();
        kept_sizes.sort_unstable_by(|a, b| b.cmp(a));
        prop_assert_eq!(&kept_sizes[..], &sizes[..left.len()]);
    }

    #[test]
    fn dice_and_iou_are_symmetric_and_bounded((a, b) in mask_pair(16)) {
        let d = dice_binary(&a, &b).unwrap();
        let j = iou(&a, &b).unwrap();
        prop_assert_eq!(d, dice_binary(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
        prop_assert!(j <= d + 1e-15);
        prop_assert_eq!(dice_binary(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn binarize_is_monotone_in_threshold(values in proptest::collection::vec(0.0f32..1.0, 64), t in 0.05f64..0.95) {
        let img = Image::from_vec(8, 8, values).unwrap();
        prop_assert!(binarize(&img, t + 0.04).is_subset(&binarize(&img, t)));
    }

    #[test]
    fn split_sizes_follow_the_fraction(counts in (0usize..30, 0usize..30, 0usize..30), f in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut m = DatasetManifest::new(".");
        for (src, n) in Source::ALL.into_iter().zip([counts.0, counts.1, counts.2]) {
            for i in 0..n {
                m.entries.push(ManifestEntry {
                    id: format!("{src}{i}"),
                    source: src,
                    split: Split::Test,
                    image: "i.png".into(),
                    mask: MaskRef::Single("m.png".into()),
                });
            }
        }
        prop_assume!(!m.is_empty());
        m.split(f, seed).unwrap();
        let n = m.len();
        prop_assert_eq!(m.count(Split::Train), (f * n as f64).round() as usize);
        for src in Source::ALL {
            let total = m.entries.iter().filter(|e| e.source == src).count();
            let train = m.entries.iter().filter(|e| e.source == src && e.split == Split::Train).count();
            prop_assert!((train as f64 - f * total as f64).abs() < 1.0 + 1e-9);
        }
        let again = { let mut c = m.clone(); c.split(f, seed).unwrap(); c };
        prop_assert_eq!(again, m);
    }

    #[test]
    fn mask_transform_is_thresholded_image_transform(m in mask(24), seed in any::<u64>()) {
        use rand::SeedableRng;
        let (h, w) = m.shape();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t = Transform::draw(&AugmentConfig::default(), h, w, &mut rng);
        let via_image = binarize(&t.apply_image(&Image::from_mask(&m)), 0.5);
        prop_assert_eq!(t.apply_mask(&m), via_image);
    }

    #[test]
    fn resizing_to_the_same_size_is_identity(m in mask(20)) {
        prop_assert_eq!(resize_mask(&m, m.shape()).unwrap(), m);
    }
}
