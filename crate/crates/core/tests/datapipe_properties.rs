use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scnet::datapipe::{
    augment, batch_iterator, crop, hflip, imbalance_stats, rotate, split_holdout, valid_region, vflip, AugmentConfig,
    Record, Sample,
};

fn sample(w: u32, h: u32, seed: u32) -> Sample {
    let v = |x: u32, y: u32| (x.wrapping_mul(31) ^ y.wrapping_mul(17) ^ seed) as u8;
    Sample {
        id: "s".into(),
        image: RgbImage::from_fn(w, h, |x, y| Rgb([v(x, y), v(y, x), 7])),
        mask: GrayImage::from_fn(w, h, |x, y| Luma([v(x, y) & 1])),
        edge: Some(GrayImage::from_fn(w, h, |x, y| Luma([(v(x, y) >> 1) & 1]))),
    }
}

fn records(n: usize) -> Vec<Record> {
    (0..n)
        .map(|i| Record {
            id: format!("r{i:03}"),
            image: format!("{i}.png").into(),
            mask: format!("{i}_m.png").into(),
            edge: None,
            dataset: String::new(),
        })
        .collect()
}

proptest! {
    #[test]
    fn flips_are_involutions(w in 1u32..20, h in 1u32..20, seed in any::<u32>()) {
        let s = sample(w, h, seed);
        prop_assert_eq!(hflip(&hflip(&s)), s.clone());
        prop_assert_eq!(vflip(&vflip(&s)), s);
    }

    #[test]
    fn holdout_partitions_the_records(n in 0usize..60, fraction in 0.01..0.99f64, seed in any::<u64>()) {
        let all = records(n);
        let (train, test) = split_holdout(&all, fraction, seed).unwrap();
        prop_assert_eq!(test.len(), (n as f64 * fraction + 1e-9).floor() as usize);
        prop_assert_eq!(train.len() + test.len(), n);
        let mut ids: Vec<&str> = train.iter().chain(&test).map(|r| r.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(split_holdout(&all, fraction, seed).unwrap(), (train, test));
    }

    #[test]
    fn batches_cover_each_index_once(n in 0usize..50, batch in 1usize..9, seed in any::<u64>(), epoch in 0u64..5) {
        let b = batch_iterator(n, batch, seed, epoch, true);
        let mut all: Vec<usize> = b.iter().flatten().cloned().collect();
        prop_assert!(b.iter().all(|x| !x.is_empty() && x.len() <= batch));
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(b, batch_iterator(n, batch, seed, epoch, true));
    }

    #[test]
    fn valid_region_fits_inside_the_rotated_image(w in 8u32..200, h in 8u32..200, deg in 0.0..=90.0f64) {
        let (vw, vh) = valid_region(w, h, deg);
        prop_assert!(vw >= 1 && vh >= 1 && vw <= w && vh <= h);
        // Corners of the centred rectangle, rotated back, stay in the source.
        let (s, c) = deg.to_radians().sin_cos();
        for (dx, dy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
            let (x, y) = (dx * f64::from(vw) / 2.0, dy * f64::from(vh) / 2.0);
            let (rx, ry) = (c * x + s * y, -s * x + c * y);
            prop_assert!(rx.abs() <= f64::from(w) / 2.0 + 1e-6 && ry.abs() <= f64::from(h) / 2.0 + 1e-6);
        }
    }

    #[test]
    fn augmentation_keeps_channels_aligned(seed in any::<u64>(), size in 8u32..32) {
        let s = sample(48, 40, 3);
        let cfg = AugmentConfig { crop_size: size, crops_per_image: 2, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for a in augment(&s, &cfg, &mut rng).unwrap() {
            prop_assert_eq!(a.image.dimensions(), (size, size));
            prop_assert_eq!(a.mask.dimensions(), (size, size));
            prop_assert_eq!(a.edge.as_ref().unwrap().dimensions(), (size, size));
            prop_assert!(a.mask.pixels().all(|p| p.0[0] <= 1));
        }
    }
}

#[test]
fn quarter_turn_moves_pixels_exactly() {
    let s = sample(9, 9, 5);
    let r = rotate(&s, 90.0);
    // The bottom-left corner moves to the top-left.
    assert_eq!(r.image.get_pixel(0, 0), s.image.get_pixel(0, 8));
    assert_eq!(r.mask.get_pixel(0, 0), s.mask.get_pixel(0, 8));
    assert_eq!(r.edge.as_ref().unwrap().get_pixel(0, 0), s.edge.as_ref().unwrap().get_pixel(0, 8));
    assert_eq!(rotate(&rotate(&rotate(&rotate(&s, 90.0), 90.0), 90.0), 90.0), s);
}

#[test]
fn crop_takes_the_same_window_from_every_channel() {
    let s = sample(20, 16, 9);
    let c = crop(&s, 3, 4, 5, 6);
    assert_eq!(c.image.get_pixel(0, 0), s.image.get_pixel(3, 4));
    assert_eq!(c.mask.get_pixel(4, 5), s.mask.get_pixel(7, 9));
    assert_eq!(c.edge.unwrap().get_pixel(2, 1), s.edge.as_ref().unwrap().get_pixel(5, 5));
}

#[test]
fn imbalance_shares_are_percentages() {
    let m = GrayImage::from_fn(10, 10, |x, _| Luma([u8::from(x < 3)]));
    let s = imbalance_stats([&m]);
    assert_eq!((s.crack, s.non_crack, s.pixels), (30.0, 70.0, 100));
}
