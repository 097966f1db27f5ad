use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segadapt::data::{Image, LabelMap};
use segadapt::selftrain::{augment, classmix, classmix_with, make_pseudo_label, AugmentConfig, EdgeBands, EdgeIgnore};
use segadapt_tensor::Array;

fn probs(h: usize, w: usize, k: usize, seed: u64) -> Array {
    let raw = Array::from_fn([h, w, k], |i| (((i as u64 + 3) * (seed + 11) * 40503) % 97) as f64 + 1.0);
    let mut out = raw.clone();
    for (row, src) in out.data_mut().chunks_mut(k).zip(raw.data().chunks(k)) {
        let s: f64 = src.iter().map(|v| v * v).sum();
        for (o, v) in row.iter_mut().zip(src) {
            *o = v * v / s;
        }
    }
    out
}

proptest! {
    #[test]
    fn pseudo_label_quality_is_confident_share(seed in 0u64..200, tau in 0.05f64..0.95, top in 0usize..3, bottom in 0usize..3) {
        let p = probs(6, 5, 4, seed);
        let bands = EdgeBands { top, bottom };
        let pl = make_pseudo_label(&p, tau, bands).unwrap();
        let mut valid = 0;
        let mut confident = 0;
        for (i, row) in p.data().chunks(4).enumerate() {
            let y = i / 5;
            let inside = y >= top && y < 6 - bottom;
            prop_assert_eq!(pl.valid[i], inside);
            if inside {
                valid += 1;
                let best = row.iter().cloned().fold(f64::MIN, f64::max);
                confident += (best >= tau) as usize;
                prop_assert_eq!(row[pl.labels.data()[i] as usize], best);
            } else {
                prop_assert_eq!(pl.labels.data()[i], 255);
            }
        }
        let expect = if valid == 0 { 0.0 } else { confident as f64 / valid as f64 };
        prop_assert!((pl.quality - expect).abs() < 1e-12);
    }

    #[test]
    fn classmix_takes_each_pixel_from_one_side(src in prop::collection::vec(0u8..4, 16), seed in 0u64..100) {
        let src_label = LabelMap::new(4, 4, src).unwrap();
        let src_img = Image::filled(4, 4, [1.0, 0.0, 0.0]).unwrap();
        let tgt_img = Image::filled(4, 4, [0.0, 0.0, 1.0]).unwrap();
        let pl = make_pseudo_label(&probs(4, 4, 4, seed), 0.5, EdgeBands::default()).unwrap();
        let mixed = classmix(&src_img, &src_label, &tgt_img, &pl, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let pasted: std::collections::BTreeSet<u8> = (0..16).filter(|&i| mixed.from_source[i]).map(|i| src_label.data()[i]).collect();
        prop_assert_eq!(pasted.len(), src_label.classes_present(255).len().div_ceil(2));
        for i in 0..16 {
            let (y, x) = (i / 4, i % 4);
            if mixed.from_source[i] {
                prop_assert_eq!(mixed.image.pixel(y, x), [1.0, 0.0, 0.0]);
                prop_assert_eq!(mixed.label.data()[i], src_label.data()[i]);
                prop_assert_eq!(mixed.quality[i], 1.0);
            } else {
                prop_assert_eq!(mixed.image.pixel(y, x), [0.0, 0.0, 1.0]);
                prop_assert_eq!(mixed.label.data()[i], pl.labels.data()[i]);
                prop_assert_eq!(mixed.quality[i], pl.quality);
            }
        }
    }

    #[test]
    fn crop_bands_agree_with_full_bands(full in 32usize..200, y0 in 0usize..200, h in 1usize..64) {
        let e = EdgeIgnore { top: 15, bottom: 120, reference_height: 1024 };
        let y0 = y0 % full;
        let h = h.min(full - y0);
        let b = e.crop_bands(full, y0, h);
        let fb = e.bands(full);
        for r in 0..h {
            let row = y0 + r;
            let ignored_full = row < fb.top || row >= full - fb.bottom;
            let ignored_crop = r < b.top || r >= h - b.bottom;
            prop_assert_eq!(ignored_full, ignored_crop, "row {}", row);
        }
    }
}

#[test]
fn edge_bands_scale_with_height() {
    let e = EdgeIgnore::default();
    assert_eq!(e.bands(1024), EdgeBands { top: 15, bottom: 120 });
    assert_eq!(e.bands(512), EdgeBands { top: 8, bottom: 60 });
    assert_eq!(EdgeIgnore::none().bands(128), EdgeBands::default());
}

#[test]
fn explicit_classmix_with_nothing_selected_keeps_target() {
    let src_label = LabelMap::new(1, 2, vec![0, 1]).unwrap();
    let img_s = Image::filled(1, 2, [1.0; 3]).unwrap();
    let img_t = Image::filled(1, 2, [0.0; 3]).unwrap();
    let pl = make_pseudo_label(&probs(1, 2, 2, 0), 0.5, EdgeBands::default()).unwrap();
    let m = classmix_with(&img_s, &src_label, &img_t, &pl, &[]).unwrap();
    assert_eq!(m.image, img_t);
    assert_eq!(m.label, pl.labels);
}

#[test]
fn identity_augmentation_changes_nothing() {
    let img = Image::new(2, 2, (0..12).map(|i| i as f32 / 12.0).collect()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(augment(&img, &AugmentConfig::identity(), &mut rng), img);
    let strong = AugmentConfig { jitter_probability: 1.0, blur_probability: 1.0, ..Default::default() };
    let out = augment(&img, &strong, &mut rng);
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
}
