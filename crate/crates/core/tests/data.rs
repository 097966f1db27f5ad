use proptest::prelude::*;
use segadapt::data::{
    load_dataset, write_dataset, CropBox, Domain, Image, LabelMap, Scale, ToyDomainConfig, ToyShift, ToySplits,
};
use segadapt_tensor::Interp;

fn image(h: usize, w: usize, seed: u32) -> Image {
    let data = (0..h * w * 3).map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 256) as f32 / 255.0).collect();
    Image::new(h, w, data).unwrap()
}

proptest! {
    #[test]
    fn crop_copies_the_region(h in 1usize..24, w in 1usize..24, a in 0usize..24, b in 0usize..24, c in 1usize..24, d in 1usize..24, seed: u32) {
        let img = image(h, w, seed);
        let b = CropBox::new(a % h, b % w, 1 + c % (h - a % h), 1 + d % (w - b % w));
        let crop = img.crop(&b).unwrap();
        prop_assert_eq!((crop.height(), crop.width()), (b.h, b.w));
        for y in 0..b.h {
            for x in 0..b.w {
                prop_assert_eq!(crop.pixel(y, x), img.pixel(b.y0 + y, b.x0 + x));
            }
        }
    }

    #[test]
    fn out_of_bounds_crop_is_rejected(h in 1usize..16, w in 1usize..16, extra in 1usize..4) {
        let img = image(h, w, 1);
        prop_assert!(img.crop(&CropBox::new(0, 0, h + extra, w)).is_err());
        let label = LabelMap::filled(h, w, 0).unwrap();
        prop_assert!(label.crop(&CropBox::new(0, 0, h, w + extra)).is_err());
    }

    #[test]
    fn constant_image_survives_rescaling(h in 1usize..6, w in 1usize..6, s in 1usize..4, v in 0.0f32..1.0) {
        let img = Image::filled(h * s, w * s, [v, v, v]).unwrap();
        for mode in [Interp::Bilinear, Interp::Nearest] {
            let down = img.rescale(Scale::down(s).unwrap(), mode).unwrap();
            prop_assert_eq!((down.height(), down.width()), (h, w));
            prop_assert!(down.data().iter().all(|p| (p - v).abs() < 1e-6));
        }
    }
}

#[test]
fn toy_generation_is_deterministic() {
    let cfg = ToyDomainConfig {
        num_samples: 3,
        seed: 9,
        domain: Domain::Target,
        shift: ToyShift::standard(),
        ..Default::default()
    };
    let (a, b) = (cfg.dataset().unwrap(), cfg.dataset().unwrap());
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!((&x.image, &x.label, &x.id), (&y.image, &y.label, &y.id));
    }
    let other = ToyDomainConfig { seed: 10, ..cfg.clone() };
    assert_ne!(cfg.dataset().unwrap().samples[0].image, other.dataset().unwrap().samples[0].image);
}

#[test]
fn toy_splits_share_classes_and_labels_are_valid() {
    let splits = ToySplits::generate(0).unwrap();
    let k = splits.source.meta.num_classes();
    assert_eq!(splits.target.meta, splits.source.meta);
    for ds in [&splits.source, &splits.target, &splits.target_eval] {
        for s in ds.iter() {
            s.check_labels(k).unwrap();
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn dataset_round_trips_through_png() {
    let cfg = ToyDomainConfig {
        num_samples: 2,
        height: 32,
        width: 48,
        ..Default::default()
    };
    let ds = cfg.dataset().unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.meta, ds.meta);
    for (a, b) in back.iter().zip(ds.iter()) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.image, b.image);
    }
}

#[test]
fn missing_dataset_reports_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_dataset(dir.path().join("absent")).is_err());
}
