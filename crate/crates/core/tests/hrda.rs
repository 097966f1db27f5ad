use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segadapt::data::{CropBox, Image, LabelMap};
use segadapt::hrda::{
    context_prediction, coverage, fuse_predictions, hrda_source_loss, sample_boxes, sample_labeled_crops, slide_inference,
    window_origins, CropSpec,
};
use segadapt::model::{ModelConfig, SegModel, Weights};
use segadapt_tensor::{Array, Interp, Tensor};

fn spec(context: usize, detail: usize) -> CropSpec {
    CropSpec {
        context: [context, context],
        detail: [detail, detail],
        scale: 2,
        output_stride: 4,
    }
}

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::constant(Array::from_fn(shape, |_| rng.gen_range(lo..hi)))
}

proptest! {
    #[test]
    fn sampled_boxes_are_aligned_and_inside(hu in 4usize..10, wu in 4usize..10, seed: u64) {
        let s = spec(16, 16);
        let (h, w) = (hu * 8, wu * 8);
        let (c, d) = sample_boxes(h, w, &s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(c.y0 % 8 == 0 && c.x0 % 8 == 0 && d.y0 % 8 == 0 && d.x0 % 8 == 0);
        prop_assert!(c.fits_in(h, w) && d.fits_in(c.h, c.w));
        prop_assert_eq!((c.h, c.w, d.h, d.w), (32, 32, 16, 16));
    }

    #[test]
    fn windows_cover_every_pixel(total in 1usize..300, window in 1usize..100, stride in 1usize..100) {
        let stride = stride.min(window);
        let o = window_origins(total, window, stride);
        prop_assert_eq!(o[0], 0);
        prop_assert!(o.windows(2).all(|p| p[0] < p[1] && p[1] - p[0] <= stride));
        prop_assert!(o.last().unwrap() + window >= total);
        let cov = coverage(1, total, [1, window], [1, stride]);
        prop_assert!(cov.iter().all(|&c| c >= 1));
    }

    #[test]
    fn zero_attention_returns_the_upsampled_context(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = spec(16, 16);
        let y_c = random([1, 4, 4, 3], &mut rng, -1.0, 1.0);
        let y_d = random([1, 4, 4, 3], &mut rng, -1.0, 1.0);
        let a = Tensor::zeros([1, 4, 4, 1]);
        let b = CropBox::new(8 * rng.gen_range(0..3), 8 * rng.gen_range(0..3), 16, 16);
        for mode in [Interp::Nearest, Interp::Bilinear] {
            let fused = fuse_predictions(&y_c, &y_d, &a, &[b], &s, mode).unwrap();
            let up = y_c.resize(8, 8, mode).unwrap();
            prop_assert!(fused.value().allclose(up.value(), 1e-12));
        }
    }

    #[test]
    fn full_attention_nearest_switches_at_the_box(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = spec(16, 16);
        let y_c = random([1, 4, 4, 2], &mut rng, -1.0, 1.0);
        let y_d = random([1, 4, 4, 2], &mut rng, -1.0, 1.0);
        let a = Tensor::ones([1, 4, 4, 1]);
        let (by, bx) = (rng.gen_range(0..3), rng.gen_range(0..3));
        let b = CropBox::new(8 * by, 8 * bx, 16, 16);
        let fused = fuse_predictions(&y_c, &y_d, &a, &[b], &s, Interp::Nearest).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let inside = (2 * by..2 * by + 4).contains(&i) && (2 * bx..2 * bx + 4).contains(&j);
                for c in 0..2 {
                    let got = fused.data()[(i * 8 + j) * 2 + c];
                    if inside {
                        let want = y_d.data()[((i - 2 * by) * 4 + j - 2 * bx) * 2 + c];
                        prop_assert!((got - want).abs() < 1e-12);
                    } else {
                        prop_assert_eq!(got, y_c.data()[((i / 2) * 4 + j / 2) * 2 + c]);
                    }
                }
            }
        }
    }

    #[test]
    fn detail_loss_weight_interpolates(lambda in 0.0f64..=1.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fused = random([1, 4, 4, 3], &mut rng, -2.0, 2.0).softmax_last().unwrap();
        let y_d = random([1, 2, 2, 3], &mut rng, -2.0, 2.0);
        let hr = [LabelMap::new(4, 4, (0..16).map(|_| rng.gen_range(0..3)).collect()).unwrap()];
        let det = [LabelMap::new(4, 4, (0..16).map(|_| rng.gen_range(0..3)).collect()).unwrap()];
        let l = hrda_source_loss(&fused, &y_d, &hr, &det, lambda).unwrap();
        let f = l.fused.loss.item().unwrap();
        let d = l.detail.unwrap().loss.item().unwrap();
        prop_assert!((l.total.item().unwrap() - ((1.0 - lambda) * f + lambda * d)).abs() < 1e-12);
    }
}

#[test]
fn labeled_crops_follow_the_image_crops() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = Image::new(64, 64, (0..64 * 64 * 3).map(|_| rng.gen()).collect()).unwrap();
    let label = LabelMap::new(64, 64, (0..64 * 64).map(|i| (i % 5) as u8).collect()).unwrap();
    let s = spec(16, 16);
    for _ in 0..50 {
        let c = sample_labeled_crops(&img, &label, &s, &mut rng).unwrap();
        let cb = c.pair.context_box;
        let db = c.pair.detail_box;
        assert_eq!(c.label_hr, label.crop(&cb).unwrap());
        assert_eq!(c.label_detail, c.label_hr.crop(&db).unwrap());
    }
}

#[test]
fn misaligned_or_oversized_specs_are_rejected() {
    assert!(spec(10, 16).validate().is_err());
    assert!(spec(16, 12).validate().is_err());
    assert!(spec(16, 40).validate().is_err());
    assert!(sample_boxes(24, 64, &spec(16, 16), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn predictions_are_distributions() {
    let model = SegModel::new(ModelConfig::default()).unwrap();
    let params = model.init(&mut ChaCha8Rng::seed_from_u64(1));
    let w = Weights::constant(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random([1, 64, 64, 3], &mut rng, 0.0, 1.0);
    let s = CropSpec::default();
    for detail in [false, true] {
        let p = context_prediction(&model, &w, &x, &s, detail).unwrap();
        assert_eq!(p.shape(), &[1, 16, 16, model.num_classes()]);
        for row in p.data().chunks(model.num_classes()) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    let img = Image::new(64, 96, (0..64 * 96 * 3).map(|_| rng.gen()).collect()).unwrap();
    let probs = slide_inference(&model, &w, &img, &s, true).unwrap();
    assert_eq!(probs.shape(), &[64, 96, model.num_classes()]);
    for row in probs.data().chunks(model.num_classes()) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
