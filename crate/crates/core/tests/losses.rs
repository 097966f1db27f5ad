use proptest::prelude::*;
use segadapt::data::LabelMap;
use segadapt::losses::{
    downsample_thing_mask, feature_distance_loss, style_consistency_divergence, weighted_cross_entropy,
    weighted_cross_entropy_probs, Quality,
};
use segadapt_tensor::{Array, Tensor};

fn logits(n: usize, k: usize, seed: u64) -> Tensor {
    Tensor::constant(Array::from_fn([1, 1, n, k], |i| (((i as u64 + 1) * (seed + 7) * 2654435761) % 1000) as f64 / 250.0 - 2.0))
}

/// Direct per-pixel cross-entropy.
fn ce_oracle(z: &Tensor, target: &[u8], q: &[f64]) -> f64 {
    let k = *z.shape().last().unwrap();
    let mut total = 0.0;
    let mut n = 0;
    for (i, row) in z.data().chunks(k).enumerate() {
        if target[i] == 255 {
            continue;
        }
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        total += q[i] * (lse - row[target[i] as usize]);
        n += 1;
    }
    if n == 0 { 0.0 } else { total / n as f64 }
}

proptest! {
    #[test]
    fn cross_entropy_matches_direct_sum(
        raw in prop::collection::vec((0u8..5, 0.0f64..=1.0, any::<bool>()), 1..20),
        seed in 0u64..100,
    ) {
        let target: Vec<u8> = raw.iter().map(|&(t, _, ign)| if ign { 255 } else { t }).collect();
        let q: Vec<f64> = raw.iter().map(|r| r.1).collect();
        let z = logits(target.len(), 5, seed);
        let ce = weighted_cross_entropy(&z, &target, Quality::Map(&q)).unwrap();
        prop_assert!((ce.loss.item().unwrap() - ce_oracle(&z, &target, &q)).abs() < 1e-10);
        prop_assert_eq!(ce.contributing, target.iter().filter(|&&t| t != 255).count());
        let p = z.softmax_last().unwrap();
        let cp = weighted_cross_entropy_probs(&p, &target, Quality::Map(&q)).unwrap();
        prop_assert!((cp.loss.item().unwrap() - ce.loss.item().unwrap()).abs() < 1e-8);
    }

    #[test]
    fn zero_quality_gives_zero_loss(target in prop::collection::vec(0u8..3, 1..12)) {
        let z = logits(target.len(), 3, 1);
        let ce = weighted_cross_entropy(&z, &target, Quality::Scalar(0.0)).unwrap();
        prop_assert_eq!(ce.loss.item().unwrap(), 0.0);
    }

    #[test]
    fn divergence_is_symmetric_and_nonnegative(seed_a in 0u64..50, seed_b in 0u64..50) {
        let p = logits(6, 4, seed_a).softmax_last().unwrap();
        let q = logits(6, 4, seed_b).softmax_last().unwrap();
        let ab = style_consistency_divergence(&[p.clone(), q.clone()]).unwrap().item().unwrap();
        let ba = style_consistency_divergence(&[q, p.clone()]).unwrap().item().unwrap();
        prop_assert!(ab >= -1e-15 && ab <= std::f64::consts::LN_2 + 1e-12);
        prop_assert!((ab - ba).abs() < 1e-12);
        let same = style_consistency_divergence(&[p.clone(), p]).unwrap().item().unwrap();
        prop_assert!(same.abs() < 1e-12);
    }

    #[test]
    fn ratio_one_masks_nothing(data in prop::collection::vec(0u8..4, 16)) {
        let label = LabelMap::new(4, 4, data).unwrap();
        let mask = downsample_thing_mask(&label, &[true; 4], 1.0, 2, 2).unwrap();
        prop_assert!(mask.iter().all(|&m| m == 0));
    }

    #[test]
    fn stuff_only_flags_mask_nothing(data in prop::collection::vec(0u8..4, 16), r in 0.0f64..1.0) {
        let label = LabelMap::new(4, 4, data).unwrap();
        let mask = downsample_thing_mask(&label, &[false; 4], r, 2, 2).unwrap();
        prop_assert!(mask.iter().all(|&m| m == 0));
    }
}

#[test]
fn disjoint_divergence_reaches_ln2() {
    let p = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
    let q = Tensor::from_vec([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
    let d = style_consistency_divergence(&[p, q]).unwrap().item().unwrap();
    assert!((d - std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn feature_distance_averages_masked_norms() {
    let f_ref = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
    let f_stu = Tensor::from_vec([1, 1, 2, 2], vec![3.0, 4.0, 1.0, 0.0]).unwrap();
    let fd = feature_distance_loss(&f_ref, &f_stu, &[1, 1]).unwrap();
    assert!((fd.loss.item().unwrap() - 3.0).abs() < 1e-12);
    let only_first = feature_distance_loss(&f_ref, &f_stu, &[1, 0]).unwrap();
    assert!((only_first.loss.item().unwrap() - 5.0).abs() < 1e-12);
    let empty = feature_distance_loss(&f_ref, &f_stu, &[0, 0]).unwrap();
    assert!(empty.empty && empty.loss.item().unwrap() == 0.0);
}

#[test]
fn malformed_inputs_are_rejected() {
    let z = logits(3, 2, 0);
    assert!(weighted_cross_entropy(&z, &[0, 1, 0], Quality::Scalar(1.5)).is_err());
    assert!(weighted_cross_entropy(&z, &[0, 1, 0], Quality::Map(&[1.0])).is_err());
    let unnormalized = Tensor::from_vec([1, 1, 1, 2], vec![0.7, 0.7]).unwrap();
    assert!(style_consistency_divergence(&[unnormalized.clone(), unnormalized]).is_err());
    let label = LabelMap::filled(5, 4, 0).unwrap();
    assert!(downsample_thing_mask(&label, &[true], 0.5, 2, 2).is_err());
}
