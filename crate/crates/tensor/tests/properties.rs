use proptest::prelude::*;
use segadapt_tensor::{Interp, Tensor};

proptest! {
    #[test]
    fn resize_preserves_constants(v in -10.0f64..10.0, h in 1usize..6, w in 1usize..6, oh in 1usize..9, ow in 1usize..9) {
        let x = Tensor::constant(segadapt_tensor::Array::full([1, h, w, 2], v));
        for mode in [Interp::Bilinear, Interp::Nearest] {
            let y = x.resize(oh, ow, mode).unwrap();
            prop_assert!(y.data().iter().all(|&u| u == v));
        }
    }

    #[test]
    fn softmax_shift_invariant(row in proptest::collection::vec(-20.0f64..20.0, 1..8), c in -50.0f64..50.0) {
        let k = row.len();
        let a = Tensor::from_vec([1, k], row.clone()).unwrap().softmax_last().unwrap();
        let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
        let b = Tensor::from_vec([1, k], shifted).unwrap().softmax_last().unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
