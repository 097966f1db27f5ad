use segadapt_tensor::gradcheck::check_gradients;
use segadapt_tensor::{Array, Conv2dParams, Interp, Result, Tensor};

fn rand_array(shape: &[usize], seed: u64) -> Array {
    let mut s = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    Array::from_fn(shape.to_vec(), |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

/// Reduces an arbitrary tensor to a scalar through fixed random weights so
/// that every output coordinate contributes a distinct gradient.
fn project(t: &Tensor, seed: u64) -> Result<Tensor> {
    let w = Tensor::constant(rand_array(t.shape(), seed));
    Ok(t.mul(&w)?.sum_all())
}

fn assert_grads(inputs: &[Array], f: impl Fn(&[Tensor]) -> Result<Tensor>) {
    let report = check_gradients(inputs, f, 1e-6, None).unwrap();
    assert!(report.checked > 0);
    assert!(report.max_rel_err < 1e-5, "max rel err {}", report.max_rel_err);
}

#[test]
fn elementwise_ops() {
    let a = rand_array(&[2, 3, 4], 1);
    let b = rand_array(&[3, 1], 2).map(|v| v + 2.5);
    assert_grads(&[a.clone(), b.clone()], |t| {
        let y = t[0].add(&t[1])?.mul(&t[0])?.sub(&t[1])?.div(&t[1])?;
        project(&y, 3)
    });
    assert_grads(&[a.clone()], |t| {
        let x = &t[0];
        let y = Tensor::cat(
            &[x.gelu(), x.sigmoid(), x.exp(), x.affine(2.0, 3.0).log(), x.sqr().affine(1.0, 0.1).sqrt()],
            2,
        )?;
        project(&y, 4)
    });
}

#[test]
fn reductions_and_shapes() {
    let a = rand_array(&[2, 3, 4], 5);
    assert_grads(&[a], |t| {
        let x = &t[0];
        let s = x.sum_last()?;
        let p = x.permute(&[2, 0, 1])?.reshape([4, 6])?.narrow(1, 1, 4)?;
        Ok(project(&s, 6)?.add(&project(&p, 7)?)?.add(&x.mean_all())?)
    });
    let img = rand_array(&[1, 3, 2, 2], 8);
    assert_grads(&[img], |t| project(&t[0].pad_hw(1, 0, 2, 1)?.crop_hw(0, 3, 1, 3)?, 9));
}

#[test]
fn matmuls() {
    let a = rand_array(&[2, 3, 4], 10);
    let b = rand_array(&[2, 4, 5], 11);
    let bt = rand_array(&[2, 5, 4], 12);
    assert_grads(&[a.clone(), b], |t| project(&t[0].bmm(&t[1], false)?, 13));
    assert_grads(&[a.clone(), bt], |t| project(&t[0].bmm(&t[1], true)?, 14));
    let w = rand_array(&[4, 6], 15);
    let bias = rand_array(&[6], 16);
    assert_grads(&[a, w, bias], |t| project(&t[0].linear(&t[1], Some(&t[2]))?, 17));
}

#[test]
fn convolutions() {
    let x = rand_array(&[2, 7, 6, 3], 20);
    for (k, p) in [
        (3, Conv2dParams::new(1, 1, 1)),
        (3, Conv2dParams::new(2, 1, 1)),
        (7, Conv2dParams::new(4, 3, 1)),
        (3, Conv2dParams::new(1, 2, 2)),
        (1, Conv2dParams::default()),
    ] {
        let w = rand_array(&[k, k, 3, 2], 21);
        let b = rand_array(&[2], 22);
        assert_grads(&[x.clone(), w, b], |t| project(&t[0].conv2d(&t[1], Some(&t[2]), p)?, 23));
    }
    for d in [1, 3] {
        let w = rand_array(&[3, 3, 3], 24);
        let b = rand_array(&[3], 25);
        assert_grads(&[x.clone(), w, b], |t| {
            project(&t[0].depthwise_conv2d(&t[1], Some(&t[2]), d, d)?, 26)
        });
    }
}

#[test]
fn normalizations() {
    let x = rand_array(&[3, 5], 30);
    let g = rand_array(&[5], 31);
    let b = rand_array(&[5], 32);
    assert_grads(&[x.clone(), g, b], |t| project(&t[0].layer_norm(&t[1], &t[2], 1e-6)?, 33));
    assert_grads(&[x.clone()], |t| project(&t[0].softmax_last()?, 34));
    assert_grads(&[x], |t| project(&t[0].log_softmax_last()?, 35));
}

#[test]
fn resizing() {
    let x = rand_array(&[1, 3, 4, 2], 40);
    for (h, w) in [(6, 8), (2, 2), (5, 3)] {
        for mode in [Interp::Bilinear, Interp::Nearest] {
            assert_grads(&[x.clone()], |t| project(&t[0].resize(h, w, mode)?, 41));
        }
    }
}

#[test]
fn nll() {
    let x = rand_array(&[4, 3], 50);
    assert_grads(&[x], |t| {
        let lp = t[0].log_softmax_last()?;
        Ok(lp.weighted_nll(&[0, 2, 255, 1], &[1.0, 0.5, 1.0, 0.25], 255)?.0)
    });
}
