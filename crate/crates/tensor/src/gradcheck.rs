//! Central finite-difference checks for scalar functions of tensors.

use crate::array::Array;
use crate::error::Result;
use crate::tensor::Tensor;

/// Worst relative error found by [`check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with an absolute floor so that tiny gradients compare by
/// absolute difference.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backprop gradients of `f` at `inputs` against central
/// differences with step `h`. `coords` limits how many coordinates per input
/// are probed (evenly spread); `None` probes all of them.
pub fn check_gradients(
    inputs: &[Array],
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
    h: f64,
    coords: Option<usize>,
) -> Result<GradReport> {
    let leaves: Vec<Tensor> = inputs.iter().cloned().map(Tensor::leaf).collect();
    let grads = f(&leaves)?.backward()?;
    let eval = |arrays: &[Array]| -> Result<f64> {
        let ts: Vec<Tensor> = arrays.iter().cloned().map(Tensor::constant).collect();
        f(&ts)?.item()
    };
    let mut report = GradReport {
        max_rel_err: 0.0,
        checked: 0,
    };
    for (i, leaf) in leaves.iter().enumerate() {
        let numel = inputs[i].numel();
        let analytic = grads
            .get(leaf)
            .cloned()
            .unwrap_or_else(|| Array::zeros(inputs[i].shape().to_vec()));
        let step = match coords {
            Some(c) if c > 0 && c < numel => numel / c,
            _ => 1,
        };
        for j in (0..numel).step_by(step.max(1)) {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let err = rel_err(analytic.data()[j], numeric, 1e-6);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
