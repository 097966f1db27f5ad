use crate::array::Array;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

impl Tensor {
    /// Weighted negative log-likelihood over class log-probabilities stored on
    /// the last axis.
    ///
    /// Returns `-sum_i w_i * logp[i, t_i] / n`, where `n` counts the positions
    /// whose target is not `ignore`, together with `n`. When every position is
    /// ignored the loss is a constant zero.
    pub fn weighted_nll(&self, targets: &[usize], weights: &[f64], ignore: usize) -> Result<(Tensor, usize)> {
        let Some(&k) = self.shape().last() else {
            return invalid("weighted_nll", "scalar input");
        };
        let rows = if k == 0 { 0 } else { self.numel() / k };
        if targets.len() != rows || weights.len() != rows {
            return invalid(
                "weighted_nll",
                format!("{rows} positions but {} targets and {} weights", targets.len(), weights.len()),
            );
        }
        let mut count = 0usize;
        let mut total = 0.0;
        let lp = self.data();
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if t == ignore {
                continue;
            }
            if t >= k {
                return invalid("weighted_nll", format!("target {t} out of range for {k} classes"));
            }
            count += 1;
            total -= w * lp[i * k + t];
        }
        if count == 0 {
            return Ok((Tensor::scalar(0.0), 0));
        }
        let norm = 1.0 / count as f64;
        let shape = self.shape().to_vec();
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        let loss = Tensor::from_op(
            Array::scalar(total * norm),
            vec![self.clone()],
            Box::new(move |g, _| {
                let gv = g.data()[0] * norm;
                let mut gi = vec![0.0; rows * k];
                for (i, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
                    if t != ignore {
                        gi[i * k + t] = -w * gv;
                    }
                }
                Ok(vec![Some(Array::new(shape.clone(), gi)?)])
            }),
        );
        Ok((loss, count))
    }
}
