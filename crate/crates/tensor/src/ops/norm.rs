use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn last_dim(t: &Tensor, op: &'static str) -> Result<usize> {
    match t.shape().last() {
        Some(&k) if k > 0 => Ok(k),
        _ => Err(TensorError::Invalid {
            op,
            msg: format!("needs a non-empty last axis, got {:?}", t.shape()),
        }),
    }
}

impl Tensor {
    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let c = last_dim(self, "layer_norm")?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let rows = self.numel() / c;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; self.numel()];
        let (gd, bd) = (gamma.data(), beta.data());
        for (r, row) in self.data().chunks_exact(c).enumerate() {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let xh = (row[j] - mean) * is;
                xhat[r * c + j] = xh;
                out[r * c + j] = xh * gd[j] + bd[j];
            }
        }
        let shape = self.shape().to_vec();
        let gamma_v = gamma.value().clone();
        Ok(Tensor::from_op(
            Array::new(shape.clone(), out)?,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, needs| {
                let gd = g.data();
                let gam = gamma_v.data();
                let mut gx = needs[0].then(|| vec![0.0; rows * c]);
                let mut ggam = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for r in 0..rows {
                    let go = &gd[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    for j in 0..c {
                        ggam[j] += go[j] * xh[j];
                        gbeta[j] += go[j];
                    }
                    if let Some(gx) = gx.as_mut() {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            let d = go[j] * gam[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        for j in 0..c {
                            let d = go[j] * gam[j];
                            gx[r * c + j] = inv_std[r] * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
                Ok(vec![
                    gx.map(|v| Array::new(shape.clone(), v)).transpose()?,
                    needs[1].then(|| Array::new([c], ggam)).transpose()?,
                    needs[2].then(|| Array::new([c], gbeta)).transpose()?,
                ])
            }),
        ))
    }

    pub fn softmax_last(&self) -> Result<Tensor> {
        let k = last_dim(self, "softmax_last")?;
        let mut out = self.value().clone();
        for row in out.data_mut().chunks_exact_mut(k) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let saved = out.clone();
        Ok(Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = g.clone();
                for (gr, yr) in gi.data_mut().chunks_exact_mut(k).zip(saved.data().chunks_exact(k)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (gv, yv) in gr.iter_mut().zip(yr) {
                        *gv = yv * (*gv - dot);
                    }
                }
                Ok(vec![Some(gi)])
            }),
        ))
    }

    pub fn log_softmax_last(&self) -> Result<Tensor> {
        let k = last_dim(self, "log_softmax_last")?;
        let mut out = self.value().clone();
        for row in out.data_mut().chunks_exact_mut(k) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let saved = out.clone();
        Ok(Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = g.clone();
                for (gr, lr) in gi.data_mut().chunks_exact_mut(k).zip(saved.data().chunks_exact(k)) {
                    let s: f64 = gr.iter().sum();
                    for (gv, lv) in gr.iter_mut().zip(lr) {
                        *gv -= lv.exp() * s;
                    }
                }
                Ok(vec![Some(gi)])
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let x = Tensor::from_vec([2, 3], vec![1., 2., 3., 1000., 1001., 1002.]).unwrap();
        let s = x.softmax_last().unwrap();
        for r in s.data().chunks(3) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for j in 0..3 {
            assert!((s.data()[j] - s.data()[3 + j]).abs() < 1e-12);
        }
        let ls = x.log_softmax_last().unwrap();
        for (a, b) in ls.data().iter().zip(s.data()) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_normalizes() {
        let x = Tensor::from_vec([1, 4], vec![1., 2., 3., 4.]).unwrap();
        let y = x
            .layer_norm(&Tensor::ones([4]), &Tensor::zeros([4]), 0.0)
            .unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}
