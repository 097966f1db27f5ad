use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Row-major matrix view: `trans` reads the buffer as its transpose.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub trans: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, trans: false }
    }

    /// Logical transpose without copying.
    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            trans: !self.trans,
            ..self
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            // Stored as cols x rows.
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out (+)= a * b` where `out` is row-major `a.rows x b.cols`.
pub(crate) fn gemm(a: Mat, b: Mat, out: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.len(), a.rows * b.cols);
    debug_assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths were checked above against the logical shapes,
    // and the strides describe those same row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Batched matrix product `(B, M, K) x (B, K, N) -> (B, M, N)`. With
    /// `transpose_rhs` the right operand is stored as `(B, N, K)`.
    pub fn bmm(&self, rhs: &Tensor, transpose_rhs: bool) -> Result<Tensor> {
        let (batch, m, k) = self.dims3()?;
        let (rb, r1, r2) = rhs.dims3()?;
        let (rk, n) = if transpose_rhs { (r2, r1) } else { (r1, r2) };
        if rb != batch || rk != k {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let a = self.value().clone();
        let b = rhs.value().clone();
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            let am = Mat::new(&a.data()[i * m * k..(i + 1) * m * k], m, k);
            let bm = rhs_mat(&b.data()[i * k * n..(i + 1) * k * n], k, n, transpose_rhs);
            gemm(am, bm, &mut out[i * m * n..(i + 1) * m * n], false);
        }
        Ok(Tensor::from_op(
            Array::new([batch, m, n], out)?,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, needs| {
                let gd = g.data();
                let mut ga = needs[0].then(|| vec![0.0; batch * m * k]);
                let mut gb = needs[1].then(|| vec![0.0; batch * k * n]);
                for i in 0..batch {
                    let gm = Mat::new(&gd[i * m * n..(i + 1) * m * n], m, n);
                    let bm = rhs_mat(&b.data()[i * k * n..(i + 1) * k * n], k, n, transpose_rhs);
                    let am = Mat::new(&a.data()[i * m * k..(i + 1) * m * k], m, k);
                    if let Some(ga) = ga.as_mut() {
                        gemm(gm, bm.t(), &mut ga[i * m * k..(i + 1) * m * k], false);
                    }
                    if let Some(gb) = gb.as_mut() {
                        let dst = &mut gb[i * k * n..(i + 1) * k * n];
                        if transpose_rhs {
                            gemm(gm.t(), am, dst, false);
                        } else {
                            gemm(am.t(), gm, dst, false);
                        }
                    }
                }
                Ok(vec![
                    ga.map(|v| Array::new(a.shape().to_vec(), v)).transpose()?,
                    gb.map(|v| Array::new(b.shape().to_vec(), v)).transpose()?,
                ])
            }),
        ))
    }

    /// Affine map over the last axis: `x (..., C_in) * w (C_in, C_out) + b`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let cin = *shape.last().unwrap_or(&0);
        let (wi, cout) = match weight.shape() {
            &[a, b] => (a, b),
            s => {
                return Err(TensorError::Rank {
                    op: "linear",
                    expected: 2,
                    got: s.to_vec(),
                })
            }
        };
        if wi != cin {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: shape,
                rhs: weight.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear bias",
                    lhs: vec![cout],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let rows = if cin == 0 { 0 } else { self.numel() / cin };
        let x = self.value().clone();
        let w = weight.value().clone();
        let mut out = vec![0.0; rows * cout];
        if let Some(b) = bias {
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(b.data());
            }
        }
        gemm(
            Mat::new(x.data(), rows, cin),
            Mat::new(w.data(), cin, cout),
            &mut out,
            bias.is_some(),
        );
        let mut out_shape = shape.clone();
        *out_shape.last_mut().expect("rank >= 1") = cout;
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            Array::new(out_shape, out)?,
            parents,
            Box::new(move |g, needs| {
                let gm = Mat::new(g.data(), rows, cout);
                let gx = needs[0]
                    .then(|| {
                        let mut v = vec![0.0; rows * cin];
                        gemm(gm, Mat::new(w.data(), cin, cout).t(), &mut v, false);
                        Array::new(shape.clone(), v)
                    })
                    .transpose()?;
                let gw = needs[1]
                    .then(|| {
                        let mut v = vec![0.0; cin * cout];
                        gemm(Mat::new(x.data(), rows, cin).t(), gm, &mut v, false);
                        Array::new([cin, cout], v)
                    })
                    .transpose()?;
                let mut grads = vec![gx, gw];
                if needs.len() == 3 {
                    grads.push(if needs[2] {
                        Some(Array::new([cout], column_sums(g.data(), cout))?)
                    } else {
                        None
                    });
                }
                Ok(grads)
            }),
        ))
    }
}

fn rhs_mat(data: &[f64], k: usize, n: usize, transposed: bool) -> Mat<'_> {
    if transposed {
        Mat::new(data, n, k).t()
    } else {
        Mat::new(data, k, n)
    }
}

pub(crate) fn column_sums(data: &[f64], cols: usize) -> Vec<f64> {
    let mut acc = vec![0.0; cols];
    for row in data.chunks_exact(cols) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1., 2., 3., 4.];
        let b = [5., 6., 7., 8.];
        let mut c = [0.0; 4];
        gemm(Mat::new(&a, 2, 2), Mat::new(&b, 2, 2), &mut c, false);
        assert_eq!(c, [19., 22., 43., 50.]);
        gemm(Mat::new(&a, 2, 2).t(), Mat::new(&b, 2, 2), &mut c, false);
        assert_eq!(c, [26., 30., 38., 44.]);
        gemm(Mat::new(&a, 2, 2), Mat::new(&b, 2, 2).t(), &mut c, false);
        assert_eq!(c, [17., 23., 39., 53.]);
    }

    #[test]
    fn bmm_transposed_rhs_matches_plain() {
        let a = Tensor::from_vec([1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::from_vec([1, 3, 2], vec![1., 0., 0., 1., 1., 1.]).unwrap();
        let bt = b.permute(&[0, 2, 1]).unwrap();
        let c1 = a.bmm(&b, false).unwrap();
        let c2 = a.bmm(&bt, true).unwrap();
        assert_eq!(c1.data(), c2.data());
        assert_eq!(c1.data(), &[4., 5., 10., 11.]);
    }

    #[test]
    fn linear_with_bias() {
        let x = Tensor::from_vec([2, 2], vec![1., 2., 3., 4.]).unwrap();
        let w = Tensor::from_vec([2, 1], vec![1., -1.]).unwrap();
        let b = Tensor::from_vec([1], vec![10.]).unwrap();
        let y = x.linear(&w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[9., 9.]);
    }
}
