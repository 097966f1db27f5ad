use crate::array::{strides, Array};
use crate::error::{invalid, Result, TensorError};
use crate::tensor::Tensor;

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn permute_array(a: &Array, perm: &[usize]) -> Array {
    let shape = a.shape();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let numel = a.numel();
    let mut out = Vec::with_capacity(numel);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let data = a.data();
    for _ in 0..numel {
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Array::new(out_shape, out).expect("permuted shape")
}

impl Tensor {
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let value = self.value().reshape(shape)?;
        let in_shape = self.shape().to_vec();
        Ok(Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _| Ok(vec![Some(g.reshape(in_shape.clone())?)])),
        ))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return invalid("permute", format!("{perm:?} is not a permutation of rank {rank}"));
        }
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(Tensor::from_op(
            permute_array(self.value(), perm),
            vec![self.clone()],
            Box::new(move |g, _| Ok(vec![Some(permute_array(g, &inverse))])),
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return invalid(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            );
        }
        if start == 0 && len == shape[axis] {
            return Ok(self.clone());
        }
        let (outer, dim, inner) = split_at_axis(&shape, axis);
        let data = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(Tensor::from_op(
            Array::new(out_shape, out)?,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gi = vec![0.0; shape.iter().product()];
                let gd = g.data();
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * len * inner;
                    gi[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                Ok(vec![Some(Array::new(shape.clone(), gi)?)])
            }),
        ))
    }

    pub fn cat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let Some(first) = tensors.first() else {
            return invalid("cat", "no tensors");
        };
        if tensors.len() == 1 {
            return Ok(first.clone());
        }
        let base = first.shape().to_vec();
        if axis >= base.len() {
            return invalid("cat", format!("axis {axis} out of range for {base:?}"));
        }
        for t in tensors {
            let s = t.shape();
            let same_rank = s.len() == base.len();
            if !same_rank || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(TensorError::ShapeMismatch {
                    op: "cat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let dims: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = dims.iter().sum();
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &d) in tensors.iter().zip(&dims) {
                let chunk = d * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let shapes: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape().to_vec()).collect();
        Ok(Tensor::from_op(
            Array::new(out_shape, out)?,
            tensors.to_vec(),
            Box::new(move |g, needs| {
                let gd = g.data();
                let mut grads: Vec<Option<Vec<f64>>> = shapes
                    .iter()
                    .zip(needs)
                    .map(|(s, &n)| n.then(|| Vec::with_capacity(s.iter().product())))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gv, &d) in grads.iter_mut().zip(&dims) {
                        let chunk = d * inner;
                        if let Some(gv) = gv {
                            gv.extend_from_slice(&gd[off..off + chunk]);
                        }
                        off += chunk;
                    }
                }
                grads
                    .into_iter()
                    .zip(&shapes)
                    .map(|(gv, s)| gv.map(|v| Array::new(s.clone(), v)).transpose())
                    .collect()
            }),
        ))
    }

    /// Zero-pads the spatial axes of an NHWC tensor.
    pub fn pad_hw(&self, top: usize, bottom: usize, left: usize, right: usize) -> Result<Tensor> {
        let (n, h, w, c) = self.dims4()?;
        let (ho, wo) = (h + top + bottom, w + left + right);
        let mut out = vec![0.0; n * ho * wo * c];
        let data = self.data();
        for b in 0..n {
            for y in 0..h {
                let src = ((b * h + y) * w) * c;
                let dst = ((b * ho + y + top) * wo + left) * c;
                out[dst..dst + w * c].copy_from_slice(&data[src..src + w * c]);
            }
        }
        Ok(Tensor::from_op(
            Array::new([n, ho, wo, c], out)?,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gi = vec![0.0; n * h * w * c];
                for b in 0..n {
                    for y in 0..h {
                        let dst = ((b * h + y) * w) * c;
                        let src = ((b * ho + y + top) * wo + left) * c;
                        gi[dst..dst + w * c].copy_from_slice(&gd[src..src + w * c]);
                    }
                }
                Ok(vec![Some(Array::new([n, h, w, c], gi)?)])
            }),
        ))
    }

    /// Spatial crop of an NHWC tensor.
    pub fn crop_hw(&self, y0: usize, h: usize, x0: usize, w: usize) -> Result<Tensor> {
        self.narrow(1, y0, h)?.narrow(2, x0, w)
    }
}
