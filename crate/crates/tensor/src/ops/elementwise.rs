use crate::array::{strides, Array};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every output position with the matching flat offsets into two
/// broadcast operands.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let numel: usize = out.iter().product();
    if numel == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for flat in 0..numel {
        f(flat, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

/// Sums a gradient of broadcast shape `out` back down to `shape`.
#[cfg(test)]
fn sum_to_shape(grad: &Array, shape: &[usize]) -> Array {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out = grad.shape();
    let s = broadcast_strides(shape, out);
    let zero = vec![0; out.len()];
    let mut acc = vec![0.0; shape.iter().product()];
    let g = grad.data();
    for_each_broadcast(out, &s, &zero, |flat, o, _| acc[o] += g[flat]);
    Array::new(shape.to_vec(), acc).expect("reduced shape")
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

fn binary(lhs: &Tensor, rhs: &Tensor, op: BinOp) -> Result<Tensor> {
    let a = lhs.value().clone();
    let b = rhs.value().clone();
    let out_shape = broadcast_shape(op.name(), a.shape(), b.shape())?;
    let value = if a.shape() == b.shape() {
        a.zip_map(&b, |x, y| op.apply(x, y))?
    } else {
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        let mut out = vec![0.0; out_shape.iter().product()];
        let (da, db) = (a.data(), b.data());
        for_each_broadcast(&out_shape, &sa, &sb, |flat, oa, ob| {
            out[flat] = op.apply(da[oa], db[ob])
        });
        Array::new(out_shape.clone(), out)?
    };
    Ok(Tensor::from_op(
        value,
        vec![lhs.clone(), rhs.clone()],
        Box::new(move |g, needs| {
            let out_shape = g.shape().to_vec();
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(b.shape(), &out_shape);
            let (da, db, gd) = (a.data(), b.data(), g.data());
            let mut ga = needs[0].then(|| vec![0.0; a.numel()]);
            let mut gb = needs[1].then(|| vec![0.0; b.numel()]);
            for_each_broadcast(&out_shape, &sa, &sb, |flat, oa, ob| {
                let gv = gd[flat];
                let (dl, dr) = match op {
                    BinOp::Add => (gv, gv),
                    BinOp::Sub => (gv, -gv),
                    BinOp::Mul => (gv * db[ob], gv * da[oa]),
                    BinOp::Div => (gv / db[ob], -gv * da[oa] / (db[ob] * db[ob])),
                };
                if let Some(ga) = ga.as_mut() {
                    ga[oa] += dl;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ob] += dr;
                }
            });
            Ok(vec![
                ga.map(|v| Array::new(a.shape().to_vec(), v)).transpose()?,
                gb.map(|v| Array::new(b.shape().to_vec(), v)).transpose()?,
            ])
        }),
    ))
}

/// Elementwise map with a derivative expressed through input and output.
fn unary(
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let input = x.value().clone();
    let out = input.map(f);
    let saved = out.clone();
    Tensor::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let gi: Vec<f64> = g
                .data()
                .iter()
                .zip(input.data())
                .zip(saved.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            Ok(vec![Some(Array::new(input.shape().to_vec(), gi)?)])
        }),
    )
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Tensor {
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinOp::Add)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinOp::Sub)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinOp::Mul)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinOp::Div)
    }

    /// `self * mul + add`.
    pub fn affine(&self, mul: f64, add: f64) -> Tensor {
        unary(self, move |x| x * mul + add, move |_, _| mul)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.affine(s, 0.0)
    }

    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        unary(self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqr(&self) -> Tensor {
        unary(self, |x| x * x, |x, _| 2.0 * x)
    }

    /// Square root with the subgradient 0 at the origin.
    pub fn sqrt(&self) -> Tensor {
        unary(self, f64::sqrt, |_, y| if y > 0.0 { 0.5 / y } else { 0.0 })
    }

    pub fn relu(&self) -> Tensor {
        unary(self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Tensor {
        unary(
            self,
            |x| 0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2)),
            |x, _| {
                let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
                cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
            },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(
            self,
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    /// `max(x, lo)`; gradient passes only where `x > lo`.
    pub fn clamp_min(&self, lo: f64) -> Tensor {
        unary(self, move |x| x.max(lo), move |x, _| if x > lo { 1.0 } else { 0.0 })
    }
}
