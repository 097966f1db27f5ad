use crate::array::Array;
use crate::error::{invalid, Result, TensorError};
use crate::ops::matmul::{column_sums, gemm, Mat};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    fn out_len(&self, len: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        (len + 2 * self.padding)
            .checked_sub(span)
            .map(|v| v / self.stride + 1)
    }
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    p: Conv2dParams,
}

impl Geometry {
    /// Input coordinate hit by output `o` and tap `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let pos = (o * self.p.stride + k * self.p.dilation) as isize - self.p.padding as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.p.stride == 1 && self.p.padding == 0
    }
}

fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let cols = g.kh * g.kw * g.cin;
    let mut col = vec![0.0; g.n * g.ho * g.wo * cols];
    let mut row = 0;
    for b in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let dst = &mut col[row * cols..(row + 1) * cols];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.w) else { continue };
                        let s = ((b * g.h + iy) * g.w + ix) * g.cin;
                        let d = (ky * g.kw + kx) * g.cin;
                        dst[d..d + g.cin].copy_from_slice(&x[s..s + g.cin]);
                    }
                }
                row += 1;
            }
        }
    }
    col
}

fn col2im(col: &[f64], g: &Geometry) -> Vec<f64> {
    let cols = g.kh * g.kw * g.cin;
    let mut x = vec![0.0; g.n * g.h * g.w * g.cin];
    let mut row = 0;
    for b in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let src = &col[row * cols..(row + 1) * cols];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.w) else { continue };
                        let d = ((b * g.h + iy) * g.w + ix) * g.cin;
                        let s = (ky * g.kw + kx) * g.cin;
                        for (xv, cv) in x[d..d + g.cin].iter_mut().zip(&src[s..s + g.cin]) {
                            *xv += cv;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

impl Tensor {
    /// Dense 2-D convolution of an NHWC input with a `(kh, kw, C_in, C_out)`
    /// kernel.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, p: Conv2dParams) -> Result<Tensor> {
        let (n, h, w, cin) = self.dims4()?;
        let (kh, kw, wcin, cout) = weight.dims4()?;
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if p.stride == 0 || p.dilation == 0 {
            return invalid("conv2d", "stride and dilation must be positive");
        }
        let (Some(ho), Some(wo)) = (p.out_len(h, kh), p.out_len(w, kw)) else {
            return invalid("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{w}"));
        };
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![cout],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let geo = Geometry { n, h, w, cin, kh, kw, ho, wo, p };
        let rows = n * ho * wo;
        let kdim = kh * kw * cin;
        let col = if geo.is_pointwise() {
            self.value().clone()
        } else {
            Array::new([rows, kdim], im2col(self.data(), &geo))?
        };
        let wv = weight.value().clone();
        let mut out = vec![0.0; rows * cout];
        if let Some(b) = bias {
            for r in out.chunks_exact_mut(cout) {
                r.copy_from_slice(b.data());
            }
        }
        gemm(Mat::new(col.data(), rows, kdim), Mat::new(wv.data(), kdim, cout), &mut out, bias.is_some());
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let in_shape = self.shape().to_vec();
        let w_shape = weight.shape().to_vec();
        Ok(Tensor::from_op(
            Array::new([n, ho, wo, cout], out)?,
            parents,
            Box::new(move |g, needs| {
                let gm = Mat::new(g.data(), rows, cout);
                let gx = needs[0]
                    .then(|| {
                        let mut dcol = vec![0.0; rows * kdim];
                        gemm(gm, Mat::new(wv.data(), kdim, cout).t(), &mut dcol, false);
                        let dx = if geo.is_pointwise() { dcol } else { col2im(&dcol, &geo) };
                        Array::new(in_shape.clone(), dx)
                    })
                    .transpose()?;
                let gw = needs[1]
                    .then(|| {
                        let mut dw = vec![0.0; kdim * cout];
                        gemm(Mat::new(col.data(), rows, kdim).t(), gm, &mut dw, false);
                        Array::new(w_shape.clone(), dw)
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

    /// Per-channel (depthwise) stride-1 convolution with a `(kh, kw, C)`
    /// kernel.
    pub fn depthwise_conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        padding: usize,
        dilation: usize,
    ) -> Result<Tensor> {
        let (n, h, w, c) = self.dims4()?;
        let (kh, kw, wc) = weight.dims3()?;
        if wc != c {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if dilation == 0 {
            return invalid("depthwise_conv2d", "dilation must be positive");
        }
        let p = Conv2dParams::new(1, padding, dilation);
        let (Some(ho), Some(wo)) = (p.out_len(h, kh), p.out_len(w, kw)) else {
            return invalid("depthwise_conv2d", "kernel larger than padded input");
        };
        if let Some(b) = bias {
            if b.shape() != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: "depthwise_conv2d bias",
                    lhs: vec![c],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let geo = Geometry { n, h, w, cin: c, kh, kw, ho, wo, p };
        let x = self.value().clone();
        let wv = weight.value().clone();
        let mut out = vec![0.0; n * ho * wo * c];
        if let Some(b) = bias {
            for r in out.chunks_exact_mut(c) {
                r.copy_from_slice(b.data());
            }
        }
        let (xd, wd) = (x.data(), wv.data());
        for b in 0..n {
            for oy in 0..ho {
                for ky in 0..kh {
                    let Some(iy) = geo.src(oy, ky, h) else { continue };
                    for ox in 0..wo {
                        let o = ((b * ho + oy) * wo + ox) * c;
                        for kx in 0..kw {
                            let Some(ix) = geo.src(ox, kx, w) else { continue };
                            let i = ((b * h + iy) * w + ix) * c;
                            let k = (ky * kw + kx) * c;
                            for ((ov, xv), wv) in out[o..o + c].iter_mut().zip(&xd[i..i + c]).zip(&wd[k..k + c]) {
                                *ov += xv * wv;
                            }
                        }
                    }
                }
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            Array::new([n, ho, wo, c], out)?,
            parents,
            Box::new(move |g, needs| {
                let gd = g.data();
                let (xd, wd) = (x.data(), wv.data());
                let mut gx = needs[0].then(|| vec![0.0; n * h * w * c]);
                let mut gw = needs[1].then(|| vec![0.0; kh * kw * c]);
                for b in 0..n {
                    for oy in 0..ho {
                        for ky in 0..kh {
                            let Some(iy) = geo.src(oy, ky, h) else { continue };
                            for ox in 0..wo {
                                let o = ((b * ho + oy) * wo + ox) * c;
                                for kx in 0..kw {
                                    let Some(ix) = geo.src(ox, kx, w) else { continue };
                                    let i = ((b * h + iy) * w + ix) * c;
                                    let k = (ky * kw + kx) * c;
                                    let go = &gd[o..o + c];
                                    if let Some(gx) = gx.as_mut() {
                                        for ((d, gv), wv) in gx[i..i + c].iter_mut().zip(go).zip(&wd[k..k + c]) {
                                            *d += gv * wv;
                                        }
                                    }
                                    if let Some(gw) = gw.as_mut() {
                                        for ((d, gv), xv) in gw[k..k + c].iter_mut().zip(go).zip(&xd[i..i + c]) {
                                            *d += gv * xv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![
                    gx.map(|v| Array::new([n, h, w, c], v)).transpose()?,
                    gw.map(|v| Array::new([kh, kw, c], v)).transpose()?,
                ];
                if needs.len() == 3 {
                    grads.push(if needs[2] {
                        Some(Array::new([c], column_sums(gd, c))?)
                    } else {
                        None
                    });
                }
                Ok(grads)
            }),
        ))
    }
}
