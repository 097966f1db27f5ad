use crate::array::Array;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Interpolation kernel for spatial resizing.
///
/// Both modes use the half-pixel convention (`align_corners = false`): the
/// output sample `o` sits at input coordinate `(o + 0.5) * in / out - 0.5`.
/// Halving with `Bilinear` therefore averages each 2x2 block exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Interp {
    #[default]
    Bilinear,
    Nearest,
}

/// One output sample along an axis: `(1 - w) * x[lo] + w * x[hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub w: f64,
}

impl Tap {
    #[inline]
    pub fn lerp(&self, a: f64, b: f64) -> f64 {
        // Exact when a == b.
        a + self.w * (b - a)
    }
}

pub fn axis_taps(input: usize, output: usize, mode: Interp) -> Vec<Tap> {
    (0..output)
        .map(|o| match mode {
            Interp::Nearest => {
                let i = ((o * input) / output).min(input - 1);
                Tap { lo: i, hi: i, w: 0.0 }
            }
            Interp::Bilinear => {
                let src = ((o as f64 + 0.5) * (input as f64 / output as f64) - 0.5).max(0.0);
                let lo = (src.floor() as usize).min(input - 1);
                let hi = (lo + 1).min(input - 1);
                let w = if hi == lo { 0.0 } else { src - lo as f64 };
                Tap { lo, hi, w }
            }
        })
        .collect()
}

impl Tensor {
    /// Resizes the spatial axes of an NHWC tensor.
    pub fn resize(&self, out_h: usize, out_w: usize, mode: Interp) -> Result<Tensor> {
        let (n, h, w, c) = self.dims4()?;
        if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
            return invalid("resize", format!("empty extent {h}x{w} -> {out_h}x{out_w}"));
        }
        if (h, w) == (out_h, out_w) {
            return Ok(self.clone());
        }
        let ty = axis_taps(h, out_h, mode);
        let tx = axis_taps(w, out_w, mode);
        let x = self.data();
        let mut out = vec![0.0; n * out_h * out_w * c];
        for b in 0..n {
            for (oy, ry) in ty.iter().enumerate() {
                let row_lo = (b * h + ry.lo) * w;
                let row_hi = (b * h + ry.hi) * w;
                for (ox, rx) in tx.iter().enumerate() {
                    let dst = ((b * out_h + oy) * out_w + ox) * c;
                    let (a00, a01) = ((row_lo + rx.lo) * c, (row_lo + rx.hi) * c);
                    let (a10, a11) = ((row_hi + rx.lo) * c, (row_hi + rx.hi) * c);
                    for ch in 0..c {
                        let top = rx.lerp(x[a00 + ch], x[a01 + ch]);
                        let bottom = rx.lerp(x[a10 + ch], x[a11 + ch]);
                        out[dst + ch] = ry.lerp(top, bottom);
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            Array::new([n, out_h, out_w, c], out)?,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gi = vec![0.0; n * h * w * c];
                for b in 0..n {
                    for (oy, ry) in ty.iter().enumerate() {
                        let row_lo = (b * h + ry.lo) * w;
                        let row_hi = (b * h + ry.hi) * w;
                        for (ox, rx) in tx.iter().enumerate() {
                            let src = ((b * out_h + oy) * out_w + ox) * c;
                            let weights = [
                                ((row_lo + rx.lo) * c, (1.0 - ry.w) * (1.0 - rx.w)),
                                ((row_lo + rx.hi) * c, (1.0 - ry.w) * rx.w),
                                ((row_hi + rx.lo) * c, ry.w * (1.0 - rx.w)),
                                ((row_hi + rx.hi) * c, ry.w * rx.w),
                            ];
                            for (base, wt) in weights {
                                if wt == 0.0 {
                                    continue;
                                }
                                for ch in 0..c {
                                    gi[base + ch] += wt * gd[src + ch];
                                }
                            }
                        }
                    }
                }
                Ok(vec![Some(Array::new([n, h, w, c], gi)?)])
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_averages_blocks() {
        let x = Tensor::from_vec([1, 2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        let y = x.resize(1, 1, Interp::Bilinear).unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn nearest_upsampling_repeats() {
        let x = Tensor::from_vec([1, 1, 2, 1], vec![1., 2.]).unwrap();
        let y = x.resize(1, 4, Interp::Nearest).unwrap();
        assert_eq!(y.data(), &[1., 1., 2., 2.]);
    }

    #[test]
    fn bilinear_taps_half_pixel() {
        let t = axis_taps(2, 4, Interp::Bilinear);
        assert_eq!(t[0], Tap { lo: 0, hi: 1, w: 0.0 });
        assert_eq!(t[1], Tap { lo: 0, hi: 1, w: 0.25 });
        assert_eq!(t[2], Tap { lo: 0, hi: 1, w: 0.75 });
        assert_eq!(t[3], Tap { lo: 1, hi: 1, w: 0.0 });
    }
}
