//! Spatial rescaling by rational factors.
//!
//! All resampling uses the half-pixel convention (`align_corners = false`):
//! output sample `o` reads input coordinate `(o + 0.5) / f - 0.5`, clamped to
//! the valid range. Downscaling by an integer `s` with `Bilinear` therefore
//! averages aligned pixel pairs when `s = 2`, and upscaling a constant map
//! returns the same constant bit for bit.

use segadapt_tensor::{Interp, Tensor};

use crate::error::{invalid, Result};

/// Positive rational scale factor `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scale {
    num: usize,
    den: usize,
}

impl Scale {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return invalid("scale", format!("{num}/{den} is not positive"));
        }
        Ok(Self { num, den })
    }

    pub fn up(s: usize) -> Result<Self> {
        Self::new(s, 1)
    }

    pub fn down(s: usize) -> Result<Self> {
        Self::new(1, s)
    }

    pub fn identity() -> Self {
        Self { num: 1, den: 1 }
    }

    pub fn inverse(self) -> Self {
        Self {
            num: self.den,
            den: self.num,
        }
    }

    /// Scaled length; fails unless `len * num / den` is an integer.
    pub fn apply(self, len: usize) -> Result<usize> {
        let scaled = len * self.num;
        if scaled % self.den != 0 || scaled == 0 {
            return invalid(
                "scale",
                format!("{len} * {}/{} is not a positive integer", self.num, self.den),
            );
        }
        Ok(scaled / self.den)
    }
}

/// Rescales the spatial axes of an `N x H x W x C` tensor with bilinear
/// interpolation.
pub fn resize_bilinear(t: &Tensor, factor: Scale) -> Result<Tensor> {
    resize_with(t, factor, Interp::Bilinear)
}

pub fn resize_with(t: &Tensor, factor: Scale, mode: Interp) -> Result<Tensor> {
    let (_, h, w, _) = t.dims4()?;
    Ok(t.resize(factor.apply(h)?, factor.apply(w)?, mode)?)
}
