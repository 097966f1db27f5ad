//! Thin helpers resolving parameter names for the building blocks.

use segadapt_tensor::{Conv2dParams, Tensor};

use crate::error::Result;
use crate::model::params::Weights;

pub(crate) const NORM_EPS: f64 = 1e-6;

fn weight<'a>(w: &'a Weights, prefix: &str) -> Result<&'a Tensor> {
    w.get(&format!("{prefix}.weight"))
}

fn bias<'a>(w: &'a Weights, prefix: &str, with_bias: bool) -> Result<Option<&'a Tensor>> {
    if with_bias {
        Ok(Some(w.get(&format!("{prefix}.bias"))?))
    } else {
        Ok(None)
    }
}

/// Pixelwise projection over the channel axis.
pub(crate) fn linear(w: &Weights, x: &Tensor, prefix: &str, with_bias: bool) -> Result<Tensor> {
    Ok(x.linear(weight(w, prefix)?, bias(w, prefix, with_bias)?)?)
}

pub(crate) fn conv(w: &Weights, x: &Tensor, prefix: &str, p: Conv2dParams, with_bias: bool) -> Result<Tensor> {
    Ok(x.conv2d(weight(w, prefix)?, bias(w, prefix, with_bias)?, p)?)
}

pub(crate) fn depthwise(
    w: &Weights,
    x: &Tensor,
    prefix: &str,
    padding: usize,
    dilation: usize,
    with_bias: bool,
) -> Result<Tensor> {
    Ok(x.depthwise_conv2d(weight(w, prefix)?, bias(w, prefix, with_bias)?, padding, dilation)?)
}

/// Layer normalization over channels.
pub(crate) fn norm(w: &Weights, x: &Tensor, prefix: &str) -> Result<Tensor> {
    Ok(x.layer_norm(weight(w, prefix)?, w.get(&format!("{prefix}.bias"))?, NORM_EPS)?)
}
