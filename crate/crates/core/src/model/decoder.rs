//! Segmentation decoder with context-aware multi-level fusion, and the
//! lightweight scale-attention decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};
use segadapt_tensor::{Conv2dParams, Interp, Tensor};

use crate::error::{invalid, Result};
use crate::model::layers::{conv, depthwise, linear, norm};
use crate::model::params::{Init, Weights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub embed_channels: usize,
    pub dilation_rates: Vec<usize>,
    pub use_depthwise_separable: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            embed_channels: 32,
            dilation_rates: vec![1, 6, 12, 18],
            use_depthwise_separable: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_channels == 0 {
            return invalid("decoder", "embed_channels must be positive");
        }
        if self.dilation_rates.len() < 2 || self.dilation_rates.contains(&0) {
            return invalid("decoder", "need at least two positive dilation rates");
        }
        Ok(())
    }
}

/// Checks that `feats` is a pyramid with the given widths and halving sizes.
pub(crate) fn check_pyramid(feats: &[Tensor], channels: &[usize; 4]) -> Result<(usize, usize, usize)> {
    if feats.len() != 4 {
        return invalid("feature pyramid", format!("{} levels instead of 4", feats.len()));
    }
    let (n, h, w, _) = feats[0].dims4()?;
    for (i, f) in feats.iter().enumerate() {
        let expect = [n, h >> i, w >> i, channels[i]];
        if f.shape() != expect || (h >> i) << i != h || (w >> i) << i != w {
            return invalid("feature pyramid", format!("level {i} has shape {:?}, expected {expect:?}", f.shape()));
        }
    }
    Ok((n, h, w))
}

/// Projects every level to `c` channels, upsamples to the first level and
/// concatenates.
fn embed_levels(w: &Weights, feats: &[Tensor], prefix: &str, h: usize, wd: usize) -> Result<Tensor> {
    let mut levels = Vec::with_capacity(feats.len());
    for (i, f) in feats.iter().enumerate() {
        let e = linear(w, f, &format!("{prefix}.embed{i}"), true)?;
        levels.push(if i == 0 { e } else { e.resize(h, wd, Interp::Bilinear)? });
    }
    Ok(Tensor::cat(&levels, 3)?)
}

impl DecoderConfig {
    pub(crate) fn init<R: Rng>(&self, init: &mut Init<'_, R>, channels: &[usize; 4], num_classes: usize) {
        let ce = self.embed_channels;
        for (i, &c) in channels.iter().enumerate() {
            init.linear(&format!("decode_head.embed{i}"), c, ce, true);
        }
        let cat = 4 * ce;
        for j in 0..self.dilation_rates.len() {
            let b = format!("decode_head.fusion.branch{j}");
            if self.use_depthwise_separable {
                init.depthwise(&format!("{b}.depthwise"), 3, cat, false);
                init.norm(&format!("{b}.depthwise_norm"), cat);
                init.linear(&format!("{b}.pointwise"), cat, ce, false);
                init.norm(&format!("{b}.pointwise_norm"), ce);
            } else {
                init.conv(&format!("{b}.conv"), 3, cat, ce, false);
                init.norm(&format!("{b}.norm"), ce);
            }
        }
        let merged = self.dilation_rates.len() * ce;
        init.linear("decode_head.fusion.bottleneck", merged, ce, false);
        init.norm("decode_head.fusion.bottleneck_norm", ce);
        init.classifier("decode_head.classifier", ce, num_classes);
    }

    /// Class logits at the resolution of the first pyramid level.
    pub(crate) fn forward(&self, w: &Weights, feats: &[Tensor], channels: &[usize; 4]) -> Result<Tensor> {
        let (_, h, wd) = check_pyramid(feats, channels)?;
        let x = embed_levels(w, feats, "decode_head", h, wd)?;
        let mut branches = Vec::with_capacity(self.dilation_rates.len());
        for (j, &d) in self.dilation_rates.iter().enumerate() {
            let b = format!("decode_head.fusion.branch{j}");
            let y = if self.use_depthwise_separable {
                let y = depthwise(w, &x, &format!("{b}.depthwise"), d, d, false)?;
                let y = norm(w, &y, &format!("{b}.depthwise_norm"))?.relu();
                let y = linear(w, &y, &format!("{b}.pointwise"), false)?;
                norm(w, &y, &format!("{b}.pointwise_norm"))?.relu()
            } else {
                let y = conv(w, &x, &format!("{b}.conv"), Conv2dParams::new(1, d, d), false)?;
                norm(w, &y, &format!("{b}.norm"))?.relu()
            };
            branches.push(y);
        }
        let y = linear(w, &Tensor::cat(&branches, 3)?, "decode_head.fusion.bottleneck", false)?;
        let y = norm(w, &y, "decode_head.fusion.bottleneck_norm")?.relu();
        linear(w, &y, "decode_head.classifier", true)
    }
}

/// Scale-attention decoder: per-level projection, fuse, one sigmoid channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionHeadConfig {
    pub embed_channels: usize,
}

impl Default for AttentionHeadConfig {
    fn default() -> Self {
        Self { embed_channels: 16 }
    }
}

impl AttentionHeadConfig {
    pub(crate) fn init<R: Rng>(&self, init: &mut Init<'_, R>, channels: &[usize; 4]) {
        let ca = self.embed_channels;
        for (i, &c) in channels.iter().enumerate() {
            init.linear(&format!("attention_head.embed{i}"), c, ca, true);
        }
        init.linear("attention_head.fuse", 4 * ca, ca, false);
        init.norm("attention_head.fuse_norm", ca);
        init.classifier("attention_head.classifier", ca, 1);
    }

    pub(crate) fn forward(&self, w: &Weights, feats: &[Tensor], channels: &[usize; 4]) -> Result<Tensor> {
        let (_, h, wd) = check_pyramid(feats, channels)?;
        let x = embed_levels(w, feats, "attention_head", h, wd)?;
        let y = linear(w, &x, "attention_head.fuse", false)?;
        let y = norm(w, &y, "attention_head.fuse_norm")?.relu();
        Ok(linear(w, &y, "attention_head.classifier", true)?.sigmoid())
    }
}
