//! Four-stage feature pyramid encoders with strides 4, 8, 16 and 32.

use rand::Rng;
use serde::{Deserialize, Serialize};
use segadapt_tensor::{Conv2dParams, Tensor};

use crate::error::{invalid, Result};
use crate::model::layers::{conv, depthwise, linear, norm};
use crate::model::params::{Init, Weights};

/// Input sides must be multiples of the deepest stride.
pub const INPUT_MULTIPLE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Hierarchical transformer: overlapping patch merging, efficient
    /// self-attention with per-stage sequence reduction, Mix-FFN.
    MixTransformerTiny,
    /// Strided convolutions with the same output shapes.
    ConvBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub channels: [usize; 4],
    pub depths: [usize; 4],
    pub heads: [usize; 4],
    pub sr_ratios: [usize; 4],
    pub mlp_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            variant: EncoderVariant::MixTransformerTiny,
            channels: [8, 16, 32, 64],
            depths: [1; 4],
            heads: [1, 1, 2, 2],
            sr_ratios: [8, 4, 2, 1],
            mlp_ratio: 4,
        }
    }
}

impl EncoderConfig {
    /// Full-size stage widths and head counts with one block per stage.
    pub fn full_widths() -> Self {
        Self {
            channels: [64, 128, 320, 512],
            heads: [1, 2, 5, 8],
            ..Self::default()
        }
    }

    /// Output stride of stage `i` (0-based).
    pub fn stride(i: usize) -> usize {
        1 << (i + 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels[0] == 0 || self.channels.windows(2).any(|p| p[0] >= p[1]) {
            return invalid("encoder channels", format!("{:?} must be positive and strictly increasing", self.channels));
        }
        for i in 0..4 {
            if self.depths[i] == 0 || self.heads[i] == 0 || self.sr_ratios[i] == 0 {
                return invalid("encoder", format!("stage {i} has a zero depth, head count or reduction ratio"));
            }
            if self.channels[i] % self.heads[i] != 0 {
                return invalid(
                    "encoder",
                    format!("stage {i}: {} channels not divisible by {} heads", self.channels[i], self.heads[i]),
                );
            }
            let feature_multiple = INPUT_MULTIPLE / Self::stride(i);
            if feature_multiple % self.sr_ratios[i] != 0 {
                return invalid(
                    "encoder",
                    format!("stage {i}: reduction ratio {} does not divide {feature_multiple}", self.sr_ratios[i]),
                );
            }
        }
        if self.mlp_ratio == 0 {
            return invalid("encoder", "mlp_ratio must be positive");
        }
        Ok(())
    }

    fn embed_geometry(i: usize) -> (usize, Conv2dParams) {
        if i == 0 {
            (7, Conv2dParams::new(4, 3, 1))
        } else {
            (3, Conv2dParams::new(2, 1, 1))
        }
    }

    pub(crate) fn init<R: Rng>(&self, init: &mut Init<'_, R>) {
        let mut c_in = 3;
        for i in 0..4 {
            let c = self.channels[i];
            let s = format!("encoder.stage{i}");
            let (k, _) = Self::embed_geometry(i);
            match self.variant {
                EncoderVariant::MixTransformerTiny => {
                    init.conv(&format!("{s}.patch_embed.proj"), k, c_in, c, true);
                    init.norm(&format!("{s}.patch_embed.norm"), c);
                    for j in 0..self.depths[i] {
                        let b = format!("{s}.block{j}");
                        init.norm(&format!("{b}.norm1"), c);
                        init.linear(&format!("{b}.attn.q"), c, c, true);
                        init.linear(&format!("{b}.attn.kv"), c, 2 * c, true);
                        if self.sr_ratios[i] > 1 {
                            init.conv(&format!("{b}.attn.sr"), self.sr_ratios[i], c, c, true);
                            init.norm(&format!("{b}.attn.sr_norm"), c);
                        }
                        init.linear(&format!("{b}.attn.proj"), c, c, true);
                        init.norm(&format!("{b}.norm2"), c);
                        let hidden = c * self.mlp_ratio;
                        init.linear(&format!("{b}.ffn.fc1"), c, hidden, true);
                        init.depthwise(&format!("{b}.ffn.dwconv"), 3, hidden, true);
                        init.linear(&format!("{b}.ffn.fc2"), hidden, c, true);
                    }
                    init.norm(&format!("{s}.norm"), c);
                }
                EncoderVariant::ConvBaseline => {
                    init.conv(&format!("{s}.down"), k, c_in, c, false);
                    init.norm(&format!("{s}.down_norm"), c);
                    for j in 0..self.depths[i] {
                        init.conv(&format!("{s}.block{j}.conv"), 3, c, c, false);
                        init.norm(&format!("{s}.block{j}.norm"), c);
                    }
                }
            }
            c_in = c;
        }
    }

    /// Feature pyramid `[F1, F2, F3, F4]` of an `N x H x W x 3` batch.
    pub(crate) fn forward(&self, w: &Weights, x: &Tensor) -> Result<Vec<Tensor>> {
        let (_, h, wd, c) = x.dims4()?;
        if c != 3 || h == 0 || wd == 0 || h % INPUT_MULTIPLE != 0 || wd % INPUT_MULTIPLE != 0 {
            return invalid(
                "encoder input",
                format!("{h}x{wd}x{c}: sides must be positive multiples of {INPUT_MULTIPLE} with 3 channels"),
            );
        }
        let mut feats = Vec::with_capacity(4);
        let mut x = x.clone();
        for i in 0..4 {
            let s = format!("encoder.stage{i}");
            let (_, geom) = Self::embed_geometry(i);
            x = match self.variant {
                EncoderVariant::MixTransformerTiny => {
                    let mut t = conv(w, &x, &format!("{s}.patch_embed.proj"), geom, true)?;
                    t = norm(w, &t, &format!("{s}.patch_embed.norm"))?;
                    for j in 0..self.depths[i] {
                        let b = format!("{s}.block{j}");
                        let a = attention(w, &norm(w, &t, &format!("{b}.norm1"))?, &b, self.heads[i], self.sr_ratios[i])?;
                        t = t.add(&a)?;
                        let f = mix_ffn(w, &norm(w, &t, &format!("{b}.norm2"))?, &b)?;
                        t = t.add(&f)?;
                    }
                    norm(w, &t, &format!("{s}.norm"))?
                }
                EncoderVariant::ConvBaseline => {
                    let mut t = conv(w, &x, &format!("{s}.down"), geom, false)?;
                    t = norm(w, &t, &format!("{s}.down_norm"))?.relu();
                    for j in 0..self.depths[i] {
                        let y = conv(w, &t, &format!("{s}.block{j}.conv"), Conv2dParams::new(1, 1, 1), false)?;
                        t = t.add(&norm(w, &y, &format!("{s}.block{j}.norm"))?.relu())?;
                    }
                    t
                }
            };
            feats.push(x.clone());
        }
        Ok(feats)
    }
}

/// Multi-head self-attention whose keys and values come from a
/// `sr x sr`-strided reduction of the token grid.
fn attention(w: &Weights, x: &Tensor, prefix: &str, heads: usize, sr: usize) -> Result<Tensor> {
    let (n, h, wd, c) = x.dims4()?;
    let q = linear(w, x, &format!("{prefix}.attn.q"), true)?;
    let reduced = if sr > 1 {
        let r = conv(w, x, &format!("{prefix}.attn.sr"), Conv2dParams::new(sr, 0, 1), true)?;
        norm(w, &r, &format!("{prefix}.attn.sr_norm"))?
    } else {
        x.clone()
    };
    let (_, hk, wk, _) = reduced.dims4()?;
    let kv = linear(w, &reduced, &format!("{prefix}.attn.kv"), true)?;
    let (l, lk, dh) = (h * wd, hk * wk, c / heads);
    let split = |t: &Tensor, len: usize| -> Result<Tensor> {
        if heads == 1 {
            return Ok(t.reshape([n, len, c])?);
        }
        Ok(t.reshape([n, len, heads, dh])?.permute(&[0, 2, 1, 3])?.reshape([n * heads, len, dh])?)
    };
    let qh = split(&q, l)?.scale(1.0 / (dh as f64).sqrt());
    let kh = split(&kv.narrow(3, 0, c)?, lk)?;
    let vh = split(&kv.narrow(3, c, c)?, lk)?;
    let attn = qh.bmm(&kh, true)?.softmax_last()?;
    let out = attn.bmm(&vh, false)?;
    let out = if heads == 1 {
        out.reshape([n, h, wd, c])?
    } else {
        out.reshape([n, heads, l, dh])?.permute(&[0, 2, 1, 3])?.reshape([n, h, wd, c])?
    };
    linear(w, &out, &format!("{prefix}.attn.proj"), true)
}

/// Expansion, 3x3 depthwise convolution, GELU, projection.
fn mix_ffn(w: &Weights, x: &Tensor, prefix: &str) -> Result<Tensor> {
    let hdn = linear(w, x, &format!("{prefix}.ffn.fc1"), true)?;
    let hdn = depthwise(w, &hdn, &format!("{prefix}.ffn.dwconv"), 1, 1, true)?.gelu();
    linear(w, &hdn, &format!("{prefix}.ffn.fc2"), true)
}
