//! Domain generalization from source data alone: photometric restyling of
//! each source crop and a Jensen-Shannon consistency term between the
//! predictions for the original and the restyled view.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use segadapt_tensor::Tensor;

use crate::data::color::{adjust_brightness, adjust_contrast, adjust_saturation, rotate_hue};
use crate::data::{CropBox, Image, LabelMap};
use crate::engine::AdamW;
use crate::error::{invalid, Result};
use crate::hrda::{predict_crops, prediction_loss, CropPair, LabeledCrops, Prediction};
use crate::losses::{style_consistency_divergence, Quality};
use crate::model::{ModelBundle, SegModel, Weights};
use crate::selftrain::{apply_update, source_terms, StepConfig, StepLosses};

/// Ranges of the four photometric perturbations. Brightness, contrast and
/// saturation factors are drawn from `[1 - r, 1 + r]`; the hue shift from
/// `[-hue, hue]` turns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub consistency_weight: f64,
    pub enabled: bool,
}

impl Default for DgConfig {
    fn default() -> Self {
        Self {
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.3,
            hue: 0.1,
            consistency_weight: 10.0,
            enabled: true,
        }
    }
}

impl DgConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.brightness, self.contrast, self.saturation];
        if ranges.iter().any(|r| !(0.0..=1.0).contains(r)) || !(0.0..=0.5).contains(&self.hue) {
            return invalid("dg config", format!("{self:?}"));
        }
        if !(self.consistency_weight >= 0.0) {
            return invalid("dg config", "consistency_weight must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Perturbation {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

/// Applies the four perturbations in a random order. Perturbations with a
/// zero range are skipped and draw nothing from `rng`.
pub fn stylize<R: Rng + ?Sized>(image: &Image, cfg: &DgConfig, rng: &mut R) -> Image {
    let mut order = [
        Perturbation::Brightness,
        Perturbation::Contrast,
        Perturbation::Saturation,
        Perturbation::Hue,
    ];
    order.shuffle(rng);
    let mut out = image.clone();
    for p in order {
        let factor = |r: f64, rng: &mut R| rng.gen_range(1.0 - r..=1.0 + r) as f32;
        out = match p {
            Perturbation::Brightness if cfg.brightness > 0.0 => adjust_brightness(&out, factor(cfg.brightness, rng)),
            Perturbation::Contrast if cfg.contrast > 0.0 => adjust_contrast(&out, factor(cfg.contrast, rng)),
            Perturbation::Saturation if cfg.saturation > 0.0 => adjust_saturation(&out, factor(cfg.saturation, rng)),
            Perturbation::Hue if cfg.hue > 0.0 => rotate_hue(&out, rng.gen_range(-cfg.hue..=cfg.hue) as f32),
            _ => out,
        };
    }
    out
}

/// Loss terms for an original and a restyled view sharing labels.
pub struct DgTerms {
    pub original: Tensor,
    pub stylized: Tensor,
    pub consistency: Tensor,
    /// `original + stylized + weight * consistency`.
    pub total: Tensor,
}

/// Rescales each pixel to sum to 1. Fused maps fall slightly short of that
/// where the upsampled attention reaches past the detail box.
fn normalized(p: &Tensor) -> Result<Tensor> {
    Ok(p.div(&p.sum_last()?)?)
}

pub fn dg_loss(
    original: &Prediction,
    stylized: &Prediction,
    labels_hr: &[LabelMap],
    labels_detail: &[LabelMap],
    consistency_weight: f64,
    lambda_d: f64,
) -> Result<DgTerms> {
    let one = Quality::Scalar(1.0);
    let orig = prediction_loss(original, labels_hr, labels_detail, one, one, lambda_d)?.total;
    let sty = prediction_loss(stylized, labels_hr, labels_detail, one, one, lambda_d)?.total;
    let consistency = style_consistency_divergence(&[normalized(&original.probs)?, normalized(&stylized.probs)?])?;
    let total = orig.add(&sty)?.add(&consistency.scale(consistency_weight))?;
    Ok(DgTerms {
        original: orig,
        stylized: sty,
        consistency,
        total,
    })
}

/// One generalization step on source crops. Both views use the same crop
/// boxes; feature distance applies to the original view.
pub fn dg_step<R: Rng + ?Sized>(
    model: &SegModel,
    bundle: &mut ModelBundle,
    opt: &mut AdamW,
    source: &[LabeledCrops],
    cfg: &StepConfig,
    dg: &DgConfig,
    lr: f64,
    rng: &mut R,
) -> Result<StepLosses> {
    let n = source.len();
    if n == 0 {
        return invalid("dg step", "empty batch");
    }
    let spec = &cfg.hrda.crops;
    let mut styled = Vec::with_capacity(n);
    for s in source {
        let image = stylize(&s.pair.context_hr, dg, rng);
        let whole = CropBox::new(0, 0, image.height(), image.width());
        styled.push(LabeledCrops::from_boxes(&image, &s.label_hr, spec, whole, s.pair.detail_box)?);
    }
    let w = Weights::trainable(&bundle.student);
    let pairs: Vec<&CropPair> = source.iter().chain(&styled).map(|c| &c.pair).collect();
    let pred = predict_crops(model, &w, &pairs, &cfg.hrda)?;
    let (orig, sty) = (pred.narrow(0, n)?, pred.narrow(n, n)?);
    let refs: Vec<&LabeledCrops> = source.iter().collect();
    let (src_total, ce, fd) = source_terms(model, bundle, &orig, &refs, cfg)?;
    let (hr, det): (Vec<LabelMap>, Vec<LabelMap>) = source.iter().map(|c| (c.label_hr.clone(), c.label_detail.clone())).unzip();
    let terms = dg_loss(&orig, &sty, &hr, &det, dg.consistency_weight, cfg.hrda.lambda_d)?;
    // `terms.total` counts the original view without feature distance;
    // `src_total` carries both.
    let total = src_total
        .add(&terms.stylized)?
        .add(&terms.consistency.scale(dg.consistency_weight))?;
    let losses = StepLosses {
        step: bundle.step,
        lr,
        source: ce,
        target: terms.stylized.item()?,
        fd,
        consistency: terms.consistency.item()?,
        total: total.item()?,
        quality: 0.0,
    };
    apply_update(bundle, &w, &total, opt, lr)?;
    Ok(losses)
}
