//! Multi-resolution training and inference: context/detail crop geometry,
//! scale-attention fusion, the two-term loss, overlapping-window teacher
//! predictions and full-image sliding-window inference.
//!
//! All fusion happens on softmax probabilities so that window averaging and
//! the attention-weighted blend are both convex combinations.

use rand::Rng;
use serde::{Deserialize, Serialize};
use segadapt_tensor::{Array, Interp, Tensor};

use crate::data::{CropBox, Image, LabelMap};
use crate::error::{invalid, Result};
use crate::losses::{weighted_cross_entropy, weighted_cross_entropy_probs, CeLoss, Quality};
use crate::model::{SegModel, Weights, OUTPUT_STRIDE};
use crate::selftrain::{make_pseudo_label, EdgeBands, PseudoLabel};

/// Crop geometry. Context crops cover `scale * context` HR pixels and are
/// downscaled by `scale`; detail crops are taken at full resolution from
/// inside the context region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropSpec {
    pub context: [usize; 2],
    pub detail: [usize; 2],
    pub scale: usize,
    pub output_stride: usize,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self {
            context: [32, 32],
            detail: [32, 32],
            scale: 2,
            output_stride: OUTPUT_STRIDE,
        }
    }
}

impl CropSpec {
    /// Every crop coordinate is a multiple of `scale * output_stride`.
    pub fn unit(&self) -> usize {
        self.scale * self.output_stride
    }

    /// Extent of the context crop in HR pixels.
    pub fn context_hr(&self) -> [usize; 2] {
        [self.scale * self.context[0], self.scale * self.context[1]]
    }

    pub fn validate(&self) -> Result<()> {
        let u = self.unit();
        if self.scale == 0 || self.output_stride == 0 {
            return invalid("crop spec", "scale and output stride must be positive");
        }
        let [hc, wc] = self.context_hr();
        for (name, v) in [("context height", hc), ("context width", wc), ("detail height", self.detail[0]), ("detail width", self.detail[1])] {
            if v == 0 || v % u != 0 {
                return invalid("crop spec", format!("{name} {v} is not a positive multiple of {u}"));
            }
        }
        if self.detail[0] > hc || self.detail[1] > wc {
            return invalid("crop spec", "detail crop exceeds the context region");
        }
        Ok(())
    }
}

/// `{0, unit, 2 * unit, ..}` up to `total - span`.
pub fn valid_offsets(total: usize, span: usize, unit: usize) -> Vec<usize> {
    if span > total || unit == 0 {
        return Vec::new();
    }
    (0..=(total - span) / unit).map(|i| i * unit).collect()
}

/// Samples a context box in image coordinates and a detail box in
/// context-HR coordinates, both aligned to the spec's unit.
pub fn sample_boxes<R: Rng + ?Sized>(height: usize, width: usize, spec: &CropSpec, rng: &mut R) -> Result<(CropBox, CropBox)> {
    spec.validate()?;
    let u = spec.unit();
    let [hc, wc] = spec.context_hr();
    if height < hc || width < wc {
        return invalid("crop", format!("{height}x{width} image is smaller than the {hc}x{wc} context region"));
    }
    if height % u != 0 || width % u != 0 {
        return invalid("crop", format!("{height}x{width} image is not divisible by {u}"));
    }
    let mut pick = |total, span| {
        let offs = valid_offsets(total, span, u);
        offs[rng.gen_range(0..offs.len())]
    };
    let context = CropBox::new(pick(height, hc), pick(width, wc), hc, wc);
    let detail = CropBox::new(pick(hc, spec.detail[0]), pick(wc, spec.detail[1]), spec.detail[0], spec.detail[1]);
    Ok((context, detail))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CropPair {
    pub context_box: CropBox,
    /// Context region at full resolution.
    pub context_hr: Image,
    /// Context region downscaled by the spec's scale.
    pub context: Image,
    pub detail_box: CropBox,
    pub detail: Image,
}

impl CropPair {
    pub fn from_boxes(image: &Image, spec: &CropSpec, context_box: CropBox, detail_box: CropBox) -> Result<Self> {
        let context_hr = image.crop(&context_box)?;
        let context = context_hr.rescale(crate::data::Scale::down(spec.scale)?, Interp::Bilinear)?;
        let detail = context_hr.crop(&detail_box)?;
        Ok(Self {
            context_box,
            context_hr,
            context,
            detail_box,
            detail,
        })
    }
}

pub fn sample_crops<R: Rng + ?Sized>(image: &Image, spec: &CropSpec, rng: &mut R) -> Result<CropPair> {
    let (cb, db) = sample_boxes(image.height(), image.width(), spec, rng)?;
    CropPair::from_boxes(image, spec, cb, db)
}

/// Origins of windows of size `window` at `stride` covering `total`; the last
/// window is clamped to end at the border.
pub fn window_origins(total: usize, window: usize, stride: usize) -> Vec<usize> {
    if window >= total || stride == 0 {
        return vec![0];
    }
    let count = (total - window).div_ceil(stride) + 1;
    (0..count).map(|i| (i * stride).min(total - window)).collect()
}

/// Number of windows covering each pixel of a `height x width` grid.
pub fn coverage(height: usize, width: usize, window: [usize; 2], stride: [usize; 2]) -> Vec<u32> {
    let mut counts = vec![0u32; height * width];
    for &y0 in &window_origins(height, window[0], stride[0]) {
        for &x0 in &window_origins(width, window[1], stride[1]) {
            for y in y0..(y0 + window[0]).min(height) {
                for x in x0..(x0 + window[1]).min(width) {
                    counts[y * width + x] += 1;
                }
            }
        }
    }
    counts
}

fn scaled(t: &Tensor, s: usize, mode: Interp) -> Result<Tensor> {
    let (_, h, w, _) = t.dims4()?;
    Ok(t.resize(h * s, w * s, mode)?)
}

/// Attention-weighted fusion of context and detail predictions.
///
/// `y_c` and `a` live on the context output grid, `y_d` on the detail output
/// grid. `boxes` holds one detail box per batch element (or one shared box),
/// in context-HR pixels. Attention outside the detail box is zeroed, the
/// detail prediction is zero-padded into the HR output grid, and
/// `resize((1 - a') * y_c) + resize(a') * y_d'` is returned at `scale` times
/// the context grid.
pub fn fuse_predictions(
    y_c: &Tensor,
    y_d: &Tensor,
    a: &Tensor,
    boxes: &[CropBox],
    spec: &CropSpec,
    mode: Interp,
) -> Result<Tensor> {
    let (n, hc, wc, k) = y_c.dims4()?;
    let (nd, hd, wd, kd) = y_d.dims4()?;
    let s = spec.scale;
    if nd != n || kd != k || a.shape() != [n, hc, wc, 1] {
        return invalid(
            "fusion",
            format!("context {:?}, detail {:?}, attention {:?}", y_c.shape(), y_d.shape(), a.shape()),
        );
    }
    if boxes.len() != n && boxes.len() != 1 {
        return invalid("fusion", format!("{} boxes for batch {n}", boxes.len()));
    }
    let mut parts = Vec::with_capacity(n);
    for i in 0..n {
        let b = boxes[if boxes.len() == 1 { 0 } else { i }];
        let lr = b.scale_down(spec.unit())?;
        let hr = b.scale_down(spec.output_stride)?;
        if (hr.h, hr.w) != (hd, wd) || !lr.fits_in(hc, wc) {
            return invalid("fusion", format!("detail box {b:?} does not match a {hd}x{wd} detail grid"));
        }
        let mask = Array::from_fn([1, hc, wc, 1], |j| lr.contains(j / wc, j % wc) as u8 as f64);
        let pick = |t: &Tensor| -> Result<Tensor> { Ok(if n == 1 { t.clone() } else { t.narrow(0, i, 1)? }) };
        let a_masked = pick(a)?.mul(&Tensor::constant(mask))?;
        let context = scaled(&a_masked.affine(-1.0, 1.0).mul(&pick(y_c)?)?, s, mode)?;
        let detail = pick(y_d)?.pad_hw(hr.y0, s * hc - hr.y1(), hr.x0, s * wc - hr.x1())?;
        parts.push(context.add(&scaled(&a_masked, s, mode)?.mul(&detail)?)?);
    }
    if parts.len() == 1 {
        return Ok(parts.pop().expect("one part"));
    }
    Ok(Tensor::cat(&parts, 0)?)
}

/// Fusion with unmasked attention against a full HR prediction of the
/// context region: `resize((1 - a) * y_c) + resize(a) * y_hr`.
pub fn fuse_full(y_c: &Tensor, y_hr: &Tensor, a: &Tensor, spec: &CropSpec, mode: Interp) -> Result<Tensor> {
    let context = scaled(&a.affine(-1.0, 1.0).mul(y_c)?, spec.scale, mode)?;
    Ok(context.add(&scaled(a, spec.scale, mode)?.mul(y_hr)?)?)
}

/// Upsamples `pred` to `h x w` (when needed) with bilinear interpolation.
fn to_label_grid(pred: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, ph, pw, _) = pred.dims4()?;
    if (ph, pw) == (h, w) {
        return Ok(pred.clone());
    }
    Ok(pred.resize(h, w, Interp::Bilinear)?)
}

fn flatten_labels(labels: &[LabelMap]) -> Result<(Vec<u8>, usize, usize)> {
    let Some(first) = labels.first() else {
        return invalid("labels", "empty batch");
    };
    let (h, w) = (first.height(), first.width());
    let mut out = Vec::with_capacity(labels.len() * h * w);
    for l in labels {
        if (l.height(), l.width()) != (h, w) {
            return invalid("labels", "mixed label sizes in batch");
        }
        out.extend_from_slice(l.data());
    }
    Ok((out, h, w))
}

/// The two terms of the multi-resolution loss and their weighted sum.
pub struct HrdaLoss {
    pub total: Tensor,
    pub fused: CeLoss,
    /// Absent when no detail branch was run.
    pub detail: Option<CeLoss>,
}

/// `(1 - lambda_d) * CE(fused, labels_hr) + lambda_d * CE(y_d, labels_detail)`
/// with per-pixel weights. `fused` holds probabilities and `y_d` logits; both
/// are bilinearly upsampled to their label grids.
pub fn hrda_loss(
    fused: &Tensor,
    y_d: &Tensor,
    labels_hr: &[LabelMap],
    labels_detail: &[LabelMap],
    q_hr: Quality<'_>,
    q_detail: Quality<'_>,
    lambda_d: f64,
) -> Result<HrdaLoss> {
    if !(0.0..=1.0).contains(&lambda_d) {
        return invalid("detail weight", format!("{lambda_d} outside [0, 1]"));
    }
    let (t_hr, h, w) = flatten_labels(labels_hr)?;
    let (t_d, hd, wd) = flatten_labels(labels_detail)?;
    let fused_loss = weighted_cross_entropy_probs(&to_label_grid(fused, h, w)?, &t_hr, q_hr)?;
    let detail_loss = weighted_cross_entropy(&to_label_grid(y_d, hd, wd)?, &t_d, q_detail)?;
    let total = fused_loss
        .loss
        .scale(1.0 - lambda_d)
        .add(&detail_loss.loss.scale(lambda_d))?;
    Ok(HrdaLoss {
        total,
        fused: fused_loss,
        detail: Some(detail_loss),
    })
}

pub fn hrda_source_loss(
    fused: &Tensor,
    y_d: &Tensor,
    labels_hr: &[LabelMap],
    labels_detail: &[LabelMap],
    lambda_d: f64,
) -> Result<HrdaLoss> {
    hrda_loss(fused, y_d, labels_hr, labels_detail, Quality::Scalar(1.0), Quality::Scalar(1.0), lambda_d)
}

/// Multi-resolution settings. With `enabled = false` only the downscaled
/// context crop is used, for training and inference alike.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HrdaConfig {
    pub enabled: bool,
    pub crops: CropSpec,
    /// Weight of the detail-crop loss.
    pub lambda_d: f64,
}

impl Default for HrdaConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            crops: CropSpec::default(),
            lambda_d: 0.1,
        }
    }
}

impl HrdaConfig {
    pub fn validate(&self) -> Result<()> {
        self.crops.validate()?;
        if !(0.0..=1.0).contains(&self.lambda_d) {
            return invalid("detail weight", format!("{} outside [0, 1]", self.lambda_d));
        }
        Ok(())
    }
}

/// A crop pair with its labels cut from the same boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCrops {
    pub pair: CropPair,
    pub label_hr: LabelMap,
    pub label_detail: LabelMap,
}

impl LabeledCrops {
    pub fn from_boxes(image: &Image, label: &LabelMap, spec: &CropSpec, context_box: CropBox, detail_box: CropBox) -> Result<Self> {
        let pair = CropPair::from_boxes(image, spec, context_box, detail_box)?;
        let label_hr = label.crop(&context_box)?;
        let label_detail = label_hr.crop(&detail_box)?;
        Ok(Self {
            pair,
            label_hr,
            label_detail,
        })
    }
}

pub fn sample_labeled_crops<R: Rng + ?Sized>(image: &Image, label: &LabelMap, spec: &CropSpec, rng: &mut R) -> Result<LabeledCrops> {
    if (image.height(), image.width()) != (label.height(), label.width()) {
        return invalid("crop", "image and label sizes differ");
    }
    let (cb, db) = sample_boxes(image.height(), image.width(), spec, rng)?;
    LabeledCrops::from_boxes(image, label, spec, cb, db)
}

/// Student prediction for a batch of crop pairs.
pub struct Prediction {
    /// Class probabilities on the HR output grid of the context region.
    pub probs: Tensor,
    pub detail_logits: Option<Tensor>,
    pub context_features: Vec<Tensor>,
}

impl Prediction {
    /// Batch elements `start..start + len`.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Prediction> {
        Ok(Prediction {
            probs: self.probs.narrow(0, start, len)?,
            detail_logits: self.detail_logits.as_ref().map(|t| t.narrow(0, start, len)).transpose()?,
            context_features: self
                .context_features
                .iter()
                .map(|f| f.narrow(0, start, len))
                .collect::<segadapt_tensor::Result<_>>()?,
        })
    }
}

/// Runs the student on context (and, when enabled, detail) crops.
pub fn predict_crops(model: &SegModel, w: &Weights, crops: &[&CropPair], cfg: &HrdaConfig) -> Result<Prediction> {
    let contexts: Vec<&Image> = crops.iter().map(|c| &c.context).collect();
    let context = Image::batch(&contexts)?;
    if !cfg.enabled {
        let out = model.forward(w, &context, false)?;
        return Ok(Prediction {
            probs: scaled(&out.logits.softmax_last()?, cfg.crops.scale, Interp::Bilinear)?,
            detail_logits: None,
            context_features: out.features,
        });
    }
    let details: Vec<&Image> = crops.iter().map(|c| &c.detail).collect();
    let boxes: Vec<CropBox> = crops.iter().map(|c| c.detail_box).collect();
    let out = hrda_forward(model, w, &context, &Image::batch(&details)?, &boxes, &cfg.crops)?;
    Ok(Prediction {
        probs: out.fused,
        detail_logits: Some(out.detail_logits),
        context_features: out.context_features,
    })
}

/// Loss of a [`Prediction`]: the two-term loss when a detail prediction is
/// present, the context cross-entropy alone otherwise.
pub fn prediction_loss(
    pred: &Prediction,
    labels_hr: &[LabelMap],
    labels_detail: &[LabelMap],
    q_hr: Quality<'_>,
    q_detail: Quality<'_>,
    lambda_d: f64,
) -> Result<HrdaLoss> {
    match &pred.detail_logits {
        Some(y_d) => hrda_loss(&pred.probs, y_d, labels_hr, labels_detail, q_hr, q_detail, lambda_d),
        None => {
            let (t, h, w) = flatten_labels(labels_hr)?;
            let fused = weighted_cross_entropy_probs(&to_label_grid(&pred.probs, h, w)?, &t, q_hr)?;
            Ok(HrdaLoss {
                total: fused.loss.clone(),
                fused,
                detail: None,
            })
        }
    }
}

/// Student outputs for a batch of context and detail crops.
pub struct HrdaForward {
    /// Fused class probabilities on the HR output grid of the context region.
    pub fused: Tensor,
    pub context_logits: Tensor,
    pub detail_logits: Tensor,
    pub attention: Tensor,
    pub context_features: Vec<Tensor>,
    pub detail_features: Vec<Tensor>,
}

/// Runs the network on both crop batches (as one batch when their sizes
/// agree) and fuses the predictions.
pub fn hrda_forward(
    model: &SegModel,
    w: &Weights,
    context: &Tensor,
    detail: &Tensor,
    boxes: &[CropBox],
    spec: &CropSpec,
) -> Result<HrdaForward> {
    let n = context.dims4()?.0;
    let (ctx_feats, det_feats) = if context.shape()[1..] == detail.shape()[1..] {
        let feats = model.encode(w, &Tensor::cat(&[context.clone(), detail.clone()], 0)?)?;
        let mut a = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for f in &feats {
            a.push(f.narrow(0, 0, n)?);
            b.push(f.narrow(0, n, n)?);
        }
        (a, b)
    } else {
        (model.encode(w, context)?, model.encode(w, detail)?)
    };
    let context_logits = model.decode_segmentation(w, &ctx_feats)?;
    let detail_logits = model.decode_segmentation(w, &det_feats)?;
    let attention = model.decode_attention(w, &ctx_feats)?;
    let fused = fuse_predictions(
        &context_logits.softmax_last()?,
        &detail_logits.softmax_last()?,
        &attention,
        boxes,
        spec,
        Interp::Bilinear,
    )?;
    Ok(HrdaForward {
        fused,
        context_logits,
        detail_logits,
        attention,
        context_features: ctx_feats,
        detail_features: det_feats,
    })
}

/// Class probabilities of an `N x (s*h_c) x (s*w_c) x 3` batch of HR context
/// regions on their HR output grid.
///
/// With `detail = true` the context prediction of the downscaled region is
/// fused with full (unmasked) attention against an HR prediction assembled
/// from detail-sized windows at half-window stride, averaged on overlaps.
/// Otherwise the context prediction is only upsampled.
pub fn context_prediction(model: &SegModel, w: &Weights, x_hr: &Tensor, spec: &CropSpec, detail: bool) -> Result<Tensor> {
    let (n, h, wd, _) = x_hr.dims4()?;
    let s = spec.scale;
    let o = spec.output_stride;
    if h % spec.unit() != 0 || wd % spec.unit() != 0 {
        return invalid("context prediction", format!("{h}x{wd} region is not divisible by {}", spec.unit()));
    }
    let x_lr = x_hr.resize(h / s, wd / s, Interp::Bilinear)?;
    let [dh, dw] = spec.detail;
    if !detail {
        let probs = model.forward(w, &x_lr, false)?.logits.softmax_last()?;
        return scaled(&probs, s, Interp::Bilinear);
    }
    let (stride_y, stride_x) = (dh / 2, dw / 2);
    if stride_y % o != 0 || stride_x % o != 0 {
        return invalid("context prediction", "half the detail size must be a multiple of the output stride");
    }
    let ys = window_origins(h, dh, stride_y);
    let xs = window_origins(wd, dw, stride_x);
    let mut windows = Vec::with_capacity(n * ys.len() * xs.len());
    for b in 0..n {
        let img = x_hr.narrow(0, b, 1)?;
        for &y0 in &ys {
            for &x0 in &xs {
                windows.push(img.crop_hw(y0, dh, x0, dw)?);
            }
        }
    }
    let windows = Tensor::cat(&windows, 0)?;
    let nw = ys.len() * xs.len();
    let (ctx_out, win_probs) = if x_lr.shape()[1..] == windows.shape()[1..] {
        let out = model.forward(w, &Tensor::cat(&[x_lr.clone(), windows], 0)?, true)?;
        let probs = out.logits.softmax_last()?;
        let a = out.attention.expect("attention requested");
        ((probs.narrow(0, 0, n)?, a.narrow(0, 0, n)?), probs.narrow(0, n, n * nw)?)
    } else {
        let ctx = model.forward(w, &x_lr, true)?;
        let win = model.forward(w, &windows, false)?;
        (
            (ctx.logits.softmax_last()?, ctx.attention.expect("attention requested")),
            win.logits.softmax_last()?,
        )
    };
    let (ho, wo) = (h / o, wd / o);
    let (dho, dwo) = (dh / o, dw / o);
    let k = model.num_classes();
    let mut acc = vec![0.0; n * ho * wo * k];
    let mut count = vec![0u32; n * ho * wo];
    let wp = win_probs.data();
    for b in 0..n {
        let mut idx = b * nw;
        for &y0 in &ys {
            for &x0 in &xs {
                for yy in 0..dho {
                    for xx in 0..dwo {
                        let cell = (b * ho + y0 / o + yy) * wo + x0 / o + xx;
                        count[cell] += 1;
                        let src = ((idx * dho + yy) * dwo + xx) * k;
                        for c in 0..k {
                            acc[cell * k + c] += wp[src + c];
                        }
                    }
                }
                idx += 1;
            }
        }
    }
    for (cell, &cnt) in count.iter().enumerate() {
        for c in 0..k {
            acc[cell * k + c] /= cnt as f64;
        }
    }
    let y_hr = Tensor::from_vec([n, ho, wo, k], acc)?;
    fuse_full(&ctx_out.0, &y_hr, &ctx_out.1, spec, Interp::Bilinear)
}

/// Teacher probabilities for HR context regions, upsampled to pixel
/// resolution, together with one pseudo-label per batch element.
pub fn pseudo_label_context(
    model: &SegModel,
    teacher: &Weights,
    x_hr: &Tensor,
    spec: &CropSpec,
    detail: bool,
    tau: f64,
    bands: &[EdgeBands],
) -> Result<(Array, Vec<PseudoLabel>)> {
    let (n, h, w, _) = x_hr.dims4()?;
    if bands.len() != n {
        return invalid("pseudo-label", format!("{} edge bands for batch {n}", bands.len()));
    }
    let probs = to_label_grid(&context_prediction(model, teacher, x_hr, spec, detail)?, h, w)?;
    let k = model.num_classes();
    let per = h * w * k;
    let labels = (0..n)
        .map(|b| {
            let a = Array::new([h, w, k], probs.data()[b * per..(b + 1) * per].to_vec())?;
            make_pseudo_label(&a, tau, bands[b])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((probs.value().clone(), labels))
}

/// Full-image class probabilities (`H x W x K`).
///
/// With `detail = true`, windows of the context-region size slide at half
/// their size; each window is predicted exactly as in [`context_prediction`],
/// upsampled to pixels, and overlapping windows are averaged. Without detail
/// the whole image is downscaled, predicted once and upsampled.
pub fn slide_inference(model: &SegModel, w: &Weights, image: &Image, spec: &CropSpec, detail: bool) -> Result<Array> {
    spec.validate()?;
    let (h, wd) = (image.height(), image.width());
    let x = Image::batch(&[image])?;
    let k = model.num_classes();
    if !detail {
        let probs = context_prediction(model, w, &x, spec, false)?;
        let probs = to_label_grid(&probs, h, wd)?;
        return Ok(probs.value().reshape([h, wd, k])?);
    }
    let [wh, ww] = spec.context_hr();
    if h < wh || wd < ww {
        return invalid("slide inference", format!("{h}x{wd} image is smaller than the {wh}x{ww} window"));
    }
    let ys = window_origins(h, wh, wh / 2);
    let xs = window_origins(wd, ww, ww / 2);
    let mut windows = Vec::with_capacity(ys.len() * xs.len());
    for &y0 in &ys {
        for &x0 in &xs {
            windows.push(x.crop_hw(y0, wh, x0, ww)?);
        }
    }
    let probs = context_prediction(model, w, &Tensor::cat(&windows, 0)?, spec, true)?;
    let probs = to_label_grid(&probs, wh, ww)?;
    let p = probs.data();
    let mut acc = vec![0.0; h * wd * k];
    let mut count = vec![0u32; h * wd];
    let mut idx = 0;
    for &y0 in &ys {
        for &x0 in &xs {
            for yy in 0..wh {
                for xx in 0..ww {
                    let cell = (y0 + yy) * wd + x0 + xx;
                    count[cell] += 1;
                    let src = ((idx * wh + yy) * ww + xx) * k;
                    for c in 0..k {
                        acc[cell * k + c] += p[src + c];
                    }
                }
            }
            idx += 1;
        }
    }
    for (cell, &cnt) in count.iter().enumerate() {
        for c in 0..k {
            acc[cell * k + c] /= cnt as f64;
        }
    }
    Ok(Array::new([h, wd, k], acc)?)
}
