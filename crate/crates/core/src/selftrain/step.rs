use rand::Rng;
use serde::{Deserialize, Serialize};
use segadapt_tensor::Tensor;

use crate::data::{CropBox, Image, LabelMap};
use crate::engine::AdamW;
use crate::error::{invalid, Result};
use crate::hrda::{predict_crops, prediction_loss, pseudo_label_context, CropPair, HrdaConfig, LabeledCrops, Prediction};
use crate::losses::{downsample_thing_mask, feature_distance_loss, FdConfig, Quality};
use crate::model::{ema_update, ModelBundle, SegModel, Weights};

use super::{augment, classmix, SelfTrainConfig};

/// Settings shared by every training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepConfig {
    pub selftrain: SelfTrainConfig,
    pub fd: FdConfig,
    pub hrda: HrdaConfig,
    pub thing_flags: Vec<bool>,
}

/// Scalar loss values of one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: u64,
    pub lr: f64,
    pub source: f64,
    pub target: f64,
    pub fd: f64,
    pub consistency: f64,
    pub total: f64,
    /// Mean pseudo-label quality over the target batch.
    pub quality: f64,
}

/// One UDA batch: labeled source crops and unlabeled target crops.
pub struct UdaBatch {
    pub source: Vec<LabeledCrops>,
    pub target: Vec<CropPair>,
    /// Height of the full target images, for edge-band placement.
    pub target_height: usize,
}

/// Feature distance between the student's source bottleneck features and
/// the frozen reference encoder on thing-dominated cells.
pub(crate) fn fd_term(
    model: &SegModel,
    bundle: &ModelBundle,
    student: &Prediction,
    source: &[&LabeledCrops],
    cfg: &StepConfig,
) -> Result<Option<Tensor>> {
    if !cfg.fd.enabled || cfg.fd.lambda_fd == 0.0 {
        return Ok(None);
    }
    let Some(f_student) = student.context_features.last() else {
        return invalid("feature distance", "no encoder features");
    };
    let (_, fh, fw, _) = f_student.dims4()?;
    let mut mask = Vec::with_capacity(source.len() * fh * fw);
    for s in source {
        mask.extend(downsample_thing_mask(&s.label_hr, &cfg.thing_flags, cfg.fd.r, fh, fw)?);
    }
    if !mask.contains(&1) {
        return Ok(None);
    }
    let contexts: Vec<&Image> = source.iter().map(|s| &s.pair.context).collect();
    let reference = model.encode(&Weights::constant(&bundle.reference), &Image::batch(&contexts)?)?;
    let f_ref = reference.last().expect("encoder returns four levels");
    Ok(Some(feature_distance_loss(f_ref, f_student, &mask)?.loss))
}

/// Backpropagates `total`, applies one optimizer update at rate `lr` and
/// advances the step counter.
pub(crate) fn apply_update(bundle: &mut ModelBundle, w: &Weights, total: &Tensor, opt: &mut AdamW, lr: f64) -> Result<()> {
    let grads = total.backward()?;
    opt.step(&mut bundle.student, &w.gradients(&grads), lr)?;
    bundle.step += 1;
    Ok(())
}

fn labels_of(crops: &[&LabeledCrops]) -> (Vec<LabelMap>, Vec<LabelMap>) {
    crops.iter().map(|c| (c.label_hr.clone(), c.label_detail.clone())).unzip()
}

/// Supervised source loss plus weighted feature distance.
pub(crate) fn source_terms(
    model: &SegModel,
    bundle: &ModelBundle,
    pred: &Prediction,
    source: &[&LabeledCrops],
    cfg: &StepConfig,
) -> Result<(Tensor, f64, f64)> {
    let (hr, det) = labels_of(source);
    let ce = prediction_loss(pred, &hr, &det, Quality::Scalar(1.0), Quality::Scalar(1.0), cfg.hrda.lambda_d)?.total;
    let fd = fd_term(model, bundle, pred, source, cfg)?;
    let fd_value = fd.as_ref().map_or(Ok(0.0), |t| t.item())?;
    let ce_value = ce.item()?;
    let total = match fd {
        Some(fd) => ce.add(&fd.scale(cfg.fd.lambda_fd))?,
        None => ce,
    };
    Ok((total, ce_value, fd_value))
}

/// Supervised training on source crops only.
pub fn source_step(
    model: &SegModel,
    bundle: &mut ModelBundle,
    opt: &mut AdamW,
    source: &[LabeledCrops],
    cfg: &StepConfig,
    lr: f64,
) -> Result<StepLosses> {
    let w = Weights::trainable(&bundle.student);
    let refs: Vec<&LabeledCrops> = source.iter().collect();
    let pairs: Vec<&CropPair> = source.iter().map(|s| &s.pair).collect();
    let pred = predict_crops(model, &w, &pairs, &cfg.hrda)?;
    let (total, ce, fd) = source_terms(model, bundle, &pred, &refs, cfg)?;
    let losses = StepLosses {
        step: bundle.step,
        lr,
        source: ce,
        fd,
        total: total.item()?,
        ..Default::default()
    };
    apply_update(bundle, &w, &total, opt, lr)?;
    Ok(losses)
}

/// One self-training step.
///
/// The teacher labels the clean target context regions; source classes are
/// pasted onto them, the result is augmented and cut into student crops with
/// the target's detail boxes. The student is trained on source and mixed
/// crops together, then the teacher follows by an EMA update.
pub fn uda_step<R: Rng + ?Sized>(
    model: &SegModel,
    bundle: &mut ModelBundle,
    opt: &mut AdamW,
    batch: &UdaBatch,
    cfg: &StepConfig,
    lr: f64,
    rng: &mut R,
) -> Result<StepLosses> {
    let n = batch.source.len();
    if n == 0 || batch.target.len() != n {
        return invalid("uda step", format!("{n} source and {} target crops", batch.target.len()));
    }
    let spec = &cfg.hrda.crops;
    let hr: Vec<&Image> = batch.target.iter().map(|t| &t.context_hr).collect();
    let bands: Vec<_> = batch
        .target
        .iter()
        .map(|t| {
            cfg.selftrain
                .edge_ignore
                .crop_bands(batch.target_height, t.context_box.y0, t.context_box.h)
        })
        .collect();
    let teacher = Weights::constant(&bundle.teacher);
    let (_, pseudo) = pseudo_label_context(
        model,
        &teacher,
        &Image::batch(&hr)?,
        spec,
        cfg.hrda.enabled,
        cfg.selftrain.tau,
        &bands,
    )?;

    let mut mixed_crops = Vec::with_capacity(n);
    let mut q_hr = Vec::new();
    let mut q_detail = Vec::new();
    for ((src, tgt), pl) in batch.source.iter().zip(&batch.target).zip(&pseudo) {
        let mixed = classmix(&src.pair.context_hr, &src.label_hr, &tgt.context_hr, pl, rng)?;
        let image = augment(&mixed.image, &cfg.selftrain.augment, rng);
        let whole = CropBox::new(0, 0, image.height(), image.width());
        let crops = LabeledCrops::from_boxes(&image, &mixed.label, spec, whole, tgt.detail_box)?;
        let d = tgt.detail_box;
        for y in d.y0..d.y1() {
            q_detail.extend_from_slice(&mixed.quality[y * image.width() + d.x0..y * image.width() + d.x1()]);
        }
        q_hr.extend(mixed.quality);
        mixed_crops.push(crops);
    }

    let w = Weights::trainable(&bundle.student);
    let pairs: Vec<&CropPair> = batch.source.iter().chain(&mixed_crops).map(|c| &c.pair).collect();
    let pred = predict_crops(model, &w, &pairs, &cfg.hrda)?;
    let src_refs: Vec<&LabeledCrops> = batch.source.iter().collect();
    let (src_total, ce_s, fd) = source_terms(model, bundle, &pred.narrow(0, n)?, &src_refs, cfg)?;
    let mix_refs: Vec<&LabeledCrops> = mixed_crops.iter().collect();
    let (mix_hr, mix_det) = labels_of(&mix_refs);
    let target = prediction_loss(
        &pred.narrow(n, n)?,
        &mix_hr,
        &mix_det,
        Quality::Map(&q_hr),
        Quality::Map(&q_detail),
        cfg.hrda.lambda_d,
    )?
    .total;
    let total = src_total.add(&target.scale(cfg.selftrain.target_weight))?;
    let losses = StepLosses {
        step: bundle.step,
        lr,
        source: ce_s,
        target: target.item()?,
        fd,
        consistency: 0.0,
        total: total.item()?,
        quality: pseudo.iter().map(|p| p.quality).sum::<f64>() / n as f64,
    };
    apply_update(bundle, &w, &total, opt, lr)?;
    ema_update(&mut bundle.teacher, &bundle.student, cfg.selftrain.alpha)?;
    Ok(losses)
}
