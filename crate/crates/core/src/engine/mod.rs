//! Training orchestration: learning-rate schedule and optimizer, flat
//! configuration, checkpoints, evaluation and the training loop.

mod checkpoint;
mod config;
mod metrics;
mod optim;
mod train;

use segadapt_tensor::Array;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_VERSION};
pub use config::{Mode, TrainConfig};
pub use metrics::{ConfusionMatrix, EvalReport};
pub use optim::{lr_at, AdamW, AdamWConfig};
pub use train::{train, train_with, RunLog, TrainData, TrainOutcome, Trainer};

use crate::data::{Dataset, Image, LabelMap};
use crate::error::{invalid, Result};
use crate::hrda::{slide_inference, HrdaConfig};
use crate::model::{ParamStore, SegModel, Weights};

/// `H x W x K` class probabilities for one image. With `slide` the detail
/// branch runs over sliding windows; otherwise the whole image is
/// downscaled by the context scale and predicted at once.
pub fn predict_probs(model: &SegModel, params: &ParamStore, image: &Image, hrda: &HrdaConfig, slide: bool) -> Result<Array> {
    slide_inference(model, &Weights::constant(params), image, &hrda.crops, slide)
}

pub fn predict_labels(model: &SegModel, params: &ParamStore, image: &Image, hrda: &HrdaConfig, slide: bool) -> Result<LabelMap> {
    let probs = predict_probs(model, params, image, hrda, slide)?;
    let labels = probs.argmax_last().into_iter().map(|c| c as u8).collect();
    LabelMap::new(image.height(), image.width(), labels)
}

/// Confusion counts of the model's predictions over a whole dataset.
pub fn evaluate(
    model: &SegModel,
    params: &ParamStore,
    dataset: &Dataset,
    hrda: &HrdaConfig,
    slide: bool,
    step: u64,
) -> Result<EvalReport> {
    if dataset.meta.num_classes() != model.num_classes() {
        return invalid(
            "evaluate",
            format!("dataset has {} classes, model {}", dataset.meta.num_classes(), model.num_classes()),
        );
    }
    let mut cm = ConfusionMatrix::new(model.num_classes());
    for s in dataset.iter() {
        let pred = predict_labels(model, params, &s.image, hrda, slide)?;
        cm.add_maps(&s.label, &pred)?;
    }
    Ok(cm.report(step))
}
