use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{load_dataset, Dataset};
use crate::dg::{dg_step, DgConfig};
use crate::error::{invalid, io_err, Error, Result};
use crate::hrda::{sample_crops, sample_labeled_crops, LabeledCrops};
use crate::model::{ModelBundle, SegModel};
use crate::sampling::{compute_class_stats, RareClassSampler};
use crate::selftrain::{source_step, uda_step, StepConfig, StepLosses, UdaBatch};

use super::{evaluate, lr_at, AdamW, Checkpoint, EvalReport, Mode, RngState, TrainConfig};

/// Datasets used by a run. `target` is read only in UDA mode.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub source: Dataset,
    pub target: Option<Dataset>,
    pub eval: Option<Dataset>,
}

impl TrainData {
    /// Loads the directories named in the config.
    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let Some(source) = &cfg.source_dir else {
            return invalid("train config", "source_dir is required");
        };
        let target = match (&cfg.target_dir, cfg.mode) {
            (Some(dir), Mode::Uda) => Some(load_dataset(dir)?),
            (None, Mode::Uda) => return invalid("train config", "uda mode requires target_dir"),
            _ => None,
        };
        Ok(Self {
            source: load_dataset(source)?,
            target,
            eval: cfg.eval_dir.as_ref().map(load_dataset).transpose()?,
        })
    }
}

/// Owns the whole mutable training state.
pub struct Trainer {
    cfg: TrainConfig,
    model: SegModel,
    step_cfg: StepConfig,
    dg_cfg: DgConfig,
    bundle: ModelBundle,
    optimizer: AdamW,
    rng: ChaCha8Rng,
    data: TrainData,
    sampler: RareClassSampler,
    /// Loss record of every step run by this trainer.
    pub losses: Vec<StepLosses>,
    /// Every evaluation run by this trainer.
    pub metrics: Vec<EvalReport>,
}

impl Trainer {
    /// Fresh run: parameters come from a stream of the seed separate from
    /// the one driving sampling and augmentation.
    pub fn new(cfg: TrainConfig, data: TrainData) -> Result<Self> {
        cfg.validate()?;
        let model = SegModel::new(cfg.model_config())?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_rng.set_stream(1);
        let bundle = ModelBundle::new(&model, &mut init_rng);
        let optimizer = AdamW::new(&bundle.student, cfg.adamw())?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::assemble(cfg, model, bundle, optimizer, rng, data)
    }

    pub fn resume(ckpt: Checkpoint, data: TrainData) -> Result<Self> {
        let model = SegModel::new(ckpt.config.model_config())?;
        let rng = ckpt.rng.restore()?;
        Self::assemble(ckpt.config, model, ckpt.bundle, ckpt.optimizer, rng, data)
    }

    fn assemble(
        cfg: TrainConfig,
        model: SegModel,
        bundle: ModelBundle,
        optimizer: AdamW,
        rng: ChaCha8Rng,
        mut data: TrainData,
    ) -> Result<Self> {
        let k = cfg.num_classes;
        let check = |d: &Dataset, what: &str| {
            if d.meta.num_classes() != k {
                return invalid("dataset", format!("{what} has {} classes, config expects {k}", d.meta.num_classes()));
            }
            if d.is_empty() {
                return invalid("dataset", format!("{what} is empty"));
            }
            Ok(())
        };
        check(&data.source, "source")?;
        if cfg.mode == Mode::Uda {
            match &data.target {
                Some(t) => check(t, "target")?,
                None => return invalid("train", "uda mode requires target data"),
            }
        } else {
            // Generalization and source-only runs never see target images.
            data.target = None;
        }
        if let Some(e) = &data.eval {
            check(e, "eval")?;
        }
        bundle.check_layout()?;
        model.config().validate()?;
        let stats = compute_class_stats(&data.source)?;
        let sampler = RareClassSampler::new(&stats, &cfg.rcs_config())?;
        let step_cfg = cfg.step_config(data.source.meta.thing_flags.clone());
        if let Some(t) = &data.target {
            step_cfg.selftrain.validate(t.samples[0].image.height())?;
        }
        Ok(Self {
            dg_cfg: cfg.dg_config(),
            step_cfg,
            cfg,
            model,
            bundle,
            optimizer,
            rng,
            data,
            sampler,
            losses: Vec::new(),
            metrics: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &SegModel {
        &self.model
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn iteration(&self) -> u64 {
        self.bundle.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            bundle: self.bundle.clone(),
            optimizer: self.optimizer.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    fn source_batch(&mut self) -> Result<Vec<LabeledCrops>> {
        let spec = self.step_cfg.hrda.crops;
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let draw = self.sampler.sample(&mut self.rng);
            let s = &self.data.source.samples[draw.sample];
            let mut crop = sample_labeled_crops(&s.image, &s.label, &spec, &mut self.rng)?;
            if let Some(c) = draw.class {
                for _ in 0..self.cfg.rcs_crop_retries {
                    if crop.label_hr.data().contains(&(c as u8)) {
                        break;
                    }
                    crop = sample_labeled_crops(&s.image, &s.label, &spec, &mut self.rng)?;
                }
            }
            out.push(crop);
        }
        Ok(out)
    }

    /// Runs one training iteration.
    pub fn step(&mut self) -> Result<StepLosses> {
        let t = self.bundle.step;
        self.step_inner().map_err(|e| Error::Step {
            step: t,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self) -> Result<StepLosses> {
        let t = self.bundle.step;
        if t >= self.cfg.total_iters {
            return invalid("train", format!("iteration {t} is past total_iters"));
        }
        let lr = lr_at(t, self.cfg.lr, self.cfg.warmup_iters, self.cfg.total_iters);
        let source = self.source_batch()?;
        let losses = match self.cfg.mode {
            Mode::SourceOnly => source_step(&self.model, &mut self.bundle, &mut self.optimizer, &source, &self.step_cfg, lr)?,
            Mode::Dg => dg_step(
                &self.model,
                &mut self.bundle,
                &mut self.optimizer,
                &source,
                &self.step_cfg,
                &self.dg_cfg,
                lr,
                &mut self.rng,
            )?,
            Mode::Uda => {
                let target_set = self.data.target.as_ref().expect("checked at construction");
                let spec = self.step_cfg.hrda.crops;
                let mut target = Vec::with_capacity(source.len());
                for _ in 0..source.len() {
                    let i = self.rng.gen_range(0..target_set.len());
                    target.push(sample_crops(&target_set.samples[i].image, &spec, &mut self.rng)?);
                }
                let batch = UdaBatch {
                    source,
                    target,
                    target_height: target_set.samples[0].image.height(),
                };
                uda_step(
                    &self.model,
                    &mut self.bundle,
                    &mut self.optimizer,
                    &batch,
                    &self.step_cfg,
                    lr,
                    &mut self.rng,
                )?
            }
        };
        if !losses.total.is_finite() {
            return invalid("train", format!("non-finite loss {}", losses.total));
        }
        Ok(losses)
    }

    /// Evaluates the student on the eval set (slide inference when the
    /// run uses the detail branch).
    pub fn evaluate(&self) -> Result<Option<EvalReport>> {
        let Some(eval) = &self.data.eval else {
            return Ok(None);
        };
        let hrda = self.step_cfg.hrda;
        evaluate(&self.model, &self.bundle.student, eval, &hrda, hrda.enabled, self.bundle.step).map(Some)
    }

    /// Trains up to `until` iterations (capped at `total_iters`), evaluating
    /// and checkpointing at the configured intervals and at the end.
    pub fn run(&mut self, until: u64, mut log: Option<&mut RunLog>) -> Result<()> {
        let until = until.min(self.cfg.total_iters);
        while self.bundle.step < until {
            let losses = self.step()?;
            if let Some(l) = log.as_deref_mut() {
                l.append("losses.jsonl", &losses)?;
            }
            self.losses.push(losses);
            let s = self.bundle.step;
            let last = s == self.cfg.total_iters;
            if last || (self.cfg.eval_interval > 0 && s % self.cfg.eval_interval == 0) {
                if let Some(report) = self.evaluate()? {
                    if let Some(l) = log.as_deref_mut() {
                        l.append("metrics.jsonl", &report)?;
                    }
                    self.metrics.push(report);
                }
            }
            if last || (self.cfg.checkpoint_interval > 0 && s % self.cfg.checkpoint_interval == 0) {
                if let Some(l) = log.as_deref_mut() {
                    let ckpt = self.checkpoint();
                    ckpt.save(l.dir.join(format!("checkpoint_{s:06}.safetensors")))?;
                    ckpt.save(l.dir.join("latest.safetensors"))?;
                }
            }
        }
        Ok(())
    }
}

/// Output directory receiving line-delimited JSON logs and checkpoints.
pub struct RunLog {
    pub dir: PathBuf,
}

impl RunLog {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir })
    }

    pub fn append<T: Serialize>(&mut self, file: &str, record: &T) -> Result<()> {
        let path = self.dir.join(file);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        let line = serde_json::to_string(record).expect("plain record");
        writeln!(f, "{line}").map_err(io_err(&path))
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<StepLosses>,
    pub metrics: Vec<EvalReport>,
}

/// Runs a full training from the datasets named in `cfg`, writing logs and
/// checkpoints to `output_dir` when set.
pub fn train(cfg: TrainConfig) -> Result<TrainOutcome> {
    let data = TrainData::load(&cfg)?;
    train_with(cfg, data)
}

pub fn train_with(cfg: TrainConfig, data: TrainData) -> Result<TrainOutcome> {
    let mut log = cfg.output_dir.as_ref().map(RunLog::create).transpose()?;
    let total = cfg.total_iters;
    let mut trainer = Trainer::new(cfg, data)?;
    trainer.run(total, log.as_mut())?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        losses: std::mem::take(&mut trainer.losses),
        metrics: std::mem::take(&mut trainer.metrics),
    })
}
