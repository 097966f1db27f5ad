use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dg::DgConfig;
use crate::error::{format_err, invalid, io_err, Result};
use crate::hrda::{CropSpec, HrdaConfig};
use crate::losses::FdConfig;
use crate::model::{AttentionHeadConfig, DecoderConfig, EncoderConfig, EncoderVariant, ModelConfig, OUTPUT_STRIDE};
use crate::sampling::RcsConfig;
use crate::selftrain::{AugmentConfig, EdgeIgnore, SelfTrainConfig, StepConfig};

use super::AdamWConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Self-training on labeled source and unlabeled target data.
    Uda,
    /// Restyled source views with a consistency term; no target data.
    Dg,
    /// Supervised source training only.
    SourceOnly,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uda" => Ok(Mode::Uda),
            "dg" => Ok(Mode::Dg),
            "source_only" => Ok(Mode::SourceOnly),
            _ => Err(format!("unknown mode {s:?} (expected uda, dg or source_only)")),
        }
    }
}

/// Every training setting under one flat set of keys. Unset keys take the
/// defaults below; sizes are scaled for CPU runs on 128x128 canvases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub total_iters: u64,
    pub batch_size: usize,
    /// Evaluate every this many iterations and after the last one; 0 only at the end.
    pub eval_interval: u64,
    /// Write a checkpoint every this many iterations and after the last one; 0 only at the end.
    pub checkpoint_interval: u64,

    pub source_dir: Option<PathBuf>,
    pub target_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,

    /// Encoder learning rate; every other parameter uses `lr * head_lr_mult`.
    pub lr: f64,
    pub head_lr_mult: f64,
    pub weight_decay: f64,
    pub warmup_iters: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub rcs: bool,
    pub rcs_temperature: f64,
    /// Source crops are redrawn up to this many times until they contain the
    /// class picked by rare-class sampling.
    pub rcs_crop_retries: usize,

    pub ema_alpha: f64,
    pub pseudo_threshold: f64,
    pub target_weight: f64,
    pub edge_ignore_top: usize,
    pub edge_ignore_bottom: usize,
    /// Image height the edge bands are given for.
    pub edge_reference_height: usize,
    pub jitter_strength: f32,
    pub jitter_probability: f64,
    pub blur: bool,
    pub blur_probability: f64,
    pub blur_sigma: [f32; 2],

    pub fd: bool,
    pub fd_ratio: f64,
    pub fd_weight: f64,

    pub hrda: bool,
    /// Context crop size after downscaling, `[height, width]`.
    pub context_crop: [usize; 2],
    pub detail_crop: [usize; 2],
    pub context_scale: usize,
    pub detail_loss_weight: f64,

    pub dg_brightness: f64,
    pub dg_contrast: f64,
    pub dg_saturation: f64,
    pub dg_hue: f64,
    pub consistency_weight: f64,

    pub num_classes: usize,
    pub encoder: EncoderVariant,
    pub encoder_channels: [usize; 4],
    pub encoder_depths: [usize; 4],
    pub encoder_heads: [usize; 4],
    pub encoder_sr_ratios: [usize; 4],
    pub encoder_mlp_ratio: usize,
    pub decoder_channels: usize,
    pub decoder_dilations: Vec<usize>,
    pub decoder_depthwise_separable: bool,
    pub attention_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let st = SelfTrainConfig::default();
        let fd = FdConfig::default();
        let hrda = HrdaConfig::default();
        let dg = DgConfig::default();
        let enc = EncoderConfig::default();
        let dec = DecoderConfig::default();
        let opt = AdamWConfig::default();
        Self {
            mode: Mode::Uda,
            seed: 0,
            total_iters: 2000,
            batch_size: 2,
            eval_interval: 0,
            checkpoint_interval: 0,
            source_dir: None,
            target_dir: None,
            eval_dir: None,
            output_dir: None,
            lr: 6e-5,
            head_lr_mult: opt.head_lr_mult,
            weight_decay: opt.weight_decay,
            warmup_iters: 1500,
            adam_beta1: opt.beta1,
            adam_beta2: opt.beta2,
            adam_eps: opt.eps,
            rcs: true,
            rcs_temperature: RcsConfig::default().temperature,
            rcs_crop_retries: 10,
            ema_alpha: st.alpha,
            pseudo_threshold: st.tau,
            target_weight: st.target_weight,
            edge_ignore_top: st.edge_ignore.top,
            edge_ignore_bottom: st.edge_ignore.bottom,
            edge_reference_height: st.edge_ignore.reference_height,
            jitter_strength: st.augment.jitter_strength,
            jitter_probability: st.augment.jitter_probability,
            blur: st.augment.blur,
            blur_probability: st.augment.blur_probability,
            blur_sigma: st.augment.blur_sigma,
            fd: fd.enabled,
            fd_ratio: fd.r,
            fd_weight: fd.lambda_fd,
            hrda: hrda.enabled,
            context_crop: hrda.crops.context,
            detail_crop: hrda.crops.detail,
            context_scale: hrda.crops.scale,
            detail_loss_weight: hrda.lambda_d,
            dg_brightness: dg.brightness,
            dg_contrast: dg.contrast,
            dg_saturation: dg.saturation,
            dg_hue: dg.hue,
            consistency_weight: dg.consistency_weight,
            num_classes: 8,
            encoder: enc.variant,
            encoder_channels: enc.channels,
            encoder_depths: enc.depths,
            encoder_heads: enc.heads,
            encoder_sr_ratios: enc.sr_ratios,
            encoder_mlp_ratio: enc.mlp_ratio,
            decoder_channels: dec.embed_channels,
            decoder_dilations: dec.dilation_rates,
            decoder_depthwise_separable: dec.use_depthwise_separable,
            attention_channels: AttentionHeadConfig::default().embed_channels,
        }
    }
}

impl TrainConfig {
    /// Settings for the procedural 128x128 domains: networks trained from
    /// scratch for 2000 iterations need a larger rate, a shorter warmup and
    /// a faster-moving teacher than the defaults.
    pub fn desk() -> Self {
        Self {
            lr: 6e-4,
            warmup_iters: 200,
            ema_alpha: 0.99,
            eval_interval: 500,
            ..Self::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            crate::Error::Format { msg, .. } => crate::Error::Format {
                context: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string()).map_err(format_err("train config"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| e.to_string()).map_err(format_err("train config"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 || self.batch_size == 0 {
            return invalid("train config", "total_iters and batch_size must be positive");
        }
        if self.warmup_iters >= self.total_iters {
            return invalid(
                "train config",
                format!("warmup_iters {} must be below total_iters {}", self.warmup_iters, self.total_iters),
            );
        }
        if !(self.lr > 0.0) {
            return invalid("train config", "lr must be positive");
        }
        self.adamw().validate()?;
        self.rcs_config().validate()?;
        self.fd_config().validate()?;
        self.hrda_config().validate()?;
        self.dg_config().validate()?;
        self.model_config().validate()?;
        let [hc, wc] = self.context_crop;
        for side in [hc, wc, self.detail_crop[0], self.detail_crop[1]] {
            if side % crate::model::INPUT_MULTIPLE != 0 {
                return invalid("train config", format!("crop side {side} is not a multiple of 32"));
            }
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            head_lr_mult: self.head_lr_mult,
        }
    }

    pub fn rcs_config(&self) -> RcsConfig {
        RcsConfig {
            temperature: self.rcs_temperature,
            enabled: self.rcs,
        }
    }

    pub fn fd_config(&self) -> FdConfig {
        FdConfig {
            r: self.fd_ratio,
            lambda_fd: self.fd_weight,
            enabled: self.fd,
        }
    }

    pub fn hrda_config(&self) -> HrdaConfig {
        HrdaConfig {
            enabled: self.hrda,
            crops: CropSpec {
                context: self.context_crop,
                detail: self.detail_crop,
                scale: self.context_scale,
                output_stride: OUTPUT_STRIDE,
            },
            lambda_d: self.detail_loss_weight,
        }
    }

    pub fn selftrain_config(&self) -> SelfTrainConfig {
        SelfTrainConfig {
            alpha: self.ema_alpha,
            tau: self.pseudo_threshold,
            edge_ignore: EdgeIgnore {
                top: self.edge_ignore_top,
                bottom: self.edge_ignore_bottom,
                reference_height: self.edge_reference_height,
            },
            augment: AugmentConfig {
                jitter_strength: self.jitter_strength,
                jitter_probability: self.jitter_probability,
                blur: self.blur,
                blur_probability: self.blur_probability,
                blur_sigma: self.blur_sigma,
            },
            target_weight: self.target_weight,
        }
    }

    pub fn dg_config(&self) -> DgConfig {
        DgConfig {
            brightness: self.dg_brightness,
            contrast: self.dg_contrast,
            saturation: self.dg_saturation,
            hue: self.dg_hue,
            consistency_weight: self.consistency_weight,
            enabled: self.mode == Mode::Dg,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            num_classes: self.num_classes,
            encoder: EncoderConfig {
                variant: self.encoder,
                channels: self.encoder_channels,
                depths: self.encoder_depths,
                heads: self.encoder_heads,
                sr_ratios: self.encoder_sr_ratios,
                mlp_ratio: self.encoder_mlp_ratio,
            },
            decoder: DecoderConfig {
                embed_channels: self.decoder_channels,
                dilation_rates: self.decoder_dilations.clone(),
                use_depthwise_separable: self.decoder_depthwise_separable,
            },
            attention: AttentionHeadConfig {
                embed_channels: self.attention_channels,
            },
        }
    }

    pub fn step_config(&self, thing_flags: Vec<bool>) -> StepConfig {
        StepConfig {
            selftrain: self.selftrain_config(),
            fd: self.fd_config(),
            hrda: self.hrda_config(),
            thing_flags,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = TrainConfig::from_toml("mode = \"dg\"\ntotal_iters = 10\nwarmup_iters = 2\n").unwrap();
        assert_eq!(cfg.mode, Mode::Dg);
        assert_eq!(cfg.lr, 6e-5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_toml("warmup_iters = 5000").is_err());
        assert!(TrainConfig::from_toml("unknown_key = 1").is_err());
        assert!(TrainConfig::from_toml("context_crop = [24, 24]").is_err());
    }
}
