//! Segmentation network: pyramid encoder, fusion decoder, scale-attention
//! head, and the student/teacher/reference parameter bundle.

mod decoder;
mod encoder;
mod layers;
mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};
use segadapt_tensor::Tensor;

pub use decoder::{AttentionHeadConfig, DecoderConfig};
pub use encoder::{EncoderConfig, EncoderVariant, INPUT_MULTIPLE};
pub use params::{ParamStore, Weights};

use crate::error::{invalid, Result};
use params::Init;

/// Ratio between input resolution and prediction resolution.
pub const OUTPUT_STRIDE: usize = 4;

/// Prefix shared by every encoder parameter.
pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub attention: AttentionHeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            attention: AttentionHeadConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return invalid("model", "num_classes must be positive");
        }
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.attention.embed_channels == 0 {
            return invalid("attention head", "embed_channels must be positive");
        }
        Ok(())
    }
}

/// Outputs of one forward pass.
pub struct Forward {
    pub features: Vec<Tensor>,
    pub logits: Tensor,
    pub attention: Option<Tensor>,
}

/// Stateless network definition; parameters live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct SegModel {
    cfg: ModelConfig,
}

impl SegModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    /// Fresh parameters drawn from `rng`.
    pub fn init<R: Rng>(&self, rng: &mut R) -> ParamStore {
        let mut store = ParamStore::new();
        let mut init = Init { store: &mut store, rng };
        self.cfg.encoder.init(&mut init);
        self.cfg.decoder.init(&mut init, &self.cfg.encoder.channels, self.cfg.num_classes);
        self.cfg.attention.init(&mut init, &self.cfg.encoder.channels);
        store
    }

    /// Feature pyramid of an `N x H x W x 3` batch; level `i` has stride
    /// `2^(i+2)`.
    pub fn encode(&self, w: &Weights, x: &Tensor) -> Result<Vec<Tensor>> {
        self.cfg.encoder.forward(w, x)
    }

    /// Class logits at stride [`OUTPUT_STRIDE`].
    pub fn decode_segmentation(&self, w: &Weights, feats: &[Tensor]) -> Result<Tensor> {
        self.cfg.decoder.forward(w, feats, &self.cfg.encoder.channels)
    }

    /// Scale attention in `(0, 1)` with one channel, at stride
    /// [`OUTPUT_STRIDE`].
    pub fn decode_attention(&self, w: &Weights, feats: &[Tensor]) -> Result<Tensor> {
        self.cfg.attention.forward(w, feats, &self.cfg.encoder.channels)
    }

    pub fn forward(&self, w: &Weights, x: &Tensor, with_attention: bool) -> Result<Forward> {
        let features = self.encode(w, x)?;
        let logits = self.decode_segmentation(w, &features)?;
        let attention = if with_attention {
            Some(self.decode_attention(w, &features)?)
        } else {
            None
        };
        Ok(Forward {
            features,
            logits,
            attention,
        })
    }
}

/// Student, EMA teacher and frozen reference encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub student: ParamStore,
    pub teacher: ParamStore,
    /// Snapshot of the encoder at initialization, used for feature distance.
    pub reference: ParamStore,
    pub step: u64,
}

impl ModelBundle {
    pub fn new<R: Rng>(model: &SegModel, rng: &mut R) -> Self {
        let student = model.init(rng);
        Self {
            teacher: student.clone(),
            reference: student.subset(ENCODER_PREFIX),
            student,
            step: 0,
        }
    }

    pub fn check_layout(&self) -> Result<()> {
        self.student.check_same_layout(&self.teacher)?;
        self.student.subset(ENCODER_PREFIX).check_same_layout(&self.reference)
    }
}

/// `teacher = alpha * teacher + (1 - alpha) * student`, elementwise.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return invalid("ema alpha", format!("{alpha} outside [0, 1]"));
    }
    teacher.check_same_layout(student)?;
    for ((_, t), (_, s)) in teacher.iter_mut().zip(student.iter()) {
        for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = alpha * *tv + (1.0 - alpha) * sv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use segadapt_tensor::Array;

    fn model() -> (SegModel, ParamStore) {
        let m = SegModel::new(ModelConfig {
            num_classes: 5,
            ..Default::default()
        })
        .unwrap();
        let p = m.init(&mut ChaCha8Rng::seed_from_u64(0));
        (m, p)
    }

    fn input(h: usize, w: usize) -> Tensor {
        Tensor::constant(Array::from_fn([1, h, w, 3], |i| ((i * 7919) % 1000) as f64 / 1000.0))
    }

    #[test]
    fn desk_pyramid_shapes() {
        let (m, p) = model();
        let feats = m.encode(&Weights::constant(&p), &input(64, 64)).unwrap();
        let shapes: Vec<_> = feats.iter().map(|f| f.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![vec![1, 16, 16, 8], vec![1, 8, 8, 16], vec![1, 4, 4, 32], vec![1, 2, 2, 64]]
        );
    }

    #[test]
    fn conv_baseline_matches_shapes() {
        let mut cfg = ModelConfig::default();
        cfg.encoder.variant = EncoderVariant::ConvBaseline;
        let m = SegModel::new(cfg).unwrap();
        let p = m.init(&mut ChaCha8Rng::seed_from_u64(0));
        let out = m.forward(&Weights::constant(&p), &input(32, 64), true).unwrap();
        assert_eq!(out.features[3].shape(), &[1, 1, 2, 64]);
        assert_eq!(out.logits.shape(), &[1, 8, 16, 8]);
    }

    #[test]
    fn indivisible_input_rejected() {
        let (m, p) = model();
        let err = m.encode(&Weights::constant(&p), &input(48, 64)).unwrap_err().to_string();
        assert!(err.contains("multiples of 32"), "{err}");
    }

    #[test]
    fn logits_and_attention_share_stride() {
        let (m, p) = model();
        let out = m.forward(&Weights::constant(&p), &input(64, 32), true).unwrap();
        assert_eq!(out.logits.shape(), &[1, 16, 8, 5]);
        let a = out.attention.unwrap();
        assert_eq!(a.shape(), &[1, 16, 8, 1]);
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_attention_classifier_gives_half() {
        let (m, mut p) = model();
        for name in ["attention_head.classifier.weight", "attention_head.classifier.bias"] {
            let a = p.get_mut(name).unwrap();
            a.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let out = m.forward(&Weights::constant(&p), &input(32, 32), true).unwrap();
        assert!(out.attention.unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_class_softmax_is_one() {
        let m = SegModel::new(ModelConfig {
            num_classes: 1,
            ..Default::default()
        })
        .unwrap();
        let p = m.init(&mut ChaCha8Rng::seed_from_u64(3));
        let out = m.forward(&Weights::constant(&p), &input(32, 32), false).unwrap();
        assert_eq!(out.logits.shape(), &[1, 8, 8, 1]);
        assert!(out.logits.softmax_last().unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let (m, p) = model();
        let w = Weights::constant(&p);
        let a = m.forward(&w, &input(32, 32), true).unwrap();
        let b = m.forward(&w, &input(32, 32), true).unwrap();
        assert_eq!(a.logits.data(), b.logits.data());
    }

    #[test]
    fn separable_fusion_is_smaller() {
        let count = |sep: bool| {
            let mut cfg = ModelConfig::default();
            cfg.decoder.use_depthwise_separable = sep;
            let p = SegModel::new(cfg).unwrap().init(&mut ChaCha8Rng::seed_from_u64(0));
            p.subset("decode_head.fusion.").num_scalars()
        };
        // Per branch with c = 4 * 32 concatenated channels and 32 outputs:
        // separable 9c + 2c + 32c + 64, dense 9 * 32c + 64; shared
        // bottleneck 4 * 32 * 32 + 64.
        let c = 128;
        let bottleneck = 4 * 32 * 32 + 64;
        assert_eq!(count(true), 4 * (9 * c + 2 * c + 32 * c + 64) + bottleneck);
        assert_eq!(count(false), 4 * (9 * 32 * c + 64) + bottleneck);
        assert!(count(true) < count(false));
    }

    #[test]
    fn ema_endpoints_and_midpoint() {
        let mut s = ParamStore::new();
        s.insert("w", Array::full([2], 4.0));
        let mut t = ParamStore::new();
        t.insert("w", Array::full([2], 2.0));
        let mut t0 = t.clone();
        ema_update(&mut t0, &s, 0.0).unwrap();
        assert_eq!(t0, s);
        let mut t1 = t.clone();
        ema_update(&mut t1, &s, 1.0).unwrap();
        assert_eq!(t1, t);
        ema_update(&mut t, &s, 0.5).unwrap();
        assert_eq!(t.get("w").unwrap().data(), &[3.0, 3.0]);
        let mut bad = ParamStore::new();
        bad.insert("w", Array::zeros([3]));
        assert!(ema_update(&mut t, &bad, 0.5).is_err());
    }

    #[test]
    fn bundle_reference_holds_encoder_only() {
        let (m, _) = model();
        let b = ModelBundle::new(&m, &mut ChaCha8Rng::seed_from_u64(1));
        b.check_layout().unwrap();
        assert!(b.reference.names().all(|n| n.starts_with(ENCODER_PREFIX)));
        assert_eq!(b.student, b.teacher);
    }
}
