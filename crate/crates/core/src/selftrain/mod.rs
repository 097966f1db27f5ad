//! Self-training on unlabeled target images: pseudo-labels with a confidence
//! quality estimate, edge masking, photometric augmentation and ClassMix.

mod step;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use segadapt_tensor::Array;

use crate::data::color::{adjust_brightness, adjust_contrast, adjust_saturation, gaussian_blur, rotate_hue};
use crate::data::{Image, LabelMap, IGNORE};
use crate::error::{invalid, Result};

pub use step::{source_step, uda_step, StepConfig, StepLosses, UdaBatch};
pub(crate) use step::{apply_update, source_terms};

/// Rows excluded from pseudo-labels at the top and bottom of the full image,
/// given for a reference height and scaled proportionally.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeIgnore {
    pub top: usize,
    pub bottom: usize,
    pub reference_height: usize,
}

impl Default for EdgeIgnore {
    fn default() -> Self {
        Self {
            top: 15,
            bottom: 120,
            reference_height: 1024,
        }
    }
}

/// Resolved number of masked rows at the top and bottom of one map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeBands {
    pub top: usize,
    pub bottom: usize,
}

impl EdgeIgnore {
    pub fn none() -> Self {
        Self {
            top: 0,
            bottom: 0,
            reference_height: 1024,
        }
    }

    /// `round(band * height / reference_height)` for both bands.
    pub fn bands(&self, height: usize) -> EdgeBands {
        let scale = |b: usize| ((b * height) as f64 / self.reference_height as f64).round() as usize;
        EdgeBands {
            top: scale(self.top),
            bottom: scale(self.bottom),
        }
    }

    /// Bands of a crop covering rows `y0..y0 + h` of a full image of height
    /// `full_height`, both measured at the same resolution.
    pub fn crop_bands(&self, full_height: usize, y0: usize, h: usize) -> EdgeBands {
        let full = self.bands(full_height);
        let bottom_start = full_height.saturating_sub(full.bottom);
        EdgeBands {
            top: full.top.saturating_sub(y0).min(h),
            bottom: (y0 + h).saturating_sub(bottom_start.max(y0)).min(h),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub jitter_strength: f32,
    pub jitter_probability: f64,
    pub blur: bool,
    pub blur_probability: f64,
    pub blur_sigma: [f32; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter_strength: 0.2,
            jitter_probability: 0.2,
            blur: true,
            blur_probability: 0.5,
            blur_sigma: [0.15, 1.15],
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            jitter_strength: 0.0,
            jitter_probability: 0.0,
            blur: false,
            blur_probability: 0.0,
            blur_sigma: [0.15, 1.15],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTrainConfig {
    pub alpha: f64,
    pub tau: f64,
    pub edge_ignore: EdgeIgnore,
    pub augment: AugmentConfig,
    /// Weight of the target loss; 0 turns self-training off.
    pub target_weight: f64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.999,
            tau: 0.968,
            edge_ignore: EdgeIgnore::default(),
            augment: AugmentConfig::default(),
            target_weight: 1.0,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self, image_height: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid("self-training", format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return invalid("self-training", format!("tau {} outside (0, 1)", self.tau));
        }
        let b = self.edge_ignore.bands(image_height);
        if self.edge_ignore.reference_height == 0 || b.top + b.bottom >= image_height {
            return invalid("self-training", format!("edge bands {b:?} cover a {image_height}-row image"));
        }
        let a = &self.augment;
        if !(0.0..=0.5).contains(&a.jitter_strength)
            || !(0.0..=1.0).contains(&a.jitter_probability)
            || !(0.0..=1.0).contains(&a.blur_probability)
            || !(0.0 < a.blur_sigma[0] && a.blur_sigma[0] <= a.blur_sigma[1])
        {
            return invalid("augmentation", format!("{a:?}"));
        }
        if !(self.target_weight >= 0.0) {
            return invalid("self-training", "target_weight must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    /// Argmax class where valid, [`IGNORE`] elsewhere.
    pub labels: LabelMap,
    /// Share of valid pixels whose top probability reaches the threshold.
    pub quality: f64,
    pub valid: Vec<bool>,
}

impl PseudoLabel {
    /// True when no pixel is valid (quality is then 0).
    pub fn degenerate(&self) -> bool {
        !self.valid.iter().any(|&v| v)
    }
}

/// Pseudo-label from an `H x W x K` (or `1 x H x W x K`) probability map.
/// Ties resolve to the lowest class index.
pub fn make_pseudo_label(probs: &Array, tau: f64, bands: EdgeBands) -> Result<PseudoLabel> {
    let (h, w, k) = match *probs.shape() {
        [h, w, k] | [1, h, w, k] => (h, w, k),
        _ => return invalid("pseudo-label", format!("probability shape {:?}", probs.shape())),
    };
    if k == 0 || k > IGNORE as usize {
        return invalid("pseudo-label", format!("{k} classes"));
    }
    let mut labels = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    let (mut n_valid, mut confident) = (0usize, 0usize);
    for (i, row) in probs.data().chunks_exact(k).enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-5 {
            return invalid("pseudo-label", format!("pixel {i} probabilities sum to {total}"));
        }
        let mut best = 0;
        for c in 1..k {
            if row[c] > row[best] {
                best = c;
            }
        }
        let y = i / w;
        let ok = y >= bands.top && y + bands.bottom < h;
        valid.push(ok);
        if ok {
            n_valid += 1;
            confident += (row[best] >= tau) as usize;
            labels.push(best as u8);
        } else {
            labels.push(IGNORE);
        }
    }
    let quality = if n_valid == 0 { 0.0 } else { confident as f64 / n_valid as f64 };
    Ok(PseudoLabel {
        labels: LabelMap::new(h, w, labels)?,
        quality,
        valid,
    })
}

/// Output of [`classmix`]: mixed image and labels with per-pixel loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixed {
    pub image: Image,
    pub label: LabelMap,
    pub quality: Vec<f64>,
    /// True where the source pixel was pasted.
    pub from_source: Vec<bool>,
}

/// Pastes the source pixels of half the source classes (rounded up, chosen
/// uniformly without replacement) onto the target image.
pub fn classmix<R: Rng + ?Sized>(
    src_image: &Image,
    src_label: &LabelMap,
    tgt_image: &Image,
    pseudo: &PseudoLabel,
    rng: &mut R,
) -> Result<Mixed> {
    let present = src_label.classes_present(IGNORE);
    let n = present.len();
    let chosen: Vec<u8> = sample_indices(rng, n, n.div_ceil(2)).into_iter().map(|i| present[i]).collect();
    classmix_with(src_image, src_label, tgt_image, pseudo, &chosen)
}

/// ClassMix with an explicit set of pasted classes.
pub fn classmix_with(
    src_image: &Image,
    src_label: &LabelMap,
    tgt_image: &Image,
    pseudo: &PseudoLabel,
    selected: &[u8],
) -> Result<Mixed> {
    let (h, w) = (src_label.height(), src_label.width());
    let sizes = [
        (src_image.height(), src_image.width()),
        (tgt_image.height(), tgt_image.width()),
        (pseudo.labels.height(), pseudo.labels.width()),
    ];
    if sizes.iter().any(|&s| s != (h, w)) {
        return invalid("classmix", format!("sizes {sizes:?} differ from label {h}x{w}"));
    }
    let mut pick = [false; 256];
    for &c in selected {
        pick[c as usize] = true;
    }
    let from_source: Vec<bool> = src_label.data().iter().map(|&v| pick[v as usize]).collect();
    let image = tgt_image.map_pixels(|y, x, p| if from_source[y * w + x] { src_image.pixel(y, x) } else { p });
    let mut label = pseudo.labels.clone();
    let mut quality = vec![0.0; h * w];
    for i in 0..h * w {
        if from_source[i] {
            label.data_mut()[i] = src_label.data()[i];
            quality[i] = 1.0;
        } else if pseudo.valid[i] {
            quality[i] = pseudo.quality;
        }
    }
    Ok(Mixed {
        image,
        label,
        quality,
        from_source,
    })
}

/// Odd blur kernel of roughly a tenth of the image height.
fn blur_kernel(height: usize) -> usize {
    let c = height.div_ceil(10);
    if c % 2 == 1 {
        c.max(3)
    } else {
        (c - 1).max(3)
    }
}

/// Random color jitter (brightness, contrast, saturation, hue) followed by an
/// optional Gaussian blur.
pub fn augment<R: Rng + ?Sized>(image: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    let mut out = image.clone();
    let s = cfg.jitter_strength;
    if s > 0.0 && cfg.jitter_probability > 0.0 && rng.gen_bool(cfg.jitter_probability) {
        let factor = |rng: &mut R| rng.gen_range((1.0 - s).max(0.0)..=1.0 + s);
        let (b, c, sat) = (factor(rng), factor(rng), factor(rng));
        let hue = rng.gen_range(-s..=s);
        out = adjust_brightness(&out, b);
        out = adjust_contrast(&out, c);
        out = adjust_saturation(&out, sat);
        out = rotate_hue(&out, hue);
    }
    if cfg.blur && cfg.blur_probability > 0.0 && rng.gen_bool(cfg.blur_probability) {
        let sigma = rng.gen_range(cfg.blur_sigma[0]..=cfg.blur_sigma[1]);
        out = gaussian_blur(&out, blur_kernel(image.height()), sigma);
    }
    out
}
