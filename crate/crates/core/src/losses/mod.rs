//! Quality-weighted cross-entropy, thing-class feature distance and the
//! style-consistency divergence.

use serde::{Deserialize, Serialize};
use segadapt_tensor::{Array, Tensor};

use crate::data::{LabelMap, IGNORE};
use crate::error::{invalid, Result};

/// Probability floor before taking logarithms of probability maps.
pub const PROB_EPS: f64 = 1e-12;

/// Per-pixel loss weight: one value for all pixels or one per pixel.
#[derive(Clone, Copy, Debug)]
pub enum Quality<'a> {
    Scalar(f64),
    Map(&'a [f64]),
}

impl Quality<'_> {
    fn expand(&self, n: usize) -> Result<Vec<f64>> {
        let weights = match *self {
            Quality::Scalar(q) => vec![q; n],
            Quality::Map(m) if m.len() == n => m.to_vec(),
            Quality::Map(m) => return invalid("quality map", format!("{} weights for {n} pixels", m.len())),
        };
        if let Some(q) = weights.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return invalid("quality", format!("{q} outside [0, 1]"));
        }
        Ok(weights)
    }
}

#[derive(Clone, Debug)]
pub struct CeLoss {
    pub loss: Tensor,
    /// Number of non-ignored pixels the loss is normalized by.
    pub contributing: usize,
}

impl CeLoss {
    /// True when every pixel was ignored and the loss is the constant 0.
    pub fn all_ignored(&self) -> bool {
        self.contributing == 0
    }
}

fn targets(target: &[u8]) -> Vec<usize> {
    target.iter().map(|&t| t as usize).collect()
}

/// `-sum_i q_i log softmax(logits_i)[y_i] / n` over the `n` non-ignored
/// pixels. `logits` holds classes on its last axis; `target` lists one label
/// per pixel in the same order.
pub fn weighted_cross_entropy(logits: &Tensor, target: &[u8], q: Quality<'_>) -> Result<CeLoss> {
    let weights = q.expand(target.len())?;
    let (loss, contributing) = logits
        .log_softmax_last()?
        .weighted_nll(&targets(target), &weights, IGNORE as usize)?;
    Ok(CeLoss { loss, contributing })
}

/// Same as [`weighted_cross_entropy`] for inputs that already are
/// probabilities; they are floored at [`PROB_EPS`] before the logarithm.
pub fn weighted_cross_entropy_probs(probs: &Tensor, target: &[u8], q: Quality<'_>) -> Result<CeLoss> {
    let weights = q.expand(target.len())?;
    let (loss, contributing) = probs
        .clamp_min(PROB_EPS)
        .log()
        .weighted_nll(&targets(target), &weights, IGNORE as usize)?;
    Ok(CeLoss { loss, contributing })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdConfig {
    /// A class must cover strictly more than this share of a patch.
    pub r: f64,
    pub lambda_fd: f64,
    pub enabled: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            r: 0.75,
            lambda_fd: 0.005,
            enabled: true,
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 1.0) || !(self.lambda_fd >= 0.0) {
            return invalid("fd config", format!("r = {}, lambda_fd = {}", self.r, self.lambda_fd));
        }
        Ok(())
    }
}

/// Marks feature cells whose label patch is dominated by a thing class.
///
/// The label is split into `out_h x out_w` patches. A class is kept in a
/// patch when its pixel share strictly exceeds `r`; ignored pixels count
/// towards the patch area only. Returns a row-major `out_h x out_w` mask.
pub fn downsample_thing_mask(
    label: &LabelMap,
    thing_flags: &[bool],
    r: f64,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<u8>> {
    let (h, w) = (label.height(), label.width());
    if out_h == 0 || out_w == 0 || h % out_h != 0 || w % out_w != 0 {
        return invalid("thing mask", format!("{h}x{w} label does not tile into {out_h}x{out_w}"));
    }
    let (ph, pw) = (h / out_h, w / out_w);
    let area = (ph * pw) as f64;
    let mut counts = vec![0usize; thing_flags.len()];
    let mut mask = vec![0u8; out_h * out_w];
    for oy in 0..out_h {
        for ox in 0..out_w {
            counts.iter_mut().for_each(|c| *c = 0);
            for y in oy * ph..(oy + 1) * ph {
                for x in ox * pw..(ox + 1) * pw {
                    let v = label.get(y, x) as usize;
                    if v < counts.len() {
                        counts[v] += 1;
                    }
                }
            }
            let kept_thing = counts
                .iter()
                .zip(thing_flags)
                .any(|(&c, &thing)| thing && c as f64 / area > r);
            mask[oy * out_w + ox] = kept_thing as u8;
        }
    }
    Ok(mask)
}

#[derive(Clone, Debug)]
pub struct FdLoss {
    pub loss: Tensor,
    /// True when the mask selected nothing and the loss is the constant 0.
    pub empty: bool,
}

/// Mean Euclidean distance between student and reference feature vectors
/// over the masked cells. The reference is detached; the norm's gradient is
/// taken as 0 where the distance is 0.
pub fn feature_distance_loss(f_ref: &Tensor, f_student: &Tensor, mask: &[u8]) -> Result<FdLoss> {
    if f_ref.shape() != f_student.shape() {
        return invalid(
            "feature distance",
            format!("reference {:?} vs student {:?}", f_ref.shape(), f_student.shape()),
        );
    }
    let (n, h, w, _) = f_student.dims4()?;
    if mask.len() != n * h * w || mask.iter().any(|&m| m > 1) {
        return invalid("feature distance", format!("mask must be {} binary values", n * h * w));
    }
    let selected = mask.iter().filter(|&&m| m == 1).count();
    if selected == 0 {
        return Ok(FdLoss {
            loss: Tensor::scalar(0.0),
            empty: true,
        });
    }
    let d = f_student.sub(&f_ref.detach())?.sqr().sum_last()?.sqrt();
    let m = Tensor::constant(Array::new([n, h, w, 1], mask.iter().map(|&v| v as f64).collect())?);
    Ok(FdLoss {
        loss: d.mul(&m)?.sum_all().scale(1.0 / selected as f64),
        empty: false,
    })
}

fn entropy(p: &Tensor) -> Result<Tensor> {
    Ok(p.mul(&p.clamp_min(PROB_EPS).log())?.sum_last()?.neg())
}

/// Mean over pixels of the Jensen-Shannon divergence of several probability
/// maps with classes on the last axis, using natural logarithms.
pub fn style_consistency_divergence(maps: &[Tensor]) -> Result<Tensor> {
    let Some(first) = maps.first() else {
        return invalid("consistency", "no probability maps");
    };
    let k = *first.shape().last().unwrap_or(&0);
    for p in maps {
        if p.shape() != first.shape() {
            return invalid("consistency", format!("shapes {:?} and {:?}", first.shape(), p.shape()));
        }
        for (i, row) in p.data().chunks(k.max(1)).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-5 || row.iter().any(|&v| v < 0.0) {
                return invalid("consistency", format!("row {i} sums to {s}"));
            }
        }
    }
    let inv = 1.0 / maps.len() as f64;
    let mut mean = maps[0].clone();
    let mut mean_entropy = entropy(&maps[0])?;
    for p in &maps[1..] {
        mean = mean.add(p)?;
        mean_entropy = mean_entropy.add(&entropy(p)?)?;
    }
    let jsd = entropy(&mean.scale(inv))?.sub(&mean_entropy.scale(inv))?;
    Ok(jsd.mean_all())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let l = weighted_cross_entropy(&t(&[1, 1, 1, 2], &[0.0, 0.0]), &[0], Quality::Scalar(1.0)).unwrap();
        assert!((l.loss.item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_shrinks_with_margin() {
        let ce = |m: f64| {
            weighted_cross_entropy(&t(&[1, 2], &[m, 0.0]), &[0], Quality::Scalar(1.0))
                .unwrap()
                .loss
                .item()
                .unwrap()
        };
        assert!(ce(1.0) > ce(5.0) && ce(5.0) > ce(20.0) && ce(40.0) < 1e-15);
    }

    #[test]
    fn zero_quality_and_all_ignored() {
        let logits = t(&[2, 3], &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let l = weighted_cross_entropy(&logits, &[0, 2], Quality::Scalar(0.0)).unwrap();
        assert_eq!(l.loss.item().unwrap(), 0.0);
        let l = weighted_cross_entropy(&logits, &[IGNORE, IGNORE], Quality::Scalar(1.0)).unwrap();
        assert!(l.all_ignored());
        assert_eq!(l.loss.item().unwrap(), 0.0);
        assert!(weighted_cross_entropy(&logits, &[0, 2], Quality::Scalar(1.5)).is_err());
    }

    #[test]
    fn thing_mask_threshold_is_strict() {
        let flags = [false, true];
        let mut data = vec![0u8; 16];
        data[..13].fill(1);
        let l = LabelMap::new(4, 4, data.clone()).unwrap();
        assert_eq!(downsample_thing_mask(&l, &flags, 0.75, 1, 1).unwrap(), vec![1]);
        data[11..13].fill(0);
        let l = LabelMap::new(4, 4, data.clone()).unwrap();
        assert_eq!(downsample_thing_mask(&l, &flags, 0.75, 1, 1).unwrap(), vec![0]);
        data[..12].fill(1);
        let l = LabelMap::new(4, 4, data).unwrap();
        assert_eq!(downsample_thing_mask(&l, &flags, 0.75, 1, 1).unwrap(), vec![0]);
        let stuff = LabelMap::new(4, 4, vec![0; 16]).unwrap();
        assert_eq!(downsample_thing_mask(&stuff, &flags, 0.75, 2, 2).unwrap(), vec![0; 4]);
        assert!(downsample_thing_mask(&stuff, &flags, 0.75, 3, 2).is_err());
    }

    #[test]
    fn feature_distance_by_hand() {
        let r = t(&[1, 1, 1, 2], &[0.0, 0.0]);
        let s = Tensor::leaf(Array::new([1, 1, 1, 2], vec![3.0, 4.0]).unwrap());
        let fd = feature_distance_loss(&r, &s, &[1]).unwrap();
        assert_eq!(fd.loss.item().unwrap(), 5.0);
        let g = fd.loss.backward().unwrap();
        let gs = g.get(&s).unwrap().data();
        assert!((gs[0] - 0.6).abs() < 1e-12 && (gs[1] - 0.8).abs() < 1e-12);
        let same = feature_distance_loss(&r, &r, &[1]).unwrap();
        assert_eq!(same.loss.item().unwrap(), 0.0);
        let empty = feature_distance_loss(&r, &s, &[0]).unwrap();
        assert!(empty.empty);
        assert_eq!(empty.loss.item().unwrap(), 0.0);
    }

    #[test]
    fn zero_distance_has_zero_gradient() {
        let r = t(&[1, 1, 1, 2], &[1.0, 2.0]);
        let s = Tensor::leaf(r.value().clone());
        let g = feature_distance_loss(&r, &s, &[1]).unwrap().loss.backward().unwrap();
        assert_eq!(g.get(&s).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn jsd_closed_forms() {
        let a = t(&[1, 2], &[1.0, 0.0]);
        let b = t(&[1, 2], &[0.0, 1.0]);
        let j = style_consistency_divergence(&[a.clone(), b]).unwrap().item().unwrap();
        assert!((j - std::f64::consts::LN_2).abs() < 1e-12);
        let z = style_consistency_divergence(&[a.clone(), a]).unwrap().item().unwrap();
        assert!(z.abs() < 1e-15);
        assert!(style_consistency_divergence(&[t(&[1, 2], &[0.5, 0.6])]).is_err());
    }
}
