use serde::{Deserialize, Serialize};

use crate::data::{LabelMap, IGNORE};
use crate::error::{invalid, Result};

/// Pixel counts indexed by (ground truth, prediction).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            k: num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    /// Adds one image; ground-truth [`IGNORE`] pixels are skipped.
    pub fn add(&mut self, truth: &[u8], pred: &[u8]) -> Result<()> {
        if truth.len() != pred.len() {
            return invalid("confusion", format!("{} labels vs {} predictions", truth.len(), pred.len()));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if t == IGNORE {
                continue;
            }
            let (t, p) = (t as usize, p as usize);
            if t >= self.k || p >= self.k {
                return invalid("confusion", format!("class {} out of range for {}", t.max(p), self.k));
            }
            self.counts[t * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn add_maps(&mut self, truth: &LabelMap, pred: &LabelMap) -> Result<()> {
        if (truth.height(), truth.width()) != (pred.height(), pred.width()) {
            return invalid("confusion", "label and prediction sizes differ");
        }
        self.add(truth.data(), pred.data())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return invalid("confusion", format!("{} vs {} classes", self.k, other.k));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn report(&self, step: u64) -> EvalReport {
        let k = self.k;
        let mut tp = vec![0; k];
        let mut fp = vec![0; k];
        let mut fn_ = vec![0; k];
        for t in 0..k {
            for p in 0..k {
                let c = self.get(t, p);
                if t == p {
                    tp[t] += c;
                } else {
                    fn_[t] += c;
                    fp[p] += c;
                }
            }
        }
        let iou: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let denom = tp[c] + fp[c] + fn_[c];
                (denom > 0).then(|| tp[c] as f64 / denom as f64)
            })
            .collect();
        let present: Vec<f64> = (0..k).filter(|&c| tp[c] + fn_[c] > 0).filter_map(|c| iou[c]).collect();
        let miou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        EvalReport {
            step,
            miou,
            iou,
            tp,
            fp,
            fn_,
        }
    }
}

/// Per-class intersection over union. Classes that neither occur nor are
/// predicted have no IoU; the mean runs over classes occurring in the
/// ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: u64,
    pub miou: f64,
    pub iou: Vec<Option<f64>>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let mut m = ConfusionMatrix::new(3);
        m.add(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        let r = m.report(0);
        assert_eq!(r.iou, vec![Some(1.0); 3]);
        assert_eq!(r.miou, 1.0);
    }

    #[test]
    fn constant_prediction_on_two_pixels() {
        let mut m = ConfusionMatrix::new(2);
        m.add(&[0, 1], &[0, 0]).unwrap();
        let r = m.report(0);
        assert_eq!(r.iou, vec![Some(0.5), Some(0.0)]);
        assert_eq!(r.miou, 0.25);
    }

    #[test]
    fn ignore_and_absent_classes() {
        let mut m = ConfusionMatrix::new(3);
        m.add(&[0, IGNORE, 0], &[0, 2, 2]).unwrap();
        let r = m.report(0);
        assert_eq!(r.iou, vec![Some(0.5), None, Some(0.0)]);
        // Class 2 is predicted but absent from the ground truth.
        assert_eq!(r.miou, 0.5);
        assert!(m.add(&[3], &[0]).is_err());
    }
}
