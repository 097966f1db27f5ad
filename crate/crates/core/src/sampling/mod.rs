//! Class-frequency statistics and rare-class sampling of source images.

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelMap, IGNORE};
use crate::error::{format_err, invalid, io_err, Result};

pub const STATS_VERSION: u32 = 1;

/// Pixel statistics of a labeled dataset.
///
/// `omega[k]` is the share of class `k` among all pixels, so the entries sum
/// to the non-ignored fraction. `class_index[k]` lists the positions of the
/// samples containing class `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub omega: Vec<f64>,
    pub class_index: Vec<Vec<usize>>,
    pub total_pixels: u64,
    pub sample_ids: Vec<String>,
    /// Per-sample, per-class pixel counts.
    pub pixel_counts: Vec<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    version: u32,
    #[serde(flatten)]
    stats: ClassStats,
}

impl ClassStats {
    pub fn num_classes(&self) -> usize {
        self.omega.len()
    }

    pub fn num_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = StatsFile {
            version: STATS_VERSION,
            stats: self.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| format_err(path.display().to_string())(e.to_string()))?;
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ctx = || format_err(path.display().to_string());
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let file: StatsFile = serde_json::from_str(&text).map_err(|e| ctx()(e.to_string()))?;
        if file.version != STATS_VERSION {
            return Err(ctx()(format!("stats version {} (expected {STATS_VERSION})", file.version)));
        }
        Ok(file.stats)
    }
}

/// Counts pixels per class over `labels`.
pub fn class_stats_from_labels<'a>(
    ids: impl IntoIterator<Item = String>,
    labels: impl IntoIterator<Item = &'a LabelMap>,
    num_classes: usize,
) -> Result<ClassStats> {
    let mut counts = vec![0u64; num_classes];
    let mut class_index = vec![Vec::new(); num_classes];
    let mut pixel_counts = Vec::new();
    let mut total = 0u64;
    for (m, label) in labels.into_iter().enumerate() {
        let mut own = vec![0u64; num_classes];
        for &v in label.data() {
            if v == IGNORE {
                continue;
            }
            let k = v as usize;
            if k >= num_classes {
                return invalid("label", format!("value {v} with {num_classes} classes"));
            }
            own[k] += 1;
        }
        for k in 0..num_classes {
            counts[k] += own[k];
            if own[k] > 0 {
                class_index[k].push(m);
            }
        }
        total += label.data().len() as u64;
        pixel_counts.push(own);
    }
    if pixel_counts.is_empty() {
        return invalid("dataset", "no samples to count");
    }
    let sample_ids: Vec<String> = ids.into_iter().collect();
    if sample_ids.len() != pixel_counts.len() {
        return invalid("dataset", "id and label counts differ");
    }
    Ok(ClassStats {
        omega: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        class_index,
        total_pixels: total,
        sample_ids,
        pixel_counts,
    })
}

pub fn compute_class_stats(dataset: &Dataset) -> Result<ClassStats> {
    class_stats_from_labels(
        dataset.iter().map(|s| s.id.clone()),
        dataset.iter().map(|s| &s.label),
        dataset.meta.num_classes(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcsConfig {
    pub temperature: f64,
    pub enabled: bool,
}

impl Default for RcsConfig {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            enabled: true,
        }
    }
}

impl RcsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return invalid("rcs temperature", format!("{} is not positive", self.temperature));
        }
        Ok(())
    }
}

/// Softmax of `(1 - omega) / temperature`, stabilized by subtracting the max.
pub fn rcs_probabilities(omega: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return invalid("rcs temperature", format!("{temperature} is not positive"));
    }
    let logits: Vec<f64> = omega.iter().map(|w| (1.0 - w) / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / total).collect())
}

/// One source draw: the sampled class (when rare-class sampling is on) and
/// the dataset position of the chosen image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub class: Option<usize>,
    pub sample: usize,
}

/// Precomputed sampling distribution over the classes that occur.
///
/// Classes without any pixel have no image to draw from and are excluded
/// before the softmax.
#[derive(Clone, Debug)]
pub struct RareClassSampler {
    classes: Vec<usize>,
    probs: Vec<f64>,
    dist: Option<WeightedIndex<f64>>,
    class_index: Vec<Vec<usize>>,
    num_samples: usize,
}

impl RareClassSampler {
    pub fn new(stats: &ClassStats, cfg: &RcsConfig) -> Result<Self> {
        cfg.validate()?;
        let classes: Vec<usize> = (0..stats.num_classes()).filter(|&k| !stats.class_index[k].is_empty()).collect();
        if classes.is_empty() {
            return invalid("class stats", "no class has any pixel");
        }
        let present: Vec<f64> = classes.iter().map(|&k| stats.omega[k]).collect();
        let probs = rcs_probabilities(&present, cfg.temperature)?;
        let dist = if cfg.enabled {
            Some(WeightedIndex::new(&probs).map_err(|e| crate::error::Error::Invalid {
                what: "rcs probabilities",
                msg: e.to_string(),
            })?)
        } else {
            None
        };
        Ok(Self {
            classes,
            probs,
            dist,
            class_index: stats.class_index.clone(),
            num_samples: stats.num_samples(),
        })
    }

    /// `(class, probability)` for every class that can be drawn.
    pub fn class_probabilities(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.classes.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        match &self.dist {
            Some(dist) => {
                let class = self.classes[dist.sample(rng)];
                let pool = &self.class_index[class];
                Draw {
                    class: Some(class),
                    sample: pool[rng.gen_range(0..pool.len())],
                }
            }
            None => Draw {
                class: None,
                sample: rng.gen_range(0..self.num_samples),
            },
        }
    }
}

pub fn sample_source<R: Rng + ?Sized>(stats: &ClassStats, cfg: &RcsConfig, rng: &mut R) -> Result<Draw> {
    Ok(RareClassSampler::new(stats, cfg)?.sample(rng))
}

/// Expected pixels of every class in one drawn image at a given temperature.
pub fn expected_class_pixels(stats: &ClassStats, temperature: f64) -> Result<Vec<f64>> {
    let sampler = RareClassSampler::new(
        stats,
        &RcsConfig {
            temperature,
            enabled: true,
        },
    )?;
    let k = stats.num_classes();
    let mut expected = vec![0.0; k];
    for (class, p) in sampler.class_probabilities() {
        let pool = &stats.class_index[class];
        for &m in pool {
            for (c, e) in expected.iter_mut().enumerate() {
                *e += p * stats.pixel_counts[m][c] as f64 / pool.len() as f64;
            }
        }
    }
    Ok(expected)
}

/// Row of the temperature diagnostic: the class receiving the fewest expected
/// pixels per drawn image, and how many.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TemperatureRow {
    pub temperature: f64,
    pub weakest_class: usize,
    pub weakest_pixels: f64,
}

/// Evaluates each candidate temperature by the expected pixel count of its
/// least-sampled present class. Higher is better.
pub fn temperature_report(stats: &ClassStats, temperatures: &[f64]) -> Result<Vec<TemperatureRow>> {
    temperatures
        .iter()
        .map(|&t| {
            let expected = expected_class_pixels(stats, t)?;
            let (weakest_class, weakest_pixels) = expected
                .iter()
                .enumerate()
                .filter(|(k, _)| !stats.class_index[*k].is_empty())
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, &v)| (k, v))
                .unwrap_or((0, 0.0));
            Ok(TemperatureRow {
                temperature: t,
                weakest_class,
                weakest_pixels,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(maps: &[&[u8]]) -> Vec<LabelMap> {
        maps.iter().map(|m| LabelMap::new(2, 2, m.to_vec()).unwrap()).collect()
    }

    fn stats(maps: &[&[u8]], k: usize) -> ClassStats {
        let l = labels(maps);
        class_stats_from_labels((0..l.len()).map(|i| i.to_string()), l.iter(), k).unwrap()
    }

    #[test]
    fn single_class_image() {
        let s = stats(&[&[0, 0, 0, 0]], 2);
        assert_eq!(s.omega, vec![1.0, 0.0]);
        assert_eq!(s.class_index, vec![vec![0], vec![]]);
    }

    #[test]
    fn pixel_count_fractions() {
        let s = stats(&[&[0, 0, 0, 1], &[0, 0, 1, 1]], 2);
        assert_eq!(s.omega, vec![0.625, 0.375]);
    }

    #[test]
    fn ignore_pixels_only_reduce_the_sum() {
        let s = stats(&[&[0, 1, IGNORE, IGNORE]], 2);
        assert_eq!(s.omega, vec![0.25, 0.25]);
        assert_eq!(s.total_pixels, 4);
    }

    #[test]
    fn symmetric_probabilities() {
        let p = rcs_probabilities(&[0.5, 0.5], 0.3).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = rcs_probabilities(&[0.9, 0.05, 0.05], 1e9).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-6));
        assert!(rcs_probabilities(&[0.5], 0.0).is_err());
    }

    #[test]
    fn single_class_dataset_always_draws_it() {
        let s = stats(&[&[1; 4], &[1; 4]], 3);
        let sampler = RareClassSampler::new(&s, &RcsConfig::default()).unwrap();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0x9e37_79b9_7f4a_7c15);
        for _ in 0..50 {
            assert_eq!(sampler.sample(&mut rng).class, Some(1));
        }
    }

    #[test]
    fn stats_cache_round_trip() {
        let s = stats(&[&[0, 1, 1, IGNORE], &[2, 2, 2, 2]], 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        s.save(&path).unwrap();
        assert_eq!(ClassStats::load(&path).unwrap(), s);
    }

    #[test]
    fn rare_class_gets_more_pixels_at_low_temperature() {
        let s = stats(&[&[0, 0, 0, 0], &[0, 0, 0, 1]], 2);
        let rows = temperature_report(&s, &[100.0, 0.01]).unwrap();
        assert_eq!(rows[0].weakest_class, 1);
        assert!(rows[1].weakest_pixels > rows[0].weakest_pixels);
    }
}
