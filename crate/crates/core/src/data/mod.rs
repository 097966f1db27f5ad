//! Samples, dataset metadata, on-disk datasets and the procedural toy domains.

pub mod color;
mod image;
mod io;
mod resize;
pub mod toy;

use serde::{Deserialize, Serialize};

pub use self::image::{CropBox, Image, LabelMap};
pub use self::io::{load_dataset, read_image, write_color_png, write_dataset, write_label_png};
pub use self::resize::{resize_bilinear, resize_with, Scale};
pub use self::toy::{generate_toy_sample, ToyDomainConfig, ToyShift, ToySplits};

use crate::error::{invalid, Result};

/// Label value excluded from every loss and metric.
pub const IGNORE: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: LabelMap,
    pub domain: Domain,
    pub id: String,
}

impl Sample {
    pub fn new(image: Image, label: LabelMap, domain: Domain, id: impl Into<String>) -> Result<Self> {
        if (image.height(), image.width()) != (label.height(), label.width()) {
            return invalid(
                "sample",
                format!(
                    "image {}x{} but label {}x{}",
                    image.height(),
                    image.width(),
                    label.height(),
                    label.width()
                ),
            );
        }
        Ok(Self {
            image,
            label,
            domain,
            id: id.into(),
        })
    }

    /// Fails on any label value `>= num_classes` other than [`IGNORE`].
    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self
            .label
            .data()
            .iter()
            .find(|&&v| v != IGNORE && v as usize >= num_classes)
        {
            Some(v) => invalid(
                "label",
                format!("{}: value {v} with {num_classes} classes", self.id),
            ),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub class_names: Vec<String>,
    pub thing_flags: Vec<bool>,
    pub palette: Vec<[u8; 3]>,
    pub num_samples: usize,
}

impl DatasetMeta {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_names.len();
        if k == 0 || k > IGNORE as usize {
            return invalid("dataset meta", format!("{k} classes"));
        }
        if self.thing_flags.len() != k || self.palette.len() != k {
            return invalid(
                "dataset meta",
                format!(
                    "{k} class names, {} thing flags, {} palette entries",
                    self.thing_flags.len(),
                    self.palette.len()
                ),
            );
        }
        Ok(())
    }

    pub fn has_things(&self) -> bool {
        self.thing_flags.iter().any(|&t| t)
    }
}

/// Metadata plus samples held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, samples: Vec<Sample>) -> Result<Self> {
        meta.validate()?;
        for s in &samples {
            s.check_labels(meta.num_classes())?;
        }
        Ok(Self { meta, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }
}
