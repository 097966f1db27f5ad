//! Dataset directory layout:
//!
//! ```text
//! root/
//!   meta.json          DatasetMeta as JSON
//!   images/<id>.png    8-bit RGB
//!   labels/<id>.png    8-bit single-channel class indices, 255 = ignore
//! ```
//!
//! Samples are paired by file stem and returned sorted by id.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, GrayImage, RgbImage};

use crate::data::{Dataset, DatasetMeta, Domain, Image, LabelMap, Sample};
use crate::error::{io_err, Error, Result};

pub const META_FILE: &str = "meta.json";

fn dataset_err(path: impl Into<PathBuf>, msg: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.into(),
        msg: msg.into(),
    }
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

/// Reads any supported image file as RGB in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .to_rgb8();
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Image::new(img.height() as usize, img.width() as usize, data)
}

fn read_label(path: &Path) -> Result<LabelMap> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    if img.color() != ColorType::L8 {
        return Err(dataset_err(
            path,
            format!("label must be 8-bit single channel, found {:?}", img.color()),
        ));
    }
    let img = img.into_luma8();
    LabelMap::new(img.height() as usize, img.width() as usize, img.into_raw())
}

/// Reads `meta.json`, `images/` and `labels/` under `root`.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let meta_path = root.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let stored: StoredMeta =
        serde_json::from_str(&text).map_err(|e| dataset_err(&meta_path, e.to_string()))?;
    let meta = stored.meta;
    meta.validate()?;
    let images = png_stems(&root.join("images"))?;
    let labels = png_stems(&root.join("labels"))?;
    if let Some((stem, _)) = labels.iter().find(|(s, _)| !images.contains_key(*s)) {
        return Err(dataset_err(root.join("labels"), format!("label {stem}.png has no image")));
    }
    let mut samples = Vec::with_capacity(images.len());
    for (stem, image_path) in &images {
        let Some(label_path) = labels.get(stem) else {
            return Err(dataset_err(image_path, "missing label file"));
        };
        let sample = Sample::new(read_image(image_path)?, read_label(label_path)?, stored.domain, stem)
            .map_err(|e| dataset_err(image_path, e.to_string()))?;
        sample
            .check_labels(meta.num_classes())
            .map_err(|e| dataset_err(label_path, e.to_string()))?;
        samples.push(sample);
    }
    if meta.num_samples != samples.len() {
        return Err(dataset_err(
            &meta_path,
            format!("meta lists {} samples, found {}", meta.num_samples, samples.len()),
        ));
    }
    Dataset::new(meta, samples)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct StoredMeta {
    #[serde(flatten)]
    meta: DatasetMeta,
    #[serde(default = "default_domain")]
    domain: Domain,
}

fn default_domain() -> Domain {
    Domain::Source
}

/// Writes a dataset in the layout read by [`load_dataset`]. Image values are
/// quantized to 8 bits.
pub fn write_dataset(root: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let root = root.as_ref();
    for dir in ["images", "labels"] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let domain = dataset.samples.first().map_or(Domain::Source, |s| s.domain);
    let mut meta = dataset.meta.clone();
    meta.num_samples = dataset.len();
    let stored = StoredMeta { meta, domain };
    let meta_path = root.join(META_FILE);
    let text = serde_json::to_string_pretty(&stored).map_err(|e| dataset_err(&meta_path, e.to_string()))?;
    fs::write(&meta_path, text).map_err(io_err(&meta_path))?;
    for s in &dataset.samples {
        let (h, w) = (s.image.height() as u32, s.image.width() as u32);
        let raw = s.image.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
        let path = root.join("images").join(format!("{}.png", s.id));
        RgbImage::from_raw(w, h, raw)
            .expect("buffer sized from image")
            .save(&path)
            .map_err(|source| Error::Image { path: path.clone(), source })?;
        let path = root.join("labels").join(format!("{}.png", s.id));
        GrayImage::from_raw(w, h, s.label.data().to_vec())
            .expect("buffer sized from label")
            .save(&path)
            .map_err(|source| Error::Image { path: path.clone(), source })?;
    }
    Ok(())
}

/// Writes class indices as an 8-bit single-channel PNG.
pub fn write_label_png(label: &LabelMap, path: &Path) -> Result<()> {
    GrayImage::from_raw(label.width() as u32, label.height() as u32, label.data().to_vec())
        .expect("buffer sized from label")
        .save(path)
        .map_err(|source| Error::Image { path: path.into(), source })
}

/// Writes class indices as RGB using `palette`; ignored pixels are black.
pub fn write_color_png(label: &LabelMap, palette: &[[u8; 3]], path: &Path) -> Result<()> {
    let mut raw = Vec::with_capacity(label.data().len() * 3);
    for &c in label.data() {
        raw.extend_from_slice(palette.get(c as usize).unwrap_or(&[0, 0, 0]));
    }
    RgbImage::from_raw(label.width() as u32, label.height() as u32, raw)
        .expect("buffer sized from label")
        .save(path)
        .map_err(|source| Error::Image { path: path.into(), source })
}
