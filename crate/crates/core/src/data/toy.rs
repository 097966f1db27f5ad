//! Procedural street-scene domains.
//!
//! A scene has stuff bands (sky, buildings, optional vegetation, sidewalk and
//! a road in perspective) plus thing objects (cars on the road, people and
//! sign poles on the sidewalk). Layout and class appearance come from one RNG
//! stream keyed by `(seed, index)`, so a source and a target config with the
//! same seed produce identical label maps. The target shift (hue rotation,
//! oriented texture, Gaussian noise) draws from a separate stream and touches
//! only the image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::color::rotate_hue;
use crate::data::{Dataset, DatasetMeta, Domain, Image, LabelMap, Sample};
use crate::error::{invalid, Result};

pub const ROAD: u8 = 0;
pub const SIDEWALK: u8 = 1;
pub const BUILDING: u8 = 2;
pub const SKY: u8 = 3;
pub const VEGETATION: u8 = 4;
pub const CAR: u8 = 5;
pub const PERSON: u8 = 6;
pub const POLE: u8 = 7;

/// Classes always present in the layout.
pub const MIN_CLASSES: usize = 4;

/// `(name, is_thing, palette)` for every toy class, indexed by class id.
pub const TOY_CLASSES: [(&str, bool, [u8; 3]); 8] = [
    ("road", false, [128, 64, 128]),
    ("sidewalk", false, [244, 35, 232]),
    ("building", false, [70, 70, 70]),
    ("sky", false, [70, 130, 180]),
    ("vegetation", false, [107, 142, 35]),
    ("car", true, [0, 0, 142]),
    ("person", true, [220, 20, 60]),
    ("pole", true, [220, 220, 0]),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyShift {
    pub hue_rotation_degrees: f32,
    pub noise_std: f32,
    pub texture_amplitude: f32,
    /// Cycles per pixel of the oriented sinusoidal overlay.
    pub texture_frequency: f32,
}

impl ToyShift {
    /// Appearance gap used between the procedural source and target sets.
    pub fn standard() -> Self {
        Self {
            hue_rotation_degrees: 60.0,
            noise_std: 0.02,
            texture_amplitude: 0.06,
            texture_frequency: 0.1,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.hue_rotation_degrees.rem_euclid(360.0) == 0.0
            && self.noise_std == 0.0
            && (self.texture_amplitude == 0.0 || self.texture_frequency == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDomainConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub num_samples: usize,
    /// Inclusive range of thing objects per scene.
    pub shape_count: [usize; 2],
    /// Range of the ground line as a fraction of the height.
    pub ground_line: [f32; 2],
    /// Range of the road width at the ground line as a fraction of the width.
    pub road_top_width: [f32; 2],
    pub domain: Domain,
    pub shift: ToyShift,
    pub seed: u64,
}

impl Default for ToyDomainConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            num_classes: TOY_CLASSES.len(),
            num_samples: 64,
            shape_count: [3, 8],
            ground_line: [0.5, 0.62],
            road_top_width: [0.2, 0.4],
            domain: Domain::Source,
            shift: ToyShift::default(),
            seed: 0,
        }
    }
}

impl ToyDomainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return invalid(
                "toy config",
                format!("canvas {}x{} is smaller than 16x16", self.height, self.width),
            );
        }
        if !(MIN_CLASSES..=TOY_CLASSES.len()).contains(&self.num_classes) {
            return invalid(
                "toy config",
                format!("num_classes must be in {MIN_CLASSES}..={}", TOY_CLASSES.len()),
            );
        }
        if self.shape_count[0] > self.shape_count[1] {
            return invalid("toy config", "shape_count range is reversed");
        }
        let frac_ok = |r: [f32; 2]| 0.0 < r[0] && r[0] <= r[1] && r[1] < 1.0;
        if !frac_ok(self.ground_line) || !frac_ok(self.road_top_width) {
            return invalid("toy config", "fraction ranges must satisfy 0 < lo <= hi < 1");
        }
        Ok(())
    }

    pub fn meta(&self) -> DatasetMeta {
        let classes = &TOY_CLASSES[..self.num_classes];
        DatasetMeta {
            class_names: classes.iter().map(|c| c.0.to_string()).collect(),
            thing_flags: classes.iter().map(|c| c.1).collect(),
            palette: classes.iter().map(|c| c.2).collect(),
            num_samples: self.num_samples,
        }
    }

    /// Generates all `num_samples` scenes.
    pub fn dataset(&self) -> Result<Dataset> {
        let samples = (0..self.num_samples)
            .map(|i| generate_toy_sample(self, i))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.meta(), samples)
    }
}

/// Class colors of the first `k` toy classes, cycling when `k` exceeds them.
pub fn palette(k: usize) -> Vec<[u8; 3]> {
    (0..k).map(|i| TOY_CLASSES[i % TOY_CLASSES.len()].2).collect()
}

/// Labeled source set, unlabeled-use target set and a held-out labeled
/// target set, generated from one seed.
#[derive(Clone, Debug)]
pub struct ToySplits {
    pub source: Dataset,
    pub target: Dataset,
    pub target_eval: Dataset,
}

impl ToySplits {
    pub const TRAIN_SAMPLES: usize = 64;
    pub const EVAL_SAMPLES: usize = 32;

    pub fn generate(seed: u64) -> Result<Self> {
        Self::with_shift(seed, ToyShift::standard())
    }

    pub fn with_shift(seed: u64, shift: ToyShift) -> Result<Self> {
        let base = seed.wrapping_mul(3);
        let cfg = |offset: u64, domain: Domain, n: usize| ToyDomainConfig {
            num_samples: n,
            domain,
            shift,
            seed: base.wrapping_add(offset),
            ..Default::default()
        };
        Ok(Self {
            source: cfg(1, Domain::Source, Self::TRAIN_SAMPLES).dataset()?,
            target: cfg(2, Domain::Target, Self::TRAIN_SAMPLES).dataset()?,
            target_eval: cfg(3, Domain::Target, Self::EVAL_SAMPLES).dataset()?,
        })
    }
}

struct Canvas {
    h: usize,
    w: usize,
    rgb: Vec<[f32; 3]>,
    label: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, y: isize, x: isize, rgb: [f32; 3], class: u8) {
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            return;
        }
        let i = y as usize * self.w + x as usize;
        self.rgb[i] = rgb;
        self.label[i] = class;
    }

    fn rect(&mut self, y0: f32, x0: f32, y1: f32, x1: f32, rgb: [f32; 3], class: u8) {
        for y in y0.round() as isize..y1.round() as isize {
            for x in x0.round() as isize..x1.round() as isize {
                self.put(y, x, rgb, class);
            }
        }
    }

    fn ellipse(&mut self, cy: f32, cx: f32, ry: f32, rx: f32, rgb: [f32; 3], class: u8) {
        let (ry, rx) = (ry.max(0.5), rx.max(0.5));
        for y in (cy - ry).floor() as isize..=(cy + ry).ceil() as isize {
            for x in (cx - rx).floor() as isize..=(cx + rx).ceil() as isize {
                let dy = (y as f32 + 0.5 - cy) / ry;
                let dx = (x as f32 + 0.5 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 {
                    self.put(y, x, rgb, class);
                }
            }
        }
    }

    /// Upward-pointing isosceles triangle with apex at `(top, cx)`.
    fn triangle(&mut self, top: f32, cx: f32, size: f32, rgb: [f32; 3], class: u8) {
        for y in top.floor() as isize..(top + size).ceil() as isize {
            let half = 0.5 * size * ((y as f32 + 0.5 - top) / size);
            for x in (cx - half).floor() as isize..=(cx + half).ceil() as isize {
                if (x as f32 + 0.5 - cx).abs() <= half + 0.25 {
                    self.put(y, x, rgb, class);
                }
            }
        }
    }
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Renders scene `index` of `cfg`; a pure function of its arguments.
pub fn generate_toy_sample(cfg: &ToyDomainConfig, index: usize) -> Result<Sample> {
    cfg.validate()?;
    if index >= cfg.num_samples {
        return invalid(
            "toy index",
            format!("{index} out of range for {} samples", cfg.num_samples),
        );
    }
    let mut rng = stream_rng(cfg.seed, 2 * index as u64);
    let (h, w) = (cfg.height, cfg.width);
    let (hf, wf) = (h as f32, w as f32);
    let mut c = Canvas {
        h,
        w,
        rgb: vec![[0.0; 3]; h * w],
        label: vec![SKY; h * w],
    };

    let ground = rng.gen_range(cfg.ground_line[0]..=cfg.ground_line[1]) * hf;
    let ground_row = ground.round() as usize;

    let sky_top = [0.40, 0.58, 0.86];
    let sky_low = [0.74, 0.84, 0.95];
    for y in 0..ground_row {
        let t = y as f32 / ground.max(1.0);
        for x in 0..w {
            c.put(y as isize, x as isize, mix(sky_top, sky_low, t), SKY);
        }
    }

    // Buildings as a skyline of adjacent blocks with window grids.
    let mut x = 0.0;
    while x < wf {
        let bw = rng.gen_range(0.12..0.3) * wf;
        if rng.gen_bool(0.85) {
            let top = rng.gen_range(0.1..0.75) * ground;
            let base = mix([0.42, 0.38, 0.34], [0.62, 0.57, 0.52], rng.gen::<f32>());
            let window = [0.18, 0.2, 0.27];
            let pitch = rng.gen_range(5..8) as f32;
            for y in top.round() as isize..ground_row as isize {
                for xx in x.round() as isize..(x + bw).round() as isize {
                    let (ly, lx) = (y as f32 - top, xx as f32 - x);
                    let in_window =
                        ly.rem_euclid(pitch) >= 2.0 && lx.rem_euclid(pitch) >= 2.0 && lx >= 2.0 && bw - lx >= 2.0;
                    c.put(y, xx, if in_window { window } else { base }, BUILDING);
                }
            }
        }
        x += bw;
    }

    if cfg.num_classes > VEGETATION as usize {
        for _ in 0..rng.gen_range(0..=3) {
            let ry = rng.gen_range(0.05..0.11) * hf;
            let rx = ry * rng.gen_range(0.8..1.5);
            let cx = rng.gen_range(0.0..wf);
            let green = mix([0.16, 0.42, 0.12], [0.3, 0.58, 0.2], rng.gen::<f32>());
            c.ellipse(ground - 0.8 * ry, cx, ry, rx, green, VEGETATION);
        }
    }

    // Ground: sidewalk everywhere, then a road trapezoid widening downwards.
    let road_cx = rng.gen_range(0.35..0.65) * wf;
    let top_half = 0.5 * rng.gen_range(cfg.road_top_width[0]..=cfg.road_top_width[1]) * wf;
    let bottom_half = 0.5 * rng.gen_range(0.8..1.3) * wf;
    let depth = (hf - ground).max(1.0);
    let road_half = |y: f32| top_half + (bottom_half - top_half) * ((y - ground) / depth);
    let is_road = |y: f32, x: f32| y >= ground && (x - road_cx).abs() < road_half(y);
    let tile = rng.gen_range(6..10) as f32;
    for y in ground_row..h {
        for x in 0..w {
            let (yf, xf) = (y as f32 + 0.5, x as f32 + 0.5);
            if is_road(yf, xf) {
                let lane = (xf - road_cx).abs() < 0.6 && (yf / 6.0).floor() as i32 % 2 == 0;
                let rgb = if lane { [0.85, 0.85, 0.8] } else { [0.3, 0.3, 0.33] };
                c.put(y as isize, x as isize, rgb, ROAD);
            } else {
                let grout = (yf - ground).rem_euclid(tile) < 1.0 || xf.rem_euclid(tile) < 1.0;
                let rgb = if grout { [0.58, 0.5, 0.52] } else { [0.7, 0.61, 0.63] };
                c.put(y as isize, x as isize, rgb, SIDEWALK);
            }
        }
    }

    // Things, far to near so nearer objects occlude.
    let thing_classes: Vec<u8> = (CAR..=POLE).filter(|&k| (k as usize) < cfg.num_classes).collect();
    let count = if thing_classes.is_empty() {
        0
    } else {
        rng.gen_range(cfg.shape_count[0]..=cfg.shape_count[1])
    };
    let mut things = Vec::with_capacity(count);
    for _ in 0..count {
        let class = thing_classes[rng.gen_range(0..thing_classes.len())];
        let on_road = class == CAR;
        let mut placed = None;
        for _ in 0..16 {
            let yb = rng.gen_range(ground + 0.1 * depth..hf);
            let xb = rng.gen_range(0.0..wf);
            if is_road(yb, xb) == on_road {
                placed = Some((yb, xb));
                break;
            }
        }
        if let Some((yb, xb)) = placed {
            things.push((yb, xb, class, (yb - ground) / depth));
        }
    }
    things.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (yb, xb, class, near) in things {
        match class {
            CAR => {
                let cw = (0.12 + 0.22 * near) * wf;
                let ch = cw * rng.gen_range(0.45..0.6);
                let body = [[0.12, 0.16, 0.52], [0.1, 0.38, 0.42], [0.62, 0.64, 0.68], [0.1, 0.1, 0.12]]
                    [rng.gen_range(0..4)];
                let (x0, y0) = (xb - cw / 2.0, yb - ch);
                c.rect(y0, x0, yb, x0 + cw, body, CAR);
                c.rect(y0 + 0.1 * ch, x0 + 0.18 * cw, y0 + 0.42 * ch, x0 + 0.82 * cw, [0.2, 0.26, 0.32], CAR);
                let r = 0.18 * ch;
                for wx in [x0 + 0.22 * cw, x0 + 0.78 * cw] {
                    c.ellipse(yb - r, wx, r, r, [0.05, 0.05, 0.05], CAR);
                }
            }
            PERSON => {
                let ph = (0.12 + 0.16 * near) * hf;
                let pw = (ph * 0.3).max(3.0);
                let shirt = [[0.85, 0.25, 0.2], [0.9, 0.55, 0.12], [0.3, 0.6, 0.75]][rng.gen_range(0..3)];
                c.rect(yb - 0.42 * ph, xb - pw / 2.0, yb, xb + pw / 2.0, [0.15, 0.15, 0.28], PERSON);
                c.rect(yb - 0.8 * ph, xb - pw / 2.0, yb - 0.42 * ph, xb + pw / 2.0, shirt, PERSON);
                let head = 0.11 * ph;
                c.ellipse(yb - 0.8 * ph - head, xb, head.max(1.0), head.max(1.0), [0.9, 0.72, 0.58], PERSON);
            }
            _ => {
                let ph = (0.2 + 0.2 * near) * hf;
                let pw = rng.gen_range(2..=4) as f32;
                let x0 = xb.floor();
                c.rect(yb - ph, x0, yb, x0 + pw, [0.36, 0.36, 0.32], POLE);
                if rng.gen_bool(0.6) {
                    let size = rng.gen_range(5.0..9.0);
                    c.triangle(yb - ph - size * 0.5, x0 + pw / 2.0, size, [0.92, 0.85, 0.15], POLE);
                }
            }
        }
    }

    // Mild sensor noise shared by both domains.
    let mut data = Vec::with_capacity(h * w * 3);
    for p in &c.rgb {
        let n: f32 = rng.gen_range(-0.02..0.02);
        data.extend(p.iter().map(|v| v + n));
    }
    let mut image = Image::new(h, w, data.iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    if cfg.domain == Domain::Target && !cfg.shift.is_identity() {
        image = apply_shift(&image, &cfg.shift, &mut stream_rng(cfg.seed, 2 * index as u64 + 1))?;
    }
    let image = quantize(&image)?;
    let label = LabelMap::new(h, w, c.label)?;
    let id = format!("{}_{index:05}", match cfg.domain {
        Domain::Source => "src",
        Domain::Target => "tgt",
    });
    Sample::new(image, label, cfg.domain, id)
}

fn apply_shift(image: &Image, shift: &ToyShift, rng: &mut ChaCha8Rng) -> Result<Image> {
    let rotated = rotate_hue(image, shift.hue_rotation_degrees / 360.0);
    let theta: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dy, dx) = (theta.sin(), theta.cos());
    let omega = std::f32::consts::TAU * shift.texture_frequency;
    let noise = Normal::new(0.0f32, shift.noise_std.max(0.0)).map_err(|e| crate::error::Error::Invalid {
        what: "toy shift",
        msg: e.to_string(),
    })?;
    Ok(rotated.map_pixels(|y, x, p| {
        let texture = shift.texture_amplitude * (omega * (y as f32 * dy + x as f32 * dx) + phase).sin();
        let mut out = p;
        for v in &mut out {
            *v += texture;
            if shift.noise_std > 0.0 {
                *v += noise.sample(rng);
            }
        }
        out
    }))
}

/// Rounds to multiples of 1/255 so that 8-bit PNG round trips are exact.
fn quantize(image: &Image) -> Result<Image> {
    let data = image
        .data()
        .iter()
        .map(|&v| (v * 255.0).round() as u8 as f32 / 255.0)
        .collect();
    Image::new(image.height(), image.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ToyDomainConfig {
        ToyDomainConfig {
            height: 64,
            width: 64,
            num_samples: 4,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg();
        assert_eq!(generate_toy_sample(&c, 2).unwrap(), generate_toy_sample(&c, 2).unwrap());
        assert_ne!(generate_toy_sample(&c, 1).unwrap().label, generate_toy_sample(&c, 2).unwrap().label);
    }

    #[test]
    fn zero_shift_target_matches_source_image() {
        let src = cfg();
        let tgt = ToyDomainConfig {
            domain: Domain::Target,
            ..cfg()
        };
        for i in 0..4 {
            let (a, b) = (generate_toy_sample(&src, i).unwrap(), generate_toy_sample(&tgt, i).unwrap());
            assert_eq!(a.image, b.image);
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn shift_changes_image_not_label() {
        let src = cfg();
        let tgt = ToyDomainConfig {
            domain: Domain::Target,
            shift: ToyShift {
                hue_rotation_degrees: 60.0,
                noise_std: 0.05,
                texture_amplitude: 0.1,
                texture_frequency: 0.3,
            },
            ..cfg()
        };
        let (a, b) = (generate_toy_sample(&src, 0).unwrap(), generate_toy_sample(&tgt, 0).unwrap());
        assert_ne!(a.image, b.image);
        assert_eq!(a.label, b.label);
    }

    #[test]
    fn stuff_only_with_four_classes() {
        let c = ToyDomainConfig {
            num_classes: 4,
            shape_count: [0, 0],
            num_samples: 8,
            ..cfg()
        };
        for i in 0..8 {
            let s = generate_toy_sample(&c, i).unwrap();
            assert!(s.label.data().iter().all(|&v| v <= SKY));
        }
    }

    #[test]
    fn invalid_canvas_rejected() {
        let c = ToyDomainConfig {
            height: 0,
            ..cfg()
        };
        assert!(generate_toy_sample(&c, 0).is_err());
        assert!(generate_toy_sample(&cfg(), 4).is_err());
    }
}
