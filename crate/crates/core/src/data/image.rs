use segadapt_tensor::{axis_taps, Interp, Tensor};

use crate::data::resize::Scale;
use crate::error::{invalid, Result};

/// Row-major `H x W x 3` RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Axis-aligned box in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CropBox {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl CropBox {
    pub fn new(y0: usize, x0: usize, h: usize, w: usize) -> Self {
        Self { y0, x0, h, w }
    }

    pub fn y1(&self) -> usize {
        self.y0 + self.h
    }

    pub fn x1(&self) -> usize {
        self.x0 + self.w
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y1() && x >= self.x0 && x < self.x1()
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.y1() <= height && self.x1() <= width
    }

    /// Divides every coordinate by `unit`, failing unless all are multiples.
    pub fn scale_down(&self, unit: usize) -> Result<CropBox> {
        if unit == 0 || [self.y0, self.x0, self.h, self.w].iter().any(|v| v % unit != 0) {
            return invalid("box", format!("{self:?} is not aligned to {unit}"));
        }
        Ok(CropBox::new(self.y0 / unit, self.x0 / unit, self.h / unit, self.w / unit))
    }
}

fn check_box(b: &CropBox, height: usize, width: usize) -> Result<()> {
    if b.h == 0 || b.w == 0 || !b.fits_in(height, width) {
        return invalid("crop", format!("{b:?} outside {height}x{width}"));
    }
    Ok(())
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid("image", format!("empty canvas {height}x{width}"));
        }
        if data.len() != height * width * 3 {
            return invalid(
                "image",
                format!("{} values for {height}x{width}x3", data.len()),
            );
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid("image", format!("value {v} outside [0, 1]"));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Applies `f` to every pixel and clamps the result to `[0, 1]`.
    pub fn map_pixels(&self, mut f: impl FnMut(usize, usize, [f32; 3]) -> [f32; 3]) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let out = f(y, x, self.pixel(y, x));
                data.extend(out.iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Image {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn crop(&self, b: &CropBox) -> Result<Image> {
        check_box(b, self.height, self.width)?;
        let mut data = Vec::with_capacity(b.h * b.w * 3);
        for y in b.y0..b.y1() {
            let row = (y * self.width + b.x0) * 3;
            data.extend_from_slice(&self.data[row..row + b.w * 3]);
        }
        Ok(Image {
            height: b.h,
            width: b.w,
            data,
        })
    }

    /// Resizes by a rational factor; see [`crate::data::resize_bilinear`] for
    /// the sampling convention.
    pub fn rescale(&self, factor: Scale, mode: Interp) -> Result<Image> {
        let out_h = factor.apply(self.height)?;
        let out_w = factor.apply(self.width)?;
        if (out_h, out_w) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let ty = axis_taps(self.height, out_h, mode);
        let tx = axis_taps(self.width, out_w, mode);
        let mut data = Vec::with_capacity(out_h * out_w * 3);
        let at = |y: usize, x: usize, c: usize| self.data[(y * self.width + x) * 3 + c] as f64;
        for ry in &ty {
            for rx in &tx {
                for c in 0..3 {
                    let top = rx.lerp(at(ry.lo, rx.lo, c), at(ry.lo, rx.hi, c));
                    let bottom = rx.lerp(at(ry.hi, rx.lo, c), at(ry.hi, rx.hi, c));
                    data.push(ry.lerp(top, bottom).clamp(0.0, 1.0) as f32);
                }
            }
        }
        Ok(Image {
            height: out_h,
            width: out_w,
            data,
        })
    }

    /// Stacks images of equal size into an `N x H x W x 3` tensor.
    pub fn batch(images: &[&Image]) -> Result<Tensor> {
        let Some(first) = images.first() else {
            return invalid("batch", "no images");
        };
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * h * w * 3);
        for img in images {
            if (img.height, img.width) != (h, w) {
                return invalid(
                    "batch",
                    format!("mixed sizes {h}x{w} and {}x{}", img.height, img.width),
                );
            }
            data.extend(img.data.iter().map(|&v| v as f64));
        }
        Ok(Tensor::from_vec([images.len(), h, w, 3], data)?)
    }
}

/// Row-major `H x W` class-index map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid("label map", format!("empty canvas {height}x{width}"));
        }
        if data.len() != height * width {
            return invalid(
                "label map",
                format!("{} values for {height}x{width}", data.len()),
            );
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn crop(&self, b: &CropBox) -> Result<LabelMap> {
        check_box(b, self.height, self.width)?;
        let mut data = Vec::with_capacity(b.h * b.w);
        for y in b.y0..b.y1() {
            let row = y * self.width + b.x0;
            data.extend_from_slice(&self.data[row..row + b.w]);
        }
        Ok(LabelMap {
            height: b.h,
            width: b.w,
            data,
        })
    }

    /// Sorted distinct values other than `ignore`.
    pub fn classes_present(&self, ignore: u8) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=255u8).filter(|&v| v != ignore && seen[v as usize]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image {
        let data = (0..h * w * 3).map(|i| (i % 7) as f32 / 7.0).collect();
        Image::new(h, w, data).unwrap()
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(Image::new(1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(Image::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn crop_selects_region() {
        let img = ramp(4, 4);
        let c = img.crop(&CropBox::new(1, 2, 2, 2)).unwrap();
        assert_eq!(c.pixel(0, 0), img.pixel(1, 2));
        assert_eq!(c.pixel(1, 1), img.pixel(2, 3));
        assert!(img.crop(&CropBox::new(3, 3, 2, 1)).is_err());
    }

    #[test]
    fn box_scaling_requires_alignment() {
        let b = CropBox::new(8, 16, 8, 8);
        assert_eq!(b.scale_down(8).unwrap(), CropBox::new(1, 2, 1, 1));
        assert!(b.scale_down(16).is_err());
    }

    #[test]
    fn classes_present_skips_ignore() {
        let l = LabelMap::new(2, 2, vec![3, 255, 1, 3]).unwrap();
        assert_eq!(l.classes_present(255), vec![1, 3]);
    }
}
