//! Photometric image operations shared by the toy-domain shift, training
//! augmentation and style diversification. Every op clamps to `[0, 1]`.

use crate::data::image::Image;

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

fn luma(p: [f32; 3]) -> f32 {
    p[0] * LUMA[0] + p[1] * LUMA[1] + p[2] * LUMA[2]
}

/// Scales intensities by `factor`.
pub fn adjust_brightness(img: &Image, factor: f32) -> Image {
    img.map_pixels(|_, _, p| p.map(|v| v * factor))
}

/// Blends with the mean luma of the whole image.
pub fn adjust_contrast(img: &Image, factor: f32) -> Image {
    let n = (img.height() * img.width()) as f64;
    let mean = img
        .data()
        .chunks_exact(3)
        .map(|p| luma([p[0], p[1], p[2]]) as f64)
        .sum::<f64>()
        / n;
    let mean = mean as f32;
    img.map_pixels(|_, _, p| p.map(|v| factor * v + (1.0 - factor) * mean))
}

/// Blends each pixel with its own luma.
pub fn adjust_saturation(img: &Image, factor: f32) -> Image {
    img.map_pixels(|_, _, p| {
        let g = luma(p);
        p.map(|v| factor * v + (1.0 - factor) * g)
    })
}

/// Rotates hue by `turns` of a full cycle (1.0 = 360 degrees).
pub fn rotate_hue(img: &Image, turns: f32) -> Image {
    if turns == 0.0 {
        return img.clone();
    }
    img.map_pixels(|_, _, p| {
        let [h, s, v] = rgb_to_hsv(p);
        hsv_to_rgb([(h + turns).rem_euclid(1.0), s, v])
    })
}

pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, s, max];
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    [h / 6.0, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Separable Gaussian blur with reflect padding; `kernel` must be odd.
pub fn gaussian_blur(img: &Image, kernel: usize, sigma: f32) -> Image {
    if kernel < 3 || kernel % 2 == 0 || sigma <= 0.0 {
        return img.clone();
    }
    let half = (kernel / 2) as isize;
    let mut weights: Vec<f32> = (-half..=half)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let (h, w) = (img.height(), img.width());
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period);
        (if m < n { m } else { period - m }) as usize
    };
    let src = img.data();
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let xx = reflect(x as isize + k as isize - half, w);
                    acc += wt * src[(y * w + xx) * 3 + c];
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    img.map_pixels(|y, x, _| {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            for (k, wt) in weights.iter().enumerate() {
                let yy = reflect(y as isize + k as isize - half, h);
                *o += wt * tmp[(yy * w + x) * 3 + c];
            }
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Image {
        let data = (0..4 * 5 * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        Image::new(4, 5, data).unwrap()
    }

    #[test]
    fn unit_factors_are_identity() {
        let img = sample();
        assert_eq!(adjust_brightness(&img, 1.0), img);
        assert_eq!(adjust_saturation(&img, 1.0), img);
        let c = adjust_contrast(&img, 1.0);
        for (a, b) in c.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hsv_round_trip() {
        for p in [[0.2, 0.5, 0.9], [1.0, 0.0, 0.0], [0.3, 0.3, 0.3], [0.9, 0.8, 0.1]] {
            let q = hsv_to_rgb(rgb_to_hsv(p));
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() < 1e-6, "{p:?} -> {q:?}");
            }
        }
    }

    #[test]
    fn full_hue_cycle_is_identity() {
        let img = sample();
        let r = rotate_hue(&img, 1.0);
        for (a, b) in r.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Image::filled(6, 7, [0.25, 0.5, 0.75]).unwrap();
        let b = gaussian_blur(&img, 5, 1.0);
        for (a, b) in b.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
