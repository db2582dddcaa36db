//! Pixel-level augmentation ops on `(C, H, W)` float images in `[0, 1]`.

use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::ColorJitter;

pub type ViewImage = Array3<f64>;

pub fn hflip(img: &ViewImage) -> ViewImage {
    let mut out = img.clone();
    out.invert_axis(Axis(2));
    out.as_standard_layout().into_owned()
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn grayscale(img: &ViewImage) -> ViewImage {
    let (_, h, w) = img.dim();
    let mut out = ViewImage::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let l = luma(img[[0, y, x]], img[[1, y, x]], img[[2, y, x]]);
            for c in 0..3 {
                out[[c, y, x]] = l;
            }
        }
    }
    out
}

fn blend(img: &mut ViewImage, other: &ViewImage, factor: f64) {
    ndarray::Zip::from(img).and(other).for_each(|a, &b| {
        *a = (factor * *a + (1.0 - factor) * b).clamp(0.0, 1.0);
    });
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let hp = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

fn shift_hue(img: &mut ViewImage, delta: f64) {
    let (_, h, w) = img.dim();
    for y in 0..h {
        for x in 0..w {
            let (hh, s, v) = rgb_to_hsv(img[[0, y, x]], img[[1, y, x]], img[[2, y, x]]);
            let (r, g, b) = hsv_to_rgb(hh + delta, s, v);
            img[[0, y, x]] = r;
            img[[1, y, x]] = g;
            img[[2, y, x]] = b;
        }
    }
}

/// Brightness, contrast, saturation and hue jitter applied in a random order,
/// each with a factor drawn uniformly from `[1 - s, 1 + s]` (hue: `[-s, s]`).
pub fn color_jitter<R: Rng>(img: &ViewImage, cj: &ColorJitter, rng: &mut R) -> ViewImage {
    let mut out = img.clone();
    let mut order = [0usize, 1, 2, 3];
    order.shuffle(rng);
    let factor = |s: f64, rng: &mut R| {
        if s > 0.0 {
            rng.random_range((1.0 - s).max(0.0)..=1.0 + s)
        } else {
            1.0
        }
    };
    for op in order {
        match op {
            0 => {
                let f = factor(cj.brightness, rng);
                out.mapv_inplace(|v| (v * f).clamp(0.0, 1.0));
            }
            1 => {
                let f = factor(cj.contrast, rng);
                let mean = grayscale(&out).index_axis(Axis(0), 0).mean().unwrap_or(0.0);
                let flat = ViewImage::from_elem(out.dim(), mean);
                blend(&mut out, &flat, f);
            }
            2 => {
                let f = factor(cj.saturation, rng);
                let gray = grayscale(&out);
                blend(&mut out, &gray, f);
            }
            _ => {
                if cj.hue > 0.0 {
                    let d = rng.random_range(-cj.hue..=cj.hue);
                    shift_hue(&mut out, d);
                }
            }
        }
    }
    out
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflect padding, radius `ceil(3 sigma)`.
pub fn gaussian_blur(img: &ViewImage, sigma: f64) -> ViewImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (c, h, w) = img.dim();
    let mut tmp = ViewImage::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                tmp[[ch, y, x]] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * img[[ch, y, reflect(x as isize + k as isize - radius, w)]])
                    .sum();
            }
        }
    }
    let mut out = ViewImage::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[[ch, y, x]] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * tmp[[ch, reflect(y as isize + k as isize - radius, h), x]])
                    .sum();
            }
        }
    }
    out
}

pub fn normalize(img: &ViewImage, mean: &[f64; 3], std: &[f64; 3]) -> ViewImage {
    let mut out = img.clone();
    for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        plane.mapv_inplace(|v| (v - mean[c]) / std[c]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ramp() -> ViewImage {
        ViewImage::from_shape_fn((3, 6, 5), |(c, y, x)| ((c + 1) * (y * 5 + x)) as f64 / 100.0)
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp();
        let f = hflip(&img);
        assert_eq!(f[[0, 2, 0]], img[[0, 2, 4]]);
        assert_eq!(hflip(&f), img);
    }

    #[test]
    fn grayscale_equalizes_channels() {
        let g = grayscale(&ramp());
        assert_eq!(g.index_axis(Axis(0), 0), g.index_axis(Axis(0), 1));
        assert_eq!(g.index_axis(Axis(0), 1), g.index_axis(Axis(0), 2));
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() + (g - g2).abs() + (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_preserves_constant_images_and_mass() {
        let flat = ViewImage::from_elem((3, 8, 8), 0.4);
        let b = gaussian_blur(&flat, 1.3);
        assert!(b.iter().all(|v| (v - 0.4).abs() < 1e-12));
        let r = ramp();
        let rb = gaussian_blur(&r, 0.8);
        assert!((rb.mean().unwrap() - r.mean().unwrap()).abs() < 0.02);
    }

    #[test]
    fn jitter_stays_in_unit_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let cj = ColorJitter {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            prob: 1.0,
        };
        for _ in 0..20 {
            let out = color_jitter(&ramp(), &cj, &mut rng);
            assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
