//! Procedural shape corpus.
//!
//! Each image holds one class-defining shape at a random position, scale and
//! color over a gradient background, plus a few class-independent clutter
//! blobs. A random crop can therefore miss the object or keep only part of
//! it, which is exactly the situation where two crops disagree semantically.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Locator, ManifestEntry, SplitTag, MIN_IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::seeding::{self, tag};

pub const SHAPE_NAMES: [&str; 10] = [
    "disc", "square", "triangle", "ring", "plus", "hbars", "diamond", "saltire", "vbars", "checker",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub image_size: u32,
    pub num_classes: usize,
    pub seed: u64,
}

pub fn make_synthetic_corpus(
    n: usize,
    image_size: u32,
    num_classes: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if num_classes == 0 || num_classes > SHAPE_NAMES.len() {
        return Err(Error::Config(format!(
            "synthetic corpus supports 1..={} classes, got {num_classes}",
            SHAPE_NAMES.len()
        )));
    }
    if n < num_classes {
        return Err(Error::Config(format!("need n >= num_classes ({n} < {num_classes})")));
    }
    if image_size < MIN_IMAGE_SIZE {
        return Err(Error::Config(format!("image_size must be >= {MIN_IMAGE_SIZE}, got {image_size}")));
    }
    let spec = SyntheticSpec {
        n,
        image_size,
        num_classes,
        seed,
    };
    let entries = (0..n)
        .map(|index| ManifestEntry {
            sample_id: format!("syn-{seed}-{index:07}"),
            locator: Locator::Synthetic { spec, index },
            label: Some(index % num_classes),
        })
        .collect();
    let names = SHAPE_NAMES[..num_classes].iter().map(|s| s.to_string()).collect();
    DatasetManifest::new(entries, num_classes, SplitTag::Train, names)
}

fn inside(shape: usize, u: f64, v: f64) -> bool {
    let box9 = u.abs() <= 0.9 && v.abs() <= 0.9;
    match shape {
        0 => u * u + v * v <= 1.0,
        1 => u.abs().max(v.abs()) <= 0.8,
        2 => (-0.9..=0.8).contains(&v) && u.abs() <= (v + 0.9) / 1.7 * 0.95,
        3 => {
            let r2 = u * u + v * v;
            (0.3..=1.0).contains(&r2)
        }
        4 => (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95),
        5 => box9 && ((v + 0.9) / 0.36).floor() as i64 % 2 == 0,
        6 => u.abs() + v.abs() <= 1.0,
        7 => (u - v).abs() <= 0.35 && u.abs().max(v.abs()) <= 0.9 || (u + v).abs() <= 0.35 && box9,
        8 => box9 && ((u + 0.9) / 0.36).floor() as i64 % 2 == 0,
        _ => box9 && (((u + 0.9) / 0.45).floor() as i64 + ((v + 0.9) / 0.45).floor() as i64) % 2 == 0,
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(1.0)) * 6.0;
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
    [r + m, g + m, b + m]
}

/// Renders entry `index` of the corpus. Pure function of `(spec, index)`.
pub fn render_synthetic(spec: &SyntheticSpec, index: usize) -> (RgbImage, usize) {
    let label = index % spec.num_classes;
    let mut rng = seeding::stream(spec.seed, &[tag::SYNTHETIC, index as u64]);
    let s = spec.image_size as f64;

    let bg_a = hsv(rng.random(), rng.random_range(0.0..0.15), rng.random_range(0.2..0.55));
    let bg_b = hsv(rng.random(), rng.random_range(0.0..0.15), rng.random_range(0.2..0.55));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());

    let fg = hsv(rng.random(), rng.random_range(0.3..0.8), rng.random_range(0.7..1.0));
    let radius = s * rng.random_range(0.18..0.30);
    let cx = rng.random_range(radius..s - radius);
    let cy = rng.random_range(radius..s - radius);

    let clutter: Vec<([f64; 3], f64, f64, f64)> = (0..rng.random_range(2..=4))
        .map(|_| {
            let color = hsv(rng.random(), rng.random_range(0.0..0.3), rng.random_range(0.3..0.85));
            let r = s * rng.random_range(0.04..0.08);
            (color, rng.random_range(0.0..s), rng.random_range(0.0..s), r)
        })
        .collect();

    let mut noise = seeding::stream(spec.seed, &[tag::SYNTHETIC, index as u64, 1]);
    let img = RgbImage::from_fn(spec.image_size, spec.image_size, |x, y| {
        let mut acc = [0.0; 3];
        for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
            let (px, py) = (x as f64 + ox, y as f64 + oy);
            let t = ((px / s - 0.5) * dx + (py / s - 0.5) * dy + 0.75) / 1.5;
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = bg_a[k] * (1.0 - t) + bg_b[k] * t;
            }
            for (color, bx, by, r) in &clutter {
                if (px - bx).abs() <= *r && (py - by).abs() <= *r {
                    c = *color;
                }
            }
            if inside(label % SHAPE_NAMES.len(), (px - cx) / radius, (py - cy) / radius) {
                c = fg;
            }
            for k in 0..3 {
                acc[k] += c[k] / 4.0;
            }
        }
        let jitter: f64 = noise.random_range(-0.03..0.03);
        Rgb(acc.map(|v| ((v + jitter).clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    (img, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::materialize;

    #[test]
    fn counts_per_class() {
        let m = make_synthetic_corpus(100, 64, 4, 1).unwrap();
        assert_eq!(m.len(), 100);
        assert_eq!(m.class_counts(), vec![25; 4]);
        let minimal = make_synthetic_corpus(4, 32, 4, 1).unwrap();
        assert_eq!(minimal.class_counts(), vec![1; 4]);
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let a = make_synthetic_corpus(1000, 32, 10, 7).unwrap();
        let b = make_synthetic_corpus(1000, 32, 10, 7).unwrap();
        assert_eq!(a, b);
        let pa = materialize(&a).unwrap();
        let pb = materialize(&b).unwrap();
        assert!(pa.iter().zip(&pb).all(|(x, y)| x.pixels.as_raw() == y.pixels.as_raw()));
        let other = render_synthetic(&SyntheticSpec { seed: 8, ..spec_of(&a) }, 0).0;
        assert_ne!(other.as_raw(), pa[0].pixels.as_raw());
    }

    fn spec_of(m: &DatasetManifest) -> SyntheticSpec {
        match &m.entries[0].locator {
            Locator::Synthetic { spec, .. } => *spec,
            _ => unreachable!(),
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_synthetic_corpus(3, 64, 4, 0).is_err());
        assert!(make_synthetic_corpus(10, 16, 4, 0).is_err());
        assert!(make_synthetic_corpus(100, 64, 11, 0).is_err());
    }

    #[test]
    fn every_shape_covers_a_reasonable_area() {
        for (shape, name) in SHAPE_NAMES.iter().enumerate() {
            let n = 200;
            let hits = (0..n * n)
                .filter(|i| {
                    let u = (i % n) as f64 / n as f64 * 2.0 - 1.0;
                    let v = (i / n) as f64 / n as f64 * 2.0 - 1.0;
                    inside(shape, u, v)
                })
                .count();
            let frac = hits as f64 / (n * n) as f64;
            assert!((0.2..0.85).contains(&frac), "{name}: {frac}");
        }
    }
}
