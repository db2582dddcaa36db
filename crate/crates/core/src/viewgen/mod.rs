//! Three-view generation: a resize-only anchor plus two random-resized crops,
//! each passed through the stochastic augmentation stack.

pub mod ops;

use std::collections::BTreeSet;

use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::{Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageSample;
use crate::error::{Error, Result};
pub use ops::ViewImage;

pub const OP_FLIP: &str = "flip";
pub const OP_COLOR_JITTER: &str = "color_jitter";
pub const OP_GRAYSCALE: &str = "grayscale";
pub const OP_BLUR: &str = "blur";
pub const OP_NORMALIZE: &str = "normalize";
pub const ALL_OPS: [&str; 5] = [OP_FLIP, OP_COLOR_JITTER, OP_GRAYSCALE, OP_BLUR, OP_NORMALIZE];

pub const PRESETS: [&str; 4] = ["baseline", "crop_only", "no_grayscale", "no_color"];

/// Largest number of box proposals before falling back to a centered box.
const CROP_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blur {
    pub prob: f64,
    /// Sigma range in output pixels.
    pub sigma: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalize {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalize {
    pub const IMAGENET: Normalize = Normalize {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };
    pub const CIFAR10: Normalize = Normalize {
        mean: [0.4914, 0.4822, 0.4465],
        std: [0.2470, 0.2435, 0.2616],
    };

    /// Per-channel statistics of a set of images.
    pub fn from_samples(samples: &[ImageSample]) -> Self {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0.0f64;
        for s in samples {
            for p in s.pixels.pixels() {
                for c in 0..3 {
                    let v = p.0[c] as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1.0;
            }
        }
        let mean = sum.map(|s| s / n.max(1.0));
        let mut std = [0.0; 3];
        for c in 0..3 {
            std[c] = (sq[c] / n.max(1.0) - mean[c] * mean[c]).max(1e-12).sqrt();
        }
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub crop_scale_range: (f64, f64),
    pub crop_ratio_range: (f64, f64),
    pub output_size: u32,
    pub flip_prob: f64,
    pub color_jitter: ColorJitter,
    pub grayscale_prob: f64,
    pub blur: Blur,
    pub normalize: Normalize,
    pub enabled_ops: BTreeSet<String>,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self::moco_v2(32)
    }
}

impl AugmentationPolicy {
    /// The MoCo-v2 recipe at the given output size; blur sigma scales with
    /// `output_size / 224`.
    pub fn moco_v2(output_size: u32) -> Self {
        let scale = output_size as f64 / 224.0;
        Self {
            crop_scale_range: (0.2, 1.0),
            crop_ratio_range: (3.0 / 4.0, 4.0 / 3.0),
            output_size,
            flip_prob: 0.5,
            color_jitter: ColorJitter {
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.4,
                hue: 0.1,
                prob: 0.8,
            },
            grayscale_prob: 0.2,
            blur: Blur {
                prob: 0.5,
                sigma: (0.1 * scale, 2.0 * scale),
            },
            normalize: Normalize::IMAGENET,
            enabled_ops: ALL_OPS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Applies a named ablation preset to this policy's enabled ops.
    pub fn with_preset(mut self, preset: &str) -> Result<Self> {
        let drop: &[&str] = match preset {
            "baseline" => &[],
            "crop_only" => &[OP_FLIP, OP_COLOR_JITTER, OP_GRAYSCALE, OP_BLUR],
            "no_grayscale" => &[OP_GRAYSCALE],
            "no_color" => &[OP_COLOR_JITTER],
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        self.enabled_ops = ALL_OPS
            .iter()
            .filter(|op| !drop.contains(op))
            .map(|s| s.to_string())
            .collect();
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("flip_prob", self.flip_prob),
            ("color_jitter.prob", self.color_jitter.prob),
            ("grayscale_prob", self.grayscale_prob),
            ("blur.prob", self.blur.prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "crop_scale_range ({lo}, {hi}) must satisfy 0 < min <= max <= 1"
            )));
        }
        let (rlo, rhi) = self.crop_ratio_range;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(Error::Config(format!("crop_ratio_range ({rlo}, {rhi}) is invalid")));
        }
        if self.output_size == 0 {
            return Err(Error::Config("output_size must be positive".into()));
        }
        if self.normalize.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Config("normalize.std must be positive".into()));
        }
        for op in &self.enabled_ops {
            if !ALL_OPS.contains(&op.as_str()) {
                return Err(Error::Config(format!("unknown augmentation op `{op}`")));
            }
        }
        Ok(())
    }

    fn enabled(&self, op: &str) -> bool {
        self.enabled_ops.contains(op)
    }
}

/// Region of the source image a view was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub top: u32,
    pub left: u32,
    pub height: u32,
    pub width: u32,
}

impl CropBox {
    pub fn full(img: &RgbImage) -> Self {
        Self {
            top: 0,
            left: 0,
            height: img.height(),
            width: img.width(),
        }
    }

    pub fn area_fraction(&self, img: &RgbImage) -> f64 {
        (self.height as f64 * self.width as f64) / (img.height() as f64 * img.width() as f64)
    }

    pub fn within(&self, img: &RgbImage) -> bool {
        self.height > 0
            && self.width > 0
            && self.top + self.height <= img.height()
            && self.left + self.width <= img.width()
    }
}

pub fn to_chw(img: &RgbImage) -> ViewImage {
    let (w, h) = img.dimensions();
    ViewImage::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
    })
}

fn resize_to(img: &RgbImage, w: u32, h: u32, filter: FilterType) -> RgbImage {
    if img.dimensions() == (w, h) {
        return img.clone();
    }
    imageops::resize(img, w, h, filter)
}

fn crop_resize(img: &RgbImage, b: CropBox, size: u32, filter: FilterType) -> RgbImage {
    let sub = imageops::crop_imm(img, b.left, b.top, b.width, b.height).to_image();
    resize_to(&sub, size, size, filter)
}

/// Samples a crop box the way `RandomResizedCrop` does. Falls back to the
/// largest centered box whose aspect ratio lies in `ratio`.
pub fn sample_crop_box<R: Rng>(
    img: &RgbImage,
    scale: (f64, f64),
    ratio: (f64, f64),
    rng: &mut R,
) -> CropBox {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let area = w * h;
    let (log_lo, log_hi) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * if scale.0 < scale.1 { rng.random_range(scale.0..=scale.1) } else { scale.0 };
        let aspect = if log_lo < log_hi { rng.random_range(log_lo..=log_hi) } else { log_lo }.exp();
        let cw = (target * aspect).sqrt().round();
        let ch = (target / aspect).sqrt().round();
        if cw < 1.0 || ch < 1.0 || cw > w || ch > h {
            continue;
        }
        let frac = cw * ch / area;
        if frac < scale.0 - 1e-12 || frac > scale.1 + 1e-12 {
            continue;
        }
        let top = rng.random_range(0..=(h - ch) as u32);
        let left = rng.random_range(0..=(w - cw) as u32);
        return CropBox {
            top,
            left,
            height: ch as u32,
            width: cw as u32,
        };
    }
    let in_ratio = w / h;
    let (cw, ch) = if in_ratio < ratio.0 {
        (w, (w / ratio.0).round().min(h))
    } else if in_ratio > ratio.1 {
        ((h * ratio.1).round().min(w), h)
    } else {
        (w, h)
    };
    CropBox {
        top: ((h - ch) / 2.0) as u32,
        left: ((w - cw) / 2.0) as u32,
        height: ch as u32,
        width: cw as u32,
    }
}

/// Random crop of the configured area range, bilinearly resized to `output_size`.
pub fn random_resized_crop<R: Rng>(
    img: &ImageSample,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> (RgbImage, CropBox) {
    let b = sample_crop_box(&img.pixels, policy.crop_scale_range, policy.crop_ratio_range, rng);
    (crop_resize(&img.pixels, b, policy.output_size, FilterType::Triangle), b)
}

/// Whole-image (anisotropic) resize to `output_size`; never crops.
pub fn resize_only(img: &ImageSample, policy: &AugmentationPolicy) -> (RgbImage, CropBox) {
    let s = policy.output_size;
    (resize_to(&img.pixels, s, s, FilterType::Triangle), CropBox::full(&img.pixels))
}

/// Flip, color jitter, grayscale and blur (each with its probability, if
/// enabled), then normalization.
pub fn augment<R: Rng>(img: &RgbImage, policy: &AugmentationPolicy, rng: &mut R) -> Result<ViewImage> {
    policy.validate()?;
    let mut x = to_chw(img);
    // Every draw happens whether or not its op is enabled, so that disabling
    // one op leaves the others' random choices untouched.
    let flip = rng.random_bool(policy.flip_prob);
    if flip && policy.enabled(OP_FLIP) {
        x = ops::hflip(&x);
    }
    let jitter = rng.random_bool(policy.color_jitter.prob);
    let mut jitter_rng = crate::seeding::stream(rng.random(), &[]);
    if jitter && policy.enabled(OP_COLOR_JITTER) {
        x = ops::color_jitter(&x, &policy.color_jitter, &mut jitter_rng);
    }
    let gray = rng.random_bool(policy.grayscale_prob);
    if gray && policy.enabled(OP_GRAYSCALE) {
        x = ops::grayscale(&x);
    }
    let blur = rng.random_bool(policy.blur.prob);
    let (s_lo, s_hi) = policy.blur.sigma;
    let sigma = if s_lo < s_hi { rng.random_range(s_lo..=s_hi) } else { s_lo };
    if blur && policy.enabled(OP_BLUR) {
        x = ops::gaussian_blur(&x, sigma);
    }
    if policy.enabled(OP_NORMALIZE) {
        x = ops::normalize(&x, &policy.normalize.mean, &policy.normalize.std);
    }
    Ok(x)
}

/// How the anchor view is cut from the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnchorCrop {
    /// Whole image, resized.
    #[default]
    Resize,
    /// A third random-resized crop (the "random original image" ablation).
    RandomCrop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewTriplet {
    pub anchor: ViewImage,
    pub view1: ViewImage,
    pub view2: ViewImage,
    pub anchor_box: CropBox,
    pub view1_box: CropBox,
    pub view2_box: CropBox,
    pub source_id: String,
}

pub fn make_views<R: Rng>(sample: &ImageSample, policy: &AugmentationPolicy, rng: &mut R) -> Result<ViewTriplet> {
    make_views_with(sample, policy, AnchorCrop::Resize, rng)
}

pub fn make_views_with<R: Rng>(
    sample: &ImageSample,
    policy: &AugmentationPolicy,
    anchor_crop: AnchorCrop,
    rng: &mut R,
) -> Result<ViewTriplet> {
    policy.validate()?;
    let (a, anchor_box) = match anchor_crop {
        AnchorCrop::Resize => resize_only(sample, policy),
        AnchorCrop::RandomCrop => random_resized_crop(sample, policy, rng),
    };
    let (v1, view1_box) = random_resized_crop(sample, policy, rng);
    let (v2, view2_box) = random_resized_crop(sample, policy, rng);
    Ok(ViewTriplet {
        anchor: augment(&a, policy, rng)?,
        view1: augment(&v1, policy, rng)?,
        view2: augment(&v2, policy, rng)?,
        anchor_box,
        view1_box,
        view2_box,
        source_id: sample.sample_id.clone(),
    })
}

/// Evaluation-time "resize shorter side, then center crop". The resize
/// target keeps the 256:224 ratio relative to `output_size`.
pub fn center_crop_eval(sample: &ImageSample, policy: &AugmentationPolicy) -> ViewImage {
    let out = policy.output_size;
    let short = eval_resize_side(out);
    let (w, h) = sample.pixels.dimensions();
    let (nw, nh) = if w <= h {
        (short, ((h as f64 * short as f64 / w as f64).round() as u32).max(short))
    } else {
        (((w as f64 * short as f64 / h as f64).round() as u32).max(short), short)
    };
    let resized = resize_to(&sample.pixels, nw, nh, FilterType::CatmullRom);
    let b = CropBox {
        top: (nh - out) / 2,
        left: (nw - out) / 2,
        height: out,
        width: out,
    };
    let cropped = imageops::crop_imm(&resized, b.left, b.top, out, out).to_image();
    ops::normalize(&to_chw(&cropped), &policy.normalize.mean, &policy.normalize.std)
}

/// Evaluation-time "resize to a square, then random-resized crop".
pub fn random_crop_eval<R: Rng>(
    sample: &ImageSample,
    policy: &AugmentationPolicy,
    scale: (f64, f64),
    rng: &mut R,
) -> ViewImage {
    let side = eval_resize_side(policy.output_size);
    let square = resize_to(&sample.pixels, side, side, FilterType::CatmullRom);
    let b = sample_crop_box(&square, scale, policy.crop_ratio_range, rng);
    let img = crop_resize(&square, b, policy.output_size, FilterType::Triangle);
    ops::normalize(&to_chw(&img), &policy.normalize.mean, &policy.normalize.std)
}

/// Probe training transform: random-resized crop plus horizontal flip.
pub fn probe_train_view<R: Rng>(
    sample: &ImageSample,
    policy: &AugmentationPolicy,
    scale: (f64, f64),
    rng: &mut R,
) -> ViewImage {
    let b = sample_crop_box(&sample.pixels, scale, policy.crop_ratio_range, rng);
    let img = crop_resize(&sample.pixels, b, policy.output_size, FilterType::Triangle);
    let mut x = to_chw(&img);
    if rng.random_bool(0.5) {
        x = ops::hflip(&x);
    }
    ops::normalize(&x, &policy.normalize.mean, &policy.normalize.std)
}

pub fn eval_resize_side(output_size: u32) -> u32 {
    ((output_size as f64) * 256.0 / 224.0 + 1e-9).floor() as u32
}

/// Stacks `(C, H, W)` views into an `(N, C, H, W)` batch.
pub fn stack(views: &[&ViewImage]) -> crate::nn::Tensor {
    let arrs: Vec<_> = views.iter().map(|v| v.view()).collect();
    let batch: Array4<f64> = ndarray::stack(Axis(0), &arrs).expect("views share a shape");
    batch.into_dyn()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{materialize, make_synthetic_corpus};
    use crate::seeding;
    use image::Rgb;

    fn sample(w: u32, h: u32) -> ImageSample {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]));
        ImageSample::new(img, None, "s").unwrap()
    }

    fn plain(size: u32) -> AugmentationPolicy {
        AugmentationPolicy::moco_v2(size).with_preset("crop_only").unwrap()
    }

    #[test]
    fn random_crop_shape_and_bounds() {
        let s = sample(500, 375);
        let p = AugmentationPolicy::moco_v2(224);
        let mut rng = seeding::stream(1, &[]);
        for _ in 0..50 {
            let (img, b) = random_resized_crop(&s, &p, &mut rng);
            assert_eq!(img.dimensions(), (224, 224));
            assert!(b.within(&s.pixels));
            let f = b.area_fraction(&s.pixels);
            assert!((0.2..=1.0).contains(&f), "{f}");
        }
    }

    #[test]
    fn degenerate_scale_range_gives_full_square() {
        let s = sample(64, 64);
        let mut p = AugmentationPolicy::moco_v2(32);
        p.crop_scale_range = (1.0, 1.0);
        let (_, b) = random_resized_crop(&s, &p, &mut seeding::stream(3, &[]));
        assert_eq!(b, CropBox::full(&s.pixels));
    }

    #[test]
    fn fixed_seed_reproduces_box() {
        let s = sample(90, 70);
        let p = AugmentationPolicy::moco_v2(32);
        let a = random_resized_crop(&s, &p, &mut seeding::stream(5, &[1])).1;
        let b = random_resized_crop(&s, &p, &mut seeding::stream(5, &[1])).1;
        assert_eq!(a, b);
    }

    #[test]
    fn resize_only_covers_the_whole_image() {
        let s = sample(500, 375);
        let (img, b) = resize_only(&s, &AugmentationPolicy::moco_v2(224));
        assert_eq!(img.dimensions(), (224, 224));
        assert_eq!(b, CropBox { top: 0, left: 0, height: 375, width: 500 });
        let wide = sample(128, 64);
        let (img, _) = resize_only(&wide, &AugmentationPolicy::moco_v2(48));
        assert_eq!(img.dimensions(), (48, 48));
        let same = sample(32, 32);
        assert_eq!(resize_only(&same, &AugmentationPolicy::moco_v2(32)).0, same.pixels);
    }

    #[test]
    fn normalize_only_is_exact() {
        let s = sample(32, 32);
        let mut p = AugmentationPolicy::moco_v2(32);
        p.enabled_ops = [OP_NORMALIZE.to_string()].into();
        let out = augment(&s.pixels, &p, &mut seeding::stream(0, &[])).unwrap();
        let raw = to_chw(&s.pixels);
        for c in 0..3 {
            let want = raw.index_axis(Axis(0), c).mapv(|v| (v - p.normalize.mean[c]) / p.normalize.std[c]);
            assert_eq!(out.index_axis(Axis(0), c), want);
        }
    }

    #[test]
    fn certain_grayscale_equalizes_channels() {
        let s = sample(40, 40);
        let mut p = AugmentationPolicy::moco_v2(32);
        p.grayscale_prob = 1.0;
        p.enabled_ops = [OP_GRAYSCALE.to_string()].into();
        let out = augment(&resize_only(&s, &p).0, &p, &mut seeding::stream(2, &[])).unwrap();
        assert_eq!(out.index_axis(Axis(0), 0), out.index_axis(Axis(0), 2));
    }

    #[test]
    fn certain_flip_reverses_columns() {
        let s = sample(32, 32);
        let mut p = AugmentationPolicy::moco_v2(32);
        p.flip_prob = 1.0;
        p.enabled_ops = [OP_FLIP.to_string()].into();
        let out = augment(&s.pixels, &p, &mut seeding::stream(2, &[])).unwrap();
        assert_eq!(out, ops::hflip(&to_chw(&s.pixels)));
    }

    #[test]
    fn unknown_op_is_a_config_error() {
        let mut p = AugmentationPolicy::moco_v2(32);
        p.enabled_ops.insert("solarize".into());
        let s = sample(32, 32);
        assert!(matches!(augment(&s.pixels, &p, &mut seeding::stream(0, &[])), Err(Error::Config(_))));
        assert!(matches!(
            AugmentationPolicy::moco_v2(32).with_preset("nope"),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn triplet_shapes_and_anchor_box() {
        let m = make_synthetic_corpus(3, 48, 3, 2).unwrap();
        let s = &materialize(&m).unwrap()[0];
        let t = make_views(s, &AugmentationPolicy::moco_v2(32), &mut seeding::stream(9, &[])).unwrap();
        for v in [&t.anchor, &t.view1, &t.view2] {
            assert_eq!(v.dim(), (3, 32, 32));
        }
        assert_eq!(t.anchor_box, CropBox::full(&s.pixels));
    }

    #[test]
    fn degenerate_policy_gives_identical_views() {
        let s = sample(32, 32);
        let mut p = plain(32);
        p.crop_scale_range = (1.0, 1.0);
        let t = make_views(&s, &p, &mut seeding::stream(4, &[])).unwrap();
        assert_eq!(t.anchor, t.view1);
        assert_eq!(t.view1, t.view2);
    }

    #[test]
    fn disabling_jitter_keeps_channel_means_close_to_source() {
        let m = make_synthetic_corpus(20, 48, 4, 3).unwrap();
        let samples = materialize(&m).unwrap();
        let mut p = AugmentationPolicy::moco_v2(32).with_preset("no_color").unwrap();
        p.enabled_ops.remove(OP_GRAYSCALE);
        p.enabled_ops.remove(OP_NORMALIZE);
        let mut rng = seeding::stream(1, &[]);
        for s in &samples {
            let t = make_views(s, &p, &mut rng).unwrap();
            let src = to_chw(&s.pixels);
            for c in 0..3 {
                let a = t.anchor.index_axis(Axis(0), c).mean().unwrap();
                let b = src.index_axis(Axis(0), c).mean().unwrap();
                assert!((a - b).abs() < 0.02, "channel {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn center_eval_crop_shape() {
        let s = sample(500, 375);
        let p = AugmentationPolicy::moco_v2(224);
        assert_eq!(center_crop_eval(&s, &p).dim(), (3, 224, 224));
        assert_eq!(eval_resize_side(224), 256);
        assert_eq!(eval_resize_side(32), 36);
        let r = random_crop_eval(&s, &p, (0.08, 1.0), &mut seeding::stream(0, &[]));
        assert_eq!(r.dim(), (3, 224, 224));
    }
}
