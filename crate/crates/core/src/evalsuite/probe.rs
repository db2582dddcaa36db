use std::path::Path;

use ndarray::{Array1, Array2, Axis, Ix2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{labels_of, softmax_xent, top5_if_applicable, topk_accuracy, EvalCrop, ProbeResult, Protocol};
use crate::dataset::ImageSample;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{Layer, Linear, Pass, Sequential};
use crate::optim::{cosine_lr, Sgd, SgdConfig};
use crate::seeding::{self, hash_str, tag};
use crate::viewgen::{center_crop_eval, probe_train_view, random_crop_eval, stack, AugmentationPolicy, ViewImage};

const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: u64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Scale range of the random-resized crops used for probe training and
    /// for the random-crop test.
    pub crop_scale: (f64, f64),
    /// Augmented views drawn once per image and cycled through the epochs;
    /// 0 draws fresh views every epoch.
    pub cached_views: usize,
    /// Train on per-feature standardized inputs; the scaling is folded back
    /// into the saved weights so the probe still acts on raw features.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 30.0,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 256,
            crop_scale: (0.08, 1.0),
            cached_views: 0,
            standardize: false,
            seed: 0,
        }
    }
}

/// A linear classifier on frozen backbone features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedProbe {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Row-major `num_classes x feature_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Hash of the run config of the checkpoint the probe was trained on.
    pub config_hash: String,
    pub checkpoint_step: u64,
}

pub const PROBE_FILE: &str = "probe.json";

impl TrainedProbe {
    fn logits(&self, features: &Array2<f64>) -> Array2<f64> {
        let w = Array2::from_shape_vec((self.num_classes, self.feature_dim), self.weight.clone())
            .expect("probe weight shape");
        features.dot(&w.t()) + &Array1::from(self.bias.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_json(path, self)
    }

    /// Loads a probe, failing with a missing-probe error if there is none.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingProbe(format!(
                "no trained probe at {}; run a linear evaluation first",
                path.display()
            )));
        }
        super::read_json(path)
    }

    pub fn check_compatible(&self, config_hash: &str, step: u64) -> Result<()> {
        if self.config_hash != config_hash || self.checkpoint_step != step {
            return Err(Error::MissingProbe(format!(
                "probe belongs to run {} step {}, not {config_hash} step {step}",
                self.config_hash, self.checkpoint_step
            )));
        }
        Ok(())
    }
}

/// Backbone features of a sequence of views, computed in eval mode.
pub(crate) fn features(encoder: &mut Encoder, views: &[ViewImage]) -> Array2<f64> {
    let mut blocks = Vec::new();
    for chunk in views.chunks(CHUNK) {
        let refs: Vec<&ViewImage> = chunk.iter().collect();
        blocks.push(encoder.features(stack(&refs), Pass::Eval));
    }
    let v: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(0), &v).expect("feature widths agree")
}

fn train_views(samples: &[ImageSample], policy: &AugmentationPolicy, cfg: &ProbeConfig, round: u64) -> Vec<ViewImage> {
    samples
        .iter()
        .map(|s| {
            let mut rng = seeding::stream(cfg.seed, &[tag::PROBE, round, hash_str(&s.sample_id)]);
            probe_train_view(s, policy, cfg.crop_scale, &mut rng)
        })
        .collect()
}

pub(crate) fn center_features(encoder: &mut Encoder, samples: &[ImageSample], policy: &AugmentationPolicy) -> Array2<f64> {
    let views: Vec<ViewImage> = samples.iter().map(|s| center_crop_eval(s, policy)).collect();
    features(encoder, &views)
}

/// Trains a linear classifier on frozen features of `encoder` and evaluates
/// it on center crops of `eval`.
pub fn linear_probe(
    encoder: &Encoder,
    policy: &AugmentationPolicy,
    train: &[ImageSample],
    eval: &[ImageSample],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<(ProbeResult, TrainedProbe)> {
    let ytrain = labels_of(train)?;
    let yeval = labels_of(eval)?;
    if let Some(&bad) = ytrain.iter().chain(&yeval).find(|&&y| y >= num_classes) {
        return Err(Error::LabelMismatch(format!("label {bad} outside {num_classes} classes")));
    }
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Config("probe needs training samples and a positive batch size".into()));
    }
    let mut enc = encoder.clone();
    enc.clear_cache();
    let feature_dim = enc.features(stack(&[&center_crop_eval(&train[0], policy)]), Pass::Eval).ncols();

    let (shift, scale) = if cfg.standardize {
        let f = center_features(&mut enc, train, policy);
        let mean = f.mean_axis(Axis(0)).expect("non-empty");
        let std = f.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-8));
        (mean, std)
    } else {
        (Array1::zeros(feature_dim), Array1::ones(feature_dim))
    };
    let prepare = |f: Array2<f64>| (f - &shift) / &scale;
    let cached: Vec<Array2<f64>> = (0..cfg.cached_views as u64)
        .map(|r| prepare(features(&mut enc, &train_views(train, policy, cfg, r))))
        .collect();

    let mut head = Sequential::new(vec![Layer::Linear(Linear::zeros(feature_dim, num_classes))]);
    let mut opt = Sgd::new(SgdConfig {
        lr: cfg.lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    });
    let per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let total = cfg.epochs * per_epoch;
    let mut it = 0;
    for epoch in 0..cfg.epochs {
        let feats = if cfg.cached_views > 0 {
            cached[(epoch % cfg.cached_views as u64) as usize].clone()
        } else {
            prepare(features(&mut enc, &train_views(train, policy, cfg, epoch)))
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeding::stream(cfg.seed, &[tag::PROBE, epoch, u64::MAX]));
        for idx in order.chunks(cfg.batch_size) {
            let x = feats.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| ytrain[i]).collect();
            head.zero_grad();
            let logits = head
                .forward(x.into_dyn(), Pass::Train)
                .into_dimensionality::<Ix2>()
                .expect("logits are 2-d");
            let (_, g) = softmax_xent(&logits, &y);
            head.backward(g.into_dyn());
            opt.step(cosine_lr(it, total, cfg.lr), |f| head.visit_params_mut(f));
            it += 1;
        }
    }

    let params = head.params();
    let w = params[0].value.view().into_dimensionality::<Ix2>().expect("weight is 2-d").to_owned() / &scale;
    let b = params[1].value.view().into_dimensionality::<ndarray::Ix1>().expect("bias is 1-d").to_owned() - w.dot(&shift);
    let probe = TrainedProbe {
        num_classes,
        feature_dim,
        weight: w.iter().copied().collect(),
        bias: b.to_vec(),
        config_hash: String::new(),
        checkpoint_step: 0,
    };
    let logits = probe.logits(&center_features(&mut enc, eval, policy));
    let result = ProbeResult {
        top1: topk_accuracy(&logits, &yeval, 1),
        top5: top5_if_applicable(&logits, &yeval),
        protocol: Protocol::Linear,
        eval_crop: EvalCrop::Center,
        label_fraction: 1.0,
        epochs_trained: cfg.epochs,
        draws: 1,
        num_eval: eval.len(),
        grid: Vec::new(),
    };
    Ok((result, probe))
}

/// Evaluates a fixed probe under center or random eval-time cropping.
/// Random mode averages accuracy over `draws` independent crops per image.
#[allow(clippy::too_many_arguments)]
pub fn crop_test(
    encoder: &Encoder,
    probe: &TrainedProbe,
    policy: &AugmentationPolicy,
    eval: &[ImageSample],
    mode: EvalCrop,
    draws: u32,
    scale: (f64, f64),
    seed: u64,
) -> Result<ProbeResult> {
    let labels = labels_of(eval)?;
    let mut enc = encoder.clone();
    enc.clear_cache();
    let draws = if mode == EvalCrop::Center { 1 } else { draws.max(1) };
    let mut top1 = 0.0;
    let mut top5 = 0.0;
    for d in 0..draws {
        let views: Vec<ViewImage> = match mode {
            EvalCrop::Center => eval.iter().map(|s| center_crop_eval(s, policy)).collect(),
            EvalCrop::Random => eval
                .iter()
                .map(|s| {
                    let mut rng = seeding::stream(seed, &[tag::CROP_TEST, d as u64, hash_str(&s.sample_id)]);
                    random_crop_eval(s, policy, scale, &mut rng)
                })
                .collect(),
        };
        let f = features(&mut enc, &views);
        if f.ncols() != probe.feature_dim {
            return Err(Error::MissingProbe(format!(
                "probe expects {} features, encoder produces {}",
                probe.feature_dim,
                f.ncols()
            )));
        }
        let logits = probe.logits(&f);
        top1 += topk_accuracy(&logits, &labels, 1);
        top5 += top5_if_applicable(&logits, &labels).unwrap_or(0.0);
    }
    let n = draws as f64;
    Ok(ProbeResult {
        top1: top1 / n,
        top5: (probe.num_classes > 5).then_some(top5 / n),
        protocol: Protocol::Linear,
        eval_crop: mode,
        label_fraction: 1.0,
        epochs_trained: 0,
        draws,
        num_eval: eval.len(),
        grid: Vec::new(),
    })
}
