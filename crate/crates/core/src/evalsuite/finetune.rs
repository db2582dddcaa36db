use std::collections::HashSet;

use ndarray::{Array2, Axis, Ix2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::probe::features;
use super::{check_labels, labels_of, softmax_xent, top5_if_applicable, topk_accuracy, EvalCrop, ProbeResult, Protocol};
use crate::dataset::{materialize, split_manifest, subsample_labels, DatasetManifest, ImageSample, LabelFractionSpec, SplitTag};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{Layer, Linear, Pass, Sequential};
use crate::optim::{cosine_lr, Sgd, SgdConfig};
use crate::seeding::{self, hash_str, tag};
use crate::viewgen::{center_crop_eval, probe_train_view, stack, AugmentationPolicy, ViewImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub fraction: f64,
    pub epochs: u64,
    /// Backbone learning rates tried; the head uses `head_lr_multiplier` times each.
    pub backbone_lrs: Vec<f64>,
    pub head_lr_multiplier: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub crop_scale: (f64, f64),
    /// Validation set size as a fraction of the full labeled manifest.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            epochs: 30,
            backbone_lrs: vec![0.01, 0.001],
            head_lr_multiplier: 10.0,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 256,
            crop_scale: (0.08, 1.0),
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// One learning-rate setting of the fine-tuning grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub backbone_lr: f64,
    pub head_lr: f64,
    pub val_top1: f64,
}

struct Classifier {
    backbone: Sequential,
    head: Sequential,
}

impl Classifier {
    fn logits(&mut self, x: crate::nn::Tensor, pass: Pass) -> Array2<f64> {
        let h = self.backbone.forward(x, pass);
        self.head
            .forward(h, pass)
            .into_dimensionality::<Ix2>()
            .expect("logits are 2-d")
    }

    fn eval_logits(&mut self, views: &[ViewImage]) -> Array2<f64> {
        let mut enc_like = Vec::new();
        for chunk in views.chunks(128) {
            let refs: Vec<&ViewImage> = chunk.iter().collect();
            enc_like.push(self.logits(stack(&refs), Pass::Eval));
        }
        let v: Vec<_> = enc_like.iter().map(|b| b.view()).collect();
        ndarray::concatenate(Axis(0), &v).expect("logit widths agree")
    }
}

/// Labeled training subset and validation set for a label fraction. The
/// validation images come from the labeled pool outside the subset, or from
/// a held-out slice of the subset when it covers the whole pool.
fn partition(train: &DatasetManifest, cfg: &FinetuneConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    let subset = subsample_labels(train, &LabelFractionSpec::balanced(cfg.fraction, cfg.seed))?;
    if subset.len() == train.len() {
        return split_manifest(&subset, cfg.val_fraction, cfg.seed);
    }
    let chosen: HashSet<&str> = subset.entries.iter().map(|e| e.sample_id.as_str()).collect();
    let rest = train.subset(|e| !chosen.contains(e.sample_id.as_str()), SplitTag::Val)?;
    let want = cfg.val_fraction * train.len() as f64;
    if want >= rest.len() as f64 {
        return Ok((subset, rest));
    }
    let (_, val) = split_manifest(&rest, want / rest.len() as f64, cfg.seed)?;
    Ok((subset, val))
}

fn train_once(
    encoder: &Encoder,
    policy: &AugmentationPolicy,
    train: &[ImageSample],
    labels: &[usize],
    num_classes: usize,
    backbone_lr: f64,
    cfg: &FinetuneConfig,
) -> Classifier {
    let mut enc = encoder.clone();
    enc.clear_cache();
    let feature_dim = features(&mut enc, &[center_crop_eval(&train[0], policy)]).ncols();
    let mut init = seeding::stream(cfg.seed, &[tag::FINETUNE, 0]);
    let mut model = Classifier {
        backbone: enc.backbone,
        head: Sequential::new(vec![Layer::Linear(Linear::new(feature_dim, num_classes, &mut init))]),
    };
    let sgd = |lr| {
        Sgd::new(SgdConfig {
            lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        })
    };
    let head_lr = backbone_lr * cfg.head_lr_multiplier;
    let (mut opt_b, mut opt_h) = (sgd(backbone_lr), sgd(head_lr));

    let batch = cfg.batch_size.min(train.len());
    let per_epoch = (train.len() / batch) as u64;
    let total = cfg.epochs * per_epoch;
    let mut it = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeding::stream(cfg.seed, &[tag::FINETUNE, 1, epoch]));
        for idx in order.chunks_exact(batch) {
            let views: Vec<ViewImage> = idx
                .iter()
                .map(|&i| {
                    let mut rng = seeding::stream(cfg.seed, &[tag::FINETUNE, 2, epoch, hash_str(&train[i].sample_id)]);
                    probe_train_view(&train[i], policy, cfg.crop_scale, &mut rng)
                })
                .collect();
            let refs: Vec<&ViewImage> = views.iter().collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            model.backbone.zero_grad();
            model.head.zero_grad();
            let logits = model.logits(stack(&refs), Pass::Train);
            let (_, g) = softmax_xent(&logits, &y);
            let dh = model.head.backward(g.into_dyn());
            model.backbone.backward(dh);
            opt_b.step(cosine_lr(it, total, backbone_lr), |f| model.backbone.visit_params_mut(f));
            opt_h.step(cosine_lr(it, total, head_lr), |f| model.head.visit_params_mut(f));
            it += 1;
        }
    }
    model
}

fn center_views(samples: &[ImageSample], policy: &AugmentationPolicy) -> Vec<ViewImage> {
    samples.iter().map(|s| center_crop_eval(s, policy)).collect()
}

/// Fine-tunes the whole backbone plus a fresh linear head on a label
/// fraction of `train`, selects the learning rate on validation and reports
/// center-crop accuracy on `eval`.
pub fn finetune_fraction(
    encoder: &Encoder,
    policy: &AugmentationPolicy,
    train: &DatasetManifest,
    eval: &DatasetManifest,
    cfg: &FinetuneConfig,
) -> Result<ProbeResult> {
    check_labels(train, eval)?;
    if cfg.backbone_lrs.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Config("fine-tuning needs a learning-rate grid and a positive batch size".into()));
    }
    let (labeled, val) = partition(train, cfg)?;
    let labeled = materialize(&labeled)?;
    let ylab = labels_of(&labeled)?;
    let val = materialize(&val)?;
    let yval = labels_of(&val)?;
    let val_views = center_views(&val, policy);

    let mut grid = Vec::new();
    let mut best: Option<(f64, Classifier)> = None;
    for &lr in &cfg.backbone_lrs {
        let mut model = train_once(encoder, policy, &labeled, &ylab, train.num_classes, lr, cfg);
        let val_top1 = topk_accuracy(&model.eval_logits(&val_views), &yval, 1);
        grid.push(GridPoint {
            backbone_lr: lr,
            head_lr: lr * cfg.head_lr_multiplier,
            val_top1,
        });
        if best.as_ref().is_none_or(|(b, _)| val_top1 > *b) {
            best = Some((val_top1, model));
        }
    }
    let (_, mut model) = best.expect("grid is non-empty");
    let test = materialize(eval)?;
    let ytest = labels_of(&test)?;
    let logits = model.eval_logits(&center_views(&test, policy));
    Ok(ProbeResult {
        top1: topk_accuracy(&logits, &ytest, 1),
        top5: top5_if_applicable(&logits, &ytest),
        protocol: Protocol::Finetune,
        eval_crop: EvalCrop::Center,
        label_fraction: cfg.fraction,
        epochs_trained: cfg.epochs,
        draws: 1,
        num_eval: test.len(),
        grid,
    })
}
