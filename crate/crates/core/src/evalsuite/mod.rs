//! Downstream evaluation: linear probe, crop-robustness test, label-fraction
//! fine-tuning, augmentation ablation and representation diagnostics.

mod ablation;
mod diagnostics;
mod finetune;
mod probe;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use ablation::{ablate_augmentations, AblationEntry, AblationGrid};
pub use diagnostics::{diagnostics, Diagnostics};
pub use finetune::{finetune_fraction, FinetuneConfig, GridPoint};
pub use probe::{crop_test, linear_probe, ProbeConfig, TrainedProbe, PROBE_FILE};

use crate::dataset::{materialize, DatasetManifest, ImageSample, SplitTag};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::trainer::Checkpoint;
use crate::viewgen::AugmentationPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Linear,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCrop {
    Center,
    Random,
}

impl std::str::FromStr for EvalCrop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(EvalCrop::Center),
            "random" => Ok(EvalCrop::Random),
            other => Err(Error::Config(format!("unknown crop mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub top1: f64,
    /// Reported only for more than five classes.
    pub top5: Option<f64>,
    pub protocol: Protocol,
    pub eval_crop: EvalCrop,
    pub label_fraction: f64,
    pub epochs_trained: u64,
    /// Random-crop draws averaged per image.
    pub draws: u32,
    pub num_eval: usize,
    /// Fine-tuning learning-rate grid with validation accuracy per point.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<GridPoint>,
}

/// Checks that both manifests are labeled over the same class set.
pub fn check_labels(train: &DatasetManifest, eval: &DatasetManifest) -> Result<()> {
    if !train.is_labeled() || !eval.is_labeled() {
        return Err(Error::LabelMismatch("evaluation needs fully labeled manifests".into()));
    }
    if train.num_classes != eval.num_classes || train.class_names != eval.class_names {
        return Err(Error::LabelMismatch(format!(
            "training manifest has {} classes {:?}, evaluation manifest {} classes {:?}",
            train.num_classes, train.class_names, eval.num_classes, eval.class_names
        )));
    }
    Ok(())
}

fn labels_of(samples: &[ImageSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::LabelMismatch(format!("sample {} has no label", s.sample_id)))
        })
        .collect()
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub(crate) fn softmax_xent(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
    }
    grad.mapv_inplace(|g| g / n);
    (loss / n, grad)
}

/// Fraction of rows whose label is among the `k` largest logits. Ties are
/// broken toward the lower class index.
pub fn topk_accuracy(logits: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let target = row[y];
            let better = row
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > target || (v == target && j < y))
                .count();
            better < k
        })
        .count();
    hits as f64 / labels.len() as f64
}

fn top5_if_applicable(logits: &Array2<f64>, labels: &[usize]) -> Option<f64> {
    (logits.ncols() > 5).then(|| topk_accuracy(logits, labels, 5))
}

/// Labeled training and evaluation corpora of a run, plus its probe-side
/// image policy and query encoder.
pub struct EvalContext {
    pub encoder: Encoder,
    pub policy: AugmentationPolicy,
    pub train_manifest: DatasetManifest,
    pub eval_manifest: DatasetManifest,
    pub config_hash: String,
    pub step: u64,
}

impl EvalContext {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let data = &ckpt.config.dataset;
        let train_manifest = data.load(SplitTag::Train)?;
        let eval_manifest = data.load(SplitTag::Test)?;
        check_labels(&train_manifest, &eval_manifest)?;
        Ok(Self {
            encoder: ckpt.query_encoder()?,
            policy: ckpt.config.aug.clone(),
            train_manifest,
            eval_manifest,
            config_hash: ckpt.config.hash(),
            step: ckpt.step,
        })
    }

    pub fn train_samples(&self) -> Result<Vec<ImageSample>> {
        materialize(&self.train_manifest)
    }

    pub fn eval_samples(&self) -> Result<Vec<ImageSample>> {
        materialize(&self.eval_manifest)
    }
}

/// Linear probe of a checkpoint on its own dataset; the returned probe is
/// tagged with the checkpoint identity.
pub fn probe_checkpoint(ckpt: &Checkpoint, cfg: &ProbeConfig) -> Result<(ProbeResult, TrainedProbe)> {
    let ctx = EvalContext::from_checkpoint(ckpt)?;
    let (result, mut probe) = linear_probe(
        &ctx.encoder,
        &ctx.policy,
        &ctx.train_samples()?,
        &ctx.eval_samples()?,
        ctx.train_manifest.num_classes,
        cfg,
    )?;
    probe.config_hash = ctx.config_hash;
    probe.checkpoint_step = ctx.step;
    Ok((result, probe))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("result serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod helper_tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn topk_counts_ties_toward_lower_index() {
        let logits = array![[0.1, 0.9, 0.0], [0.5, 0.5, 0.1], [0.2, 0.3, 0.4]];
        assert_eq!(topk_accuracy(&logits, &[1, 1, 0], 1), 1.0 / 3.0);
        assert_eq!(topk_accuracy(&logits, &[1, 1, 0], 2), 2.0 / 3.0);
        assert_eq!(topk_accuracy(&logits, &[1, 1, 0], 3), 1.0);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = array![[0.3, -1.2, 2.0], [0.0, 0.5, -0.5]];
        let labels = [2, 0];
        let (_, g) = softmax_xent(&logits, &labels);
        let h = 1e-6;
        for idx in ndarray::indices(logits.dim()) {
            let mut p = logits.clone();
            p[idx] += h;
            let mut m = logits.clone();
            m[idx] -= h;
            let fd = (softmax_xent(&p, &labels).0 - softmax_xent(&m, &labels).0) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-8);
        }
        let uniform = Array2::zeros((4, 10));
        let (l, _) = softmax_xent(&uniform, &[0, 1, 2, 3]);
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }
}

#[cfg(test)]
mod tests;
