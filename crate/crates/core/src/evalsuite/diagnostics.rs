use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::ImageSample;
use crate::encoder::{embedding_std, Encoder};
use crate::error::Result;
use crate::nn::Pass;
use crate::seeding::{self, hash_str, tag};
use crate::viewgen::{center_crop_eval, make_views, stack, AugmentationPolicy, ViewImage};

/// Representation-quality summary of an encoder on a labeled corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub num_samples: usize,
    /// Mean per-dimension standard deviation of the unit embeddings.
    pub embedding_std: f64,
    pub same_class_cosine: Option<f64>,
    pub diff_class_cosine: Option<f64>,
    /// Mean squared distance between embeddings of two augmented views.
    pub alignment: f64,
    /// `log E exp(-2 |u - v|^2)` over distinct pairs of center-crop embeddings.
    pub uniformity: f64,
}

fn embed(encoder: &mut Encoder, views: &[ViewImage]) -> Array2<f64> {
    let blocks: Vec<Array2<f64>> = views
        .chunks(128)
        .map(|c| {
            let refs: Vec<&ViewImage> = c.iter().collect();
            encoder.embed(stack(&refs), Pass::Eval).vectors
        })
        .collect();
    let v: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(0), &v).expect("embedding widths agree")
}

pub fn diagnostics(
    encoder: &Encoder,
    policy: &AugmentationPolicy,
    samples: &[ImageSample],
    seed: u64,
) -> Result<Diagnostics> {
    let mut enc = encoder.clone();
    enc.clear_cache();
    let center: Vec<ViewImage> = samples.iter().map(|s| center_crop_eval(s, policy)).collect();
    let z = embed(&mut enc, &center);

    let mut v1 = Vec::with_capacity(samples.len());
    let mut v2 = Vec::with_capacity(samples.len());
    for s in samples {
        let mut rng = seeding::stream(seed, &[tag::VIEWS, u64::MAX, hash_str(&s.sample_id)]);
        let t = make_views(s, policy, &mut rng)?;
        v1.push(t.view1);
        v2.push(t.view2);
    }
    let (a, b) = (embed(&mut enc, &v1), embed(&mut enc, &v2));
    let alignment = if samples.is_empty() {
        0.0
    } else {
        (&a - &b).mapv(|d| d * d).sum() / samples.len() as f64
    };

    let gram = z.dot(&z.t());
    let (mut same, mut n_same, mut diff, mut n_diff) = (0.0, 0usize, 0.0, 0usize);
    let mut unif = Vec::new();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let c = gram[[i, j]];
            unif.push(-2.0 * (2.0 - 2.0 * c).max(0.0));
            match (samples[i].label, samples[j].label) {
                (Some(x), Some(y)) if x == y => {
                    same += c;
                    n_same += 1;
                }
                (Some(_), Some(_)) => {
                    diff += c;
                    n_diff += 1;
                }
                _ => {}
            }
        }
    }
    let uniformity = if unif.is_empty() {
        0.0
    } else {
        let m = unif.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + (unif.iter().map(|v| (v - m).exp()).sum::<f64>() / unif.len() as f64).ln()
    };
    Ok(Diagnostics {
        num_samples: samples.len(),
        embedding_std: embedding_std(&z),
        same_class_cosine: (n_same > 0).then(|| same / n_same as f64),
        diff_class_cosine: (n_diff > 0).then(|| diff / n_diff as f64),
        alignment,
        uniformity,
    })
}
