//! Property-level criteria: loss oracle, gradients, stop-gradient, momentum
//! update, queue order, uniform logits, determinism and anchor purity.

use std::collections::VecDeque;

use leoclr::dataset::{DatasetRef, ImageSample};
use leoclr::encoder::{ArchSpec, Backbone, EmbeddingBatch, EncoderPair, PairMode};
use leoclr::negatives::NegativeQueue;
use leoclr::nn::Tensor;
use leoclr::objective::{info_nce, info_nce_batch, total_loss, total_loss_with_grad, ContrastiveConfig, LossInputs, LossMode};
use leoclr::seeding;
use leoclr::trainer::{pretrain_until, resume, Checkpoint, RunConfig, Trainer};
use leoclr::viewgen::{make_views, AugmentationPolicy, CropBox};
use ndarray::{Array1, Array2, IxDyn};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Outcome;

fn unit_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

/// Softmax cross-entropy of the positive (index 0), computed directly.
fn oracle(u: &Array1<f64>, pos: &Array1<f64>, negs: &Array2<f64>, tau: f64) -> f64 {
    let mut logits = vec![u.dot(pos) / tau];
    logits.extend(negs.rows().into_iter().map(|n| u.dot(&n) / tau));
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    -(logits[0].exp() / z).ln()
}

pub fn infonce_oracle() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let worst = std::cell::Cell::new(0f64);
    let strategy = (1usize..=8, 1usize..=64, 1usize..=16, 0.05f64..1.0, any::<u64>());
    let res = runner.run(&strategy, |(b, n, d, tau, seed)| {
        let mut rng = seeding::stream(seed, &[]);
        let u = unit_rows(&mut rng, b, d);
        let p = unit_rows(&mut rng, b, d);
        let negs = unit_rows(&mut rng, n, d);
        let got = info_nce_batch(&EmbeddingBatch::normalize(u.clone()), &EmbeddingBatch::normalize(p.clone()), &negs, tau)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        for i in 0..b {
            let want = oracle(&u.row(i).to_owned(), &p.row(i).to_owned(), &negs, tau);
            let err = (got[i] - want).abs();
            worst.set(worst.get().max(err));
            prop_assert!(err < 1e-10, "row {i}: {} vs {want}", got[i]);
        }
        Ok(())
    });
    Outcome::new(res.is_ok(), format!("1000 instances, max |err| {:.2e} (tol 1e-10) {}", worst.get(), err_text(res)))
}

fn err_text<T: std::fmt::Debug>(r: Result<(), T>) -> String {
    r.err().map(|e| format!("{e:?}")).unwrap_or_default()
}

fn tiny_arch(side: usize) -> ArchSpec {
    ArchSpec {
        backbone: Backbone::TinyMlp {
            input_dim: 3 * side * side,
            hidden: 10,
        },
        proj_hidden: Some(9),
        proj_dim: 6,
    }
}

fn images<R: Rng>(rng: &mut R, b: usize, side: usize) -> Tensor {
    Tensor::from_shape_fn(IxDyn(&[b, 3, side, side]), |_| rng.random_range(-1.0..1.0))
}

pub fn gradient_check() -> Outcome {
    let side = 4;
    let mut pair = EncoderPair::init(&tiny_arch(side), 0.9, PairMode::MomentumContrast, 11).unwrap();
    pair.key.visit_params_mut(&mut |p| p.value.mapv_inplace(|v| v * 0.7));
    let mut rng = seeding::stream(12, &[]);
    let (a, x1, x2) = (images(&mut rng, 4, side), images(&mut rng, 4, side), images(&mut rng, 4, side));
    let k1 = pair.encode_key(x1).unwrap();
    let k2 = pair.encode_key(x2).unwrap();
    let negs = unit_rows(&mut rng, 12, 6);
    let cfg = ContrastiveConfig {
        tau: 0.2,
        loss_mode: LossMode::Leoclr,
        ..Default::default()
    };
    let loss_of = |pair: &mut EncoderPair| {
        let q = pair.query.embed(a.clone(), leoclr::nn::Pass::Eval);
        let inputs = LossInputs {
            anchor: &q,
            view1: &k1,
            view2: &k2,
            view1_query: None,
            negatives: Some(&negs),
        };
        total_loss(&inputs, &cfg).unwrap().total
    };

    pair.query.zero_grad();
    let q = pair.encode_query(a.clone()).unwrap();
    let inputs = LossInputs {
        anchor: &q,
        view1: &k1,
        view2: &k2,
        view1_query: None,
        negatives: Some(&negs),
    };
    let (_, grads) = total_loss_with_grad(&inputs, &cfg).unwrap();
    pair.backward_query(&grads.anchor);
    let analytic: Vec<f64> = pair.query.params().iter().flat_map(|p| p.grad.iter().copied().collect::<Vec<_>>()).collect();

    let h = 1e-5;
    let total = analytic.len();
    let stride = (total / 240).max(1);
    let mut worst = 0f64;
    let mut checked = 0;
    for idx in (0..total).step_by(stride) {
        let bump = |pair: &mut EncoderPair, delta: f64| {
            let mut i = 0;
            pair.query.visit_params_mut(&mut |p| {
                if idx >= i && idx < i + p.len() {
                    let flat = p.value.as_slice_mut().expect("contiguous parameter");
                    flat[idx - i] += delta;
                }
                i += p.len();
            });
        };
        bump(&mut pair, h);
        let up = loss_of(&mut pair);
        bump(&mut pair, -2.0 * h);
        let down = loss_of(&mut pair);
        bump(&mut pair, h);
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[idx]).abs() / fd.abs().max(analytic[idx].abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    }
    let k_grad_zero = pair.key.params().iter().all(|p| p.grad.iter().all(|&g| g == 0.0));
    Outcome::new(
        checked >= 200 && worst < 1e-5 && k_grad_zero,
        format!("{checked} of {total} parameters, max rel err {worst:.2e} (tol 1e-5, h 1e-5)"),
    )
}

fn tiny_run(mode: LossMode, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        epochs: 2,
        batch_size: 8,
        key_momentum: 0.99,
        dataset: DatasetRef::Synthetic {
            n: 32,
            image_size: 32,
            num_classes: 4,
            seed: 1,
            eval_n: 8,
        },
        arch: tiny_arch(32),
        ..RunConfig::default()
    };
    cfg.queue.size = 64;
    cfg.loss.loss_mode = mode;
    cfg
}

fn samples(cfg: &RunConfig) -> Vec<ImageSample> {
    leoclr::dataset::materialize(&cfg.dataset.load(leoclr::dataset::SplitTag::Train).unwrap()).unwrap()
}

pub fn stop_gradient() -> Outcome {
    let mut ok = true;
    let mut detail = String::new();
    for mode in [LossMode::Leoclr, LossMode::MocoBaseline, LossMode::RandomAnchor, LossMode::AttractAll] {
        let cfg = tiny_run(mode, 4);
        let mut t = Trainer::new(cfg.clone(), samples(&cfg)).unwrap();
        for _ in 0..3 {
            let k0: Vec<Tensor> = t.pair.key.params().iter().map(|p| p.value.clone()).collect();
            t.train_step().unwrap();
            let zero = t.pair.key.params().iter().all(|p| p.grad.iter().all(|&g| g == 0.0));
            let m = cfg.key_momentum;
            let ema = t
                .pair
                .key
                .params()
                .iter()
                .zip(&k0)
                .zip(t.pair.query.params())
                .all(|((k, k0), q)| {
                    let want = k0 * m + &q.value * (1.0 - m);
                    k.value.iter().zip(&want).all(|(a, b)| a == b)
                });
            if !(zero && ema) {
                ok = false;
                detail = format!("{}: zero grads {zero}, ema-only {ema}", mode.name());
            }
        }
    }
    Outcome::new(ok, if ok { "4 momentum modes x 3 steps, key grads exactly 0, key == EMA bitwise".into() } else { detail })
}

pub fn ema_closed_form() -> Outcome {
    let mut pair = EncoderPair::init(&tiny_arch(4), 0.999, PairMode::MomentumContrast, 5).unwrap();
    pair.query.visit_params_mut(&mut |p| p.value.mapv_inplace(|v| v + 0.25));
    let k0: Vec<Tensor> = pair.key.params().iter().map(|p| p.value.clone()).collect();
    let q: Vec<Tensor> = pair.query.params().iter().map(|p| p.value.clone()).collect();
    let s = 100;
    for _ in 0..s {
        pair.momentum_update().unwrap();
    }
    let ms = 0.999f64.powi(s);
    let mut worst = 0f64;
    for ((k, k0), q) in pair.key.params().iter().zip(&k0).zip(&q) {
        let want = k0 * ms + q * (1.0 - ms);
        for (a, b) in k.value.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    Outcome::new(worst < 1e-12, format!("100 updates at m=0.999, max |err| {worst:.2e} (tol 1e-12)"))
}

pub fn queue_fifo() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (1usize..=12, 1usize..=5, prop::collection::vec(1usize..=6, 0..12), any::<u64>());
    let res = runner.run(&strategy, |(cap, dim, batches, seed)| {
        let mut rng = seeding::stream(seed, &[]);
        let mut q = NegativeQueue::new(cap, dim).unwrap();
        let mut oracle: VecDeque<Vec<f64>> = VecDeque::new();
        for b in batches {
            let keys = EmbeddingBatch::normalize(unit_rows(&mut rng, b, dim));
            let r = q.enqueue(&keys);
            if b > cap {
                prop_assert!(r.is_err());
                continue;
            }
            r.unwrap();
            for row in keys.vectors.rows() {
                oracle.push_back(row.to_vec());
                if oracle.len() > cap {
                    oracle.pop_front();
                }
            }
            prop_assert_eq!(q.filled(), oracle.len());
            let view = q.negatives_view().unwrap();
            let got: Vec<Vec<f64>> = view.rows().into_iter().map(|r| r.to_vec()).collect();
            prop_assert_eq!(&got, &oracle.iter().cloned().collect::<Vec<_>>());
            for row in view.rows() {
                prop_assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
            }
        }
        Ok(())
    });
    Outcome::new(res.is_ok(), format!("10000 random enqueue sequences vs list oracle {}", err_text(res)))
}

pub fn uniform_logits() -> Outcome {
    let mut worst = 0f64;
    for n in [1usize, 7, 63] {
        for d in [1usize, 3, 16] {
            let mut rng = seeding::stream(n as u64, &[d as u64]);
            let v = unit_rows(&mut rng, 1, d).row(0).to_owned();
            let negs = Array2::from_shape_fn((n, d), |(_, j)| v[j]);
            for tau in [0.07, 0.2, 1.0] {
                let loss = info_nce(v.view(), v.view(), &negs, tau).unwrap();
                worst = worst.max((loss - ((n + 1) as f64).ln()).abs());
            }
        }
    }
    Outcome::new(worst < 1e-12, format!("N in {{1, 7, 63}}, max |loss - ln(N+1)| {worst:.2e} (tol 1e-12)"))
}

pub fn determinism(desk: &RunConfig, scratch: &std::path::Path) -> Outcome {
    let mut cfg = desk.clone();
    let run = |name: &str, cfg: &mut RunConfig, stop: u64| {
        cfg.output_dir = scratch.join(name);
        pretrain_until(cfg, stop).unwrap()
    };
    let a = run("det_a", &mut cfg, 50);
    let b = run("det_b", &mut cfg, 50);
    let bytes_a = std::fs::read(&a.metrics).unwrap();
    let identical = bytes_a == std::fs::read(&b.metrics).unwrap() && bytes_a.iter().filter(|&&c| c == b'\n').count() == 50;

    let cut = run("det_cut", &mut cfg, 20);
    let resumed = resume(&cut.output_dir, Some(&cfg), Some(50)).unwrap();
    let resumed_same = std::fs::read(&resumed.metrics).unwrap() == bytes_a
        && Checkpoint::load(&resumed.checkpoint).unwrap().query == Checkpoint::load(&a.checkpoint).unwrap().query;
    Outcome::new(
        identical && resumed_same,
        format!("two 50-step desk runs identical: {identical}; resume at 20 reproduces step 50: {resumed_same}"),
    )
}

pub fn anchor_purity() -> Outcome {
    let policy = AugmentationPolicy::moco_v2(32);
    let mut rng = seeding::stream(99, &[]);
    let mut bad = 0;
    let n = 10_000;
    for i in 0..n {
        let (w, h) = (rng.random_range(32..72u32), rng.random_range(32..72u32));
        let px = image::RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 7) as u8, (y * 5) as u8, (i % 251) as u8]));
        let sample = ImageSample::new(px, None, format!("img{i}")).unwrap();
        let t = make_views(&sample, &policy, &mut rng).unwrap();
        if t.anchor_box != CropBox::full(&sample.pixels) {
            bad += 1;
        }
    }
    Outcome::new(bad == 0, format!("{n} triplets over random source sizes, {bad} impure anchors"))
}
