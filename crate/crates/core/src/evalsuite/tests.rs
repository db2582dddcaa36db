use super::*;
use crate::dataset::DatasetRef;
use crate::encoder::{ArchSpec, Backbone};
use crate::nn::Layer;
use crate::seeding;

fn corpus(n: usize, eval_n: usize) -> (DatasetManifest, DatasetManifest) {
    let d = DatasetRef::Synthetic {
        n,
        image_size: 32,
        num_classes: 4,
        seed: 5,
        eval_n,
    };
    (d.load(SplitTag::Train).unwrap(), d.load(SplitTag::Test).unwrap())
}

fn mlp() -> Encoder {
    let arch = ArchSpec {
        backbone: Backbone::TinyMlp {
            input_dim: 3 * 32 * 32,
            hidden: 12,
        },
        proj_hidden: None,
        proj_dim: 6,
    };
    Encoder::new(&arch, &mut seeding::stream(2, &[1])).unwrap()
}

fn quick_probe() -> ProbeConfig {
    ProbeConfig {
        epochs: 20,
        lr: 1.0,
        batch_size: 16,
        cached_views: 2,
        ..Default::default()
    }
}

fn policy() -> AugmentationPolicy {
    AugmentationPolicy::moco_v2(32)
}

#[test]
fn probe_shape_determinism_and_frozen_backbone() {
    let (tr, ev) = corpus(48, 16);
    let (tr, ev) = (materialize(&tr).unwrap(), materialize(&ev).unwrap());
    let enc = mlp();
    let before = enc.state_tensors();
    let (r1, p1) = linear_probe(&enc, &policy(), &tr, &ev, 4, &quick_probe()).unwrap();
    assert_eq!(enc.state_tensors(), before);
    assert_eq!((p1.num_classes, p1.feature_dim), (4, 12));
    assert_eq!((p1.weight.len(), p1.bias.len()), (48, 4));
    assert!((0.0..=1.0).contains(&r1.top1));
    assert_eq!(r1.top5, None);
    let (r2, p2) = linear_probe(&enc, &policy(), &tr, &ev, 4, &quick_probe()).unwrap();
    assert_eq!((r1, p1), (r2, p2));
}

#[test]
fn probe_beats_chance_on_its_training_set() {
    let (tr, _) = corpus(64, 8);
    let tr = materialize(&tr).unwrap();
    let cfg = ProbeConfig {
        epochs: 60,
        ..quick_probe()
    };
    let (r, _) = linear_probe(&mlp(), &policy(), &tr, &tr, 4, &cfg).unwrap();
    assert!(r.top1 > 0.25, "top1 {}", r.top1);
}

#[test]
fn crop_test_is_seeded_and_needs_a_probe() {
    let (tr, ev) = corpus(32, 16);
    let (tr, ev) = (materialize(&tr).unwrap(), materialize(&ev).unwrap());
    let enc = mlp();
    let (r, probe) = linear_probe(&enc, &policy(), &tr, &ev, 4, &quick_probe()).unwrap();
    let c1 = crop_test(&enc, &probe, &policy(), &ev, EvalCrop::Center, 1, (0.08, 1.0), 0).unwrap();
    let c2 = crop_test(&enc, &probe, &policy(), &ev, EvalCrop::Center, 5, (0.08, 1.0), 9).unwrap();
    assert_eq!(c1.top1, r.top1);
    assert_eq!(c1, c2);
    let a = crop_test(&enc, &probe, &policy(), &ev, EvalCrop::Random, 3, (0.08, 1.0), 7).unwrap();
    let b = crop_test(&enc, &probe, &policy(), &ev, EvalCrop::Random, 3, (0.08, 1.0), 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.draws, 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(PROBE_FILE);
    assert!(matches!(TrainedProbe::load(&path), Err(Error::MissingProbe(_))));
    probe.save(&path).unwrap();
    let back = TrainedProbe::load(&path).unwrap();
    assert_eq!(back, probe);
    assert!(matches!(back.check_compatible("other", 3), Err(Error::MissingProbe(_))));
}

#[test]
fn unlabeled_or_mismatched_manifests_are_rejected() {
    let (tr, ev) = corpus(16, 8);
    let mut other = ev.clone();
    other.class_names[0] = "blob".into();
    assert!(matches!(check_labels(&tr, &other), Err(Error::LabelMismatch(_))));
    let mut samples = materialize(&tr).unwrap();
    samples[0].label = None;
    let ev = materialize(&ev).unwrap();
    assert!(matches!(
        linear_probe(&mlp(), &policy(), &samples, &ev, 4, &quick_probe()),
        Err(Error::LabelMismatch(_))
    ));
}

#[test]
fn finetune_reports_the_grid() {
    let (tr, ev) = corpus(40, 12);
    let cfg = FinetuneConfig {
        fraction: 0.5,
        epochs: 2,
        batch_size: 8,
        ..Default::default()
    };
    let r = finetune_fraction(&mlp(), &policy(), &tr, &ev, &cfg).unwrap();
    assert_eq!(r.protocol, Protocol::Finetune);
    assert_eq!(r.label_fraction, 0.5);
    assert_eq!(r.grid.len(), 2);
    assert_eq!(r.grid[1].head_lr, 0.01);
    assert_eq!(r.num_eval, 12);
    let full = FinetuneConfig { fraction: 1.0, ..cfg };
    assert_eq!(finetune_fraction(&mlp(), &policy(), &tr, &ev, &full).unwrap().grid.len(), 2);
}

#[test]
fn collapsed_encoder_has_zero_spread() {
    let (tr, _) = corpus(16, 8);
    let tr = materialize(&tr).unwrap();
    let mut enc = mlp();
    if let Some(Layer::Linear(last)) = enc.head.layers.last_mut() {
        last.weight.value.fill(0.0);
        last.bias.value.fill(0.5);
    }
    let d = diagnostics(&enc, &policy(), &tr, 0).unwrap();
    assert!(d.embedding_std < 1e-12);
    assert!(d.alignment < 1e-12);
    assert!((d.same_class_cosine.unwrap() - 1.0).abs() < 1e-12);
    assert!(d.uniformity.abs() < 1e-12);

    let r = diagnostics(&mlp(), &policy(), &tr, 0).unwrap();
    assert!(r.embedding_std > 1e-3);
    assert!(r.uniformity < 0.0);
}

#[test]
fn unknown_preset_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let err = ablate_augmentations(
        &crate::trainer::RunConfig::default(),
        &["baseline".into(), "sepia".into()],
        &quick_probe(),
        dir.path(),
    );
    assert!(matches!(err, Err(Error::UnknownPreset(p)) if p == "sepia"));
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}
