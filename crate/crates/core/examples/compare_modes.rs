//! Pretrain several loss modes on the synthetic corpus under one config, then
//! linear-probe each and run the center vs random crop test.
//!
//! cargo run --release --example compare_modes -- [epochs] [seed] [mode ...] [key=value ...]
//!
//! Arguments containing `=` are config overrides, e.g. `optimizer.lr=0.06`.

use std::time::Instant;

use leoclr::dataset::DatasetRef;
use leoclr::encoder::ArchSpec;
use leoclr::evalsuite::{crop_test, probe_checkpoint, EvalContext, EvalCrop, ProbeConfig};
use leoclr::objective::LossMode;
use leoclr::trainer::{pretrain, Checkpoint, QueueConfig, RunConfig};

fn main() -> anyhow::Result<()> {
    let (overrides, args): (Vec<String>, Vec<String>) = std::env::args().skip(1).partition(|a| a.contains('='));
    let epochs: u64 = args.first().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let modes: Vec<LossMode> = if args.len() > 2 {
        args[2..].iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    } else {
        vec![LossMode::Leoclr, LossMode::MocoBaseline]
    };

    let probe = ProbeConfig {
        epochs: 30,
        lr: 1.0,
        batch_size: 128,
        cached_views: 5,
        standardize: true,
        seed,
        ..Default::default()
    };
    println!("{:<22}{:>9}{:>9}{:>9}{:>8}", "mode", "center", "random", "drop", "secs");
    for mode in modes {
        let mut cfg = RunConfig {
            seed,
            epochs,
            batch_size: 64,
            output_dir: std::env::temp_dir().join(format!("leoclr-compare-{}-{seed}", mode.name())),
            dataset: DatasetRef::default(),
            arch: ArchSpec::small_cnn(16, 64),
            queue: QueueConfig {
                size: 1024,
                ..Default::default()
            },
            key_momentum: 0.99,
            ..RunConfig::default()
        };
        cfg.loss.loss_mode = mode;
        let cfg = cfg.with_overrides(&overrides)?;
        let t0 = Instant::now();
        let run = pretrain(&cfg, &[])?;
        let ckpt = Checkpoint::load(&run.checkpoint)?;
        let (center, trained) = probe_checkpoint(&ckpt, &probe)?;
        let ctx = EvalContext::from_checkpoint(&ckpt)?;
        let eval = ctx.eval_samples()?;
        let random = crop_test(&ctx.encoder, &trained, &ctx.policy, &eval, EvalCrop::Random, 3, (0.08, 1.0), seed)?;
        println!(
            "{:<22}{:>9.4}{:>9.4}{:>9.4}{:>8.0}",
            mode.name(),
            center.top1,
            random.top1,
            center.top1 - random.top1,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
