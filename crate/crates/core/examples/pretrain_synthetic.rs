//! Pretrain a small CNN on the synthetic shape corpus and print per-epoch loss.
//!
//! cargo run --release --example pretrain_synthetic -- [loss_mode] [epochs]

use std::time::Instant;

use leoclr::dataset::DatasetRef;
use leoclr::encoder::ArchSpec;
use leoclr::objective::LossMode;
use leoclr::trainer::{read_metrics, pretrain, QueueConfig, RunConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: LossMode = args.next().as_deref().unwrap_or("leoclr").parse()?;
    let epochs: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);

    let out = std::env::temp_dir().join(format!("leoclr-example-{}", mode.name()));
    let mut cfg = RunConfig {
        epochs,
        batch_size: 64,
        output_dir: out.clone(),
        dataset: DatasetRef::Synthetic {
            n: 1000,
            image_size: 32,
            num_classes: 10,
            seed: 0,
            eval_n: 500,
        },
        arch: ArchSpec::small_cnn(16, 128),
        queue: QueueConfig {
            size: 4096,
            ..Default::default()
        },
        ..RunConfig::default()
    };
    cfg.loss.loss_mode = mode;

    let t0 = Instant::now();
    let run = pretrain(&cfg, &[])?;
    let secs = t0.elapsed().as_secs_f64();
    let records = read_metrics(&run.metrics)?;
    let per_epoch = records.len().max(1) / epochs.max(1) as usize;
    for (e, chunk) in records.chunks(per_epoch.max(1)).enumerate() {
        let mean = chunk.iter().map(|r| r.loss.total).sum::<f64>() / chunk.len() as f64;
        let std = chunk.last().map_or(0.0, |r| r.embedding_std);
        println!("epoch {e:>3}  loss {mean:.4}  embedding_std {std:.4}");
    }
    println!(
        "{} steps in {secs:.1}s ({:.3}s/step); checkpoint {}",
        run.steps_run,
        secs / run.steps_run.max(1) as f64,
        run.checkpoint.display()
    );
    Ok(())
}
