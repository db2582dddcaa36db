//! Fine-tune a pretrained checkpoint at several label fractions and draw the
//! accuracy-versus-fraction curve.
//!
//! cargo run --release --example finetune_fractions -- <run_dir_or_ckpt> [epochs] [fraction ...]

use std::path::PathBuf;

use leoclr::evalsuite::{finetune_fraction, write_json, EvalContext, FinetuneConfig};
use leoclr::plot::render;
use leoclr::trainer::{resolve_checkpoint, Checkpoint};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().ok_or_else(|| anyhow::anyhow!("usage: finetune_fractions <run_dir_or_ckpt> [epochs] [fraction ...]"))?);
    let epochs: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);
    let mut fractions: Vec<f64> = args.map(|s| s.parse()).collect::<Result<_, _>>()?;
    if fractions.is_empty() {
        fractions = vec![0.05, 0.1, 0.2, 0.5, 1.0];
    }

    let ckpt_path = resolve_checkpoint(&path)?;
    let out = ckpt_path.parent().map(PathBuf::from).unwrap_or_default();
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let ctx = EvalContext::from_checkpoint(&ckpt)?;

    let mut files = Vec::new();
    println!("{:>9} {:>8}  grid (backbone lr: val top-1)", "fraction", "top-1");
    for fraction in fractions {
        let cfg = FinetuneConfig {
            fraction,
            epochs,
            batch_size: 32,
            ..Default::default()
        };
        let r = finetune_fraction(&ctx.encoder, &ctx.policy, &ctx.train_manifest, &ctx.eval_manifest, &cfg)?;
        let grid: Vec<String> = r.grid.iter().map(|g| format!("{}: {:.3}", g.backbone_lr, g.val_top1)).collect();
        println!("{fraction:>9} {:>8.4}  {}", r.top1, grid.join(", "));
        let file = out.join(format!("finetune_{fraction}.json"));
        write_json(&file, &r)?;
        files.push(file);
    }
    for svg in render(&files, &out)? {
        println!("wrote {}", svg.display());
    }
    Ok(())
}
