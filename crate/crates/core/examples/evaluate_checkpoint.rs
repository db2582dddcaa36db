//! Full evaluation of one checkpoint: linear probe, center and random crop
//! tests, and embedding diagnostics. Results are written next to the run.
//!
//! cargo run --release --example evaluate_checkpoint -- <run_dir_or_ckpt> [draws]

use std::path::PathBuf;

use leoclr::evalsuite::{crop_test, diagnostics, probe_checkpoint, write_json, EvalContext, EvalCrop, ProbeConfig, PROBE_FILE};
use leoclr::trainer::{resolve_checkpoint, Checkpoint};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().ok_or_else(|| anyhow::anyhow!("usage: evaluate_checkpoint <run_dir_or_ckpt> [draws]"))?);
    let draws: u32 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);

    let ckpt_path = resolve_checkpoint(&path)?;
    let out = ckpt_path.parent().map(PathBuf::from).unwrap_or_default();
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let probe_cfg = ProbeConfig {
        epochs: 30,
        lr: 1.0,
        batch_size: 128,
        cached_views: 5,
        standardize: true,
        ..Default::default()
    };
    let (linear, probe) = probe_checkpoint(&ckpt, &probe_cfg)?;
    probe.save(&out.join(PROBE_FILE))?;
    write_json(&out.join("linear.json"), &linear)?;

    let ctx = EvalContext::from_checkpoint(&ckpt)?;
    let eval = ctx.eval_samples()?;
    let center = crop_test(&ctx.encoder, &probe, &ctx.policy, &eval, EvalCrop::Center, 1, probe_cfg.crop_scale, 0)?;
    let random = crop_test(&ctx.encoder, &probe, &ctx.policy, &eval, EvalCrop::Random, draws, probe_cfg.crop_scale, 0)?;
    let diag = diagnostics(&ctx.encoder, &ctx.policy, &eval, 0)?;
    write_json(&out.join("crop_center.json"), &center)?;
    write_json(&out.join("crop_random.json"), &random)?;
    write_json(&out.join("diagnostics.json"), &diag)?;

    println!("step {} ({})", ckpt.step, ckpt.config.loss.loss_mode);
    println!("linear probe top-1   {:.4}", linear.top1);
    if let Some(t5) = linear.top5 {
        println!("linear probe top-5   {t5:.4}");
    }
    println!("center crop top-1    {:.4}", center.top1);
    println!("random crop top-1    {:.4} ({draws} draws)", random.top1);
    println!("degradation          {:.4}", center.top1 - random.top1);
    println!("embedding std        {:.4}", diag.embedding_std);
    println!("alignment            {:.4}", diag.alignment);
    println!("uniformity           {:.4}", diag.uniformity);
    if let (Some(s), Some(d)) = (diag.same_class_cosine, diag.diff_class_cosine) {
        println!("class cosine         same {s:.4} / diff {d:.4}");
    }
    println!("results in {}", out.display());
    Ok(())
}
