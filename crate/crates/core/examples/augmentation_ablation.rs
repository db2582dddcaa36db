//! Remove augmentations one preset at a time for a loss mode and compare the
//! linear-probe accuracy of each pretrained encoder.
//!
//! cargo run --release --example augmentation_ablation -- [loss_mode] [epochs] [preset ...]

use leoclr::desk::{desk_config, desk_probe};
use leoclr::evalsuite::ablate_augmentations;
use leoclr::objective::LossMode;
use leoclr::plot::render;
use leoclr::viewgen::PRESETS;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: LossMode = args.next().as_deref().unwrap_or("leoclr").parse()?;
    let epochs: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let mut presets: Vec<String> = args.collect();
    if presets.is_empty() {
        presets = PRESETS.iter().map(|p| p.to_string()).collect();
    }

    let out = std::env::temp_dir().join(format!("leoclr-ablation-{}", mode.name()));
    let grid = ablate_augmentations(&desk_config(mode, 0, epochs), &presets, &desk_probe(0), &out)?;
    let base = grid.get("baseline").map(|e| e.result.top1);
    println!("{:<14}{:>8}{:>10}", "preset", "top-1", "vs base");
    for e in &grid.entries {
        let delta = base.map_or(String::from("-"), |b| format!("{:+.4}", e.result.top1 - b));
        println!("{:<14}{:>8.4}{:>10}", e.preset, e.result.top1, delta);
    }
    for svg in render(&[out.join("ablation.json")], &out)? {
        println!("wrote {}", svg.display());
    }
    Ok(())
}
