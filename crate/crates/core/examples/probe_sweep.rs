//! Linear-probe existing checkpoints under several probe crop scales.
//!
//! cargo run --release --example probe_sweep -- <run_dir_or_ckpt> [...]

use std::path::PathBuf;

use leoclr::evalsuite::{probe_checkpoint, ProbeConfig};
use leoclr::trainer::{resolve_checkpoint, Checkpoint};

fn main() -> anyhow::Result<()> {
    let paths: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let scales = [(0.08, 1.0), (0.3, 1.0), (0.6, 1.0)];
    print!("{:<40}", "checkpoint");
    for (lo, hi) in scales {
        print!("{:>12}", format!("({lo},{hi})"));
    }
    println!();
    for path in paths {
        let ckpt = Checkpoint::load(&resolve_checkpoint(&path)?)?;
        print!("{:<40}", path.display());
        for crop_scale in scales {
            let cfg = ProbeConfig {
                epochs: 30,
                lr: 1.0,
                batch_size: 128,
                cached_views: 5,
                standardize: true,
                crop_scale,
                ..Default::default()
            };
            let (r, _) = probe_checkpoint(&ckpt, &cfg)?;
            print!("{:>12.4}", r.top1);
        }
        println!();
    }
    Ok(())
}
