//! Matched multi-seed comparison of loss modes, with a sign test on the
//! per-seed differences against the momentum-contrast baseline.
//!
//! cargo run --release --example desk_reproduction -- [epochs] [jobs] [mode ...]

use leoclr::desk::{reproduce, sign_test, DeskPlan};
use leoclr::objective::LossMode;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let jobs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let mut modes: Vec<LossMode> = args.map(|s| s.parse()).collect::<Result<_, _>>()?;
    if modes.is_empty() {
        modes = vec![LossMode::Leoclr, LossMode::MocoBaseline];
    }

    let plan = DeskPlan {
        out: std::env::temp_dir().join("leoclr-desk"),
        modes: modes.clone(),
        epochs,
        jobs,
        ..Default::default()
    };
    let summary = reproduce(&plan)?;
    print!("{}", summary.table());

    let base: Vec<f64> = summary.rows_for("moco_baseline").iter().map(|r| r.center_top1).collect();
    for mode in modes.iter().filter(|m| **m != LossMode::MocoBaseline) {
        let rows: Vec<f64> = summary.rows_for(mode.name()).iter().map(|r| r.center_top1).collect();
        if rows.len() != base.len() {
            continue;
        }
        let wins = rows.iter().zip(&base).filter(|(a, b)| a > b).count();
        println!(
            "{} vs moco_baseline: {:+.2} points mean, ahead in {wins}/{} seeds, sign test p={:.3}",
            mode.name(),
            100.0 * (summary.mean_center(mode.name()) - summary.mean_center("moco_baseline")),
            rows.len(),
            sign_test(wins, rows.len())
        );
    }
    println!("summary in {}", plan.out.display());
    Ok(())
}
