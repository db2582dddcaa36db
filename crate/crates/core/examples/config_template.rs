//! Print a complete run config as TOML, ready for `leoclr pretrain --config`.
//!
//! cargo run --example config_template -- [loss_mode] [seed] [epochs] > run.toml

use leoclr::config::to_toml;
use leoclr::desk::{desk_config, DESK_EPOCHS};
use leoclr::objective::LossMode;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: LossMode = args.next().as_deref().unwrap_or("leoclr").parse()?;
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let epochs: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(DESK_EPOCHS);
    let mut cfg = desk_config(mode, seed, epochs);
    cfg.output_dir = format!("runs/{}-seed{seed}", mode.name()).into();
    print!("{}", to_toml(&cfg)?);
    Ok(())
}
